//! The `psnet` command line.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
//! Every file a subcommand produces is written at or below its `--out`
//! (`--report` for `eval`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::baseline;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, InferOptions};
use crate::io::{self, ReadOptions};
use crate::nn::{self, Network, NetworkConfig};
use crate::normals::NormalMap;
use crate::pipeline::{self, AugmentConfig, TrainConfig};
use crate::projection::{build_observation_map, Interpolation};
use crate::render::{self, Albedo, SceneSpec, Surface};

#[derive(Debug, Parser)]
#[command(name = "psnet", version, about = "Photometric stereo by heat-map regression")]
struct Cli {
    /// Worker threads; 1 makes every run reproducible.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene into a dataset directory.
    Render(RenderArgs),
    /// Train a network on dataset directories.
    Train(TrainArgs),
    /// Predict a normal map with rotation averaging.
    Infer(InferArgs),
    /// Score predicted normal maps against ground truth.
    Eval(EvalArgs),
    /// Per-pixel least-squares normals.
    Baseline(BaselineArgs),
    /// Run the finite-difference and adjoint gradient checks.
    Gradcheck(GradcheckArgs),
    /// Write the observation map of one pixel as an image.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Scene description: a key-value file, or inline `key=value` pairs
    /// separated by commas (e.g. `surface=bumps,height=128`).
    #[arg(long)]
    spec: String,
    #[arg(long, default_value_t = 96)]
    lights: usize,
    /// Largest light inclination, degrees.
    #[arg(long = "max-angle", default_value_t = 60.0)]
    max_angle: f64,
    /// Seed for the light directions.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directories, or directories containing them.
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    /// Key-value configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "max-steps")]
    max_steps: Option<u64>,
    /// Checkpoint path; the metrics log goes to `<out>.metrics.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = eval::DEFAULT_K_TEST)]
    ktest: usize,
    /// Predict only every n-th masked pixel.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Skip the per-object loading fixes chosen from the directory name.
    #[arg(long = "no-object-fixes")]
    no_object_fixes: bool,
    /// Normal-map file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted normal maps.
    #[arg(long, num_args = 1.., required = true)]
    pred: Vec<PathBuf>,
    /// Ground truth per prediction: normal-map files or dataset directories.
    #[arg(long, num_args = 1.., required = true)]
    gt: Vec<PathBuf>,
    /// Text table; error images are written next to it.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    /// Observations below this fraction of the pixel maximum are discarded.
    #[arg(long, default_value_t = baseline::DEFAULT_SHADOW_THRESHOLD)]
    threshold: f64,
    #[arg(long = "no-object-fixes")]
    no_object_fixes: bool,
    /// Output directory for `<object>.pfm` and `report.txt`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Pixel as `column,row`.
    #[arg(long, value_parser = parse_pixel)]
    pixel: (usize, usize),
    #[arg(long = "map-size", default_value_t = crate::projection::DEFAULT_MAP_SIZE)]
    map_size: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_pixel(s: &str) -> std::result::Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok((p(x)?, p(y)?))
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Render(a) => cmd_render(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Inspect(a) => cmd_inspect(a),
    })
}

/// `key = value` lines; `#` starts a comment. Later keys win.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
}

fn interpolation(key: &str, v: &str) -> Result<Interpolation> {
    match v {
        "nearest" => Ok(Interpolation::Nearest),
        "bilinear" => Ok(Interpolation::Bilinear),
        "bicubic" => Ok(Interpolation::Bicubic),
        _ => Err(Error::InvalidConfig(format!("{key}: unknown interpolation {v:?}"))),
    }
}

/// Everything `train` needs besides the data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSettings {
    pub network: NetworkConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
}

impl TrainSettings {
    /// Keys are the field names of the three configs; `seed` sets every
    /// seed at once.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (n, a, t) = (&mut self.network, &mut self.augment, &mut self.train);
        match key {
            "blocks" => n.blocks = value(key, v)?,
            "base_features" => n.base_features = value(key, v)?,
            "patch_size" => n.patch_size = value(key, v)?,
            "map_size" => n.map_size = value(key, v)?,
            "kernel" => n.kernel = value(key, v)?,
            "init_seed" => self.init_seed = value(key, v)?,
            "min_lights" => a.min_lights = value(key, v)?,
            "max_lights" => a.max_lights = value(key, v)?,
            "min_angle_deg" => a.min_angle_deg = value(key, v)?,
            "max_angle_deg" => a.max_angle_deg = value(key, v)?,
            "rotations" => a.rotations = value(key, v)?,
            "augment_seed" => a.seed = value(key, v)?,
            "epochs" => t.epochs = value(key, v)?,
            "batch_size" => t.batch_size = value(key, v)?,
            "validation_fraction" => t.validation_fraction = value(key, v)?,
            "train_seed" => t.seed = value(key, v)?,
            "log_every" => t.log_every = value(key, v)?,
            "validation_pixels" => t.validation_pixels = value(key, v)?,
            "max_steps" => t.max_steps = Some(value(key, v)?),
            "time_budget_secs" => t.time_budget = Some(Duration::from_secs_f64(value(key, v)?)),
            "interpolation" => t.interpolation = interpolation(key, v)?,
            "learning_rate" => t.optimizer.learning_rate = value(key, v)?,
            "decay_factor" => t.optimizer.decay_factor = value(key, v)?,
            "decay_samples" => t.optimizer.decay_samples = value(key, v)?,
            "rho" => t.optimizer.rho = value(key, v)?,
            "epsilon" => t.optimizer.epsilon = value(key, v)?,
            "seed" => self.set_seed(value(key, v)?),
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.init_seed = seed;
        self.augment.seed = seed;
        self.train.seed = seed;
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = TrainSettings::default();
        for (k, v) in parse_key_values(text)? {
            s.set(&k, &v)?;
        }
        Ok(s)
    }
}

/// Scene keys: `surface` (`sphere`, `plane`, `bumps`), `height`, `width`,
/// `radius`, `bumps` (count), `albedo`, `specular_strength`,
/// `specular_exponent`, `noise_std`, `seed`.
pub fn scene_from_pairs(pairs: &[(String, String)]) -> Result<SceneSpec> {
    let get = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let known = [
        "surface",
        "height",
        "width",
        "radius",
        "bumps",
        "albedo",
        "specular_strength",
        "specular_exponent",
        "noise_std",
        "seed",
    ];
    if let Some((k, _)) = pairs.iter().find(|(k, _)| !known.contains(&k.as_str())) {
        return Err(Error::InvalidConfig(format!("unknown scene key {k:?}")));
    }
    let num = |key: &str, default: f64| get(key).map_or(Ok(default), |v| value::<f64>(key, v));
    let height: usize = get("height").map_or(Ok(128), |v| value("height", v))?;
    let width: usize = get("width").map_or(Ok(height), |v| value("width", v))?;
    let seed: u64 = get("seed").map_or(Ok(0), |v| value("seed", v))?;
    let surface = match get("surface").unwrap_or("sphere") {
        "sphere" => Surface::Sphere {
            radius: num("radius", 0.45 * height.min(width) as f64)?,
        },
        "plane" => Surface::Plane,
        "bumps" => {
            let count: usize = get("bumps").map_or(Ok(12), |v| value("bumps", v))?;
            Surface::random_bumps(height, width, count, seed)
        }
        other => return Err(Error::InvalidConfig(format!("unknown surface {other:?}"))),
    };
    let mut spec = SceneSpec::new(surface, height, width)
        .with_albedo(Albedo::Constant(num("albedo", 1.0)?))
        .with_noise(num("noise_std", 0.0)?, seed);
    let strength = num("specular_strength", 0.0)?;
    if strength > 0.0 {
        spec = spec.with_specular(strength, num("specular_exponent", 20.0)?);
    }
    spec.validate()?;
    Ok(spec)
}

fn read_scene_spec(arg: &str) -> Result<SceneSpec> {
    let path = Path::new(arg);
    let pairs = if path.is_file() {
        parse_key_values(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?
    } else {
        parse_key_values(&arg.replace(',', "\n"))?
    };
    scene_from_pairs(&pairs)
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let spec = read_scene_spec(&a.spec)?;
    let lights = render::sample_hemisphere_lights(a.lights, a.max_angle, a.seed)?;
    let sample = render::render_scene(&spec, &lights)?;
    io::write_dataset(&a.out, &sample)?;
    println!(
        "rendered {}x{} scene under {} lights into {}",
        spec.height,
        spec.width,
        lights.len(),
        a.out.display()
    );
    Ok(())
}

fn object_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load(path: &Path, fixes: bool) -> Result<crate::render::RenderedSample> {
    let opts = if fixes {
        ReadOptions::for_object(&object_name(path))
    } else {
        ReadOptions::default()
    };
    io::read_dataset(path, &opts)
}

fn expand_datasets(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(io::LIGHT_DIRECTIONS).is_file() {
            out.push(p.clone());
        } else {
            let found = io::dataset_dirs(p)?;
            if found.is_empty() {
                return Err(Error::format(p, "not a dataset directory and contains none"));
            }
            out.extend(found);
        }
    }
    Ok(out)
}

/// Sibling of `path` with `suffix` appended to the file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut settings = match &a.config {
        Some(p) => TrainSettings::from_text(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => TrainSettings::default(),
    };
    if let Some(s) = a.seed {
        settings.set_seed(s);
    }
    if let Some(e) = a.epochs {
        settings.train.epochs = e;
    }
    if let Some(m) = a.max_steps {
        settings.train.max_steps = Some(m);
    }
    let dirs = expand_datasets(&a.data)?;
    let data = dirs.iter().map(|d| load(d, false)).collect::<Result<Vec<_>>>()?;
    let net = Network::new(settings.network, settings.init_seed)?;
    log::info!("training {} parameters on {} scenes", net.param_count(), data.len());
    let outcome = pipeline::train(&data, &settings.augment, &settings.train, net)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    nn::save_checkpoint(&a.out, &outcome.best)?;
    pipeline::write_metrics_csv(&with_suffix(&a.out, ".metrics.csv"), &outcome.log)?;
    println!(
        "{} steps, {} samples, best validation MAE {:.2} deg",
        outcome.steps, outcome.samples_seen, outcome.best_val_mae
    );
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    if a.stride == 0 {
        return Err(Error::InvalidConfig("stride must be positive".into()));
    }
    let net: Network<f32> = nn::load_checkpoint(&a.ckpt)?;
    let sample = load(&a.data, !a.no_object_fixes)?;
    let masked: Vec<usize> = (0..sample.mask().len()).filter(|&i| sample.mask()[i]).collect();
    let opts = InferOptions {
        rotations: a.ktest,
        pixels: (a.stride > 1).then(|| masked.iter().copied().step_by(a.stride).collect()),
        ..InferOptions::default()
    };
    let map = eval::infer_with(&net, &sample, &opts)?;
    io::write_normal_map(&a.out, &map)?;
    if io::has_ground_truth(&a.data) {
        let s = eval::score(&object_name(&a.data), &map, &sample.normals)?;
        println!("MAE {:.2} deg over {} pixels", s.mean, s.pixels);
    }
    Ok(())
}

fn read_ground_truth(path: &Path) -> Result<NormalMap> {
    if path.is_dir() {
        if !io::has_ground_truth(path) {
            return Err(Error::format(path, "dataset has no ground truth"));
        }
        Ok(load(path, true)?.normals)
    } else {
        io::read_normal_map(path)
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if a.pred.len() != a.gt.len() {
        return Err(Error::CountMismatch {
            what: "predictions vs ground truths",
            left: a.pred.len(),
            right: a.gt.len(),
        });
    }
    let mut objects = Vec::new();
    for (p, g) in a.pred.iter().zip(&a.gt) {
        let pred = io::read_normal_map(p)?;
        let gt = read_ground_truth(g)?;
        objects.push(eval::score(&object_name(g), &pred, &gt)?);
    }
    let report = EvalReport::new(objects);
    write_report(&a.report, &report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, report.to_table()).map_err(|e| Error::io(path, e))?;
    for o in &report.objects {
        o.write_error_image(&with_suffix(path, &format!(".{}.error.png", o.name)))?;
    }
    Ok(())
}

fn cmd_baseline(a: BaselineArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut scores = Vec::new();
    for dir in expand_datasets(&a.data)? {
        let name = object_name(&dir);
        let sample = load(&dir, !a.no_object_fixes)?;
        let normals = baseline::solve_map(&sample, a.threshold)?;
        io::write_normal_map(&a.out.join(format!("{name}.pfm")), &normals)?;
        if io::has_ground_truth(&dir) {
            scores.push(eval::score(&name, &normals, &sample.normals)?);
        }
    }
    if !scores.is_empty() {
        let report = EvalReport::new(scores);
        write_report(&a.out.join("report.txt"), &report)?;
        print!("{}", report.to_table());
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let results = nn::gradcheck_suite(a.seed)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{status:4} {:?} {}: {:.3e} (tol {:.0e})", r.kind, r.name, r.error, r.tolerance);
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Error::InvalidValue(format!("{failed} of {} gradient checks failed", results.len())));
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let sample = load(&a.data, false)?;
    let (col, row) = a.pixel;
    if col >= sample.width() || row >= sample.height() {
        return Err(Error::InvalidValue(format!(
            "pixel {col},{row} outside {}x{} image",
            sample.width(),
            sample.height()
        )));
    }
    let obs = sample.pixel_observations(row * sample.width() + col);
    let map = build_observation_map(&obs, &sample.lights, a.map_size)?;
    let w = a.map_size;
    let peak = map.values().iter().copied().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    // Image rows run downward while the map's v axis points up.
    let img = image::GrayImage::from_fn(w as u32, w as u32, |x, y| {
        let v = map.get(x as usize, w - 1 - y as usize);
        image::Luma([(v * scale).round().clamp(0.0, 255.0) as u8])
    });
    img.save(&a.out).map_err(|e| Error::Image {
        path: a.out.clone(),
        source: e,
    })?;
    println!("observation map of pixel {col},{row} written to {}", a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["psnet", "frobnicate"]), 2);
        assert_eq!(run(["psnet", "gradcheck", "--bogus"]), 2);
        assert_eq!(run(["psnet", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nothing");
        let out = dir.path().join("o.pfm");
        let code = run([
            "psnet".as_ref(),
            "baseline".as_ref(),
            "--data".as_ref(),
            missing.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn key_values() {
        let kv = parse_key_values("# c\na = 1\n\nb=x # tail\n").unwrap();
        assert_eq!(kv, vec![("a".into(), "1".into()), ("b".into(), "x".into())]);
        assert!(parse_key_values("novalue").is_err());
    }

    #[test]
    fn settings_keys_and_overrides() {
        let s = TrainSettings::from_text("seed = 5\nmap_size = 32\nbatch_size=8\ninterpolation=nearest\ntrain_seed=9").unwrap();
        assert_eq!(s.init_seed, 5);
        assert_eq!(s.augment.seed, 5);
        assert_eq!(s.train.seed, 9);
        assert_eq!(s.network.map_size, 32);
        assert_eq!(s.train.batch_size, 8);
        assert_eq!(s.train.interpolation, Interpolation::Nearest);
        assert!(TrainSettings::from_text("nope = 1").is_err());
        assert!(TrainSettings::from_text("epochs = two").is_err());
    }

    #[test]
    fn scene_specs() {
        let s = read_scene_spec("surface=bumps,height=20,width=24,bumps=3,specular_strength=0.5").unwrap();
        assert_eq!((s.height, s.width), (20, 24));
        assert!(matches!(s.surface, Surface::BumpField(ref b) if b.len() == 3));
        assert!(read_scene_spec("surface=cube").is_err());
        assert!(read_scene_spec("colour=red").is_err());
        assert!(read_scene_spec("albedo=2").is_err());
    }

    #[test]
    fn pixel_flag() {
        assert_eq!(parse_pixel("3,4").unwrap(), (3, 4));
        assert!(parse_pixel("3").is_err());
    }
}
