//! Patch assembly, augmentation and the training loop.
//!
//! A patch is the `b × b` block of observation maps around one pixel. Both
//! rotation augmentations are applied per patch: the lights are rotated
//! before the maps are built (photometric), and the pixel neighborhood is
//! read from the un-rotated image stack at rotated offsets (spatial), which
//! equals sampling a rotated copy of the whole image.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{batch_loss, heatmap_target, Network, OptimizerState, RmsPropConfig, Tensor};
use crate::projection::{
    decode_heatmap, rotate_direction, Field, HeatMap, Interpolation, LightBins, LightSource, UnitVector3,
};
use crate::render::RenderedSample;

/// One network input with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTensor {
    /// `[b, b, w, w, 1]`: spatial row, spatial column, map row `v`, map
    /// column `u`, channel.
    pub values: Tensor<f32>,
    pub target_normal: UnitVector3,
}

/// Reads rotated pixel neighborhoods out of a sample.
pub struct PatchSampler<'a> {
    sample: &'a RenderedSample,
    /// All observations of a pixel side by side, `H × W × J`.
    stack: Field,
    /// Ground-truth normals as a 3-channel field.
    normal_field: Field,
    /// Pixels whose interpolation taps all lie inside the mask.
    support: Vec<bool>,
    patch: usize,
    map: usize,
    interp: Interpolation,
}

/// Positions closer than this to a grid point are read without interpolation.
const ON_GRID: f64 = 1e-9;

/// Cells around an interpolated sample that feed the bicubic kernel.
const TAP_REACH: i64 = 2;

impl<'a> PatchSampler<'a> {
    pub fn new(sample: &'a RenderedSample, patch: usize, map: usize, interp: Interpolation) -> Result<Self> {
        if patch % 2 == 0 {
            return Err(Error::InvalidConfig(format!("patch size must be odd, got {patch}")));
        }
        if sample.lights.is_empty() {
            return Err(Error::EmptyInput("sample has no lights"));
        }
        let (h, w, j) = (sample.height(), sample.width(), sample.lights.len());
        let mut data = vec![0.0; h * w * j];
        for (l, img) in sample.images.iter().enumerate() {
            for (i, v) in img.data().iter().enumerate() {
                data[i * j + l] = *v;
            }
        }
        let stack = Field::from_vec(h, w, j, data)?;
        let mask = sample.mask();
        let support = (0..h * w)
            .map(|i| {
                let (r, c) = ((i / w) as i64, (i % w) as i64);
                (-TAP_REACH..=TAP_REACH).all(|dr| {
                    (-TAP_REACH..=TAP_REACH).all(|dc| {
                        let (rr, cc) = (r + dr, c + dc);
                        rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w && mask[rr as usize * w + cc as usize]
                    })
                })
            })
            .collect();
        Ok(PatchSampler {
            sample,
            stack,
            normal_field: sample.normals.to_field(),
            support,
            patch,
            map,
            interp,
        })
    }

    pub fn sample(&self) -> &RenderedSample {
        self.sample
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn map_size(&self) -> usize {
        self.map
    }

    /// Patch values per sample.
    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.map * self.map
    }

    /// Source positions `(col, row)` of the patch neighbors, row-major over
    /// the patch, for a patch whose center reads from `(col, row)` and whose
    /// neighborhood is rotated counter-clockwise by `angle`.
    pub fn neighbor_sources(&self, col: f64, row: f64, angle: f64) -> Vec<(f64, f64)> {
        let h = (self.patch / 2) as i64;
        let (s, c) = angle.sin_cos();
        let mut out = Vec::with_capacity(self.patch * self.patch);
        for dr in -h..=h {
            for dc in -h..=h {
                // Plane offset (dc, -dr) rotated by -angle, back to pixels.
                let (x, y) = (dc as f64, -(dr as f64));
                let (xs, ys) = (c * x + s * y, -s * x + c * y);
                out.push((col + xs, row - ys));
            }
        }
        out
    }

    fn on_grid(col: f64, row: f64) -> Option<(i64, i64)> {
        let (rc, rr) = (col.round(), row.round());
        ((col - rc).abs() < ON_GRID && (row - rr).abs() < ON_GRID).then_some((rc as i64, rr as i64))
    }

    /// Whether a value at `(col, row)` is computed only from masked pixels.
    pub fn readable(&self, col: f64, row: f64) -> bool {
        let (h, w) = (self.sample.height() as i64, self.sample.width() as i64);
        let lookup = |c: i64, r: i64, table: &[bool]| c >= 0 && r >= 0 && c < w && r < h && table[(r * w + c) as usize];
        match Self::on_grid(col, row) {
            Some((c, r)) => lookup(c, r, self.sample.mask()),
            None => lookup(col.round() as i64, row.round() as i64, &self.support),
        }
    }

    /// Whether every neighbor of the patch reads only masked pixels.
    pub fn interior(&self, col: f64, row: f64, angle: f64) -> bool {
        self.neighbor_sources(col, row, angle)
            .into_iter()
            .all(|(c, r)| self.readable(c, r))
    }

    fn observations_at(&self, col: f64, row: f64, out: &mut [f64]) {
        match Self::on_grid(col, row) {
            Some((c, r)) if c >= 0 && r >= 0 && (c as usize) < self.stack.width() && (r as usize) < self.stack.height() => {
                out.copy_from_slice(self.stack.pixel(r as usize, c as usize));
            }
            _ => {
                self.stack.sample(col, row, self.interp, out);
                // Interpolation may overshoot below zero near shadow edges.
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    /// Writes the patch centered at source `(col, row)` into `out`. `bins`
    /// holds the (possibly rotated) directions of the lights `lights`, in
    /// the same order.
    pub fn fill(&self, col: f64, row: f64, angle: f64, bins: &LightBins, lights: &[usize], out: &mut [f32]) {
        debug_assert_eq!(bins.len(), lights.len());
        debug_assert_eq!(out.len(), self.patch_len());
        let m2 = self.map * self.map;
        let mut obs = vec![0.0; self.stack.channels()];
        let mut map = vec![0.0; m2];
        for (k, (c, r)) in self.neighbor_sources(col, row, angle).into_iter().enumerate() {
            self.observations_at(c, r, &mut obs);
            bins.fill(|j| obs[lights[j]], &mut map);
            for (o, v) in out[k * m2..(k + 1) * m2].iter_mut().zip(&map) {
                *o = *v as f32;
            }
        }
    }

    /// Ground-truth normal at source `(col, row)` expressed in a frame
    /// rotated by `angle`.
    pub fn target(&self, col: f64, row: f64, angle: f64) -> Option<UnitVector3> {
        let normals = &self.sample.normals;
        let n = match Self::on_grid(col, row) {
            Some((c, r)) => normals.get(r as usize, c as usize)?,
            None => {
                let mut v = [0.0; 3];
                self.normal_field.sample(col, row, self.interp, &mut v);
                UnitVector3::new_normalize(v[0], v[1], v[2])?
            }
        };
        Some(rotate_direction(&n, angle))
    }

    /// Source centers of every interior patch of the image rotated by
    /// `angle`.
    pub fn rotated_centers(&self, angle: f64) -> Vec<(f64, f64)> {
        let (h, w) = (self.stack.height(), self.stack.width());
        let mut out = Vec::new();
        for row in 0..h {
            for col in 0..w {
                let (c, r) = if angle == 0.0 {
                    (col as f64, row as f64)
                } else {
                    self.stack.rotation_source(col as f64, row as f64, angle)
                };
                if self.interior(c, r, angle) {
                    out.push((c, r));
                }
            }
        }
        out
    }
}

/// Direction-rotated copies of selected lights.
pub fn rotated_lights(lights: &[LightSource], subset: &[usize], angle: f64) -> Vec<LightSource> {
    subset
        .iter()
        .map(|&j| {
            let l = &lights[j];
            if angle == 0.0 {
                *l
            } else {
                l.with_direction(rotate_direction(&l.direction(), angle))
            }
        })
        .collect()
}

/// Un-rotated patches of every pixel whose `b × b` neighborhood lies inside
/// the mask, using the lights `lights_subset`.
pub fn extract_patches(sample: &RenderedSample, w: usize, b: usize, lights_subset: &[usize]) -> Result<Vec<PatchTensor>> {
    if lights_subset.is_empty() {
        return Err(Error::EmptyInput("empty light subset"));
    }
    if let Some(bad) = lights_subset.iter().find(|j| **j >= sample.lights.len()) {
        return Err(Error::InvalidValue(format!("light index {bad} out of range")));
    }
    let sampler = PatchSampler::new(sample, b, w, Interpolation::Nearest)?;
    let bins = LightBins::new(&rotated_lights(&sample.lights, lights_subset, 0.0), w)?;
    let shape = [b, b, w, w, 1];
    sampler
        .rotated_centers(0.0)
        .into_iter()
        .map(|(c, r)| {
            let mut values = vec![0.0f32; sampler.patch_len()];
            sampler.fill(c, r, 0.0, &bins, lights_subset, &mut values);
            Ok(PatchTensor {
                values: Tensor::from_vec(&shape, values)?,
                target_normal: sampler.target(c, r, 0.0).expect("interior pixels are masked"),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub min_lights: usize,
    pub max_lights: usize,
    /// Range of the random maximal light inclination, degrees.
    pub min_angle_deg: f64,
    pub max_angle_deg: f64,
    /// `K_train`: rotations per sample, evenly spaced over the full turn.
    pub rotations: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            min_lights: 50,
            max_lights: 1000,
            min_angle_deg: 20.0,
            max_angle_deg: 90.0,
            rotations: 12,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_lights < 3 || self.min_lights > self.max_lights {
            return Err(Error::InvalidConfig(format!(
                "need 3 <= min_lights <= max_lights, got {} and {}",
                self.min_lights, self.max_lights
            )));
        }
        if !(self.min_angle_deg > 0.0 && self.min_angle_deg <= self.max_angle_deg && self.max_angle_deg <= 90.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < min_angle <= max_angle <= 90, got {} and {}",
                self.min_angle_deg, self.max_angle_deg
            )));
        }
        if self.rotations == 0 {
            return Err(Error::InvalidConfig("rotations must be positive".into()));
        }
        Ok(())
    }

    pub fn rotation_angle(&self, k: usize) -> f64 {
        TAU * (k % self.rotations) as f64 / self.rotations as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    /// Sorted indices of the retained lights.
    pub lights: Vec<usize>,
    pub max_angle_deg: f64,
    pub rotation_index: usize,
    pub rotation_angle: f64,
}

/// Indices of the lights at most `max_angle_deg` away from the view axis.
pub fn lights_within(lights: &[LightSource], max_angle_deg: f64) -> Vec<usize> {
    let limit = max_angle_deg.to_radians();
    (0..lights.len())
        .filter(|&j| lights[j].direction().inclination() <= limit)
        .collect()
}

/// Random light subset and rotation for draw `draw_index`; a pure function
/// of `(cfg.seed, draw_index)` and the sample's lights.
pub fn augment(sample: &RenderedSample, cfg: &AugmentConfig, draw_index: u64) -> Result<Augmentation> {
    cfg.validate()?;
    let lights = &sample.lights;
    if lights.len() < 3 {
        return Err(Error::InvalidValue(format!(
            "augmentation needs at least 3 lights, sample has {}",
            lights.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(draw_index);
    let max_angle_deg = if cfg.min_angle_deg == cfg.max_angle_deg {
        cfg.max_angle_deg
    } else {
        rng.random_range(cfg.min_angle_deg..=cfg.max_angle_deg)
    };
    let mut available = lights_within(lights, max_angle_deg);
    if available.len() < cfg.min_lights {
        // Relax the threshold just enough to admit min_lights.
        let mut by_angle: Vec<usize> = (0..lights.len()).collect();
        by_angle.sort_by(|&a, &b| {
            let (ia, ib) = (lights[a].direction().inclination(), lights[b].direction().inclination());
            ia.total_cmp(&ib).then(a.cmp(&b))
        });
        by_angle.truncate(cfg.min_lights);
        by_angle.sort_unstable();
        available = by_angle;
    }
    let upper = cfg.max_lights.min(available.len());
    let lower = cfg.min_lights.min(upper);
    let count = rng.random_range(lower..=upper);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, available.len(), count)
        .into_iter()
        .map(|i| available[i])
        .collect();
    chosen.sort_unstable();
    let rotation_index = (draw_index % cfg.rotations as u64) as usize;
    Ok(Augmentation {
        lights: chosen,
        max_angle_deg,
        rotation_index,
        rotation_angle: cfg.rotation_angle(rotation_index),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Steps between metric records.
    pub log_every: u64,
    /// Validation pixels drawn once from the validation scenes.
    pub validation_pixels: usize,
    pub max_steps: Option<u64>,
    /// Wall-clock limit; runs stopped by it are not reproducible.
    pub time_budget: Option<Duration>,
    pub optimizer: RmsPropConfig,
    pub interpolation: Interpolation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2,
            batch_size: 32,
            validation_fraction: 0.1,
            seed: 0,
            log_every: 100,
            validation_pixels: 512,
            max_steps: None,
            time_budget: None,
            optimizer: RmsPropConfig::default(),
            interpolation: Interpolation::Bicubic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::InvalidConfig("epochs, batch_size and log_every must be positive".into()));
        }
        Ok(())
    }
}

/// Scene-level `(train, validation)` partition; a pure function of its
/// arguments. Both parts are non-empty.
pub fn split_scenes(count: usize, validation_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if count < 2 {
        return Err(Error::InvalidConfig(format!(
            "a scene-level split needs at least 2 scenes, got {count}"
        )));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((count as f64 * validation_fraction).round() as usize).clamp(1, count - 1);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    pub samples_seen: u64,
    pub learning_rate: f64,
    /// Mean training loss since the previous record.
    pub loss: f64,
    /// Mean angular error on the validation pixels, degrees.
    pub val_mae: f64,
}

pub const METRICS_HEADER: &str = "step,samples_seen,learning_rate,loss,val_mae";

pub fn metrics_csv(log: &[MetricRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in log {
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{:.6}",
            r.step, r.samples_seen, r.learning_rate, r.loss, r.val_mae
        );
    }
    s
}

pub fn write_metrics_csv(path: &Path, log: &[MetricRecord]) -> Result<()> {
    std::fs::write(path, metrics_csv(log)).map_err(|e| Error::io(path, e))
}

pub struct TrainOutcome {
    pub network: Network<f32>,
    /// Parameters at the record with the lowest validation error.
    pub best: Network<f32>,
    pub best_val_mae: f64,
    pub log: Vec<MetricRecord>,
    pub steps: u64,
    pub samples_seen: u64,
    pub train_scenes: Vec<usize>,
    pub val_scenes: Vec<usize>,
    /// Scenes that contributed at least one sample to a gradient update.
    pub updated_scenes: BTreeSet<usize>,
}

/// Normal predicted for each patch of a batch; `None` where the heat-map has
/// no positive peak.
pub fn predict_batch(net: &Network<f32>, batch: &Tensor<f32>) -> Result<Vec<Option<UnitVector3>>> {
    let out = net.forward(batch)?;
    let w = net.config().map_size;
    Ok(out
        .data()
        .chunks_exact(w * w)
        .map(|m| {
            let map = HeatMap::new(w, m.iter().map(|v| *v as f64).collect()).ok()?;
            decode_heatmap(&map).ok()
        })
        .collect())
}

/// Batched inference over patch centers `(col, row)` of one sample, all
/// lights, one rotation.
pub fn predict_centers(
    net: &Network<f32>,
    sampler: &PatchSampler<'_>,
    centers: &[(f64, f64)],
    angle: f64,
    batch_size: usize,
) -> Result<Vec<Option<UnitVector3>>> {
    let cfg = net.config();
    if sampler.patch_size() != cfg.patch_size || sampler.map_size() != cfg.map_size {
        return Err(Error::ShapeMismatch(format!(
            "sampler builds {}x{} patches of {}x{} maps, network expects {}x{} of {}x{}",
            sampler.patch_size(),
            sampler.patch_size(),
            sampler.map_size(),
            sampler.map_size(),
            cfg.patch_size,
            cfg.patch_size,
            cfg.map_size,
            cfg.map_size
        )));
    }
    let lights = &sampler.sample().lights;
    let all: Vec<usize> = (0..lights.len()).collect();
    let bins = LightBins::new(&rotated_lights(lights, &all, angle), cfg.map_size)?;
    let per = sampler.patch_len();
    let mut out = Vec::with_capacity(centers.len());
    for chunk in centers.chunks(batch_size.max(1)) {
        let mut data = vec![0.0f32; chunk.len() * per];
        for (k, &(c, r)) in chunk.iter().enumerate() {
            sampler.fill(c, r, angle, &bins, &all, &mut data[k * per..(k + 1) * per]);
        }
        let mut shape = vec![chunk.len()];
        shape.extend_from_slice(&cfg.patch_shape());
        out.extend(predict_batch(net, &Tensor::from_vec(&shape, data)?)?);
    }
    Ok(out)
}

fn angular_error_deg(a: &UnitVector3, b: &UnitVector3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

struct Validation<'a> {
    samplers: Vec<PatchSampler<'a>>,
    /// `(sampler, col, row)`.
    pixels: Vec<(usize, f64, f64)>,
}

impl Validation<'_> {
    /// Mean angular error; failed decodes count as 90°.
    fn mae(&self, net: &Network<f32>, batch: usize) -> Result<f64> {
        if self.pixels.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for (s, sampler) in self.samplers.iter().enumerate() {
            let centers: Vec<(f64, f64)> = self.pixels.iter().filter(|p| p.0 == s).map(|p| (p.1, p.2)).collect();
            let preds = predict_centers(net, sampler, &centers, 0.0, batch)?;
            for (pred, &(c, r)) in preds.iter().zip(&centers) {
                let gt = sampler.target(c, r, 0.0).expect("interior pixel");
                total += pred.map_or(90.0, |p| angular_error_deg(&p, &gt));
            }
        }
        Ok(total / self.pixels.len() as f64)
    }
}

/// A training example: scene, rotation index and patch center.
#[derive(Clone, Copy)]
struct Entry {
    scene: u32,
    rotation: u32,
    col: f64,
    row: f64,
}

/// Trains `net` on `dataset`. Every interior pixel of every training scene is
/// presented once per rotation per epoch, each time with a fresh light subset.
pub fn train(
    dataset: &[RenderedSample],
    acfg: &AugmentConfig,
    tcfg: &TrainConfig,
    mut net: Network<f32>,
) -> Result<TrainOutcome> {
    acfg.validate()?;
    tcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("empty training dataset"));
    }
    let start = Instant::now();
    let cfg = *net.config();
    let (train_scenes, val_scenes) = split_scenes(dataset.len(), tcfg.validation_fraction, tcfg.seed)?;
    let samplers = dataset
        .iter()
        .map(|s| PatchSampler::new(s, cfg.patch_size, cfg.map_size, tcfg.interpolation))
        .collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::new();
    for &s in &train_scenes {
        for k in 0..acfg.rotations {
            for (col, row) in samplers[s].rotated_centers(acfg.rotation_angle(k)) {
                entries.push(Entry {
                    scene: s as u32,
                    rotation: k as u32,
                    col,
                    row,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyInput("training scenes have no interior pixels"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
    for (i, &s) in val_scenes.iter().enumerate() {
        for (c, r) in samplers[s].rotated_centers(0.0) {
            candidates.push((i, c, r));
        }
    }
    let picks = rand::seq::index::sample(&mut rng, candidates.len(), tcfg.validation_pixels.min(candidates.len()));
    let mut pixels: Vec<_> = picks.into_iter().map(|i| candidates[i]).collect();
    pixels.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.total_cmp(&b.2)).then(a.1.total_cmp(&b.1)));
    let validation = Validation {
        samplers: val_scenes
            .iter()
            .map(|&s| PatchSampler::new(&dataset[s], cfg.patch_size, cfg.map_size, tcfg.interpolation))
            .collect::<Result<Vec<_>>>()?,
        pixels,
    };

    let mut opt = OptimizerState::new(tcfg.optimizer, net.params());
    let mut log = Vec::new();
    let mut best = net.clone();
    let mut best_val_mae = f64::INFINITY;
    let mut updated_scenes = BTreeSet::new();
    let (mut steps, mut samples_seen) = (0u64, 0u64);
    let (mut loss_sum, mut loss_count) = (0.0, 0u64);
    let mut lr = tcfg.optimizer.rate_at(0);
    let per = cfg.patch_size * cfg.patch_size * cfg.map_size * cfg.map_size;
    let mut shape = vec![0];
    shape.extend_from_slice(&cfg.patch_shape());

    let mut record = |net: &Network<f32>, steps, samples_seen, lr, loss: f64, log: &mut Vec<MetricRecord>| -> Result<()> {
        let val_mae = validation.mae(net, tcfg.batch_size)?;
        log.push(MetricRecord {
            step: steps,
            samples_seen,
            learning_rate: lr,
            loss,
            val_mae,
        });
        if val_mae < best_val_mae {
            best_val_mae = val_mae;
            best = net.clone();
        }
        Ok(())
    };

    let out_of_budget = |steps: u64| {
        tcfg.max_steps.is_some_and(|m| steps >= m) || tcfg.time_budget.is_some_and(|t| start.elapsed() >= t)
    };
    let total_entries = entries.len() as u64;
    'epochs: for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(tcfg.batch_size) {
            if out_of_budget(steps) {
                break 'epochs;
            }
            let mut data = vec![0.0f32; chunk.len() * per];
            let mut targets = Vec::with_capacity(chunk.len());
            for (b, &idx) in chunk.iter().enumerate() {
                let e = entries[idx];
                let sampler = &samplers[e.scene as usize];
                // Distinct per entry and epoch, and congruent to the entry's
                // rotation modulo K_train.
                let draw = (epoch as u64 * total_entries + idx as u64) * acfg.rotations as u64 + e.rotation as u64;
                let aug = augment(sampler.sample(), acfg, draw)?;
                let bins = LightBins::new(
                    &rotated_lights(&sampler.sample().lights, &aug.lights, aug.rotation_angle),
                    cfg.map_size,
                )?;
                sampler.fill(e.col, e.row, aug.rotation_angle, &bins, &aug.lights, &mut data[b * per..(b + 1) * per]);
                let n = sampler
                    .target(e.col, e.row, aug.rotation_angle)
                    .ok_or_else(|| Error::InvalidValue("patch center without a normal".into()))?;
                targets.push(heatmap_target(&n, cfg.map_size)?.into_iter().map(|v| v as f32).collect::<Vec<_>>());
                updated_scenes.insert(e.scene as usize);
            }
            shape[0] = chunk.len();
            let batch = Tensor::from_vec(&shape, data)?;
            let tape = net.forward_tape(&batch)?;
            let pred = tape.output().clone().reshape(&[chunk.len(), cfg.map_size, cfg.map_size])?;
            let (loss, grad) = batch_loss(&pred, &targets)?;
            if !loss.is_finite() {
                return Err(Error::InvalidValue(format!("training diverged at step {steps}")));
            }
            let grads = net.backward(&tape, &grad)?;
            lr = opt.step(net.params_mut(), &grads, samples_seen)?;
            steps += 1;
            samples_seen += chunk.len() as u64;
            loss_sum += loss;
            loss_count += 1;
            if steps % tcfg.log_every == 0 {
                record(&net, steps, samples_seen, lr, loss_sum / loss_count as f64, &mut log)?;
                loss_sum = 0.0;
                loss_count = 0;
            }
        }
    }
    if loss_count > 0 || log.is_empty() {
        let loss = if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN };
        record(&net, steps, samples_seen, lr, loss, &mut log)?;
    }
    Ok(TrainOutcome {
        network: net,
        best,
        best_val_mae,
        log,
        steps,
        samples_seen,
        train_scenes,
        val_scenes,
        updated_scenes,
    })
}
