//! Inference with rotation averaging, and angular-error scoring.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::normals::NormalMap;
use crate::pipeline::{predict_centers, PatchSampler};
use crate::projection::{rotate_direction, Interpolation, UnitVector3};
use crate::render::RenderedSample;

/// Test-time rotations used by default.
pub const DEFAULT_K_TEST: usize = 12;

/// Averages shorter than this are treated as having no direction.
pub const DEGENERATE_MEAN: f64 = 1e-6;

/// Angle between two unit vectors in degrees.
pub fn angular_error(a: &UnitVector3, b: &UnitVector3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Renormalized mean of `normals`; `None` when empty or when the mean is
/// shorter than [`DEGENERATE_MEAN`].
pub fn average_normals(normals: &[UnitVector3]) -> Option<UnitVector3> {
    if normals.is_empty() {
        return None;
    }
    let mut s = [0.0; 3];
    for n in normals {
        for (acc, c) in s.iter_mut().zip(n.to_array()) {
            *acc += c;
        }
    }
    let k = normals.len() as f64;
    let mean = s.map(|v| v / k);
    let len = (mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]).sqrt();
    if len < DEGENERATE_MEAN {
        return None;
    }
    UnitVector3::new_normalize(mean[0], mean[1], mean[2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOptions {
    /// `K_test`: rotations evenly spaced over the full turn.
    pub rotations: usize,
    pub interpolation: Interpolation,
    /// Patches per forward pass; does not affect results.
    pub batch_size: usize,
    /// Row-major pixel indices to predict; all masked pixels when `None`.
    pub pixels: Option<Vec<usize>>,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            rotations: DEFAULT_K_TEST,
            interpolation: Interpolation::Bicubic,
            batch_size: 64,
            pixels: None,
        }
    }
}

/// Normal map predicted with `k_test` rotations and default options.
pub fn infer(net: &Network<f32>, sample: &RenderedSample, k_test: usize) -> Result<NormalMap> {
    infer_with(
        net,
        sample,
        &InferOptions {
            rotations: k_test,
            ..InferOptions::default()
        },
    )
}

/// For each rotation the lights are rotated, the pixel neighborhood is read
/// at rotated offsets, and the decoded normal is rotated back; the rotations
/// are then averaged per pixel. Neighbors outside the mask contribute their
/// recorded intensities, and outside the image zero.
pub fn infer_with(net: &Network<f32>, sample: &RenderedSample, opts: &InferOptions) -> Result<NormalMap> {
    if opts.rotations == 0 {
        return Err(Error::InvalidConfig("K_test must be positive".into()));
    }
    let (h, w) = (sample.height(), sample.width());
    let pixels: Vec<usize> = match &opts.pixels {
        Some(p) => {
            if let Some(bad) = p.iter().find(|i| **i >= h * w) {
                return Err(Error::InvalidValue(format!("pixel index {bad} out of range")));
            }
            p.iter().copied().filter(|&i| sample.mask()[i]).collect()
        }
        None => (0..h * w).filter(|&i| sample.mask()[i]).collect(),
    };
    let mut out = NormalMap::empty(h, w);
    if pixels.is_empty() {
        return Ok(out);
    }
    let cfg = net.config();
    let sampler = PatchSampler::new(sample, cfg.patch_size, cfg.map_size, opts.interpolation)?;
    let centers: Vec<(f64, f64)> = pixels.iter().map(|&i| ((i % w) as f64, (i / w) as f64)).collect();
    let mut votes: Vec<Vec<UnitVector3>> = vec![Vec::with_capacity(opts.rotations); pixels.len()];
    for k in 0..opts.rotations {
        let angle = std::f64::consts::TAU * k as f64 / opts.rotations as f64;
        let preds = predict_centers(net, &sampler, &centers, angle, opts.batch_size)?;
        for (v, p) in votes.iter_mut().zip(preds) {
            if let Some(n) = p {
                v.push(rotate_direction(&n, -angle));
            }
        }
    }
    for (&i, v) in pixels.iter().zip(&votes) {
        if let Some(n) = average_normals(v) {
            out.set(i / w, i % w, n);
        }
    }
    Ok(out)
}

/// Angular errors of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectScore {
    pub name: String,
    pub height: usize,
    pub width: usize,
    /// Per pixel, degrees; `None` outside the intersected mask.
    pub errors: Vec<Option<f64>>,
    pub mean: f64,
    pub pixels: usize,
}

/// Mean angular error over the pixels valid in both maps.
pub fn score(name: &str, pred: &NormalMap, gt: &NormalMap) -> Result<ObjectScore> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let w = pred.width();
    let errors: Vec<Option<f64>> = (0..pred.len())
        .map(|i| {
            let a = pred.get(i / w, i % w)?;
            let b = gt.get(i / w, i % w)?;
            Some(angular_error(&a, &b))
        })
        .collect();
    let valid: Vec<f64> = errors.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(ObjectScore {
        name: name.to_string(),
        height: pred.height(),
        width: w,
        mean: valid.iter().sum::<f64>() / valid.len() as f64,
        pixels: valid.len(),
        errors,
    })
}

impl ObjectScore {
    /// 8-bit grayscale image, `0° → 0` to `90° → 255`, clamped; pixels
    /// without an error are black.
    pub fn error_image(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let e = self.errors[y as usize * self.width + x as usize].unwrap_or(0.0);
            image::Luma([(e.clamp(0.0, 90.0) / 90.0 * 255.0).round() as u8])
        })
    }

    pub fn write_error_image(&self, path: &Path) -> Result<()> {
        self.error_image().save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub objects: Vec<ObjectScore>,
}

impl EvalReport {
    pub fn new(objects: Vec<ObjectScore>) -> Self {
        EvalReport { objects }
    }

    /// Unweighted mean of the per-object means.
    pub fn average(&self) -> f64 {
        if self.objects.is_empty() {
            return f64::NAN;
        }
        self.objects.iter().map(|o| o.mean).sum::<f64>() / self.objects.len() as f64
    }

    /// One column per object plus `Average`, errors in degrees.
    pub fn to_table(&self) -> String {
        let mut header = String::from("| method |");
        let mut rule = String::from("|---|");
        let mut row = String::from("| prediction |");
        for o in &self.objects {
            let _ = write!(header, " {} |", o.name);
            rule.push_str("---|");
            let _ = write!(row, " {:.2} |", o.mean);
        }
        let _ = write!(header, " Average |");
        rule.push_str("---|");
        let _ = write!(row, " {:.2} |", self.average());
        format!("{header}\n{rule}\n{row}\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn angular_error_examples() {
        let z = UnitVector3::ZENITH;
        assert_eq!(angular_error(&z, &z), 0.0);
        let x = UnitVector3::from_array([1.0, 0.0, 0.0]).unwrap();
        assert!((angular_error(&z, &x) - 90.0).abs() < 1e-12);
        let d = 1f64.to_radians();
        let one = UnitVector3::from_array([d.sin(), 0.0, d.cos()]).unwrap();
        assert!((angular_error(&z, &one) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn averaging() {
        let n = UnitVector3::from_angles(0.3, 1.1);
        assert!(angular_error(&average_normals(&[n, n, n]).unwrap(), &n) < 1e-6);
        let x = UnitVector3::from_array([1.0, 0.0, 0.0]).unwrap();
        assert!(average_normals(&[x, x.neg()]).is_none());
        assert!(average_normals(&[]).is_none());
    }

    fn random_map(h: usize, w: usize, seed: u64) -> NormalMap {
        let v = (0..h * w)
            .map(|i| {
                let t = (i as u64 + seed) as f64;
                [(t * 0.37).sin(), (t * 0.11).cos(), 1.0 + (t * 0.05).sin().abs()]
            })
            .collect();
        NormalMap::from_vectors(h, w, v).unwrap()
    }

    #[test]
    fn identical_maps_score_zero() {
        let m = random_map(5, 6, 0);
        let s = score("a", &m, &m).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.pixels, 30);
        let table = EvalReport::new(vec![s]).to_table();
        assert!(table.contains("0.00"), "{table}");
    }

    #[test]
    fn zenith_field_is_fixed_by_view_axis_rotation() {
        let flat = NormalMap::from_vectors(4, 4, vec![[0.0, 0.0, 1.0]; 16]).unwrap();
        let mut rotated = NormalMap::empty(4, 4);
        for r in 0..4 {
            for c in 0..4 {
                rotated.set(r, c, rotate_direction(&flat.get(r, c).unwrap(), std::f64::consts::FRAC_PI_2));
            }
        }
        assert_eq!(score("flat", &rotated, &flat).unwrap().mean, 0.0);
    }

    #[test]
    fn empty_intersection_is_an_error() {
        let m = random_map(3, 3, 0);
        assert!(matches!(score("x", &m, &NormalMap::empty(3, 3)), Err(Error::EmptyMask)));
        assert!(score("x", &m, &random_map(3, 4, 0)).is_err());
    }

    #[test]
    fn error_image_scale() {
        let s = ObjectScore {
            name: "x".into(),
            height: 1,
            width: 3,
            errors: vec![Some(0.0), Some(45.0), Some(120.0)],
            mean: 0.0,
            pixels: 3,
        };
        let img = s.error_image();
        assert_eq!(img.as_raw(), &vec![0, 128, 255]);
    }

    proptest! {
        #[test]
        fn score_is_symmetric(seed_a in 0u64..1000, seed_b in 0u64..1000) {
            let a = random_map(4, 5, seed_a);
            let b = random_map(4, 5, seed_b);
            let ab = score("x", &a, &b).unwrap();
            let ba = score("x", &b, &a).unwrap();
            prop_assert_eq!(ab.errors, ba.errors);
        }

        #[test]
        fn shrinking_the_mask_keeps_retained_errors(seed in 0u64..1000, drop in proptest::collection::vec(any::<bool>(), 20)) {
            let a = random_map(4, 5, seed);
            let b = random_map(4, 5, seed + 7);
            let full = score("x", &a, &b).unwrap();
            let mut shrunk = a.clone();
            let keep: Vec<bool> = drop.iter().map(|d| !d).collect();
            shrunk.restrict_to(&keep);
            if let Ok(s) = score("x", &shrunk, &b) {
                for (i, e) in s.errors.iter().enumerate() {
                    if let Some(e) = e {
                        prop_assert_eq!(Some(*e), full.errors[i]);
                    }
                }
            }
        }

        #[test]
        fn averaged_normal_is_unit(angles in proptest::collection::vec((0.0f64..1.5, 0.0f64..std::f64::consts::TAU), 1..12)) {
            let ns: Vec<_> = angles.iter().map(|(i, a)| UnitVector3::from_angles(*i, *a)).collect();
            let n = average_normals(&ns).unwrap();
            prop_assert!((n.dot(&n) - 1.0).abs() < 1e-12);
        }
    }
}
