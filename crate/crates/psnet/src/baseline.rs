//! Per-pixel Lambertian least squares.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::normals::NormalMap;
use crate::projection::{LightSource, UnitVector3};
use crate::render::RenderedSample;

/// Default fraction of the per-pixel maximum below which observations are
/// treated as shadowed.
pub const DEFAULT_SHADOW_THRESHOLD: f64 = 0.1;

/// `light_matrix · g ≈ observations` with rows `L_j · l_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub light_matrix: Vec<[f64; 3]>,
    pub observations: Vec<f64>,
}

impl LinearSystem {
    pub fn new(lights: &[LightSource], observations: &[f64]) -> Result<Self> {
        if lights.len() != observations.len() {
            return Err(Error::CountMismatch {
                what: "lights vs observations",
                left: lights.len(),
                right: observations.len(),
            });
        }
        Ok(LinearSystem {
            light_matrix: lights
                .iter()
                .map(|l| {
                    let d = l.direction();
                    [l.intensity() * d.x(), l.intensity() * d.y(), l.intensity() * d.z()]
                })
                .collect(),
            observations: observations.to_vec(),
        })
    }

    fn select(&self, keep: &[bool]) -> LinearSystem {
        let mut out = LinearSystem {
            light_matrix: Vec::new(),
            observations: Vec::new(),
        };
        for ((row, obs), k) in self.light_matrix.iter().zip(&self.observations).zip(keep) {
            if *k {
                out.light_matrix.push(*row);
                out.observations.push(*obs);
            }
        }
        out
    }
}

/// Least-squares normal and albedo of one pixel via Householder QR.
pub fn solve_pixel(system: &LinearSystem) -> Result<(UnitVector3, f64)> {
    let rows = system.light_matrix.len();
    if rows != system.observations.len() {
        return Err(Error::CountMismatch {
            what: "light rows vs observations",
            left: rows,
            right: system.observations.len(),
        });
    }
    if rows < 3 {
        return Err(Error::DegenerateGeometry);
    }
    let a = DMatrix::from_fn(rows, 3, |r, c| system.light_matrix[r][c]);
    let b = DVector::from_column_slice(&system.observations);
    let scale = a.norm();
    if !(scale > 0.0) {
        return Err(Error::DegenerateGeometry);
    }
    let qr = a.qr();
    let r = qr.r();
    // Without pivoting, R is invertible exactly when A has full column rank.
    if (0..3).any(|i| r[(i, i)].abs() <= 1e-10 * scale) {
        return Err(Error::DegenerateGeometry);
    }
    let qtb = qr.q().transpose() * b;
    let g = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::DegenerateGeometry)?;
    let albedo = g.norm();
    if albedo == 0.0 || !albedo.is_finite() {
        return Ok((UnitVector3::ZENITH, 0.0));
    }
    let mut n = UnitVector3::new_normalize(g[0], g[1], g[2]).ok_or(Error::DegenerateGeometry)?;
    if n.z() < 0.0 {
        n = n.neg();
    }
    Ok((n, albedo))
}

/// Pixel solve after discarding observations at or below `threshold × max`
/// (so exact zeros, i.e. attached shadows, always go); falls back to every
/// observation when fewer than three survive.
pub fn solve_thresholded(system: &LinearSystem, threshold: f64) -> Result<(UnitVector3, f64)> {
    let max = system.observations.iter().copied().fold(0.0, f64::max);
    let keep: Vec<bool> = system
        .observations
        .iter()
        .map(|o| *o > threshold * max)
        .collect();
    if keep.iter().filter(|k| **k).count() >= 3 {
        if let Ok(sol) = solve_pixel(&system.select(&keep)) {
            return Ok(sol);
        }
    }
    solve_pixel(system)
}

/// Normals and albedo of every masked pixel. Pixels whose system is
/// degenerate are left invalid.
pub fn solve_map_with_albedo(sample: &RenderedSample, shadow_threshold: f64) -> Result<(NormalMap, Vec<f64>)> {
    if sample.lights.len() < 3 {
        return Err(Error::DegenerateGeometry);
    }
    if !(0.0..1.0).contains(&shadow_threshold) {
        return Err(Error::InvalidValue(format!(
            "shadow threshold must be in [0, 1), got {shadow_threshold}"
        )));
    }
    let (h, w) = (sample.height(), sample.width());
    let template = LinearSystem::new(&sample.lights, &vec![0.0; sample.lights.len()])?;
    let solved: Vec<Option<(UnitVector3, f64)>> = (0..h * w)
        .into_par_iter()
        .map(|i| {
            if !sample.mask()[i] {
                return None;
            }
            let system = LinearSystem {
                light_matrix: template.light_matrix.clone(),
                observations: sample.pixel_observations(i),
            };
            solve_thresholded(&system, shadow_threshold).ok()
        })
        .collect();
    let mut normals = NormalMap::empty(h, w);
    let mut albedo = vec![0.0; h * w];
    for (i, s) in solved.into_iter().enumerate() {
        if let Some((n, a)) = s {
            normals.set(i / w, i % w, n);
            albedo[i] = a;
        }
    }
    Ok((normals, albedo))
}

pub fn solve_map(sample: &RenderedSample, shadow_threshold: f64) -> Result<NormalMap> {
    solve_map_with_albedo(sample, shadow_threshold).map(|(n, _)| n)
}
