//! Geometry between the viewing hemisphere and the `w × w` map plane.
//!
//! A direction `l` on the upper hemisphere is mapped orthographically onto the
//! plane by `u = w (l.x + 1) / 2`, `v = w (l.y + 1) / 2`. Observation maps and
//! heat-maps are both `w × w` grids laid out row-major with `v` as the row and
//! `u` as the column, so cell `(iu, iv)` lives at `values[iv * w + iu]`.

mod heatmap;
mod observation;
mod rotation;

pub use heatmap::{
    decode_heatmap, decode_heatmap_with, encode_heatmap, expected_peak_cell, locate_peak, HeatMap, SubPixel,
};
pub use observation::{build_observation_map, LightBins, ObservationMap};
pub use rotation::{rotate_direction, rotate_field, rotate_vector_field, Field, Interpolation};

use crate::error::{Error, Result};

/// Default observation-map and heat-map side length.
pub const DEFAULT_MAP_SIZE: usize = 48;

/// Standard deviation of the target Gaussian, in map cells.
pub const DEFAULT_SIGMA: f64 = 2.0;

/// A unit-length direction in camera coordinates: `x` right, `y` up, `z`
/// towards the viewer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector3 {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitVector3 {
    pub const ZENITH: UnitVector3 = UnitVector3 {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };

    /// Normalizes `(x, y, z)`; `None` for zero-length or non-finite input.
    pub fn new_normalize(x: f64, y: f64, z: f64) -> Option<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm <= f64::MIN_POSITIVE {
            return None;
        }
        Some(UnitVector3 {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn from_array(v: [f64; 3]) -> Option<Self> {
        Self::new_normalize(v[0], v[1], v[2])
    }

    /// Direction from spherical angles: `inclination` from the view axis and
    /// `azimuth` measured counter-clockwise from `+x`, both in radians.
    pub fn from_angles(inclination: f64, azimuth: f64) -> Self {
        let s = inclination.sin();
        UnitVector3 {
            x: s * azimuth.cos(),
            y: s * azimuth.sin(),
            z: inclination.cos(),
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &UnitVector3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn neg(&self) -> Self {
        UnitVector3 {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Angle to the view axis, in radians.
    pub fn inclination(&self) -> f64 {
        self.z.clamp(-1.0, 1.0).acos()
    }
}

/// A distant light: unit direction plus a positive radiometric scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightSource {
    direction: UnitVector3,
    intensity: f64,
}

impl LightSource {
    pub fn new(direction: UnitVector3, intensity: f64) -> Result<Self> {
        if !(intensity > 0.0 && intensity.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "light intensity must be positive and finite, got {intensity}"
            )));
        }
        Ok(LightSource {
            direction,
            intensity,
        })
    }

    pub fn unit(direction: UnitVector3) -> Self {
        LightSource {
            direction,
            intensity: 1.0,
        }
    }

    pub fn direction(&self) -> UnitVector3 {
        self.direction
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn with_direction(&self, direction: UnitVector3) -> Self {
        LightSource {
            direction,
            intensity: self.intensity,
        }
    }

    pub fn with_intensity(&self, intensity: f64) -> Result<Self> {
        LightSource::new(self.direction, intensity)
    }
}

/// Continuous map-plane position, `0 ≤ u, v ≤ w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCoord {
    pub u: f64,
    pub v: f64,
}

pub fn project_direction(l: &UnitVector3, w: usize) -> Result<MapCoord> {
    if l.z < 0.0 {
        return Err(Error::BehindCamera(l.to_array()));
    }
    let w = w as f64;
    Ok(MapCoord {
        u: w * (l.x + 1.0) / 2.0,
        v: w * (l.y + 1.0) / 2.0,
    })
}

/// Nearest cell of a map coordinate. Rounds half away from zero, then clamps
/// to `[0, w - 1]` so that the rim (`u = w`) stays in bounds.
pub fn map_index(c: &MapCoord, w: usize) -> (usize, usize) {
    let hi = (w - 1) as f64;
    let iu = c.u.round().clamp(0.0, hi) as usize;
    let iv = c.v.round().clamp(0.0, hi) as usize;
    (iu, iv)
}

/// Inverse of [`project_direction`]. Points outside the unit disk are pulled
/// back onto the rim (`z = 0`).
pub fn unproject(c: &MapCoord, w: usize) -> UnitVector3 {
    let w = w as f64;
    let x = 2.0 * c.u / w - 1.0;
    let y = 2.0 * c.v / w - 1.0;
    let r2 = x * x + y * y;
    if r2 > 1.0 {
        let r = r2.sqrt();
        UnitVector3 {
            x: x / r,
            y: y / r,
            z: 0.0,
        }
    } else {
        // Renormalize to absorb rounding in 1 - r2.
        UnitVector3::new_normalize(x, y, (1.0 - r2).max(0.0).sqrt()).unwrap_or(UnitVector3::ZENITH)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> UnitVector3 {
        UnitVector3::new_normalize(x, y, z).unwrap()
    }

    #[test]
    fn project_examples() {
        let c = project_direction(&UnitVector3::ZENITH, 48).unwrap();
        assert_eq!((c.u, c.v), (24.0, 24.0));
        let c = project_direction(&v(1.0, 0.0, 0.0), 48).unwrap();
        assert_eq!((c.u, c.v), (48.0, 24.0));
        let c = project_direction(&v(-0.5, 0.5, 0.5f64.sqrt()), 48).unwrap();
        assert_abs_diff_eq!(c.u, 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.v, 36.0, epsilon = 1e-12);
    }

    #[test]
    fn project_rejects_lower_hemisphere() {
        assert!(matches!(
            project_direction(&v(0.0, 0.3, -0.5), 48),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn map_index_examples() {
        assert_eq!(map_index(&MapCoord { u: 24.0, v: 24.0 }, 48), (24, 24));
        assert_eq!(map_index(&MapCoord { u: 48.0, v: 24.0 }, 48), (47, 24));
        assert_eq!(map_index(&MapCoord { u: 12.4, v: 35.6 }, 48), (12, 36));
        assert_eq!(map_index(&MapCoord { u: 0.5, v: 2.5 }, 48), (1, 3));
    }

    #[test]
    fn every_hemisphere_direction_lands_in_bounds() {
        for w in [8usize, 32, 48] {
            for i in 0..=90 {
                for j in 0..360 {
                    let l = UnitVector3::from_angles((i as f64).to_radians(), (j as f64).to_radians());
                    let (iu, iv) = map_index(&project_direction(&l, w).unwrap(), w);
                    assert!(iu < w && iv < w);
                }
            }
        }
    }

    #[test]
    fn unproject_examples() {
        let n = unproject(&MapCoord { u: 24.0, v: 24.0 }, 48);
        assert_eq!(n.to_array(), [0.0, 0.0, 1.0]);
        let n = unproject(&MapCoord { u: 48.0, v: 24.0 }, 48);
        assert_eq!(n.to_array(), [1.0, 0.0, 0.0]);
        let n = unproject(&MapCoord { u: 48.0, v: 48.0 }, 48);
        assert_abs_diff_eq!(n.x(), 0.5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(n.z(), 0.0);
    }

    // Worst angle between `l` and any unprojected point whose plane
    // coordinates lie within `radius` of those of `l`.
    fn disk_supremum(l: &UnitVector3, radius: f64, w: usize) -> f64 {
        let half = w as f64 / 2.0;
        (0..360)
            .map(|k| {
                let phi = (k as f64).to_radians();
                let c = MapCoord {
                    u: half * (l.x() + radius * phi.cos() + 1.0),
                    v: half * (l.y() + radius * phi.sin() + 1.0),
                };
                unproject(&c, w).dot(l).clamp(-1.0, 1.0).acos()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn quantization_error_is_bounded() {
        let w = 48;
        let radius = 2f64.sqrt() / w as f64;
        for i in 0..=80 {
            for j in 0..720 {
                let l = UnitVector3::from_angles((i as f64).to_radians(), (j as f64 * 0.5).to_radians());
                let (iu, iv) = map_index(&project_direction(&l, w).unwrap(), w);
                let q = unproject(&MapCoord { u: iu as f64, v: iv as f64 }, w);
                let err = q.dot(&l).clamp(-1.0, 1.0).acos();
                // The first-order bound ignores the curvature of the hemisphere
                // and only holds away from the rim.
                if i <= 65 {
                    let linear = (radius / l.z()).min(1.0).asin();
                    assert!(err < linear, "incl {i} az {j}: {err} >= {linear}");
                }
                let sup = disk_supremum(&l, radius, w);
                assert!(err <= sup + 1e-12, "incl {i} az {j}: {err} > {sup}");
            }
        }
    }

    proptest! {
        #[test]
        fn bijection_round_trip(incl in 0.0f64..(std::f64::consts::FRAC_PI_2), az in 0.0f64..std::f64::consts::TAU, w in 1usize..128) {
            let l = UnitVector3::from_angles(incl, az);
            let back = unproject(&project_direction(&l, w).unwrap(), w);
            let d = [back.x() - l.x(), back.y() - l.y(), back.z() - l.z()];
            prop_assert!((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() < 1e-9);
        }

        #[test]
        fn new_normalize_is_unit(x in -10.0f64..10.0, y in -10.0f64..10.0, z in 0.01f64..10.0) {
            let n = UnitVector3::new_normalize(x, y, z).unwrap();
            prop_assert!((n.dot(&n) - 1.0).abs() < 1e-12);
        }
    }
}
