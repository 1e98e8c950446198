//! Analytic synthetic scenes: orthographic camera looking down `-z`, distant
//! lights, Lambertian reflectance with an optional Blinn-style specular lobe.
//! Only attached shadows are modeled; there are no cast shadows or
//! inter-reflections.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::normals::NormalMap;
use crate::projection::{Field, LightSource, UnitVector3};

/// A Gaussian height bump, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center_col: f64,
    pub center_row: f64,
    pub amplitude: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    /// Sphere centered in the image, radius in pixels.
    Sphere { radius: f64 },
    Plane,
    BumpField(Vec<Bump>),
}

impl Surface {
    /// Random bump field whose steepest single-bump slope stays below
    /// `tan(55°)`.
    pub fn random_bumps(height: usize, width: usize, count: usize, seed: u64) -> Surface {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = height.min(width) as f64;
        let bumps = (0..count)
            .map(|_| {
                let sigma = side * rng.random_range(0.05..0.14);
                // Peak slope of a Gaussian bump is a / (σ √e).
                let slope = rng.random_range(0.25..1.4);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Bump {
                    center_col: rng.random_range(0.0..width as f64),
                    center_row: rng.random_range(0.0..height as f64),
                    amplitude: sign * slope * sigma * std::f64::consts::E.sqrt(),
                    sigma,
                }
            })
            .collect();
        Surface::BumpField(bumps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Albedo {
    Constant(f64),
    /// Row-major per-pixel albedo.
    Map(Vec<f64>),
}

impl Albedo {
    fn at(&self, index: usize) -> f64 {
        match self {
            Albedo::Constant(a) => *a,
            Albedo::Map(m) => m[index],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Specular {
    None,
    Lobe { strength: f64, exponent: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub surface: Surface,
    pub height: usize,
    pub width: usize,
    pub albedo: Albedo,
    pub specular: Specular,
    pub noise_std: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn sphere(height: usize, width: usize) -> Self {
        let radius = 0.45 * height.min(width) as f64;
        SceneSpec::new(Surface::Sphere { radius }, height, width)
    }

    pub fn new(surface: Surface, height: usize, width: usize) -> Self {
        SceneSpec {
            surface,
            height,
            width,
            albedo: Albedo::Constant(1.0),
            specular: Specular::None,
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn with_specular(mut self, strength: f64, exponent: f64) -> Self {
        self.specular = Specular::Lobe { strength, exponent };
        self
    }

    pub fn with_albedo(mut self, albedo: Albedo) -> Self {
        self.albedo = albedo;
        self
    }

    pub fn with_noise(mut self, noise_std: f64, seed: u64) -> Self {
        self.noise_std = noise_std;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("scene resolution must be positive".into()));
        }
        let in_range = |a: f64| a > 0.0 && a <= 1.0;
        match &self.albedo {
            Albedo::Constant(a) if !in_range(*a) => {
                return Err(Error::InvalidConfig(format!("albedo {a} outside (0, 1]")));
            }
            Albedo::Map(m) if m.len() != self.height * self.width => {
                return Err(Error::ShapeMismatch("albedo map size".into()));
            }
            Albedo::Map(m) if !m.iter().all(|a| in_range(*a)) => {
                return Err(Error::InvalidConfig("albedo map values outside (0, 1]".into()));
            }
            _ => {}
        }
        if let Specular::Lobe { strength, exponent } = self.specular {
            if !(0.0..=1.0).contains(&strength) || !(exponent >= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "specular lobe needs strength in [0, 1] and exponent >= 1, got {strength}, {exponent}"
                )));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig("noise_std must be finite and >= 0".into()));
        }
        if let Surface::Sphere { radius } = self.surface {
            if !(radius > 0.0) {
                return Err(Error::InvalidConfig("sphere radius must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Images, lights and ground truth for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSample {
    pub images: Vec<Field>,
    pub lights: Vec<LightSource>,
    pub normals: NormalMap,
}

impl RenderedSample {
    pub fn new(images: Vec<Field>, lights: Vec<LightSource>, normals: NormalMap) -> Result<Self> {
        if images.len() != lights.len() {
            return Err(Error::CountMismatch {
                what: "images vs lights",
                left: images.len(),
                right: lights.len(),
            });
        }
        for img in &images {
            if img.height() != normals.height() || img.width() != normals.width() || img.channels() != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "image {}x{}x{} vs normal map {}x{}",
                    img.height(),
                    img.width(),
                    img.channels(),
                    normals.height(),
                    normals.width()
                )));
            }
        }
        Ok(RenderedSample {
            images,
            lights,
            normals,
        })
    }

    pub fn height(&self) -> usize {
        self.normals.height()
    }

    pub fn width(&self) -> usize {
        self.normals.width()
    }

    pub fn mask(&self) -> &[bool] {
        self.normals.mask()
    }

    /// Intensities of pixel `index` (row-major) under every light.
    pub fn pixel_observations(&self, index: usize) -> Vec<f64> {
        self.images.iter().map(|img| img.data()[index]).collect()
    }
}

/// Directions uniform by solid angle on the cap of half-angle
/// `max_inclination_deg`, all with unit intensity.
pub fn sample_hemisphere_lights(count: usize, max_inclination_deg: f64, seed: u64) -> Result<Vec<LightSource>> {
    if count == 0 {
        return Err(Error::EmptyInput("light count must be positive"));
    }
    if !(max_inclination_deg > 0.0 && max_inclination_deg <= 90.0) {
        return Err(Error::InvalidConfig(format!(
            "max inclination must be in (0, 90], got {max_inclination_deg}"
        )));
    }
    let z_min = max_inclination_deg.to_radians().cos().max(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let z: f64 = rng.random_range(z_min..=1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).max(0.0).sqrt();
            let d = UnitVector3::new_normalize(r * phi.cos(), r * phi.sin(), z).expect("unit");
            LightSource::unit(d)
        })
        .collect())
}

fn bump_height_and_gradient(bumps: &[Bump], col: f64, row: f64) -> (f64, f64, f64) {
    let (mut h, mut dc, mut dr) = (0.0, 0.0, 0.0);
    for b in bumps {
        let (x, y) = (col - b.center_col, row - b.center_row);
        let g = b.amplitude * (-(x * x + y * y) / (2.0 * b.sigma * b.sigma)).exp();
        h += g;
        dc -= g * x / (b.sigma * b.sigma);
        dr -= g * y / (b.sigma * b.sigma);
    }
    (h, dc, dr)
}

/// Height of a bump field at a fractional pixel position.
pub fn bump_height(bumps: &[Bump], col: f64, row: f64) -> f64 {
    bump_height_and_gradient(bumps, col, row).0
}

/// Analytic `(∂h/∂col, ∂h/∂row)` of a bump field.
pub fn bump_gradient(bumps: &[Bump], col: f64, row: f64) -> (f64, f64) {
    let (_, dc, dr) = bump_height_and_gradient(bumps, col, row);
    (dc, dr)
}

pub fn surface_normals(spec: &SceneSpec) -> NormalMap {
    let (h, w) = (spec.height, spec.width);
    let mut map = NormalMap::empty(h, w);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    for row in 0..h {
        for col in 0..w {
            let n = match &spec.surface {
                Surface::Plane => Some(UnitVector3::ZENITH),
                Surface::Sphere { radius } => {
                    let x = (col as f64 - cx) / radius;
                    let y = (cy - row as f64) / radius;
                    let r2 = x * x + y * y;
                    if r2 < 1.0 {
                        UnitVector3::new_normalize(x, y, (1.0 - r2).sqrt())
                    } else {
                        None
                    }
                }
                Surface::BumpField(bumps) => {
                    let (dc, dr) = bump_gradient(bumps, col as f64, row as f64);
                    // With y pointing up, ∂h/∂y = -∂h/∂row.
                    UnitVector3::new_normalize(-dc, dr, 1.0)
                }
            };
            if let Some(n) = n {
                map.set(row, col, n);
            }
        }
    }
    map
}

/// `I = L · albedo · max(n·l, 0)` under the mask, zero elsewhere.
pub fn render_lambertian(normals: &NormalMap, albedo: &Albedo, light: &LightSource) -> Field {
    let mut img = Field::zeros(normals.height(), normals.width(), 1);
    let l = light.direction().to_array();
    for (i, (n, keep)) in normals.vectors().iter().zip(normals.mask()).enumerate() {
        if *keep {
            let shading = (n[0] * l[0] + n[1] * l[1] + n[2] * l[2]).max(0.0);
            img.data_mut()[i] = light.intensity() * albedo.at(i) * shading;
        }
    }
    img
}

fn half_vector(l: &UnitVector3) -> UnitVector3 {
    UnitVector3::new_normalize(l.x(), l.y(), l.z() + 1.0).unwrap_or(UnitVector3::ZENITH)
}

pub fn render_scene(spec: &SceneSpec, lights: &[LightSource]) -> Result<RenderedSample> {
    spec.validate()?;
    if lights.is_empty() {
        return Err(Error::EmptyInput("scene needs at least one light"));
    }
    let normals = surface_normals(spec);
    let noise = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let images = lights
        .par_iter()
        .enumerate()
        .map(|(j, light)| {
            let mut img = render_lambertian(&normals, &spec.albedo, light);
            if let Specular::Lobe { strength, exponent } = spec.specular {
                let l = light.direction();
                let h = half_vector(&l);
                for (i, (n, keep)) in normals.vectors().iter().zip(normals.mask()).enumerate() {
                    let n_dot_l = n[0] * l.x() + n[1] * l.y() + n[2] * l.z();
                    if *keep && n_dot_l > 0.0 {
                        let n_dot_h = (n[0] * h.x() + n[1] * h.y() + n[2] * h.z()).max(0.0);
                        img.data_mut()[i] += strength * light.intensity() * n_dot_h.powf(exponent);
                    }
                }
            }
            if let Some(dist) = noise {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(j as u64);
                for (v, keep) in img.data_mut().iter_mut().zip(normals.mask()) {
                    if *keep {
                        *v = (*v + dist.sample(&mut rng)).max(0.0);
                    }
                }
            }
            img
        })
        .collect();
    RenderedSample::new(images, lights.to_vec(), normals)
}
