use super::{map_index, project_direction, LightSource};
use crate::error::{Error, Result};

/// Per-pixel observation map: intensities normalized by light intensity and
/// binned by projected light direction. Cells hit by several lights hold the
/// mean of their normalized intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMap {
    size: usize,
    values: Vec<f64>,
    hit_count: Vec<u32>,
}

impl ObservationMap {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn hit_count(&self) -> &[u32] {
        &self.hit_count
    }

    /// Value at column `iu`, row `iv`.
    pub fn get(&self, iu: usize, iv: usize) -> f64 {
        self.values[iv * self.size + iu]
    }

    pub fn hits(&self, iu: usize, iv: usize) -> u32 {
        self.hit_count[iv * self.size + iu]
    }
}

/// Precomputed cell assignment for a fixed light set. Building many
/// observation maps under the same lights (every pixel of an image) only has
/// to project each light once.
#[derive(Debug, Clone)]
pub struct LightBins {
    size: usize,
    cells: Vec<usize>,
    inv_intensity: Vec<f64>,
    hit_count: Vec<u32>,
}

impl LightBins {
    pub fn new(lights: &[LightSource], w: usize) -> Result<Self> {
        if lights.is_empty() {
            return Err(Error::EmptyInput("no lights"));
        }
        if w == 0 {
            return Err(Error::InvalidConfig("map size must be positive".into()));
        }
        let mut hit_count = vec![0u32; w * w];
        let mut cells = Vec::with_capacity(lights.len());
        for light in lights {
            let (iu, iv) = map_index(&project_direction(&light.direction(), w)?, w);
            let cell = iv * w + iu;
            hit_count[cell] += 1;
            cells.push(cell);
        }
        let inv_intensity = lights.iter().map(|l| 1.0 / l.intensity()).collect();
        Ok(LightBins {
            size: w,
            cells,
            inv_intensity,
            hit_count,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn hit_count(&self) -> &[u32] {
        &self.hit_count
    }

    /// Cell index (`iv * w + iu`) of light `j`.
    pub fn cell(&self, j: usize) -> usize {
        self.cells[j]
    }

    /// Writes the observation map of one pixel into `out` (length `w²`).
    /// `intensity(j)` yields the observation under light `j`. Inputs are
    /// assumed validated.
    pub fn fill<F>(&self, mut intensity: F, out: &mut [f64])
    where
        F: FnMut(usize) -> f64,
    {
        debug_assert_eq!(out.len(), self.size * self.size);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, (&cell, &inv)) in self.cells.iter().zip(&self.inv_intensity).enumerate() {
            out[cell] += intensity(j) * inv;
        }
        for (o, &h) in out.iter_mut().zip(&self.hit_count) {
            if h > 1 {
                *o /= h as f64;
            }
        }
    }
}

pub fn build_observation_map(
    observations: &[f64],
    lights: &[LightSource],
    w: usize,
) -> Result<ObservationMap> {
    if observations.is_empty() || lights.is_empty() {
        return Err(Error::EmptyInput("observation map needs at least one observation"));
    }
    if observations.len() != lights.len() {
        return Err(Error::CountMismatch {
            what: "observations vs lights",
            left: observations.len(),
            right: lights.len(),
        });
    }
    if let Some(bad) = observations.iter().find(|o| !(**o >= 0.0 && o.is_finite())) {
        return Err(Error::InvalidValue(format!(
            "observations must be finite and non-negative, got {bad}"
        )));
    }
    let bins = LightBins::new(lights, w)?;
    let mut values = vec![0.0; w * w];
    bins.fill(|j| observations[j], &mut values);
    Ok(ObservationMap {
        size: w,
        values,
        hit_count: bins.hit_count,
    })
}
