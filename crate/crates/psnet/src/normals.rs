use crate::error::{Error, Result};
use crate::projection::{rotate_vector_field, Field, Interpolation, UnitVector3};

/// Per-pixel unit normals with a validity mask. Invalid pixels store the zero
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    height: usize,
    width: usize,
    normals: Vec<[f64; 3]>,
    mask: Vec<bool>,
}

impl NormalMap {
    pub fn empty(height: usize, width: usize) -> Self {
        NormalMap {
            height,
            width,
            normals: vec![[0.0; 3]; height * width],
            mask: vec![false; height * width],
        }
    }

    /// Builds a map from raw vectors; zero-length vectors become masked out,
    /// everything else is normalized.
    pub fn from_vectors(height: usize, width: usize, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if vectors.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "normal map {height}x{width} needs {} vectors, got {}",
                height * width,
                vectors.len()
            )));
        }
        let mut map = NormalMap::empty(height, width);
        for (i, v) in vectors.into_iter().enumerate() {
            if let Some(n) = UnitVector3::from_array(v) {
                map.normals[i] = n.to_array();
                map.mask[i] = true;
            }
        }
        Ok(map)
    }

    /// Builds a map from stored vectors without renormalizing them: zero
    /// vectors are masked out, all others must be unit length within `1e-6`.
    pub fn from_stored(height: usize, width: usize, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if vectors.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "normal map {height}x{width} needs {} vectors, got {}",
                height * width,
                vectors.len()
            )));
        }
        let mask = vectors
            .iter()
            .map(|v| {
                if *v == [0.0; 3] {
                    return Ok(false);
                }
                let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if (len - 1.0).abs() <= 1e-6 {
                    Ok(true)
                } else {
                    Err(Error::InvalidValue(format!("stored normal {v:?} is not unit length")))
                }
            })
            .collect::<Result<Vec<bool>>>()?;
        Ok(NormalMap {
            height,
            width,
            normals: vectors,
            mask,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Raw vector storage, zero where masked out.
    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.normals
    }

    pub fn get(&self, row: usize, col: usize) -> Option<UnitVector3> {
        let i = row * self.width + col;
        if self.mask[i] {
            Some(unit(self.normals[i]))
        } else {
            None
        }
    }

    pub fn set(&mut self, row: usize, col: usize, n: UnitVector3) {
        let i = row * self.width + col;
        self.normals[i] = n.to_array();
        self.mask[i] = true;
    }

    pub fn invalidate(&mut self, row: usize, col: usize) {
        let i = row * self.width + col;
        self.normals[i] = [0.0; 3];
        self.mask[i] = false;
    }

    /// Keeps only pixels valid in both maps.
    pub fn restrict_to(&mut self, mask: &[bool]) {
        for (i, keep) in mask.iter().enumerate() {
            if !keep {
                self.normals[i] = [0.0; 3];
                self.mask[i] = false;
            }
        }
    }

    pub fn to_field(&self) -> Field {
        let data = self.normals.iter().flat_map(|n| n.iter().copied()).collect();
        Field::from_vec(self.height, self.width, 3, data).expect("consistent shape")
    }

    /// Spatial rotation of the map together with its vectors. A rotated pixel
    /// stays valid when the nearest source pixel was valid; its vector is the
    /// renormalized interpolated vector.
    pub fn rotated(&self, angle: f64, interp: Interpolation) -> NormalMap {
        if angle == 0.0 {
            return self.clone();
        }
        let rotated = rotate_vector_field(&self.to_field(), angle, interp).expect("3 channels");
        let mask = rotate_mask(&self.mask, self.height, self.width, angle);
        let mut out = NormalMap::empty(self.height, self.width);
        for (i, keep) in mask.into_iter().enumerate() {
            if !keep {
                continue;
            }
            let px = &rotated.data()[3 * i..3 * i + 3];
            if let Some(n) = UnitVector3::new_normalize(px[0], px[1], px[2]) {
                out.normals[i] = n.to_array();
                out.mask[i] = true;
            }
        }
        out
    }
}

pub(crate) fn unit(v: [f64; 3]) -> UnitVector3 {
    UnitVector3::from_array(v).expect("masked normals are unit length")
}

/// Nearest-neighbor rotation of a boolean mask.
pub fn rotate_mask(mask: &[bool], height: usize, width: usize, angle: f64) -> Vec<bool> {
    let data = mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
    let field = Field::from_vec(height, width, 1, data).expect("mask shape");
    crate::projection::rotate_field(&field, angle, Interpolation::Nearest)
        .data()
        .iter()
        .map(|v| *v > 0.5)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_vectors_are_masked() {
        let m = NormalMap::from_vectors(1, 3, vec![[0.0, 0.0, 2.0], [0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(m.mask(), &[true, false, true]);
        assert_eq!(m.get(0, 0).unwrap().to_array(), [0.0, 0.0, 1.0]);
        assert!(m.get(0, 1).is_none());
    }

    #[test]
    fn rotation_keeps_unit_length() {
        let vecs = (0..49).map(|i| [((i % 7) as f64 - 3.0) * 0.1, ((i / 7) as f64 - 3.0) * 0.1, 1.0]).collect();
        let m = NormalMap::from_vectors(7, 7, vecs).unwrap();
        let r = m.rotated(0.7, Interpolation::Bicubic);
        for (n, keep) in r.vectors().iter().zip(r.mask()) {
            if *keep {
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                assert!((len - 1.0).abs() < 1e-12);
            }
        }
        assert!(r.is_valid(3, 3));
    }
}
