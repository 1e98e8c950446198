use super::UnitVector3;
use crate::error::{Error, Result};

/// Rotates `l` counter-clockwise about the view axis by `angle` radians.
pub fn rotate_direction(l: &UnitVector3, angle: f64) -> UnitVector3 {
    let (x, y) = rotate_xy(l.x(), l.y(), angle);
    UnitVector3::new_normalize(x, y, l.z()).unwrap_or(*l)
}

#[inline]
pub(crate) fn rotate_xy(x: f64, y: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x - s * y, s * x + c * y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    Nearest,
    Bilinear,
    /// Cubic convolution (Keys, a = -0.5); interpolating, third order.
    #[default]
    Bicubic,
}

/// Dense `height × width × channels` array of reals, row-major with channels
/// innermost. Row 0 is the top of the image.
///
/// Spatial rotations use the same frame as directions: `x` to the right, `y`
/// up, angles counter-clockwise, pivot at the array center.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Field {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "field {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Field {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    /// Source position `(col, row)` that lands on `(col, row)` after a
    /// counter-clockwise rotation by `angle`.
    pub fn rotation_source(&self, col: f64, row: f64, angle: f64) -> (f64, f64) {
        let (cx, cy) = self.center();
        let (x, y) = rotate_xy(col - cx, cy - row, -angle);
        (cx + x, cy - y)
    }

    /// Samples all channels at a fractional `(col, row)` position. Returns
    /// `false` and leaves `out` zeroed outside `[0, width-1] × [0, height-1]`.
    pub fn sample(&self, col: f64, row: f64, interp: Interpolation, out: &mut [f64]) -> bool {
        debug_assert_eq!(out.len(), self.channels);
        out.iter_mut().for_each(|o| *o = 0.0);
        const TOL: f64 = 1e-9;
        let max_c = self.width as f64 - 1.0;
        let max_r = self.height as f64 - 1.0;
        if !(col >= -TOL && col <= max_c + TOL && row >= -TOL && row <= max_r + TOL) {
            return false;
        }
        let col = col.clamp(0.0, max_c);
        let row = row.clamp(0.0, max_r);
        match interp {
            Interpolation::Nearest => {
                let c = col.round() as usize;
                let r = row.round() as usize;
                out.copy_from_slice(self.pixel(r, c));
            }
            Interpolation::Bilinear => {
                let c0 = col.floor();
                let r0 = row.floor();
                let (tc, tr) = (col - c0, row - r0);
                let wc = [1.0 - tc, tc];
                let wr = [1.0 - tr, tr];
                self.accumulate(c0 as i64, r0 as i64, &wc, &wr, out);
            }
            Interpolation::Bicubic => {
                let c0 = col.floor();
                let r0 = row.floor();
                let wc = keys_weights(col - c0);
                let wr = keys_weights(row - r0);
                self.accumulate(c0 as i64 - 1, r0 as i64 - 1, &wc, &wr, out);
            }
        }
        true
    }

    /// Weighted sum over a tap grid starting at `(c0, r0)`, clamping taps to
    /// the array edge.
    fn accumulate(&self, c0: i64, r0: i64, wc: &[f64], wr: &[f64], out: &mut [f64]) {
        let max_c = self.width as i64 - 1;
        let max_r = self.height as i64 - 1;
        for (i, &ry) in wr.iter().enumerate() {
            if ry == 0.0 {
                continue;
            }
            let r = (r0 + i as i64).clamp(0, max_r) as usize;
            for (j, &cx) in wc.iter().enumerate() {
                let weight = ry * cx;
                if weight == 0.0 {
                    continue;
                }
                let c = (c0 + j as i64).clamp(0, max_c) as usize;
                for (o, v) in out.iter_mut().zip(self.pixel(r, c)) {
                    *o += weight * v;
                }
            }
        }
    }
}

/// Cubic convolution weights for taps at offsets -1, 0, 1, 2 from the floor
/// position, fractional part `t`.
fn keys_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let near = |x: f64| ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0;
    let far = |x: f64| ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A;
    [far(1.0 + t), near(t), near(1.0 - t), far(2.0 - t)]
}

/// Rotates a field counter-clockwise about its center. Samples whose source
/// falls outside the array are zero.
pub fn rotate_field(field: &Field, angle: f64, interp: Interpolation) -> Field {
    if angle == 0.0 {
        return field.clone();
    }
    let mut out = Field::zeros(field.height, field.width, field.channels);
    let ch = field.channels;
    for row in 0..field.height {
        for col in 0..field.width {
            let (sc, sr) = field.rotation_source(col as f64, row as f64, angle);
            let start = (row * field.width + col) * ch;
            field.sample(sc, sr, interp, &mut out.data[start..start + ch]);
        }
    }
    out
}

/// Rotates a 3-channel field of vectors: the array is rotated spatially and
/// every vector's `(x, y)` part is rotated by the same angle.
pub fn rotate_vector_field(field: &Field, angle: f64, interp: Interpolation) -> Result<Field> {
    if field.channels != 3 {
        return Err(Error::ShapeMismatch(format!(
            "vector field needs 3 channels, got {}",
            field.channels
        )));
    }
    let mut out = rotate_field(field, angle, interp);
    if angle != 0.0 {
        for px in out.data.chunks_exact_mut(3) {
            let (x, y) = rotate_xy(px[0], px[1], angle);
            px[0] = x;
            px[1] = y;
        }
    }
    Ok(out)
}
