use super::{map_index, project_direction, unproject, MapCoord, UnitVector3, DEFAULT_SIGMA};
use crate::error::{Error, Result};

/// `w × w` heat-map, row-major with `v` as the row.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    size: usize,
    values: Vec<f64>,
}

impl HeatMap {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        if size == 0 || values.len() != size * size {
            return Err(Error::ShapeMismatch(format!(
                "heat-map of size {size} needs {} values, got {}",
                size * size,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("heat-map values must be finite".into()));
        }
        Ok(HeatMap { size, values })
    }

    pub fn zeros(size: usize) -> Self {
        HeatMap {
            size,
            values: vec![0.0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, iu: usize, iv: usize) -> f64 {
        self.values[iv * self.size + iu]
    }

    /// Cell `(iu, iv)` of the maximum value (first one in row-major order on
    /// ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.size, best / self.size)
    }
}

/// Gaussian target for normal `n`, sampled at integer grid points and scaled
/// by `1 / (2πσ)`.
pub fn encode_heatmap(n: &UnitVector3, w: usize, sigma: f64) -> Result<HeatMap> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidValue(format!("sigma must be positive, got {sigma}")));
    }
    let c = project_direction(n, w)?;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma);
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    // Separable: exp(-(dx² + dy²)/2σ²) = gx · gy.
    let gx: Vec<f64> = (0..w)
        .map(|x| (-(x as f64 - c.u).powi(2) * inv_two_var).exp())
        .collect();
    let gy: Vec<f64> = (0..w)
        .map(|y| (-(y as f64 - c.v).powi(2) * inv_two_var).exp())
        .collect();
    let mut values = Vec::with_capacity(w * w);
    for y in &gy {
        for x in &gx {
            values.push(norm * x * y);
        }
    }
    Ok(HeatMap { size: w, values })
}

/// Sub-pixel refinement applied around the heat-map maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubPixel {
    /// Plain intensity-weighted centroid of the 5×5 neighborhood, with the
    /// neighborhood mirrored at map borders.
    Centroid,
    /// Per-axis centroid of an in-bounds 5×5 window, mapped back through the
    /// centroid response of a Gaussian of the given width. Exact for
    /// noise-free Gaussian maps, including at the borders.
    GaussianMoment { sigma: f64 },
}

impl Default for SubPixel {
    fn default() -> Self {
        SubPixel::GaussianMoment {
            sigma: DEFAULT_SIGMA,
        }
    }
}

const WINDOW: usize = 5;
const HALF: i64 = (WINDOW / 2) as i64;

pub fn decode_heatmap(map: &HeatMap) -> Result<UnitVector3> {
    decode_heatmap_with(map, SubPixel::default())
}

pub fn decode_heatmap_with(map: &HeatMap, mode: SubPixel) -> Result<UnitVector3> {
    let c = locate_peak(map, mode)?;
    Ok(unproject(&c, map.size))
}

/// Sub-pixel location of the heat-map peak in map coordinates, clamped to
/// `[0, w]`.
pub fn locate_peak(map: &HeatMap, mode: SubPixel) -> Result<MapCoord> {
    let w = map.size;
    let (iu, iv) = map.argmax();
    if !(map.get(iu, iv) > 0.0) {
        return Err(Error::NoPeak);
    }
    let (u, v) = match mode {
        SubPixel::Centroid => mirrored_centroid(map, iu, iv),
        SubPixel::GaussianMoment { sigma } => {
            if !(sigma > 0.0) {
                return Err(Error::InvalidValue(format!("sigma must be positive, got {sigma}")));
            }
            moment_matched(map, iu, iv, sigma)
        }
    };
    let hi = w as f64;
    Ok(MapCoord {
        u: u.clamp(0.0, hi),
        v: v.clamp(0.0, hi),
    })
}

fn mirror(i: i64, w: usize) -> usize {
    let last = w as i64 - 1;
    if last == 0 {
        return 0;
    }
    let mut i = i;
    // Repeat in case the window is wider than the map.
    loop {
        if i < 0 {
            i = -i;
        } else if i > last {
            i = 2 * last - i;
        } else {
            return i as usize;
        }
    }
}

fn mirrored_centroid(map: &HeatMap, iu: usize, iv: usize) -> (f64, f64) {
    let w = map.size;
    let (mut mass, mut su, mut sv) = (0.0, 0.0, 0.0);
    for dv in -HALF..=HALF {
        for du in -HALF..=HALF {
            let u = mirror(iu as i64 + du, w);
            let v = mirror(iv as i64 + dv, w);
            let m = map.get(u, v).max(0.0);
            mass += m;
            su += m * (iu as i64 + du) as f64;
            sv += m * (iv as i64 + dv) as f64;
        }
    }
    (su / mass, sv / mass)
}

fn window_start(center: usize, w: usize) -> usize {
    let span = WINDOW.min(w);
    center.saturating_sub(WINDOW / 2).min(w - span)
}

fn moment_matched(map: &HeatMap, iu: usize, iv: usize, sigma: f64) -> (f64, f64) {
    let w = map.size;
    let span = WINDOW.min(w);
    let u0 = window_start(iu, w);
    let v0 = window_start(iv, w);
    let mut col_mass = [0.0; WINDOW];
    let mut row_mass = [0.0; WINDOW];
    for (r, rm) in row_mass.iter_mut().enumerate().take(span) {
        for (c, cm) in col_mass.iter_mut().enumerate().take(span) {
            let m = map.get(u0 + c, v0 + r).max(0.0);
            *cm += m;
            *rm += m;
        }
    }
    let u = match_gaussian_centroid(&col_mass[..span], u0, sigma);
    let v = match_gaussian_centroid(&row_mass[..span], v0, sigma);
    (u, v)
}

/// Finds the Gaussian center whose centroid over cells `start..start+len`
/// equals the observed centroid of `mass`. The Gaussian centroid is strictly
/// increasing in the center, so bisection converges to the unique root.
fn match_gaussian_centroid(mass: &[f64], start: usize, sigma: f64) -> f64 {
    let total: f64 = mass.iter().sum();
    let observed = mass
        .iter()
        .enumerate()
        .map(|(k, m)| m * (start + k) as f64)
        .sum::<f64>()
        / total;
    if mass.len() < 2 {
        return observed;
    }
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let model = |c: f64| {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..mass.len() {
            let x = (start + k) as f64;
            let p = (-(x - c).powi(2) * inv_two_var).exp();
            num += x * p;
            den += p;
        }
        num / den
    };
    let first = start as f64;
    let last = (start + mass.len() - 1) as f64;
    if observed <= first {
        return f64::NEG_INFINITY;
    }
    if observed >= last {
        return f64::INFINITY;
    }
    // A symmetric window is matched by its own midpoint.
    if observed == 0.5 * (first + last) {
        return observed;
    }
    let spread = 8.0 * sigma + mass.len() as f64;
    let (mut lo, mut hi) = (first - spread, last + spread);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = model(mid);
        if !m.is_finite() {
            break;
        }
        if m < observed {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Cell of the map maximum that [`encode_heatmap`] produces for `n`.
pub fn expected_peak_cell(n: &UnitVector3, w: usize) -> Result<(usize, usize)> {
    Ok(map_index(&project_direction(n, w)?, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn angle_deg(a: &UnitVector3, b: &UnitVector3) -> f64 {
        a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn encode_peak_and_falloff() {
        let m = encode_heatmap(&UnitVector3::ZENITH, 48, 2.0).unwrap();
        let peak = 1.0 / (4.0 * PI);
        assert!((m.get(24, 24) - peak).abs() < 1e-15);
        assert!((m.get(25, 24) - peak * (-1.0f64 / 8.0).exp()).abs() < 1e-15);
        assert_eq!(m.argmax(), (24, 24));
    }

    #[test]
    fn encode_mass_is_sigma() {
        // Brute-force summation oracle: 2πσ² · 1/(2πσ) = σ.
        for sigma in [1.5, 2.0, 3.0] {
            let m = encode_heatmap(&UnitVector3::ZENITH, 48, sigma).unwrap();
            let mut total = 0.0;
            for y in 0..48 {
                for x in 0..48 {
                    let d2 = (x as f64 - 24.0).powi(2) + (y as f64 - 24.0).powi(2);
                    total += (-d2 / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma);
                }
            }
            let sum: f64 = m.values().iter().sum();
            assert!((sum - total).abs() < 1e-12);
            assert!((sum - sigma).abs() < 1e-6, "sigma {sigma}: {sum}");
        }
    }

    #[test]
    fn encode_rejects_lower_hemisphere() {
        let n = UnitVector3::new_normalize(0.0, 0.0, -1.0).unwrap();
        assert!(encode_heatmap(&n, 48, 2.0).is_err());
    }

    #[test]
    fn single_cell_decodes_to_its_center() {
        let mut values = vec![0.0; 48 * 48];
        values[24 * 48 + 24] = 1.0;
        let m = HeatMap::new(48, values).unwrap();
        for mode in [SubPixel::Centroid, SubPixel::default()] {
            let n = decode_heatmap_with(&m, mode).unwrap();
            assert_eq!(n.to_array(), [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn decode_rejects_flat_maps() {
        assert!(matches!(decode_heatmap(&HeatMap::zeros(48)), Err(Error::NoPeak)));
        let m = HeatMap::new(4, vec![-1.0; 16]).unwrap();
        assert!(matches!(decode_heatmap(&m), Err(Error::NoPeak)));
    }

    #[test]
    fn negative_values_do_not_shift_the_peak() {
        let n = UnitVector3::from_angles(0.3, 1.0);
        let mut m = encode_heatmap(&n, 48, 2.0).unwrap();
        let (iu, iv) = m.argmax();
        // Negative lobe on one side of the window.
        m.values[iv * 48 + iu - 2] = -5.0;
        let clean = encode_heatmap(&n, 48, 2.0).unwrap();
        let mut clamped = clean.clone();
        clamped.values[iv * 48 + iu - 2] = 0.0;
        let a = decode_heatmap(&m).unwrap();
        let b = decode_heatmap(&clamped).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn round_trip_within_half_degree_up_to_80() {
        for i in 0..=80 {
            for j in 0..72 {
                let n = UnitVector3::from_angles((i as f64).to_radians(), (j as f64 * 5.0 + 0.37).to_radians());
                let m = encode_heatmap(&n, 48, 2.0).unwrap();
                let d = decode_heatmap(&m).unwrap();
                assert!(angle_deg(&n, &d) < 0.5, "incl {i} az {j}");
            }
        }
    }

    #[test]
    fn peak_location_matches_map_index() {
        for i in 0..=85 {
            for j in 0..90 {
                let n = UnitVector3::from_angles((i as f64).to_radians(), (j as f64 * 4.0 + 0.11).to_radians());
                let m = encode_heatmap(&n, 48, 2.0).unwrap();
                assert_eq!(m.argmax(), expected_peak_cell(&n, 48).unwrap());
            }
        }
    }

    #[test]
    fn decoding_is_scale_invariant() {
        let n = UnitVector3::from_angles(0.5, 2.0);
        let m = encode_heatmap(&n, 48, 2.0).unwrap();
        let scaled = HeatMap::new(48, m.values().iter().map(|v| v * 100.0).collect()).unwrap();
        let a = decode_heatmap(&m).unwrap();
        let b = decode_heatmap(&scaled).unwrap();
        assert!(angle_deg(&a, &b) < 1e-9);
    }

    #[test]
    fn plain_centroid_is_coarser_than_moment_matching() {
        let (mut plain, mut refined) = (0.0, 0.0);
        for j in 0..100 {
            let n = UnitVector3::from_angles(0.4, j as f64 * 0.0628 + 0.01);
            let m = encode_heatmap(&n, 48, 2.0).unwrap();
            plain += angle_deg(&n, &decode_heatmap_with(&m, SubPixel::Centroid).unwrap());
            refined += angle_deg(&n, &decode_heatmap(&m).unwrap());
        }
        assert!(refined < plain);
    }
}
