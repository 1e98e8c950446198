use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::projection::{encode_heatmap, HeatMap, UnitVector3, DEFAULT_SIGMA};

/// Training targets are heat-maps scaled by this factor.
pub const TARGET_SCALE: f64 = 100.0;

/// `TARGET_SCALE · encode_heatmap(n)`, row-major.
pub fn heatmap_target(n: &UnitVector3, w: usize) -> Result<Vec<f64>> {
    Ok(encode_heatmap(n, w, DEFAULT_SIGMA)?
        .into_values()
        .into_iter()
        .map(|v| v * TARGET_SCALE)
        .collect())
}

/// Loss of a single predicted heat-map against the scaled target of `target`.
pub fn mse_heatmap_loss(pred: &HeatMap, target: &UnitVector3) -> Result<f64> {
    let t = heatmap_target(target, pred.size())?;
    let w2 = (pred.size() * pred.size()) as f64;
    Ok(pred.values().iter().zip(&t).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / w2)
}

/// Mean squared error over a batch `[N, w, w]` and its gradient with respect
/// to `pred`. `targets` holds `N` already scaled maps.
pub fn batch_loss<T: Real>(pred: &Tensor<T>, targets: &[Vec<T>]) -> Result<(f64, Tensor<T>)> {
    let n = targets.len();
    if n == 0 || pred.ndim() < 1 || pred.shape()[0] != n {
        return Err(Error::ShapeMismatch(format!(
            "prediction batch {:?} vs {n} targets",
            pred.shape()
        )));
    }
    let per = pred.len() / n;
    if targets.iter().any(|t| t.len() != per) {
        return Err(Error::ShapeMismatch(format!("targets must hold {per} values each")));
    }
    let denom = pred.len() as f64;
    let scale = T::from_f64_lossy(2.0 / denom);
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0;
    let flat = targets.iter().flat_map(|t| t.iter());
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(flat) {
        let d = *p - *t;
        sum += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    Ok((sum / denom, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let n = UnitVector3::from_angles(0.4, 1.0);
        let t = heatmap_target(&n, 48).unwrap();
        let pred = HeatMap::new(48, t.clone()).unwrap();
        assert_eq!(mse_heatmap_loss(&pred, &n).unwrap(), 0.0);
        let batch = Tensor::from_vec(&[1, 48, 48], t.clone()).unwrap();
        let (l, g) = batch_loss(&batch, &[t]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_prediction_matches_summed_target_energy() {
        let n = UnitVector3::ZENITH;
        let m = encode_heatmap(&n, 48, 2.0).unwrap();
        let energy: f64 = m.values().iter().map(|v| v * v).sum();
        let expected = 100.0 * 100.0 / (48.0 * 48.0) * energy;
        let got = mse_heatmap_loss(&HeatMap::zeros(48), &n).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn symmetric_in_prediction_and_target() {
        let a: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..16).map(|i| (i as f64 * 0.11).cos()).collect();
        let ta = Tensor::from_vec(&[1, 4, 4], a.clone()).unwrap();
        let tb = Tensor::from_vec(&[1, 4, 4], b.clone()).unwrap();
        let (l1, _) = batch_loss(&ta, &[b]).unwrap();
        let (l2, _) = batch_loss(&tb, &[a]).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
    }

    #[test]
    fn batch_mismatch_is_rejected() {
        let p = Tensor::<f64>::zeros(&[2, 4, 4]);
        assert!(batch_loss(&p, &[vec![0.0; 16]]).is_err());
        assert!(batch_loss(&p, &[vec![0.0; 16], vec![0.0; 15]]).is_err());
    }
}
