//! Estimation and forecast accuracy measures.

use tlvar::{Tensor3, Vector};

use crate::error::{HarnessError, Result};

/// `‖estimate − truth‖_F`.
pub fn rmse_tensor(estimate: &Tensor3, truth: &Tensor3) -> Result<f64> {
    if estimate.dims() != truth.dims() {
        return Err(HarnessError::Config(format!(
            "cannot compare tensors of dims {:?} and {:?}",
            estimate.dims(),
            truth.dims()
        )));
    }
    Ok((estimate - truth).frobenius_norm())
}

/// `sqrt(mean_t ‖e_t‖²)` over forecast origins.
pub fn rmsfe(errors: &[Vector]) -> Option<f64> {
    if errors.is_empty() {
        return None;
    }
    let total: f64 = errors.iter().map(|e| e.norm_squared()).sum();
    Some((total / errors.len() as f64).sqrt())
}

/// Mean absolute error over every (variable, origin) pair.
pub fn mafe(errors: &[Vector]) -> Option<f64> {
    let count: usize = errors.iter().map(|e| e.len()).sum();
    if count == 0 {
        return None;
    }
    let total: f64 = errors.iter().flat_map(|e| e.iter()).map(|x| x.abs()).sum();
    Some(total / count as f64)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than two points or constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx)?, mean(&ry)?);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_cases() {
        let t = Tensor3::from_fn([2, 2, 1], |i, j, _| (i + 2 * j) as f64);
        assert_eq!(rmse_tensor(&t, &t).unwrap(), 0.0);
        let one = Tensor3::new([1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(rmse_tensor(&one, &Tensor3::zeros([1, 1, 1])).unwrap(), 1.0);
        let other = Tensor3::from_fn([2, 2, 1], |i, j, _| (i * j) as f64 - 0.5);
        let mut sum = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                sum += (t.get(i, j, 0) - other.get(i, j, 0)).powi(2);
            }
        }
        assert!((rmse_tensor(&t, &other).unwrap() - sum.sqrt()).abs() < 1e-15);
        assert!(rmse_tensor(&t, &one).is_err());
    }

    #[test]
    fn forecast_metrics_by_hand() {
        let errors = vec![
            Vector::from_vec(vec![1.0, -2.0]),
            Vector::from_vec(vec![0.0, 3.0]),
            Vector::from_vec(vec![-1.0, 1.0]),
        ];
        // Squared norms 5, 9, 2; absolute entries sum to 8 over 6 cells.
        assert!((rmsfe(&errors).unwrap() - (16.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((mafe(&errors).unwrap() - 8.0 / 6.0).abs() < 1e-15);
        assert_eq!(rmsfe(&[]), None);
        assert_eq!(mafe(&[]), None);
    }

    #[test]
    fn spearman_cases() {
        let x = [0.0, 1.0, 2.0, 3.0];
        assert!((spearman(&x, &[1.0, 4.0, 9.0, 16.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[3.0, 2.0, 1.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&x, &[1.0; 4]), None);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }
}
