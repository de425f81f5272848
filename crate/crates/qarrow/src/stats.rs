//! Order-stable summation and small statistical helpers shared by the
//! ensemble reductions.

/// Pairwise (cascade) summation. Deterministic for a fixed input order and
/// substantially more accurate than sequential accumulation on long vectors.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (m, (var / n as f64).sqrt())
}

/// First sign change of `ys` scanned in order of ascending `xs`, located by
/// linear interpolation. `None` when the curve does not change sign.
pub fn zero_crossing(xs: &[f64], ys: &[f64]) -> Option<f64> {
    debug_assert_eq!(xs.len(), ys.len());
    for i in 0..xs.len().saturating_sub(1) {
        let (y0, y1) = (ys[i], ys[i + 1]);
        if y0 == 0.0 {
            return Some(xs[i]);
        }
        if y0 * y1 < 0.0 {
            return Some(xs[i] + (0.0 - y0) * (xs[i + 1] - xs[i]) / (y1 - y0));
        }
    }
    if let Some(&last) = ys.last() {
        if last == 0.0 {
            return Some(*xs.last().expect("nonempty"));
        }
    }
    None
}

/// Effective sample size of importance weights, (Σw)²/Σw².
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s = pairwise_sum(weights);
    let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
    let s2 = pairwise_sum(&sq);
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_crossing_interpolates() {
        let xs = [-2.0, -1.0, 0.0];
        let ys = [-1.0, 1.0, 3.0];
        let x = zero_crossing(&xs, &ys).unwrap();
        assert!((x - (-1.5)).abs() < 1e-14);
    }

    #[test]
    fn zero_crossing_absent_when_no_sign_change() {
        assert!(zero_crossing(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn stderr_matches_hand_computation() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (m, se) = mean_stderr(&xs);
        assert!((m - 2.5).abs() < 1e-15);
        // var = (2.25+0.25+0.25+2.25)/3 = 5/3, se = sqrt(5/12)
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ess_of_uniform_weights_is_n() {
        let w = vec![0.5; 100];
        assert!((effective_sample_size(&w) - 100.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn pairwise_matches_naive(xs in proptest::collection::vec(-1e3f64..1e3, 0..500)) {
            let naive: f64 = xs.iter().sum();
            let pair = pairwise_sum(&xs);
            prop_assert!((naive - pair).abs() <= 1e-9 * (1.0 + naive.abs()));
        }
    }
}
