use std::f64::consts::TAU;

use crate::tensor::Matrix;

/// Period in minutes of channel pair `k` out of `pairs`, geometric between
/// `p_min` and `p_max`.
pub fn channel_period(k: usize, pairs: usize, p_min: f64, p_max: f64) -> f64 {
    if pairs <= 1 {
        return p_min;
    }
    p_min * (p_max / p_min).powf(k as f64 / (pairs - 1) as f64)
}

/// Sinusoidal encoding of a minute offset: channel `2k` is
/// `sin(2 pi t / P_k)` and channel `2k + 1` is `cos(2 pi t / P_k)`.
pub fn time_encode(offset_minutes: f64, width: usize, p_min: f64, p_max: f64) -> Vec<f64> {
    assert!(width % 2 == 0, "time encoding width must be even");
    let pairs = width / 2;
    let mut out = Vec::with_capacity(width);
    for k in 0..pairs {
        let phase = TAU * offset_minutes / channel_period(k, pairs, p_min, p_max);
        out.push(phase.sin());
        out.push(phase.cos());
    }
    out
}

/// One encoding row per offset.
pub fn encode_offsets(offsets: &[f64], width: usize, p_min: f64, p_max: f64) -> Matrix {
    let mut data = Vec::with_capacity(offsets.len() * width);
    for &t in offsets {
        data.extend(time_encode(t, width, p_min, p_max));
    }
    Matrix::from_vec(offsets.len(), width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_offset_alternates() {
        let e = time_encode(0.0, 8, 2.0, 100_000.0);
        assert_eq!(e, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn periods_span_the_configured_range() {
        assert_eq!(channel_period(0, 8, 2.0, 100_000.0), 2.0);
        assert!((channel_period(7, 8, 2.0, 100_000.0) - 100_000.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn bounded(t in 0.0f64..1e6) {
            for v in time_encode(t, 16, 2.0, 100_000.0) {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn periodic_per_channel(t in 0.0f64..5000.0, k in 0usize..8) {
            let p = channel_period(k, 8, 2.0, 100_000.0);
            let a = time_encode(t, 16, 2.0, 100_000.0);
            let b = time_encode(t + p, 16, 2.0, 100_000.0);
            prop_assert!((a[2 * k] - b[2 * k]).abs() < 1e-9);
            prop_assert!((a[2 * k + 1] - b[2 * k + 1]).abs() < 1e-9);
        }
    }
}
