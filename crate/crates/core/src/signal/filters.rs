//! Smoothing, scaling and resampling of single channels.

use super::{Channel, SignalError};

/// Savitzky-Golay smoothing coefficients for the centre of a window of
/// `window_length` samples fitted with a polynomial of degree `poly_order`.
pub fn savgol_coefficients(window_length: usize, poly_order: usize) -> Result<Vec<f64>, SignalError> {
    if window_length % 2 == 0 || window_length == 0 {
        return Err(SignalError::InvalidFilter(format!(
            "window length must be odd and positive, got {window_length}"
        )));
    }
    if poly_order >= window_length {
        return Err(SignalError::InvalidFilter(format!(
            "polynomial order {poly_order} must be below window length {window_length}"
        )));
    }
    let half = (window_length / 2) as i64;
    let cols = poly_order + 1;
    // Normal equations (A^T A) c = e_0 with A[j][p] = j^p; the smoothing
    // weights are then A c.
    let mut gram = vec![0.0; cols * cols];
    for j in -half..=half {
        let x = j as f64;
        for p in 0..cols {
            for q in 0..cols {
                gram[p * cols + q] += x.powi((p + q) as i32);
            }
        }
    }
    let mut rhs = vec![0.0; cols];
    rhs[0] = 1.0;
    let c = solve(gram, rhs, cols)?;
    Ok((-half..=half)
        .map(|j| {
            let x = j as f64;
            (0..cols).map(|p| c[p] * x.powi(p as i32)).sum()
        })
        .collect())
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>, SignalError> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(SignalError::InvalidFilter("singular fit matrix".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Ok(x)
}

/// Savitzky-Golay smoothing with point-reflected edges.
///
/// Samples before the start are `2 x[0] - x[j]` and past the end
/// `2 x[n-1] - x[n-1-j]`, which keeps any polynomial of degree <= 1 exact at
/// the boundary.
pub fn savitzky_golay(samples: &[f64], window_length: usize, poly_order: usize) -> Result<Vec<f64>, SignalError> {
    let coeffs = savgol_coefficients(window_length, poly_order)?;
    let n = samples.len();
    if n < window_length {
        return Err(SignalError::InvalidFilter(format!(
            "sequence of {n} samples is shorter than window length {window_length}"
        )));
    }
    let half = window_length / 2;
    let at = |i: i64| -> f64 {
        if i < 0 {
            2.0 * samples[0] - samples[(-i) as usize]
        } else if i as usize >= n {
            let over = i as usize - (n - 1);
            2.0 * samples[n - 1] - samples[n - 1 - over]
        } else {
            samples[i as usize]
        }
    };
    Ok((0..n as i64)
        .map(|i| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * at(i + k as i64 - half as i64))
                .sum()
        })
        .collect())
}

/// Rescale to `[0, 1]`. A constant input maps to all zeros.
pub fn min_max_scale(samples: &[f64]) -> Vec<f64> {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; samples.len()];
    }
    samples.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
}

/// Linear interpolation up to `target_hz`; the tail after the last original
/// sample holds its value so that `n` samples become `n * ratio`.
pub fn upsample(channel: &Channel, target_hz: f64) -> Result<Channel, SignalError> {
    let ratio = target_hz / channel.sample_rate_hz;
    let r = ratio.round();
    if r < 1.0 || (ratio - r).abs() > 1e-9 {
        return Err(SignalError::NonIntegerRatio {
            from: channel.sample_rate_hz,
            to: target_hz,
        });
    }
    let r = r as usize;
    let src = &channel.samples;
    let mut out = Vec::with_capacity(src.len() * r);
    for w in src.windows(2) {
        let (a, b) = (w[0], w[1]);
        for k in 0..r {
            // the anchor itself is copied, not recomputed
            out.push(if k == 0 { a } else { a + (b - a) * (k as f64 / r as f64) });
        }
    }
    if let Some(&last) = src.last() {
        out.extend(std::iter::repeat_n(last, r));
    }
    Ok(Channel {
        kind: channel.kind,
        sample_rate_hz: target_hz,
        samples: out,
        start_time: channel.start_time,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::signal::ChannelKind;

    #[test]
    fn constant_sequence_is_unchanged() {
        let out = savitzky_golay(&[5.0; 5], 5, 1).unwrap();
        assert!(out.iter().all(|v| (v - 5.0).abs() < 1e-12));
        let out = savitzky_golay(&[5.0; 9], 3, 2).unwrap();
        assert!(out.iter().all(|v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn ramp_is_unchanged_at_order_one() {
        let ramp: Vec<f64> = (0..7).map(f64::from).collect();
        let out = savitzky_golay(&ramp, 5, 1).unwrap();
        for (a, b) in ramp.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn order_one_is_a_moving_average() {
        let out = savitzky_golay(&[0.0, 0.0, 10.0, 0.0, 0.0], 5, 1).unwrap();
        assert!((out[2] - 2.0).abs() < 1e-12);
        let c = savgol_coefficients(11, 1).unwrap();
        assert!(c.iter().all(|v| (v - 1.0 / 11.0).abs() < 1e-14));
    }

    #[test]
    fn quadratic_coefficients_match_tables() {
        // classic 5-point quadratic smoother: (-3, 12, 17, 12, -3) / 35
        let c = savgol_coefficients(5, 2).unwrap();
        let expected = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (a, b) in c.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn bad_filter_parameters_rejected() {
        assert!(savitzky_golay(&[0.0; 10], 4, 1).is_err());
        assert!(savitzky_golay(&[0.0; 10], 3, 3).is_err());
        assert!(savitzky_golay(&[0.0; 4], 5, 1).is_err());
    }

    #[test]
    fn min_max_examples() {
        assert_eq!(min_max_scale(&[0.0, 5.0, 10.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(min_max_scale(&[7.0, 7.0, 7.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(min_max_scale(&[-2.0, 0.0, 2.0]), vec![0.0, 0.5, 1.0]);
    }

    fn ch(samples: Vec<f64>, rate: f64) -> Channel {
        Channel {
            kind: ChannelKind::Eda,
            sample_rate_hz: rate,
            samples,
            start_time: 0.0,
        }
    }

    #[test]
    fn upsample_grid_and_first_step() {
        let up = upsample(&ch(vec![0.0, 1.0], 4.0), 64.0).unwrap();
        assert_eq!(up.samples.len(), 32);
        assert_eq!(up.samples[1], 1.0 / 16.0);
        assert_eq!(up.samples[16], 1.0);
        assert!(up.samples[16..].iter().all(|&v| v == 1.0));
        let up = upsample(&ch(vec![3.0; 4], 4.0), 64.0).unwrap();
        assert_eq!(up.samples, vec![3.0; 64]);
        assert_eq!(up.sample_rate_hz, 64.0);
    }

    #[test]
    fn upsample_rejects_fractional_ratio() {
        assert!(matches!(
            upsample(&ch(vec![0.0; 3], 4.0), 6.0),
            Err(SignalError::NonIntegerRatio { .. })
        ));
    }

    proptest! {
        #[test]
        fn scaling_is_bounded_and_idempotent(xs in prop::collection::vec(-1e6f64..1e6, 1..200)) {
            let once = min_max_scale(&xs);
            prop_assert!(once.iter().all(|v| (0.0..=1.0).contains(v)));
            let twice = min_max_scale(&once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn order_one_smoothing_preserves_lines(
            slope in -100.0f64..100.0,
            offset in -100.0f64..100.0,
            n in 11usize..120,
            half in 1usize..5,
        ) {
            let xs: Vec<f64> = (0..n).map(|i| offset + slope * i as f64).collect();
            let out = savitzky_golay(&xs, 2 * half + 1, 1).unwrap();
            for (a, b) in xs.iter().zip(&out) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn upsampling_keeps_anchors(xs in prop::collection::vec(-50.0f64..50.0, 1..40)) {
            let up = upsample(&ch(xs.clone(), 4.0), 64.0).unwrap();
            prop_assert_eq!(up.samples.len(), 16 * xs.len());
            for (i, x) in xs.iter().enumerate() {
                prop_assert_eq!(up.samples[16 * i], *x);
            }
        }
    }
}
