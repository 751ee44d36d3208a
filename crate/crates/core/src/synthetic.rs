//! Labelled multichannel sessions with tunable class separation.
//!
//! EDA and TEMP are produced at 4 Hz and BVP at 64 Hz so generated data goes
//! through the same smoothing and upsampling path as device exports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::signal::{Channel, ChannelKind, LabelInterval, SeedingMode, SignalSession};

pub const EDA_RATE_HZ: f64 = 4.0;
pub const BVP_RATE_HZ: f64 = 64.0;
pub const TEMP_RATE_HZ: f64 = 4.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SyntheticError {
    #[error("regime `{0}` has a non-positive duration")]
    ZeroDuration(String),
    #[error("regime `{label}`: {detail}")]
    InvalidSpec { label: String, detail: String },
    #[error("no regimes")]
    Empty,
}

/// One labelled stretch of signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub label: String,
    pub duration_s: f64,
    pub eda_level: f64,
    /// Expected phasic responses per second.
    pub eda_bump_rate: f64,
    pub eda_bump_height: f64,
    /// Decay time constant of a phasic response, seconds.
    pub eda_bump_decay_s: f64,
    pub bvp_level: f64,
    pub bvp_freq_hz: f64,
    pub bvp_amplitude: f64,
    pub temp_level: f64,
    /// Degrees per second, restarting from `temp_level` at the regime start.
    pub temp_slope: f64,
}

impl RegimeSpec {
    /// A low-arousal regime.
    pub fn calm(label: &str, duration_s: f64) -> Self {
        Self {
            label: label.to_string(),
            duration_s,
            eda_level: 2.0,
            eda_bump_rate: 0.05,
            eda_bump_height: 0.3,
            eda_bump_decay_s: 3.0,
            bvp_level: 0.0,
            bvp_freq_hz: 1.1,
            bvp_amplitude: 1.0,
            temp_level: 33.5,
            temp_slope: 0.002,
        }
    }

    /// A high-arousal regime.
    pub fn aroused(label: &str, duration_s: f64) -> Self {
        Self {
            label: label.to_string(),
            duration_s,
            eda_level: 5.0,
            eda_bump_rate: 0.3,
            eda_bump_height: 1.0,
            eda_bump_decay_s: 2.0,
            bvp_level: 0.5,
            bvp_freq_hz: 1.8,
            bvp_amplitude: 0.6,
            temp_level: 32.0,
            temp_slope: -0.003,
        }
    }

    fn validate(&self) -> Result<(), SyntheticError> {
        if !(self.duration_s > 0.0) {
            return Err(SyntheticError::ZeroDuration(self.label.clone()));
        }
        let bad = |detail: &str| {
            Err(SyntheticError::InvalidSpec {
                label: self.label.clone(),
                detail: detail.to_string(),
            })
        };
        if self.eda_bump_rate < 0.0 || !(self.eda_bump_decay_s > 0.0) {
            return bad("bump rate must be non-negative and decay positive");
        }
        if self.bvp_freq_hz < 0.0 {
            return bad("negative oscillation frequency");
        }
        Ok(())
    }
}

/// Alternating calm / aroused regimes, `blocks` of each.
pub fn two_class_specs(blocks: usize, block_s: f64) -> Vec<RegimeSpec> {
    (0..2 * blocks)
        .map(|i| {
            if i % 2 == 0 {
                RegimeSpec::calm("calm", block_s)
            } else {
                RegimeSpec::aroused("aroused", block_s)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOptions {
    pub subject_id: String,
    pub seeding_mode: SeedingMode,
    /// Standard deviation of additive white noise on every channel.
    pub noise_sd: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            subject_id: "synthetic".to_string(),
            seeding_mode: SeedingMode::Contextual,
            noise_sd: 0.05,
        }
    }
}

/// Regime index of every sample at `rate` Hz, with its time inside the regime.
fn sample_regimes(bounds: &[(f64, f64)], rate: f64) -> Vec<(usize, f64)> {
    let end = bounds.last().map_or(0.0, |b| b.1);
    let n = (end * rate - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(n);
    let mut r = 0;
    for i in 0..n {
        let t = i as f64 / rate;
        while r + 1 < bounds.len() && t >= bounds[r].1 {
            r += 1;
        }
        out.push((r, t - bounds[r].0));
    }
    out
}

/// Concatenate the regimes into one session. Equal seeds give equal sessions.
pub fn generate(specs: &[RegimeSpec], options: &SyntheticOptions, rng_seed: u64) -> Result<SignalSession, SyntheticError> {
    if specs.is_empty() {
        return Err(SyntheticError::Empty);
    }
    for s in specs {
        s.validate()?;
    }
    if !(options.noise_sd >= 0.0) {
        return Err(SyntheticError::InvalidSpec {
            label: options.subject_id.clone(),
            detail: "noise standard deviation must be non-negative".into(),
        });
    }
    let mut bounds = Vec::with_capacity(specs.len());
    let mut t = 0.0;
    for s in specs {
        bounds.push((t, t + s.duration_s));
        t += s.duration_s;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let noise = Normal::new(0.0, options.noise_sd).expect("finite non-negative sd");

    // Phasic onsets per regime, never spilling into the next one.
    let onsets: Vec<Vec<f64>> = specs
        .iter()
        .map(|s| {
            let mut times = Vec::new();
            if s.eda_bump_rate > 0.0 {
                let gap = Exp::new(s.eda_bump_rate).expect("positive rate");
                let mut at = gap.sample(&mut rng);
                while at < s.duration_s {
                    times.push(at);
                    at += gap.sample(&mut rng);
                }
            }
            times
        })
        .collect();
    let phases: Vec<f64> = specs.iter().map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();

    let eda = sample_regimes(&bounds, EDA_RATE_HZ)
        .into_iter()
        .map(|(r, tau)| {
            let s = &specs[r];
            let phasic: f64 = onsets[r]
                .iter()
                .filter(|&&o| o <= tau)
                .map(|&o| s.eda_bump_height * (-(tau - o) / s.eda_bump_decay_s).exp())
                .sum();
            s.eda_level + phasic + noise.sample(&mut rng)
        })
        .collect();
    let bvp = sample_regimes(&bounds, BVP_RATE_HZ)
        .into_iter()
        .map(|(r, tau)| {
            let s = &specs[r];
            let wave = (std::f64::consts::TAU * s.bvp_freq_hz * tau + phases[r]).sin();
            s.bvp_level + s.bvp_amplitude * wave + noise.sample(&mut rng)
        })
        .collect();
    let temp = sample_regimes(&bounds, TEMP_RATE_HZ)
        .into_iter()
        .map(|(r, tau)| specs[r].temp_level + specs[r].temp_slope * tau + noise.sample(&mut rng))
        .collect();

    let channel = |kind, sample_rate_hz, samples| Channel {
        kind,
        sample_rate_hz,
        samples,
        start_time: 0.0,
    };
    Ok(SignalSession {
        subject_id: options.subject_id.clone(),
        channels: vec![
            channel(ChannelKind::Eda, EDA_RATE_HZ, eda),
            channel(ChannelKind::Bvp, BVP_RATE_HZ, bvp),
            channel(ChannelKind::Temp, TEMP_RATE_HZ, temp),
        ],
        intervals: specs
            .iter()
            .zip(&bounds)
            .map(|(s, &(a, b))| LabelInterval {
                label: s.label.clone(),
                t_start: a,
                t_end: b,
            })
            .collect(),
        seeding_mode: options.seeding_mode,
    })
}
