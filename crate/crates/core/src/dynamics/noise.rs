//! Input disturbances and SNR-calibrated measurement noise.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive torque disturbance on the actuated input channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DisturbanceSpec {
    #[default]
    None,
    Constant {
        /// Amplitude c (N·m).
        c: f64,
    },
    Sinusoid {
        /// Amplitude c (N·m).
        c: f64,
        /// Frequency f (Hz).
        f: f64,
    },
}

impl DisturbanceSpec {
    pub fn validate(&self) -> Result<()> {
        if let DisturbanceSpec::Sinusoid { f, .. } = self {
            if *f <= 0.0 {
                return Err(Error::config("sinusoid disturbance frequency must be > 0"));
            }
        }
        Ok(())
    }

    /// Disturbance torque at time `t`: `0`, `c`, or `c·sin(2πft)`.
    pub fn torque_at(&self, t: f64) -> f64 {
        match *self {
            DisturbanceSpec::None => 0.0,
            DisturbanceSpec::Constant { c } => c,
            DisturbanceSpec::Sinusoid { c, f } => c * (2.0 * std::f64::consts::PI * f * t).sin(),
        }
    }
}

/// Gaussian measurement noise specified as a signal-to-noise ratio.
///
/// Noise variance per channel is `signal_power / 10^(snr_db/10)`; the
/// calibration vector holds the per-channel signal power and must be set
/// before sampling when the SNR is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// `None` means noise off (infinite SNR).
    pub snr_db: Option<f64>,
    pub channel_power: Option<DVector<f64>>,
}

impl NoiseSpec {
    pub fn off() -> Self {
        NoiseSpec {
            snr_db: None,
            channel_power: None,
        }
    }

    /// Noise at `snr_db`; calibration must be supplied before use.
    pub fn with_snr(snr_db: f64) -> Self {
        NoiseSpec {
            snr_db: Some(snr_db),
            channel_power: None,
        }
    }

    pub fn calibrated(mut self, channel_power: DVector<f64>) -> Self {
        self.channel_power = Some(channel_power);
        self
    }

    pub fn is_off(&self) -> bool {
        self.snr_db.is_none()
    }

    /// Per-channel noise standard deviations (zero when noise is off).
    pub fn std_devs(&self, dim: usize) -> Result<DVector<f64>> {
        let Some(snr_db) = self.snr_db else {
            return Ok(DVector::zeros(dim));
        };
        let power = self.channel_power.as_ref().ok_or_else(|| {
            Error::config("finite SNR requires a channel-power calibration vector")
        })?;
        if power.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "NoiseSpec channel power",
                expected: dim,
                actual: power.len(),
            });
        }
        if power.iter().any(|&p| p < 0.0) {
            return Err(Error::config("channel powers must be non-negative"));
        }
        let attenuation = 10f64.powf(snr_db / 10.0);
        Ok(power.map(|p| (p / attenuation).sqrt()))
    }

    /// `x_obs = x + ε` with per-channel zero-mean Gaussian ε.
    pub fn apply<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        if self.is_off() {
            return Ok(x.clone());
        }
        let sigma = self.std_devs(x.len())?;
        let mut out = x.clone();
        for i in 0..out.len() {
            let eps: f64 = rng.sample(StandardNormal);
            out[i] += sigma[i] * eps;
        }
        Ok(out)
    }
}
