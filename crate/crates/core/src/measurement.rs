//! Hybrid-precoder pilot observation of a channel with calibrated noise.
//!
//! The precoder is block diagonal over pilot subcarriers; each block is an
//! N x M matrix of unit-modulus phase-shifter entries scaled by 1/sqrt(N).
//! The noiseless observation stacks s_{m,p} = [F_p^H h_p]_m with element
//! ordering `m * Np + p`, matching the factorized probabilistic model.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::SpatialFrequencyChannel;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::{CMat, CVec};

/// Block-diagonal hybrid precoder: one N x M block per pilot subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPrecoder {
    pub blocks: Vec<CMat>,
}

impl HybridPrecoder {
    pub fn n_antennas(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }
    pub fn n_measurements(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.ncols())
    }
    pub fn n_subcarriers(&self) -> usize {
        self.blocks.len()
    }
    /// Stacked output length M * Np.
    pub fn output_len(&self) -> usize {
        self.n_measurements() * self.n_subcarriers()
    }
}

/// Received pilot signal with its (calibrated) noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    /// Element `m * Np + p` holds measurement m of subcarrier p.
    pub y: CVec,
    pub sigma_z2: f64,
}

/// Draw a random phase-shifter precoder: every entry (1/sqrt(N)) e^{j theta}
/// with theta uniform over [0, 2 pi). Deterministic given the RNG state.
pub fn build_precoder<R: Rng + ?Sized>(rng: &mut R, cfg: &ScenarioConfig) -> HybridPrecoder {
    let n = cfg.n_antennas;
    let m = cfg.n_measurements();
    let scale = 1.0 / (n as f64).sqrt();
    let blocks = (0..cfg.n_pilot_subcarriers)
        .map(|_| {
            CMat::from_fn(n, m, |_, _| {
                let theta: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                Complex64::from_polar(scale, theta)
            })
        })
        .collect();
    HybridPrecoder { blocks }
}

/// Noiseless observation s = F^H h assembled in (m, p) ordering.
pub fn apply_measurement(h: &SpatialFrequencyChannel, precoder: &HybridPrecoder) -> Result<CVec> {
    let n = precoder.n_antennas();
    let m = precoder.n_measurements();
    let np = precoder.n_subcarriers();
    if h.h.len() != n * np {
        return Err(Error::DimensionMismatch(format!(
            "channel length {} vs precoder {} x {}",
            h.h.len(),
            n,
            np
        )));
    }
    let mut s = CVec::zeros(m * np);
    for (p, block) in precoder.blocks.iter().enumerate() {
        let hp = h.h.rows(p * n, n);
        let sp = block.ad_mul(&hp);
        for mi in 0..m {
            s[mi * np + p] = sp[mi];
        }
    }
    Ok(s)
}

/// Measured dictionary G = F^H U in the same (m, p) row ordering; U rows
/// are subcarrier-major.
pub fn measure_matrix(u: &CMat, precoder: &HybridPrecoder) -> Result<CMat> {
    let n = precoder.n_antennas();
    let m = precoder.n_measurements();
    let np = precoder.n_subcarriers();
    if u.nrows() != n * np {
        return Err(Error::DimensionMismatch(format!(
            "dictionary rows {} vs precoder {} x {}",
            u.nrows(),
            n,
            np
        )));
    }
    let k = u.ncols();
    let mut g = CMat::zeros(m * np, k);
    for (p, block) in precoder.blocks.iter().enumerate() {
        let up = u.rows(p * n, n);
        let gp = block.ad_mul(&up);
        for mi in 0..m {
            for c in 0..k {
                g[(mi * np + p, c)] = gp[(mi, c)];
            }
        }
    }
    Ok(g)
}

/// Per-element noise variance that realizes the requested received SNR on
/// this particular noiseless signal: sigma_z^2 = ||s||^2 / len * 10^(-snr/10).
pub fn calibrate_noise(s: &CVec, snr_db: f64) -> Result<f64> {
    let power = s.norm_squared();
    if power == 0.0 {
        return Err(Error::ZeroSignal("cannot calibrate noise on a zero signal".into()));
    }
    Ok(power / s.len() as f64 * 10f64.powf(-snr_db / 10.0))
}

/// Add circularly-symmetric complex Gaussian noise of per-element variance
/// `sigma_z2`.
pub fn add_noise<R: Rng + ?Sized>(s: &CVec, sigma_z2: f64, rng: &mut R) -> ReceivedSignal {
    let std = (sigma_z2 / 2.0).sqrt();
    let y = CVec::from_iterator(
        s.len(),
        s.iter().map(|&v| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            v + Complex64::new(re * std, im * std)
        }),
    );
    ReceivedSignal { y, sigma_z2 }
}
