//! Ground-truth spatial-frequency channel synthesis.
//!
//! A path is parametrized by (complex gain, sine-angle psi, slope eta,
//! delay tau). The slope eta = (1 - psi^2) / r is the rate at which the
//! instantaneous angle changes across the aperture; it reparametrizes the
//! source distance r so that the sampling grid can be rectangular in
//! (psi, eta). eta = 0 is the far-field (plane-wave) limit.
//!
//! Per subcarrier p at frequency f_p the array response of a path is the
//! Hadamard product of a unit-modulus phase vector (frequency-dependent:
//! beam squint) and a unit-norm amplitude vector (distance-dependent power
//! taper: near field). Stacking subcarriers and weighting by the delay
//! phasor exp(-j 2 pi f_p tau) gives the length N*Np channel, stored
//! subcarrier-major: element `p * N + n`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::{CVec, RVec, C64, SPEED_OF_LIGHT};

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    /// Complex gain (all antenna-independent phase and attenuation merged).
    pub alpha: C64,
    /// Sine-angle, in [-1, 1).
    pub psi: f64,
    /// Slope (1 - psi^2) / r, in [0, 1/r_min], 1/m.
    pub eta: f64,
    /// Delay relative to the reference antenna, in [0, tau_max], s.
    pub tau: f64,
}

impl PathParams {
    /// Check the parameter boxes against a scenario.
    pub fn validate(&self, cfg: &ScenarioConfig) -> Result<()> {
        if !(-1.0..1.0).contains(&self.psi) {
            return Err(Error::InvalidConfig(format!("psi {} outside [-1, 1)", self.psi)));
        }
        if !(0.0..=cfg.eta_max()).contains(&self.eta) {
            return Err(Error::InvalidConfig(format!(
                "eta {} outside [0, {}]",
                self.eta,
                cfg.eta_max()
            )));
        }
        if !(0.0..=cfg.tau_max()).contains(&self.tau) {
            return Err(Error::InvalidConfig(format!(
                "tau {} outside [0, {}]",
                self.tau,
                cfg.tau_max()
            )));
        }
        Ok(())
    }
}

/// Spatial-frequency channel vector, subcarrier-major (`p * N + n`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFrequencyChannel {
    pub h: CVec,
}

/// Operating frequency of pilot subcarrier `p`: f_c + (p - Np/2) * df.
pub fn pilot_frequency(p: usize, cfg: &ScenarioConfig) -> Result<f64> {
    if p >= cfg.n_pilot_subcarriers {
        return Err(Error::IndexOutOfRange { index: p, len: cfg.n_pilot_subcarriers });
    }
    Ok(cfg.fc + (p as f64 - cfg.n_pilot_subcarriers as f64 / 2.0) * cfg.df_pilot)
}

/// Per-antenna distance terms r + dn*d*psi + dn^2*d^2*eta with r recovered
/// as (1 - psi^2) / eta. Only meaningful for eta > 0.
pub(crate) fn distance_terms(eta: f64, psi: f64, cfg: &ScenarioConfig) -> Vec<f64> {
    let d = cfg.antenna_spacing();
    let r = (1.0 - psi * psi) / eta;
    (0..cfg.n_antennas)
        .map(|n| {
            let dn = n as f64 - cfg.reference_antenna as f64;
            r + dn * d * psi + dn * dn * d * d * eta
        })
        .collect()
}

/// True when the near-field amplitude model is well defined for (eta, psi):
/// every per-antenna distance term is strictly positive. eta = 0 (far field)
/// is always valid.
pub fn amplitude_model_valid(eta: f64, psi: f64, cfg: &ScenarioConfig) -> bool {
    eta == 0.0 || distance_terms(eta, psi, cfg).iter().all(|&t| t > 0.0)
}

/// Unit-modulus phase steering vector of length N.
///
/// Element n is exp(-j (2 pi f / c) * (dn*d*psi + dn^2*d^2*eta)) with
/// dn = n - n_o. eta = 0 reduces to the classical linear ULA phase ramp.
pub fn phase_steering(eta: f64, psi: f64, f: f64, cfg: &ScenarioConfig) -> CVec {
    let d = cfg.antenna_spacing();
    let k = 2.0 * std::f64::consts::PI * f / SPEED_OF_LIGHT;
    CVec::from_iterator(
        cfg.n_antennas,
        (0..cfg.n_antennas).map(|n| {
            let dn = n as f64 - cfg.reference_antenna as f64;
            Complex64::from_polar(1.0, -k * (dn * d * psi + dn * dn * d * d * eta))
        }),
    )
}

/// Unit-norm amplitude steering vector of length N.
///
/// Element n is proportional to the inverse distance term; eta = 0 returns
/// the uniform far-field vector 1/sqrt(N). Rejects (eta, psi) pairs whose
/// recovered distance terms are not all positive.
pub fn amplitude_steering(eta: f64, psi: f64, cfg: &ScenarioConfig) -> Result<RVec> {
    if eta == 0.0 {
        let v = 1.0 / (cfg.n_antennas as f64).sqrt();
        return Ok(RVec::from_element(cfg.n_antennas, v));
    }
    let terms = distance_terms(eta, psi, cfg);
    if let Some(bad) = terms.iter().position(|&t| t <= 0.0) {
        return Err(Error::AmplitudeModelInvalid { antenna: bad });
    }
    Ok(normalized_inverse(&terms))
}

/// As [`amplitude_steering`] but without the validity rejection; distance
/// terms may be negative (sign-flipped amplitude). The uniform rectangular
/// sampling grid contains corner tuples (large |psi| and large eta) that no
/// physical path can produce; their basis columns are still materialized so
/// the dictionary stays complete, and this is the generator used there.
pub(crate) fn amplitude_steering_unchecked(eta: f64, psi: f64, cfg: &ScenarioConfig) -> RVec {
    if eta == 0.0 {
        let v = 1.0 / (cfg.n_antennas as f64).sqrt();
        return RVec::from_element(cfg.n_antennas, v);
    }
    normalized_inverse(&distance_terms(eta, psi, cfg))
}

fn normalized_inverse(terms: &[f64]) -> RVec {
    let mut v = RVec::from_iterator(terms.len(), terms.iter().map(|&t| 1.0 / t));
    let norm = v.norm();
    v /= norm;
    v
}

/// Beam steering vector c(eta, psi, f) = phase .* amplitude, unit norm.
pub fn beam_steering(eta: f64, psi: f64, f: f64, cfg: &ScenarioConfig) -> Result<CVec> {
    let a = phase_steering(eta, psi, f, cfg);
    let b = amplitude_steering(eta, psi, cfg)?;
    Ok(CVec::from_iterator(
        cfg.n_antennas,
        a.iter().zip(b.iter()).map(|(ph, am)| ph * am),
    ))
}

/// Unit-modulus delay steering vector of length Np: element p is
/// exp(-j 2 pi f_p tau).
pub fn delay_steering(tau: f64, cfg: &ScenarioConfig) -> CVec {
    CVec::from_iterator(
        cfg.n_pilot_subcarriers,
        (0..cfg.n_pilot_subcarriers).map(|p| {
            let f = cfg.fc + (p as f64 - cfg.n_pilot_subcarriers as f64 / 2.0) * cfg.df_pilot;
            Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * tau)
        }),
    )
}

/// Superpose paths into the spatial-frequency channel
/// h = sum_l alpha_l [d(tau_l) (x) 1_N] .* cbar(eta_l, psi_l).
///
/// An empty path list yields the zero vector.
pub fn synthesize_channel(paths: &[PathParams], cfg: &ScenarioConfig) -> Result<SpatialFrequencyChannel> {
    let n = cfg.n_antennas;
    let np = cfg.n_pilot_subcarriers;
    let mut h = CVec::zeros(n * np);
    for path in paths {
        let amp = amplitude_steering(path.eta, path.psi, cfg)?;
        let delay = delay_steering(path.tau, cfg);
        for p in 0..np {
            let f = pilot_frequency(p, cfg)?;
            let phase = phase_steering(path.eta, path.psi, f, cfg);
            let w = path.alpha * delay[p];
            for i in 0..n {
                h[p * n + i] += w * phase[i] * amp[i];
            }
        }
    }
    Ok(SpatialFrequencyChannel { h })
}

/// Draw L random paths: psi ~ U[-1, 1), eta ~ U[0, eta_max],
/// tau ~ U[0, tau_max], gains circularly-symmetric Gaussian normalized to
/// unit total power. (eta, psi) pairs outside the amplitude-model validity
/// region are redrawn, so every returned path can be synthesized.
pub fn sample_paths<R: Rng + ?Sized>(rng: &mut R, cfg: &ScenarioConfig) -> Vec<PathParams> {
    sample_paths_with_eta_max(rng, cfg, cfg.eta_max())
}

/// [`sample_paths`] with an explicit slope ceiling (used by the slope sweep).
pub fn sample_paths_with_eta_max<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &ScenarioConfig,
    eta_max: f64,
) -> Vec<PathParams> {
    let l = cfg.n_paths;
    let mut paths = Vec::with_capacity(l);
    for _ in 0..l {
        let (psi, eta) = loop {
            let psi = rng.gen_range(-1.0..1.0);
            let eta = rng.gen_range(0.0..=eta_max);
            if amplitude_model_valid(eta, psi, cfg) {
                break (psi, eta);
            }
        };
        let tau = rng.gen_range(0.0..=cfg.tau_max());
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        paths.push(PathParams {
            alpha: Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2,
            psi,
            eta,
            tau,
        });
    }
    let total_power: f64 = paths.iter().map(|p| p.alpha.norm_sqr()).sum();
    if total_power > 0.0 {
        let scale = 1.0 / total_power.sqrt();
        for p in &mut paths {
            p.alpha *= scale;
        }
    }
    paths
}
