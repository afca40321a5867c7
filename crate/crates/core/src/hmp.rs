//! Hybrid message passing for joint estimation of the sparse beam-delay
//! gains and their Bernoulli-Gaussian hyperparameters.
//!
//! The estimator is the stationary-point iteration of a constrained Bethe
//! free energy: Gaussian beliefs on the auxiliary signal s = G beta and on
//! the measurement factor, a spike-and-slab belief on each gain, and mean /
//! variance consistency constraints relaxed to scalar (per-index) form,
//! with the beta-side variance constraint additionally averaged over the
//! M * Np measurement factors.
//!
//! Sign convention: the consistency multipliers associated with variances
//! act as negative precisions (belief covariances are -1/multiplier). All
//! state is stored as the positive effective variances instead, floored at
//! [`VAR_FLOOR`] wherever numerical cancellation could drive them negative
//! and capped at [`VAR_CAP`] to keep every intermediate finite.
//!
//! One iteration (`hmp_iterate`) runs, in order:
//!   1. measurement-side extrinsic variance v_s = |G|^2 w and mean
//!      mu_s = G beta_hat + v_s .* xi;
//!   2. posterior of s under the product of the likelihood CN(y, sigma_z^2)
//!      and the extrinsic Gaussian;
//!   3. the message back toward the measurement factor (precision
//!      subtraction) and the refreshed mean multiplier xi;
//!   4. the per-gain pseudo-observation (mu_beta, v_beta) assembled from
//!      |G^H|^2 precision gaps and G^H xi;
//!   5. the spike-and-slab denoiser [`bg_denoiser`] giving posterior gain
//!      moments and nonzero probabilities;
//!   6. the shared beta-side multiplier for the next iteration.
//!
//! [`estimate`] wraps the iteration with energy-matched initialization,
//! hyperparameter learning, and adaptive damping gated on a Bethe-energy
//! surrogate.

use crate::error::{Error, Result};
use crate::{CMat, CVec, RMat, RVec, C64};

/// Floor applied to every effective variance.
pub const VAR_FLOOR: f64 = 1e-12;
/// Cap keeping effective variances finite through precision subtractions.
pub const VAR_CAP: f64 = 1e18;
/// Sparsity-level clamp: lambda stays in [LAMBDA_MIN, 1 - LAMBDA_MIN].
pub const LAMBDA_MIN: f64 = 1e-6;

/// Independent, non-identically distributed Bernoulli-Gaussian prior:
/// common sparsity level and per-index slab power.
#[derive(Debug, Clone, PartialEq)]
pub struct BGPrior {
    pub lambda: f64,
    pub chi: RVec,
}

impl BGPrior {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.lambda && self.lambda < 1.0) {
            return Err(Error::InvalidConfig(format!("lambda {} outside (0, 1)", self.lambda)));
        }
        if self.chi.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::InvalidConfig("chi must be elementwise non-negative".into()));
        }
        Ok(())
    }
}

/// Measurement matrix with the precomputed elementwise squared moduli and
/// column energies the iteration consumes every pass.
#[derive(Debug, Clone)]
pub struct HmpModel {
    pub g: CMat,
    pub g_abs2: RMat,
    pub col_energy: RVec,
}

impl HmpModel {
    pub fn new(g: CMat) -> Self {
        let g_abs2 = RMat::from_fn(g.nrows(), g.ncols(), |r, c| g[(r, c)].norm_sqr());
        let col_energy = RVec::from_iterator(g.ncols(), (0..g.ncols()).map(|c| g_abs2.column(c).sum()));
        Self { g, g_abs2, col_energy }
    }

    pub fn n_measurements(&self) -> usize {
        self.g.nrows()
    }
    pub fn n_gains(&self) -> usize {
        self.g.ncols()
    }
}

/// All per-iteration message quantities. Vectors over measurements have
/// length M * Np, vectors over gains length K.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    /// Extrinsic variance of s contributed by the gain side (from |G|^2 w).
    pub v_s_ext: RVec,
    /// Extrinsic mean of s (G beta_hat plus the multiplier correction).
    pub mu_s_ext: CVec,
    /// Mean-consistency multiplier on s.
    pub xi_s: CVec,
    /// Posterior mean/variance of s under the likelihood-side belief.
    pub s_hat: CVec,
    pub sigma_s2: RVec,
    /// Message from the s posterior toward the measurement factor.
    pub v_s_to_beta: RVec,
    pub mu_s_to_beta: CVec,
    /// Per-measurement precision gap (posterior vs extrinsic), >= 0.
    pub precision_gap_s: RVec,
    /// Effective variance of the shared (measurement-averaged) beta-side
    /// multiplier carried across iterations.
    pub v_beta_shared: RVec,
    /// Pseudo-observation fed to the denoiser.
    pub v_beta_ext: RVec,
    pub mu_beta_ext: CVec,
    /// Posterior gain moments and spike/slab responsibilities.
    pub beta_hat: CVec,
    pub sigma_beta2: RVec,
    pub nonzero_prob: RVec,
}

impl MessageState {
    /// Fresh state before the first iteration: zero gain estimate, beta-side
    /// variances seeded with the prior slab powers, zero multipliers.
    pub fn init(n_measurements: usize, prior: &BGPrior) -> Self {
        let k = prior.chi.len();
        let chi = prior.chi.map(|c| c.max(VAR_FLOOR));
        Self {
            v_s_ext: RVec::zeros(n_measurements),
            mu_s_ext: CVec::zeros(n_measurements),
            xi_s: CVec::zeros(n_measurements),
            s_hat: CVec::zeros(n_measurements),
            sigma_s2: RVec::from_element(n_measurements, VAR_FLOOR),
            v_s_to_beta: RVec::from_element(n_measurements, VAR_FLOOR),
            mu_s_to_beta: CVec::zeros(n_measurements),
            precision_gap_s: RVec::zeros(n_measurements),
            v_beta_shared: chi.clone(),
            v_beta_ext: chi.clone(),
            mu_beta_ext: CVec::zeros(k),
            beta_hat: CVec::zeros(k),
            sigma_beta2: chi,
            nonzero_prob: RVec::from_element(k, prior.lambda),
        }
    }

    fn is_finite(&self) -> bool {
        self.beta_hat.iter().all(|v| v.re.is_finite() && v.im.is_finite())
            && self.sigma_beta2.iter().all(|v| v.is_finite())
            && self.xi_s.iter().all(|v| v.re.is_finite() && v.im.is_finite())
            && self.v_beta_shared.iter().all(|v| v.is_finite())
    }
}

/// Posterior moments of a gain under spike-and-slab prior times a Gaussian
/// pseudo-observation CN(mu, v): returns (mean, variance, nonzero prob).
///
/// The slab responsibility is computed in log space so extreme pseudo-SNRs
/// cannot overflow.
pub fn bg_denoiser(mu: C64, v: f64, lambda: f64, chi: f64) -> Result<(C64, f64, f64)> {
    if !(v > 0.0) {
        return Err(Error::InvalidConfig(format!("pseudo-variance {v} must be positive")));
    }
    if !(0.0 < lambda && lambda < 1.0) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} outside (0, 1)")));
    }
    if !(chi >= 0.0) {
        return Err(Error::InvalidConfig(format!("chi {chi} must be non-negative")));
    }
    if chi == 0.0 {
        // Slab collapsed onto the spike: posterior is the point mass at zero.
        return Ok((C64::default(), 0.0, lambda));
    }
    let total = chi + v;
    // log of [lambda CN(mu; 0, chi + v)] / [(1 - lambda) CN(mu; 0, v)]
    let log_ratio = lambda.ln() - (1.0 - lambda).ln() + v.ln() - total.ln() + mu.norm_sqr() * chi / (v * total);
    let pi = sigmoid(log_ratio);
    let shrink = chi / total;
    let slab_mean = mu * shrink;
    let slab_var = chi * v / total;
    let mean = slab_mean * pi;
    let var = (pi * (slab_var + slab_mean.norm_sqr()) - mean.norm_sqr()).max(0.0);
    Ok((mean, var, pi))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One full message-passing iteration (no damping): consumes the previous
/// state, returns the refreshed one.
pub fn hmp_iterate(
    state: &MessageState,
    model: &HmpModel,
    y: &CVec,
    sigma_z2: f64,
    prior: &BGPrior,
) -> Result<MessageState> {
    let len = model.n_measurements();
    let k = model.n_gains();
    if y.len() != len || prior.chi.len() != k || state.v_beta_shared.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "measurements {len}, gains {k}, y {}, chi {}, state {}",
            y.len(),
            prior.chi.len(),
            state.v_beta_shared.len()
        )));
    }
    let mnp = len as f64;

    // Measurement-side extrinsic Gaussian.
    let v_s_ext = (&model.g_abs2 * &state.v_beta_shared).map(|v| v.clamp(VAR_FLOOR, VAR_CAP));
    let g_beta = &model.g * &state.beta_hat;
    let mu_s_ext = CVec::from_iterator(
        len,
        (0..len).map(|i| g_beta[i] + state.xi_s[i] * v_s_ext[i]),
    );

    // Posterior of s: product of CN(y, sigma_z^2) and the extrinsic Gaussian,
    // in the cancellation-free form that survives sigma_z2 = 0.
    let mut s_hat = CVec::zeros(len);
    let mut sigma_s2 = RVec::zeros(len);
    for i in 0..len {
        let denom = v_s_ext[i] + sigma_z2;
        s_hat[i] = (y[i] * v_s_ext[i] + mu_s_ext[i] * sigma_z2) / denom;
        sigma_s2[i] = (sigma_z2 * v_s_ext[i] / denom).max(VAR_FLOOR);
    }

    // Extrinsic message toward the measurement factor: precision subtraction.
    let mut v_s_to_beta = RVec::zeros(len);
    let mut mu_s_to_beta = CVec::zeros(len);
    let mut xi_s = CVec::zeros(len);
    let mut precision_gap_s = RVec::zeros(len);
    for i in 0..len {
        let gap = (1.0 / sigma_s2[i] - 1.0 / v_s_ext[i]).max(1.0 / VAR_CAP);
        v_s_to_beta[i] = (1.0 / gap).clamp(VAR_FLOOR, VAR_CAP);
        mu_s_to_beta[i] = s_hat[i] - state.xi_s[i] * v_s_to_beta[i];
        let dmu = mu_s_to_beta[i] - mu_s_ext[i];
        xi_s[i] = -dmu / (v_s_ext[i] + v_s_to_beta[i]);
        precision_gap_s[i] = ((v_s_ext[i] - sigma_s2[i]) / (v_s_ext[i] * v_s_ext[i])).max(1.0 / VAR_CAP);
    }

    // Gain-side pseudo-observations.
    let pi_beta = model.g_abs2.tr_mul(&precision_gap_s);
    let g_xi = model.g.ad_mul(&xi_s);
    let mut v_beta_ext = RVec::zeros(k);
    let mut mu_beta_ext = CVec::zeros(k);
    for j in 0..k {
        let v = 1.0 / pi_beta[j] - state.v_beta_shared[j] / mnp;
        v_beta_ext[j] = v.clamp(VAR_FLOOR, VAR_CAP);
        mu_beta_ext[j] = state.beta_hat[j] - g_xi[j] * v_beta_ext[j];
    }

    // Spike-and-slab denoising and the refreshed shared multiplier.
    let mut beta_hat = CVec::zeros(k);
    let mut sigma_beta2 = RVec::zeros(k);
    let mut nonzero_prob = RVec::zeros(k);
    let mut v_beta_shared = RVec::zeros(k);
    for j in 0..k {
        let (mean, var, pi) = bg_denoiser(mu_beta_ext[j], v_beta_ext[j], prior.lambda, prior.chi[j])?;
        beta_hat[j] = mean;
        sigma_beta2[j] = var.max(VAR_FLOOR);
        nonzero_prob[j] = pi;
        v_beta_shared[j] = shared_beta_variance(sigma_beta2[j], v_beta_ext[j], mnp);
    }

    let next = MessageState {
        v_s_ext,
        mu_s_ext,
        xi_s,
        s_hat,
        sigma_s2,
        v_s_to_beta,
        mu_s_to_beta,
        precision_gap_s,
        v_beta_shared,
        v_beta_ext,
        mu_beta_ext,
        beta_hat,
        sigma_beta2,
        nonzero_prob,
    };
    if !next.is_finite() {
        return Err(Error::Divergence { iteration: 0, detail: "non-finite message state".into() });
    }
    Ok(next)
}

/// Shared beta-side effective variance: precision subtraction between the
/// gain posterior and 1/(M Np) of the extrinsic precision.
fn shared_beta_variance(sigma_beta2: f64, v_beta_ext: f64, mnp: f64) -> f64 {
    let gap = (1.0 / sigma_beta2 - 1.0 / (mnp * v_beta_ext)).max(1.0 / VAR_CAP);
    (1.0 / gap).clamp(VAR_FLOOR, VAR_CAP)
}

/// Refreshed hyperparameters from the current gain beliefs: chi_k is the
/// posterior second moment of gain k, lambda the average slab
/// responsibility (clamped away from 0 and 1).
pub fn update_hyperparams(state: &MessageState, prior: &BGPrior) -> BGPrior {
    update_hyperparams_with(state, prior, LambdaRule::Responsibility)
}

/// Sparsity-level learning rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaRule {
    /// lambda = mean slab responsibility. An atom whose slab power has
    /// collapsed (chi ~ 0) contributes its prior responsibility lambda, so
    /// lambda ratchets upward on problems with many dead atoms; the
    /// per-atom chi learning still enforces sparsity then.
    Responsibility,
    /// Keep lambda fixed; only the slab powers are learned.
    Fixed,
}

/// [`update_hyperparams`] with an explicit lambda rule.
pub fn update_hyperparams_with(state: &MessageState, prior: &BGPrior, rule: LambdaRule) -> BGPrior {
    let chi = RVec::from_iterator(
        state.beta_hat.len(),
        state
            .beta_hat
            .iter()
            .zip(state.sigma_beta2.iter())
            .map(|(b, &v)| b.norm_sqr() + v),
    );
    let lambda = match rule {
        LambdaRule::Responsibility => (state.nonzero_prob.sum() / state.nonzero_prob.len() as f64)
            .clamp(LAMBDA_MIN, 1.0 - LAMBDA_MIN),
        LambdaRule::Fixed => prior.lambda,
    };
    BGPrior { lambda, chi }
}

/// Bethe-energy surrogate used for damping acceptance: expected negative
/// log-likelihood of y under the output-side Gaussian (mean G beta_hat,
/// variance |G|^2 sigma_beta^2) plus the KL divergence of each gain belief
/// from its prior. Finite on any state; pure in the state.
pub fn evaluate_bfe_surrogate(
    state: &MessageState,
    model: &HmpModel,
    y: &CVec,
    sigma_z2: f64,
    prior: &BGPrior,
) -> f64 {
    let sigma_eff = sigma_z2.max(VAR_FLOOR);
    let z_hat = &model.g * &state.beta_hat;
    let v_z = &model.g_abs2 * &state.sigma_beta2;
    let mut j = 0.0;
    for i in 0..y.len() {
        j += ((y[i] - z_hat[i]).norm_sqr() + v_z[i]) / sigma_eff + (std::f64::consts::PI * sigma_eff).ln();
    }
    let lambda = prior.lambda.clamp(1e-12, 1.0 - 1e-12);
    for k in 0..state.beta_hat.len() {
        let pi = state.nonzero_prob[k].clamp(0.0, 1.0);
        let chi = prior.chi[k].max(VAR_FLOOR);
        let v = state.v_beta_ext[k].max(VAR_FLOOR);
        let shrink = chi / (chi + v);
        let slab_mean = state.mu_beta_ext[k] * shrink;
        let slab_var = (chi * v / (chi + v)).max(1e-300);
        if pi > 0.0 {
            j += pi * ((pi / lambda).ln() + (chi / slab_var).ln() + (slab_var + slab_mean.norm_sqr()) / chi - 1.0);
        }
        if pi < 1.0 {
            j += (1.0 - pi) * ((1.0 - pi) / (1.0 - lambda)).ln();
        }
    }
    j
}

/// Options for [`estimate`].
#[derive(Debug, Clone)]
pub struct HmpOptions {
    /// Maximum iterations T.
    pub max_iterations: usize,
    /// Relative change of beta_hat declaring convergence.
    pub tolerance: f64,
    /// Initial damping factor rho.
    pub damping_init: f64,
    /// Smallest damping factor tried.
    pub damping_min: f64,
    /// Growth applied to rho on acceptance.
    pub damping_grow: f64,
    /// Retries (halving rho) when the surrogate increases.
    pub max_retries: usize,
    /// Allowed surrogate increase per accepted step.
    pub bfe_slack: f64,
    /// Learn (lambda, chi) each iteration.
    pub learn_hyperparams: bool,
    /// Sparsity-level learning rule when learning is on.
    pub lambda_rule: LambdaRule,
    /// Sparsity level used for initialization (and kept when learning is off
    /// and no explicit prior is given).
    pub lambda_init: f64,
    /// Explicit prior overriding the energy-matched initialization.
    pub prior: Option<BGPrior>,
}

impl Default for HmpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            damping_init: 0.8,
            damping_min: 1.0 / 64.0,
            damping_grow: 1.1,
            max_retries: 5,
            bfe_slack: 1e-8,
            learn_hyperparams: true,
            lambda_rule: LambdaRule::Responsibility,
            lambda_init: 0.1,
            prior: None,
        }
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationDiag {
    pub iteration: usize,
    pub relative_change: f64,
    pub bfe_surrogate: f64,
    pub lambda: f64,
}

/// Estimation result: gains, reconstructed channel, learned prior, traces.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub beta_hat: CVec,
    pub h_hat: CVec,
    pub prior: BGPrior,
    pub bfe_trace: Vec<f64>,
    pub iterations_used: usize,
    pub diagnostics: Vec<IterationDiag>,
    /// Final message state (consumed by the refinement stage).
    pub state: MessageState,
}

impl EstimateReport {
    /// Write the diagnostic trace as CSV: iteration, residual, surrogate,
    /// lambda.
    pub fn write_trace_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,relative_change,bfe_surrogate,lambda")?;
        for d in &self.diagnostics {
            writeln!(w, "{},{:.12e},{:.12e},{:.12e}", d.iteration, d.relative_change, d.bfe_surrogate, d.lambda)?;
        }
        Ok(())
    }
}

/// Energy-matched initial prior: splits the noise-free signal energy evenly
/// over the expected lambda_init * K active gains, per column energy.
pub fn initial_prior(y: &CVec, model: &HmpModel, sigma_z2: f64, lambda_init: f64) -> BGPrior {
    let k = model.n_gains();
    let excess = (y.norm_squared() - y.len() as f64 * sigma_z2).max(0.0);
    let chi = RVec::from_iterator(
        k,
        model
            .col_energy
            .iter()
            .map(|&e| (excess / (lambda_init * k as f64 * e.max(VAR_FLOOR))).max(VAR_FLOOR)),
    );
    BGPrior { lambda: lambda_init, chi }
}

/// Run the full estimator: initialization, damped iterations with
/// hyperparameter learning, convergence check, channel reconstruction
/// h_hat = U beta_hat.
pub fn estimate(y: &CVec, g: CMat, u: &CMat, sigma_z2: f64, opts: &HmpOptions) -> Result<EstimateReport> {
    let model = HmpModel::new(g);
    estimate_with_model(y, &model, u, sigma_z2, opts)
}

/// As [`estimate`] with a prebuilt [`HmpModel`].
pub fn estimate_with_model(
    y: &CVec,
    model: &HmpModel,
    u: &CMat,
    sigma_z2: f64,
    opts: &HmpOptions,
) -> Result<EstimateReport> {
    if u.ncols() != model.n_gains() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary columns {} vs measurement columns {}",
            u.ncols(),
            model.n_gains()
        )));
    }
    let mut prior = match &opts.prior {
        Some(p) => {
            p.validate()?;
            p.clone()
        }
        None => initial_prior(y, model, sigma_z2, opts.lambda_init),
    };
    let mut state = MessageState::init(model.n_measurements(), &prior);
    let mut rho = opts.damping_init;
    let mut surrogate = evaluate_bfe_surrogate(&state, model, y, sigma_z2, &prior);
    let mut bfe_trace = Vec::with_capacity(opts.max_iterations);
    let mut diagnostics = Vec::with_capacity(opts.max_iterations);
    let mut iterations_used = 0;

    for t in 1..=opts.max_iterations {
        iterations_used = t;
        let proposal = hmp_iterate(&state, model, y, sigma_z2, &prior).map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { iteration: t, detail },
            other => other,
        })?;

        // Adaptive damping: blend beta_hat, sigma_beta2 and xi toward the
        // proposal, accept when the surrogate does not increase beyond the
        // slack, halving rho otherwise. After the retry budget the smallest
        // step is taken anyway (a finite surrogate is already guaranteed).
        let mut accepted = None;
        let mut accepted_j = surrogate;
        for retry in 0..=opts.max_retries {
            let candidate = blend(&state, &proposal, rho, model.n_measurements() as f64);
            let j = evaluate_bfe_surrogate(&candidate, model, y, sigma_z2, &prior);
            if j.is_finite() && (j <= surrogate + opts.bfe_slack || retry == opts.max_retries) {
                if !j.is_finite() {
                    return Err(Error::Divergence { iteration: t, detail: "non-finite surrogate".into() });
                }
                accepted = Some(candidate);
                accepted_j = j;
                if retry == 0 {
                    rho = (rho * opts.damping_grow).min(1.0);
                }
                break;
            }
            rho = (rho * 0.5).max(opts.damping_min);
        }
        let next = accepted.ok_or(Error::Divergence { iteration: t, detail: "damping retries exhausted".into() })?;

        let diff = (&next.beta_hat - &state.beta_hat).norm();
        let scale = next.beta_hat.norm().max(1e-300);
        let rel = diff / scale;
        state = next;
        surrogate = accepted_j;
        if opts.learn_hyperparams {
            prior = update_hyperparams_with(&state, &prior, opts.lambda_rule);
        }
        bfe_trace.push(surrogate);
        diagnostics.push(IterationDiag { iteration: t, relative_change: rel, bfe_surrogate: surrogate, lambda: prior.lambda });
        if rel < opts.tolerance {
            break;
        }
    }

    let h_hat = u * &state.beta_hat;
    Ok(EstimateReport {
        beta_hat: state.beta_hat.clone(),
        h_hat,
        prior,
        bfe_trace,
        iterations_used,
        diagnostics,
        state,
    })
}

/// Damped blend: rho * proposal + (1 - rho) * previous on beta_hat,
/// sigma_beta2 and xi; the shared beta-side variance is recomputed from the
/// blended posterior so the carried state stays self-consistent. All other
/// fields are taken from the proposal.
pub fn blend(previous: &MessageState, proposal: &MessageState, rho: f64, mnp: f64) -> MessageState {
    let mut out = proposal.clone();
    let keep = 1.0 - rho;
    for i in 0..out.beta_hat.len() {
        out.beta_hat[i] = proposal.beta_hat[i] * rho + previous.beta_hat[i] * keep;
        out.sigma_beta2[i] = (proposal.sigma_beta2[i] * rho + previous.sigma_beta2[i] * keep).max(VAR_FLOOR);
        out.v_beta_shared[i] = shared_beta_variance(out.sigma_beta2[i], out.v_beta_ext[i].max(VAR_FLOOR), mnp);
    }
    for i in 0..out.xi_s.len() {
        out.xi_s[i] = proposal.xi_s[i] * rho + previous.xi_s[i] * keep;
    }
    out
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> HmpModel {
        let scale = 1.0 / (rows as f64).sqrt();
        let g = CMat::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal)) * scale
        });
        HmpModel::new(g)
    }

    fn draw_sparse<R: Rng>(rng: &mut R, prior: &BGPrior) -> CVec {
        CVec::from_iterator(
            prior.chi.len(),
            prior.chi.iter().map(|&chi| {
                if rng.gen_range(0.0..1.0) < prior.lambda {
                    let s = (chi / 2.0).sqrt();
                    Complex64::new(
                        rng.sample::<f64, _>(rand_distr::StandardNormal) * s,
                        rng.sample::<f64, _>(rand_distr::StandardNormal) * s,
                    )
                } else {
                    Complex64::default()
                }
            }),
        )
    }

    #[test]
    fn denoiser_slab_only_limit() {
        // lambda -> 1 gives plain Gaussian-product moments.
        let (mean, var, pi) = bg_denoiser(Complex64::new(1.0, -2.0), 0.5, 1.0 - 1e-14, 2.0).unwrap();
        let expect = Complex64::new(1.0, -2.0) * (2.0 / 2.5);
        assert!((mean - expect).norm() < 1e-9);
        assert!((var - 2.0 * 0.5 / 2.5).abs() < 1e-9);
        assert!(pi > 1.0 - 1e-9);
    }

    #[test]
    fn denoiser_zero_slab_power() {
        let (mean, var, pi) = bg_denoiser(Complex64::new(0.3, 0.1), 0.2, 0.4, 0.0).unwrap();
        assert_eq!(mean, Complex64::default());
        assert_eq!(var, 0.0);
        assert!((pi - 0.4).abs() < 1e-15);
    }

    #[test]
    fn denoiser_rejects_bad_variance() {
        assert!(bg_denoiser(Complex64::default(), 0.0, 0.5, 1.0).is_err());
        assert!(bg_denoiser(Complex64::default(), -1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn denoiser_matches_quadrature() {
        let (mean, var, _) = bg_denoiser(Complex64::new(1.0, 0.0), 0.5, 0.3, 2.0).unwrap();
        let (qm, qv) = quadrature_moments(Complex64::new(1.0, 0.0), 0.5, 0.3, 2.0, 400);
        assert!((mean - qm).norm() < 1e-8, "mean {mean} vs {qm}");
        assert!((var - qv).abs() < 1e-8, "var {var} vs {qv}");
    }

    /// Numerical moments of the spike-and-slab posterior on a grid over the
    /// complex plane; the spike contribution is handled analytically.
    pub(crate) fn quadrature_moments(mu: C64, v: f64, lambda: f64, chi: f64, n: usize) -> (C64, f64) {
        let half = 6.0 * (chi + v).sqrt();
        let step = 2.0 * half / n as f64;
        let gauss = |x: C64, m: C64, var: f64| (-(x - m).norm_sqr() / var).exp() / (std::f64::consts::PI * var);
        // Spike: weight (1 - lambda) * CN(0; mu, v).
        let spike_w = (1.0 - lambda) * gauss(C64::default(), mu, v);
        let mut slab_w = 0.0;
        let mut first = C64::default();
        let mut second = 0.0;
        for i in 0..n {
            let re = -half + (i as f64 + 0.5) * step;
            for j in 0..n {
                let im = -half + (j as f64 + 0.5) * step;
                let b = Complex64::new(re, im);
                let w = lambda * gauss(b, C64::default(), chi) * gauss(b, mu, v) * step * step;
                slab_w += w;
                first += b * w;
                second += b.norm_sqr() * w;
            }
        }
        let z = spike_w + slab_w;
        let mean = first / z;
        let var = second / z - mean.norm_sqr();
        (mean, var)
    }

    #[test]
    fn hyperparam_identity_matches_denoiser() {
        // lambda update equals the average nonzero probability by
        // construction; check the identity on a random state.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 24;
        let prior = BGPrior { lambda: 0.35, chi: RVec::from_element(k, 1.7) };
        let mut state = MessageState::init(8, &prior);
        for j in 0..k {
            let mu = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let v = rng.gen_range(0.05..1.5);
            let (m, var, pi) = bg_denoiser(mu, v, prior.lambda, prior.chi[j]).unwrap();
            state.beta_hat[j] = m;
            state.sigma_beta2[j] = var.max(VAR_FLOOR);
            state.nonzero_prob[j] = pi;
        }
        let updated = update_hyperparams(&state, &prior);
        let mean_pi = state.nonzero_prob.sum() / k as f64;
        assert!((updated.lambda - mean_pi).abs() < 1e-12);
        for j in 0..k {
            let expect = state.beta_hat[j].norm_sqr() + state.sigma_beta2[j];
            assert!((updated.chi[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_clamps_at_extremes() {
        let prior = BGPrior { lambda: 0.5, chi: RVec::from_element(4, 1.0) };
        let mut state = MessageState::init(4, &prior);
        state.nonzero_prob.fill(1.0);
        assert!((update_hyperparams(&state, &prior).lambda - (1.0 - LAMBDA_MIN)).abs() < 1e-15);
        state.nonzero_prob.fill(0.0);
        assert!((update_hyperparams(&state, &prior).lambda - LAMBDA_MIN).abs() < 1e-15);
    }

    #[test]
    fn surrogate_finite_and_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = random_model(&mut rng, 16, 8);
        let prior = BGPrior { lambda: 0.3, chi: RVec::from_element(8, 1.0) };
        let beta = draw_sparse(&mut rng, &prior);
        let y = &model.g * &beta;
        let state = MessageState::init(16, &prior);
        let a = evaluate_bfe_surrogate(&state, &model, &y, 0.01, &prior);
        let b = evaluate_bfe_surrogate(&state.clone(), &model, &y, 0.01, &prior);
        assert!(a.is_finite());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_measurement_collapses_to_spike() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = random_model(&mut rng, 20, 10);
        let y = CVec::zeros(20);
        let u = model.g.clone();
        let opts = HmpOptions {
            prior: Some(BGPrior { lambda: 0.2, chi: RVec::from_element(10, 1.0) }),
            ..HmpOptions::default()
        };
        let report = estimate_with_model(&y, &model, &u, 1e-4, &opts).unwrap();
        assert!(report.beta_hat.norm() < 1e-6, "norm {}", report.beta_hat.norm());
    }

    #[test]
    fn fixed_point_is_stationary() {
        // Converge a small well-posed problem hard, then verify a single
        // undamped iteration barely moves the estimate.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = random_model(&mut rng, 24, 6);
        let prior = BGPrior { lambda: 0.3, chi: RVec::from_element(6, 2.0) };
        let mut beta = CVec::zeros(6);
        beta[1] = Complex64::new(1.3, -0.4);
        beta[4] = Complex64::new(-0.7, 0.9);
        let sigma_z2 = 1e-6;
        let mut y = &model.g * &beta;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(22);
        for v in y.iter_mut() {
            let re: f64 = noise_rng.sample(rand_distr::StandardNormal);
            let im: f64 = noise_rng.sample(rand_distr::StandardNormal);
            *v += Complex64::new(re, im) * (sigma_z2 / 2.0f64).sqrt();
        }
        let opts = HmpOptions {
            max_iterations: 3000,
            tolerance: 0.0,
            learn_hyperparams: false,
            prior: Some(prior.clone()),
            ..HmpOptions::default()
        };
        let report = estimate_with_model(&y, &model, &model.g.clone(), sigma_z2, &opts).unwrap();
        let state = report.state;
        let next = hmp_iterate(&state, &model, &y, sigma_z2, &prior).unwrap();
        let change = (&next.beta_hat - &state.beta_hat).norm();
        assert!(change < 1e-10, "fixed-point drift {change}");
    }

    #[test]
    fn toy_matches_support_enumeration() {
        // K = 2, 4 measurements: the exact posterior mean is a sum over the
        // four support patterns; message passing must land on it.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let model = random_model(&mut rng, 4, 2);
        let prior = BGPrior { lambda: 0.4, chi: RVec::from_iterator(2, [1.5, 2.5]) };
        let mut beta = CVec::zeros(2);
        beta[0] = Complex64::new(1.1, 0.6);
        let sigma_z2 = 1e-5;
        let y = &model.g * &beta;
        let opts = HmpOptions {
            max_iterations: 2000,
            tolerance: 1e-14,
            learn_hyperparams: false,
            prior: Some(prior.clone()),
            ..HmpOptions::default()
        };
        let report = estimate_with_model(&y, &model, &model.g.clone(), sigma_z2, &opts).unwrap();
        let exact = crate::baselines::enumerate_mmse(&y, &model.g, sigma_z2, &prior);
        let err = (&report.beta_hat - &exact).norm();
        assert!(err < 1e-6, "toy mismatch {err}");
    }

    #[test]
    fn noiseless_on_support_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let model = random_model(&mut rng, 32, 12);
        let prior = BGPrior { lambda: 0.25, chi: RVec::from_element(12, 2.0) };
        let mut beta = CVec::zeros(12);
        beta[2] = Complex64::new(0.9, -1.1);
        beta[7] = Complex64::new(-1.4, 0.3);
        beta[9] = Complex64::new(0.5, 0.8);
        let y = &model.g * &beta;
        let opts = HmpOptions { max_iterations: 500, tolerance: 1e-12, ..HmpOptions::default() };
        let report = estimate_with_model(&y, &model, &model.g.clone(), 0.0, &opts).unwrap();
        let resid = (&y - &model.g * &report.beta_hat).norm() / y.norm();
        assert!(resid < 1e-5, "noise-free residual {resid}");
    }

    #[test]
    fn variances_stay_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let model = random_model(&mut rng, 30, 40);
        let prior = BGPrior { lambda: 0.1, chi: RVec::from_element(40, 1.0) };
        let beta = draw_sparse(&mut rng, &prior);
        let mut y = &model.g * &beta;
        for v in y.iter_mut() {
            let re: f64 = rng.sample(rand_distr::StandardNormal);
            let im: f64 = rng.sample(rand_distr::StandardNormal);
            *v += Complex64::new(re, im) * 0.05;
        }
        let mut state = MessageState::init(30, &prior);
        for _ in 0..50 {
            state = hmp_iterate(&state, &model, &y, 5e-3, &prior).unwrap();
            assert!(state.sigma_beta2.iter().all(|&v| v > 0.0));
            assert!(state.sigma_s2.iter().all(|&v| v > 0.0));
        }
    }
}
