//! Oracle and property checks runnable from the CLI (`bdce selftest`).
//!
//! These are the independent references the test suite is built on:
//! numerical quadrature for the spike-and-slab denoiser, central finite
//! differences for the dictionary derivatives, and projected gradient
//! descent for the box QP. They live in the library so the CLI and the
//! acceptance suite share one implementation.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::ls_oracle;
use crate::channel::{amplitude_steering, beam_steering, delay_steering, phase_steering};
use crate::config::ScenarioConfig;
use crate::dictionary::{basis_column, build_dictionary};
use crate::experiment::{nmse_db, sample_on_grid_paths};
use crate::grid::{build_grid, index_map};
use crate::hmp::{bg_denoiser, estimate_with_model, HmpModel, HmpOptions};
use crate::measurement::{apply_measurement, build_precoder, measure_matrix};
use crate::mdgpp::{qp_objective, solve_qp_box, QpProblem};
use crate::{RMat, RVec, C64};

/// Result of one check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Numerical moments of the spike-and-slab posterior
/// prop_to [(1-lambda) delta(b) + lambda CN(b; 0, chi)] CN(b; mu, v),
/// midpoint rule on an n x n grid over |Re|, |Im| <= 6 sqrt(chi + v); the
/// spike handled analytically. Returns (mean, variance, nonzero prob).
pub fn quadrature_bg_moments(mu: C64, v: f64, lambda: f64, chi: f64, n: usize) -> (C64, f64, f64) {
    let half = 6.0 * (chi + v).sqrt();
    let step = 2.0 * half / n as f64;
    let gauss = |x: C64, m: C64, var: f64| (-(x - m).norm_sqr() / var).exp() / (std::f64::consts::PI * var);
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
    (mean, var, slab_w / z)
}

/// Projected gradient descent for min x^T P x - 2 u^T x over |x_i| <= bound,
/// with the step from the largest eigenvalue (power iteration). Independent
/// of the coordinate-descent solver it checks.
pub fn projected_gradient_box_qp(p: &RMat, u: &RVec, bound: f64, max_iter: usize, tol: f64) -> RVec {
    let k = p.nrows();
    let mut v = RVec::from_element(k, 1.0 / (k as f64).sqrt());
    let mut lip = 1.0;
    for _ in 0..200 {
        let w = p * &v;
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        lip = norm;
        v = w / norm;
    }
    let step = 1.0 / (2.0 * lip.max(1e-12));
    let mut x = RVec::zeros(k);
    for _ in 0..max_iter {
        let grad = p * &x * 2.0 - u * 2.0;
        let next = (&x - &grad * step).map(|v| v.clamp(-bound, bound));
        let change = (&next - &x).norm();
        x = next;
        if change < tol {
            break;
        }
    }
    x
}

/// Run all checks; each entry reports pass/fail plus a one-line detail.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        denoiser_check(),
        derivative_check(),
        qp_check(),
        recovery_check(),
        steering_check(),
    ]
}

fn denoiser_check() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let lambda: f64 = rng.gen_range(0.05..0.95);
        let chi: f64 = rng.gen_range(0.1..5.0);
        let v: f64 = rng.gen_range(0.05..2.0);
        let scale = (chi + v).sqrt();
        let mu = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)) * scale;
        let (mean, var, pi) = bg_denoiser(mu, v, lambda, chi).expect("valid inputs");
        let (qm, qv, qpi) = quadrature_bg_moments(mu, v, lambda, chi, 400);
        worst = worst.max((mean - qm).norm()).max((var - qv).abs()).max((pi - qpi).abs());
    }
    CheckResult {
        name: "denoiser-vs-quadrature",
        passed: worst < 1e-8,
        detail: format!("max moment error {worst:.3e} (tolerance 1e-8)"),
    }
}

fn derivative_check() -> CheckResult {
    let mut cfg = ScenarioConfig::desk_scale();
    cfg.n_antennas = 16;
    cfg.n_pilot_subcarriers = 8;
    let grid = build_grid(&cfg, 0.5).expect("grid");
    let dict = build_dictionary(&grid, &cfg).expect("dictionary");
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let k = rng.gen_range(0..dict.n_columns());
        let (psi, eta, tau) = grid.tuple(k).expect("tuple");
        for (deriv, axis, delta) in [
            (dict.u_psi.column(k), 0, grid.psi_delta),
            (dict.u_eta.column(k), 1, grid.eta_delta),
            (dict.u_tau.column(k), 2, grid.tau_delta),
        ] {
            let h = 1e-6 * delta;
            let (mut a, mut b) = ((psi, eta, tau), (psi, eta, tau));
            match axis {
                0 => {
                    a.0 += h;
                    b.0 -= h;
                }
                1 => {
                    a.1 += h;
                    b.1 -= h;
                }
                _ => {
                    a.2 += h;
                    b.2 -= h;
                }
            }
            let fd = (basis_column(a.0, a.1, a.2, &cfg) - basis_column(b.0, b.1, b.2, &cfg))
                / Complex64::new(2.0 * h, 0.0);
            worst = worst.max((deriv - &fd).norm() / fd.norm());
        }
    }
    CheckResult {
        name: "dictionary-derivatives-vs-finite-differences",
        passed: worst < 1e-5,
        detail: format!("max relative error {worst:.3e} (tolerance 1e-5)"),
    }
}

fn qp_check() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for i in 0..10 {
        let k = rng.gen_range(2..=6);
        let a = RMat::from_fn(k + 2, k, |_, _| rng.gen_range(-1.0..1.0));
        let p = a.transpose() * &a;
        let scale = if i % 2 == 0 { 2.0 } else { 0.05 };
        let u = RVec::from_fn(k, |_, _| rng.gen_range(-scale..scale));
        let qp = QpProblem { p, u, bound: 0.5 };
        let x = solve_qp_box(&qp, 300);
        let reference = projected_gradient_box_qp(&qp.p, &qp.u, qp.bound, 200_000, 1e-13);
        worst = worst.max(qp_objective(&qp, &x) - qp_objective(&qp, &reference));
    }
    CheckResult {
        name: "box-qp-vs-projected-gradient",
        passed: worst < 1e-6,
        detail: format!("max objective excess {worst:.3e} (tolerance 1e-6)"),
    }
}

fn recovery_check() -> CheckResult {
    let mut cfg = ScenarioConfig::desk_scale();
    cfg.n_antennas = 16;
    cfg.n_pilot_subcarriers = 8;
    cfg.n_rf_chains = 4;
    cfg.n_pilot_symbols = 4;
    cfg.n_paths = 2;
    let grid = build_grid(&cfg, 0.5).expect("grid");
    let dict = build_dictionary(&grid, &cfg).expect("dictionary");
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (paths, support) = sample_on_grid_paths(&mut rng, &cfg, &grid);
    let h = crate::channel::synthesize_channel(&paths, &cfg).expect("channel");
    let precoder = build_precoder(&mut rng, &cfg);
    let y = apply_measurement(&h, &precoder).expect("measurement");
    let g = measure_matrix(&dict.u, &precoder).expect("measured dictionary");
    let model = HmpModel::new(g);
    let report = estimate_with_model(&y, &model, &dict.u, 0.0, &HmpOptions::default()).expect("estimate");
    let hmp_nmse = nmse_db(&[report.h_hat], &[h.h.clone()]).expect("nmse");
    let oracle = ls_oracle(&y, &model.g, &dict.u, &support).expect("oracle");
    let oracle_nmse = nmse_db(&[oracle], &[h.h]).expect("nmse");
    CheckResult {
        name: "on-grid-noiseless-recovery",
        passed: hmp_nmse <= -40.0 && oracle_nmse <= -120.0,
        detail: format!("hmp {hmp_nmse:.1} dB (<= -40), oracle {oracle_nmse:.1} dB (<= -120)"),
    }
}

fn steering_check() -> CheckResult {
    let cfg = ScenarioConfig::desk_scale();
    let grid = build_grid(&cfg, 0.5).expect("grid");
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut ok = true;
    let mut detail = String::from("1000 random draws within tolerance");
    for k in 0..grid.len() {
        let (a, s, d) = index_map(k, &grid).expect("in range");
        if crate::grid::flat_index(a, s, d, &grid).expect("in range") != k {
            ok = false;
            detail = format!("index map round trip failed at {k}");
            break;
        }
    }
    for _ in 0..1000 {
        let psi = rng.gen_range(-1.0..1.0);
        let eta = rng.gen_range(0.0..cfg.eta_max());
        let f = rng.gen_range(29e9..31e9);
        let tau = rng.gen_range(0.0..cfg.tau_max());
        let ph = phase_steering(eta, psi, f, &cfg);
        if ph.iter().any(|v| (v.norm() - 1.0).abs() > 1e-12) {
            ok = false;
            detail = "phase steering left the unit circle".into();
            break;
        }
        let de = delay_steering(tau, &cfg);
        if de.iter().any(|v| (v.norm() - 1.0).abs() > 1e-12) {
            ok = false;
            detail = "delay steering left the unit circle".into();
            break;
        }
        if crate::channel::amplitude_model_valid(eta, psi, &cfg) {
            if let Ok(c) = beam_steering(eta, psi, f, &cfg) {
                if (c.norm() - 1.0).abs() > 1e-12 {
                    ok = false;
                    detail = "beam steering norm drifted".into();
                    break;
                }
            }
        }
        let far = amplitude_steering(0.0, psi, &cfg).expect("far field");
        let uniform = 1.0 / (cfg.n_antennas as f64).sqrt();
        if far.iter().any(|&v| (v - uniform).abs() > 1e-12) {
            ok = false;
            detail = "far-field amplitude not uniform".into();
            break;
        }
    }
    CheckResult { name: "steering-invariants", passed: ok, detail }
}
