//! Reference estimators: greedy simultaneous OMP over the beam-delay
//! dictionary, a genie-aided least-squares oracle, and an exact MMSE by
//! support enumeration for toy-sized problems.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hmp::BGPrior;
use crate::{CMat, CVec};

/// Greedy recovery result.
#[derive(Debug, Clone)]
pub struct SompResult {
    /// Selected dictionary indices, in selection order.
    pub support: Vec<usize>,
    /// Least-squares gains on the selected support.
    pub beta_ls: CVec,
    /// Reconstructed channel U[:, support] * beta_ls.
    pub h_hat: CVec,
}

/// Simultaneous OMP: greedy atom selection by residual correlation (columns
/// normalized internally for selection only), least-squares refit after
/// every selection, stopping at `max_atoms` atoms or when the relative
/// residual drops below `residual_tol`. An atom that makes the selected
/// normal equations singular is dropped and barred from reselection.
pub fn somp_estimate(
    y: &CVec,
    g: &CMat,
    u: &CMat,
    max_atoms: usize,
    residual_tol: f64,
) -> Result<SompResult> {
    if g.nrows() != y.len() || u.ncols() != g.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "G {}x{}, U cols {}, y {}",
            g.nrows(),
            g.ncols(),
            u.ncols(),
            y.len()
        )));
    }
    let k = g.ncols();
    let col_norm: Vec<f64> = (0..k).map(|c| g.column(c).norm()).collect();
    let y_norm = y.norm();
    let mut support: Vec<usize> = Vec::new();
    let mut banned = vec![false; k];
    let mut beta = CVec::zeros(0);
    let mut residual = y.clone();

    while support.len() < max_atoms && y_norm > 0.0 && residual.norm() / y_norm > residual_tol {
        let corr = g.ad_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for c in 0..k {
            if banned[c] || support.contains(&c) || col_norm[c] < 1e-300 {
                continue;
            }
            let score = corr[c].norm() / col_norm[c];
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        let Some((atom, score)) = best else { break };
        if score <= 0.0 {
            break;
        }
        support.push(atom);
        match least_squares(y, g, &support) {
            Ok(b) => beta = b,
            Err(_) => {
                // Singular refit: discard the offending atom.
                support.pop();
                banned[atom] = true;
                continue;
            }
        }
        residual = y - columns(g, &support) * &beta;
    }

    let h_hat = if support.is_empty() {
        CVec::zeros(u.nrows())
    } else {
        columns(u, &support) * &beta
    };
    Ok(SompResult { support, beta_ls: beta, h_hat })
}

/// Genie-aided reference: least squares on the true support, reconstructed
/// through the dictionary. Errors when the restricted system is
/// rank-deficient.
pub fn ls_oracle(y: &CVec, g: &CMat, u: &CMat, true_support: &[usize]) -> Result<CVec> {
    if true_support.is_empty() {
        return Ok(CVec::zeros(u.nrows()));
    }
    let beta = least_squares(y, g, true_support)?;
    Ok(columns(u, true_support) * &beta)
}

/// Gather columns of a matrix.
pub fn columns(m: &CMat, idx: &[usize]) -> CMat {
    let mut out = CMat::zeros(m.nrows(), idx.len());
    for (j, &c) in idx.iter().enumerate() {
        out.set_column(j, &m.column(c));
    }
    out
}

/// Least squares via the normal equations; `None` from the Cholesky
/// factorization is reported as rank deficiency.
fn least_squares(y: &CVec, g: &CMat, support: &[usize]) -> Result<CVec> {
    let gs = columns(g, support);
    let gram = gs.ad_mul(&gs);
    let rhs = gs.ad_mul(y);
    let chol = nalgebra::Cholesky::new(gram).ok_or(Error::RankDeficient(support.len()))?;
    Ok(chol.solve(&rhs))
}

/// Exact MMSE estimate of Bernoulli-Gaussian gains by enumerating all 2^K
/// support patterns (K <= ~16). For support S the data covariance is
/// C_S = G_S diag(chi_S) G_S^H + sigma_z^2 I and the conditional mean is
/// diag(chi_S) G_S^H C_S^{-1} y; patterns are weighted by prior times
/// Gaussian evidence, combined through log-sum-exp.
pub fn enumerate_mmse(y: &CVec, g: &CMat, sigma_z2: f64, prior: &BGPrior) -> CVec {
    let k = g.ncols();
    let m = g.nrows();
    assert!(k <= 20, "support enumeration is exponential in K");
    let sigma_z2 = sigma_z2.max(1e-300);
    let mut log_weights = Vec::with_capacity(1 << k);
    let mut means = Vec::with_capacity(1 << k);

    for mask in 0u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|&j| mask >> j & 1 == 1).collect();
        let mut log_prior = 0.0;
        for j in 0..k {
            log_prior += if mask >> j & 1 == 1 { prior.lambda.ln() } else { (1.0 - prior.lambda).ln() };
        }
        if support.is_empty() {
            let log_ev = -y.norm_squared() / sigma_z2 - m as f64 * sigma_z2.ln();
            log_weights.push(log_prior + log_ev);
            means.push(CVec::zeros(k));
            continue;
        }
        let gs = columns(g, &support);
        let mut c = CMat::identity(m, m) * Complex64::new(sigma_z2, 0.0);
        for (a, &ja) in support.iter().enumerate() {
            let chi_a = prior.chi[ja];
            for r in 0..m {
                for s in 0..m {
                    c[(r, s)] += gs[(r, a)] * gs[(s, a)].conj() * chi_a;
                }
            }
        }
        let chol = match nalgebra::Cholesky::new(c) {
            Some(ch) => ch,
            None => continue,
        };
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum();
        let solved = chol.solve(y);
        let quad = y.dotc(&solved).re;
        let log_ev = -quad - log_det;
        let mut mean = CVec::zeros(k);
        let gh_solved = gs.ad_mul(&solved);
        for (a, &ja) in support.iter().enumerate() {
            mean[ja] = gh_solved[a] * prior.chi[ja];
        }
        log_weights.push(log_prior + log_ev);
        means.push(mean);
    }

    let max_lw = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut beta = CVec::zeros(k);
    for (lw, mean) in log_weights.iter().zip(means.iter()) {
        let w = (lw - max_lw).exp();
        total += w;
        beta += mean * Complex64::new(w, 0.0);
    }
    beta / Complex64::new(total, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RVec;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_g<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
        let scale = 1.0 / (rows as f64).sqrt();
        CMat::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal)) * scale
        })
    }

    #[test]
    fn zero_signal_empty_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_g(&mut rng, 16, 32);
        let y = CVec::zeros(16);
        let out = somp_estimate(&y, &g, &g, 5, 1e-6).unwrap();
        assert!(out.support.is_empty());
        assert_eq!(out.h_hat.norm(), 0.0);
    }

    #[test]
    fn zero_budget_empty_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_g(&mut rng, 16, 32);
        let y = CVec::from_element(16, Complex64::new(1.0, 0.0));
        let out = somp_estimate(&y, &g, &g, 0, 1e-6).unwrap();
        assert!(out.support.is_empty());
    }

    #[test]
    fn exact_recovery_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_g(&mut rng, 48, 96);
        let mut beta = CVec::zeros(96);
        beta[10] = Complex64::new(1.0, 0.5);
        beta[57] = Complex64::new(-0.8, 0.2);
        let y = &g * &beta;
        let out = somp_estimate(&y, &g, &g, 4, 1e-10).unwrap();
        let mut s = out.support.clone();
        s.sort_unstable();
        assert_eq!(s, vec![10, 57]);
        let err = (&out.h_hat - &y).norm() / y.norm();
        assert!(20.0 * err.log10() < -60.0, "relative error {err}");
    }

    #[test]
    fn residual_norm_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_g(&mut rng, 32, 64);
        let mut y = CVec::zeros(32);
        for v in y.iter_mut() {
            *v = Complex64::new(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
        }
        // Re-run with increasing budgets; the residual of a nested LS fit
        // cannot grow.
        let mut last = y.norm();
        for budget in 1..=8 {
            let out = somp_estimate(&y, &g, &g, budget, 0.0).unwrap();
            let resid = (&y - columns(&g, &out.support) * &out.beta_ls).norm();
            assert!(resid <= last + 1e-9, "budget {budget}: {resid} > {last}");
            last = resid;
        }
    }

    #[test]
    fn oracle_exact_on_noiseless_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_g(&mut rng, 24, 48);
        let mut beta = CVec::zeros(48);
        beta[3] = Complex64::new(0.3, -1.2);
        beta[30] = Complex64::new(1.1, 0.4);
        let y = &g * &beta;
        let h = ls_oracle(&y, &g, &g, &[3, 30]).unwrap();
        let err = (&h - &y).norm() / y.norm();
        assert!(10.0 * (err * err).log10() < -120.0, "oracle nmse {err}");
        assert_eq!(ls_oracle(&y, &g, &g, &[]).unwrap().norm(), 0.0);
    }

    #[test]
    fn oracle_rejects_duplicate_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_g(&mut rng, 16, 8);
        let y = CVec::from_element(16, Complex64::new(1.0, 0.0));
        assert!(matches!(ls_oracle(&y, &g, &g, &[2, 2]), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn enumeration_agrees_with_closed_form_gaussian() {
        // With lambda ~ 1 the enumeration must reproduce the linear MMSE of
        // the all-on Gaussian model.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 4;
        let g = random_g(&mut rng, 12, k);
        let chi = RVec::from_element(k, 2.0);
        let prior = BGPrior { lambda: 1.0 - 1e-12, chi: chi.clone() };
        let mut y = CVec::zeros(12);
        for v in y.iter_mut() {
            *v = Complex64::new(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
        }
        let sigma_z2 = 0.1;
        let beta = enumerate_mmse(&y, &g, sigma_z2, &prior);
        // (G^H G / s + diag(1/chi))^-1 G^H y / s
        let mut a = g.ad_mul(&g) / Complex64::new(sigma_z2, 0.0);
        for j in 0..k {
            a[(j, j)] += Complex64::new(1.0 / chi[j], 0.0);
        }
        let rhs = g.ad_mul(&y) / Complex64::new(sigma_z2, 0.0);
        let expect = nalgebra::Cholesky::new(a).unwrap().solve(&rhs);
        assert!((&beta - &expect).norm() < 1e-8);
    }
}
