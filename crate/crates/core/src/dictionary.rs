//! Beam-delay transformation matrix U and its partial derivatives.
//!
//! Column k of U is the steering vector of grid tuple k:
//! `[d(tau) (x) 1_N] .* cbar(eta, psi)`, element `p*N + n` being
//! `exp(-j 2 pi f_p tau) * a_n(eta, psi, f_p) * b_n(eta, psi)`. U_psi,
//! U_eta and U_tau hold the derivative of each column with respect to its
//! own grid parameter; the off-grid refinement consumes them every
//! iteration, so they are analytic rather than finite-differenced.
//!
//! Columns are materialized densely. Grid corners where the near-field
//! distance terms go non-positive (combinations of extreme angle and slope
//! no physical path can reach) keep their closed-form columns with
//! sign-flipped amplitude entries so the dictionary stays complete.

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::channel::amplitude_steering_unchecked;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::grid::SamplingGrid;
use crate::{CMat, CVec, C64, SPEED_OF_LIGHT};

/// Default cap on the dictionary allocation (all four matrices).
pub const DEFAULT_MEMORY_LIMIT: usize = 4 << 30;

/// Dense transformation matrix with its three derivative matrices, all
/// (N * Np) x K. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub u: CMat,
    pub u_psi: CMat,
    pub u_eta: CMat,
    pub u_tau: CMat,
    pub grid: SamplingGrid,
}

impl Dictionary {
    pub fn n_rows(&self) -> usize {
        self.u.nrows()
    }
    pub fn n_columns(&self) -> usize {
        self.u.ncols()
    }
}

/// Basis column at an arbitrary (psi, eta, tau) tuple, using the same
/// generator as the dictionary columns. Useful as an oracle for the
/// Taylor-linearized model and for finite-difference checks.
pub fn basis_column(psi: f64, eta: f64, tau: f64, cfg: &ScenarioConfig) -> CVec {
    let n = cfg.n_antennas;
    let np = cfg.n_pilot_subcarriers;
    let amp = amplitude_steering_unchecked(eta, psi, cfg);
    let d = cfg.antenna_spacing();
    let mut col = CVec::zeros(n * np);
    for p in 0..np {
        let f = cfg.fc + (p as f64 - np as f64 / 2.0) * cfg.df_pilot;
        let k_wave = 2.0 * std::f64::consts::PI * f / SPEED_OF_LIGHT;
        let delay = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * tau);
        for i in 0..n {
            let dn = i as f64 - cfg.reference_antenna as f64;
            let phase = Complex64::from_polar(1.0, -k_wave * (dn * d * psi + dn * dn * d * d * eta));
            col[p * n + i] = delay * phase * amp[i];
        }
    }
    col
}

/// Estimated allocation in bytes for the four dense matrices.
pub fn dictionary_bytes(cfg: &ScenarioConfig, grid: &SamplingGrid) -> usize {
    cfg.channel_len() * grid.len() * std::mem::size_of::<C64>() * 4
}

/// Build U, U_psi, U_eta, U_tau with the default memory limit.
pub fn build_dictionary(grid: &SamplingGrid, cfg: &ScenarioConfig) -> Result<Dictionary> {
    build_dictionary_with_limit(grid, cfg, DEFAULT_MEMORY_LIMIT)
}

/// Build the dictionary, rejecting configurations whose dense matrices
/// would exceed `limit_bytes` (the error carries the sizing report).
pub fn build_dictionary_with_limit(
    grid: &SamplingGrid,
    cfg: &ScenarioConfig,
    limit_bytes: usize,
) -> Result<Dictionary> {
    let rows = cfg.channel_len();
    let cols = grid.len();
    let required = dictionary_bytes(cfg, grid);
    if required > limit_bytes {
        return Err(Error::DictionaryTooLarge {
            required_bytes: required,
            limit_bytes,
            rows,
            cols,
        });
    }

    let n = cfg.n_antennas;
    let np = cfg.n_pilot_subcarriers;
    let d = cfg.antenna_spacing();
    let mut u = CMat::zeros(rows, cols);
    let mut u_psi = CMat::zeros(rows, cols);
    let mut u_eta = CMat::zeros(rows, cols);
    let mut u_tau = CMat::zeros(rows, cols);

    // The beam part and its derivatives depend only on (psi, eta); reuse
    // them across the delay axis.
    let pilot_freqs: Vec<f64> = (0..np)
        .map(|p| cfg.fc + (p as f64 - np as f64 / 2.0) * cfg.df_pilot)
        .collect();

    for (k_an, &psi) in grid.psi_grid.iter().enumerate() {
        for (k_sl, &eta) in grid.eta_grid.iter().enumerate() {
            let beam = BeamWithDerivatives::evaluate(psi, eta, &pilot_freqs, d, cfg);
            for (k_de, &tau) in grid.tau_grid.iter().enumerate() {
                let k = k_de * grid.k_an() * grid.k_sl() + k_an * grid.k_sl() + k_sl;
                for p in 0..np {
                    let f = pilot_freqs[p];
                    let delay = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * tau);
                    let dtau_factor = Complex64::new(0.0, -2.0 * std::f64::consts::PI * f);
                    for i in 0..n {
                        let row = p * n + i;
                        let idx = p * n + i;
                        let value = delay * beam.c[idx];
                        u[(row, k)] = value;
                        u_psi[(row, k)] = delay * beam.dc_dpsi[idx];
                        u_eta[(row, k)] = delay * beam.dc_deta[idx];
                        u_tau[(row, k)] = dtau_factor * value;
                    }
                }
            }
        }
    }

    Ok(Dictionary { u, u_psi, u_eta, u_tau, grid: grid.clone() })
}

/// Aggregate beam steering vector over all subcarriers together with its
/// angle and slope derivatives, length N * Np each.
struct BeamWithDerivatives {
    c: Vec<C64>,
    dc_dpsi: Vec<C64>,
    dc_deta: Vec<C64>,
}

impl BeamWithDerivatives {
    fn evaluate(psi: f64, eta: f64, pilot_freqs: &[f64], d: f64, cfg: &ScenarioConfig) -> Self {
        let n = cfg.n_antennas;
        let np = pilot_freqs.len();
        let n_o = cfg.reference_antenna as f64;

        // Amplitude profile: b_i = rho / den_i with den_i the per-antenna
        // distance term and r = (1 - psi^2) / eta folded in. The grid only
        // samples eta > 0, so the near-field branch always applies here.
        let r = (1.0 - psi * psi) / eta;
        let mut den = vec![0.0; n];
        let mut dden_dpsi = vec![0.0; n];
        let mut dden_deta = vec![0.0; n];
        for i in 0..n {
            let dn = i as f64 - n_o;
            den[i] = r + dn * d * psi + dn * dn * d * d * eta;
            dden_dpsi[i] = -2.0 * psi / eta + dn * d;
            dden_deta[i] = -(1.0 - psi * psi) / (eta * eta) + dn * dn * d * d;
        }
        let s: f64 = den.iter().map(|&t| 1.0 / (t * t)).sum();
        let rho = 1.0 / s.sqrt();
        // d rho / dx = rho^3 * sum den^-3 * d den / dx
        let rho3 = rho * rho * rho;
        let drho_dpsi: f64 = rho3 * den.iter().zip(&dden_dpsi).map(|(&t, &dt)| dt / (t * t * t)).sum::<f64>();
        let drho_deta: f64 = rho3 * den.iter().zip(&dden_deta).map(|(&t, &dt)| dt / (t * t * t)).sum::<f64>();

        let mut b = vec![0.0; n];
        let mut db_dpsi = vec![0.0; n];
        let mut db_deta = vec![0.0; n];
        for i in 0..n {
            b[i] = rho / den[i];
            db_dpsi[i] = drho_dpsi / den[i] - rho * dden_dpsi[i] / (den[i] * den[i]);
            db_deta[i] = drho_deta / den[i] - rho * dden_deta[i] / (den[i] * den[i]);
        }

        let mut c = vec![C64::default(); n * np];
        let mut dc_dpsi = vec![C64::default(); n * np];
        let mut dc_deta = vec![C64::default(); n * np];
        for (p, &f) in pilot_freqs.iter().enumerate() {
            let k_wave = 2.0 * std::f64::consts::PI * f / SPEED_OF_LIGHT;
            for i in 0..n {
                let dn = i as f64 - n_o;
                let phase = Complex64::from_polar(1.0, -k_wave * (dn * d * psi + dn * dn * d * d * eta));
                let dphase_dpsi = phase * Complex64::new(0.0, -k_wave * dn * d);
                let dphase_deta = phase * Complex64::new(0.0, -k_wave * dn * dn * d * d);
                let idx = p * n + i;
                c[idx] = phase * b[i];
                dc_dpsi[idx] = dphase_dpsi * b[i] + phase * db_dpsi[i];
                dc_deta[idx] = dphase_deta * b[i] + phase * db_deta[i];
            }
        }
        Self { c, dc_dpsi, dc_deta }
    }
}

// ---------------------------------------------------------------------------
// Binary cache
// ---------------------------------------------------------------------------
//
// Layout (little endian):
//   magic "BDDC", format version u32,
//   32-byte key (sha256 over scenario fields and grid geometry),
//   k_an u64, k_sl u64, k_de u64, slope_fallback u8,
//   psi_delta f64, eta_delta f64, tau_delta f64,
//   psi/eta/tau grid values (f64 each),
//   rows u64, cols u64,
//   four matrices in order u, u_psi, u_eta, u_tau, column-major,
//   each element as re f64, im f64.

const CACHE_MAGIC: &[u8; 4] = b"BDDC";
const CACHE_VERSION: u32 = 1;

/// Cache key tying a file to the scenario and grid that produced it.
pub fn cache_key(cfg: &ScenarioConfig, grid: &SamplingGrid) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for v in [
        cfg.fc,
        cfg.df_pilot,
        cfg.r_min,
        cfg.tau_max(),
        grid.psi_delta,
        grid.eta_delta,
        grid.tau_delta,
    ] {
        hasher.update(v.to_le_bytes());
    }
    for v in [
        cfg.n_antennas,
        cfg.n_pilot_subcarriers,
        cfg.reference_antenna,
        grid.k_an(),
        grid.k_sl(),
        grid.k_de(),
        grid.slope_fallback as usize,
    ] {
        hasher.update((v as u64).to_le_bytes());
    }
    hasher.finalize().into()
}

impl Dictionary {
    /// Write the dictionary (and grid) to a cache file.
    pub fn save_cache(&self, path: &std::path::Path, key: &[u8; 32]) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(key)?;
        for v in [self.grid.k_an(), self.grid.k_sl(), self.grid.k_de()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&[self.grid.slope_fallback as u8])?;
        for v in [self.grid.psi_delta, self.grid.eta_delta, self.grid.tau_delta] {
            w.write_all(&v.to_le_bytes())?;
        }
        for axis in [&self.grid.psi_grid, &self.grid.eta_grid, &self.grid.tau_grid] {
            for &v in axis {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&(self.u.nrows() as u64).to_le_bytes())?;
        w.write_all(&(self.u.ncols() as u64).to_le_bytes())?;
        for m in [&self.u, &self.u_psi, &self.u_eta, &self.u_tau] {
            for v in m.iter() {
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load a cached dictionary, verifying the key.
    pub fn load_cache(path: &std::path::Path, key: &[u8; 32]) -> Result<Self> {
        use std::io::Read;
        let file = std::fs::File::open(path).map_err(|e| Error::CacheIo(e.to_string()))?;
        let mut r = std::io::BufReader::new(file);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::CacheFormat("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CACHE_VERSION {
            return Err(Error::CacheFormat(format!("unsupported version {version}")));
        }
        let mut file_key = [0u8; 32];
        r.read_exact(&mut file_key)?;
        if &file_key != key {
            return Err(Error::CacheFormat("cache key mismatch".into()));
        }
        let k_an = read_u64(&mut r)? as usize;
        let k_sl = read_u64(&mut r)? as usize;
        let k_de = read_u64(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let psi_delta = read_f64(&mut r)?;
        let eta_delta = read_f64(&mut r)?;
        let tau_delta = read_f64(&mut r)?;
        let psi_grid = read_f64_vec(&mut r, k_an)?;
        let eta_grid = read_f64_vec(&mut r, k_sl)?;
        let tau_grid = read_f64_vec(&mut r, k_de)?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if cols != k_an * k_sl * k_de {
            return Err(Error::CacheFormat("inconsistent dimensions".into()));
        }
        let mut matrices = Vec::with_capacity(4);
        for _ in 0..4 {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let re = read_f64(&mut r)?;
                let im = read_f64(&mut r)?;
                data.push(Complex64::new(re, im));
            }
            matrices.push(CMat::from_vec(rows, cols, data));
        }
        let u_tau = matrices.pop().unwrap();
        let u_eta = matrices.pop().unwrap();
        let u_psi = matrices.pop().unwrap();
        let u = matrices.pop().unwrap();
        Ok(Self {
            u,
            u_psi,
            u_eta,
            u_tau,
            grid: SamplingGrid {
                psi_grid,
                eta_grid,
                tau_grid,
                psi_delta,
                eta_delta,
                tau_delta,
                slope_fallback: flag[0] != 0,
            },
        })
    }
}

fn read_u32<R: std::io::Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: std::io::Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: std::io::Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64_vec<R: std::io::Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    (0..len).map(|_| read_f64(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::desk_scale();
        cfg.n_antennas = 16;
        cfg.n_pilot_subcarriers = 8;
        cfg
    }

    #[test]
    fn column_norms_are_sqrt_np() {
        let cfg = small_cfg();
        let grid = build_grid(&cfg, 0.5).unwrap();
        let dict = build_dictionary(&grid, &cfg).unwrap();
        let expect = (cfg.n_pilot_subcarriers as f64).sqrt();
        for k in 0..dict.n_columns() {
            assert!((dict.u.column(k).norm() - expect).abs() < 1e-10, "column {k}");
        }
    }

    #[test]
    fn columns_match_basis_generator() {
        let cfg = small_cfg();
        let grid = build_grid(&cfg, 0.5).unwrap();
        let dict = build_dictionary(&grid, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let k = rng.gen_range(0..dict.n_columns());
            let (psi, eta, tau) = grid.tuple(k).unwrap();
            let col = basis_column(psi, eta, tau, &cfg);
            assert!((dict.u.column(k) - col).norm() < 1e-12);
        }
    }

    #[test]
    fn tau_derivative_is_scaled_column() {
        let cfg = small_cfg();
        let grid = build_grid(&cfg, 0.5).unwrap();
        let dict = build_dictionary(&grid, &cfg).unwrap();
        let n = cfg.n_antennas;
        for k in [0, dict.n_columns() / 2, dict.n_columns() - 1] {
            for p in 0..cfg.n_pilot_subcarriers {
                let f = cfg.fc + (p as f64 - cfg.n_pilot_subcarriers as f64 / 2.0) * cfg.df_pilot;
                for i in 0..n {
                    let row = p * n + i;
                    let expect = dict.u[(row, k)] * Complex64::new(0.0, -2.0 * std::f64::consts::PI * f);
                    assert!((dict.u_tau[(row, k)] - expect).norm() < 1e-6 * expect.norm());
                }
            }
        }
    }

    #[test]
    fn psi_eta_derivatives_match_finite_differences() {
        let cfg = small_cfg();
        let grid = build_grid(&cfg, 0.5).unwrap();
        let dict = build_dictionary(&grid, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..8 {
            let k = rng.gen_range(0..dict.n_columns());
            let (psi, eta, tau) = grid.tuple(k).unwrap();

            let h = 1e-6 * grid.psi_delta;
            let fd = (basis_column(psi + h, eta, tau, &cfg) - basis_column(psi - h, eta, tau, &cfg)) / Complex64::new(2.0 * h, 0.0);
            let err = (dict.u_psi.column(k) - &fd).norm() / fd.norm();
            assert!(err < 1e-5, "psi derivative rel err {err} at column {k}");

            let h = 1e-6 * grid.eta_delta;
            let fd = (basis_column(psi, eta + h, tau, &cfg) - basis_column(psi, eta - h, tau, &cfg)) / Complex64::new(2.0 * h, 0.0);
            let err = (dict.u_eta.column(k) - &fd).norm() / fd.norm();
            assert!(err < 1e-5, "eta derivative rel err {err} at column {k}");
        }
    }

    #[test]
    fn memory_limit_is_enforced() {
        let cfg = small_cfg();
        let grid = build_grid(&cfg, 0.5).unwrap();
        let err = build_dictionary_with_limit(&grid, &cfg, 1024);
        match err {
            Err(Error::DictionaryTooLarge { required_bytes, limit_bytes, .. }) => {
                assert!(required_bytes > limit_bytes);
            }
            other => panic!("expected sizing error, got {other:?}"),
        }
    }

    #[test]
    fn cache_round_trip() {
        let cfg = small_cfg();
        let grid = build_grid(&cfg, 0.5).unwrap();
        let dict = build_dictionary(&grid, &cfg).unwrap();
        let key = cache_key(&cfg, &grid);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.bin");
        dict.save_cache(&path, &key).unwrap();
        let loaded = Dictionary::load_cache(&path, &key).unwrap();
        assert_eq!(dict, loaded);
        // Wrong key must be rejected.
        let mut bad = key;
        bad[0] ^= 1;
        assert!(Dictionary::load_cache(&path, &bad).is_err());
    }
}
