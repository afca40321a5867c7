use bdce_core::*;
use bdce_core::channel::*;
use bdce_core::dictionary::*;
use bdce_core::experiment::*;
use bdce_core::grid::*;
use bdce_core::hmp::*;
use bdce_core::measurement::*;
use bdce_core::mdgpp::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let cfg = ScenarioConfig::desk_scale();
    let grid = build_grid(&cfg, 0.5).unwrap();
    let dict = build_dictionary(&grid, &cfg).unwrap();

    for seed in [7u64, 8, 9] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths = sample_paths(&mut rng, &cfg);
        let h = synthesize_channel(&paths, &cfg).unwrap();
        let precoder = build_precoder(&mut rng, &cfg);
        let s = apply_measurement(&h, &precoder).unwrap();
        let sigma_z2 = calibrate_noise(&s, 15.0).unwrap();
        let y = add_noise(&s, sigma_z2, &mut rng).y;
        let g = measure_matrix(&dict.u, &precoder).unwrap();
        let model = HmpModel::new(g);

        let report = estimate_with_model(&y, &model, &dict.u, sigma_z2, &HmpOptions::default()).unwrap();
        let hmp_nmse = nmse_db(&[report.h_hat.clone()], &[h.h.clone()]).unwrap();

        for t_ref in [30usize, 100] {
            let ts_opts = TwoStageOptions { n_refine_iterations: t_ref, ..TwoStageOptions::default() };
            let ts = two_stage_with_model(&y, &dict, &precoder, &model, sigma_z2, &ts_opts).unwrap();
            let md = nmse_db(&[ts.report.h_hat.clone()], &[h.h.clone()]).unwrap();
            let last = ts.refinement_trace.last().unwrap();
            println!("seed {seed} T_ref {t_ref:3}: hmp {hmp_nmse:6.2} dB  mdgpp {md:6.2} dB  gap {:5.2}  K_ref {}  resid {:.4}  dpsi {:.2e}/{:.2e} deta {:.2e}/{:.2e}",
                hmp_nmse - md, ts.support.len(), last.residual_ratio,
                last.max_d_psi, grid.psi_delta/2.0, last.max_d_eta, grid.eta_delta/2.0);
        }
    }

    // On-grid sanity: perturbations should stay near zero.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (paths, _sup) = sample_on_grid_paths(&mut rng, &cfg, &grid);
    let h = synthesize_channel(&paths, &cfg).unwrap();
    let precoder = build_precoder(&mut rng, &cfg);
    let s = apply_measurement(&h, &precoder).unwrap();
    let sigma_z2 = calibrate_noise(&s, 40.0).unwrap();
    let y = add_noise(&s, sigma_z2, &mut rng).y;
    let ts = two_stage_estimate(&y, &dict, &precoder, sigma_z2, &TwoStageOptions::default()).unwrap();
    let p = ts.perturbations.as_ref().unwrap();
    println!("on-grid: K_ref {}  |dpsi| {:.3e} (box {:.3e})  |deta| {:.3e} (box {:.3e})  |dtau| {:.3e} (box {:.3e})",
        ts.support.len(), p.d_psi.amax(), p.psi_bound, p.d_eta.amax(), p.eta_bound, p.d_tau.amax(), p.tau_bound);
    let md = nmse_db(&[ts.report.h_hat.clone()], &[h.h.clone()]).unwrap();
    let s1 = nmse_db(&[ts.stage1.h_hat.clone()], &[h.h.clone()]).unwrap();
    println!("on-grid: stage1 {s1:.1} dB refined {md:.1} dB");
}
