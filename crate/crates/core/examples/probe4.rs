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

    for e_th in [0.05f64, 0.15, 0.3, 0.5] {
        let mut gaps = vec![];
        let mut hmps = vec![];
        let mut mds = vec![];
        let mut krefs = vec![];
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let paths = sample_paths(&mut rng, &cfg);
            let h = synthesize_channel(&paths, &cfg).unwrap();
            let precoder = build_precoder(&mut rng, &cfg);
            let s = apply_measurement(&h, &precoder).unwrap();
            let sigma_z2 = calibrate_noise(&s, 15.0).unwrap();
            let y = add_noise(&s, sigma_z2, &mut rng).y;
            let g = measure_matrix(&dict.u, &precoder).unwrap();
            let model = HmpModel::new(g);
            let hmp_rep = estimate_with_model(&y, &model, &dict.u, sigma_z2, &HmpOptions::default()).unwrap();
            let ts_opts = TwoStageOptions { energy_threshold: e_th, ..TwoStageOptions::default() };
            let ts = two_stage_with_model(&y, &dict, &precoder, &model, sigma_z2, &ts_opts).unwrap();
            let a = (&hmp_rep.h_hat - &h.h).norm_squared() / h.h.norm_squared();
            let b = (&ts.report.h_hat - &h.h).norm_squared() / h.h.norm_squared();
            hmps.push(a); mds.push(b);
            gaps.push(10.0*(a/b).log10());
            krefs.push(ts.support.len());
        }
        let mean_h = 10.0*(hmps.iter().sum::<f64>()/10.0).log10();
        let mean_m = 10.0*(mds.iter().sum::<f64>()/10.0).log10();
        println!("E_th {e_th:4.2}: mean hmp {mean_h:6.2} dB  mean mdgpp {mean_m:6.2} dB  mean-gap {:5.2}  K_ref {:?}", mean_h-mean_m, krefs);
    }

    // On-grid sanity at E_th 0.3
    for e_th in [0.05f64, 0.3] {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (paths, _sup) = sample_on_grid_paths(&mut rng, &cfg, &grid);
        let h = synthesize_channel(&paths, &cfg).unwrap();
        let precoder = build_precoder(&mut rng, &cfg);
        let s = apply_measurement(&h, &precoder).unwrap();
        let sigma_z2 = calibrate_noise(&s, 40.0).unwrap();
        let y = add_noise(&s, sigma_z2, &mut rng).y;
        let ts_opts = TwoStageOptions { energy_threshold: e_th, ..TwoStageOptions::default() };
        let ts = two_stage_estimate(&y, &dict, &precoder, sigma_z2, &ts_opts).unwrap();
        let p = ts.perturbations.as_ref().unwrap();
        let md = nmse_db(&[ts.report.h_hat.clone()], &[h.h.clone()]).unwrap();
        let s1 = nmse_db(&[ts.stage1.h_hat.clone()], &[h.h.clone()]).unwrap();
        println!("on-grid E_th {e_th}: K_ref {} stage1 {s1:.1} dB refined {md:.1} dB  dpsi/box {:.3}  deta/box {:.3}  dtau/box {:.3}",
            ts.support.len(), p.d_psi.amax()/p.psi_bound, p.d_eta.amax()/p.eta_bound, p.d_tau.amax()/p.tau_bound);
    }
}
