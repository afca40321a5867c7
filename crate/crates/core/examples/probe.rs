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
use std::time::Instant;

fn main() {
    let cfg = ScenarioConfig::desk_scale();
    let t0 = Instant::now();
    let grid = build_grid(&cfg, 0.5).unwrap();
    println!("grid: eta_delta={:.12e} K_an={} K_sl={} K_de={} K={}  ({:?})",
        grid.eta_delta, grid.k_an(), grid.k_sl(), grid.k_de(), grid.len(), t0.elapsed());
    println!("coherence at interval: {}", slope_coherence(grid.eta_delta, &cfg));

    let t0 = Instant::now();
    let dict = build_dictionary(&grid, &cfg).unwrap();
    println!("dict build: {:?}, bytes={}", t0.elapsed(), dictionary_bytes(&cfg, &grid));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let paths = sample_paths(&mut rng, &cfg);
    let h = synthesize_channel(&paths, &cfg).unwrap();
    let precoder = build_precoder(&mut rng, &cfg);
    let s = apply_measurement(&h, &precoder).unwrap();
    let sigma_z2 = calibrate_noise(&s, 15.0).unwrap();
    let y = add_noise(&s, sigma_z2, &mut rng).y;

    let t0 = Instant::now();
    let g = measure_matrix(&dict.u, &precoder).unwrap();
    println!("G build: {:?} ({}x{})", t0.elapsed(), g.nrows(), g.ncols());
    let t0 = Instant::now();
    let model = HmpModel::new(g);
    println!("model (|G|^2): {:?}", t0.elapsed());

    let t0 = Instant::now();
    let opts = HmpOptions::default();
    let report = estimate_with_model(&y, &model, &dict.u, sigma_z2, &opts).unwrap();
    let hmp_nmse = nmse_db(&[report.h_hat.clone()], &[h.h.clone()]).unwrap();
    println!("hmp estimate: {:?}, iters={}, nmse={:.2} dB, lambda={:.4}",
        t0.elapsed(), report.iterations_used, hmp_nmse, report.prior.lambda);

    let t0 = Instant::now();
    let ts_opts = TwoStageOptions::default();
    let ts = two_stage_with_model(&y, &dict, &precoder, &model, sigma_z2, &ts_opts).unwrap();
    let md_nmse = nmse_db(&[ts.report.h_hat.clone()], &[h.h.clone()]).unwrap();
    println!("two-stage: {:?}, K_ref={}, fell_back={}, nmse={:.2} dB, flops={}",
        t0.elapsed(), ts.support.len(), ts.fell_back, md_nmse, ts.refine_flops);
    for row in ts.refinement_trace.iter().take(5) {
        println!("  refine it {}: resid={:.4e} dpsi={:.3e} deta={:.3e} dtau={:.3e}",
            row.iteration, row.residual_ratio, row.max_d_psi, row.max_d_eta, row.max_d_tau);
    }
    println!("  bounds: psi={:.3e} eta={:.3e} tau={:.3e}", grid.psi_delta/2.0, grid.eta_delta/2.0, grid.tau_delta/2.0);
}
