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

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (paths, _sup) = sample_on_grid_paths(&mut rng, &cfg, &grid);
    let h = synthesize_channel(&paths, &cfg).unwrap();
    let precoder = build_precoder(&mut rng, &cfg);
    let s = apply_measurement(&h, &precoder).unwrap();
    let sigma_z2 = calibrate_noise(&s, 40.0).unwrap();
    let y = add_noise(&s, sigma_z2, &mut rng).y;
    let g = measure_matrix(&dict.u, &precoder).unwrap();
    let model = HmpModel::new(g);

    let stage1 = estimate_with_model(&y, &model, &dict.u, sigma_z2, &HmpOptions{max_iterations:100, ..Default::default()}).unwrap();
    let support = prune(&stage1.beta_hat, 0.05).unwrap();
    println!("support size {}", support.len());
    let pm = restrict(&dict, &support);
    let w0 = measure_matrix(&pm.u, &precoder).unwrap();
    let w_psi = measure_matrix(&pm.u_psi, &precoder).unwrap();

    // State restricted as refine() does
    let k_ref = support.len();
    let beta = CVec::from_iterator(k_ref, support.iter().map(|&k| stage1.state.beta_hat[k]));
    let sigma2 = nalgebra::DVector::from_iterator(k_ref, support.iter().map(|&k| stage1.state.sigma_beta2[k]));
    let target = stage1.state.mu_s_to_beta.clone();
    let resid = (&target - &w0 * &beta).norm() / target.norm();
    println!("initial resid vs mu_s_to_beta {resid:.3e}; vs y {:.3e}", (&y - &w0*&beta).norm()/y.norm());

    let qp = build_qp_measured(&w_psi, &w0, &target, &beta, &sigma2, pm.psi_bound).unwrap();
    let delta = solve_qp_box(&qp, 3);
    for j in 0..k_ref {
        println!("atom {:4} |beta| {:9.3e} sigma2 {:9.3e} P_kk {:9.3e} u_k {:+9.3e} ratio {:+9.3e} delta {:+9.3e}",
            support[j], beta[j].norm(), sigma2[j], qp.p[(j,j)], qp.u[j], qp.u[j]/qp.p[(j,j)], delta[j]);
    }
}
