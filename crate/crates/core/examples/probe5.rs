use bdce_core::*;
use bdce_core::baselines::*;
use bdce_core::channel::*;
use bdce_core::dictionary::*;
use bdce_core::experiment::*;
use bdce_core::grid::*;
use bdce_core::hmp::*;
use bdce_core::measurement::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let cfg = ScenarioConfig::desk_scale();
    let grid = build_grid(&cfg, 0.5).unwrap();
    let dict = build_dictionary(&grid, &cfg).unwrap();

    for snr in [10.0f64, 15.0] {
        let mut acc: std::collections::BTreeMap<&str, f64> = Default::default();
        let n_trials = 10;
        for seed in 0..n_trials {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
            let paths = sample_paths(&mut rng, &cfg);
            let h = synthesize_channel(&paths, &cfg).unwrap();
            let precoder = build_precoder(&mut rng, &cfg);
            let s = apply_measurement(&h, &precoder).unwrap();
            let sigma_z2 = calibrate_noise(&s, snr).unwrap();
            let y = add_noise(&s, sigma_z2, &mut rng).y;
            let g = measure_matrix(&dict.u, &precoder).unwrap();
            let model = HmpModel::new(g);
            let hn = h.h.norm_squared();

            let spec = estimate_with_model(&y, &model, &dict.u, sigma_z2, &HmpOptions::default()).unwrap();
            *acc.entry("hmp-spec").or_default() += (&spec.h_hat - &h.h).norm_squared()/hn;

            let fixed = estimate_with_model(&y, &model, &dict.u, sigma_z2, &HmpOptions{
                lambda_rule: LambdaRule::Fixed, lambda_init: 3.0/1536.0*3.0, ..Default::default()}).unwrap();
            *acc.entry("hmp-fixedlam").or_default() += (&fixed.h_hat - &h.h).norm_squared()/hn;

            let deep = estimate_with_model(&y, &model, &dict.u, sigma_z2, &HmpOptions{
                max_iterations: 500, ..Default::default()}).unwrap();
            *acc.entry("hmp-T500").or_default() += (&deep.h_hat - &h.h).norm_squared()/hn;

            for atoms in [1usize, 2, 3] {
                let so = somp_estimate(&y, &model.g, &dict.u, atoms*cfg.n_paths, 1e-6).unwrap();
                *acc.entry(match atoms {1=>"somp-L",2=>"somp-2L",_=>"somp-3L"}).or_default() += (&so.h_hat - &h.h).norm_squared()/hn;
            }

            let sup = nearest_grid_support(&paths, &grid);
            let or = ls_oracle(&y, &model.g, &dict.u, &sup).unwrap();
            *acc.entry("oracle-L").or_default() += (&or - &h.h).norm_squared()/hn;
        }
        println!("--- SNR {snr} dB ({n_trials} trials) ---");
        for (k, v) in acc {
            println!("  {k:14} {:7.2} dB", 10.0*(v/n_trials as f64).log10());
        }
    }
}
