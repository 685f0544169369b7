use mvpure::model::{
    sample_covariance, simulate_epochs, synth_scenario, CovKind, EpochDesign, NoiseKind, ScenarioSpec,
};
use mvpure::numerics;

fn mean_error(n_epochs: usize) -> f64 {
    let mut total = 0.0;
    for seed in 0..5 {
        let sc = synth_scenario(
            &ScenarioSpec::new(8, 10, vec![1.0, 0.6], seed)
                .noise(NoiseKind::SeededSpd)
                .correlation(0.4),
        )
        .unwrap();
        let design = EpochDesign {
            n_epochs,
            n_times: 200,
            sfreq: 200.0,
            t0: -0.5,
            seed: 40 + seed,
        };
        let ep = simulate_epochs(&sc, &design).unwrap();
        let r_hat = sample_covariance(&ep, [0.0, 0.495], CovKind::Data).unwrap();
        let n_hat = sample_covariance(&ep, [-0.5, -0.005], CovKind::Noise).unwrap();
        total += numerics::rel_frobenius(r_hat.matrix(), sc.data.matrix());
        total += numerics::rel_frobenius(n_hat.matrix(), sc.noise.matrix());
    }
    total / 10.0
}

#[test]
fn sample_covariances_converge() {
    let coarse = mean_error(5);
    let fine = mean_error(80);
    // 16x the samples should cut the error roughly 4x
    assert!(fine < coarse / 2.5, "coarse {coarse}, fine {fine}");
    assert!(fine < 0.05, "fine {fine}");
}

#[test]
fn window_sample_count() {
    let sc = synth_scenario(&ScenarioSpec::new(4, 5, vec![1.0], 1)).unwrap();
    let design = EpochDesign {
        n_epochs: 3,
        n_times: 10,
        sfreq: 10.0,
        t0: -0.5,
        seed: 2,
    };
    let ep = simulate_epochs(&sc, &design).unwrap();
    let n = sample_covariance(&ep, [-0.5, -0.1], CovKind::Noise).unwrap();
    assert_eq!(n.n_samples(), 15);
}
