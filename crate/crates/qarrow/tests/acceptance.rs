//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with the measured values. Tolerances are pinned in code.
//!
//! Criteria 5 and 6 assert zero crossings of the gain scan of the ensemble
//! arrow statistic. Under this protocol the mean of the realized-pairing
//! statistic is provably nonnegative (the record is conditionally unbiased
//! about its own state) and the measured curves decay toward zero without a
//! sign change, so those two tests fail honestly; the printed curves carry
//! the evidence. See the project notes for the analysis.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use qarrow::algebra::{pauli_on_qubit, sigma_x, ComplexMatrix, DensityMatrix, Pauli, PureState};
use qarrow::learning::{
    build_dataset, evaluate_against_analytic, train, Dataset, FeatureWindow, Objective, Regime,
    ScoreModel, TrainingConfig,
};
use qarrow::path_measure::{
    arrow_scan, girsanov_log_density, importance_consistency, reverse_drift_commutator_defect,
    x_family_log_ratio,
};
use qarrow::rng::{stream, trajectory_seed};
use qarrow::score::{
    analytic_score, flow_consistency_check, frechet_check, kahler_identity_check, TangentVector,
};
use qarrow::stats::pairwise_sum;
use qarrow::trajectory::{
    purity_drift, simulate, simulate_ensemble, ChannelConfig, FeedbackLaw, NoiseModel,
    TrajectoryConfig,
};

fn base_config() -> TrajectoryConfig {
    TrajectoryConfig {
        hamiltonian: sigma_x().scale_re(0.25), // omega = 0.5
        channels: vec![ChannelConfig::new(pauli_on_qubit(Pauli::Z, 0, 1).unwrap(), 1.0).unwrap()],
        feedback_gain_x: 0.0,
        feedback_law: FeedbackLaw::Record,
        efficiency_eta: 1.0,
        delay_steps: 0,
        noise: NoiseModel::Gaussian,
        dt: 1e-3,
        total_time: 1.0,
        initial_state: PureState::basis(2, 0).unwrap().projector(),
        seed: 42,
        validate_every: 0,
    }
}

fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[{}] criterion {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

#[test]
fn criterion_01_girsanov_normalization() {
    // E_PW[dP_F/dP_W] = 1: the reweighted unit statistic returns 1 within
    // 3 standard errors at n = 10^4, ωT = 0.5, T = τ, dt = τ/1000.
    let mut cfg = base_config();
    cfg.seed = 1001;
    let check = importance_consistency(&cfg, |_| 1.0, 10_000).unwrap();
    let dev = (check.reweighted - 1.0).abs();
    let pass = dev <= 3.0 * check.reweighted_stderr;
    verdict(
        "1 (Girsanov normalization)",
        pass,
        &format!(
            "reweighted = {:.5} ± {:.5}, |Δ| = {:.2e} vs 3σ = {:.2e}, ESS = {:.0}",
            check.reweighted,
            check.reweighted_stderr,
            dev,
            3.0 * check.reweighted_stderr,
            check.effective_sample_size
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_frechet_certification() {
    // Max defect <= 1e-10 over 10^3 random (ρ, δρ, r) cases in d = 2, 4, 8,
    // multi-channel scores included; the trace-norm bound never violated.
    let mut rng = stream(2002, &[1]);
    let mut worst = 0.0f64;
    let mut holder_ok = true;
    for n_qubits in [1usize, 2, 3] {
        let d = 1 << n_qubits;
        let channels: Vec<ChannelConfig> = (0..n_qubits)
            .map(|q| {
                ChannelConfig::new(
                    pauli_on_qubit(Pauli::Z, q, n_qubits).unwrap(),
                    0.5 + q as f64,
                )
                .unwrap()
            })
            .collect();
        for _ in 0..1000 {
            let amps: Vec<Complex64> = (0..d)
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let psi = PureState::normalized(amps).unwrap();
            let mut m = psi.projector().into_mat().scale_re(0.7);
            m.add_scaled(
                &ComplexMatrix::identity(d),
                Complex64::new(0.3 / d as f64, 0.0),
            );
            let rho = DensityMatrix::new(m).unwrap();
            let raw = ComplexMatrix::from_fn(d, |_, _| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            let delta = TangentVector::project(&raw).scale(0.02 / d as f64);
            let records: Vec<f64> = (0..n_qubits)
                .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let check =
                frechet_check(&rho, &delta, &records, &channels, &[1.0, 0.1, 0.01]).unwrap();
            worst = worst.max(check.max_defect());
            holder_ok &= check.holder_ok();
        }
    }
    let pass = worst <= 1e-10 && holder_ok;
    verdict(
        "2 (Fréchet certification)",
        pass,
        &format!(
            "max defect {worst:.3e} vs 1e-10 over 3000 cases; trace-norm bound held: {holder_ok}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_kahler_identity() {
    let mut rng = stream(2003, &[1]);
    let mut worst = 0.0f64;
    for d in [2usize, 3, 4] {
        let amps: Vec<Complex64> = (0..d)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let psi = PureState::normalized(amps).unwrap();
        worst = worst.max(kahler_identity_check(&psi, 1000, &mut rng));
    }
    let pass = worst <= 1e-12;
    verdict(
        "3 (Kähler identity)",
        pass,
        &format!("max defect {worst:.3e} vs 1e-12 for d = 2, 3, 4 x 1000 samples"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_flow_descent() {
    // Both flow defects shrink by 10 ± 2 when dt shrinks 10x on 100 states.
    let mut rng = stream(2004, &[1]);
    let channels = vec![ChannelConfig::new(pauli_on_qubit(Pauli::Z, 0, 1).unwrap(), 1.0).unwrap()];
    let score = analytic_score(&[1.0], &channels).unwrap();
    let mut ratios = Vec::new();
    let mut n = 0;
    while n < 100 {
        let amps: Vec<Complex64> = (0..2)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let psi = PureState::normalized(amps).unwrap();
        let z = psi.amplitudes()[0].norm_sqr() - psi.amplitudes()[1].norm_sqr();
        if z.abs() > 0.99 {
            continue;
        }
        n += 1;
        let (s4, r4) = flow_consistency_check(&psi, &score, 1e-4).unwrap();
        let (s5, r5) = flow_consistency_check(&psi, &score, 1e-5).unwrap();
        ratios.push(s4 / s5);
        ratios.push(r4 / r5);
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().copied().fold(0.0f64, f64::max);
    let pass = min >= 8.0 && max <= 12.0;
    verdict(
        "4 (flow descent)",
        pass,
        &format!("defect ratios in [{min:.2}, {max:.2}] vs [8, 12] on 100 states"),
    );
    assert!(pass);
}

fn print_scan(label: &str, xs: &[f64], means: &[f64], errs: &[f64]) {
    println!("  {label} scan:");
    for ((x, m), e) in xs.iter().zip(means).zip(errs) {
        println!("    X = {x:+.2}: mean lnR = {m:+.4} ± {e:.4}");
    }
}

#[test]
fn criterion_05_leading_order_reversal_point() {
    // ωT = 0.1, T = τ, grid step 0.25 on [-4, 0], n = 2·10^4 per gain:
    // the criterion expects a zero crossing in [-2.5, -1.5].
    let mut cfg = base_config();
    cfg.hamiltonian = sigma_x().scale_re(0.05); // omega = 0.1
    cfg.seed = 2026;
    let grid: Vec<f64> = (0..17).map(|i| -4.0 + 0.25 * i as f64).collect();
    let out = arrow_scan(&cfg, &grid, 20_000, 2026).unwrap();
    print_scan("ωT = 0.1", &grid, &out.scan.mean_lnr, &out.scan.stderr_lnr);
    let crossing = out.scan.zero_crossing_estimate;
    let pass = crossing.is_some_and(|x| (-2.5..=-1.5).contains(&x));
    verdict(
        "5 (leading-order reversal point)",
        pass,
        &format!("zero crossing = {crossing:?}, required within [-2.5, -1.5]"),
    );
    assert!(
        pass,
        "no zero crossing in [-2.5, -1.5]: the ensemble arrow statistic pairs the record with \
         the trajectory's own conditional expectations, whose product has nonnegative mean for \
         every gain; the measured curve stays positive (see scan above and the project notes)"
    );
}

#[test]
fn criterion_06_finite_coupling_reversal_point() {
    // ωτ = 8π, T = τ: full scan at n = 2·10^4 expects a crossing in
    // [-3.7, -2.3]; the n = 5·10^3 smoke variant expects a crossing < -2.
    let mut cfg = base_config();
    cfg.hamiltonian = sigma_x().scale_re(4.0 * std::f64::consts::PI);
    cfg.seed = 2027;
    let grid: Vec<f64> = (0..17).map(|i| -4.0 + 0.25 * i as f64).collect();

    let smoke = arrow_scan(&cfg, &grid, 5_000, 2027).unwrap();
    print_scan(
        "ωτ = 8π smoke (n = 5e3)",
        &grid,
        &smoke.scan.mean_lnr,
        &smoke.scan.stderr_lnr,
    );
    let full = arrow_scan(&cfg, &grid, 20_000, 2028).unwrap();
    print_scan(
        "ωτ = 8π full (n = 2e4)",
        &grid,
        &full.scan.mean_lnr,
        &full.scan.stderr_lnr,
    );
    let smoke_crossing = smoke.scan.zero_crossing_estimate;
    let full_crossing = full.scan.zero_crossing_estimate;
    let pass = full_crossing.is_some_and(|x| (-3.7..=-2.3).contains(&x))
        && smoke_crossing.is_some_and(|x| x < -2.0);
    verdict(
        "6 (finite-coupling reversal point)",
        pass,
        &format!(
            "full crossing = {full_crossing:?} (required in [-3.7, -2.3]), smoke crossing = \
             {smoke_crossing:?} (required < -2)"
        ),
    );
    assert!(
        pass,
        "no zero crossing: strong record feedback erases the arrow (mean lnR decays toward \
         zero) but never drives the adapted statistic negative; see scans above and the \
         project notes"
    );
}

#[test]
fn criterion_07_x_family_identities() {
    let mut rng = stream(2007, &[1]);
    for case in 0..1000 {
        let mut cfg = base_config();
        cfg.hamiltonian = sigma_x().scale_re(2.0 * rng.random::<f64>());
        cfg.feedback_gain_x = -3.0 + 4.0 * rng.random::<f64>();
        cfg.total_time = 0.05;
        cfg.seed = trajectory_seed(7000, case);
        let traj = simulate(&cfg).unwrap();
        let d = girsanov_log_density(&traj);
        let family_diff = x_family_log_ratio(&traj, 0.0) - x_family_log_ratio(&traj, -2.0);
        assert!(
            (family_diff - d.ln_r).abs() <= 1e-12,
            "case {case}: {family_diff} vs {}",
            d.ln_r
        );
        assert_eq!(x_family_log_ratio(&traj, -2.0), 0.0, "case {case}");
    }
    verdict(
        "7 (X-family identities)",
        true,
        "log dP_0/dP_B - log dP_-2/dP_B = ln R to 1e-12 and dP_-2/dP_B = 1 exactly, 1000 cases",
    );
}

#[test]
fn criterion_08_reverse_drift_non_commutator() {
    let z = pauli_on_qubit(Pauli::Z, 0, 1).unwrap();
    let tilted = DensityMatrix::from_bloch(0.6, 0.0, 0.8).unwrap();
    let defect = reverse_drift_commutator_defect(&tilted, &z, 1.0).unwrap();
    let at_pole =
        reverse_drift_commutator_defect(&PureState::basis(2, 0).unwrap().projector(), &z, 1.0)
            .unwrap();
    let at_equator = reverse_drift_commutator_defect(
        &DensityMatrix::from_bloch(1.0, 0.0, 0.0).unwrap(),
        &z,
        1.0,
    )
    .unwrap();
    let pass =
        defect > 0.1 && (defect - 0.576).abs() < 1e-12 && at_pole == 0.0 && at_equator < 1e-15;
    verdict(
        "8 (reverse-drift non-commutator)",
        pass,
        &format!(
            "diagonal magnitude {defect:.6} (frozen 0.576) > 0.1; eigenstate {at_pole:.1e}; \
             equator {at_equator:.1e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_purity_and_trace_budget() {
    // 100 trajectories at dt = τ/2000, T = τ, η = 1, ω = 0.25: trace exact to
    // 1e-9, purity drift within 1e-3, and the ensemble-mean drift halves
    // (±30%) when dt halves. The max-statistic is heavy-tailed, so the
    // halving is measured on the mean.
    let run = |dt: f64| {
        let mut worst_trace = 0.0f64;
        let mut drifts = Vec::new();
        for i in 0..100 {
            let mut cfg = base_config();
            cfg.hamiltonian = sigma_x().scale_re(0.125); // omega = 0.25
            cfg.dt = dt;
            cfg.seed = trajectory_seed(1000, i);
            let traj = simulate(&cfg).unwrap();
            for s in &traj.states {
                worst_trace = worst_trace.max((s.mat().trace().re - 1.0).abs());
            }
            drifts.push(purity_drift(&traj));
        }
        let max_drift = drifts.iter().copied().fold(0.0f64, f64::max);
        let mean_drift = pairwise_sum(&drifts) / drifts.len() as f64;
        (worst_trace, max_drift, mean_drift)
    };
    let (trace_coarse, max_coarse, mean_coarse) = run(5e-4);
    let (trace_fine, _, mean_fine) = run(2.5e-4);
    let ratio = mean_fine / mean_coarse;
    let pass = trace_coarse <= 1e-9
        && trace_fine <= 1e-9
        && max_coarse <= 1e-3
        && (0.35..=0.65).contains(&ratio);
    verdict(
        "9 (purity/trace budget)",
        pass,
        &format!(
            "max |Tr-1| = {trace_coarse:.1e} vs 1e-9; max drift {max_coarse:.3e} vs 1e-3 at \
             dt = 5e-4; mean-drift halving ratio {ratio:.3} vs [0.35, 0.65]"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_dsm_and_ssm_recovery() {
    // DSM: ideal-regime held-out RMSE within 5% of the analytic score RMS.
    let mut cfg = base_config();
    cfg.seed = 3001;
    let train_trajs = simulate_ensemble(&cfg, 150, 3001).unwrap();
    let ds = build_dataset(&train_trajs, 8, Objective::Dsm).unwrap();
    let init = ScoreModel::new_mlp(8, &[32, 32], 7);
    let tc = TrainingConfig {
        n_epochs: 15,
        learning_rate: 0.02,
        batch_size: 128,
        ..Default::default()
    };
    let (model, _) = train(&ds, &init, &tc).unwrap();
    let held_out = simulate_ensemble(&cfg, 50, 3002).unwrap();
    let report = evaluate_against_analytic(&model, &held_out, 64).unwrap();
    let dsm_pass = report.rmse_vs_innovation <= 0.05 * report.analytic_rms;

    // SSM: standard-normal synthetic data recovers s(r) = -r within 0.1 MAE.
    let mut rng = stream(2024, &[55]);
    let samples: Vec<(FeatureWindow, Option<f64>)> = (0..8000)
        .map(|_| {
            (
                FeatureWindow {
                    values: vec![rng.sample(StandardNormal)],
                    channel_index: 0,
                },
                None,
            )
        })
        .collect();
    let ssm_ds = Dataset {
        samples,
        regime: Regime::Ideal,
        tau: 1.0,
        dt: 1.0,
        eta: 1.0,
    };
    let ssm_init = ScoreModel::new_mlp(1, &[32, 32], 12);
    let ssm_tc = TrainingConfig {
        objective: Objective::Ssm,
        n_epochs: 60,
        learning_rate: 0.02,
        batch_size: 128,
        slice_count: 1,
        seed: 4,
    };
    let (ssm_model, _) = train(&ssm_ds, &ssm_init, &ssm_tc).unwrap();
    let mut mae = 0.0;
    let mut count = 0.0;
    let mut r = -2.0;
    while r <= 2.0 {
        mae += (ssm_model.forward(&[r]) + r).abs();
        count += 1.0;
        r += 0.05;
    }
    mae /= count;
    let ssm_pass = mae <= 0.1;

    let pass = dsm_pass && ssm_pass;
    verdict(
        "10 (DSM/SSM recovery)",
        pass,
        &format!(
            "DSM held-out RMSE {:.4} vs 5% of RMS = {:.4}; SSM mean |s(r)+r| = {mae:.4} vs 0.1",
            report.rmse_vs_innovation,
            0.05 * report.analytic_rms
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_non_ideal_advantage() {
    // η = 0.8: the learned score beats the uncorrected analytic r/τ on at
    // least 95% of held-out batches (MSE against the exact conditional
    // innovation).
    let mut cfg = base_config();
    cfg.efficiency_eta = 0.8;
    cfg.seed = 4001;
    let train_trajs = simulate_ensemble(&cfg, 150, 4001).unwrap();
    let ds = build_dataset(&train_trajs, 8, Objective::Dsm).unwrap();
    let init = ScoreModel::new_mlp(8, &[32, 32], 7);
    let tc = TrainingConfig {
        n_epochs: 15,
        learning_rate: 0.02,
        batch_size: 128,
        ..Default::default()
    };
    let (model, _) = train(&ds, &init, &tc).unwrap();
    let held_out = simulate_ensemble(&cfg, 50, 4002).unwrap();
    let report = evaluate_against_analytic(&model, &held_out, 64).unwrap();
    let pass = report.batch_win_fraction >= 0.95;
    verdict(
        "11 (non-ideal advantage)",
        pass,
        &format!(
            "learned beats uncorrected r/τ on {:.1}% of {} batches (required ≥ 95%); RMSE \
             {:.4} vs analytic {:.4}",
            100.0 * report.batch_win_fraction,
            report.n_batches,
            report.rmse_vs_innovation,
            report.rmse_analytic_vs_innovation
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_12_gradient_oracle() {
    // Regressor input-gradients match central finite differences to relative
    // error 1e-6 on 10^3 random inputs.
    let model = ScoreModel::new_mlp(6, &[32, 32], 9);
    let mut rng = stream(2012, &[1]);
    let mut worst_rel = 0.0f64;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let grad = model.input_gradient(&x);
        let h = 1e-5;
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (model.forward(&xp) - model.forward(&xm)) / (2.0 * h);
            err = err.max((grad[i] - fd).abs());
            scale = scale.max(fd.abs());
        }
        worst_rel = worst_rel.max(err / scale.max(1e-12));
    }
    let pass = worst_rel <= 1e-6;
    verdict(
        "12 (gradient oracle)",
        pass,
        &format!("max relative deviation {worst_rel:.3e} vs 1e-6 on 1000 inputs"),
    );
    assert!(pass);
}
