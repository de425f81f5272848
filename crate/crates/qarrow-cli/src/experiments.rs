//! Experiment implementations: each maps a resolved configuration onto the
//! library, writes plot-ready outputs into the run directory and returns a
//! summary for the console plus an optional pass/fail verdict for the
//! certification-style experiments.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::json;

use qarrow::algebra::{pauli_on_qubit, ComplexMatrix, DensityMatrix, Pauli, PureState};
use qarrow::export;
use qarrow::learning::{
    build_dataset, evaluate_against_analytic, train, ScoreModel, TrainingConfig,
};
use qarrow::path_measure::{
    arrow_scan_with, bootstrap_crossing_interval, girsanov_log_density, importance_consistency,
};
use qarrow::rng::{derive_seed, stream};
use qarrow::score::{
    analytic_score, flow_consistency_check, frechet_check, kahler_identity_check, CertCheck,
    CertificationReport, TangentVector,
};
use qarrow::trajectory::{simulate_ensemble, ChannelConfig, Trajectory};
use qarrow::Error;

use crate::config::{Experiment, ExperimentConfig};
use crate::manifest::OutputDir;

pub struct Outcome {
    pub warnings: Vec<String>,
    pub summary: Vec<String>,
    /// Some(false) makes the process exit with the acceptance-failure code.
    pub checks_passed: Option<bool>,
}

pub fn run(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, Error> {
    match cfg.experiment {
        Experiment::Simulate => simulate_experiment(cfg, out),
        Experiment::ArrowScan => arrow_scan_experiment(cfg, out, false),
        Experiment::ReversalDemo => arrow_scan_experiment(cfg, out, true),
        Experiment::GirsanovCheck => girsanov_check_experiment(cfg, out),
        Experiment::FrechetCert => frechet_cert_experiment(cfg, out),
        Experiment::KahlerCert => kahler_cert_experiment(cfg, out),
        Experiment::FlowsCert => flows_cert_experiment(cfg, out),
        Experiment::TrainScore => train_score_experiment(cfg, out),
        Experiment::EvalScore => eval_score_experiment(cfg, out),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidValue {
        what: "output",
        detail: e.to_string(),
    }
}

fn simulate_experiment(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, Error> {
    let trajs = simulate_ensemble(&cfg.trajectory, cfg.n_traj, cfg.trajectory.seed)?;
    for (i, traj) in trajs.iter().enumerate() {
        for ch in 0..traj.n_channels() {
            let mut buf = Vec::new();
            export::write_trajectory_channel_csv(&mut buf, traj, ch).map_err(io_err)?;
            out.write(&format!("traj{i:04}_ch{ch}.csv"), &buf)
                .map_err(io_err)?;
        }
    }
    out.write(
        "sidecar.json",
        export::trajectory_sidecar_json(&cfg.trajectory),
    )
    .map_err(io_err)?;
    Ok(Outcome {
        warnings: Vec::new(),
        summary: vec![format!(
            "simulated {} trajectories x {} steps ({} channels)",
            cfg.n_traj,
            cfg.trajectory.steps(),
            cfg.trajectory.channels.len()
        )],
        checks_passed: None,
    })
}

fn arrow_scan_experiment(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
    demo_both: bool,
) -> Result<Outcome, Error> {
    let statistics = if demo_both {
        vec![
            (qarrow::path_measure::ArrowStatistic::Realized, "realized"),
            (
                qarrow::path_measure::ArrowStatistic::ReferenceFilter,
                "reference",
            ),
        ]
    } else {
        vec![(cfg.arrow_statistic, "scan")]
    };
    let mut warnings = Vec::new();
    let mut summary = Vec::new();
    let mut summaries = serde_json::Map::new();
    for (stat, label) in statistics {
        let scan = arrow_scan_with(
            &cfg.trajectory,
            &cfg.x_grid,
            cfg.n_traj,
            cfg.trajectory.seed,
            stat,
        )?;
        warnings.extend(scan.warnings.clone());
        let mut buf = Vec::new();
        export::write_arrow_scan_csv(&mut buf, &scan.scan).map_err(io_err)?;
        let csv_name = if demo_both {
            format!("arrow_scan_{label}.csv")
        } else {
            "arrow_scan.csv".to_string()
        };
        out.write(&csv_name, &buf).map_err(io_err)?;
        let (interval, n_crossed) = bootstrap_crossing_interval(
            &scan.scan.x_values,
            &scan.samples,
            cfg.bootstrap,
            cfg.trajectory.seed,
        );
        summaries.insert(
            label.to_string(),
            json!({
                "zero_crossing_estimate": scan.scan.zero_crossing_estimate,
                "bootstrap_interval": interval.map(|(lo, hi)| vec![lo, hi]),
                "bootstrap_crossed": n_crossed,
                "bootstrap_resamples": cfg.bootstrap,
                "n_traj": cfg.n_traj,
            }),
        );
        match scan.scan.zero_crossing_estimate {
            Some(x) => summary.push(format!("{label}: zero crossing at X = {x:.3}")),
            None => summary.push(format!("{label}: no zero crossing on the grid")),
        }
    }
    out.write(
        "summary.json",
        serde_json::to_string_pretty(&serde_json::Value::Object(summaries))
            .expect("summary serializes"),
    )
    .map_err(io_err)?;
    Ok(Outcome {
        warnings,
        summary,
        checks_passed: None,
    })
}

fn girsanov_check_experiment(
    cfg: &ExperimentConfig,
    out: &mut OutputDir,
) -> Result<Outcome, Error> {
    let unit = importance_consistency(&cfg.trajectory, |_| 1.0, cfg.n_traj)?;
    let lnr = importance_consistency(
        &cfg.trajectory,
        |t: &Trajectory| girsanov_log_density(t).ln_r,
        cfg.n_traj,
    )?;
    let unit_pass = (unit.reweighted - 1.0).abs() <= 3.0 * unit.reweighted_stderr;
    let combined = (lnr.direct_stderr.powi(2) + lnr.reweighted_stderr.powi(2)).sqrt();
    let lnr_pass = (lnr.direct - lnr.reweighted).abs() <= 3.0 * combined;

    #[derive(Serialize)]
    struct Entry {
        statistic: &'static str,
        direct: f64,
        direct_stderr: f64,
        reweighted: f64,
        reweighted_stderr: f64,
        effective_sample_size: f64,
        pass: bool,
    }
    let report = vec![
        Entry {
            statistic: "unit",
            direct: unit.direct,
            direct_stderr: unit.direct_stderr,
            reweighted: unit.reweighted,
            reweighted_stderr: unit.reweighted_stderr,
            effective_sample_size: unit.effective_sample_size,
            pass: unit_pass,
        },
        Entry {
            statistic: "ln_R",
            direct: lnr.direct,
            direct_stderr: lnr.direct_stderr,
            reweighted: lnr.reweighted,
            reweighted_stderr: lnr.reweighted_stderr,
            effective_sample_size: lnr.effective_sample_size,
            pass: lnr_pass,
        },
    ];
    out.write(
        "girsanov.json",
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(io_err)?;
    let mut warnings = Vec::new();
    if unit.ess_warning || lnr.ess_warning {
        warnings.push(format!(
            "importance weights degenerate: effective sample size {:.1} of {}",
            unit.effective_sample_size.min(lnr.effective_sample_size),
            cfg.n_traj
        ));
    }
    Ok(Outcome {
        warnings,
        summary: vec![
            format!(
                "normalization: reweighted = {:.4} ± {:.4} (pass: {unit_pass})",
                unit.reweighted, unit.reweighted_stderr
            ),
            format!(
                "ln_R: direct = {:.4} ± {:.4}, reweighted = {:.4} ± {:.4} (pass: {lnr_pass})",
                lnr.direct, lnr.direct_stderr, lnr.reweighted, lnr.reweighted_stderr
            ),
        ],
        checks_passed: Some(unit_pass && lnr_pass),
    })
}

fn interior_density(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> DensityMatrix {
    let amps: Vec<Complex64> = (0..d)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let psi = PureState::normalized(amps).expect("random nonzero vector");
    let mut m = psi.projector().into_mat().scale_re(0.7);
    m.add_scaled(
        &ComplexMatrix::identity(d),
        Complex64::new(0.3 / d as f64, 0.0),
    );
    DensityMatrix::new(m).expect("interior state")
}

fn frechet_cert_experiment(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, Error> {
    let mut checks = Vec::new();
    let mut rng = stream(cfg.trajectory.seed, &[101]);
    for n_qubits in [1usize, 2, 3] {
        let d = 1 << n_qubits;
        let channels: Vec<ChannelConfig> = (0..n_qubits)
            .map(|q| {
                ChannelConfig::new(
                    pauli_on_qubit(Pauli::Z, q, n_qubits).expect("valid index"),
                    0.5 + q as f64,
                )
                .expect("positive tau")
            })
            .collect();
        let mut worst = 0.0f64;
        let mut holder_ok = true;
        for _ in 0..cfg.n_traj {
            let rho = interior_density(&mut rng, d);
            let raw = ComplexMatrix::from_fn(d, |_, _| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            let delta = TangentVector::project(&raw).scale(0.02 / d as f64);
            let records: Vec<f64> = (0..n_qubits)
                .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let check = frechet_check(&rho, &delta, &records, &channels, &[1.0, 0.1, 0.01])?;
            worst = worst.max(check.max_defect());
            holder_ok &= check.holder_ok();
        }
        checks.push(CertCheck::new(
            format!("frechet_linearity_d{d}"),
            cfg.n_traj,
            worst,
            1e-10,
        ));
        checks.push(CertCheck::new(
            format!("holder_bound_d{d}"),
            cfg.n_traj,
            if holder_ok { 0.0 } else { 1.0 },
            0.5,
        ));
    }
    finish_cert(cfg, out, checks, "frechet_report.json")
}

fn kahler_cert_experiment(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, Error> {
    let mut checks = Vec::new();
    let mut rng = stream(cfg.trajectory.seed, &[102]);
    for d in [2usize, 3, 4] {
        let amps: Vec<Complex64> = (0..d)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let psi = PureState::normalized(amps).expect("random nonzero vector");
        let defect = kahler_identity_check(&psi, cfg.n_traj, &mut rng);
        checks.push(CertCheck::new(
            format!("kahler_identity_d{d}"),
            cfg.n_traj,
            defect,
            1e-12,
        ));
    }
    finish_cert(cfg, out, checks, "kahler_report.json")
}

fn flows_cert_experiment(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, Error> {
    let mut rng = stream(cfg.trajectory.seed, &[103]);
    let channels = vec![
        ChannelConfig::new(pauli_on_qubit(Pauli::Z, 0, 1).expect("valid"), 1.0)
            .expect("positive tau"),
    ];
    let mut worst_ratio_defect = 0.0f64;
    let mut n = 0;
    while n < cfg.n_traj {
        let amps: Vec<Complex64> = (0..2)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let psi = PureState::normalized(amps).expect("random nonzero vector");
        let z = psi.amplitudes()[0].norm_sqr() - psi.amplitudes()[1].norm_sqr();
        if z.abs() > 0.99 {
            continue; // near-eigenstate: both flows nearly vanish
        }
        n += 1;
        let score = analytic_score(&[1.0], &channels)?;
        let (s4, r4) = flow_consistency_check(&psi, &score, 1e-4)?;
        let (s5, r5) = flow_consistency_check(&psi, &score, 1e-5)?;
        for (coarse, fine) in [(s4, s5), (r4, r5)] {
            worst_ratio_defect = worst_ratio_defect.max((coarse / fine - 10.0).abs());
        }
    }
    let checks = vec![CertCheck::new(
        "flow_defect_ratio_dt_decade",
        cfg.n_traj,
        worst_ratio_defect,
        2.0,
    )];
    finish_cert(cfg, out, checks, "flows_report.json")
}

fn finish_cert(
    _cfg: &ExperimentConfig,
    out: &mut OutputDir,
    checks: Vec<CertCheck>,
    file: &str,
) -> Result<Outcome, Error> {
    let report = CertificationReport { checks };
    out.write(
        file,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(io_err)?;
    let pass = report.all_pass();
    let summary = report
        .checks
        .iter()
        .map(|c| {
            format!(
                "{}: max defect {:.3e} vs {:.0e} [{}]",
                c.name,
                c.max_defect,
                c.tolerance,
                if c.pass { "pass" } else { "FAIL" }
            )
        })
        .collect();
    Ok(Outcome {
        warnings: Vec::new(),
        summary,
        checks_passed: Some(pass),
    })
}

fn train_score_experiment(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, Error> {
    let trajs = simulate_ensemble(&cfg.trajectory, cfg.n_traj, cfg.trajectory.seed)?;
    let dataset = build_dataset(&trajs, cfg.learn_window, cfg.learn_objective)?;
    let init = ScoreModel::new_mlp(cfg.learn_window, &cfg.learn_hidden, cfg.learn_seed);
    let tc = TrainingConfig {
        objective: cfg.learn_objective,
        learning_rate: cfg.learn_rate,
        batch_size: cfg.learn_batch,
        n_epochs: cfg.learn_epochs,
        slice_count: cfg.learn_slices,
        seed: cfg.learn_seed,
    };
    let (model, curve) = train(&dataset, &init, &tc)?;
    out.write(
        "model.json",
        serde_json::to_string_pretty(&model).expect("model serializes"),
    )
    .map_err(io_err)?;
    let mut buf = Vec::new();
    export::write_loss_curve_csv(&mut buf, &curve).map_err(io_err)?;
    out.write("loss.csv", &buf).map_err(io_err)?;
    let mut buf = Vec::new();
    export::write_dataset_csv(&mut buf, &dataset).map_err(io_err)?;
    out.write("dataset.csv", &buf).map_err(io_err)?;
    Ok(Outcome {
        warnings: Vec::new(),
        summary: vec![format!(
            "trained on {} samples for {} epochs; loss {} -> {}",
            dataset.samples.len(),
            curve.len(),
            curve.first().copied().unwrap_or(f64::NAN),
            curve.last().copied().unwrap_or(f64::NAN)
        )],
        checks_passed: None,
    })
}

fn eval_score_experiment(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, Error> {
    let text = std::fs::read_to_string(&cfg.learn_model_path)
        .map_err(|e| Error::Model(format!("cannot read model `{}`: {e}", cfg.learn_model_path)))?;
    let model: ScoreModel =
        serde_json::from_str(&text).map_err(|e| Error::Model(format!("bad model JSON: {e}")))?;
    model.validate()?;
    let held_out_seed = derive_seed(cfg.trajectory.seed, &[0x4556u64]);
    let trajs = simulate_ensemble(&cfg.trajectory, cfg.n_traj, held_out_seed)?;
    let report = evaluate_against_analytic(&model, &trajs, cfg.learn_batch)?;
    out.write(
        "eval.json",
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(io_err)?;
    Ok(Outcome {
        warnings: Vec::new(),
        summary: vec![format!(
            "RMSE vs innovation {:.4} (analytic RMS {:.4}); batch win fraction {:.3}",
            report.rmse_vs_innovation, report.analytic_rms, report.batch_win_fraction
        )],
        checks_passed: None,
    })
}
