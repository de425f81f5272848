//! Path-measure densities and arrow-of-time statistics.
//!
//! For a record path r_t with filter expectations ⟨A⟩_t, the log-density of
//! the trajectory measure relative to the reference Wiener measure is
//!
//! ```text
//! log dP_F/dP_W = (1/τ)∫ r ⟨A⟩ dt - (1/2τ)∫ ⟨A⟩² dt
//! ```
//!
//! summed over channels; the backward density negates the record, and the
//! arrow statistic is ln R = log dP_F/dP_B = (2/τ)∫ r ⟨A⟩ dt. Both integrals
//! are discretized as left-endpoint sums over the stored per-step arrays (the
//! non-anticipating choice matching the Itô convention), and with Gaussian
//! records the resulting discrete Radon-Nikodym derivative is exact, not
//! merely an O(dt) approximation.
//!
//! Under feedback the realized trajectory's own expectations track the
//! feedback-modified state, and pairing the record with them always yields a
//! nonnegative mean (the record is conditionally unbiased about its own
//! state). The arrow-reversal statistic instead evaluates the fixed
//! forward/backward discriminator: records are re-filtered through the
//! feedback-free dynamics and paired with those reference expectations. The
//! scan over feedback gain X uses the reference pairing by default and
//! exposes the realized pairing for comparison.

use serde::{Deserialize, Serialize};

use crate::algebra::{commutator, hermitian_eigen, DensityMatrix, Observable};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, stream, trajectory_seed};
use crate::stats::{effective_sample_size, mean_stderr, pairwise_sum, zero_crossing};
use crate::trajectory::{
    gain_policy, par_map_indexed, simulate_with_policy, Trajectory, TrajectoryConfig, TrajectoryRun,
};
use rand::Rng;
use rand_distr::StandardNormal;

/// Accumulated Girsanov log-densities and arrow statistics for one record
/// path paired with one expectation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathDensity {
    pub log_dpf_dpw: f64,
    pub log_dpb_dpw: f64,
    pub ln_r: f64,
    /// (1/τ)∫ r ⟨A⟩ dt summed over channels.
    pub cross_term: f64,
    /// (1/2τ)∫ ⟨A⟩² dt summed over channels.
    pub quad_term: f64,
}

impl PathDensity {
    pub fn from_terms(cross_term: f64, quad_term: f64) -> Self {
        Self {
            log_dpf_dpw: cross_term - quad_term,
            log_dpb_dpw: -cross_term - quad_term,
            ln_r: 2.0 * cross_term,
            cross_term,
            quad_term,
        }
    }
}

/// Log-densities from raw per-channel record and expectation arrays.
pub fn path_density_from_parts(
    records: &[Vec<f64>],
    expectations: &[Vec<f64>],
    taus: &[f64],
    dt: f64,
) -> PathDensity {
    let mut cross = Vec::new();
    let mut quad = Vec::new();
    for j in 0..records.len() {
        let inv_tau = 1.0 / taus[j];
        for (r, a) in records[j].iter().zip(&expectations[j]) {
            cross.push(inv_tau * r * a * dt);
            quad.push(0.5 * inv_tau * a * a * dt);
        }
    }
    PathDensity::from_terms(pairwise_sum(&cross), pairwise_sum(&quad))
}

/// Girsanov log-densities of a trajectory, pairing its records with its own
/// stored pre-step expectations.
pub fn girsanov_log_density(traj: &Trajectory) -> PathDensity {
    path_density_from_parts(
        &traj.records,
        &traj.expectations,
        &traj.channel_taus,
        traj.dt,
    )
}

/// log dP_B/dP_W, the record-negated density.
pub fn backward_log_density(traj: &Trajectory) -> f64 {
    girsanov_log_density(traj).log_dpb_dpw
}

/// log dP_X/dP_B = (X + 2)·(1/τ)∫ r ⟨A⟩ dt, the leading-order interpolation
/// family. Valid as a measure identification only in the short-time
/// linearization regime; for realized scans use [`arrow_scan`], which
/// captures the full nonlinear feedback effect.
pub fn x_family_log_ratio(traj: &Trajectory, x: f64) -> f64 {
    (x + 2.0) * girsanov_log_density(traj).cross_term
}

/// Both pairings of one feedback trajectory's records: against its own
/// expectations (`realized`) and against the feedback-free reference filter
/// run over the same records (`reference`). Memory stays flat; no state path
/// is retained.
#[derive(Debug, Clone, Copy)]
pub struct ArrowSample {
    pub realized: PathDensity,
    pub reference: PathDensity,
}

/// Realized pairing only, without the lockstep reference filter; the cheap
/// path for scans that aggregate the trajectory's own density.
pub fn realized_sample(cfg: &TrajectoryConfig) -> Result<PathDensity> {
    let mut run = TrajectoryRun::new(cfg, gain_policy(cfg))?;
    let n = cfg.channels.len();
    let m = run.steps_total();
    let dt = cfg.dt;
    let mut cross = Vec::with_capacity(n * m);
    let mut quad = Vec::with_capacity(n * m);
    for _ in 0..m {
        run.advance()?;
        for j in 0..n {
            let inv_tau = 1.0 / cfg.channels[j].tau;
            let r = run.last_records()[j];
            let a = run.last_expectations()[j];
            cross.push(inv_tau * r * a * dt);
            quad.push(0.5 * inv_tau * a * a * dt);
        }
    }
    Ok(PathDensity::from_terms(
        pairwise_sum(&cross),
        pairwise_sum(&quad),
    ))
}

pub fn arrow_sample(cfg: &TrajectoryConfig) -> Result<ArrowSample> {
    let mut run = TrajectoryRun::new(cfg, gain_policy(cfg))?;
    let mut ref_cfg = cfg.clone();
    ref_cfg.feedback_gain_x = 0.0;
    let mut filter = TrajectoryRun::new_driven(&ref_cfg, |_, _| 0.0)?;

    let n = cfg.channels.len();
    let m = run.steps_total();
    let dt = cfg.dt;
    let mut cross_real = Vec::with_capacity(n * m);
    let mut quad_real = Vec::with_capacity(n * m);
    let mut cross_ref = Vec::with_capacity(n * m);
    let mut quad_ref = Vec::with_capacity(n * m);
    let mut step_records = vec![0.0; n];
    for _ in 0..m {
        run.advance()?;
        step_records.copy_from_slice(run.last_records());
        filter.advance_driven(&step_records)?;
        for j in 0..n {
            let inv_tau = 1.0 / cfg.channels[j].tau;
            let r = step_records[j];
            let a = run.last_expectations()[j];
            let a_ref = filter.last_expectations()[j];
            cross_real.push(inv_tau * r * a * dt);
            quad_real.push(0.5 * inv_tau * a * a * dt);
            cross_ref.push(inv_tau * r * a_ref * dt);
            quad_ref.push(0.5 * inv_tau * a_ref * a_ref * dt);
        }
    }
    Ok(ArrowSample {
        realized: PathDensity::from_terms(pairwise_sum(&cross_real), pairwise_sum(&quad_real)),
        reference: PathDensity::from_terms(pairwise_sum(&cross_ref), pairwise_sum(&quad_ref)),
    })
}

/// Which pairing an arrow scan aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArrowStatistic {
    /// Records paired with the feedback-free reference filter: the fixed
    /// forward/backward discriminator whose mean changes sign under reversal.
    ReferenceFilter,
    /// Records paired with the realized trajectory's own expectations; its
    /// ensemble mean is nonnegative for every gain, kept for comparison.
    Realized,
}

/// Mean arrow statistic over a grid of feedback gains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrowScan {
    pub x_values: Vec<f64>,
    pub mean_lnr: Vec<f64>,
    pub stderr_lnr: Vec<f64>,
    pub zero_crossing_estimate: Option<f64>,
    pub n_traj: usize,
}

/// Scan result plus per-trajectory samples (for bootstrap) and warnings.
#[derive(Debug, Clone)]
pub struct ArrowScanOutput {
    pub scan: ArrowScan,
    /// ln R samples per grid point, trajectory-index order.
    pub samples: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// True when at least one channel has [H, A_j] ≠ 0, i.e. feedback can move
/// the measured expectations at all.
pub fn feedback_active(cfg: &TrajectoryConfig) -> bool {
    cfg.channels.iter().any(|ch| {
        commutator(&cfg.hamiltonian, ch.observable.mat())
            .map(|k| k.max_abs() > 1e-12)
            .unwrap_or(false)
    })
}

/// Simulates a fresh ensemble at every grid gain (independent seeds per X)
/// and aggregates ln R with the reference-filter pairing.
pub fn arrow_scan(
    cfg_template: &TrajectoryConfig,
    x_grid: &[f64],
    n_traj: usize,
    base_seed: u64,
) -> Result<ArrowScanOutput> {
    arrow_scan_with(
        cfg_template,
        x_grid,
        n_traj,
        base_seed,
        ArrowStatistic::ReferenceFilter,
    )
}

pub fn arrow_scan_with(
    cfg_template: &TrajectoryConfig,
    x_grid: &[f64],
    n_traj: usize,
    base_seed: u64,
    statistic: ArrowStatistic,
) -> Result<ArrowScanOutput> {
    cfg_template.validate()?;
    let mut warnings = Vec::new();
    if !feedback_active(cfg_template) {
        warnings.push(
            "degenerate family: [H, A] = 0 for every channel, the scan is flat in X".to_string(),
        );
    }
    let mut samples = Vec::with_capacity(x_grid.len());
    let mut mean_lnr = Vec::with_capacity(x_grid.len());
    let mut stderr_lnr = Vec::with_capacity(x_grid.len());
    for (xi, &x) in x_grid.iter().enumerate() {
        let mut cfg = cfg_template.clone();
        cfg.feedback_gain_x = x;
        let point_seed = derive_seed(base_seed, &[rng::tag::SCAN_POINT, xi as u64]);
        let values_res: Vec<Result<f64>> = par_map_indexed(n_traj, |i| {
            let mut member = cfg.clone();
            member.seed = trajectory_seed(point_seed, i);
            match statistic {
                ArrowStatistic::ReferenceFilter => arrow_sample(&member).map(|s| s.reference.ln_r),
                ArrowStatistic::Realized => realized_sample(&member).map(|d| d.ln_r),
            }
        });
        let mut values = Vec::with_capacity(n_traj);
        for (i, v) in values_res.into_iter().enumerate() {
            match v {
                Ok(v) => values.push(v),
                Err(e) => {
                    return Err(Error::TrajectoryFailure {
                        index: i,
                        source: Box::new(e),
                    })
                }
            }
        }
        let (m, se) = mean_stderr(&values);
        mean_lnr.push(m);
        stderr_lnr.push(se);
        samples.push(values);
    }
    let zero_crossing_estimate = zero_crossing(x_grid, &mean_lnr);
    Ok(ArrowScanOutput {
        scan: ArrowScan {
            x_values: x_grid.to_vec(),
            mean_lnr,
            stderr_lnr,
            zero_crossing_estimate,
            n_traj,
        },
        samples,
        warnings,
    })
}

/// Percentile bootstrap interval for the zero crossing of a scan.
/// Returns (lo, hi) over the resamples that produced a crossing, plus the
/// number that did.
pub fn bootstrap_crossing_interval(
    x_values: &[f64],
    samples: &[Vec<f64>],
    n_resamples: usize,
    seed: u64,
) -> (Option<(f64, f64)>, usize) {
    let mut crossings = Vec::new();
    let mut rng = stream(seed, &[rng::tag::BOOTSTRAP]);
    for _ in 0..n_resamples {
        let means: Vec<f64> = samples
            .iter()
            .map(|xs| {
                let n = xs.len();
                let resampled: Vec<f64> = (0..n).map(|_| xs[rng.random_range(0..n)]).collect();
                pairwise_sum(&resampled) / n as f64
            })
            .collect();
        if let Some(x) = zero_crossing(x_values, &means) {
            crossings.push(x);
        }
    }
    let n_crossed = crossings.len();
    if n_crossed < 2 {
        return (None, n_crossed);
    }
    crossings.sort_by(|a, b| a.partial_cmp(b).expect("finite crossings"));
    let lo = crossings[(0.025 * (n_crossed - 1) as f64).round() as usize];
    let hi = crossings[(0.975 * (n_crossed - 1) as f64).round() as usize];
    (Some((lo, hi)), n_crossed)
}

/// Propagates the SME conditioned on externally supplied records (the
/// filter), storing the full trajectory. Records enter the feedback path
/// exactly as measured records would.
pub fn simulate_from_records(cfg: &TrajectoryConfig, records: &[Vec<f64>]) -> Result<Trajectory> {
    let m = cfg.steps();
    let n = cfg.channels.len();
    if records.len() != n || records.iter().any(|ch| ch.len() != m) {
        return Err(Error::Dataset(format!(
            "record array shape mismatch: expected {n} channels x {m} steps"
        )));
    }
    let mut run = TrajectoryRun::new_driven(cfg, gain_policy(cfg))?;
    let mut traj = Trajectory {
        times: (0..=m).map(|k| k as f64 * cfg.dt).collect(),
        states: Vec::with_capacity(m + 1),
        records: vec![Vec::with_capacity(m); n],
        wiener: vec![Vec::with_capacity(m); n],
        expectations: vec![Vec::with_capacity(m); n],
        dt: cfg.dt,
        channel_taus: cfg.channels.iter().map(|c| c.tau).collect(),
        efficiency_eta: cfg.efficiency_eta,
        config_hash: cfg.config_hash(),
    };
    traj.states
        .push(DensityMatrix::trusted(run.state().clone()));
    let mut step_records = vec![0.0; n];
    for k in 0..m {
        for j in 0..n {
            step_records[j] = records[j][k];
        }
        run.advance_driven(&step_records)?;
        for j in 0..n {
            traj.records[j].push(run.last_records()[j]);
            traj.wiener[j].push(run.last_wiener()[j]);
            traj.expectations[j].push(run.last_expectations()[j]);
        }
        traj.states
            .push(DensityMatrix::trusted(run.state().clone()));
    }
    Ok(traj)
}

/// Log-densities of a record path paired with the feedback-free reference
/// filter run over the same records: the fixed forward/backward
/// discriminator, usable for trajectories produced by any pulse policy.
pub fn reference_density(cfg: &TrajectoryConfig, records: &[Vec<f64>]) -> Result<PathDensity> {
    let mut ref_cfg = cfg.clone();
    ref_cfg.feedback_gain_x = 0.0;
    let filtered = simulate_from_records(&ref_cfg, records)?;
    Ok(girsanov_log_density(&filtered))
}

/// Two estimates of E[statistic]: once directly from SME trajectories, once
/// from reference-measure records reweighted by the Girsanov density. Their
/// agreement is the executable content of the measure change.
#[derive(Debug, Clone, Copy)]
pub struct ImportanceCheck {
    pub direct: f64,
    pub direct_stderr: f64,
    pub reweighted: f64,
    pub reweighted_stderr: f64,
    pub effective_sample_size: f64,
    pub ess_warning: bool,
}

pub fn importance_consistency<F>(
    cfg: &TrajectoryConfig,
    statistic: F,
    n_traj: usize,
) -> Result<ImportanceCheck>
where
    F: Fn(&Trajectory) -> f64 + Sync + Send,
{
    cfg.validate()?;
    let m = cfg.steps();
    let n = cfg.channels.len();
    let eta = cfg.efficiency_eta;

    // Direct: E_PF[statistic] over measured-record trajectories.
    let direct_res: Vec<Result<f64>> = par_map_indexed(n_traj, |i| {
        let mut member = cfg.clone();
        member.seed = trajectory_seed(cfg.seed, i);
        simulate_with_policy(&member, gain_policy(&member)).map(|t| statistic(&t))
    });
    let mut direct_vals = Vec::with_capacity(n_traj);
    for (i, v) in direct_res.into_iter().enumerate() {
        match v {
            Ok(v) => direct_vals.push(v),
            Err(e) => {
                return Err(Error::TrajectoryFailure {
                    index: i,
                    source: Box::new(e),
                })
            }
        }
    }
    let (direct, direct_stderr) = mean_stderr(&direct_vals);

    // Reweighted: E_PW[w·statistic] with records drawn as pure noise,
    // r = √(τ/(η dt))·ξ, and states propagated by the record-conditioned SME.
    // With the Gaussian record model the discrete weight
    //   log w = Σ_j (η/τ_j)[Σ_k r⟨A⟩ dt - ½ Σ_k ⟨A⟩² dt]
    // makes the identity exact up to Monte Carlo error.
    let weighted_res: Vec<Result<(f64, f64)>> = par_map_indexed(n_traj, |i| {
        let member_seed = derive_seed(cfg.seed, &[rng::tag::REFERENCE_RECORDS, i as u64]);
        let mut record_rng = stream(member_seed, &[]);
        let mut records = vec![Vec::with_capacity(m); n];
        for _ in 0..m {
            for (j, ch) in records.iter_mut().enumerate() {
                let xi: f64 = record_rng.sample(StandardNormal);
                let scale = (cfg.channels[j].tau / (eta * cfg.dt)).sqrt();
                ch.push(scale * xi);
            }
        }
        let mut member = cfg.clone();
        member.seed = member_seed;
        simulate_from_records(&member, &records).map(|t| {
            let d = girsanov_log_density(&t);
            let w = (eta * d.log_dpf_dpw).exp();
            (w, w * statistic(&t))
        })
    });
    let mut weights = Vec::with_capacity(n_traj);
    let mut weighted_vals = Vec::with_capacity(n_traj);
    for (i, v) in weighted_res.into_iter().enumerate() {
        match v {
            Ok((w, ws)) => {
                weights.push(w);
                weighted_vals.push(ws);
            }
            Err(e) => {
                return Err(Error::TrajectoryFailure {
                    index: i,
                    source: Box::new(e),
                })
            }
        }
    }
    let (reweighted, reweighted_stderr) = mean_stderr(&weighted_vals);
    let ess = effective_sample_size(&weights);
    Ok(ImportanceCheck {
        direct,
        direct_stderr,
        reweighted,
        reweighted_stderr,
        effective_sample_size: ess,
        ess_warning: ess < 0.01 * n_traj as f64,
    })
}

/// Magnitude of the diagonal of D = (2/τ)⟨A⟩(Aρ + ρA - 2⟨A⟩ρ) in the
/// A-eigenbasis. Any Hamiltonian commutator -i[B, ρ] has vanishing diagonal
/// there, so a nonzero value certifies that the reverse-drift term is not a
/// commutator.
pub fn reverse_drift_commutator_defect(
    rho: &DensityMatrix,
    a: &Observable,
    tau: f64,
) -> Result<f64> {
    if rho.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: a.dim(),
        });
    }
    let exp_a = crate::algebra::expectation(a, rho)?;
    let arho = a.mat().mul(rho.mat())?;
    let rhoa = rho.mat().mul(a.mat())?;
    let mut d = arho.add(&rhoa)?;
    d.add_scaled(rho.mat(), num_complex::Complex64::new(-2.0 * exp_a, 0.0));
    let d = d.scale_re(2.0 * exp_a / tau);
    let (_, v) = hermitian_eigen(a.mat());
    let d_in_a = v.adjoint().mul(&d)?.mul(&v)?;
    let mut worst = 0.0f64;
    for i in 0..d_in_a.dim() {
        worst = worst.max(d_in_a.get(i, i).norm());
    }
    Ok(worst)
}
