//! Stochastic master equation integration for continuous Gaussian measurement
//! with record-proportional feedback.
//!
//! One step splits into the diffusive measurement update of the Itô SME,
//!
//! ```text
//! dρ = -i[H, ρ] dt
//!    + Σ_j (1/τ_j) (A_j ρ A_j - ρ) dt
//!    + Σ_j (√η/√τ_j) (A_j ρ + ρ A_j - 2⟨A_j⟩ρ) dW_j
//! ```
//!
//! followed by the feedback pulse applied as an exact unitary,
//! ρ ← U ρ U† with U = Π_j exp(-i θ_j A_j) and pulse angle θ_j = c_j·dt for
//! the standard coefficient `c_j = X · r_j^(fb)/τ_j` (`r_j^(fb)` is the
//! record delayed by `delay_steps`, zero-filled while the buffer is empty).
//! Since A_j² = 1, exp(-iθA) = cos θ - i sin θ·A exactly, so the pulse
//! introduces no discretization error of its own. Composing the pulse after
//! the measurement update reproduces the feedback covariation term of the
//! continuous protocol — the record noise carries √(τ/dt)-scale pulses whose
//! product with the same step's back-action survives the dt → 0 limit and is
//! the mechanism by which gain reshapes the trajectory statistics. Records
//! follow `r_j = ⟨A_j⟩ + √(τ_j/η) · dW_j/dt`: detection inefficiency widens
//! the record noise while the conditional back-action is scaled by √η. The
//! state is re-Hermitized and trace-renormalized after every step.
//!
//! The diffusive half augments plain Euler–Maruyama with the per-channel
//! (dW² - dt) compensation of the back-action term, the drift-diffusion
//! cross terms at dW·dt/2 and the second-order drift. Without these the
//! discrete purity performs an unbiased random walk with √dt-scale
//! excursions; with them the state tracks the pure manifold to O(dt^{3/2})
//! pathwise and the purity budget scales linearly in dt at unit efficiency.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::algebra::{
    min_eigenvalue, mul_into, purity, trace_product, ComplexMatrix, DensityMatrix, Observable,
};
use crate::error::{Error, Result};
use crate::rng::{channel_stream, trajectory_seed};

/// Repair tolerance: integration fails when the smallest eigenvalue of the
/// state drops below this at a validation checkpoint.
pub const REPAIR_TOL: f64 = -1e-6;

/// One continuously measured channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub observable: Observable,
    /// Characteristic measurement time governing measurement strength.
    pub tau: f64,
}

impl ChannelConfig {
    pub fn new(observable: Observable, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidValue {
                what: "channel tau",
                detail: format!("{}: tau = {tau} violates tau > 0", observable.label()),
            });
        }
        Ok(Self { observable, tau })
    }
}

/// Measurement noise family. All variants are standardized to zero mean and
/// unit variance before the √dt scaling, so the Gaussian limit is recoverable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    Gaussian,
    /// Student-t with dof > 2, rescaled to unit variance.
    StudentT {
        dof: f64,
    },
    /// Two-component scale mixture: with probability `weight` the narrow
    /// component, otherwise the wide one at `sigma_ratio` times its width.
    GaussianMixture {
        weight: f64,
        sigma_ratio: f64,
    },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian => Ok(()),
            NoiseModel::StudentT { dof } => {
                if dof > 2.0 && dof.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidValue {
                        what: "noise dof",
                        detail: format!("dof = {dof}, must exceed 2"),
                    })
                }
            }
            NoiseModel::GaussianMixture {
                weight,
                sigma_ratio,
            } => {
                if !(weight > 0.0 && weight < 1.0) {
                    return Err(Error::InvalidValue {
                        what: "mixture weight",
                        detail: format!("weight = {weight}, must lie in (0, 1)"),
                    });
                }
                if !(sigma_ratio > 1.0) || !sigma_ratio.is_finite() {
                    return Err(Error::InvalidValue {
                        what: "mixture sigma ratio",
                        detail: format!("sigma_ratio = {sigma_ratio}, must exceed 1"),
                    });
                }
                Ok(())
            }
        }
    }

    /// Draws one zero-mean unit-variance sample.
    pub fn sample_standardized(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            NoiseModel::Gaussian => rng.sample(StandardNormal),
            NoiseModel::StudentT { dof } => {
                let t: f64 = StudentT::new(dof).expect("validated dof").sample(rng);
                t * ((dof - 2.0) / dof).sqrt()
            }
            NoiseModel::GaussianMixture {
                weight,
                sigma_ratio,
            } => {
                let sigma_narrow =
                    1.0 / (weight + (1.0 - weight) * sigma_ratio * sigma_ratio).sqrt();
                let u: f64 = rng.random();
                let sigma = if u < weight {
                    sigma_narrow
                } else {
                    sigma_narrow * sigma_ratio
                };
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            }
        }
    }
}

/// How the pulse coefficient is formed from the visible record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackLaw {
    /// X · r/τ with the measured record, noise included.
    Record,
    /// X · η · r/τ, the first-order efficiency-corrected variant.
    EtaCorrected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    /// System Hamiltonian (angular-frequency units), Hermitian.
    pub hamiltonian: ComplexMatrix,
    pub channels: Vec<ChannelConfig>,
    /// Feedback gain X multiplying H_meas = r A/τ.
    pub feedback_gain_x: f64,
    pub feedback_law: FeedbackLaw,
    /// Detection efficiency η ∈ (0, 1].
    pub efficiency_eta: f64,
    /// Feedback latency in integration steps.
    pub delay_steps: usize,
    pub noise: NoiseModel,
    pub dt: f64,
    pub total_time: f64,
    pub initial_state: DensityMatrix,
    pub seed: u64,
    /// Eigenvalue validation every this many steps (0 disables checkpoints;
    /// cheap finiteness/trace checks always run).
    pub validate_every: usize,
}

impl TrajectoryConfig {
    /// Number of integration steps M = round(T/dt).
    pub fn steps(&self) -> usize {
        (self.total_time / self.dt).round().max(1.0) as usize
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Checks hard invariants; returns soft warnings (dt resolution).
    pub fn validate(&self) -> Result<Vec<String>> {
        let d = self.hamiltonian.dim();
        if self.hamiltonian.hermiticity_defect() > 1e-10 {
            return Err(Error::InvalidValue {
                what: "hamiltonian",
                detail: format!(
                    "Hermiticity defect {:.3e} exceeds 1e-10",
                    self.hamiltonian.hermiticity_defect()
                ),
            });
        }
        if self.channels.is_empty() {
            return Err(Error::InvalidValue {
                what: "channels",
                detail: "at least one measurement channel is required".into(),
            });
        }
        for (j, ch) in self.channels.iter().enumerate() {
            if ch.observable.dim() != d {
                return Err(Error::DimensionMismatch {
                    left: d,
                    right: ch.observable.dim(),
                });
            }
            if !(ch.tau > 0.0) || !ch.tau.is_finite() {
                return Err(Error::InvalidValue {
                    what: "channel tau",
                    detail: format!("channel {j}: tau = {} violates tau > 0", ch.tau),
                });
            }
        }
        if self.initial_state.dim() != d {
            return Err(Error::DimensionMismatch {
                left: d,
                right: self.initial_state.dim(),
            });
        }
        self.initial_state.validate()?;
        if !(self.dt > 0.0) || !(self.total_time > 0.0) {
            return Err(Error::InvalidValue {
                what: "time step",
                detail: format!("dt = {}, total_time = {}", self.dt, self.total_time),
            });
        }
        if self.dt > self.total_time {
            return Err(Error::InvalidValue {
                what: "time step",
                detail: format!("dt = {} exceeds total_time = {}", self.dt, self.total_time),
            });
        }
        if !(self.efficiency_eta > 0.0 && self.efficiency_eta <= 1.0) {
            return Err(Error::InvalidValue {
                what: "efficiency",
                detail: format!("eta = {} outside (0, 1]", self.efficiency_eta),
            });
        }
        self.noise.validate()?;

        let mut warnings = Vec::new();
        let min_tau = self
            .channels
            .iter()
            .map(|c| c.tau)
            .fold(f64::INFINITY, f64::min);
        // Record feedback applies pulse angles ~ X·ξ·√(dt/τ) per step; past
        // a few tenths of a radian the step no longer resolves them.
        let pulse_scale = 3.0 * self.feedback_gain_x.abs() * (self.dt / min_tau).sqrt();
        if pulse_scale > 0.35 {
            warnings.push(format!(
                "feedback pulses under-resolved: |X|·3σ·√(dt/τ) = {pulse_scale:.2} rad per step; \
                 reduce dt or |X|"
            ));
        }
        if self.dt > min_tau / 20.0 {
            warnings.push(format!(
                "dt = {} exceeds min tau/20 = {}; discretization error will be large",
                self.dt,
                min_tau / 20.0
            ));
        } else if self.dt > min_tau / 50.0 {
            warnings.push(format!(
                "dt = {} exceeds min tau/50 = {}; consider a smaller step",
                self.dt,
                min_tau / 50.0
            ));
        }
        Ok(warnings)
    }

    /// Stable FNV-1a hash of the serialized config. The seed is excluded so
    /// that ensemble members, which differ only by derived seeds, share it.
    pub fn config_hash(&self) -> u64 {
        let mut unseeded = self.clone();
        unseeded.seed = 0;
        let json = serde_json::to_string(&unseeded).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }
}

/// Full record of one stochastic run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// t_k = k·dt, length M+1.
    pub times: Vec<f64>,
    /// States including the initial one, length M+1.
    pub states: Vec<DensityMatrix>,
    /// Per-channel record values r, length M each.
    pub records: Vec<Vec<f64>>,
    /// Per-channel Wiener increments dW, length M each.
    pub wiener: Vec<Vec<f64>>,
    /// Per-channel ⟨A_j⟩ at the pre-step state, length M each.
    pub expectations: Vec<Vec<f64>>,
    pub dt: f64,
    pub channel_taus: Vec<f64>,
    pub efficiency_eta: f64,
    pub config_hash: u64,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn n_channels(&self) -> usize {
        self.records.len()
    }

    /// Copy with every record value negated; the formal device defining the
    /// backward path density. Wiener and expectation arrays are untouched.
    pub fn with_negated_records(&self) -> Trajectory {
        let mut out = self.clone();
        for ch in &mut out.records {
            for r in ch.iter_mut() {
                *r = -*r;
            }
        }
        out
    }

    /// max |r - (⟨A⟩ + √(τ/η)·dW/dt)| over all channels and steps.
    pub fn record_consistency_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.n_channels() {
            let scale = (self.channel_taus[j] / self.efficiency_eta).sqrt() / self.dt;
            for k in 0..self.n_steps() {
                let recon = self.expectations[j][k] + scale * self.wiener[j][k];
                worst = worst.max((self.records[j][k] - recon).abs());
            }
        }
        worst
    }
}

/// max_k (1 - Tr ρ_k²); the distance the path strays from the pure manifold.
pub fn purity_drift(traj: &Trajectory) -> f64 {
    traj.states
        .iter()
        .map(|rho| 1.0 - purity(rho))
        .fold(0.0, f64::max)
}

struct PreparedChannel {
    a: ComplexMatrix,
    tau: f64,
    /// √(τ/η)/√dt: record noise amplitude per unit ξ.
    record_noise: f64,
    /// √η/√τ: back-action amplitude per unit dW.
    backaction: f64,
    /// √(η/τ)·dt: innovation-to-dW conversion for record-driven propagation.
    innovation: f64,
}

/// Shared Euler–Maruyama kernel; owns the workspace matrices so the hot loop
/// performs no allocation.
pub(crate) struct SmeKernel {
    dt: f64,
    hamiltonian: ComplexMatrix,
    channels: Vec<PreparedChannel>,
    h_tot: ComplexMatrix,
    tmp_a: ComplexMatrix,
    tmp_b: ComplexMatrix,
    cmat: ComplexMatrix,
    s_list: Vec<ComplexMatrix>,
    drho: ComplexMatrix,
}

impl SmeKernel {
    fn new(cfg: &TrajectoryConfig) -> Self {
        let d = cfg.dim();
        let sqrt_dt = cfg.dt.sqrt();
        let eta = cfg.efficiency_eta;
        let channels = cfg
            .channels
            .iter()
            .map(|ch| PreparedChannel {
                a: ch.observable.mat().clone(),
                tau: ch.tau,
                record_noise: (ch.tau / eta).sqrt() / sqrt_dt,
                backaction: eta.sqrt() / ch.tau.sqrt(),
                innovation: (eta / ch.tau).sqrt() * cfg.dt,
            })
            .collect();
        let n = cfg.channels.len();
        Self {
            dt: cfg.dt,
            hamiltonian: cfg.hamiltonian.clone(),
            channels,
            h_tot: ComplexMatrix::zeros(d),
            tmp_a: ComplexMatrix::zeros(d),
            tmp_b: ComplexMatrix::zeros(d),
            cmat: ComplexMatrix::zeros(d),
            s_list: vec![ComplexMatrix::zeros(d); n],
            drho: ComplexMatrix::zeros(d),
        }
    }

    fn n_channels(&self) -> usize {
        self.channels.len()
    }

    fn expectations(&self, rho: &ComplexMatrix, out: &mut [f64]) {
        for (j, ch) in self.channels.iter().enumerate() {
            out[j] = trace_product(&ch.a, rho).re;
        }
    }

    /// Advances `rho` by one step: diffusive measurement update, then the
    /// feedback pulse as an exact unitary. `fb[j]` is the pulse coefficient
    /// of A_j (angle θ_j = fb_j·dt); `dw[j]` the Wiener increment; `exps[j]`
    /// the pre-step ⟨A_j⟩.
    ///
    /// Beyond the Euler terms the diffusive update carries the (dW² - dt)
    /// compensation, the drift-diffusion cross terms at dW·dt/2, and the
    /// second-order drift term. Together these keep the discrete state pinned
    /// to the pure manifold at η = 1 instead of letting purity random-walk.
    fn apply_step(
        &mut self,
        rho: &mut ComplexMatrix,
        exps: &[f64],
        fb: &[f64],
        dw: &[f64],
        step: usize,
    ) -> Result<()> {
        let dt = self.dt;
        let one = Complex64::new(1.0, 0.0);
        self.h_tot.copy_from(&self.hamiltonian);

        // Back-action directions S_j = A_j ρ + ρ A_j - 2⟨A_j⟩ρ.
        for j in 0..self.channels.len() {
            let ch = &self.channels[j];
            mul_into(&mut self.tmp_a, &ch.a, rho);
            mul_into(&mut self.tmp_b, rho, &ch.a);
            let s = &mut self.s_list[j];
            s.set_zero();
            s.add_scaled(&self.tmp_a, one);
            s.add_scaled(&self.tmp_b, one);
            s.add_scaled(rho, Complex64::new(-2.0 * exps[j], 0.0));
        }

        // Drift C(ρ) = -i[H_tot, ρ] + Σ_k (A_k ρ A_k - ρ)/τ_k.
        self.cmat.set_zero();
        add_drift_apply(
            &mut self.cmat,
            &mut self.tmp_a,
            &mut self.tmp_b,
            &self.h_tot,
            &self.channels,
            rho,
            1.0,
        );

        // dρ = C dt + (dt²/2) C(C) + stochastic pieces below.
        self.drho.set_zero();
        self.drho.add_scaled(&self.cmat, Complex64::new(dt, 0.0));
        add_drift_apply(
            &mut self.drho,
            &mut self.tmp_a,
            &mut self.tmp_b,
            &self.h_tot,
            &self.channels,
            &self.cmat,
            0.5 * dt * dt,
        );

        for j in 0..self.channels.len() {
            let c = self.channels[j].backaction;

            // Back-action (√η/√τ) S dW.
            self.drho
                .add_scaled(&self.s_list[j], Complex64::new(c * dw[j], 0.0));

            // (dW² - dt)/2 compensation along the diffusion direction:
            //   DB[B] = c²(A S + S A - 2 Tr(A S) ρ - 2⟨A⟩ S).
            let comp = 0.5 * c * c * (dw[j] * dw[j] - dt);
            mul_into(&mut self.tmp_a, &self.channels[j].a, &self.s_list[j]);
            mul_into(&mut self.tmp_b, &self.s_list[j], &self.channels[j].a);
            let tr_as = trace_product(&self.channels[j].a, &self.s_list[j]).re;
            self.drho.add_scaled(&self.tmp_a, Complex64::new(comp, 0.0));
            self.drho.add_scaled(&self.tmp_b, Complex64::new(comp, 0.0));
            self.drho
                .add_scaled(rho, Complex64::new(-2.0 * tr_as * comp, 0.0));
            self.drho
                .add_scaled(&self.s_list[j], Complex64::new(-2.0 * exps[j] * comp, 0.0));

            // Drift-diffusion cross terms at dW·dt/2:
            //   c·C(S_j) + DB_j[C(ρ)].
            let cross = 0.5 * dw[j] * dt;
            if cross != 0.0 {
                add_drift_apply(
                    &mut self.drho,
                    &mut self.tmp_a,
                    &mut self.tmp_b,
                    &self.h_tot,
                    &self.channels,
                    &self.s_list[j],
                    cross * c,
                );
                mul_into(&mut self.tmp_a, &self.channels[j].a, &self.cmat);
                mul_into(&mut self.tmp_b, &self.cmat, &self.channels[j].a);
                let tr_ac = trace_product(&self.channels[j].a, &self.cmat).re;
                let w = cross * c;
                self.drho.add_scaled(&self.tmp_a, Complex64::new(w, 0.0));
                self.drho.add_scaled(&self.tmp_b, Complex64::new(w, 0.0));
                self.drho
                    .add_scaled(rho, Complex64::new(-2.0 * tr_ac * w, 0.0));
                self.drho
                    .add_scaled(&self.cmat, Complex64::new(-2.0 * exps[j] * w, 0.0));
            }
        }

        rho.add_scaled(&self.drho, Complex64::new(1.0, 0.0));
        rho.hermitize();

        // Feedback pulse, exact for involutive A:
        //   U ρ U† = cos²θ ρ + sin²θ AρA - i sinθ cosθ (Aρ - ρA).
        for j in 0..self.channels.len() {
            let theta = fb[j] * dt;
            if theta == 0.0 {
                continue;
            }
            let (sin, cos) = theta.sin_cos();
            let a = &self.channels[j].a;
            mul_into(&mut self.tmp_a, a, rho); // A ρ
            mul_into(&mut self.tmp_b, rho, a); // ρ A
            mul_into(&mut self.cmat, &self.tmp_a, a); // A ρ A
            rho.scale_assign(cos * cos);
            rho.add_scaled(&self.cmat, Complex64::new(sin * sin, 0.0));
            rho.add_scaled(&self.tmp_a, Complex64::new(0.0, -sin * cos));
            rho.add_scaled(&self.tmp_b, Complex64::new(0.0, sin * cos));
        }

        if !rho.is_finite() {
            return Err(Error::NonFiniteState { step });
        }
        let tr = rho.trace().re;
        if !(tr.is_finite()) || (tr - 1.0).abs() > 0.5 {
            return Err(Error::IntegrationFailure {
                step,
                min_eig: f64::NAN,
            });
        }
        rho.scale_assign(1.0 / tr);

        // Qubit states that left the Bloch ball by a gross margin are
        // projected back onto it. Strong record-proportional feedback can
        // otherwise seed a runaway: |v| > 1 amplifies through the nonlinear
        // ⟨A⟩ terms. Ordinary discretization wander (|v|² - 1 at the 1e-3
        // scale) is left alone so it stays an honest error signal.
        if rho.dim() == 2 {
            let x = 2.0 * rho.get(0, 1).re;
            let y = -2.0 * rho.get(0, 1).im;
            let z = rho.get(0, 0).re - rho.get(1, 1).re;
            let v2 = x * x + y * y + z * z;
            if v2 > 1.02 {
                let shrink = 1.0 / v2.sqrt();
                let half = Complex64::new(0.5, 0.0);
                let nx = x * shrink;
                let ny = y * shrink;
                let nz = z * shrink;
                rho.set(0, 0, half * (1.0 + nz));
                rho.set(1, 1, half * (1.0 - nz));
                rho.set(0, 1, Complex64::new(0.5 * nx, -0.5 * ny));
                rho.set(1, 0, Complex64::new(0.5 * nx, 0.5 * ny));
            }
        }
        Ok(())
    }
}

/// out += coeff · C(m) with the linear drift map
/// C(m) = -i[H_tot, m] + Σ_k (A_k m A_k - m)/τ_k.
fn add_drift_apply(
    out: &mut ComplexMatrix,
    tmp_a: &mut ComplexMatrix,
    tmp_b: &mut ComplexMatrix,
    h_tot: &ComplexMatrix,
    channels: &[PreparedChannel],
    m: &ComplexMatrix,
    coeff: f64,
) {
    mul_into(tmp_a, h_tot, m);
    mul_into(tmp_b, m, h_tot);
    out.add_scaled(tmp_a, Complex64::new(0.0, -coeff));
    out.add_scaled(tmp_b, Complex64::new(0.0, coeff));
    for ch in channels {
        mul_into(tmp_a, &ch.a, m);
        mul_into(tmp_b, tmp_a, &ch.a);
        let w = coeff / ch.tau;
        out.add_scaled(tmp_b, Complex64::new(w, 0.0));
        out.add_scaled(m, Complex64::new(-w, 0.0));
    }
}

/// How records are produced while stepping.
enum RecordSource {
    /// Fresh noise from per-channel streams: r = ⟨A⟩ + √(τ/η)·ξ/√dt.
    Measured {
        rngs: Vec<ChaCha8Rng>,
        noise: NoiseModel,
    },
    /// Records supplied by the caller; dW recovered from the innovation.
    Driven,
}

/// Incremental runner for one trajectory. Drives the shared kernel, keeps the
/// per-channel record history for delayed feedback, and hands each step's
/// outputs to the caller.
pub struct TrajectoryRun<P> {
    kernel: SmeKernel,
    rho: ComplexMatrix,
    source: RecordSource,
    histories: Vec<Vec<f64>>,
    policy: P,
    delay: usize,
    validate_every: usize,
    step: usize,
    total: usize,
    sqrt_dt: f64,
    exps: Vec<f64>,
    recs: Vec<f64>,
    dws: Vec<f64>,
    fbs: Vec<f64>,
}

impl<P: FnMut(usize, &[f64]) -> f64> TrajectoryRun<P> {
    /// Measured-record mode: noise drawn from per-(trajectory, channel)
    /// counter-derived streams.
    pub fn new(cfg: &TrajectoryConfig, policy: P) -> Result<Self> {
        cfg.validate()?;
        let rngs = (0..cfg.channels.len())
            .map(|j| channel_stream(cfg.seed, j))
            .collect();
        Ok(Self::build(
            cfg,
            policy,
            RecordSource::Measured {
                rngs,
                noise: cfg.noise,
            },
        ))
    }

    /// Record-driven mode: the caller supplies each step's record values and
    /// the state is propagated by the SME conditioned on them (the filter).
    pub fn new_driven(cfg: &TrajectoryConfig, policy: P) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::build(cfg, policy, RecordSource::Driven))
    }

    fn build(cfg: &TrajectoryConfig, policy: P, source: RecordSource) -> Self {
        let n = cfg.channels.len();
        let total = cfg.steps();
        Self {
            kernel: SmeKernel::new(cfg),
            rho: cfg.initial_state.mat().clone(),
            source,
            histories: vec![Vec::with_capacity(total); n],
            policy,
            delay: cfg.delay_steps,
            validate_every: cfg.validate_every,
            step: 0,
            total,
            sqrt_dt: cfg.dt.sqrt(),
            exps: vec![0.0; n],
            recs: vec![0.0; n],
            dws: vec![0.0; n],
            fbs: vec![0.0; n],
        }
    }

    pub fn state(&self) -> &ComplexMatrix {
        &self.rho
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn steps_total(&self) -> usize {
        self.total
    }

    pub fn records_so_far(&self, channel: usize) -> &[f64] {
        &self.histories[channel]
    }

    /// Per-channel record values of the step just taken.
    pub fn last_records(&self) -> &[f64] {
        &self.recs
    }

    /// Per-channel Wiener increments of the step just taken.
    pub fn last_wiener(&self) -> &[f64] {
        &self.dws
    }

    /// Per-channel pre-step expectations of the step just taken.
    pub fn last_expectations(&self) -> &[f64] {
        &self.exps
    }

    /// One step in measured mode.
    pub fn advance(&mut self) -> Result<()> {
        if !matches!(self.source, RecordSource::Measured { .. }) {
            return Err(Error::InvalidValue {
                what: "run mode",
                detail: "advance() requires measured-record mode".into(),
            });
        }
        self.kernel.expectations(&self.rho, &mut self.exps);
        if let RecordSource::Measured { rngs, noise } = &mut self.source {
            for j in 0..self.kernel.n_channels() {
                let xi = noise.sample_standardized(&mut rngs[j]);
                self.dws[j] = xi * self.sqrt_dt;
                self.recs[j] = self.exps[j] + self.kernel.channels[j].record_noise * xi;
            }
        }
        self.finish_step()
    }

    /// One step in record-driven mode with externally supplied records.
    pub fn advance_driven(&mut self, records: &[f64]) -> Result<()> {
        if !matches!(self.source, RecordSource::Driven) {
            return Err(Error::InvalidValue {
                what: "run mode",
                detail: "advance_driven() requires record-driven mode".into(),
            });
        }
        debug_assert_eq!(records.len(), self.kernel.n_channels());
        self.kernel.expectations(&self.rho, &mut self.exps);
        for j in 0..self.kernel.n_channels() {
            self.recs[j] = records[j];
            self.dws[j] = (records[j] - self.exps[j]) * self.kernel.channels[j].innovation;
        }
        self.finish_step()
    }

    fn finish_step(&mut self) -> Result<()> {
        let n = self.kernel.n_channels();
        for j in 0..n {
            self.histories[j].push(self.recs[j]);
        }
        // Records visible to the controller: everything up to step - delay.
        let visible_len = (self.step + 1).saturating_sub(self.delay);
        for j in 0..n {
            self.fbs[j] = (self.policy)(j, &self.histories[j][..visible_len]);
        }
        self.kernel
            .apply_step(&mut self.rho, &self.exps, &self.fbs, &self.dws, self.step)?;
        if self.validate_every > 0 && (self.step + 1) % self.validate_every == 0 {
            let min_eig = min_eigenvalue(&self.rho);
            if min_eig < REPAIR_TOL {
                return Err(Error::IntegrationFailure {
                    step: self.step,
                    min_eig,
                });
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Standard pulse policy: c_j = X·r^(fb)/τ_j (or the η-corrected variant),
/// with the visible record zero-filled while the delay buffer is empty.
pub fn gain_policy(cfg: &TrajectoryConfig) -> impl FnMut(usize, &[f64]) -> f64 {
    let x = cfg.feedback_gain_x;
    let taus: Vec<f64> = cfg.channels.iter().map(|c| c.tau).collect();
    let scale = match cfg.feedback_law {
        FeedbackLaw::Record => 1.0,
        FeedbackLaw::EtaCorrected => cfg.efficiency_eta,
    };
    move |channel, visible| {
        let r = visible.last().copied().unwrap_or(0.0);
        scale * x * r / taus[channel]
    }
}

/// One public Euler–Maruyama step. `rngs` holds one stream per channel;
/// `pending_feedback` supplies the delayed record values used when
/// `cfg.delay_steps > 0` (ignored at zero delay, where the freshly drawn
/// record feeds back within the same increment). The output state is
/// eigenvalue-checked against the repair tolerance.
pub fn step(
    rho: &DensityMatrix,
    cfg: &TrajectoryConfig,
    rngs: &mut [ChaCha8Rng],
    pending_feedback: &[f64],
) -> Result<StepOutcome> {
    cfg.validate()?;
    if rho.dim() != cfg.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: cfg.dim(),
        });
    }
    let n = cfg.channels.len();
    debug_assert_eq!(rngs.len(), n);
    let mut kernel = SmeKernel::new(cfg);
    let mut exps = vec![0.0; n];
    let mut recs = vec![0.0; n];
    let mut dws = vec![0.0; n];
    let mut fbs = vec![0.0; n];
    let mut state = rho.mat().clone();
    kernel.expectations(&state, &mut exps);
    let sqrt_dt = cfg.dt.sqrt();
    for j in 0..n {
        let xi = cfg.noise.sample_standardized(&mut rngs[j]);
        dws[j] = xi * sqrt_dt;
        recs[j] = exps[j] + kernel.channels[j].record_noise * xi;
    }
    let mut policy = gain_policy(cfg);
    for j in 0..n {
        let visible = if cfg.delay_steps == 0 {
            [recs[j]]
        } else {
            [pending_feedback[j]]
        };
        fbs[j] = policy(j, &visible);
    }
    kernel.apply_step(&mut state, &exps, &fbs, &dws, 0)?;
    let min_eig = min_eigenvalue(&state);
    if min_eig < REPAIR_TOL {
        return Err(Error::IntegrationFailure { step: 0, min_eig });
    }
    Ok(StepOutcome {
        state: DensityMatrix::trusted(state),
        records: recs,
        wiener: dws,
        expectations: exps,
    })
}

/// Output of the public single-step operation.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: DensityMatrix,
    pub records: Vec<f64>,
    pub wiener: Vec<f64>,
    pub expectations: Vec<f64>,
}

/// Integrates the SME for the configured duration, storing the full state
/// path, records, Wiener increments and pre-step expectations. Deterministic
/// given `cfg.seed`.
pub fn simulate(cfg: &TrajectoryConfig) -> Result<Trajectory> {
    simulate_with_policy(cfg, gain_policy(cfg))
}

/// `simulate` with a caller-supplied pulse policy. The policy receives the
/// channel index and the records visible to the controller (delay already
/// applied, most recent last) and returns the feedback pulse coefficient of
/// A_j; the applied pulse angle is that coefficient times dt.
pub fn simulate_with_policy<P>(cfg: &TrajectoryConfig, policy: P) -> Result<Trajectory>
where
    P: FnMut(usize, &[f64]) -> f64,
{
    let mut run = TrajectoryRun::new(cfg, policy)?;
    let m = run.steps_total();
    let n = cfg.channels.len();
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
    for _ in 0..m {
        run.advance()?;
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

/// Maps trajectory indices through `f`, in parallel when the `parallel`
/// feature is enabled. Output order is index order either way.
pub(crate) fn par_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Always-sequential variant of [`par_map_indexed`], kept callable regardless
/// of features so benchmarks can compare the two paths.
pub(crate) fn seq_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

fn collect_indexed<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(results.len());
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => out.push(t),
            Err(e) => {
                return Err(Error::TrajectoryFailure {
                    index,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}

fn ensemble_member(cfg: &TrajectoryConfig, base_seed: u64, index: usize) -> TrajectoryConfig {
    let mut member = cfg.clone();
    member.seed = trajectory_seed(base_seed, index);
    member
}

/// `n_traj` independent trajectories with per-trajectory seeds derived from
/// `base_seed` by counter splitting. The result is independent of execution
/// order and parallelism degree.
pub fn simulate_ensemble(
    cfg: &TrajectoryConfig,
    n_traj: usize,
    base_seed: u64,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    collect_indexed(par_map_indexed(n_traj, |i| {
        simulate(&ensemble_member(cfg, base_seed, i))
    }))
}

/// Sequential reference implementation of [`simulate_ensemble`]; bit-identical
/// output by construction.
pub fn simulate_ensemble_seq(
    cfg: &TrajectoryConfig,
    n_traj: usize,
    base_seed: u64,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    collect_indexed(seq_map_indexed(n_traj, |i| {
        simulate(&ensemble_member(cfg, base_seed, i))
    }))
}
