//! Numerical certification that the feedback operator r·A/τ acts as the
//! score of the trajectory distribution: exact-linearity Fréchet checks of
//! the per-time-slice cross term, the symplectic and Riemannian flows it
//! generates on the pure-state manifold, the Kähler compatibility identity,
//! and the multi-channel sum-of-locals form.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    commutator, project_tangent, trace_norm_hermitian, trace_product, ComplexMatrix, DensityMatrix,
    PureState,
};
use crate::error::{Error, Result};
use crate::trajectory::ChannelConfig;

/// Σ_j (r_j/τ_j)·A_j with the per-channel terms retained.
#[derive(Debug, Clone)]
pub struct ScoreOperator {
    mat: ComplexMatrix,
    channel_breakdown: Vec<ComplexMatrix>,
}

impl ScoreOperator {
    pub fn mat(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn channel_breakdown(&self) -> &[ComplexMatrix] {
        &self.channel_breakdown
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }
}

/// Builds the score operator for one time slice from the per-channel records.
pub fn analytic_score(records: &[f64], channels: &[ChannelConfig]) -> Result<ScoreOperator> {
    if records.len() != channels.len() {
        return Err(Error::InvalidValue {
            what: "record count",
            detail: format!("{} records for {} channels", records.len(), channels.len()),
        });
    }
    if channels.is_empty() {
        return Err(Error::InvalidValue {
            what: "channels",
            detail: "at least one channel required".into(),
        });
    }
    let d = channels[0].observable.dim();
    let mut mat = ComplexMatrix::zeros(d);
    let mut breakdown = Vec::with_capacity(channels.len());
    for (r, ch) in records.iter().zip(channels) {
        if ch.observable.dim() != d {
            return Err(Error::DimensionMismatch {
                left: d,
                right: ch.observable.dim(),
            });
        }
        let term = ch.observable.mat().scale_re(r / ch.tau);
        mat.add_scaled(&term, Complex64::new(1.0, 0.0));
        breakdown.push(term);
    }
    Ok(ScoreOperator {
        mat,
        channel_breakdown: breakdown,
    })
}

/// The innovation score (r - ⟨A⟩)/τ of one channel at one time slice: the
/// full derivative including the predictable drift part. The stochastic
/// component alone is r/τ; the two differ by ⟨A⟩/τ.
pub fn innovation_score(record: f64, expectation: f64, tau: f64) -> f64 {
    (record - expectation) / tau
}

/// Hermitian traceless perturbation direction.
#[derive(Debug, Clone)]
pub struct TangentVector {
    mat: ComplexMatrix,
}

impl TangentVector {
    /// Projects an arbitrary matrix onto the tangent space (Hermitian,
    /// traceless) and wraps it.
    pub fn project(delta: &ComplexMatrix) -> Self {
        Self {
            mat: project_tangent(delta),
        }
    }

    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        if mat.hermiticity_defect() > 1e-12 || mat.trace().norm() > 1e-12 {
            return Err(Error::InvalidValue {
                what: "tangent vector",
                detail: "must be Hermitian and traceless to 1e-12".into(),
            });
        }
        Ok(Self { mat })
    }

    pub fn mat(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            mat: self.mat.scale_re(s),
        }
    }
}

/// Result of the Fréchet linearity check at one (ρ, δρ, r) configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrechetCheck {
    /// |G(ρ+εδρ) - G(ρ) - ε·Tr(score·δρ)| / ε per requested ε. The cross
    /// term G is exactly linear in ρ, so these are rounding-level for every
    /// ε, not merely O(ε).
    pub defects: Vec<f64>,
    /// |G(ρ+δρ) - G(ρ)|
    pub holder_lhs: f64,
    /// (Σ_j |r_j|/τ_j)·‖δρ‖₁, the bound the difference may never exceed.
    pub holder_rhs: f64,
}

impl FrechetCheck {
    pub fn max_defect(&self) -> f64 {
        self.defects.iter().copied().fold(0.0, f64::max)
    }

    pub fn holder_ok(&self) -> bool {
        self.holder_lhs <= self.holder_rhs * (1.0 + 1e-12) + 1e-12
    }
}

/// The single-time cross-term functional G(ρ) = Σ_j (r_j/τ_j)·Tr(A_j ρ).
pub fn cross_term_functional(
    records: &[f64],
    channels: &[ChannelConfig],
    rho: &ComplexMatrix,
) -> f64 {
    records
        .iter()
        .zip(channels)
        .map(|(r, ch)| r / ch.tau * trace_product(ch.observable.mat(), rho).re)
        .sum()
}

/// Verifies that the Fréchet derivative of G at ρ is Tr(score·δρ): for each
/// ε the scaled defect must vanish to rounding, and the trace-norm bound
/// |ΔG| ≤ (Σ|r_j|/τ_j)·‖δρ‖₁ must hold. Errors when ρ + ε·δρ leaves the
/// state space for a requested ε.
pub fn frechet_check(
    rho: &DensityMatrix,
    delta: &TangentVector,
    records: &[f64],
    channels: &[ChannelConfig],
    epsilons: &[f64],
) -> Result<FrechetCheck> {
    let score = analytic_score(records, channels)?;
    if score.dim() != rho.dim() || delta.mat().dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: score.dim(),
        });
    }
    let g0 = cross_term_functional(records, channels, rho.mat());
    let pairing = trace_product(score.mat(), delta.mat()).re;

    let mut defects = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut perturbed = rho.mat().clone();
        perturbed.add_scaled(delta.mat(), Complex64::new(eps, 0.0));
        let min_eig = crate::algebra::min_eigenvalue(&perturbed);
        if min_eig < -1e-12 {
            return Err(Error::PsdViolation { epsilon: eps });
        }
        let g_eps = cross_term_functional(records, channels, &perturbed);
        defects.push((g_eps - g0 - eps * pairing).abs() / eps);
    }

    let mut at_delta = rho.mat().clone();
    at_delta.add_scaled(delta.mat(), Complex64::new(1.0, 0.0));
    let holder_lhs = (cross_term_functional(records, channels, &at_delta) - g0).abs();
    let coeff: f64 = records
        .iter()
        .zip(channels)
        .map(|(r, ch)| r.abs() / ch.tau)
        .sum();
    let holder_rhs = coeff * trace_norm_hermitian(delta.mat());
    Ok(FrechetCheck {
        defects,
        holder_lhs,
        holder_rhs,
    })
}

/// -i[S, ρ]: the Hamiltonian flow the score generates. Hermitian, traceless.
pub fn symplectic_flow(rho: &DensityMatrix, score: &ScoreOperator) -> Result<ComplexMatrix> {
    if rho.dim() != score.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: score.dim(),
        });
    }
    Ok(commutator(score.mat(), rho.mat())?.scale(Complex64::new(0.0, -1.0)))
}

/// S ρ + ρ S - 2 Tr(Sρ) ρ: the metric gradient flow of the same score, which
/// matches the stochastic back-action direction. Hermitian, traceless.
pub fn riemannian_flow(rho: &DensityMatrix, score: &ScoreOperator) -> Result<ComplexMatrix> {
    if rho.dim() != score.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: score.dim(),
        });
    }
    let srho = score.mat().mul(rho.mat())?;
    let rhos = rho.mat().mul(score.mat())?;
    let mut out = srho.add(&rhos)?;
    let exp_s = trace_product(score.mat(), rho.mat()).re;
    out.add_scaled(rho.mat(), Complex64::new(-2.0 * exp_s, 0.0));
    Ok(out)
}

/// Draws a horizontal tangent vector at ψ: a complex-normal vector projected
/// by (1 - |ψ⟩⟨ψ|), so ⟨ψ|φ⟩ = 0 to rounding.
pub fn sample_horizontal(psi: &PureState, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let d = psi.dim();
    let mut phi: Vec<Complex64> = (0..d)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    // Project twice; the second pass scrubs the rounding residue of the first.
    for _ in 0..2 {
        let overlap: Complex64 = psi
            .amplitudes()
            .iter()
            .zip(&phi)
            .map(|(p, f)| p.conj() * f)
            .sum();
        for (f, p) in phi.iter_mut().zip(psi.amplitudes()) {
            *f -= overlap * p;
        }
    }
    phi
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Max over sampled horizontal pairs of |ω(φ₁, Jφ₂) - g(φ₁, φ₂)| with
/// g = 2Re⟨φ₁|φ₂⟩, ω = 2Im⟨·|·⟩ and J = multiplication by i. An exact
/// complex-arithmetic identity; the return value is rounding-level.
pub fn kahler_identity_check(psi: &PureState, n_samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let phi1 = sample_horizontal(psi, rng);
        let phi2 = sample_horizontal(psi, rng);
        let g = 2.0 * inner(&phi1, &phi2).re;
        let j_phi2: Vec<Complex64> = phi2.iter().map(|z| Complex64::new(0.0, 1.0) * z).collect();
        let omega_j = 2.0 * inner(&phi1, &j_phi2).im;
        worst = worst.max((omega_j - g).abs());
    }
    worst
}

/// Defects of the two density-matrix flows against their state-vector
/// generators at step `dt`:
///
/// * symplectic: ρ(ψ - i·dt·(S - ⟨S⟩)ψ) vs ρ + dt·(-i[S, ρ])
/// * riemannian: ρ(ψ + dt·(S - ⟨S⟩)ψ)  vs ρ + dt·(Sρ + ρS - 2⟨S⟩ρ)
///
/// Both defects, measured as max-entry distance over dt, shrink linearly in
/// dt, certifying that the two flows descend from the same score operator
/// acting on the pure-state manifold.
pub fn flow_consistency_check(
    psi: &PureState,
    score: &ScoreOperator,
    dt: f64,
) -> Result<(f64, f64)> {
    if psi.dim() != score.dim() {
        return Err(Error::DimensionMismatch {
            left: psi.dim(),
            right: score.dim(),
        });
    }
    let rho = psi.projector();
    let s_psi = apply(score.mat(), psi.amplitudes());
    let exp_s = inner(psi.amplitudes(), &s_psi).re;

    // Horizontal generator vectors: -i(S - ⟨S⟩)ψ and (S - ⟨S⟩)ψ.
    let grad: Vec<Complex64> = s_psi
        .iter()
        .zip(psi.amplitudes())
        .map(|(sp, p)| sp - Complex64::new(exp_s, 0.0) * p)
        .collect();
    let ham: Vec<Complex64> = grad.iter().map(|z| Complex64::new(0.0, -1.0) * z).collect();

    let defect = |vector: &[Complex64], flow: &ComplexMatrix| -> Result<f64> {
        let moved: Vec<Complex64> = psi
            .amplitudes()
            .iter()
            .zip(vector)
            .map(|(p, v)| p + Complex64::new(dt, 0.0) * v)
            .collect();
        let moved = PureState::normalized(moved)?;
        let mut predicted = rho.mat().clone();
        predicted.add_scaled(flow, Complex64::new(dt, 0.0));
        Ok(moved.projector().mat().max_abs_diff(&predicted) / dt)
    };

    let sym = defect(&ham, &symplectic_flow(&rho, score)?)?;
    let riem = defect(&grad, &riemannian_flow(&rho, score)?)?;
    Ok((sym, riem))
}

fn apply(m: &ComplexMatrix, v: &[Complex64]) -> Vec<Complex64> {
    let d = m.dim();
    let mut out = vec![Complex64::new(0.0, 0.0); d];
    for i in 0..d {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..d {
            acc += m.get(i, j) * v[j];
        }
        out[i] = acc;
    }
    out
}

/// One line of a certification report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertCheck {
    pub name: String,
    pub samples: usize,
    pub max_defect: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CertCheck {
    pub fn new(name: impl Into<String>, samples: usize, max_defect: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            samples,
            max_defect,
            tolerance,
            pass: max_defect <= tolerance,
        }
    }
}

/// JSON-serializable certification report: one entry per check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificationReport {
    pub checks: Vec<CertCheck>,
}

impl CertificationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}
