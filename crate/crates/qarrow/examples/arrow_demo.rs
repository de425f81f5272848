//! Minimal library walkthrough: simulate a monitored driven qubit with
//! record feedback, compute the path-measure densities, and compare the
//! analytic score against the back-action direction for one time slice.

use qarrow::algebra::{expectation, pauli_on_qubit, sigma_x, Pauli, PureState};
use qarrow::path_measure::{girsanov_log_density, x_family_log_ratio};
use qarrow::score::{analytic_score, riemannian_flow, symplectic_flow};
use qarrow::trajectory::{simulate, ChannelConfig, FeedbackLaw, NoiseModel, TrajectoryConfig};

fn main() -> qarrow::Result<()> {
    let cfg = TrajectoryConfig {
        hamiltonian: sigma_x().scale_re(1.0), // H = (ω/2)σx with ωτ = 2
        channels: vec![ChannelConfig::new(pauli_on_qubit(Pauli::Z, 0, 1)?, 1.0)?],
        feedback_gain_x: -2.0,
        feedback_law: FeedbackLaw::Record,
        efficiency_eta: 1.0,
        delay_steps: 0,
        noise: NoiseModel::Gaussian,
        dt: 1e-3,
        total_time: 1.0,
        initial_state: PureState::basis(2, 0)?.projector(),
        seed: 7,
        validate_every: 0,
    };

    let traj = simulate(&cfg)?;
    let density = girsanov_log_density(&traj);
    println!("ln R            = {:+.4}", density.ln_r);
    println!("log dP_F/dP_W   = {:+.4}", density.log_dpf_dpw);
    println!("log dP_B/dP_W   = {:+.4}", density.log_dpb_dpw);
    println!("log dP_0/dP_B   = {:+.4}", x_family_log_ratio(&traj, 0.0));

    // The score operator of the final time slice and its two flows.
    let k = traj.n_steps() - 1;
    let score = analytic_score(&[traj.records[0][k]], &cfg.channels)?;
    let rho = traj.states[k].clone();
    let sym = symplectic_flow(&rho, &score)?;
    let riem = riemannian_flow(&rho, &score)?;
    println!(
        "final ⟨A⟩ = {:+.4}; |symplectic flow| = {:.3}, |riemannian flow| = {:.3}",
        expectation(&cfg.channels[0].observable, &rho)?,
        sym.max_abs(),
        riem.max_abs()
    );
    Ok(())
}
