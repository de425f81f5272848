//! Ensemble throughput: the rayon-parallel driver against the sequential
//! fallback, plus the Girsanov reduction over a fixed ensemble.

use criterion::{criterion_group, criterion_main, Criterion};

use qarrow::algebra::{pauli_on_qubit, sigma_x, Pauli, PureState};
use qarrow::path_measure::girsanov_log_density;
use qarrow::trajectory::{
    simulate_ensemble, simulate_ensemble_seq, ChannelConfig, FeedbackLaw, NoiseModel,
    TrajectoryConfig,
};

fn bench_config() -> TrajectoryConfig {
    TrajectoryConfig {
        hamiltonian: sigma_x().scale_re(1.0),
        channels: vec![ChannelConfig::new(pauli_on_qubit(Pauli::Z, 0, 1).unwrap(), 1.0).unwrap()],
        feedback_gain_x: -2.0,
        feedback_law: FeedbackLaw::Record,
        efficiency_eta: 1.0,
        delay_steps: 0,
        noise: NoiseModel::Gaussian,
        dt: 1e-3,
        total_time: 0.25,
        initial_state: PureState::basis(2, 0).unwrap().projector(),
        seed: 42,
        validate_every: 0,
    }
}

fn bench_ensemble(c: &mut Criterion) {
    let cfg = bench_config();
    let mut group = c.benchmark_group("simulate_ensemble_64x250steps");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| simulate_ensemble(&cfg, 64, 7).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| simulate_ensemble_seq(&cfg, 64, 7).unwrap())
    });
    group.finish();
}

fn bench_girsanov(c: &mut Criterion) {
    let cfg = bench_config();
    let trajs = simulate_ensemble(&cfg, 64, 7).unwrap();
    c.bench_function("girsanov_log_density_64", |b| {
        b.iter(|| {
            trajs
                .iter()
                .map(|t| girsanov_log_density(t).ln_r)
                .sum::<f64>()
        })
    });
}

criterion_group!(benches, bench_ensemble, bench_girsanov);
criterion_main!(benches);
