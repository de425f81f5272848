//! Data-driven score estimation from measurement records: denoising score
//! matching (regression onto the conditional-Gaussian innovation score) and
//! sliced score matching (score recovery from samples alone via directional
//! derivatives), with a small feed-forward regressor trained by plain
//! minibatch SGD with momentum. Evaluation compares the learned score with
//! the analytic forms, and a trained model can drive the simulator's
//! feedback pulse in place of r/τ.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::stats::pairwise_sum;
use crate::trajectory::{simulate_with_policy, Trajectory, TrajectoryConfig};

/// Records are standardized by √(dt/τ) so network inputs are O(1).
pub fn record_scale(tau: f64, dt: f64) -> f64 {
    (dt / tau).sqrt()
}

/// Output scale converting a sliced-score-matching model (which estimates the
/// score of the scaled record distribution) into the innovation-score units
/// of the DSM convention: s_dsm = -s_ssm / (η·√(τ·dt)).
pub fn ssm_to_innovation_scale(tau: f64, dt: f64, eta: f64) -> f64 {
    -1.0 / (eta * (tau * dt).sqrt())
}

/// Windowed record history for one channel, most recent last, zero-padded at
/// the trajectory start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub values: Vec<f64>,
    pub channel_index: usize,
}

impl FeatureWindow {
    pub fn width(&self) -> usize {
        self.values.len()
    }
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Dsm,
    Ssm,
}

/// Physics regime the samples came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Ideal,
    Eta,
    Delay,
    NonGaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<(FeatureWindow, Option<f64>)>,
    pub regime: Regime,
    /// (τ, dt, η) of the generating configuration, kept for calibration.
    pub tau: f64,
    pub dt: f64,
    pub eta: f64,
}

fn regime_of(traj: &Trajectory, noise_gaussian: bool, delay_steps: usize) -> Regime {
    if !noise_gaussian {
        Regime::NonGaussian
    } else if delay_steps > 0 {
        Regime::Delay
    } else if traj.efficiency_eta < 1.0 {
        Regime::Eta
    } else {
        Regime::Ideal
    }
}

fn window_at(records: &[f64], end_inclusive: isize, width: usize, scale: f64) -> Vec<f64> {
    let mut values = vec![0.0; width];
    for (slot, offset) in (0..width).rev().zip(0..) {
        let idx = end_inclusive - offset;
        if idx < 0 {
            break;
        }
        values[slot] = records[idx as usize] * scale;
    }
    values
}

/// Builds a dataset from trajectories sharing one configuration. Features are
/// the scaled record window ending at the current step; DSM targets are the
/// innovation score (r_t - ⟨A⟩_t)/τ using the simulator's stored
/// expectations, SSM samples carry no target.
pub fn build_dataset(trajs: &[Trajectory], window: usize, objective: Objective) -> Result<Dataset> {
    build_dataset_impl(trajs, window, objective, 0, false)
}

/// Variant for the delayed-feedback regime: features are the record window
/// the controller actually sees (ending `lead` steps before the target time)
/// and the target is the current pulse coefficient r_t/τ, making training a
/// sequence-prediction task for the pulse the ideal zero-delay controller
/// would fire.
pub fn build_pulse_prediction_dataset(
    trajs: &[Trajectory],
    window: usize,
    lead: usize,
) -> Result<Dataset> {
    build_dataset_impl(trajs, window, Objective::Dsm, lead, true)
}

fn build_dataset_impl(
    trajs: &[Trajectory],
    window: usize,
    objective: Objective,
    lead: usize,
    pulse_target: bool,
) -> Result<Dataset> {
    if window == 0 {
        return Err(Error::Dataset("window must be at least 1".into()));
    }
    let first = trajs
        .first()
        .ok_or_else(|| Error::Dataset("no trajectories".into()))?;
    if trajs.iter().any(|t| t.config_hash != first.config_hash) {
        return Err(Error::Dataset(
            "trajectories must share one configuration".into(),
        ));
    }
    let m = first.n_steps();
    if window > m {
        return Err(Error::Dataset(format!(
            "window {window} exceeds trajectory length {m}"
        )));
    }
    let mut samples = Vec::new();
    for traj in trajs {
        for j in 0..traj.n_channels() {
            let tau = traj.channel_taus[j];
            let scale = record_scale(tau, traj.dt);
            for k in 0..traj.n_steps() {
                let features =
                    window_at(&traj.records[j], k as isize - lead as isize, window, scale);
                let target = match objective {
                    Objective::Dsm => Some(if pulse_target {
                        traj.records[j][k] / tau
                    } else {
                        (traj.records[j][k] - traj.expectations[j][k]) / tau
                    }),
                    Objective::Ssm => None,
                };
                samples.push((
                    FeatureWindow {
                        values: features,
                        channel_index: j,
                    },
                    target,
                ));
            }
        }
    }
    Ok(Dataset {
        samples,
        regime: regime_of(first, true, 0),
        tau: first.channel_taus[0],
        dt: first.dt,
        eta: first.efficiency_eta,
    })
}

/// One dense layer; weights row-major (output × input).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Layer {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }

    fn apply_linear(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }

    fn transpose_apply(&self, g: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.cols, 0.0);
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let gr = g[r];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gr;
            }
        }
    }
}

/// Hidden activation; the output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
}

/// Feed-forward scalar regressor mapping a record window to a score value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub input_width: usize,
    pub output_width: usize,
}

impl ScoreModel {
    /// Fresh network with tanh hidden layers, deterministically initialized
    /// from the seed.
    pub fn new_mlp(input_width: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = stream(seed, &[rng::tag::MODEL_INIT]);
        let mut layers = Vec::new();
        let mut fan_in = input_width;
        for &h in hidden.iter().chain(std::iter::once(&1usize)) {
            let scale = (1.0 / fan_in as f64).sqrt();
            let weights = (0..h * fan_in)
                .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            layers.push(Layer {
                weights,
                bias: vec![0.0; h],
                rows: h,
                cols: fan_in,
            });
            fan_in = h;
        }
        Self {
            layers,
            activation: Activation::Tanh,
            input_width,
            output_width: 1,
        }
    }

    /// All-zero network (predicts 0 everywhere).
    pub fn zeros(input_width: usize, hidden: &[usize]) -> Self {
        let mut model = Self::new_mlp(input_width, hidden, 0);
        for layer in &mut model.layers {
            for w in &mut layer.weights {
                *w = 0.0;
            }
        }
        model
    }

    pub fn validate(&self) -> Result<()> {
        let mut width = self.input_width;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.cols != width
                || layer.weights.len() != layer.rows * layer.cols
                || layer.bias.len() != layer.rows
            {
                return Err(Error::Model(format!(
                    "layer {i} shape mismatch: expected input width {width}"
                )));
            }
            width = layer.rows;
        }
        if width != self.output_width || self.output_width != 1 {
            return Err(Error::Model("output width must be 1".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_width);
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&a, &mut z);
            if l < last {
                a.clear();
                a.extend(z.iter().map(|v| v.tanh()));
            } else {
                a = z.clone();
            }
        }
        a[0]
    }

    /// Activations per layer (input first, output last); hidden entries are
    /// post-tanh.
    fn forward_cache(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        let mut z = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(acts.last().expect("nonempty"), &mut z);
            if l < last {
                acts.push(z.iter().map(|v| v.tanh()).collect());
            } else {
                acts.push(z.clone());
            }
        }
        acts
    }

    /// Exact gradient of the output with respect to the inputs.
    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let acts = self.forward_cache(x);
        let mut bar = vec![1.0];
        let mut tmp = Vec::new();
        for l in (0..self.layers.len()).rev() {
            self.layers[l].transpose_apply(&bar, &mut tmp);
            if l > 0 {
                // tmp is w.r.t. the post-tanh activation of layer l-1.
                bar = tmp
                    .iter()
                    .zip(&acts[l])
                    .map(|(g, a)| g * (1.0 - a * a))
                    .collect();
            } else {
                bar = tmp.clone();
            }
        }
        bar
    }
}

/// Gradient buffers matching a model's layer shapes.
struct Grads {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl Grads {
    fn zeros(model: &ScoreModel) -> Self {
        Self {
            w: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            b: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }

    fn clear(&mut self) {
        for g in self.w.iter_mut().chain(self.b.iter_mut()) {
            for v in g.iter_mut() {
                *v = 0.0;
            }
        }
    }
}

/// Reverse pass accumulating parameter gradients from an output seed.
/// `acts[l]` feeds layer l; hidden activations are post-tanh.
fn backprop_value(model: &ScoreModel, acts: &[Vec<f64>], seed: f64, grads: &mut Grads) {
    let mut bar = vec![seed];
    let mut tmp = Vec::new();
    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        let input = &acts[l];
        for r in 0..layer.rows {
            let g = bar[r];
            let row = &mut grads.w[l][r * layer.cols..(r + 1) * layer.cols];
            for (gw, xi) in row.iter_mut().zip(input) {
                *gw += g * xi;
            }
            grads.b[l][r] += g;
        }
        if l > 0 {
            layer.transpose_apply(&bar, &mut tmp);
            bar = tmp
                .iter()
                .zip(&acts[l])
                .map(|(g, a)| g * (1.0 - a * a))
                .collect();
        }
    }
}

/// Forward-mode tangent pass along input direction `v`; returns per-layer
/// tangents (post-activation for hidden layers) and the output directional
/// derivative.
fn tangent_pass(model: &ScoreModel, acts: &[Vec<f64>], v: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let mut tangents = Vec::with_capacity(model.layers.len() + 1);
    tangents.push(v.to_vec());
    let last = model.layers.len() - 1;
    let mut tz = Vec::new();
    for (l, layer) in model.layers.iter().enumerate() {
        layer.apply_linear(tangents.last().expect("nonempty"), &mut tz);
        if l < last {
            let a = &acts[l + 1];
            tangents.push(
                tz.iter()
                    .zip(a)
                    .map(|(t, av)| t * (1.0 - av * av))
                    .collect(),
            );
        } else {
            tangents.push(tz.clone());
        }
    }
    let d = tangents.last().expect("nonempty")[0];
    (tangents, d)
}

/// Reverse pass through both the primal and tangent wires, accumulating
/// parameter gradients of `bar_s·s + bar_d·(vᵀ∇ₓs)`.
fn backprop_tangent(
    model: &ScoreModel,
    acts: &[Vec<f64>],
    tangents: &[Vec<f64>],
    bar_s: f64,
    bar_d: f64,
    grads: &mut Grads,
) {
    let mut bar_a = vec![bar_s];
    let mut bar_t = vec![bar_d];
    let mut tmp_a = Vec::new();
    let mut tmp_t = Vec::new();
    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        let input = &acts[l];
        let t_input = &tangents[l];
        // Gradients of z = W a + b and tz = W t flowing from bar_a (as bar_z)
        // and bar_t (as bar_tz) respectively; for hidden layers the
        // activation conversion happened when bar was pushed down.
        for r in 0..layer.rows {
            let gz = bar_a[r];
            let gt = bar_t[r];
            let row = &mut grads.w[l][r * layer.cols..(r + 1) * layer.cols];
            for (i, gw) in row.iter_mut().enumerate() {
                *gw += gz * input[i] + gt * t_input[i];
            }
            grads.b[l][r] += gz;
        }
        if l > 0 {
            layer.transpose_apply(&bar_a, &mut tmp_a);
            layer.transpose_apply(&bar_t, &mut tmp_t);
            // Convert from post-activation adjoints to pre-activation ones of
            // layer l-1: a = tanh(z), t_a = (1-a²)·t_z:
            //   bar_z  = (1-a²)·bar_a' - 2a·t_a·bar_t'... using t_a = tangent
            //   bar_tz = (1-a²)·bar_t'
            let a = &acts[l];
            let t_post = &tangents[l];
            let mut next_bar_a = Vec::with_capacity(a.len());
            let mut next_bar_t = Vec::with_capacity(a.len());
            for i in 0..a.len() {
                let phi_p = 1.0 - a[i] * a[i];
                // t_post = phi'·t_z  =>  t_z = t_post/phi' (phi' > 0 for tanh)
                let t_z = if phi_p > 0.0 { t_post[i] / phi_p } else { 0.0 };
                let bar_z = phi_p * tmp_a[i] + (-2.0 * a[i] * phi_p) * t_z * tmp_t[i];
                let bar_tz = phi_p * tmp_t[i];
                next_bar_a.push(bar_z);
                next_bar_t.push(bar_tz);
            }
            bar_a = next_bar_a;
            bar_t = next_bar_t;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    /// Random slice vectors per sample (SSM only).
    pub slice_count: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Dsm,
            learning_rate: 0.05,
            batch_size: 64,
            n_epochs: 30,
            slice_count: 1,
            seed: 7,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.slice_count == 0 {
            return Err(Error::InvalidValue {
                what: "training config",
                detail: "learning_rate, batch_size and slice_count must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Minibatch SGD with momentum 0.9 on the selected objective. Deterministic
/// given the seed; returns the trained model and the per-epoch loss curve.
/// DSM internally whitens the targets and folds the scale back into the
/// (linear) output layer, so the returned model predicts raw innovation
/// scores and the loss curve is reported in raw units.
pub fn train(
    dataset: &Dataset,
    model_init: &ScoreModel,
    cfg: &TrainingConfig,
) -> Result<(ScoreModel, Vec<f64>)> {
    cfg.validate()?;
    model_init.validate()?;
    if dataset.samples.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    if dataset
        .samples
        .iter()
        .any(|(f, _)| f.width() != model_init.input_width)
    {
        return Err(Error::Dataset(format!(
            "feature width does not match model input width {}",
            model_init.input_width
        )));
    }
    if cfg.objective == Objective::Dsm && dataset.samples.iter().any(|(_, t)| t.is_none()) {
        return Err(Error::Dataset(
            "DSM requires targets on every sample".into(),
        ));
    }
    if cfg.n_epochs == 0 {
        return Ok((model_init.clone(), Vec::new()));
    }

    // Target whitening for DSM: train against (t - μ)/σ, then fold σ and μ
    // back into the linear output layer.
    let (t_mu, t_sigma) = if cfg.objective == Objective::Dsm {
        let ts: Vec<f64> = dataset
            .samples
            .iter()
            .map(|(_, t)| t.unwrap_or(0.0))
            .collect();
        let mu = pairwise_sum(&ts) / ts.len() as f64;
        let var = ts.iter().map(|t| (t - mu) * (t - mu)).sum::<f64>() / ts.len() as f64;
        (mu, var.sqrt().max(1e-12))
    } else {
        (0.0, 1.0)
    };

    let mut model = model_init.clone();
    let mut grads = Grads::zeros(&model);
    let mut momentum = Grads::zeros(&model);
    let mut rng = stream(cfg.seed, &[rng::tag::TRAINING]);
    let n = dataset.samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_curve = Vec::with_capacity(cfg.n_epochs);

    for epoch in 0..cfg.n_epochs {
        // Fisher-Yates driven by the training stream.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let (features, target) = &dataset.samples[idx];
                let acts = model.forward_cache(&features.values);
                let s = acts.last().expect("nonempty")[0];
                match cfg.objective {
                    Objective::Dsm => {
                        let t = (target.expect("validated") - t_mu) / t_sigma;
                        let diff = s - t;
                        batch_loss += diff * diff;
                        backprop_value(&model, &acts, 2.0 * diff / batch.len() as f64, &mut grads);
                    }
                    Objective::Ssm => {
                        let mut sample_loss = 0.5 * s * s;
                        backprop_value(&model, &acts, s / batch.len() as f64, &mut grads);
                        for _ in 0..cfg.slice_count {
                            let v: Vec<f64> = (0..model.input_width)
                                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                                .collect();
                            let g_out = *v.last().expect("width >= 1");
                            let (tangents, d) = tangent_pass(&model, &acts, &v);
                            sample_loss += d * g_out / cfg.slice_count as f64;
                            backprop_tangent(
                                &model,
                                &acts,
                                &tangents,
                                0.0,
                                g_out / (cfg.slice_count as f64 * batch.len() as f64),
                                &mut grads,
                            );
                        }
                        batch_loss += sample_loss;
                    }
                }
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() || batch_loss > 1e6 {
                return Err(Error::TrainingDiverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            // Momentum SGD update.
            for l in 0..model.layers.len() {
                for (w, (m, g)) in model.layers[l]
                    .weights
                    .iter_mut()
                    .zip(momentum.w[l].iter_mut().zip(&grads.w[l]))
                {
                    *m = 0.9 * *m - cfg.learning_rate * g;
                    *w += *m;
                }
                for (b, (m, g)) in model.layers[l]
                    .bias
                    .iter_mut()
                    .zip(momentum.b[l].iter_mut().zip(&grads.b[l]))
                {
                    *m = 0.9 * *m - cfg.learning_rate * g;
                    *b += *m;
                }
            }
            // Report DSM losses in raw target units.
            epoch_loss += batch_loss * t_sigma * t_sigma;
            batches += 1.0;
        }
        loss_curve.push(epoch_loss / batches);
    }

    if cfg.objective == Objective::Dsm {
        let out = model.layers.last_mut().expect("nonempty");
        for w in &mut out.weights {
            *w *= t_sigma;
        }
        for b in &mut out.bias {
            *b = *b * t_sigma + t_mu;
        }
    }
    Ok((model, loss_curve))
}

/// Comparison of a trained model against the analytic score forms on
/// held-out trajectories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// RMSE against the exact conditional innovation score (r - ⟨A⟩)/τ.
    pub rmse_vs_innovation: f64,
    /// RMSE against the first-order efficiency-corrected form η·r/τ.
    pub rmse_vs_eta_corrected: f64,
    /// RMSE of the uncorrected analytic r/τ against the innovation score,
    /// the baseline the learned model competes with.
    pub rmse_analytic_vs_innovation: f64,
    /// Slope of the least-squares fit prediction ≈ slope · innovation score.
    pub calibration_slope: f64,
    /// RMS of the innovation score itself.
    pub analytic_rms: f64,
    pub n_samples: usize,
    /// Fraction of evaluation batches where the model beats the uncorrected
    /// r/τ formula in MSE against the innovation score.
    pub batch_win_fraction: f64,
    pub n_batches: usize,
}

/// Evaluates `model` on held-out trajectories; the feature window width is
/// the model's input width, batches of `batch_size` samples feed the paired
/// batch comparison.
pub fn evaluate_against_analytic(
    model: &ScoreModel,
    trajs: &[Trajectory],
    batch_size: usize,
) -> Result<EvalReport> {
    model.validate()?;
    let dataset = build_dataset(trajs, model.input_width, Objective::Dsm)?;
    let eta = dataset.eta;

    let mut n = 0usize;
    let mut sq_model = Vec::new();
    let mut sq_eta = Vec::new();
    let mut sq_analytic = Vec::new();
    let mut sq_target = Vec::new();
    let mut dot_pred_target = 0.0;
    let mut batch_wins = 0usize;
    let mut n_batches = 0usize;
    let mut batch_model_acc = 0.0;
    let mut batch_analytic_acc = 0.0;
    let mut in_batch = 0usize;

    let mut sample_idx = 0usize;
    for traj in trajs {
        for j in 0..traj.n_channels() {
            let tau = traj.channel_taus[j];
            for k in 0..traj.n_steps() {
                let (features, target) = &dataset.samples[sample_idx];
                sample_idx += 1;
                let t = target.expect("DSM dataset");
                let pred = model.forward(&features.values);
                let r = traj.records[j][k];
                let analytic = r / tau;
                let eta_corrected = eta * r / tau;
                sq_model.push((pred - t) * (pred - t));
                sq_eta.push((pred - eta_corrected) * (pred - eta_corrected));
                sq_analytic.push((analytic - t) * (analytic - t));
                sq_target.push(t * t);
                dot_pred_target += pred * t;
                n += 1;

                batch_model_acc += (pred - t) * (pred - t);
                batch_analytic_acc += (analytic - t) * (analytic - t);
                in_batch += 1;
                if in_batch == batch_size {
                    if batch_model_acc < batch_analytic_acc {
                        batch_wins += 1;
                    }
                    n_batches += 1;
                    batch_model_acc = 0.0;
                    batch_analytic_acc = 0.0;
                    in_batch = 0;
                }
            }
        }
    }
    let mean = |xs: &[f64]| pairwise_sum(xs) / xs.len().max(1) as f64;
    let target_ms = mean(&sq_target);
    Ok(EvalReport {
        rmse_vs_innovation: mean(&sq_model).sqrt(),
        rmse_vs_eta_corrected: mean(&sq_eta).sqrt(),
        rmse_analytic_vs_innovation: mean(&sq_analytic).sqrt(),
        calibration_slope: if target_ms > 0.0 {
            dot_pred_target / (target_ms * n as f64)
        } else {
            0.0
        },
        analytic_rms: target_ms.sqrt(),
        n_samples: n,
        batch_win_fraction: if n_batches > 0 {
            batch_wins as f64 / n_batches as f64
        } else {
            0.0
        },
        n_batches,
    })
}

/// Runs the simulator with the feedback pulse magnitude supplied by the
/// model: the pulse coefficient is X·calibration·s_θ(window) on the single
/// channel, replacing the analytic r/τ. The window sees the records the
/// controller sees (delay applied), scaled like the training features.
pub fn feedback_with_learned_score(
    cfg: &TrajectoryConfig,
    model: &ScoreModel,
    calibration: f64,
) -> Result<Trajectory> {
    model.validate()?;
    if cfg.channels.len() != 1 {
        return Err(Error::InvalidValue {
            what: "channels",
            detail: "learned feedback supports a single channel".into(),
        });
    }
    let tau = cfg.channels[0].tau;
    let scale = record_scale(tau, cfg.dt);
    let width = model.input_width;
    let x = cfg.feedback_gain_x;
    let mut features = vec![0.0; width];
    let policy = move |_chan: usize, visible: &[f64]| -> f64 {
        for f in features.iter_mut() {
            *f = 0.0;
        }
        let take = visible.len().min(width);
        for (slot, &r) in features[width - take..]
            .iter_mut()
            .zip(&visible[visible.len() - take..])
        {
            *slot = r * scale;
        }
        x * calibration * model.forward(&features)
    };
    simulate_with_policy(cfg, policy)
}
