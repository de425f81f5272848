//! Flat key-value configuration with dotted sections, e.g. `physics.tau`.
//! Chosen over nested formats for greppability and trivial parsing; CLI
//! overrides use the same dotted keys. Unknown keys are a hard error so
//! typos never fail silently.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use qarrow::algebra::{pauli_on_qubit, ComplexMatrix, DensityMatrix, Pauli, PureState};
use qarrow::path_measure::ArrowStatistic;
use qarrow::trajectory::{ChannelConfig, FeedbackLaw, NoiseModel, TrajectoryConfig};

use crate::hamiltonian::parse_hamiltonian;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{}:{}: {}: {}",
            self.line, self.column, tag, self.message
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Simulate,
    ArrowScan,
    GirsanovCheck,
    FrechetCert,
    KahlerCert,
    FlowsCert,
    TrainScore,
    EvalScore,
    ReversalDemo,
}

impl Experiment {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "simulate" => Self::Simulate,
            "arrow-scan" => Self::ArrowScan,
            "girsanov-check" => Self::GirsanovCheck,
            "frechet-cert" => Self::FrechetCert,
            "kahler-cert" => Self::KahlerCert,
            "flows-cert" => Self::FlowsCert,
            "train-score" => Self::TrainScore,
            "eval-score" => Self::EvalScore,
            "reversal-demo" => Self::ReversalDemo,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::ArrowScan => "arrow-scan",
            Self::GirsanovCheck => "girsanov-check",
            Self::FrechetCert => "frechet-cert",
            Self::KahlerCert => "kahler-cert",
            Self::FlowsCert => "flows-cert",
            Self::TrainScore => "train-score",
            Self::EvalScore => "eval-score",
            Self::ReversalDemo => "reversal-demo",
        }
    }

    pub const ALL: [&'static str; 9] = [
        "simulate",
        "arrow-scan",
        "girsanov-check",
        "frechet-cert",
        "kahler-cert",
        "flows-cert",
        "train-score",
        "eval-score",
        "reversal-demo",
    ];
}

/// A parsed key-value file: values plus source positions for diagnostics.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize, usize)>,
}

impl KeyValues {
    /// Parses the flat format; returns parse errors with line/column.
    pub fn parse(text: &str) -> Result<Self, Diagnostic> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            if line.trim().is_empty() {
                continue;
            }
            let eq = line.find('=').ok_or_else(|| Diagnostic {
                severity: Severity::Error,
                message: "expected `key = value`".to_string(),
                line: line_no,
                column: raw.len() - raw.trim_start().len() + 1,
            })?;
            let key = line[..eq].trim().to_string();
            let value = line[eq + 1..].trim().to_string();
            if key.is_empty() {
                return Err(Diagnostic {
                    severity: Severity::Error,
                    message: "empty key before `=`".to_string(),
                    line: line_no,
                    column: 1,
                });
            }
            let column = line.find(|c: char| !c.is_whitespace()).unwrap_or(0) + 1;
            entries.insert(key, (value, line_no, column));
        }
        Ok(Self { entries })
    }

    /// Applies a `key=value` override (column 0, line 0 marks CLI origin).
    pub fn set(&mut self, assignment: &str) -> Result<(), Diagnostic> {
        let eq = assignment.find('=').ok_or_else(|| Diagnostic {
            severity: Severity::Error,
            message: format!("override `{assignment}` is not of the form key=value"),
            line: 0,
            column: 0,
        })?;
        let key = assignment[..eq].trim().to_string();
        let value = assignment[eq + 1..].trim().to_string();
        self.entries.insert(key, (value, 0, 0));
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<(String, usize, usize)> {
        self.entries.remove(key)
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(k, (v, _, _))| (k.clone(), v.clone()))
            .collect()
    }
}

/// Everything an experiment needs, resolved with defaults.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub trajectory: TrajectoryConfig,
    pub n_traj: usize,
    pub x_grid: Vec<f64>,
    pub bootstrap: usize,
    pub arrow_statistic: ArrowStatistic,
    pub learn_objective: qarrow::learning::Objective,
    pub learn_rate: f64,
    pub learn_batch: usize,
    pub learn_epochs: usize,
    pub learn_slices: usize,
    pub learn_window: usize,
    pub learn_seed: u64,
    pub learn_hidden: Vec<usize>,
    pub learn_model_path: String,
    pub output_dir: String,
    /// Full resolved key set for the manifest.
    pub snapshot: BTreeMap<String, String>,
}

struct Resolver {
    kv: KeyValues,
    diagnostics: Vec<Diagnostic>,
}

impl Resolver {
    fn error_at(&mut self, key: &str, pos: (usize, usize), message: String) {
        self.diagnostics.push(Diagnostic {
            severity: Severity::Error,
            message: format!("{key}: {message}"),
            line: pos.0,
            column: pos.1,
        });
    }

    fn get_parsed<T: std::str::FromStr>(&mut self, key: &str, default: T) -> T {
        match self.kv.take(key) {
            None => default,
            Some((value, line, column)) => match value.parse::<T>() {
                Ok(v) => v,
                Err(_) => {
                    self.error_at(key, (line, column), format!("cannot parse `{value}`"));
                    default
                }
            },
        }
    }

    fn get_string(&mut self, key: &str, default: &str) -> (String, usize, usize) {
        match self.kv.take(key) {
            None => (default.to_string(), 0, 0),
            Some((value, line, column)) => (value, line, column),
        }
    }
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    if let Some((start_end, step)) = spec
        .rsplit_once(':')
        .and_then(|(rest, step)| rest.split_once(':').map(|(a, b)| ((a, b), step)))
    {
        let (a, b) = start_end;
        let start: f64 = a
            .trim()
            .parse()
            .map_err(|_| format!("bad grid start `{a}`"))?;
        let end: f64 = b
            .trim()
            .parse()
            .map_err(|_| format!("bad grid end `{b}`"))?;
        let step: f64 = step
            .trim()
            .parse()
            .map_err(|_| format!("bad grid step `{step}`"))?;
        if !(step > 0.0) || end < start {
            return Err("grid requires start <= end and step > 0".to_string());
        }
        let n = ((end - start) / step).round() as usize;
        return Ok((0..=n).map(|i| start + step * i as f64).collect());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad grid value `{s}`"))
        })
        .collect()
}

fn parse_noise(spec: &str) -> Result<NoiseModel, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts[0] {
        "gaussian" => Ok(NoiseModel::Gaussian),
        "student_t" => {
            let dof: f64 = parts
                .get(1)
                .ok_or("student_t requires `student_t:<dof>`")?
                .parse()
                .map_err(|_| "bad dof".to_string())?;
            Ok(NoiseModel::StudentT { dof })
        }
        "mixture" => {
            if parts.len() != 3 {
                return Err("mixture requires `mixture:<weight>:<sigma_ratio>`".to_string());
            }
            let weight: f64 = parts[1].parse().map_err(|_| "bad weight".to_string())?;
            let sigma_ratio: f64 = parts[2].parse().map_err(|_| "bad ratio".to_string())?;
            Ok(NoiseModel::GaussianMixture {
                weight,
                sigma_ratio,
            })
        }
        other => Err(format!("unknown noise model `{other}`")),
    }
}

fn qubit_state(token: &str) -> Result<Vec<Complex64>, String> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Ok(match token {
        "z+" => vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
        "z-" => vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
        "x+" => vec![Complex64::new(h, 0.0), Complex64::new(h, 0.0)],
        "x-" => vec![Complex64::new(h, 0.0), Complex64::new(-h, 0.0)],
        "y+" => vec![Complex64::new(h, 0.0), Complex64::new(0.0, h)],
        "y-" => vec![Complex64::new(h, 0.0), Complex64::new(0.0, -h)],
        other => return Err(format!("unknown qubit state `{other}`")),
    })
}

fn parse_initial_state(spec: &str, n_qubits: usize) -> Result<DensityMatrix, String> {
    let dim = 1usize << n_qubits;
    if spec == "mixed" {
        return Ok(DensityMatrix::maximally_mixed(dim));
    }
    if let Some(k) = spec.strip_prefix("basis:") {
        let k: usize = k.parse().map_err(|_| format!("bad basis index `{k}`"))?;
        return PureState::basis(dim, k)
            .map(|s| s.projector())
            .map_err(|e| e.to_string());
    }
    let tokens: Vec<&str> = spec.split(',').map(str::trim).collect();
    if tokens.len() != n_qubits {
        return Err(format!(
            "initial state lists {} qubit tokens for {n_qubits} qubits",
            tokens.len()
        ));
    }
    let mut amps = vec![Complex64::new(1.0, 0.0)];
    for token in tokens {
        let q = qubit_state(token)?;
        let mut next = Vec::with_capacity(amps.len() * 2);
        for a in &amps {
            for b in &q {
                next.push(a * b);
            }
        }
        amps = next;
    }
    PureState::new(amps)
        .map(|s| s.projector())
        .map_err(|e| e.to_string())
}

fn parse_channels(spec: &str, taus: &str, n_qubits: usize) -> Result<Vec<ChannelConfig>, String> {
    let names: Vec<&str> = spec.split(',').map(str::trim).collect();
    let tau_values: Vec<f64> = taus
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad tau `{s}`"))
        })
        .collect::<Result<_, _>>()?;
    if tau_values.len() != 1 && tau_values.len() != names.len() {
        return Err(format!(
            "{} tau values for {} channels",
            tau_values.len(),
            names.len()
        ));
    }
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut chars = name.chars();
            let letter = chars.next().ok_or("empty channel")?;
            let which = match letter {
                'X' => Pauli::X,
                'Y' => Pauli::Y,
                'Z' => Pauli::Z,
                other => return Err(format!("channel must start with X/Y/Z, got `{other}`")),
            };
            let index: usize = chars
                .as_str()
                .parse()
                .map_err(|_| format!("bad qubit index in `{name}`"))?;
            let observable = pauli_on_qubit(which, index, n_qubits).map_err(|e| e.to_string())?;
            let tau = if tau_values.len() == 1 {
                tau_values[0]
            } else {
                tau_values[i]
            };
            ChannelConfig::new(observable, tau).map_err(|e| e.to_string())
        })
        .collect()
}

/// Resolves the full experiment configuration. Every key has a default
/// except the experiment itself (supplied by the subcommand). Returns the
/// config together with all diagnostics; errors make the config unusable.
pub fn resolve(
    experiment: Experiment,
    kv: KeyValues,
) -> (Option<ExperimentConfig>, Vec<Diagnostic>) {
    let snapshot_input = kv.snapshot();
    let mut r = Resolver {
        kv,
        diagnostics: Vec::new(),
    };

    // The config file may also name the experiment; it must agree with the
    // subcommand when present.
    if let Some((value, line, column)) = r.kv.take("experiment") {
        match Experiment::parse(&value) {
            Some(e) if e == experiment => {}
            Some(e) => r.error_at(
                "experiment",
                (line, column),
                format!(
                    "config says `{}` but subcommand is `{}`",
                    e.name(),
                    experiment.name()
                ),
            ),
            None => r.error_at(
                "experiment",
                (line, column),
                format!(
                    "unknown experiment `{value}` (one of {:?})",
                    Experiment::ALL
                ),
            ),
        }
    }

    let n_qubits: usize = r.get_parsed("physics.n_qubits", 1);
    let omega: f64 = r.get_parsed(
        "physics.omega",
        if experiment == Experiment::ReversalDemo {
            8.0 * std::f64::consts::PI
        } else {
            0.5
        },
    );
    let (ham_spec, ham_pos_l, ham_pos_c) = r.get_string("physics.hamiltonian", "0.5*omega X0");
    let hamiltonian = match parse_hamiltonian(&ham_spec, omega, n_qubits) {
        Ok(h) => h,
        Err(msg) => {
            r.error_at("physics.hamiltonian", (ham_pos_l, ham_pos_c), msg);
            ComplexMatrix::zeros(1 << n_qubits)
        }
    };

    let (channels_spec, ch_l, ch_c) = r.get_string("physics.channels", "Z0");
    let (tau_spec, _, _) = r.get_string("physics.tau", "1.0");
    let channels = match parse_channels(&channels_spec, &tau_spec, n_qubits) {
        Ok(c) => c,
        Err(msg) => {
            r.error_at("physics.channels", (ch_l, ch_c), msg);
            Vec::new()
        }
    };

    let (noise_spec, noise_l, noise_c) = r.get_string("physics.noise", "gaussian");
    let noise = match parse_noise(&noise_spec) {
        Ok(n) => n,
        Err(msg) => {
            r.error_at("physics.noise", (noise_l, noise_c), msg);
            NoiseModel::Gaussian
        }
    };

    let (law_spec, law_l, law_c) = r.get_string("physics.feedback_law", "record");
    let feedback_law = match law_spec.as_str() {
        "record" => FeedbackLaw::Record,
        "eta_corrected" => FeedbackLaw::EtaCorrected,
        other => {
            r.error_at(
                "physics.feedback_law",
                (law_l, law_c),
                format!("unknown feedback law `{other}`"),
            );
            FeedbackLaw::Record
        }
    };

    let (state_spec, st_l, st_c) = r.get_string(
        "physics.initial_state",
        &vec!["z+"; n_qubits.max(1)].join(","),
    );
    let initial_state = match parse_initial_state(&state_spec, n_qubits) {
        Ok(s) => s,
        Err(msg) => {
            r.error_at("physics.initial_state", (st_l, st_c), msg);
            DensityMatrix::maximally_mixed(1 << n_qubits)
        }
    };

    let default_dt = if experiment == Experiment::ReversalDemo {
        2.5e-4
    } else {
        1e-3
    };
    let trajectory = TrajectoryConfig {
        hamiltonian,
        channels,
        feedback_gain_x: r.get_parsed("physics.feedback_x", 0.0),
        feedback_law,
        efficiency_eta: r.get_parsed("physics.efficiency", 1.0),
        delay_steps: r.get_parsed("physics.delay_steps", 0),
        noise,
        dt: r.get_parsed("physics.dt", default_dt),
        total_time: r.get_parsed("physics.total_time", 1.0),
        initial_state,
        seed: r.get_parsed("physics.seed", 42),
        validate_every: r.get_parsed("physics.validate_every", 0),
    };

    let default_n_traj = match experiment {
        Experiment::ReversalDemo => 5000,
        Experiment::FrechetCert | Experiment::KahlerCert => 1000,
        Experiment::FlowsCert => 100,
        Experiment::Simulate => 1,
        _ => 1000,
    };
    let n_traj: usize = r.get_parsed("statistics.n_traj", default_n_traj);
    let (grid_spec, g_l, g_c) = r.get_string("statistics.x_grid", "-4:0:0.25");
    let x_grid = match parse_grid(&grid_spec) {
        Ok(g) => g,
        Err(msg) => {
            r.error_at("statistics.x_grid", (g_l, g_c), msg);
            vec![0.0]
        }
    };
    let bootstrap: usize = r.get_parsed("statistics.bootstrap", 1000);
    let (stat_spec, stat_l, stat_c) = r.get_string("statistics.arrow_statistic", "realized");
    let arrow_statistic = match stat_spec.as_str() {
        "realized" => ArrowStatistic::Realized,
        "reference" => ArrowStatistic::ReferenceFilter,
        other => {
            r.error_at(
                "statistics.arrow_statistic",
                (stat_l, stat_c),
                format!("unknown arrow statistic `{other}` (realized|reference)"),
            );
            ArrowStatistic::Realized
        }
    };

    let (obj_spec, obj_l, obj_c) = r.get_string("learning.objective", "dsm");
    let learn_objective = match obj_spec.as_str() {
        "dsm" => qarrow::learning::Objective::Dsm,
        "ssm" => qarrow::learning::Objective::Ssm,
        other => {
            r.error_at(
                "learning.objective",
                (obj_l, obj_c),
                format!("unknown objective `{other}` (dsm|ssm)"),
            );
            qarrow::learning::Objective::Dsm
        }
    };
    let (hidden_spec, h_l, h_c) = r.get_string("learning.hidden", "32,32");
    let learn_hidden: Vec<usize> = match hidden_spec
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
    {
        Ok(h) if !h.is_empty() => h,
        _ => {
            r.error_at(
                "learning.hidden",
                (h_l, h_c),
                format!("bad hidden layer list `{hidden_spec}`"),
            );
            vec![32, 32]
        }
    };

    let learn_rate = r.get_parsed("learning.rate", 0.02);
    let learn_batch = r.get_parsed("learning.batch", 64);
    let learn_epochs = r.get_parsed("learning.epochs", 30);
    let learn_slices = r.get_parsed("learning.slices", 1);
    let learn_window = r.get_parsed("learning.window", 4);
    let learn_seed = r.get_parsed("learning.seed", 7);
    let (learn_model_path, _, _) = r.get_string("learning.model", "model.json");
    let (output_dir, _, _) = r.get_string("output_dir", "qarrow_out");

    // Anything left is an unknown key: hard error.
    for (key, (_, line, column)) in r.kv.entries.clone() {
        r.error_at(&key, (line, column), "unknown key".to_string());
    }

    // Physics invariant checks surface as diagnostics with the file position
    // of the nearest relevant key unavailable; report at line 0.
    match trajectory.validate() {
        Ok(warnings) => {
            for w in warnings {
                r.diagnostics.push(Diagnostic {
                    severity: Severity::Warning,
                    message: w,
                    line: 0,
                    column: 0,
                });
            }
        }
        Err(e) => {
            r.diagnostics.push(Diagnostic {
                severity: Severity::Error,
                message: e.to_string(),
                line: 0,
                column: 0,
            });
        }
    }

    let has_errors = r.diagnostics.iter().any(|d| d.severity == Severity::Error);
    let config = if has_errors {
        None
    } else {
        Some(ExperimentConfig {
            experiment,
            trajectory,
            n_traj,
            x_grid,
            bootstrap,
            arrow_statistic,
            learn_objective,
            learn_rate,
            learn_batch,
            learn_epochs,
            learn_slices,
            learn_window,
            learn_seed,
            learn_hidden,
            learn_model_path,
            output_dir,
            snapshot: snapshot_input,
        })
    };
    (config, r.diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_well_formed_config() {
        let kv = KeyValues::parse(
            "# comment\nphysics.tau = 2.0\nphysics.omega = 1.0\nstatistics.n_traj = 10\n",
        )
        .unwrap();
        let (cfg, diags) = resolve(Experiment::Simulate, kv);
        assert!(diags.is_empty(), "{diags:?}");
        let cfg = cfg.unwrap();
        assert_eq!(cfg.trajectory.channels[0].tau, 2.0);
        assert_eq!(cfg.n_traj, 10);
    }

    #[test]
    fn unknown_key_is_hard_error() {
        let kv = KeyValues::parse("physics.tua = 1.0\n").unwrap();
        let (cfg, diags) = resolve(Experiment::Simulate, kv);
        assert!(cfg.is_none());
        assert!(diags.iter().any(|d| d.message.contains("unknown key")
            && d.line == 1
            && d.severity == Severity::Error));
    }

    #[test]
    fn parse_error_reports_line_and_column() {
        let err = KeyValues::parse("physics.tau = 1.0\n  bogus line\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(err.column, 3);
    }

    #[test]
    fn zero_tau_names_channel_and_invariant() {
        let kv = KeyValues::parse("physics.tau = 0\n").unwrap();
        let (cfg, diags) = resolve(Experiment::Simulate, kv);
        assert!(cfg.is_none());
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Error && d.message.contains("tau")));
    }

    #[test]
    fn coarse_dt_is_warning_not_error() {
        let kv = KeyValues::parse("physics.dt = 0.1\n").unwrap();
        let (cfg, diags) = resolve(Experiment::Simulate, kv);
        assert!(cfg.is_some());
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Warning && d.message.contains("tau/20")));
    }

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("-1:0:0.5").unwrap(), vec![-1.0, -0.5, 0.0]);
        assert_eq!(parse_grid("0.25, 0.5").unwrap(), vec![0.25, 0.5]);
        assert!(parse_grid("1:0:0.5").is_err());
    }

    #[test]
    fn initial_states() {
        let rho = parse_initial_state("z+,z-", 2).unwrap();
        assert_eq!(rho.dim(), 4);
        assert!((rho.mat().get(1, 1).re - 1.0).abs() < 1e-15);
        assert!(parse_initial_state("z+", 2).is_err());
        let mixed = parse_initial_state("mixed", 1).unwrap();
        assert!((mixed.mat().get(0, 0).re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn multichannel_with_per_channel_tau() {
        let kv = KeyValues::parse(
            "physics.n_qubits = 2\nphysics.channels = Z0,Z1\nphysics.tau = 1.0,2.0\nphysics.hamiltonian = 0.5*omega X0\nphysics.initial_state = z+,z+\n",
        )
        .unwrap();
        let (cfg, diags) = resolve(Experiment::Simulate, kv);
        assert!(diags.is_empty(), "{diags:?}");
        let cfg = cfg.unwrap();
        assert_eq!(cfg.trajectory.channels.len(), 2);
        assert_eq!(cfg.trajectory.channels[1].tau, 2.0);
    }

    #[test]
    fn experiment_mismatch_is_error() {
        let kv = KeyValues::parse("experiment = simulate\n").unwrap();
        let (cfg, diags) = resolve(Experiment::ArrowScan, kv);
        assert!(cfg.is_none());
        assert!(diags[0].message.contains("subcommand"));
    }
}
