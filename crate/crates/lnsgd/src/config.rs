//! Declarative run configs.
//!
//! The format is flat `key = value` text with dotted section names and `#`
//! comments, chosen for diff-friendliness. Unknown keys are hard errors so
//! typos cannot silently change an experiment. `parse → serialize → parse`
//! is the identity.
//!
//! ```text
//! experiment = demo
//! model.m = 64
//! model.d = 8
//! model.seed = 7
//! teacher.norm = 0.5            # or the literal m^-1/4
//! teacher.direction = first_axis
//! data.mode = fresh
//! schedule.0.optimizer = label_noise_sgd
//! schedule.0.eta = 0.01
//! schedule.0.sigma = 1.0
//! schedule.0.steps = 10000
//! schedule.0.record_every = 100
//! outputs.trace = trace.csv
//! ```

use crate::model::InitConfig;
use crate::optim::{GradientMode, OptimizerConfig, OptimizerKind, Sampling, ScheduleSegment};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// All offending keys and messages of one failed parse, reported together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid config ({} problem(s)):", self.problems.len())?;
        for p in &self.problems {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TeacherNorm {
    Value(f64),
    /// The literal `m^-1/4`, resolved against the model width.
    WidthQuarterInverse,
}

impl TeacherNorm {
    pub fn resolve(&self, m: usize) -> f64 {
        match self {
            TeacherNorm::Value(v) => *v,
            TeacherNorm::WidthQuarterInverse => (m as f64).powf(-0.25),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirectionSpec {
    FirstAxis,
    RandomUnit { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub norm: TeacherNorm,
    pub direction: DirectionSpec,
    pub input_clip: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataMode {
    Fresh,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub mode: DataMode,
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub trace: Option<String>,
    pub summary: Option<String>,
    pub per_neuron: bool,
    pub mean_dot_column: bool,
}

/// Optional constants for the input-dimension condition check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionKnobs {
    pub k_psi2: Option<f64>,
    pub c_abs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: String,
    pub model: InitConfig,
    pub teacher: TeacherSpec,
    pub data: DataSpec,
    pub schedule: Vec<ScheduleSegment>,
    pub outputs: OutputSpec,
    pub condition: ConditionKnobs,
}

struct KeyMap {
    entries: BTreeMap<String, String>,
    consumed: std::collections::BTreeSet<String>,
    problems: Vec<String>,
}

impl KeyMap {
    fn take(&mut self, key: &str) -> Option<String> {
        if let Some(v) = self.entries.get(key) {
            self.consumed.insert(key.to_string());
            Some(v.clone())
        } else {
            None
        }
    }

    fn require(&mut self, key: &str) -> Option<String> {
        let v = self.take(key);
        if v.is_none() {
            self.problems.push(format!("missing required key `{key}`"));
        }
        v
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, raw: Option<String>) -> Option<T> {
        let raw = raw?;
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.problems
                    .push(format!("key `{key}`: cannot parse value {raw:?}"));
                None
            }
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> Option<T> {
        let raw = self.require(key);
        self.parse(key, raw)
    }

    fn optional<T: std::str::FromStr>(&mut self, key: &str) -> Option<T> {
        let raw = self.take(key);
        self.parse(key, raw)
    }
}

fn split_lines(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    let mut problems = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                let key = k.trim().to_string();
                if map.insert(key.clone(), v.trim().to_string()).is_some() {
                    problems.push(format!("line {}: duplicate key `{key}`", lineno + 1));
                }
            }
            None => problems.push(format!(
                "line {}: expected `key = value`, got {line:?}",
                lineno + 1
            )),
        }
    }
    if problems.is_empty() {
        Ok(map)
    } else {
        Err(ConfigError { problems })
    }
}

/// Parses a config from its text form. Every problem — unknown keys,
/// missing keys, bad values — is collected and reported at once.
pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let entries = split_lines(text)?;
    let mut km = KeyMap {
        entries,
        consumed: Default::default(),
        problems: Vec::new(),
    };

    let experiment = km.require("experiment").unwrap_or_default();
    let m: Option<usize> = km.required("model.m");
    let d: Option<usize> = km.required("model.d");
    let seed: Option<u64> = km.required("model.seed");

    let norm = match km.require("teacher.norm") {
        Some(raw) if raw == "m^-1/4" => Some(TeacherNorm::WidthQuarterInverse),
        Some(raw) => match raw.parse::<f64>() {
            Ok(v) => Some(TeacherNorm::Value(v)),
            Err(_) => {
                km.problems.push(format!(
                    "key `teacher.norm`: expected a number or `m^-1/4`, got {raw:?}"
                ));
                None
            }
        },
        None => None,
    };
    let direction = match km.take("teacher.direction").as_deref() {
        None | Some("first_axis") => Some(DirectionSpec::FirstAxis),
        Some(other) => match other.strip_prefix("random_unit:") {
            Some(seed_text) => match seed_text.parse::<u64>() {
                Ok(seed) => Some(DirectionSpec::RandomUnit { seed }),
                Err(_) => {
                    km.problems.push(format!(
                        "key `teacher.direction`: bad random_unit seed {seed_text:?}"
                    ));
                    None
                }
            },
            None => {
                km.problems.push(format!(
                    "key `teacher.direction`: expected `first_axis` or \
                     `random_unit:<seed>`, got {other:?}"
                ));
                None
            }
        },
    };
    let input_clip: Option<f64> = km.optional("teacher.input_clip");

    let mode = match km.take("data.mode").as_deref() {
        None | Some("fresh") => Some(DataMode::Fresh),
        Some("fixed") => Some(DataMode::Fixed),
        Some(other) => {
            km.problems
                .push(format!("key `data.mode`: expected fresh or fixed, got {other:?}"));
            None
        }
    };
    let n: Option<usize> = km.optional("data.n");
    if mode == Some(DataMode::Fixed) && n.is_none() {
        km.problems.push("data.mode = fixed requires data.n".into());
    }

    let mut schedule = Vec::new();
    let mut idx = 0usize;
    loop {
        let prefix = format!("schedule.{idx}");
        if !km.entries.contains_key(&format!("{prefix}.optimizer")) {
            break;
        }
        let optimizer = km.take(&format!("{prefix}.optimizer")).unwrap();
        let eta: Option<f64> = km.required(&format!("{prefix}.eta"));
        let steps: Option<u64> = km.required(&format!("{prefix}.steps"));
        let record_every: Option<u64> = km.optional(&format!("{prefix}.record_every"));
        let gradient = |km: &mut KeyMap, default: GradientMode| {
            match km.take(&format!("{prefix}.gradient")).as_deref() {
                None => Some(default),
                Some("empirical") => Some(GradientMode::Empirical),
                Some("population") => Some(GradientMode::Population),
                Some(other) => {
                    km.problems.push(format!(
                        "key `{prefix}.gradient`: expected empirical or population, got {other:?}"
                    ));
                    None
                }
            }
        };
        let default_gradient = match mode {
            Some(DataMode::Fixed) => GradientMode::Empirical,
            _ => GradientMode::Population,
        };
        let default_sampling = match mode {
            Some(DataMode::Fixed) => Sampling::FixedDataset,
            _ => Sampling::Fresh,
        };
        let kind = match optimizer.as_str() {
            "label_noise_sgd" => {
                let sigma: Option<f64> = km.required(&format!("{prefix}.sigma"));
                let sampling = match km.take(&format!("{prefix}.sampling")).as_deref() {
                    None => Some(default_sampling),
                    Some("fresh") => Some(Sampling::Fresh),
                    Some("fixed") => Some(Sampling::FixedDataset),
                    Some(other) => {
                        km.problems.push(format!(
                            "key `{prefix}.sampling`: expected fresh or fixed, got {other:?}"
                        ));
                        None
                    }
                };
                sigma.zip(sampling).map(|(sigma, sampling)| {
                    OptimizerKind::LabelNoiseSgd { sigma, sampling }
                })
            }
            "gd" => gradient(&mut km, default_gradient).map(|g| OptimizerKind::Gd { gradient: g }),
            "sam" => {
                let rho: Option<f64> = km.required(&format!("{prefix}.rho"));
                let sigma: f64 = km.optional(&format!("{prefix}.sigma")).unwrap_or(0.0);
                rho.map(|rho| OptimizerKind::Sam { rho, sigma })
            }
            "markov_oscillation" => gradient(&mut km, default_gradient)
                .map(|g| OptimizerKind::MarkovOscillation { gradient: g }),
            "linearized_gd" => gradient(&mut km, default_gradient)
                .map(|g| OptimizerKind::LinearizedGd { gradient: g }),
            other => {
                km.problems.push(format!(
                    "key `{prefix}.optimizer`: unknown optimizer {other:?}"
                ));
                None
            }
        };
        if let (Some(kind), Some(eta), Some(steps)) = (kind, eta, steps) {
            let seg = ScheduleSegment {
                config: OptimizerConfig { kind, eta },
                steps,
                record_every: record_every.unwrap_or(100).max(1),
            };
            if let Err(e) = seg.validate() {
                km.problems.push(format!("{prefix}: {e}"));
            }
            schedule.push(seg);
        }
        idx += 1;
    }
    if schedule.is_empty() {
        km.problems.push("schedule has no segments (schedule.0.optimizer ...)".into());
    }

    let outputs = OutputSpec {
        trace: km.take("outputs.trace"),
        summary: km.take("outputs.summary"),
        per_neuron: km.optional("outputs.per_neuron").unwrap_or(false),
        mean_dot_column: km.optional("outputs.mean_dot_column").unwrap_or(false),
    };
    let condition = ConditionKnobs {
        k_psi2: km.optional("condition.k_psi2"),
        c_abs: km.optional("condition.c_abs"),
    };

    let unknown: Vec<String> = km
        .entries
        .keys()
        .filter(|k| !km.consumed.contains(*k))
        .map(|k| format!("unknown key `{k}`"))
        .collect();
    km.problems.extend(unknown);

    if !km.problems.is_empty() {
        return Err(ConfigError { problems: km.problems });
    }
    Ok(RunConfig {
        experiment,
        model: InitConfig { m: m.unwrap(), d: d.unwrap(), seed: seed.unwrap() },
        teacher: TeacherSpec {
            norm: norm.unwrap(),
            direction: direction.unwrap(),
            input_clip,
        },
        data: DataSpec { mode: mode.unwrap(), n },
        schedule,
        outputs,
        condition,
    })
}

/// Canonical text form; parsing it back yields an equal config.
pub fn to_text(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
    kv("experiment", cfg.experiment.clone());
    kv("model.m", cfg.model.m.to_string());
    kv("model.d", cfg.model.d.to_string());
    kv("model.seed", cfg.model.seed.to_string());
    kv(
        "teacher.norm",
        match cfg.teacher.norm {
            TeacherNorm::Value(v) => v.to_string(),
            TeacherNorm::WidthQuarterInverse => "m^-1/4".into(),
        },
    );
    kv(
        "teacher.direction",
        match cfg.teacher.direction {
            DirectionSpec::FirstAxis => "first_axis".into(),
            DirectionSpec::RandomUnit { seed } => format!("random_unit:{seed}"),
        },
    );
    if let Some(clip) = cfg.teacher.input_clip {
        kv("teacher.input_clip", clip.to_string());
    }
    kv(
        "data.mode",
        match cfg.data.mode {
            DataMode::Fresh => "fresh".into(),
            DataMode::Fixed => "fixed".into(),
        },
    );
    if let Some(n) = cfg.data.n {
        kv("data.n", n.to_string());
    }
    for (i, seg) in cfg.schedule.iter().enumerate() {
        let p = format!("schedule.{i}");
        match seg.config.kind {
            OptimizerKind::LabelNoiseSgd { sigma, sampling } => {
                kv(&format!("{p}.optimizer"), "label_noise_sgd".into());
                kv(&format!("{p}.sigma"), sigma.to_string());
                kv(
                    &format!("{p}.sampling"),
                    match sampling {
                        Sampling::Fresh => "fresh".into(),
                        Sampling::FixedDataset => "fixed".into(),
                    },
                );
            }
            OptimizerKind::Gd { gradient } => {
                kv(&format!("{p}.optimizer"), "gd".into());
                kv(&format!("{p}.gradient"), gradient_text(gradient));
            }
            OptimizerKind::Sam { rho, sigma } => {
                kv(&format!("{p}.optimizer"), "sam".into());
                kv(&format!("{p}.rho"), rho.to_string());
                kv(&format!("{p}.sigma"), sigma.to_string());
            }
            OptimizerKind::MarkovOscillation { gradient } => {
                kv(&format!("{p}.optimizer"), "markov_oscillation".into());
                kv(&format!("{p}.gradient"), gradient_text(gradient));
            }
            OptimizerKind::LinearizedGd { gradient } => {
                kv(&format!("{p}.optimizer"), "linearized_gd".into());
                kv(&format!("{p}.gradient"), gradient_text(gradient));
            }
        }
        kv(&format!("{p}.eta"), seg.config.eta.to_string());
        kv(&format!("{p}.steps"), seg.steps.to_string());
        kv(&format!("{p}.record_every"), seg.record_every.to_string());
    }
    if let Some(t) = &cfg.outputs.trace {
        kv("outputs.trace", t.clone());
    }
    if let Some(s) = &cfg.outputs.summary {
        kv("outputs.summary", s.clone());
    }
    kv("outputs.per_neuron", cfg.outputs.per_neuron.to_string());
    kv("outputs.mean_dot_column", cfg.outputs.mean_dot_column.to_string());
    if let Some(k) = cfg.condition.k_psi2 {
        kv("condition.k_psi2", k.to_string());
    }
    if let Some(c) = cfg.condition.c_abs {
        kv("condition.c_abs", c.to_string());
    }
    out
}

/// Evaluates every literal inequality of the small-learning-rate regime
/// that the config makes checkable. Warnings only: desk-scale runs cannot
/// satisfy all of them and must still run.
pub fn check_conditions(cfg: &RunConfig) -> Vec<String> {
    let mut warnings = Vec::new();
    let m = cfg.model.m as f64;
    let d = cfg.model.d as f64;
    for (i, seg) in cfg.schedule.iter().enumerate() {
        let eta = seg.config.eta;
        if m < 1.0 / eta.sqrt() {
            warnings.push(format!(
                "A1 (width): segment {i} has m = {m} < 1/√η = {:.1}",
                1.0 / eta.sqrt()
            ));
        }
        warnings.push(format!(
            "A2 (learning rate): η = {eta} ≤ C⁻⁹⁶ is unattainable at desk scale; informational"
        ));
    }
    if cfg.data.mode == DataMode::Fixed {
        let min_eta = cfg
            .schedule
            .iter()
            .map(|s| s.config.eta)
            .fold(f64::INFINITY, f64::min);
        let need = 1.0 / (min_eta * min_eta);
        if let Some(n) = cfg.data.n {
            if (n as f64) < need {
                warnings.push(format!(
                    "A3 (dataset size): n = {n} < 1/η² = {need:.0} at the smallest η"
                ));
            }
        }
    }
    let theta_norm = cfg.teacher.norm.resolve(cfg.model.m);
    let bound = m.powf(-0.25);
    if theta_norm > bound {
        warnings.push(format!(
            "A4 (teacher scale): ‖θ*‖ = {theta_norm} > m^(-1/4) = {bound:.6}"
        ));
    }
    if let Some(clip) = cfg.teacher.input_clip {
        if clip >= m {
            warnings.push(format!(
                "A5 (input magnitude): C_data = {clip} is not ≪ m = {m}"
            ));
        }
    }
    match (cfg.condition.k_psi2, cfg.condition.c_abs) {
        (Some(k), Some(c)) => {
            let need = 9.0 * std::f64::consts::LN_2 * k.powi(4) / (2.0 * c);
            if d < need {
                warnings.push(format!(
                    "A6 (dimension): d = {d} < 9·ln2·K⁴/(2c) = {need:.2} for K={k}, c={c}"
                ));
            }
        }
        _ => warnings.push(
            "A6 (dimension): not evaluated (set condition.k_psi2 and condition.c_abs)"
                .into(),
        ),
    }
    warnings
}

fn gradient_text(g: GradientMode) -> String {
    match g {
        GradientMode::Empirical => "empirical".into(),
        GradientMode::Population => "population".into(),
    }
}

/// One `key=v1,v2,...` sweep axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_grid_arg(arg: &str) -> Result<GridSpec, ConfigError> {
    let (key, values) = arg.split_once('=').ok_or_else(|| ConfigError {
        problems: vec![format!("grid argument {arg:?} is not of the form key=v1,v2,...")],
    })?;
    let values: Vec<String> =
        values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(ConfigError {
            problems: vec![format!("grid argument {arg:?} lists no values")],
        });
    }
    Ok(GridSpec { key: key.trim().to_string(), values })
}

/// Expands the Cartesian product of the grid axes over a base config text.
/// Each point re-parses with its substitutions applied, so grid values get
/// the same validation as hand-written configs. Points that do not
/// override `model.seed` get a derived seed `base_seed + point_index`.
pub fn expand_grid(
    base_text: &str,
    grids: &[GridSpec],
) -> Result<Vec<(Vec<(String, String)>, RunConfig)>, ConfigError> {
    if grids.is_empty() {
        return Err(ConfigError { problems: vec!["sweep needs at least one --grid axis".into()] });
    }
    let base_entries = split_lines(base_text)?;
    let base_seed: u64 = base_entries
        .get("model.seed")
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let seed_overridden = grids.iter().any(|g| g.key == "model.seed");

    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for grid in grids {
        let mut next = Vec::new();
        for point in &points {
            for value in &grid.values {
                let mut p = point.clone();
                p.push((grid.key.clone(), value.clone()));
                next.push(p);
            }
        }
        points = next;
    }

    let mut out = Vec::with_capacity(points.len());
    let mut problems = Vec::new();
    for (idx, assignment) in points.iter().enumerate() {
        let mut entries = base_entries.clone();
        for (k, v) in assignment {
            entries.insert(k.clone(), v.clone());
        }
        if !seed_overridden {
            entries.insert("model.seed".into(), (base_seed.wrapping_add(idx as u64)).to_string());
        }
        let text: String =
            entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        match parse_str(&text) {
            Ok(cfg) => out.push((assignment.clone(), cfg)),
            Err(e) => problems.push(format!(
                "grid point {idx} ({assignment:?}): {}",
                e.problems.join("; ")
            )),
        }
    }
    if !problems.is_empty() {
        return Err(ConfigError { problems });
    }
    Ok(out)
}
