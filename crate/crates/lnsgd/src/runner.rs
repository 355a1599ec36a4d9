//! Schedule execution: chains segments against one set of parameters,
//! records traces, tracks the phase structure, and powers the `run` and
//! `sweep` commands.

use crate::config::{DataMode, DirectionSpec, RunConfig};
use crate::data::{make_dataset, make_teacher, Dataset, TeacherProblem};
use crate::diagnostics::{
    alignment_cosine, detect_phase_boundary, lazy_escape_status, observe, CsvSink,
    MemorySink, NeuronRecord, PhaseReport, StepRecord, TelescopeTracker, TraceSink,
};
use crate::error::{Error, Result};
use crate::linalg::{norm, norm_sq};
use crate::model::{init_ntk, NetworkParams};
use crate::optim::{
    gd_full_batch_step, init_markov_stationary, label_noise_sgd_step, linearized_gd_step,
    markov_oscillation_step, sam_step, MarkovState, OptimizerKind, ScheduleSegment,
    DIVERGENCE_NORM_LIMIT,
};
use crate::rng::{domain, stream, Stream};
use crate::verify::predicted_escape_time;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub steps_run: u64,
    pub final_train_loss: f64,
    pub final_pop_loss: f64,
    pub final_theta_err: f64,
    /// First recorded step at which every neuron had escaped.
    pub escape_step: Option<u64>,
    pub phase_report: PhaseReport,
    /// Worst per-neuron telescoping residual over its pass bound, across
    /// all tracked noisy segments (present only when tracking was on).
    pub telescope_max_rel_residual: Option<f64>,
    /// Set when the run aborted on divergence; traces up to the abort are
    /// flushed and valid.
    pub aborted: Option<String>,
}

#[derive(Default)]
pub struct RunOptions {
    pub experiment: String,
    /// Track the telescoping sums during single-sample noisy segments (adds
    /// one O(m) pass per step) and report the worst residual.
    pub track_telescope: bool,
    /// Per-neuron dump rows written at every record point.
    pub neuron_sink: Option<Box<dyn Write + Send>>,
}

/// Tracks phase structure across record points.
struct PhaseTracker {
    first_escape: Vec<Option<u64>>,
    escape_step: Option<u64>,
    phase2_entry: Option<u64>,
    a_max: Vec<f64>,
    eta_ref: f64,
}

impl PhaseTracker {
    fn new(m: usize, eta_ref: f64) -> Self {
        Self {
            first_escape: vec![None; m],
            escape_step: None,
            phase2_entry: None,
            a_max: vec![0.0; m],
            eta_ref,
        }
    }

    fn scan(&mut self, p: &NetworkParams, step: u64) {
        let status = lazy_escape_status(p);
        for (slot, escaped) in self.first_escape.iter_mut().zip(&status.escaped) {
            if slot.is_none() && *escaped {
                *slot = Some(step);
            }
        }
        if self.escape_step.is_none() && status.frac_escaped == 1.0 {
            self.escape_step = Some(step);
        }
        if self.phase2_entry.is_none() && detect_phase_boundary(p, self.eta_ref) {
            self.phase2_entry = Some(step);
        }
        for (mx, a) in self.a_max.iter_mut().zip(p.a()) {
            *mx = mx.max(a.abs());
        }
    }

    fn report(&self, p: &NetworkParams, tp: &TeacherProblem, t1: Option<f64>, rec: &StepRecord) -> PhaseReport {
        let m = p.m();
        let a_bound = (m as f64).powf(-0.25);
        let violations = self.a_max.iter().filter(|mx| **mx > a_bound).count();
        let alignment_at_end = (0..m)
            .map(|i| alignment_cosine(p.neuron(i), &tp.theta_star).unwrap_or(0.0))
            .sum::<f64>()
            / m as f64;
        PhaseReport {
            escape_step_per_neuron: self.first_escape.clone(),
            phase2_entry_step: self.phase2_entry,
            t1_predicted: t1,
            alignment_at_end,
            converged: rec.pop_loss <= 1e-6,
            a_bound_violation_rate: violations as f64 / m as f64,
        }
    }
}

fn write_neuron_rows(
    sink: &mut Box<dyn Write + Send>,
    p: &NetworkParams,
    tp: &TeacherProblem,
    step: u64,
    tracker: Option<&TelescopeTracker>,
    eta: f64,
    wrote_header: &mut bool,
) -> Result<()> {
    if !*wrote_header {
        crate::diagnostics::write_neuron_header(sink)?;
        *wrote_header = true;
    }
    let status = lazy_escape_status(p);
    for i in 0..p.m() {
        let cum_dw = tracker.map_or(0.0, |t| eta * eta * t.cum_dw()[i]);
        crate::diagnostics::write_neuron_record(
            sink,
            &NeuronRecord {
                step,
                i,
                w_norm: norm(p.neuron(i)),
                align: alignment_cosine(p.neuron(i), &tp.theta_star)?,
                a_i: p.a()[i],
                cum_dw,
                escaped: status.escaped[i],
            },
        )?;
    }
    Ok(())
}

/// Executes the segments in order against one parameter set, recording to
/// every sink each `record_every` steps (plus step 0 and each segment
/// boundary). Divergence aborts with flushed traces and a summary whose
/// `aborted` field carries the detail.
pub fn run_schedule(
    p: &mut NetworkParams,
    tp: &TeacherProblem,
    ds: Option<&Dataset>,
    segments: &[ScheduleSegment],
    steps_rng: &mut Stream,
    sinks: &mut [&mut dyn TraceSink],
    opts: &mut RunOptions,
) -> Result<RunSummary> {
    if segments.is_empty() {
        return Err(Error::InvalidArgument("schedule has no segments".into()));
    }
    for seg in segments {
        seg.validate()?;
        if seg.config.needs_dataset() && ds.is_none() {
            return Err(Error::InvalidArgument(format!(
                "segment {:?} needs a fixed dataset but none was built",
                seg.config.kind
            )));
        }
    }
    let eta_ref = segments[0].config.eta;
    let t1 = segments.iter().find_map(|seg| match seg.config.kind {
        OptimizerKind::LabelNoiseSgd { sigma, .. } | OptimizerKind::Sam { sigma, .. }
            if sigma > 0.0 && p.m() >= 2 =>
        {
            Some(predicted_escape_time(p.m(), seg.config.eta, sigma))
        }
        _ => None,
    });

    let mut tracker = PhaseTracker::new(p.m(), eta_ref);
    let mut telescope: Option<TelescopeTracker>;
    let mut worst_telescope: f64 = 0.0;
    let mut neuron_header = false;
    let mut global_step = 0u64;
    let mut aborted = None;

    let mut emit = |p: &NetworkParams,
                    step: u64,
                    tracker: &mut PhaseTracker,
                    telescope: Option<&TelescopeTracker>,
                    sinks: &mut [&mut dyn TraceSink],
                    opts: &mut RunOptions|
     -> Result<StepRecord> {
        tracker.scan(p, step);
        let rec = observe(p, tp, ds, step)?;
        for sink in sinks.iter_mut() {
            sink.record(&rec)?;
        }
        if let Some(ns) = opts.neuron_sink.as_mut() {
            write_neuron_rows(ns, p, tp, step, telescope, eta_ref, &mut neuron_header)?;
        }
        Ok(rec)
    };

    let mut last = emit(p, 0, &mut tracker, None, sinks, opts)?;

    'segments: for seg in segments {
        // The telescoping identity covers contiguous single-sample noisy
        // segments; other steppers invalidate the accumulator.
        let is_coupled_sgd = matches!(seg.config.kind, OptimizerKind::LabelNoiseSgd { .. });
        if opts.track_telescope && is_coupled_sgd {
            telescope = Some(TelescopeTracker::new(p, seg.config.eta));
        } else {
            telescope = None;
        }
        let mut markov: Option<MarkovState> = None;
        if let OptimizerKind::MarkovOscillation { .. } = seg.config.kind {
            let (a, ms) = init_markov_stationary(p.m(), seg.config.eta, steps_rng)?;
            p.a.copy_from_slice(&a);
            markov = Some(ms);
        }
        for step_in_seg in 1..=seg.steps {
            let eta = seg.config.eta;
            let result = match seg.config.kind {
                OptimizerKind::LabelNoiseSgd { sigma, sampling } => label_noise_sgd_step(
                    p,
                    tp,
                    ds,
                    sigma,
                    sampling,
                    eta,
                    steps_rng,
                    telescope.as_mut(),
                ),
                OptimizerKind::Gd { gradient } => gd_full_batch_step(p, tp, ds, gradient, eta),
                OptimizerKind::Sam { rho, sigma } => {
                    sam_step(p, tp, ds, rho, sigma, eta, steps_rng)
                }
                OptimizerKind::MarkovOscillation { gradient } => markov_oscillation_step(
                    p,
                    tp,
                    ds,
                    gradient,
                    markov.as_mut().expect("markov state initialized"),
                    eta,
                    steps_rng,
                ),
                OptimizerKind::LinearizedGd { gradient } => {
                    linearized_gd_step(p, tp, ds, gradient, eta)
                }
            };
            global_step += 1;
            let fine = match result {
                Ok(info) if info.residual.is_finite() => true,
                Ok(_) => false,
                Err(e) if e.is_divergence() => false,
                Err(e) => match e {
                    Error::NonFinite(_) => false,
                    other => return Err(other),
                },
            };
            if !fine {
                aborted = Some(format!("non-finite step at {global_step}"));
                break 'segments;
            }
            let at_boundary = step_in_seg == seg.steps;
            if step_in_seg % seg.record_every == 0 || at_boundary {
                // Full divergence check at record resolution.
                let theta_norm_sq = norm_sq(&p.effective_predictor());
                if p.check_finite().is_err()
                    || theta_norm_sq > DIVERGENCE_NORM_LIMIT * DIVERGENCE_NORM_LIMIT
                {
                    aborted = Some(format!(
                        "divergence at step {global_step}: ‖θ‖ = {:.3e}",
                        theta_norm_sq.sqrt()
                    ));
                    break 'segments;
                }
                last = emit(p, global_step, &mut tracker, telescope.as_ref(), sinks, opts)?;
            }
        }
        if let Some(t) = telescope.take() {
            let worst = t
                .residuals(p)
                .iter()
                .zip(t.bounds())
                .map(|(r, b)| r / b)
                .fold(0.0f64, f64::max);
            worst_telescope = worst_telescope.max(worst);
        }
    }

    for sink in sinks.iter_mut() {
        sink.flush()?;
    }
    if let Some(ns) = opts.neuron_sink.as_mut() {
        ns.flush()?;
    }
    let mut phase_report = tracker.report(p, tp, t1, &last);
    if aborted.is_some() {
        phase_report.converged = false;
    }
    Ok(RunSummary {
        experiment: opts.experiment.clone(),
        steps_run: global_step,
        final_train_loss: last.train_loss,
        final_pop_loss: last.pop_loss,
        final_theta_err: last.theta_err,
        escape_step: tracker.escape_step,
        phase_report,
        telescope_max_rel_residual: if opts.track_telescope {
            Some(worst_telescope)
        } else {
            None
        },
        aborted,
    })
}

/// Builds the teacher of a config.
pub fn build_teacher(cfg: &RunConfig) -> Result<TeacherProblem> {
    let norm_value = cfg.teacher.norm.resolve(cfg.model.m);
    let direction = match cfg.teacher.direction {
        DirectionSpec::FirstAxis => crate::data::TeacherDirection::FirstAxis,
        DirectionSpec::RandomUnit { seed } => crate::data::TeacherDirection::RandomUnit(seed),
    };
    let mut tp = make_teacher(cfg.model.d, norm_value, direction)?;
    tp.input_clip = cfg.teacher.input_clip;
    tp.seed = cfg.model.seed;
    Ok(tp)
}

/// Builds the fixed dataset of a config, when its data mode needs one.
pub fn build_dataset(cfg: &RunConfig, tp: &TeacherProblem) -> Result<Option<Dataset>> {
    match cfg.data.mode {
        DataMode::Fresh => Ok(None),
        DataMode::Fixed => {
            let n = cfg.data.n.ok_or_else(|| {
                Error::InvalidArgument("fixed data mode without data.n".into())
            })?;
            let mut rng = stream(cfg.model.seed, domain::DATA);
            Ok(Some(make_dataset(tp, n, &mut rng)?))
        }
    }
}

/// The outcome of one config-driven run, with everything the caller needs
/// to inspect it in memory.
pub struct RunOutcome {
    pub summary: RunSummary,
    pub records: Vec<StepRecord>,
    pub trace_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

/// Drives one full run from a parsed config: model, teacher, data, the
/// schedule, and the declared output files under `out_dir`.
pub fn execute_run(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let tp = build_teacher(cfg)?;
    let ds = build_dataset(cfg, &tp)?;
    let mut p = init_ntk(cfg.model)?;
    let mut steps_rng = stream(cfg.model.seed, domain::STEPS);

    let mut memory = MemorySink::default();
    let trace_path = cfg.outputs.trace.as_ref().map(|t| out_dir.join(t));
    let mut file_sink = match &trace_path {
        Some(path) => {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            let file = fs::File::create(path)?;
            let sink = if cfg.outputs.mean_dot_column {
                CsvSink::with_mean_dot(std::io::BufWriter::new(file))
            } else {
                CsvSink::new(std::io::BufWriter::new(file))
            };
            Some(sink)
        }
        None => None,
    };

    let mut opts = RunOptions {
        experiment: cfg.experiment.clone(),
        track_telescope: cfg.outputs.per_neuron,
        neuron_sink: if cfg.outputs.per_neuron {
            let path = out_dir.join(format!("{}_neurons.csv", cfg.experiment));
            Some(Box::new(std::io::BufWriter::new(fs::File::create(path)?)))
        } else {
            None
        },
    };

    let summary = {
        let mut sinks: Vec<&mut dyn TraceSink> = Vec::new();
        sinks.push(&mut memory);
        if let Some(fs_sink) = file_sink.as_mut() {
            sinks.push(fs_sink);
        }
        run_schedule(&mut p, &tp, ds.as_ref(), &cfg.schedule, &mut steps_rng, &mut sinks, &mut opts)?
    };

    let summary_path = cfg.outputs.summary.as_ref().map(|s| out_dir.join(s));
    if let Some(path) = &summary_path {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let json = serde_json::to_string_pretty(&summary)?;
        fs::write(path, json)?;
    }
    Ok(RunOutcome { summary, records: memory.records, trace_path, summary_path })
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Snapshot(format!("json: {e}"))
    }
}

/// Summary row of one sweep point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub assignment: Vec<(String, String)>,
    pub status: String,
    pub summary: Option<RunSummary>,
}

/// Runs every grid point as an independent run (own seed, own files),
/// in parallel up to `workers`. Per-point failures are recorded and the
/// sweep continues.
pub fn execute_sweep(
    points: Vec<(Vec<(String, String)>, RunConfig)>,
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<Vec<SweepRow>> {
    fs::create_dir_all(out_dir)?;
    let run_point = |(idx, (assignment, mut cfg)): (usize, (Vec<(String, String)>, RunConfig))| {
        // Per-point file names so parallel writers never collide.
        if cfg.outputs.trace.is_some() {
            cfg.outputs.trace = Some(format!("point_{idx:04}_trace.csv"));
        }
        if cfg.outputs.summary.is_some() {
            cfg.outputs.summary = Some(format!("point_{idx:04}_summary.json"));
        }
        let row = match execute_run(&cfg, out_dir) {
            Ok(outcome) => SweepRow {
                point: idx,
                assignment,
                status: match &outcome.summary.aborted {
                    Some(detail) => format!("diverged: {detail}"),
                    None => "ok".into(),
                },
                summary: Some(outcome.summary),
            },
            Err(e) => SweepRow {
                point: idx,
                assignment,
                status: format!("error: {e}"),
                summary: None,
            },
        };
        row
    };
    let indexed: Vec<(usize, (Vec<(String, String)>, RunConfig))> =
        points.into_iter().enumerate().collect();
    let mut rows: Vec<SweepRow> = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?
            .install(|| indexed.into_par_iter().map(run_point).collect()),
        None => indexed.into_par_iter().map(run_point).collect(),
    };
    rows.sort_by_key(|r| r.point);

    // Aggregate CSV, one row per point.
    let grid_keys: Vec<String> = rows
        .first()
        .map(|r| r.assignment.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut out = String::new();
    out.push_str("point");
    for k in &grid_keys {
        out.push(',');
        out.push_str(k);
    }
    out.push_str(",status,steps_run,final_train_loss,final_pop_loss,final_theta_err,escape_step,phase2_entry_step\n");
    for row in &rows {
        out.push_str(&row.point.to_string());
        for (_, v) in &row.assignment {
            out.push(',');
            out.push_str(v);
        }
        let status = row.status.split(':').next().unwrap_or("error");
        match &row.summary {
            Some(s) => out.push_str(&format!(
                ",{},{},{},{},{},{},{}\n",
                status,
                s.steps_run,
                s.final_train_loss,
                s.final_pop_loss,
                s.final_theta_err,
                s.escape_step.map_or(String::new(), |v| v.to_string()),
                s.phase_report
                    .phase2_entry_step
                    .map_or(String::new(), |v| v.to_string()),
            )),
            None => out.push_str(&format!(",{status},,,,,,\n")),
        }
    }
    fs::write(out_dir.join("sweep_summary.csv"), out)?;
    Ok(rows)
}
