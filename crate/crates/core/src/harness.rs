//! Monte-Carlo experiment driver: configuration, trial pipelines, CSV output
//! and convergence traces.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{dbm_to_watts, generate_scenario, FieldMode, Scenario, ScenarioConfig, C64};
use crate::decomposition::{decompose, DecomposeOptions};
use crate::error::{Error, Result};
use crate::harmonics::{truncation_length, PatternCoefficients};
use crate::projection::{apply_projection, load_candidates, synthetic_steered_set, CandidatePatternSet};
use crate::wmmse::{run_algorithm1, Problem, SolverConfig, SolverOutput, SolverState};

pub const CSV_HEADER: &str = "seed,mode,pmax_dbm,sum_rate,iterations,decomp_residual,projected_sum_rate,wall_ms";
pub const TRACE_HEADER: &str = "mode,iteration,sum_rate,objective";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Trihybrid,
    Hybrid,
    Projected,
    All,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Trihybrid => "trihybrid",
            Mode::Hybrid => "hybrid",
            Mode::Projected => "projected",
            Mode::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "trihybrid" => Ok(Mode::Trihybrid),
            "hybrid" => Ok(Mode::Hybrid),
            "projected" => Ok(Mode::Projected),
            "all" => Ok(Mode::All),
            other => Err(Error::Config(format!(
                "mode '{other}' is not one of trihybrid, hybrid, projected, all"
            ))),
        }
    }

    /// The concrete pipelines this mode runs, in record order.
    pub fn expand(self) -> Vec<Mode> {
        match self {
            Mode::All => vec![Mode::Trihybrid, Mode::Hybrid, Mode::Projected],
            m => vec![m],
        }
    }
}

fn default_sweep() -> Vec<f64> {
    (0..=6).map(|i| 5.0 * i as f64).collect()
}

/// Experiment configuration. Omitted fields take the defaults of the
/// reference system: a 3x3 half-wavelength array at 30 GHz, two users with
/// three paths each, -95 dBm noise and a 10 dBm budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub horizontal: usize,
    pub vertical: usize,
    pub spacing_wavelengths: f64,
    pub frequency_hz: f64,
    pub users: usize,
    pub paths: usize,
    pub bs_position: [f64; 3],
    pub user_radius: f64,
    pub scatterer_height: f64,
    pub noise_dbm: f64,
    /// `beta_k`; empty means all ones.
    pub user_weights: Vec<f64>,
    pub field_mode: FieldMode,
    /// Truncation degree `U`.
    pub degree: usize,
    pub eta: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub bisection_tolerance: f64,
    pub n_rf: usize,
    pub decomposition_iterations: usize,
    pub decomposition_tolerance: f64,
    pub mode: Mode,
    pub trials: usize,
    pub seed: u64,
    /// Budgets for `run`.
    pub pmax_dbm: Vec<f64>,
    /// Budgets for `sweep`.
    pub sweep_dbm: Vec<f64>,
    /// Candidate-set file; the synthetic steered set is used when absent.
    pub patterns: Option<PathBuf>,
    pub synthetic_count: usize,
    pub synthetic_exponent: f64,
    pub refit: bool,
    /// Record wall times; off keeps the CSV byte-reproducible.
    pub timing: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = ScenarioConfig::default();
        let solver = SolverConfig::default();
        let d = DecomposeOptions::default();
        Self {
            horizontal: s.horizontal,
            vertical: s.vertical,
            spacing_wavelengths: s.spacing_wavelengths,
            frequency_hz: s.frequency_hz,
            users: s.users,
            paths: s.paths,
            bs_position: s.bs_position,
            user_radius: s.user_radius,
            scatterer_height: s.scatterer_height,
            noise_dbm: -95.0,
            user_weights: Vec::new(),
            field_mode: s.field_mode,
            degree: crate::harmonics::DEFAULT_DEGREE,
            eta: solver.eta,
            max_iterations: solver.max_iterations,
            tolerance: solver.tolerance,
            bisection_tolerance: solver.bisection_tolerance,
            n_rf: 4,
            decomposition_iterations: d.max_iterations,
            decomposition_tolerance: d.tolerance,
            mode: Mode::Trihybrid,
            trials: 100,
            seed: 0,
            pmax_dbm: vec![10.0],
            sweep_dbm: default_sweep(),
            patterns: None,
            synthetic_count: 64,
            synthetic_exponent: 1.0,
            refit: true,
            timing: false,
            out: None,
        }
    }
}

impl RunConfig {
    /// Parses a JSON document (or TOML when `toml` is set) and validates it.
    pub fn parse(text: &str, toml_format: bool) -> Result<Self> {
        let cfg: RunConfig = if toml_format {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else if text.trim().is_empty() {
            RunConfig::default()
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let toml_format = path.extension().is_some_and(|e| e == "toml");
        Self::parse(&text, toml_format).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn num_antennas(&self) -> usize {
        self.horizontal * self.vertical
    }

    pub fn harmonics(&self) -> usize {
        truncation_length(self.degree)
    }

    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario_config(self.pmax_dbm.first().copied().unwrap_or(10.0)).validate()?;
        self.solver_config().validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.degree == 0 {
            return Err(Error::Config("degree must be at least 1".into()));
        }
        for (field, list) in [("pmax_dbm", &self.pmax_dbm), ("sweep_dbm", &self.sweep_dbm)] {
            if list.is_empty() {
                return Err(Error::Config(format!("{field} must not be empty")));
            }
            if list.iter().any(|p| !p.is_finite()) {
                return Err(Error::Config(format!("{field} entries must be finite")));
            }
        }
        if !self.noise_dbm.is_finite() {
            return Err(Error::Config("noise_dbm must be finite".into()));
        }
        if self.n_rf < self.users || self.n_rf > self.num_antennas() {
            return Err(Error::Config(format!(
                "n_rf = {} must lie between users ({}) and antennas ({})",
                self.n_rf,
                self.users,
                self.num_antennas()
            )));
        }
        if self.mode == Mode::Projected || self.mode == Mode::All {
            self.check_projection_fields()?;
        }
        Ok(())
    }

    fn check_projection_fields(&self) -> Result<()> {
        if self.patterns.is_none() && (self.synthetic_count == 0 || !(self.synthetic_exponent > 0.0)) {
            return Err(Error::Config(
                "synthetic_count and synthetic_exponent must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn scenario_config(&self, pmax_dbm: f64) -> ScenarioConfig {
        ScenarioConfig {
            horizontal: self.horizontal,
            vertical: self.vertical,
            spacing_wavelengths: self.spacing_wavelengths,
            frequency_hz: self.frequency_hz,
            users: self.users,
            paths: self.paths,
            bs_position: self.bs_position,
            user_radius: self.user_radius,
            scatterer_height: self.scatterer_height,
            noise_power: self.noise_watts(),
            max_power: dbm_to_watts(pmax_dbm),
            weights: self.user_weights.clone(),
            field_mode: self.field_mode,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            eta: self.eta,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            bisection_tolerance: self.bisection_tolerance,
            freeze_em: false,
        }
    }

    pub fn decompose_options(&self, seed: u64) -> DecomposeOptions {
        DecomposeOptions {
            max_iterations: self.decomposition_iterations,
            tolerance: self.decomposition_tolerance,
            seed,
        }
    }

    /// The configured candidate file, or the synthetic steered set.
    pub fn candidate_set(&self) -> Result<CandidatePatternSet> {
        match &self.patterns {
            Some(path) => load_candidates(path),
            None => synthetic_steered_set(self.synthetic_count, self.synthetic_exponent, 91, 181),
        }
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub mode: Mode,
    pub pmax_dbm: f64,
    pub sum_rate: Option<f64>,
    pub iterations: Option<usize>,
    pub decomp_residual: Option<f64>,
    pub projected_sum_rate: Option<f64>,
    pub wall_ms: f64,
    pub error: Option<String>,
}

impl TrialRecord {
    fn failed(seed: u64, mode: Mode, pmax_dbm: f64, error: &Error) -> Self {
        Self {
            seed,
            mode,
            pmax_dbm,
            sum_rate: None,
            iterations: None,
            decomp_residual: None,
            projected_sum_rate: None,
            wall_ms: 0.0,
            error: Some(error.to_string()),
        }
    }
}

/// Solver output of one pipeline together with its scenario.
pub struct PipelineRun {
    pub scenario: Scenario,
    pub output: SolverOutput,
}

/// Runs the tri-hybrid (or frozen hybrid) solver on the scenario of `seed`.
pub fn solve_trial(config: &RunConfig, seed: u64, pmax_dbm: f64, frozen: bool) -> Result<PipelineRun> {
    let scenario = generate_scenario(&config.scenario_config(pmax_dbm), seed)?;
    let problem = Problem::from_scenario(&scenario, config.degree)?;
    let solver = SolverConfig {
        freeze_em: frozen,
        ..config.solver_config()
    };
    let output = run_algorithm1(&problem, &solver, seed)?;
    Ok(PipelineRun { scenario, output })
}

fn elapsed_ms(config: &RunConfig, start: Instant) -> f64 {
    if config.timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

fn decomposition_residual(config: &RunConfig, fd: &DMatrix<C64>, pmax: f64, seed: u64) -> Result<f64> {
    Ok(decompose(fd, config.n_rf, pmax, &config.decompose_options(seed))?.residual)
}

/// All records of one `(seed, P_max)` pair, in `mode.expand()` order. The
/// tri-hybrid solve is shared between the tri-hybrid and projected rows.
pub fn run_point(
    config: &RunConfig,
    candidates: Option<&CandidatePatternSet>,
    seed: u64,
    pmax_dbm: f64,
    mode: Mode,
) -> Vec<TrialRecord> {
    let modes = mode.expand();
    let needs_tri = modes.iter().any(|m| *m != Mode::Hybrid);
    let start = Instant::now();
    let tri = needs_tri.then(|| solve_trial(config, seed, pmax_dbm, false));
    let tri_ms = elapsed_ms(config, start);

    modes
        .into_iter()
        .map(|m| {
            let result: Result<TrialRecord> = (|| match m {
                Mode::Trihybrid => {
                    let run = tri.as_ref().expect("solved").as_ref().map_err(clone_error)?;
                    let t = Instant::now();
                    let residual = decomposition_residual(config, &run.output.state.fd, run.scenario.max_power, seed)?;
                    Ok(TrialRecord {
                        seed,
                        mode: m,
                        pmax_dbm,
                        sum_rate: Some(run.output.final_sum_rate()),
                        iterations: Some(run.output.iterations()),
                        decomp_residual: Some(residual),
                        projected_sum_rate: None,
                        wall_ms: tri_ms + elapsed_ms(config, t),
                        error: None,
                    })
                }
                Mode::Hybrid => {
                    let t = Instant::now();
                    let run = solve_trial(config, seed, pmax_dbm, true)?;
                    let residual = decomposition_residual(config, &run.output.state.fd, run.scenario.max_power, seed)?;
                    Ok(TrialRecord {
                        seed,
                        mode: m,
                        pmax_dbm,
                        sum_rate: Some(run.output.final_sum_rate()),
                        iterations: Some(run.output.iterations()),
                        decomp_residual: Some(residual),
                        projected_sum_rate: None,
                        wall_ms: elapsed_ms(config, t),
                        error: None,
                    })
                }
                Mode::Projected => {
                    let run = tri.as_ref().expect("solved").as_ref().map_err(clone_error)?;
                    let set = candidates.ok_or_else(|| Error::Config("projected mode needs a candidate set".into()))?;
                    let t = Instant::now();
                    let projected = apply_projection(
                        &run.output.state,
                        &run.scenario,
                        set,
                        config.refit,
                        &config.solver_config(),
                    )?;
                    let residual = decomposition_residual(config, &projected.fd, run.scenario.max_power, seed)?;
                    Ok(TrialRecord {
                        seed,
                        mode: m,
                        pmax_dbm,
                        sum_rate: Some(run.output.final_sum_rate()),
                        iterations: Some(run.output.iterations()),
                        decomp_residual: Some(residual),
                        projected_sum_rate: Some(projected.sum_rate),
                        wall_ms: tri_ms + elapsed_ms(config, t),
                        error: None,
                    })
                }
                Mode::All => unreachable!("expanded"),
            })();
            result.unwrap_or_else(|e| TrialRecord::failed(seed, m, pmax_dbm, &e))
        })
        .collect()
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::Domain(s) => Error::Domain(s.clone()),
        Error::Shape(s) => Error::Shape(s.clone()),
        Error::Config(s) => Error::Config(s.clone()),
        Error::Degenerate(s) => Error::Degenerate(s.clone()),
        Error::Internal(s) => Error::Internal(s.clone()),
        Error::Load(s) => Error::Load(s.clone()),
        Error::Io(io) => Error::Internal(io.to_string()),
    }
}

/// Runs every `(trial, P_max, mode)` combination. Trial `t` uses seed
/// `config.seed + t`; trials run in parallel and the output is ordered by
/// trial, then budget, then mode.
pub fn run_trials(config: &RunConfig, budgets: &[f64], mode: Mode) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let needs_set = mode.expand().contains(&Mode::Projected);
    let set = if needs_set { Some(config.candidate_set()?) } else { None };
    let per_trial: Vec<Vec<TrialRecord>> = (0..config.trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed = config.seed.wrapping_add(t);
            budgets
                .iter()
                .flat_map(|&p| run_point(config, set.as_ref(), seed, p, mode))
                .collect()
        })
        .collect();
    Ok(per_trial.into_iter().flatten().collect())
}

/// Nine significant digits, shortest round-trip form.
pub fn format_number(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float");
    let magnitude = rounded.abs();
    if rounded == 0.0 || (1e-4..1e15).contains(&magnitude) || !rounded.is_finite() {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

fn opt<T, F: Fn(&T) -> String>(v: &Option<T>, f: F) -> String {
    v.as_ref().map(f).unwrap_or_default()
}

pub fn records_to_csv(records: &[TrialRecord]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.seed,
            r.mode.name(),
            format_number(r.pmax_dbm),
            opt(&r.sum_rate, |x| format_number(*x)),
            opt(&r.iterations, |x| x.to_string()),
            opt(&r.decomp_residual, |x| format_number(*x)),
            opt(&r.projected_sum_rate, |x| format_number(*x)),
            format_number(r.wall_ms),
        );
    }
    out
}

pub fn emit_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    std::fs::write(path, records_to_csv(records))?;
    Ok(())
}

/// Parses a results table written by [`records_to_csv`]. Error messages are
/// not part of the table.
pub fn parse_csv(text: &str) -> Result<Vec<TrialRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Load("results table has an unexpected header".into()));
    }
    let bad = |i: usize, what: &str| Error::Load(format!("line {}: bad {what}", i + 2));
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(i, "field count"));
            }
            let num = |s: &str, what: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(i, what))
                }
            };
            let sum_rate = num(f[3], "sum_rate")?;
            Ok(TrialRecord {
                seed: f[0].parse().map_err(|_| bad(i, "seed"))?,
                mode: Mode::parse(f[1]).map_err(|_| bad(i, "mode"))?,
                pmax_dbm: num(f[2], "pmax_dbm")?.ok_or_else(|| bad(i, "pmax_dbm"))?,
                sum_rate,
                iterations: if f[4].is_empty() {
                    None
                } else {
                    Some(f[4].parse().map_err(|_| bad(i, "iterations"))?)
                },
                decomp_residual: num(f[5], "decomp_residual")?,
                projected_sum_rate: num(f[6], "projected_sum_rate")?,
                wall_ms: num(f[7], "wall_ms")?.unwrap_or(0.0),
                error: sum_rate.is_none().then(|| "failed".to_string()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub mode: Mode,
    pub iteration: usize,
    pub sum_rate: f64,
    pub objective: f64,
}

/// Per-iteration sum rate and objective of the tri-hybrid and hybrid solvers
/// on the scenario of `seed` at the first configured budget.
pub fn convergence_trace(config: &RunConfig, seed: u64) -> Result<Vec<TraceRow>> {
    config.validate()?;
    let pmax = config.pmax_dbm[0];
    let mut rows = Vec::new();
    for (mode, frozen) in [(Mode::Trihybrid, false), (Mode::Hybrid, true)] {
        let run = solve_trial(config, seed, pmax, frozen)?;
        rows.extend(run.output.log.iter().map(|r| TraceRow {
            mode,
            iteration: r.iteration,
            sum_rate: r.sum_rate,
            objective: r.objective,
        }));
    }
    Ok(rows)
}

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.mode.name(),
            r.iteration,
            format_number(r.sum_rate),
            format_number(r.objective)
        );
    }
    out
}

/// Mean of a rate column per mode and budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub pmax_dbm: f64,
    /// `(mode, mean sum rate, successful trials)`; the projected entry
    /// averages the projected rate.
    pub means: Vec<(Mode, f64, usize)>,
}

pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut budgets: Vec<f64> = Vec::new();
    for r in records {
        if !budgets.contains(&r.pmax_dbm) {
            budgets.push(r.pmax_dbm);
        }
    }
    let mut modes: Vec<Mode> = Vec::new();
    for r in records {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    budgets
        .into_iter()
        .map(|p| SummaryRow {
            pmax_dbm: p,
            means: modes
                .iter()
                .map(|&m| {
                    let values: Vec<f64> = records
                        .iter()
                        .filter(|r| r.pmax_dbm == p && r.mode == m)
                        .filter_map(|r| if m == Mode::Projected { r.projected_sum_rate } else { r.sum_rate })
                        .collect();
                    let mean = if values.is_empty() {
                        f64::NAN
                    } else {
                        values.iter().sum::<f64>() / values.len() as f64
                    };
                    (m, mean, values.len())
                })
                .collect(),
        })
        .collect()
}

/// Whitespace-separated table with a `#` header, readable by gnuplot.
pub fn summary_to_gnuplot(rows: &[SummaryRow]) -> String {
    let mut out = String::from("# pmax_dbm");
    if let Some(first) = rows.first() {
        for (m, _, _) in &first.means {
            let _ = write!(out, " {}", m.name());
        }
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format_number(row.pmax_dbm));
        for (_, mean, _) in &row.means {
            let _ = write!(out, " {}", format_number(*mean));
        }
        out.push('\n');
    }
    out
}

/// Converged tri-hybrid state of one trial, enough to redo the projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedTrial {
    pub seed: u64,
    pub pmax_dbm: f64,
    pub patterns: Vec<Vec<f64>>,
    /// `F_D` column-major as `[re, im]` pairs.
    pub fd: Vec<[f64; 2]>,
    pub sum_rate: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedRun {
    pub config: RunConfig,
    pub trials: Vec<SavedTrial>,
}

impl SavedTrial {
    pub fn from_run(seed: u64, pmax_dbm: f64, output: &SolverOutput) -> Self {
        Self {
            seed,
            pmax_dbm,
            patterns: output.state.patterns.iter().map(|c| c.as_vector().iter().copied().collect()).collect(),
            fd: output.state.fd.iter().map(|z| [z.re, z.im]).collect(),
            sum_rate: output.final_sum_rate(),
            iterations: output.iterations(),
        }
    }

    pub fn to_state(&self, antennas: usize, users: usize) -> Result<SolverState> {
        if self.fd.len() != antennas * users || self.patterns.len() != antennas {
            return Err(Error::Load(format!(
                "saved trial {} does not match a {antennas}-antenna, {users}-user scenario",
                self.seed
            )));
        }
        let patterns = self
            .patterns
            .iter()
            .map(|c| PatternCoefficients::new(nalgebra::DVector::from_vec(c.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(SolverState {
            w: vec![1.0; users],
            v: vec![C64::from(0.0); users],
            fd: DMatrix::from_iterator(antennas, users, self.fd.iter().map(|p| C64::new(p[0], p[1]))),
            patterns,
        })
    }
}

/// Tri-hybrid records plus the states needed by [`project_saved`].
pub fn run_and_save(config: &RunConfig, budgets: &[f64]) -> Result<(Vec<TrialRecord>, SavedRun)> {
    config.validate()?;
    let per_trial: Vec<Vec<(TrialRecord, Option<SavedTrial>)>> = (0..config.trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed = config.seed.wrapping_add(t);
            budgets
                .iter()
                .map(|&p| {
                    let start = Instant::now();
                    let result = solve_trial(config, seed, p, false).and_then(|run| {
                        let residual =
                            decomposition_residual(config, &run.output.state.fd, run.scenario.max_power, seed)?;
                        Ok((run, residual))
                    });
                    match result {
                        Ok((run, residual)) => (
                            TrialRecord {
                                seed,
                                mode: Mode::Trihybrid,
                                pmax_dbm: p,
                                sum_rate: Some(run.output.final_sum_rate()),
                                iterations: Some(run.output.iterations()),
                                decomp_residual: Some(residual),
                                projected_sum_rate: None,
                                wall_ms: elapsed_ms(config, start),
                                error: None,
                            },
                            Some(SavedTrial::from_run(seed, p, &run.output)),
                        ),
                        Err(e) => (TrialRecord::failed(seed, Mode::Trihybrid, p, &e), None),
                    }
                })
                .collect()
        })
        .collect();
    let mut records = Vec::new();
    let mut trials = Vec::new();
    for (r, s) in per_trial.into_iter().flatten() {
        records.push(r);
        trials.extend(s);
    }
    Ok((
        records,
        SavedRun {
            config: config.clone(),
            trials,
        },
    ))
}

/// Re-projects every saved trial onto `set`.
pub fn project_saved(saved: &SavedRun, set: &CandidatePatternSet, refit: bool) -> Result<Vec<TrialRecord>> {
    let config = &saved.config;
    config.validate()?;
    Ok(saved
        .trials
        .par_iter()
        .map(|trial| {
            let start = Instant::now();
            let result = (|| {
                let scenario = generate_scenario(&config.scenario_config(trial.pmax_dbm), trial.seed)?;
                let state = trial.to_state(scenario.num_antennas(), scenario.num_users())?;
                let projected = apply_projection(&state, &scenario, set, refit, &config.solver_config())?;
                let residual = decomposition_residual(config, &projected.fd, scenario.max_power, trial.seed)?;
                Ok(TrialRecord {
                    seed: trial.seed,
                    mode: Mode::Projected,
                    pmax_dbm: trial.pmax_dbm,
                    sum_rate: Some(trial.sum_rate),
                    iterations: Some(trial.iterations),
                    decomp_residual: Some(residual),
                    projected_sum_rate: Some(projected.sum_rate),
                    wall_ms: elapsed_ms(config, start),
                    error: None,
                })
            })();
            result.unwrap_or_else(|e: Error| TrialRecord::failed(trial.seed, Mode::Projected, trial.pmax_dbm, &e))
        })
        .collect())
}
