//! Threshold sweeps over the three example recursions.
//!
//! A sweep solves the quasistationary distribution at `y·A` for an
//! increasing list of factors `y`, on grids that are scaled copies of one
//! another, and checks that the expected exit time does not decrease and that
//! `Q_{yA}(y·x) ≥ Q_A(x)` between consecutive rows. Both claims are only
//! asserted when the kernel passes the condition checkers.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::conditions::{check_all, ConditionId, ConditionReport, ScanSpec};
use crate::error::{QsdError, Result};
use crate::format::{float, KeyValues};
use crate::grid::{GridSpec, GridTemplate};
use crate::kernel::{InnovationDistribution, Measure, MultiplicativeKernel, PhiFunction};
use crate::monte_carlo::{simulate_exit_time, DEFAULT_STEP_CAP};
use crate::qsd::{
    build_killed_kernel, default_slack, dominance_gap, l1_distance, stationary_of_conditioned,
    yaglom_iterate, KilledKernel, QsdSolution, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

/// Relative slack of the exit-time monotonicity assertion.
pub const MONOTONICITY_RELATIVE_SLACK: f64 = 1e-9;
/// Default tolerance of the condition checkers.
pub const DEFAULT_MONOTONICITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    Ewma,
    ShiryaevRoberts,
    Cusum,
}

impl PresetName {
    pub const ALL: [PresetName; 3] = [
        PresetName::Ewma,
        PresetName::ShiryaevRoberts,
        PresetName::Cusum,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::Ewma => "ewma",
            PresetName::ShiryaevRoberts => "shiryaev-roberts",
            PresetName::Cusum => "cusum",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = QsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ewma" => Ok(PresetName::Ewma),
            "shiryaev-roberts" | "sr" => Ok(PresetName::ShiryaevRoberts),
            "cusum" => Ok(PresetName::Cusum),
            other => Err(QsdError::Domain(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPreset {
    pub name: PresetName,
    pub kernel: MultiplicativeKernel,
    pub default_thresholds: Vec<f64>,
    pub notes: &'static str,
}

impl ModelPreset {
    pub fn new(name: PresetName) -> Self {
        let e = std::f64::consts::E;
        let lr = InnovationDistribution::LikelihoodRatioGaussian {
            theta: 1.0,
            measure: Measure::Pre,
        };
        let (kernel, base, notes) = match name {
            PresetName::Ewma => (
                MultiplicativeKernel {
                    phi: PhiFunction::Power { alpha: 0.5 },
                    innovation: InnovationDistribution::LogNormal { mu: 0.0, sigma: 1.0 },
                    state_space_floor: 1e-12,
                },
                e,
                "EWMA Y' = 0.5 Y + xi, xi ~ N(0,1), as M = exp(Y); base threshold e is arbitrary",
            ),
            PresetName::ShiryaevRoberts => (
                MultiplicativeKernel {
                    phi: PhiFunction::Affine { a: 1.0 },
                    innovation: lr,
                    state_space_floor: 0.0,
                },
                e * e,
                "Shiryaev-Roberts M' = (M + 1) L, L the N(1,1)/N(0,1) likelihood ratio under N(0,1)",
            ),
            PresetName::Cusum => (
                MultiplicativeKernel {
                    phi: PhiFunction::MaxOne,
                    innovation: lr,
                    state_space_floor: 0.0,
                },
                e * e,
                "CUSUM M' = max(M, 1) L, L the N(1,1)/N(0,1) likelihood ratio under N(0,1); needs A > 1",
            ),
        };
        ModelPreset {
            name,
            kernel,
            default_thresholds: [1.0, 2.0, 4.0, 8.0].iter().map(|y| base * y).collect(),
            notes,
        }
    }

    pub fn default_base_threshold(&self) -> f64 {
        self.default_thresholds[0]
    }

    /// Rejects thresholds outside the preset's meaningful range.
    pub fn validate_threshold(&self, threshold: f64) -> Result<()> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(QsdError::Domain(format!(
                "threshold must be finite and > 0, got {threshold}"
            )));
        }
        if self.name == PresetName::Cusum && threshold <= 1.0 {
            return Err(QsdError::Domain(format!(
                "cusum needs log A > 0, i.e. A > 1, got {threshold}"
            )));
        }
        Ok(())
    }
}

/// Monte Carlo settings of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSettings {
    pub n_reps: u64,
    pub seed: u64,
    pub step_cap: u64,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            n_reps: 10_000,
            seed: 20100604,
            step_cap: DEFAULT_STEP_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub base_threshold: f64,
    /// Increasing, all ≥ 1, starting at 1.
    pub y_factors: Vec<f64>,
    pub grid: GridTemplate,
    pub tol: f64,
    pub max_iter: usize,
    pub mc: Option<McSettings>,
    pub scan: ScanSpec,
    pub monotonicity_tolerance: f64,
    /// Dominance slack; `None` means `5/n_cells`.
    pub slack: Option<f64>,
}

impl SweepSettings {
    pub fn new(base_threshold: f64, y_factors: Vec<f64>) -> Self {
        SweepSettings {
            base_threshold,
            y_factors,
            grid: GridTemplate::default(),
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            mc: None,
            scan: ScanSpec::default(),
            monotonicity_tolerance: DEFAULT_MONOTONICITY_TOLERANCE,
            slack: None,
        }
    }
}

/// Validates a list of scale factors: nonempty, all finite and ≥ 1, strictly increasing.
pub fn validate_y_factors(y: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(QsdError::Domain("y factors must not be empty".into()));
    }
    if y.iter().any(|v| !(v.is_finite() && *v >= 1.0)) {
        return Err(QsdError::Domain("y factors must be finite and >= 1".into()));
    }
    if y.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QsdError::Domain(
            "y factors must be strictly increasing".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub y: f64,
    pub lambda: f64,
    pub e_t_numeric: f64,
    pub e_t_mc_mean: Option<f64>,
    pub e_t_mc_stderr: Option<f64>,
    /// Worst `Q_{A_i}(r·x) − Q_{A_{i-1}}(x)` with `r = A_i/A_{i-1}`; zero on the first row.
    pub dominance_worst_gap: f64,
    pub qsd_vs_conditioned_l1: f64,
    pub conditions_passed: bool,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub model: String,
    pub rows: Vec<SweepRow>,
    pub conditions: Vec<ConditionReport>,
    pub slack: f64,
    /// Descriptions of failed theorem-backed assertions (only populated when
    /// the conditions pass).
    pub theorem_failures: Vec<String>,
}

impl SweepResult {
    pub fn conditions_passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }

    /// Whether `E_T_numeric` is nondecreasing down the rows up to the relative slack.
    pub fn exit_times_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].e_t_numeric >= w[0].e_t_numeric - MONOTONICITY_RELATIVE_SLACK * w[0].e_t_numeric
        })
    }

    pub fn dominance_passed(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.dominance_worst_gap >= -self.slack)
    }
}

struct SolvedRow {
    threshold: f64,
    y: f64,
    solution: Option<QsdSolution>,
    conditioned_l1: f64,
}

/// Numeric core of a sweep: solves every threshold produced by `build` and
/// fills the kernel-independent columns. Rows whose solve fails are kept
/// and marked non-converged.
pub fn sweep_killed_kernels<B>(
    base_threshold: f64,
    y_factors: &[f64],
    tol: f64,
    max_iter: usize,
    slack: f64,
    build: B,
) -> Result<(Vec<SweepRow>, Vec<Option<QsdSolution>>)>
where
    B: Fn(f64, f64) -> Result<KilledKernel> + Sync,
{
    validate_y_factors(y_factors)?;
    let solved: Vec<SolvedRow> = y_factors
        .par_iter()
        .map(|&y| {
            let threshold = base_threshold * y;
            let attempt = build(threshold, y).and_then(|kk| {
                let sol = yaglom_iterate(&kk, None, tol, max_iter)?;
                let l1 = stationary_of_conditioned(&kk, tol, max_iter)
                    .map(|c| l1_distance(&c.weights, &sol.weights))
                    .unwrap_or(f64::NAN);
                Ok((sol, l1))
            });
            let (solution, conditioned_l1) = match attempt {
                Ok((sol, l1)) => (Some(sol), l1),
                Err(_) => (None, f64::NAN),
            };
            SolvedRow {
                threshold,
                y,
                solution,
                conditioned_l1,
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(solved.len());
    for (i, row) in solved.iter().enumerate() {
        let converged = row.solution.as_ref().is_some_and(|s| s.converged);
        let gap = match (i, &row.solution) {
            (0, Some(s)) => dominance_gap(s, s, 1.0, slack)?.worst_gap,
            (_, Some(s)) => match &solved[i - 1].solution {
                Some(prev) => dominance_gap(prev, s, row.y / solved[i - 1].y, slack)?.worst_gap,
                None => f64::NAN,
            },
            _ => f64::NAN,
        };
        let (lambda, e_t, iterations, residual) = match &row.solution {
            Some(s) => (s.lambda, s.expected_exit_time, s.iterations, s.residual),
            None => (f64::NAN, f64::NAN, 0, f64::NAN),
        };
        rows.push(SweepRow {
            threshold: row.threshold,
            y: row.y,
            lambda,
            e_t_numeric: e_t,
            e_t_mc_mean: None,
            e_t_mc_stderr: None,
            dominance_worst_gap: gap,
            qsd_vs_conditioned_l1: row.conditioned_l1,
            conditions_passed: true,
            converged,
            iterations,
            residual,
        });
    }
    Ok((rows, solved.into_iter().map(|r| r.solution).collect()))
}

/// Full sweep for a multiplicative kernel: conditions, numerics, optional
/// Monte Carlo, and the theorem-backed assertions.
pub fn run_threshold_sweep(
    model: &str,
    kernel: &MultiplicativeKernel,
    settings: &SweepSettings,
) -> Result<SweepResult> {
    validate_y_factors(&settings.y_factors)?;
    let conditions = check_all(
        kernel,
        &ConditionId::REQUIRED,
        &settings.scan,
        settings.monotonicity_tolerance,
    )?;
    let conditions_passed = conditions.iter().all(|c| c.passed);

    let slack = settings
        .slack
        .unwrap_or_else(|| default_slack(settings.grid.n_cells));
    let base_grid: GridSpec = settings
        .grid
        .resolve(kernel.state_space_floor, settings.base_threshold)?;
    let (mut rows, solutions) = sweep_killed_kernels(
        settings.base_threshold,
        &settings.y_factors,
        settings.tol,
        settings.max_iter,
        slack,
        |threshold, y| {
            let grid = if y == 1.0 {
                base_grid.clone()
            } else {
                base_grid.scaled(y)?
            };
            build_killed_kernel(kernel, threshold, &grid)
        },
    )?;

    for (i, (row, sol)) in rows.iter_mut().zip(&solutions).enumerate() {
        row.conditions_passed = conditions_passed;
        if let (Some(mc), Some(sol)) = (settings.mc, sol) {
            if sol.converged {
                let seed = mc.seed.wrapping_add(i as u64);
                if let Ok(est) =
                    simulate_exit_time(kernel, row.threshold, sol, mc.n_reps, seed, mc.step_cap)
                {
                    row.e_t_mc_mean = Some(est.mean);
                    row.e_t_mc_stderr = Some(est.stderr);
                }
            }
        }
    }

    let mut result = SweepResult {
        model: model.to_string(),
        rows,
        conditions,
        slack,
        theorem_failures: Vec::new(),
    };
    if conditions_passed {
        for w in result.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.e_t_numeric < a.e_t_numeric - MONOTONICITY_RELATIVE_SLACK * a.e_t_numeric {
                result.theorem_failures.push(format!(
                    "expected exit time decreased from {} at A={} to {} at A={}",
                    float(a.e_t_numeric),
                    float(a.threshold),
                    float(b.e_t_numeric),
                    float(b.threshold)
                ));
            }
        }
        for r in &result.rows {
            if r.dominance_worst_gap < -slack {
                result.theorem_failures.push(format!(
                    "scaling dominance gap {} below -{} at A={}",
                    float(r.dominance_worst_gap),
                    float(slack),
                    float(r.threshold)
                ));
            }
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    StructuredText,
}

/// CSV header of a sweep report.
pub const SWEEP_CSV_HEADER: &str = "A,y,lambda,E_T_numeric,E_T_mc_mean,E_T_mc_stderr,dominance_worst_gap,qsd_vs_conditioned_L1,conditions_passed";

fn opt(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

/// Deterministic serialization of a sweep, rows ordered by threshold.
pub fn emit_report(result: &SweepResult, format: ReportFormat) -> Result<String> {
    if result.rows.is_empty() {
        return Err(QsdError::EmptyReport);
    }
    let mut rows: Vec<&SweepRow> = result.rows.iter().collect();
    rows.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(SWEEP_CSV_HEADER);
            out.push('\n');
            for r in rows {
                let fields = [
                    float(r.threshold),
                    float(r.y),
                    float(r.lambda),
                    float(r.e_t_numeric),
                    opt(r.e_t_mc_mean),
                    opt(r.e_t_mc_stderr),
                    float(r.dominance_worst_gap),
                    float(r.qsd_vs_conditioned_l1),
                    r.conditions_passed.to_string(),
                ];
                out.push_str(&fields.join(","));
                out.push('\n');
            }
            Ok(out)
        }
        ReportFormat::StructuredText => {
            let mut kv = KeyValues::new();
            kv.push("model", result.model.as_str())
                .push("rows", rows.len().to_string())
                .push_f64("slack", result.slack)
                .push("conditions_passed", result.conditions_passed().to_string())
                .push(
                    "theorem_failures",
                    result.theorem_failures.len().to_string(),
                );
            for (i, r) in rows.iter().enumerate() {
                let key = |f: &str| format!("row_{i}_{f}");
                kv.push_f64(&key("a"), r.threshold)
                    .push_f64(&key("y"), r.y)
                    .push_f64(&key("lambda"), r.lambda)
                    .push_f64(&key("e_t_numeric"), r.e_t_numeric)
                    .push(&key("e_t_mc_mean"), opt(r.e_t_mc_mean))
                    .push(&key("e_t_mc_stderr"), opt(r.e_t_mc_stderr))
                    .push_f64(&key("dominance_worst_gap"), r.dominance_worst_gap)
                    .push_f64(&key("qsd_vs_conditioned_l1"), r.qsd_vs_conditioned_l1)
                    .push(&key("conditions_passed"), r.conditions_passed.to_string())
                    .push(&key("converged"), r.converged.to_string())
                    .push(&key("iterations"), r.iterations.to_string())
                    .push_f64(&key("residual"), r.residual);
            }
            Ok(kv.render())
        }
    }
}
