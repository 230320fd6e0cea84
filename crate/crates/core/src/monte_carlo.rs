//! Simulation checks of the computed quasistationary solution.
//!
//! Replications run in parallel, each on its own `(seed, index)` stream,
//! and are reduced in index order, so a seed pins the output bit for bit.

use rayon::prelude::*;

use crate::error::{QsdError, Result};
use crate::kernel::TransitionKernel;
use crate::qsd::{KilledKernel, QsdSolution};
use crate::rng;

/// Default runaway guard for exit-time replications.
pub const DEFAULT_STEP_CAP: u64 = 10_000_000;
/// Exit times above this are only counted in the histogram overflow bucket.
pub const HISTOGRAM_CAP: u64 = 100_000;
/// Absolute slack of the pathwise comparison `V_n ≤ W_n`.
pub const COUPLING_TOLERANCE: f64 = 1e-12;

/// Exit-time counts; `counts[t - 1]` is the number of replications with `T = t`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Histogram {
    pub counts: Vec<u64>,
    /// Replications with `T > HISTOGRAM_CAP` or that hit the step cap.
    pub overflow: u64,
}

impl Histogram {
    pub fn from_exit_times(times: impl IntoIterator<Item = Option<u64>>) -> Self {
        let mut h = Histogram::default();
        for t in times {
            match t {
                Some(t) if (1..=HISTOGRAM_CAP).contains(&t) => {
                    let idx = (t - 1) as usize;
                    if idx >= h.counts.len() {
                        h.counts.resize(idx + 1, 0);
                    }
                    h.counts[idx] += 1;
                }
                _ => h.overflow += 1,
            }
        }
        h
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    /// `(t, count)` rows, `t = 1, 2, …`.
    pub fn rows(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as u64 + 1, c))
    }

    /// CSV with header `t,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,count\n");
        for (t, c) in self.rows() {
            out.push_str(&format!("{t},{c}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    /// Mean exit time over replications that exited before the step cap.
    pub mean: f64,
    pub stderr: f64,
    pub n_reps: u64,
    pub seed: u64,
    pub histogram: Histogram,
    /// Replications stopped by the step cap; excluded from `mean`.
    pub capped: u64,
}

impl McEstimate {
    pub fn cap_warning(&self) -> bool {
        self.capped > 0
    }

    fn from_exit_times(times: Vec<Option<u64>>, seed: u64, step_cap: u64) -> Result<Self> {
        let n_reps = times.len() as u64;
        let capped = times.iter().filter(|t| t.is_none()).count() as u64;
        if capped * 100 > n_reps {
            return Err(QsdError::CapDominated {
                capped,
                n_reps,
                step_cap,
            });
        }
        let done: Vec<f64> = times.iter().flatten().map(|&t| t as f64).collect();
        let n = done.len() as f64;
        let mean = done.iter().sum::<f64>() / n;
        let var = if done.len() > 1 {
            done.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(McEstimate {
            mean,
            stderr: (var / n).sqrt(),
            n_reps,
            seed,
            histogram: Histogram::from_exit_times(times),
            capped,
        })
    }
}

/// Inverse-CDF draw from the piecewise-linear solution CDF.
pub fn sample_from_qsd(sol: &QsdSolution, u: f64) -> f64 {
    let cum = sol.cumulative();
    let edges = sol.grid.edges();
    let n = sol.weights.len();
    let k = cum[1..].partition_point(|&c| c <= u).min(n - 1);
    let w = sol.weights[k];
    let (lo, hi) = (edges[k], edges[k + 1]);
    if w <= 0.0 {
        return hi;
    }
    let frac = ((u - cum[k]) / w).clamp(0.0, 1.0);
    (lo + frac * (hi - lo)).clamp(lo, hi)
}

fn check_reps(n_reps: u64) -> Result<()> {
    if n_reps < 2 {
        return Err(QsdError::Domain(format!(
            "need at least 2 replications, got {n_reps}"
        )));
    }
    Ok(())
}

/// Monte Carlo estimate of the expected exit time above `threshold` when the
/// chain starts from `sol`.
pub fn simulate_exit_time<K: TransitionKernel + ?Sized>(
    kernel: &K,
    threshold: f64,
    sol: &QsdSolution,
    n_reps: u64,
    seed: u64,
    step_cap: u64,
) -> Result<McEstimate> {
    check_reps(n_reps)?;
    if !sol.converged {
        return Err(QsdError::NotConverged {
            iterations: sol.iterations,
            residual: sol.residual,
        });
    }
    let times = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(seed, rep);
            let mut m = sample_from_qsd(sol, rng::open_uniform(&mut rng));
            for n in 1..=step_cap {
                m = kernel.sample_step(m, rng::open_uniform(&mut rng))?;
                if m > threshold {
                    return Ok(Some(n));
                }
            }
            Ok(None)
        })
        .collect::<Result<Vec<_>>>()?;
    McEstimate::from_exit_times(times, seed, step_cap)
}

/// Exit-time simulation of the discretized chain itself: from cell `i` the
/// chain moves to cell `j` with probability `mass[i][j]` and exits with
/// probability `1 − survival[i]`.
pub fn simulate_discrete_exit_time(
    kk: &KilledKernel,
    start: &[f64],
    n_reps: u64,
    seed: u64,
    step_cap: u64,
) -> Result<McEstimate> {
    check_reps(n_reps)?;
    let n = kk.n();
    if start.len() != n {
        return Err(QsdError::Domain(format!(
            "start vector must have length {n}"
        )));
    }
    let pick = |weights: &[f64], u: f64| -> Option<usize> {
        let mut acc = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return Some(j);
            }
        }
        None
    };
    let times = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(seed, rep);
            let mut state = pick(start, rng::open_uniform(&mut rng)).unwrap_or(n - 1);
            for step in 1..=step_cap {
                match pick(kk.row(state), rng::open_uniform(&mut rng)) {
                    Some(j) => state = j,
                    None => return Some(step),
                }
            }
            None
        })
        .collect::<Vec<_>>();
    McEstimate::from_exit_times(times, seed, step_cap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricFit {
    /// Largest `|ln P̂(T > n) − n ln λ|` over compared points with `P̂ > 0`.
    pub max_log_survival_deviation: f64,
    /// Largest `|P̂(T > n) − λⁿ|` in units of the binomial standard error.
    pub max_standardized_deviation: f64,
    pub points_compared: usize,
    pub passed: bool,
}

/// Compares the empirical survival `P̂(T > n)` with `λⁿ` for `n` up to the
/// empirical 99th percentile; passes when every point lies within four
/// binomial standard errors.
pub fn geometric_fit_test(hist: &Histogram, lambda: f64) -> Result<GeometricFit> {
    let total = hist.total();
    if total == 0 {
        return Err(QsdError::Domain("histogram is empty".into()));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(QsdError::Domain(format!(
            "lambda must be in (0,1), got {lambda}"
        )));
    }
    let big_n = total as f64;
    let mut remaining = total;
    let mut fit = GeometricFit {
        max_log_survival_deviation: 0.0,
        max_standardized_deviation: 0.0,
        points_compared: 0,
        passed: true,
    };
    for (t, count) in hist.rows() {
        remaining -= count;
        let p_hat = remaining as f64 / big_n;
        let p = lambda.powf(t as f64);
        let se = (p * (1.0 - p) / big_n).sqrt();
        let dev = (p_hat - p).abs();
        if dev > 4.0 * se {
            fit.passed = false;
        }
        if se > 0.0 {
            fit.max_standardized_deviation = fit.max_standardized_deviation.max(dev / se);
        }
        if p_hat > 0.0 {
            let log_dev = (p_hat.ln() - t as f64 * lambda.ln()).abs();
            fit.max_log_survival_deviation = fit.max_log_survival_deviation.max(log_dev);
        }
        fit.points_compared += 1;
        if p_hat <= 0.01 {
            break;
        }
    }
    Ok(fit)
}

/// First pathwise ordering violation, kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingViolation {
    pub path: u64,
    pub step: u64,
    pub dominated: f64,
    pub dominating: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTrace {
    pub y: f64,
    pub n_steps: u64,
    pub n_paths: u64,
    /// `(path, step)` pairs with `V_n > W_n + COUPLING_TOLERANCE`.
    pub violations: u64,
    pub max_violation_magnitude: f64,
    pub first_violation: Option<CouplingViolation>,
}

/// Runs the conditioned chains of the scaling argument on common uniforms:
/// `U` conditioned on `[0, A]` from `U_0 ~ Q_A`, `W = y·U`, and `V`
/// conditioned on `[0, yA]` from `V_0 = W_0`. Counts steps where `V > W`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_dominance_sim<K: TransitionKernel + ?Sized>(
    kernel: &K,
    threshold: f64,
    y: f64,
    sol_a: &QsdSolution,
    n_paths: u64,
    n_steps: u64,
    seed: u64,
) -> Result<CouplingTrace> {
    if !(y >= 1.0 && y.is_finite()) {
        return Err(QsdError::Domain(format!(
            "scale factor must be >= 1, got {y}"
        )));
    }
    let big = y * threshold;
    let per_path = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = rng::stream(seed, path);
            let mut u_state = sample_from_qsd(sol_a, rng::open_uniform(&mut rng));
            let mut v_state = y * u_state;
            let mut count = 0u64;
            let mut max_mag = 0.0f64;
            let mut first = None;
            for step in 1..=n_steps {
                let u = rng::open_uniform(&mut rng);
                u_state = kernel.sample_step_conditioned(u_state, threshold, u)?;
                v_state = kernel.sample_step_conditioned(v_state, big, u)?;
                let w_state = y * u_state;
                if v_state > w_state + COUPLING_TOLERANCE {
                    count += 1;
                    max_mag = max_mag.max(v_state - w_state);
                    first.get_or_insert(CouplingViolation {
                        path,
                        step,
                        dominated: v_state,
                        dominating: w_state,
                    });
                }
            }
            Ok((count, max_mag, first))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut trace = CouplingTrace {
        y,
        n_steps,
        n_paths,
        violations: 0,
        max_violation_magnitude: 0.0,
        first_violation: None,
    };
    for (count, mag, first) in per_path {
        trace.violations += count;
        trace.max_violation_magnitude = trace.max_violation_magnitude.max(mag);
        if trace.first_violation.is_none() {
            trace.first_violation = first;
        }
    }
    Ok(trace)
}

/// Pointwise check of the two one-step facts the coupling relies on.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileOrderReport {
    /// `(s, u)` where the conditioned quantile at `yA` from `y·s` exceeded
    /// `y` times the conditioned quantile at `A` from `s`.
    pub scaling_violations: Vec<(f64, f64)>,
    /// `(s, u)` where the conditioned quantile at `A` decreased from `s` to the next grid state.
    pub monotonicity_violations: Vec<(f64, f64)>,
    pub max_violation: f64,
    pub points_checked: usize,
}

impl QuantileOrderReport {
    pub fn holds(&self) -> bool {
        self.scaling_violations.is_empty() && self.monotonicity_violations.is_empty()
    }
}

/// Checks on an `(s, u)` grid that the conditioned quantile is nondecreasing
/// in the source state and that scaling the start and threshold by `y`
/// never lands above `y` times the unscaled step.
pub fn verify_one_step_quantile_order<K: TransitionKernel + ?Sized>(
    kernel: &K,
    threshold: f64,
    y: f64,
    states: &[f64],
    uniforms: &[f64],
) -> Result<QuantileOrderReport> {
    let mut report = QuantileOrderReport {
        scaling_violations: Vec::new(),
        monotonicity_violations: Vec::new(),
        max_violation: 0.0,
        points_checked: 0,
    };
    for &u in uniforms {
        let mut prev: Option<f64> = None;
        for &s in states {
            let base = kernel.sample_step_conditioned(s, threshold, u)?;
            let scaled = kernel.sample_step_conditioned(y * s, y * threshold, u)?;
            report.points_checked += 1;
            let gap = scaled - y * base;
            if gap > COUPLING_TOLERANCE {
                report.scaling_violations.push((s, u));
                report.max_violation = report.max_violation.max(gap);
            }
            if let Some(p) = prev {
                if p > base + COUPLING_TOLERANCE {
                    report.monotonicity_violations.push((s, u));
                    report.max_violation = report.max_violation.max(p - base);
                }
            }
            prev = Some(base);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridKind, GridSpec};

    fn geometric_times(success: f64, n: u64, seed: u64) -> Vec<Option<u64>> {
        (0..n)
            .map(|i| {
                let mut r = rng::stream(seed, i);
                let u = rng::open_uniform(&mut r);
                Some((u.ln() / (1.0 - success).ln()).floor() as u64 + 1)
            })
            .collect()
    }

    #[test]
    fn geometric_fit_accepts_null() {
        let h = Histogram::from_exit_times(geometric_times(0.3, 100_000, 1));
        let fit = geometric_fit_test(&h, 0.7).unwrap();
        assert!(fit.passed, "{fit:?}");
        assert!(fit.points_compared >= 10);
    }

    #[test]
    fn geometric_fit_rejects_gross_mismatch() {
        let h = Histogram::from_exit_times(geometric_times(0.5, 100_000, 2));
        let fit = geometric_fit_test(&h, 0.7).unwrap();
        assert!(!fit.passed);
    }

    #[test]
    fn geometric_fit_preconditions() {
        assert!(geometric_fit_test(&Histogram::default(), 0.5).is_err());
        let h = Histogram::from_exit_times([Some(1), Some(2)]);
        assert!(geometric_fit_test(&h, 1.0).is_err());
    }

    fn one_cell_solution(lo: f64, hi: f64) -> QsdSolution {
        let g = GridSpec::new(GridKind::Uniform, 1, lo, hi).unwrap();
        QsdSolution::from_parts(g, vec![1.0], 0.5, 1, 0.0, true).unwrap()
    }

    #[test]
    fn qsd_sampler_quantiles() {
        let sol = one_cell_solution(1.0, 3.0);
        assert_eq!(sample_from_qsd(&sol, 0.5), 2.0);
        assert!((sample_from_qsd(&sol, 1e-15) - 1.0).abs() < 1e-12);
        assert!((sample_from_qsd(&sol, 1.0 - 1e-15) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_csv() {
        let h = Histogram::from_exit_times([Some(1), Some(3), Some(1), None]);
        assert_eq!(h.to_csv(), "t,count\n1,2\n2,0\n3,1\n");
        assert_eq!(h.overflow, 1);
        assert_eq!(h.total(), 4);
    }

    #[test]
    fn cap_dominated_runs_are_errors() {
        let times = vec![None, Some(1), Some(2)];
        assert!(matches!(
            McEstimate::from_exit_times(times, 0, 5),
            Err(QsdError::CapDominated { capped: 1, .. })
        ));
    }

    #[test]
    fn discrete_chain_needs_two_reps() {
        let kk = KilledKernel::from_rows(&[vec![0.5]]).unwrap();
        assert!(simulate_discrete_exit_time(&kk, &[1.0], 1, 0, 10).is_err());
    }
}
