//! Grid verifiers for the monotonicity hypotheses on the kernel.
//!
//! Each check walks adjacent pairs along one axis of a finite scan and
//! records the largest step in the wrong direction. A condition passes when
//! that worst step is within the monotonicity tolerance.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{QsdError, Result};
use crate::kernel::{MultiplicativeKernel, TransitionKernel};
use crate::rng;

/// Hypotheses on the kernel that the checkers can test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditionId {
    /// `ρ(s, x)` nonincreasing in `s`.
    C2,
    /// `ρ(ts, tx)` nondecreasing in `t`.
    C3,
    /// `ρ(s, x)/ρ(s, A)` nonincreasing in `s` for `x ≤ A`.
    C4,
    /// `ρ(ts, tx)/ρ(ts, tA)` nondecreasing in `t` for `x ≤ A`.
    C5,
    /// `F(tx)/F(tA)` nondecreasing in `t` for `x ≤ A`.
    D2,
    /// `φ` positive and nondecreasing.
    D3,
    /// `t/φ(t)` nondecreasing.
    D4,
    /// Simulated collapse frequency; evidence, not proof.
    D5Heuristic,
}

impl ConditionId {
    pub const ALL: [ConditionId; 8] = [
        ConditionId::C2,
        ConditionId::C3,
        ConditionId::C4,
        ConditionId::C5,
        ConditionId::D2,
        ConditionId::D3,
        ConditionId::D4,
        ConditionId::D5Heuristic,
    ];

    /// The grid-checkable conditions whose failure voids the monotonicity claims.
    pub const REQUIRED: [ConditionId; 7] = [
        ConditionId::C2,
        ConditionId::C3,
        ConditionId::C4,
        ConditionId::C5,
        ConditionId::D2,
        ConditionId::D3,
        ConditionId::D4,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionId::C2 => "C2",
            ConditionId::C3 => "C3",
            ConditionId::C4 => "C4",
            ConditionId::C5 => "C5",
            ConditionId::D2 => "D2",
            ConditionId::D3 => "D3",
            ConditionId::D4 => "D4",
            ConditionId::D5Heuristic => "D5-heuristic",
        }
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionId {
    type Err = QsdError;

    fn from_str(s: &str) -> Result<Self> {
        ConditionId::ALL
            .iter()
            .copied()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| QsdError::Domain(format!("unknown condition id {s:?}")))
    }
}

/// Scan coordinates at which the worst violation occurred.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Witness {
    pub s: Option<f64>,
    pub t: Option<f64>,
    pub x: Option<f64>,
    pub a: Option<f64>,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (name, v) in [("s", self.s), ("t", self.t), ("x", self.x), ("A", self.a)] {
            if let Some(v) = v {
                parts.push(format!("{name}={}", crate::format::float(v)));
            }
        }
        f.write_str(&parts.join(";"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub condition_id: ConditionId,
    pub passed: bool,
    pub worst_violation: f64,
    pub witness: Witness,
    pub points_scanned: u64,
}

/// Parameters of the simulated collapse heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseHeuristic {
    pub n_paths: u64,
    pub n_steps: u64,
    pub initial_state: f64,
    /// A path has collapsed when it ends below `collapse_ratio · initial_state`.
    pub collapse_ratio: f64,
    /// Largest tolerated fraction of collapsed paths.
    pub max_fraction: f64,
    pub seed: u64,
}

impl Default for CollapseHeuristic {
    fn default() -> Self {
        CollapseHeuristic {
            n_paths: 1_000,
            n_steps: 10_000,
            initial_state: 1.0,
            collapse_ratio: 1e-12,
            max_fraction: 0.01,
            seed: 0x005e_edd5,
        }
    }
}

/// Axes of the condition scans. Each must be finite, positive and strictly
/// increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub collapse: CollapseHeuristic,
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec::log_spaced(1e-3, 1e3, 64)
    }
}

impl ScanSpec {
    /// The same `n`-point geometric axis `[lo, hi]` on every coordinate.
    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Self {
        let axis = log_axis(lo, hi, n);
        ScanSpec {
            s: axis.clone(),
            t: axis.clone(),
            x: axis.clone(),
            a: axis,
            collapse: CollapseHeuristic::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, axis) in [
            ("s", &self.s),
            ("t", &self.t),
            ("x", &self.x),
            ("A", &self.a),
        ] {
            if axis.len() < 2 {
                return Err(QsdError::Domain(format!(
                    "scan axis {name} needs >= 2 points"
                )));
            }
            if !axis.iter().all(|v| v.is_finite() && *v > 0.0)
                || axis.windows(2).any(|w| w[1] <= w[0])
            {
                return Err(QsdError::Domain(format!(
                    "scan axis {name} must be positive, finite and strictly increasing"
                )));
            }
        }
        Ok(())
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (l, h) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| match i {
            0 => lo,
            i if i + 1 == n => hi,
            i => (l + (h - l) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Worst {
    violation: f64,
    witness: Witness,
    scanned: u64,
}

impl Worst {
    fn new() -> Self {
        Worst {
            violation: 0.0,
            witness: Witness::default(),
            scanned: 0,
        }
    }

    fn record(&mut self, violation: f64, witness: Witness) {
        self.scanned += 1;
        if violation > self.violation {
            self.violation = violation;
            self.witness = witness;
        }
    }

    fn merge(mut self, other: Worst) -> Worst {
        self.scanned += other.scanned;
        if other.violation > self.violation {
            self.violation = other.violation;
            self.witness = other.witness;
        }
        self
    }
}

/// Runs one condition checker over `scan`.
pub fn check_condition(
    kernel: &MultiplicativeKernel,
    condition: ConditionId,
    scan: &ScanSpec,
    tolerance: f64,
) -> Result<ConditionReport> {
    scan.validate()?;
    let worst = match condition {
        ConditionId::C2 => check_c2(kernel, scan)?,
        ConditionId::C3 => check_c3(kernel, scan)?,
        ConditionId::C4 => check_c4(kernel, scan)?,
        ConditionId::C5 => check_c5(kernel, scan)?,
        ConditionId::D2 => check_d2(kernel, scan),
        ConditionId::D3 => check_phi_monotone(scan, |t| kernel.phi.eval(t), true),
        ConditionId::D4 => check_phi_monotone(scan, |t| t / kernel.phi.eval(t), false),
        ConditionId::D5Heuristic => check_collapse(kernel, &scan.collapse)?,
    };
    Ok(ConditionReport {
        condition_id: condition,
        passed: worst.violation <= tolerance,
        worst_violation: worst.violation,
        witness: worst.witness,
        points_scanned: worst.scanned,
    })
}

/// Runs every condition in `ids`, in order.
pub fn check_all(
    kernel: &MultiplicativeKernel,
    ids: &[ConditionId],
    scan: &ScanSpec,
    tolerance: f64,
) -> Result<Vec<ConditionReport>> {
    ids.iter()
        .map(|&id| check_condition(kernel, id, scan, tolerance))
        .collect()
}

fn check_c2(k: &MultiplicativeKernel, scan: &ScanSpec) -> Result<Worst> {
    scan.x
        .par_iter()
        .map(|&x| {
            let mut w = Worst::new();
            let mut prev = k.rho(scan.s[0], x)?;
            for pair in scan.s.windows(2) {
                let next = k.rho(pair[1], x)?;
                let wit = Witness {
                    s: Some(pair[0]),
                    x: Some(x),
                    ..Witness::default()
                };
                w.record(next - prev, wit);
                prev = next;
            }
            Ok(w)
        })
        .try_reduce(Worst::new, |a, b| Ok(a.merge(b)))
}

fn check_c3(k: &MultiplicativeKernel, scan: &ScanSpec) -> Result<Worst> {
    scan.s
        .par_iter()
        .map(|&s| {
            let mut w = Worst::new();
            for &x in &scan.x {
                let mut prev = k.rho(scan.t[0] * s, scan.t[0] * x)?;
                for pair in scan.t.windows(2) {
                    let next = k.rho(pair[1] * s, pair[1] * x)?;
                    let wit = Witness {
                        s: Some(s),
                        t: Some(pair[0]),
                        x: Some(x),
                        a: None,
                    };
                    w.record(prev - next, wit);
                    prev = next;
                }
            }
            Ok(w)
        })
        .try_reduce(Worst::new, |a, b| Ok(a.merge(b)))
}

/// `ρ(s, x)/ρ(s, A)`, or `None` where the denominator underflows.
fn ratio(k: &MultiplicativeKernel, s: f64, x: f64, a: f64) -> Result<Option<f64>> {
    let den = k.rho(s, a)?;
    if den <= 0.0 {
        return Ok(None);
    }
    Ok(Some(k.rho(s, x)? / den))
}

fn check_c4(k: &MultiplicativeKernel, scan: &ScanSpec) -> Result<Worst> {
    scan.a
        .par_iter()
        .map(|&a| {
            let mut w = Worst::new();
            for &x in scan.x.iter().filter(|&&x| x <= a) {
                let mut prev = ratio(k, scan.s[0], x, a)?;
                for pair in scan.s.windows(2) {
                    let next = ratio(k, pair[1], x, a)?;
                    if let (Some(p), Some(n)) = (prev, next) {
                        let wit = Witness {
                            s: Some(pair[0]),
                            t: None,
                            x: Some(x),
                            a: Some(a),
                        };
                        w.record(n - p, wit);
                    }
                    prev = next;
                }
            }
            Ok(w)
        })
        .try_reduce(Worst::new, |a, b| Ok(a.merge(b)))
}

fn check_c5(k: &MultiplicativeKernel, scan: &ScanSpec) -> Result<Worst> {
    scan.a
        .par_iter()
        .map(|&a| {
            let mut w = Worst::new();
            let xs: Vec<f64> = scan.x.iter().copied().filter(|&x| x <= a).collect();
            for &s in &scan.s {
                // table[ti][xi]; one denominator per t
                let table = scan
                    .t
                    .iter()
                    .map(|&t| {
                        let den = k.rho(t * s, t * a)?;
                        xs.iter()
                            .map(|&x| {
                                if den > 0.0 {
                                    Ok(Some(k.rho(t * s, t * x)? / den))
                                } else {
                                    Ok(None)
                                }
                            })
                            .collect::<Result<Vec<Option<f64>>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (xi, &x) in xs.iter().enumerate() {
                    for (ti, pair) in scan.t.windows(2).enumerate() {
                        if let (Some(p), Some(n)) = (table[ti][xi], table[ti + 1][xi]) {
                            let wit = Witness {
                                s: Some(s),
                                t: Some(pair[0]),
                                x: Some(x),
                                a: Some(a),
                            };
                            w.record(p - n, wit);
                        }
                    }
                }
            }
            Ok(w)
        })
        .try_reduce(Worst::new, |a, b| Ok(a.merge(b)))
}

fn check_d2(k: &MultiplicativeKernel, scan: &ScanSpec) -> Worst {
    let f = &k.innovation;
    let r = |t: f64, x: f64, a: f64| {
        let den = f.cdf(t * a);
        (den > 0.0).then(|| f.cdf(t * x) / den)
    };
    scan.a
        .par_iter()
        .map(|&a| {
            let mut w = Worst::new();
            for &x in scan.x.iter().filter(|&&x| x <= a) {
                let mut prev = r(scan.t[0], x, a);
                for pair in scan.t.windows(2) {
                    let next = r(pair[1], x, a);
                    if let (Some(p), Some(n)) = (prev, next) {
                        let wit = Witness {
                            s: None,
                            t: Some(pair[0]),
                            x: Some(x),
                            a: Some(a),
                        };
                        w.record(p - n, wit);
                    }
                    prev = next;
                }
            }
            w
        })
        .reduce(Worst::new, Worst::merge)
}

fn check_phi_monotone(scan: &ScanSpec, g: impl Fn(f64) -> f64, require_positive: bool) -> Worst {
    let mut w = Worst::new();
    let mut prev = g(scan.t[0]);
    for pair in scan.t.windows(2) {
        let next = g(pair[1]);
        let wit = Witness {
            t: Some(pair[0]),
            ..Witness::default()
        };
        let mut violation = prev - next;
        if require_positive && !(prev > 0.0 && next > 0.0) {
            violation = f64::INFINITY;
        }
        w.record(violation, wit);
        prev = next;
    }
    w
}

/// Fraction of simulated paths that collapse towards zero.
pub fn collapse_fraction(kernel: &MultiplicativeKernel, params: &CollapseHeuristic) -> Result<f64> {
    if params.n_paths == 0 || !(params.initial_state > 0.0) {
        return Err(QsdError::Domain(
            "collapse heuristic needs n_paths > 0 and a positive initial state".into(),
        ));
    }
    let floor = params.collapse_ratio * params.initial_state;
    let collapsed = (0..params.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = rng::stream(params.seed, path);
            let mut m = params.initial_state;
            for _ in 0..params.n_steps {
                // below the floor it has collapsed; past 1e150 it has escaped
                if m < floor || m <= f64::MIN_POSITIVE || m > 1e150 {
                    break;
                }
                m = kernel.sample_step(m, rng::open_uniform(&mut rng))?;
            }
            Ok::<u64, QsdError>(u64::from(m < floor))
        })
        .try_reduce(|| 0u64, |a, b| Ok(a + b))?;
    Ok(collapsed as f64 / params.n_paths as f64)
}

fn check_collapse(kernel: &MultiplicativeKernel, params: &CollapseHeuristic) -> Result<Worst> {
    let fraction = collapse_fraction(kernel, params)?;
    Ok(Worst {
        violation: (fraction - params.max_fraction).max(0.0),
        witness: Witness {
            x: Some(params.initial_state * params.collapse_ratio),
            ..Witness::default()
        },
        scanned: params.n_paths,
    })
}
