//! Discretized killed kernels and their quasistationary distributions.
//!
//! The state space `[0, A]` is cut into grid cells; each cell is represented
//! by one source state `s_i` and sends mass `ρ(s_i, x_{j+1}) − ρ(s_i, x_j)`
//! into cell `j`. Mass above `A` is lost, which makes the matrix
//! sub-stochastic. The first cell also collects everything below the lowest
//! edge, so each row sums to `ρ(s_i, A)` by telescoping.
//!
//! The quasistationary distribution is the Yaglom limit: propagate a
//! distribution through the killed kernel, renormalize, repeat.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{QsdError, Result};
use crate::grid::GridSpec;
use crate::kernel::TransitionKernel;

/// Default L1 tolerance of the fixpoint iterations.
pub const DEFAULT_TOL: f64 = 1e-12;
/// Default iteration cap of the fixpoint iterations.
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Sub-stochastic transition matrix of the chain killed on leaving `[0, A]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KilledKernel {
    grid: GridSpec,
    /// Row-major `n × n`.
    mass: Vec<f64>,
    survival: Vec<f64>,
}

impl KilledKernel {
    /// Wraps an explicit matrix; survival is taken as the row sums.
    pub fn from_matrix(grid: GridSpec, rows: &[Vec<f64>]) -> Result<Self> {
        let n = grid.n_cells();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(QsdError::Domain(format!(
                "mass matrix must be {n}x{n} to match the grid"
            )));
        }
        if rows.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(QsdError::Domain(
                "mass entries must be finite and >= 0".into(),
            ));
        }
        let survival: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
        if survival.iter().any(|&s| s > 1.0 + 1e-12) {
            return Err(QsdError::Domain("row sums must not exceed 1".into()));
        }
        Ok(KilledKernel {
            grid,
            mass: rows.concat(),
            survival,
        })
    }

    /// An abstract `n`-state chain on the unit-spaced grid `[0, n]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let grid = GridSpec::new(
            crate::grid::GridKind::Uniform,
            n.max(1),
            0.0,
            n.max(1) as f64,
        )?;
        Self::from_matrix(grid, rows)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.survival.len()
    }

    pub fn survival(&self) -> &[f64] {
        &self.survival
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.mass[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.n() + j]
    }

    /// `qᵀ·mass` into `out`.
    pub fn left_multiply(&self, q: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &qi) in q.iter().enumerate() {
            if qi == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += qi * m;
            }
        }
    }
}

/// Discretizes `kernel` killed above `threshold` on `grid`.
pub fn build_killed_kernel<K: TransitionKernel + ?Sized>(
    kernel: &K,
    threshold: f64,
    grid: &GridSpec,
) -> Result<KilledKernel> {
    if grid.upper() != threshold {
        return Err(QsdError::InvalidGrid(format!(
            "grid upper edge {} must equal the threshold {threshold}",
            grid.upper()
        )));
    }
    let n = grid.n_cells();
    let edges = grid.edges();
    let rows: Vec<Vec<f64>> = grid
        .points()
        .par_iter()
        .map(|&s| {
            let mut row = Vec::with_capacity(n);
            let mut prev = 0.0;
            for &x in &edges[1..] {
                let c = kernel.rho(s, x)?;
                row.push((c - prev).max(0.0));
                prev = c;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let survival: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    if survival.iter().all(|&s| s >= 1.0 - 1e-15) {
        return Err(QsdError::VacuousThreshold(threshold));
    }
    Ok(KilledKernel {
        grid: grid.clone(),
        mass: rows.concat(),
        survival,
    })
}

/// Quasistationary distribution on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QsdSolution {
    pub grid: GridSpec,
    /// Probability mass per cell.
    pub weights: Vec<f64>,
    /// One-step survival probability under the solution.
    pub lambda: f64,
    pub expected_exit_time: f64,
    pub iterations: usize,
    /// L1 change of the last iteration.
    pub residual: f64,
    pub converged: bool,
    cumulative: Vec<f64>,
}

impl QsdSolution {
    /// Assembles a solution from known weights; `lambda` must be the one-step
    /// survival under `weights`.
    pub fn from_parts(
        grid: GridSpec,
        weights: Vec<f64>,
        lambda: f64,
        iterations: usize,
        residual: f64,
        converged: bool,
    ) -> Result<Self> {
        validate_start(grid.n_cells(), &weights)?;
        Ok(Self::new(
            grid, weights, lambda, iterations, residual, converged,
        ))
    }

    fn new(
        grid: GridSpec,
        weights: Vec<f64>,
        lambda: f64,
        iterations: usize,
        residual: f64,
        converged: bool,
    ) -> Self {
        let mut cumulative = Vec::with_capacity(weights.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for &w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        let last = cumulative.len() - 1;
        cumulative[last] = 1.0;
        let expected_exit_time = if lambda < 1.0 {
            1.0 / (1.0 - lambda)
        } else {
            f64::INFINITY
        };
        QsdSolution {
            grid,
            weights,
            lambda,
            expected_exit_time,
            iterations,
            residual,
            converged,
            cumulative,
        }
    }

    /// Cumulative weights at the grid edges.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// CDF on `[0, A]`, linear inside each cell.
    pub fn cdf(&self, x: f64) -> f64 {
        let edges = self.grid.edges();
        if x <= edges[0] {
            return 0.0;
        }
        if x >= self.grid.upper() {
            return 1.0;
        }
        let k = edges.partition_point(|&e| e <= x) - 1;
        let frac = (x - edges[k]) / (edges[k + 1] - edges[k]);
        self.cumulative[k] + self.weights[k] * frac
    }

    /// `‖qᵀ·mass − λ·qᵀ‖₁`.
    pub fn eigen_residual(&self, kk: &KilledKernel) -> f64 {
        let mut next = vec![0.0; kk.n()];
        kk.left_multiply(&self.weights, &mut next);
        next.iter()
            .zip(&self.weights)
            .map(|(a, b)| (a - self.lambda * b).abs())
            .sum()
    }
}

fn validate_start(n: usize, start: &[f64]) -> Result<()> {
    if start.len() != n {
        return Err(QsdError::Domain(format!(
            "start vector has length {}, expected {n}",
            start.len()
        )));
    }
    if start.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(QsdError::Domain("start vector must be nonnegative".into()));
    }
    let total: f64 = start.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(QsdError::Domain(format!(
            "start vector sums to {total}, expected 1"
        )));
    }
    Ok(())
}

fn l1_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Yaglom iteration `q ← qᵀK / ‖qᵀK‖₁` from `initial` (uniform when `None`).
///
/// Hitting `max_iter` is not an error: the solution comes back with
/// `converged = false` and its diagnostics.
pub fn yaglom_iterate(
    kk: &KilledKernel,
    initial: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<QsdSolution> {
    let n = kk.n();
    if !(tol > 0.0) {
        return Err(QsdError::Domain(format!(
            "tolerance must be > 0, got {tol}"
        )));
    }
    let mut q = match initial {
        Some(v) => {
            validate_start(n, v)?;
            v.to_vec()
        }
        None => vec![1.0 / n as f64; n],
    };
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        kk.left_multiply(&q, &mut next);
        let norm: f64 = next.iter().sum();
        if !(norm > f64::MIN_POSITIVE) {
            return Err(QsdError::Extinction {
                iteration: iterations,
            });
        }
        next.iter_mut().for_each(|v| *v /= norm);
        residual = l1_change(&q, &next);
        std::mem::swap(&mut q, &mut next);
        if residual <= tol {
            converged = true;
            break;
        }
    }
    let lambda = q.iter().zip(kk.survival()).map(|(w, s)| w * s).sum();
    Ok(QsdSolution::new(
        kk.grid().clone(),
        q,
        lambda,
        iterations,
        residual,
        converged,
    ))
}

/// `1/(1 − λ)`: the mean of the geometric exit time from the QSD.
pub fn expected_exit_time_geometric(sol: &QsdSolution) -> Result<f64> {
    geometric_mean_from_lambda(sol.lambda)
}

pub fn geometric_mean_from_lambda(lambda: f64) -> Result<f64> {
    if !(0.0..1.0 - 1e-15).contains(&lambda) {
        return Err(QsdError::Divergence(lambda));
    }
    Ok(1.0 / (1.0 - lambda))
}

/// Expected absorption time of the discrete chain: `startᵀ·(I − K)⁻¹·1`.
pub fn expected_exit_time_fundamental(kk: &KilledKernel, start: &[f64]) -> Result<f64> {
    let n = kk.n();
    validate_start(n, start)?;
    let h = absorption_times(kk)?;
    Ok(start.iter().zip(h.iter()).map(|(a, b)| a * b).sum())
}

/// Row-wise expected exit times `(I − K)⁻¹·1`.
pub fn absorption_times(kk: &KilledKernel) -> Result<Vec<f64>> {
    let n = kk.n();
    let k = DMatrix::from_row_slice(n, n, &kk.mass);
    let system = DMatrix::<f64>::identity(n, n) - k;
    let h = system
        .lu()
        .solve(&DVector::from_element(n, 1.0))
        .ok_or_else(|| QsdError::Singular("I - K is not invertible".into()))?;
    if h.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(QsdError::Singular("absorption times are not finite".into()));
    }
    Ok(h.iter().copied().collect())
}

/// Stationary law of the one-step conditioned chain `K[i][j] / survival[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedStationary {
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

pub fn stationary_of_conditioned(
    kk: &KilledKernel,
    tol: f64,
    max_iter: usize,
) -> Result<ConditionedStationary> {
    let n = kk.n();
    if let Some(row) = kk.survival().iter().position(|&s| !(s > 0.0)) {
        return Err(QsdError::DegenerateRow { row });
    }
    let normalized = KilledKernel {
        grid: kk.grid.clone(),
        mass: kk
            .mass
            .chunks(n)
            .zip(kk.survival())
            .flat_map(|(row, &s)| row.iter().map(move |m| m / s))
            .collect(),
        survival: vec![1.0; n],
    };
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        normalized.left_multiply(&pi, &mut next);
        let norm: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= norm);
        residual = l1_change(&pi, &next);
        std::mem::swap(&mut pi, &mut next);
        if residual <= tol {
            converged = true;
            break;
        }
    }
    Ok(ConditionedStationary {
        weights: pi,
        iterations,
        residual,
        converged,
    })
}

/// L1 distance between two probability vectors.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    l1_change(a, b)
}

/// Outcome of comparing `Q_{yA}(y·x)` with `Q_A(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub passed: bool,
    /// Smallest `Q_{yA}(y·x) − Q_A(x)` over the evaluation points.
    pub worst_gap: f64,
    pub witness_x: f64,
    pub slack: f64,
}

/// Default slack of the dominance comparison, `5/n_cells`.
pub fn default_slack(n_cells: usize) -> f64 {
    5.0 / n_cells as f64
}

/// Compares two solved distributions at the edges of the smaller grid.
pub fn dominance_gap(
    sol_a: &QsdSolution,
    sol_ya: &QsdSolution,
    y: f64,
    slack: f64,
) -> Result<DominanceReport> {
    if !(y >= 1.0) {
        return Err(QsdError::Domain(format!(
            "scale factor must be >= 1, got {y}"
        )));
    }
    let a = sol_a.grid.upper();
    let mut worst_gap = f64::INFINITY;
    let mut witness_x = 0.0;
    let points = std::iter::once(0.0)
        .chain(sol_a.grid.edges().iter().copied())
        .chain(sol_a.grid.points().iter().copied());
    for x in points.filter(|&x| x <= a) {
        let gap = sol_ya.cdf(y * x) - sol_a.cdf(x);
        if gap < worst_gap {
            worst_gap = gap;
            witness_x = x;
        }
    }
    Ok(DominanceReport {
        passed: worst_gap >= -slack,
        worst_gap,
        witness_x,
        slack,
    })
}

/// Solves the quasistationary distribution at `A` and at `yA` and checks
/// `Q_{yA}(y·x) ≥ Q_A(x) − slack` for `x ∈ [0, A]`.
#[allow(clippy::too_many_arguments)]
pub fn check_scaling_dominance<K: TransitionKernel + ?Sized>(
    kernel: &K,
    threshold: f64,
    y: f64,
    grid_a: &GridSpec,
    grid_ya: &GridSpec,
    tol: f64,
    max_iter: usize,
    slack: f64,
) -> Result<DominanceReport> {
    let solve = |a: f64, g: &GridSpec| -> Result<QsdSolution> {
        let sol = yaglom_iterate(&build_killed_kernel(kernel, a, g)?, None, tol, max_iter)?;
        if !sol.converged {
            return Err(QsdError::NotConverged {
                iterations: sol.iterations,
                residual: sol.residual,
            });
        }
        Ok(sol)
    };
    let sol_a = solve(threshold, grid_a)?;
    let sol_ya = solve(threshold * y, grid_ya)?;
    dominance_gap(&sol_a, &sol_ya, y, slack)
}

/// One level of a grid-refinement study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementRow {
    pub n_cells: usize,
    pub lambda: f64,
    /// `|λ(n) − λ(n/2)|`; `None` on the coarsest level.
    pub delta: Option<f64>,
}

/// Re-solves with `n_cells` doubled `levels − 1` times.
pub fn refinement_study<K: TransitionKernel + ?Sized>(
    kernel: &K,
    threshold: f64,
    template: crate::grid::GridTemplate,
    levels: usize,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<RefinementRow>> {
    let mut rows: Vec<RefinementRow> = Vec::with_capacity(levels);
    let mut t = template;
    for _ in 0..levels {
        let grid = t.resolve(kernel.state_space_floor(), threshold)?;
        let kk = build_killed_kernel(kernel, threshold, &grid)?;
        let sol = yaglom_iterate(&kk, None, tol, max_iter)?;
        let delta = rows.last().map(|r| (sol.lambda - r.lambda).abs());
        rows.push(RefinementRow {
            n_cells: t.n_cells,
            lambda: sol.lambda,
            delta,
        });
        t.n_cells *= 2;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridKind;
    use crate::kernel::{InnovationDistribution, Measure, MultiplicativeKernel, PhiFunction};

    fn kk(rows: &[[f64; 2]]) -> KilledKernel {
        KilledKernel::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn cusum() -> MultiplicativeKernel {
        MultiplicativeKernel::new(
            PhiFunction::MaxOne,
            InnovationDistribution::LikelihoodRatioGaussian {
                theta: 1.0,
                measure: Measure::Pre,
            },
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn one_cell_grid_collapses_to_single_cdf_value() {
        let k = cusum();
        let a = 1.5;
        // midpoint 0.75 has φ = 1
        let g = GridSpec::new(GridKind::Uniform, 1, 0.0, a).unwrap();
        let killed = build_killed_kernel(&k, a, &g).unwrap();
        let f = k.innovation.cdf(a);
        assert_eq!(killed.row(0), &[f]);
        assert_eq!(killed.survival(), &[f]);
    }

    #[test]
    fn rows_sum_to_survival() {
        let k = cusum();
        let a = 20.0;
        let g = GridSpec::new(GridKind::Geometric, 64, 1e-4, a).unwrap();
        let killed = build_killed_kernel(&k, a, &g).unwrap();
        for (i, &s) in g.points().iter().enumerate() {
            let sum: f64 = killed.row(i).iter().sum();
            assert!((sum - k.rho(s, a).unwrap()).abs() < 1e-12);
            assert!(killed.row(i).iter().all(|&m| m >= 0.0));
        }
    }

    #[test]
    fn grid_must_end_at_threshold() {
        let g = GridSpec::new(GridKind::Uniform, 4, 0.0, 2.0).unwrap();
        assert!(matches!(
            build_killed_kernel(&cusum(), 3.0, &g),
            Err(QsdError::InvalidGrid(_))
        ));
    }

    #[test]
    fn vacuous_threshold_detected() {
        let k = MultiplicativeKernel::new(
            PhiFunction::MaxOne,
            InnovationDistribution::LogNormal {
                mu: -50.0,
                sigma: 0.1,
            },
            0.0,
        )
        .unwrap();
        let g = GridSpec::new(GridKind::Uniform, 4, 0.0, 2.0).unwrap();
        assert!(matches!(
            build_killed_kernel(&k, 2.0, &g),
            Err(QsdError::VacuousThreshold(_))
        ));
    }

    #[test]
    fn yaglom_identity_kernel_keeps_initial() {
        let k = kk(&[[0.3, 0.0], [0.0, 0.3]]);
        let init = [0.25, 0.75];
        let sol = yaglom_iterate(&k, Some(&init), 1e-14, 100).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.weights, init.to_vec());
        assert!((sol.lambda - 0.3).abs() < 1e-15);
    }

    #[test]
    fn yaglom_reports_non_convergence() {
        // periodic swap never settles from an asymmetric start
        let k = kk(&[[0.0, 0.5], [0.5, 0.0]]);
        let sol = yaglom_iterate(&k, Some(&[1.0, 0.0]), 1e-12, 50).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 50);
        assert!(sol.residual > 1.0);
    }

    #[test]
    fn yaglom_extinction() {
        let k = kk(&[[0.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(
            yaglom_iterate(&k, None, 1e-12, 10),
            Err(QsdError::Extinction { iteration: 1 })
        ));
    }

    #[test]
    fn geometric_exit_time_examples() {
        assert_eq!(geometric_mean_from_lambda(0.5).unwrap(), 2.0);
        assert!((geometric_mean_from_lambda(0.99).unwrap() - 100.0).abs() < 1e-10);
        assert!(matches!(
            geometric_mean_from_lambda(1.0),
            Err(QsdError::Divergence(_))
        ));
    }

    #[test]
    fn fundamental_zero_matrix_is_one_step() {
        let k = kk(&[[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(
            expected_exit_time_fundamental(&k, &[0.3, 0.7]).unwrap(),
            1.0
        );
    }

    #[test]
    fn fundamental_singular() {
        let k = kk(&[[1.0, 0.0], [0.0, 0.5]]);
        assert!(matches!(
            expected_exit_time_fundamental(&k, &[0.5, 0.5]),
            Err(QsdError::Singular(_))
        ));
    }

    #[test]
    fn conditioned_stationary_rejects_dead_rows() {
        let k = kk(&[[0.5, 0.2], [0.0, 0.0]]);
        assert!(matches!(
            stationary_of_conditioned(&k, 1e-12, 100),
            Err(QsdError::DegenerateRow { row: 1 })
        ));
    }

    #[test]
    fn cdf_endpoints_and_interpolation() {
        let g = GridSpec::new(GridKind::Uniform, 2, 0.0, 2.0).unwrap();
        let k = KilledKernel::from_matrix(g, &[vec![0.5, 0.2], vec![0.3, 0.4]]).unwrap();
        let sol = yaglom_iterate(&k, None, 1e-14, 10_000).unwrap();
        assert_eq!(sol.cdf(0.0), 0.0);
        assert_eq!(sol.cdf(2.0), 1.0);
        assert!((sol.cdf(0.5) - 0.3).abs() < 1e-12);
        assert!((sol.cdf(1.5) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn dominance_with_unit_scale_is_trivial() {
        let k = cusum();
        let a = std::f64::consts::E.powi(2);
        let g = GridSpec::new(GridKind::Geometric, 100, a * 1e-8, a).unwrap();
        let r = check_scaling_dominance(&k, a, 1.0, &g, &g, 1e-12, 100_000, 0.05).unwrap();
        assert!(r.passed);
        assert_eq!(r.worst_gap, 0.0);
    }
}
