use std::fmt;
use std::str::FromStr;

use crate::error::{QsdError, Result};

/// Lower edge of a default geometric grid relative to its upper edge.
pub const DEFAULT_GEOMETRIC_SPAN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Uniform,
    Geometric,
}

impl fmt::Display for GridKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridKind::Uniform => "uniform",
            GridKind::Geometric => "geometric",
        })
    }
}

impl FromStr for GridKind {
    type Err = QsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(GridKind::Uniform),
            "geometric" | "log" => Ok(GridKind::Geometric),
            other => Err(QsdError::InvalidGrid(format!(
                "unknown grid kind {other:?}"
            ))),
        }
    }
}

/// Partition of `[lower, upper]` into cells with one representative source
/// state per cell (arithmetic midpoints, or geometric midpoints on
/// log-spaced grids).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    kind: GridKind,
    edges: Vec<f64>,
    points: Vec<f64>,
}

impl GridSpec {
    pub fn new(kind: GridKind, n_cells: usize, lower: f64, upper: f64) -> Result<Self> {
        if n_cells == 0 {
            return Err(QsdError::InvalidGrid("grid needs at least one cell".into()));
        }
        if !(lower.is_finite() && upper.is_finite() && lower >= 0.0 && upper > lower) {
            return Err(QsdError::InvalidGrid(format!(
                "need 0 <= lower < upper, got lower={lower}, upper={upper}"
            )));
        }
        let n = n_cells as f64;
        let mut edges: Vec<f64> = match kind {
            GridKind::Uniform => (0..=n_cells)
                .map(|k| lower + (upper - lower) * (k as f64 / n))
                .collect(),
            GridKind::Geometric => {
                if lower <= 0.0 {
                    return Err(QsdError::InvalidGrid(
                        "geometric grid needs a positive lower edge".into(),
                    ));
                }
                let (l, u) = (lower.ln(), upper.ln());
                (0..=n_cells)
                    .map(|k| (l + (u - l) * (k as f64 / n)).exp())
                    .collect()
            }
        };
        edges[0] = lower;
        edges[n_cells] = upper;
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(QsdError::InvalidGrid(
                "edges are not strictly increasing".into(),
            ));
        }
        let points = edges
            .windows(2)
            .map(|w| match kind {
                GridKind::Uniform => 0.5 * (w[0] + w[1]),
                GridKind::Geometric => (w[0] * w[1]).sqrt(),
            })
            .collect();
        Ok(GridSpec {
            kind,
            edges,
            points,
        })
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn n_cells(&self) -> usize {
        self.points.len()
    }

    pub fn lower(&self) -> f64 {
        self.edges[0]
    }

    pub fn upper(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Representative source state of each cell.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Same cell structure on `[y·lower, y·upper]`.
    pub fn scaled(&self, y: f64) -> Result<Self> {
        GridSpec::new(
            self.kind,
            self.n_cells(),
            self.lower() * y,
            self.upper() * y,
        )
    }
}

/// Grid recipe that is resolved against a threshold and a state-space floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridTemplate {
    pub kind: GridKind,
    pub n_cells: usize,
    /// Explicit lower edge; `None` picks the default for the kind.
    pub lower: Option<f64>,
}

impl Default for GridTemplate {
    fn default() -> Self {
        GridTemplate {
            kind: GridKind::Geometric,
            n_cells: 400,
            lower: None,
        }
    }
}

impl GridTemplate {
    pub fn geometric(n_cells: usize) -> Self {
        GridTemplate {
            kind: GridKind::Geometric,
            n_cells,
            lower: None,
        }
    }

    /// Lower edge this template uses below `threshold`.
    pub fn lower_edge(&self, floor: f64, threshold: f64) -> f64 {
        match (self.lower, self.kind) {
            (Some(l), _) => l.max(floor),
            (None, GridKind::Geometric) => floor.max(threshold * DEFAULT_GEOMETRIC_SPAN),
            (None, GridKind::Uniform) => floor,
        }
    }

    pub fn resolve(&self, floor: f64, threshold: f64) -> Result<GridSpec> {
        GridSpec::new(
            self.kind,
            self.n_cells,
            self.lower_edge(floor, threshold),
            threshold,
        )
    }
}
