use serde::{Deserialize, Serialize};

use crate::error::{Result, SiviError};
use crate::ndcore::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lower: f64,
    pub upper: f64,
    pub cells: usize,
}

impl GridAxis {
    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / self.cells as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.lower + (i as f64 + 0.5) * self.step()
    }
}

/// Tensor-product midpoint grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(SiviError::InvalidConfig("grid needs at least one axis".into()));
        }
        for a in &axes {
            if a.cells < 2 || a.lower.is_nan() || a.upper.is_nan() || a.lower >= a.upper {
                return Err(SiviError::InvalidConfig(format!(
                    "grid axis needs cells >= 2 and lower < upper, got {a:?}"
                )));
            }
        }
        Ok(Self { axes })
    }

    pub fn line(lower: f64, upper: f64, cells: usize) -> Result<Self> {
        Self::new(vec![GridAxis { lower, upper, cells }])
    }

    /// `cells x cells` grid on `[lower, upper]^2`.
    pub fn square(lower: f64, upper: f64, cells: usize) -> Result<Self> {
        let a = GridAxis { lower, upper, cells };
        Self::new(vec![a, a])
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.axes.iter().map(|a| a.cells).product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(GridAxis::step).product()
    }

    /// Same box at half the resolution (cell counts halved, rounded up).
    pub fn coarsened(&self) -> Self {
        Self {
            axes: self
                .axes
                .iter()
                .map(|a| GridAxis {
                    cells: a.cells.div_ceil(2).max(2),
                    ..*a
                })
                .collect(),
        }
    }

    /// Midpoint of cell `index` (row-major, last axis fastest).
    pub fn node(&self, mut index: usize, out: &mut [f64]) {
        for (slot, a) in out.iter_mut().zip(&self.axes).rev() {
            *slot = a.midpoint(index % a.cells);
            index /= a.cells;
        }
    }

    /// Evaluates `f` at every node in row-major order.
    pub fn evaluate<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        (0..self.num_cells())
            .map(|i| {
                self.node(i, &mut x);
                f(&x)
            })
            .collect()
    }
}

fn check_values(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(SiviError::GridMismatch);
    }
    for (i, v) in p.iter().chain(q).enumerate() {
        if !v.is_finite() {
            return Err(SiviError::NonFiniteDensity { index: i % p.len() });
        }
        if *v < 0.0 {
            return Err(SiviError::NegativeDensity {
                index: i % p.len(),
                value: *v,
            });
        }
    }
    Ok(())
}

/// `1/2 sum |p - q| * cell volume` from density values at the grid nodes.
pub fn tv_from_values(p: &[f64], q: &[f64], cell_volume: f64) -> Result<f64> {
    check_values(p, q)?;
    let s: CompensatedSum = p.iter().zip(q).map(|(a, b)| (a - b).abs()).collect();
    Ok(0.5 * s.value() * cell_volume)
}

/// Hellinger distance `H` (with `H^2 = int (sqrt p - sqrt q)^2`) from node values.
pub fn hellinger_from_values(p: &[f64], q: &[f64], cell_volume: f64) -> Result<f64> {
    check_values(p, q)?;
    let s: CompensatedSum = p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).collect();
    Ok((s.value() * cell_volume).sqrt())
}

pub fn tv_grid<P, Q>(p: P, q: Q, grid: &GridSpec) -> Result<f64>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    tv_from_values(&grid.evaluate(p), &grid.evaluate(q), grid.cell_volume())
}

/// Grid TV with a Richardson error estimate from the half-resolution grid
/// (midpoint rule, second order).
pub fn tv_grid_with_error<P, Q>(p: P, q: Q, grid: &GridSpec) -> Result<(f64, f64)>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    let fine = tv_grid(&p, &q, grid)?;
    let coarse = tv_grid(&p, &q, &grid.coarsened())?;
    Ok((fine, (fine - coarse).abs() / 3.0))
}

pub fn hellinger_grid<P, Q>(p: P, q: Q, grid: &GridSpec) -> Result<f64>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    hellinger_from_values(&grid.evaluate(p), &grid.evaluate(q), grid.cell_volume())
}
