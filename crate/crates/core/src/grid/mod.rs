//! Discretization substrate: boxes, uniform cell-centred grids, logarithmic
//! scale ladders, cubes and Riemann-sum quadrature.
//!
//! Every integral over `R^n` is replaced by a box integral. Nodes sit at cell
//! centres `x_i = lower + (i + 1/2) h` with `h = (upper - lower) / N`, and
//! functions are zero outside the box unless an operation says otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod convolve;
pub mod io;

pub use convolve::{
    apply_kernel, smooth_size, GaussianHeatKernel, RadialKernel, SpectralSum, Spectrum,
};

/// Smallest admissible number of points per axis.
pub const MIN_POINTS_PER_AXIS: usize = 8;
/// Smallest admissible number of ladder levels.
pub const MIN_LEVELS: usize = 8;

/// Axis-parallel box carrying a uniform cell-centred grid in dimension 1 or 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    points_per_axis: usize,
}

impl GridBox {
    pub fn new(dim: usize, lower: &[f64], upper: &[f64], points_per_axis: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} bounds per side, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if points_per_axis < MIN_POINTS_PER_AXIS {
            return Err(Error::InvalidGrid(format!(
                "points_per_axis must be >= {MIN_POINTS_PER_AXIS}, got {points_per_axis}"
            )));
        }
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for axis in 0..dim {
            if !(lower[axis].is_finite() && upper[axis].is_finite()) || upper[axis] <= lower[axis] {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis}: need finite lower < upper, got [{}, {}]",
                    lower[axis], upper[axis]
                )));
            }
            lo[axis] = lower[axis];
            hi[axis] = upper[axis];
        }
        Ok(Self {
            dim,
            lower: lo,
            upper: hi,
            points_per_axis,
        })
    }

    pub fn line(lower: f64, upper: f64, points: usize) -> Result<Self> {
        Self::new(1, &[lower], &[upper], points)
    }

    pub fn square(lower: f64, upper: f64, points_per_axis: usize) -> Result<Self> {
        Self::new(2, &[lower, lower], &[upper, upper], points_per_axis)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent(axis) / self.points_per_axis as f64
    }

    /// Largest per-axis spacing.
    pub fn h(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn node_count(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    /// Euclidean diameter of the box.
    pub fn diameter(&self) -> f64 {
        (0..self.dim)
            .map(|a| self.extent(a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// True when all axes share the same bounds extent (needed by dyadic families).
    pub fn is_cubic(&self) -> bool {
        self.dim == 1 || (self.extent(0) - self.extent(1)).abs() <= 1e-12 * self.extent(0)
    }

    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + (i as f64 + 0.5) * self.spacing(axis)
    }

    /// Multi-index of a flat node index (axis 0 is the slow axis).
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.dim {
            1 => [idx, 0],
            _ => [idx / self.points_per_axis, idx % self.points_per_axis],
        }
    }

    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        match self.dim {
            1 => mi[0],
            _ => mi[0] * self.points_per_axis + mi[1],
        }
    }

    /// Coordinates of a node; the second entry is zero in dimension 1.
    pub fn coord(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        let mut x = [0.0; 2];
        for (axis, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = self.axis_coord(axis, mi[axis]);
        }
        x
    }

    /// Index of the node whose cell contains `point` (clamped to the box).
    pub fn nearest_index(&self, point: &[f64]) -> usize {
        let mut mi = [0usize; 2];
        for axis in 0..self.dim {
            let u = ((point[axis] - self.lower[axis]) / self.spacing(axis)).floor();
            mi[axis] = u.clamp(0.0, (self.points_per_axis - 1) as f64) as usize;
        }
        self.flat_index(mi)
    }

    /// Same box with `factor` times as many points per axis.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(
            self.dim,
            &self.lower[..self.dim],
            &self.upper[..self.dim],
            self.points_per_axis * factor,
        )
    }

    /// Mask of nodes whose distance to the box boundary is at least `margin`.
    pub fn interior_mask(&self, margin: f64) -> Vec<bool> {
        (0..self.node_count())
            .map(|idx| {
                let x = self.coord(idx);
                (0..self.dim)
                    .all(|a| x[a] - self.lower[a] >= margin && self.upper[a] - x[a] >= margin)
            })
            .collect()
    }
}

/// Scalar field sampled on the nodes of a [`GridBox`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: GridBox,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: GridBox, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    /// Construction for values known to be finite.
    pub(crate) fn from_parts(grid: GridBox, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self { grid, values }
    }

    pub fn zeros(grid: &GridBox) -> Self {
        Self::from_parts(grid.clone(), vec![0.0; grid.node_count()])
    }

    pub fn constant(grid: &GridBox, c: f64) -> Self {
        Self::from_parts(grid.clone(), vec![c; grid.node_count()])
    }

    /// Samples `f` at every node. Fails if `f` produces a non-finite value.
    pub fn from_fn(grid: &GridBox, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let dim = grid.dim();
        let values = (0..grid.node_count())
            .map(|idx| f(&grid.coord(idx)[..dim]))
            .collect();
        Self::new(grid.clone(), values)
    }

    pub fn grid(&self) -> &GridBox {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(
            self.grid.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &GridFunction) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Self::from_parts(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        )
    }

    pub fn add(&self, other: &GridFunction) -> Self {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &GridFunction) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn mul(&self, other: &GridFunction) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Self::from_parts(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        const_lp_norm(self, 2.0)
    }

    /// L2 norm restricted to the nodes selected by `mask`.
    pub fn masked_l2_norm(&self, mask: &[bool]) -> f64 {
        let s: f64 = self
            .values
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v * v)
            .sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    /// Box mean computed relative to the first node so that constant fields
    /// return their value exactly.
    pub fn mean(&self) -> f64 {
        let c0 = self.values[0];
        let s: f64 = self.values.iter().map(|v| v - c0).sum();
        c0 + s / self.values.len() as f64
    }

    /// Sets every node outside `mask` to zero.
    pub fn masked(&self, mask: &[bool]) -> Self {
        Self::from_parts(
            self.grid.clone(),
            self.values
                .iter()
                .zip(mask)
                .map(|(&v, &m)| if m { v } else { 0.0 })
                .collect(),
        )
    }
}

/// Logarithmically spaced scales `t_k = t_min (t_max / t_min)^(k / (levels - 1))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleLadder {
    t_min: f64,
    t_max: f64,
    levels: usize,
}

impl ScaleLadder {
    pub fn new(t_min: f64, t_max: f64, levels: usize) -> Result<Self> {
        if !(t_min > 0.0 && t_max > t_min && t_max.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "ladder needs 0 < t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        if levels < MIN_LEVELS {
            return Err(Error::InvalidGrid(format!(
                "ladder needs >= {MIN_LEVELS} levels, got {levels}"
            )));
        }
        Ok(Self {
            t_min,
            t_max,
            levels,
        })
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Step in `log t`; the weight of every level in `int_0^inf (.) dt/t`.
    pub fn dlog(&self) -> f64 {
        (self.t_max / self.t_min).ln() / (self.levels - 1) as f64
    }

    pub fn scale(&self, k: usize) -> f64 {
        self.t_min * (k as f64 * self.dlog()).exp()
    }

    pub fn scales(&self) -> Vec<f64> {
        (0..self.levels).map(|k| self.scale(k)).collect()
    }
}

/// Field on `grid x ladder`, the discrete upper half-space. Values are stored
/// level-major: level `k` occupies `values[k * nodes..(k + 1) * nodes]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfSpaceFunction {
    grid: GridBox,
    ladder: ScaleLadder,
    values: Vec<f64>,
}

impl HalfSpaceFunction {
    pub fn new(grid: GridBox, ladder: ScaleLadder, values: Vec<f64>) -> Result<Self> {
        let expected = grid.node_count() * ladder.levels();
        if values.len() != expected {
            return Err(Error::InvalidInput(format!(
                "expected {expected} half-space values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite half-space value at {i}"
            )));
        }
        Ok(Self {
            grid,
            ladder,
            values,
        })
    }

    pub(crate) fn from_parts(grid: GridBox, ladder: ScaleLadder, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count() * ladder.levels());
        Self {
            grid,
            ladder,
            values,
        }
    }

    pub fn zeros(grid: &GridBox, ladder: &ScaleLadder) -> Self {
        Self::from_parts(
            grid.clone(),
            ladder.clone(),
            vec![0.0; grid.node_count() * ladder.levels()],
        )
    }

    /// Stacks one grid function per ladder level.
    pub fn from_levels(ladder: &ScaleLadder, levels: Vec<GridFunction>) -> Result<Self> {
        if levels.len() != ladder.levels() {
            return Err(Error::InvalidInput(format!(
                "expected {} levels, got {}",
                ladder.levels(),
                levels.len()
            )));
        }
        let grid = levels[0].grid().clone();
        let mut values = Vec::with_capacity(grid.node_count() * ladder.levels());
        for level in &levels {
            if level.grid() != &grid {
                return Err(Error::InvalidInput("levels live on different grids".into()));
            }
            values.extend_from_slice(level.values());
        }
        Ok(Self::from_parts(grid, ladder.clone(), values))
    }

    /// Samples `f(x, t)` at every node and level.
    pub fn from_fn(
        grid: &GridBox,
        ladder: &ScaleLadder,
        f: impl Fn(&[f64], f64) -> f64,
    ) -> Result<Self> {
        let dim = grid.dim();
        let mut values = Vec::with_capacity(grid.node_count() * ladder.levels());
        for t in ladder.scales() {
            for idx in 0..grid.node_count() {
                values.push(f(&grid.coord(idx)[..dim], t));
            }
        }
        Self::new(grid.clone(), ladder.clone(), values)
    }

    pub fn grid(&self) -> &GridBox {
        &self.grid
    }

    pub fn ladder(&self) -> &ScaleLadder {
        &self.ladder
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.node_count();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn level_function(&self, k: usize) -> GridFunction {
        GridFunction::from_parts(self.grid.clone(), self.level(k).to_vec())
    }

    pub fn get(&self, idx: usize, k: usize) -> f64 {
        self.values[k * self.grid.node_count() + idx]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(
            self.grid.clone(),
            self.ladder.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn axpy(&self, c: f64, other: &HalfSpaceFunction) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        assert_eq!(self.ladder, other.ladder, "ladder mismatch");
        Self::from_parts(
            self.grid.clone(),
            self.ladder.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        )
    }

    pub fn add(&self, other: &HalfSpaceFunction) -> Self {
        self.axpy(1.0, other)
    }

    /// Keeps entries where `keep(node, level)` holds and zeroes the rest.
    pub fn restricted(&self, keep: impl Fn(usize, usize) -> bool) -> Self {
        let n = self.grid.node_count();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if keep(i % n, i / n) { v } else { 0.0 })
            .collect();
        Self::from_parts(self.grid.clone(), self.ladder.clone(), values)
    }

    /// `int int |g|^2 dy dt/t` by ladder quadrature.
    pub fn l2_dt_over_t(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v * v).sum();
        (s * self.grid.cell_volume() * self.ladder.dlog()).sqrt()
    }
}

/// Axis-parallel cube with centre `x_Q` and side `l(Q)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: [f64; 2],
    pub side: f64,
}

/// Per-axis half-open node index ranges `[lo, hi)` covered by a cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRange {
    pub lo: [usize; 2],
    pub hi: [usize; 2],
}

impl NodeRange {
    pub fn is_empty(&self, dim: usize) -> bool {
        (0..dim).any(|a| self.hi[a] <= self.lo[a])
    }

    pub fn count(&self, dim: usize) -> usize {
        (0..dim)
            .map(|a| self.hi[a].saturating_sub(self.lo[a]))
            .product()
    }

    /// Flat indices of the covered nodes, in row-major order.
    pub fn indices(&self, grid: &GridBox) -> Vec<usize> {
        let dim = grid.dim();
        if self.is_empty(dim) {
            return Vec::new();
        }
        match dim {
            1 => (self.lo[0]..self.hi[0]).collect(),
            _ => {
                let mut out = Vec::with_capacity(self.count(2));
                for i in self.lo[0]..self.hi[0] {
                    for j in self.lo[1]..self.hi[1] {
                        out.push(grid.flat_index([i, j]));
                    }
                }
                out
            }
        }
    }
}

impl Cube {
    pub fn new(center: &[f64], side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "cube side must be positive, got {side}"
            )));
        }
        let mut c = [0.0; 2];
        for (a, v) in center.iter().enumerate().take(2) {
            c[a] = *v;
        }
        Ok(Self { center: c, side })
    }

    /// The concentric cube `aQ`.
    pub fn dilate(&self, a: f64) -> Self {
        Self {
            center: self.center,
            side: a * self.side,
        }
    }

    pub fn measure(&self, dim: usize) -> f64 {
        self.side.powi(dim as i32)
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.center[axis] - 0.5 * self.side
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.center[axis] + 0.5 * self.side
    }

    /// Half-open membership `lower <= x < upper` on every axis.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(a, &xa)| xa >= self.lower(a) && xa < self.upper(a))
    }

    /// `Q1 subset Q2` (closed containment).
    pub fn is_inside(&self, other: &Cube, dim: usize) -> bool {
        let eps = 1e-12 * other.side;
        (0..dim)
            .all(|a| self.lower(a) >= other.lower(a) - eps && self.upper(a) <= other.upper(a) + eps)
    }

    /// Nodes of `grid` lying in the cube (half-open convention with a small
    /// tolerance so that cube faces on cell edges are resolved exactly).
    pub fn node_range(&self, grid: &GridBox) -> NodeRange {
        let n = grid.points_per_axis() as f64;
        let mut r = NodeRange {
            lo: [0, 0],
            hi: [1, 1],
        };
        for a in 0..grid.dim() {
            let h = grid.spacing(a);
            let lo = (self.lower(a) - grid.lower(a)) / h - 0.5;
            let hi = (self.upper(a) - grid.lower(a)) / h - 0.5;
            r.lo[a] = (lo - 1e-9).ceil().clamp(0.0, n) as usize;
            r.hi[a] = (hi - 1e-9).ceil().clamp(0.0, n) as usize;
        }
        r
    }

    /// Measure of the grid cells whose nodes fall in the cube.
    pub fn discrete_measure(&self, grid: &GridBox) -> f64 {
        self.node_range(grid).count(grid.dim()) as f64 * grid.cell_volume()
    }

    pub fn indicator(&self, grid: &GridBox) -> GridFunction {
        let mut values = vec![0.0; grid.node_count()];
        for idx in self.node_range(grid).indices(grid) {
            values[idx] = 1.0;
        }
        GridFunction::from_parts(grid.clone(), values)
    }
}

/// `int f dx` as `sum f_i h^n`.
pub fn integrate(f: &GridFunction) -> f64 {
    f.values().iter().sum::<f64>() * f.grid().cell_volume()
}

/// `(int |f|^p)^(1/p)` for a constant exponent `p > 0`.
pub fn const_lp_norm(f: &GridFunction, p: f64) -> f64 {
    assert!(p > 0.0, "exponent must be positive");
    let s: f64 = if p == 2.0 {
        f.values().iter().map(|v| v * v).sum()
    } else if p == 1.0 {
        f.values().iter().map(|v| v.abs()).sum()
    } else {
        f.values().iter().map(|v| v.abs().powf(p)).sum()
    };
    (s * f.grid().cell_volume()).powf(1.0 / p)
}

/// Dyadic cubes of a cubic box: generation `j` has side `L / 2^j`.
#[derive(Clone, Debug)]
pub struct DyadicFamily {
    grid: GridBox,
    depth: usize,
    cubes: Vec<(usize, Cube)>,
}

impl DyadicFamily {
    /// Generations `0..=depth`. Requires a cubic box whose points per axis are
    /// divisible by `2^depth`, so that every cube is a union of whole cells.
    pub fn new(grid: &GridBox, depth: usize) -> Result<Self> {
        if !grid.is_cubic() {
            return Err(Error::InvalidGrid(
                "dyadic families need a cubic box".into(),
            ));
        }
        let n = grid.points_per_axis();
        if depth >= usize::BITS as usize || n % (1usize << depth) != 0 {
            return Err(Error::InvalidGrid(format!(
                "{n} points per axis cannot be split into 2^{depth} dyadic cells"
            )));
        }
        let dim = grid.dim();
        let side0 = grid.extent(0);
        let mut cubes = Vec::new();
        for j in 0..=depth {
            let per_axis = 1usize << j;
            let side = side0 / per_axis as f64;
            let count = per_axis.pow(dim as u32);
            for c in 0..count {
                let mi = if dim == 1 {
                    [c, 0]
                } else {
                    [c / per_axis, c % per_axis]
                };
                let mut center = [0.0; 2];
                for (a, ca) in center.iter_mut().enumerate().take(dim) {
                    *ca = grid.lower(a) + (mi[a] as f64 + 0.5) * side;
                }
                cubes.push((j, Cube { center, side }));
            }
        }
        Ok(Self {
            grid: grid.clone(),
            depth,
            cubes,
        })
    }

    /// Deepest generation that still resolves whole cells.
    pub fn max_depth(grid: &GridBox) -> usize {
        grid.points_per_axis().trailing_zeros() as usize
    }

    pub fn grid(&self) -> &GridBox {
        &self.grid
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn cubes(&self) -> impl Iterator<Item = &Cube> {
        self.cubes.iter().map(|(_, c)| c)
    }

    pub fn generation(&self, j: usize) -> impl Iterator<Item = &Cube> {
        self.cubes
            .iter()
            .filter(move |(g, _)| *g == j)
            .map(|(_, c)| c)
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn box_validation() {
        assert!(GridBox::line(0.0, 1.0, 4).is_err());
        assert!(GridBox::line(1.0, 0.0, 16).is_err());
        assert!(GridBox::new(3, &[0.0; 3], &[1.0; 3], 16).is_err());
        let g = GridBox::square(-1.0, 1.0, 16).unwrap();
        assert_eq!(g.node_count(), 256);
        assert_abs_diff_eq!(g.cell_volume(), (2.0f64 / 16.0).powi(2));
    }

    #[test]
    fn indicator_mass() {
        let g = GridBox::line(-2.0, 2.0, 4096).unwrap();
        let f = GridFunction::from_fn(&g, |x| {
            if (0.0..=1.0).contains(&x[0]) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        assert!((integrate(&f) - 1.0).abs() <= 2.0 * g.h());
        assert_eq!(integrate(&GridFunction::zeros(&g)), 0.0);
    }

    #[test]
    fn gaussian_integral() {
        let g = GridBox::line(-8.0, 8.0, 512).unwrap();
        let f = GridFunction::from_fn(&g, |x| (-x[0] * x[0]).exp()).unwrap();
        assert!((integrate(&f) - std::f64::consts::PI.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn const_lp_examples() {
        let g = GridBox::line(-2.0, 2.0, 64).unwrap();
        let chi = Cube::new(&[0.5], 1.0).unwrap().indicator(&g);
        assert_abs_diff_eq!(const_lp_norm(&chi, 2.0), 1.0, epsilon = 1e-14);
        // (int 2^(1/2))^2 = 2
        assert_abs_diff_eq!(const_lp_norm(&chi.scaled(2.0), 0.5), 2.0, epsilon = 1e-12);
        assert_eq!(const_lp_norm(&GridFunction::zeros(&g), 3.0), 0.0);
        let f = GridFunction::from_fn(&g, |x| x[0].sin()).unwrap();
        let sq = integrate(&f.mul(&f));
        assert_abs_diff_eq!(const_lp_norm(&f, 2.0).powi(2), sq, epsilon = 1e-14);
    }

    #[test]
    fn cube_node_ranges() {
        let g = GridBox::line(-4.0, 4.0, 64).unwrap();
        let q = Cube::new(&[0.5], 1.0).unwrap();
        assert_eq!(q.node_range(&g).count(1), 8);
        assert_abs_diff_eq!(q.discrete_measure(&g), 1.0);
        // faces on node centres: half-open convention keeps the count exact
        let cell = Cube::new(&[g.axis_coord(0, 10)], g.h()).unwrap();
        assert_eq!(cell.dilate(2.0).node_range(&g).count(1), 2);
        assert_eq!(cell.dilate(4.0).node_range(&g).count(1), 4);
        // clamped outside the box
        let big = Cube::new(&[3.5], 4.0).unwrap();
        assert_abs_diff_eq!(big.discrete_measure(&g), 2.5);
    }

    #[test]
    fn ladder_spacing() {
        let l = ScaleLadder::new(0.1, 10.0, 9).unwrap();
        assert_abs_diff_eq!(l.scale(0), 0.1);
        assert_abs_diff_eq!(l.scale(8), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.dlog(), (100.0f64).ln() / 8.0);
        assert!(l.scales().windows(2).all(|w| w[1] > w[0]));
        assert!(ScaleLadder::new(1.0, 1.0, 9).is_err());
        assert!(ScaleLadder::new(0.1, 1.0, 4).is_err());
    }

    #[test]
    fn dyadic_family_partitions() {
        let g = GridBox::square(0.0, 1.0, 16).unwrap();
        let fam = DyadicFamily::new(&g, 3).unwrap();
        assert_eq!(fam.len(), 1 + 4 + 16 + 64);
        for j in 0..=3 {
            let total: f64 = fam.generation(j).map(|c| c.discrete_measure(&g)).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
        assert!(DyadicFamily::new(&g, 5).is_err());
        let rect = GridBox::new(2, &[0.0, 0.0], &[1.0, 2.0], 16).unwrap();
        assert!(DyadicFamily::new(&rect, 1).is_err());
    }

    #[test]
    fn mean_is_exact_for_constants() {
        let g = GridBox::line(0.0, 1.0, 1000).unwrap();
        let f = GridFunction::constant(&g, 0.1);
        assert_eq!(f.mean(), 0.1);
    }
}
