//! Uncentered Hardy–Littlewood maximal operator on grids and the
//! vector-valued (Fefferman–Stein) ratio harness.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::ExponentFunction;
use crate::grid::{GridBox, GridFunction};
use crate::lebesgue;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Balls,
    Cubes,
}

/// Averaging sets: in dimension 1 balls and cubes are both intervals made of
/// whole cells; in dimension 2 cubes are cell-aligned squares and balls are
/// the node sets `{y : |y - c| <= r}` centred at nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximalConfig {
    pub geometry: Geometry,
    /// Radii (half side lengths for cubes), increasing.
    pub radii: Vec<f64>,
}

impl MaximalConfig {
    pub fn new(geometry: Geometry, radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidInput("maximal radii must be positive".into()));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("maximal radii must increase".into()));
        }
        Ok(Self { geometry, radii })
    }

    /// Every cell-aligned window size from one cell up to the whole box.
    pub fn exhaustive(grid: &GridBox, geometry: Geometry) -> Self {
        let h = grid.h();
        let radii = (1..=grid.points_per_axis())
            .map(|l| 0.5 * l as f64 * h)
            .collect();
        Self { geometry, radii }
    }

    /// Geometric ladder `h * 2^(k/4)` up to the box diameter.
    pub fn geometric(grid: &GridBox, geometry: Geometry) -> Self {
        let h = grid.h();
        let mut radii = Vec::new();
        let mut k = 0;
        loop {
            let r = h * 2f64.powf(k as f64 / 4.0);
            radii.push(r);
            if r >= grid.diameter() {
                break;
            }
            k += 1;
        }
        Self { geometry, radii }
    }

    /// The documented default: exhaustive intervals in 1D, geometric balls in 2D.
    pub fn default_for(grid: &GridBox) -> Self {
        if grid.dim() == 1 {
            Self::exhaustive(grid, Geometry::Balls)
        } else {
            Self::geometric(grid, Geometry::Balls)
        }
    }

    fn window_cells(&self, grid: &GridBox) -> Vec<usize> {
        let n = grid.points_per_axis();
        let h = grid.h();
        let mut cells: Vec<usize> = self
            .radii
            .iter()
            .map(|r| ((2.0 * r / h).round() as usize).clamp(1, n))
            .collect();
        cells.dedup();
        cells
    }
}

/// Sliding maximum of `v` over windows `[i - l + 1, i]` clipped to `v`, then
/// re-indexed so that entry `i` is the max over windows that contain `i`.
///
/// `v[s]` is the average of the window starting at `s - (l - 1)`, so a node
/// `i` is covered by starts `i - l + 1 ..= i`, i.e. entries `i ..= i + l - 1`.
fn covering_max(v: &[f64], l: usize, out: &mut [f64]) {
    let n = out.len();
    let mut dq: VecDeque<usize> = VecDeque::new();
    // entries j in [i, i + l - 1]; iterate i from the right.
    let mut next = v.len();
    for i in (0..n).rev() {
        while next > i {
            next -= 1;
            while let Some(&b) = dq.back() {
                if v[b] <= v[next] {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(next);
        }
        while let Some(&f) = dq.front() {
            if f > i + l - 1 {
                dq.pop_front();
            } else {
                break;
            }
        }
        let m = v[*dq.front().expect("window never empty")];
        if m > out[i] {
            out[i] = m;
        }
    }
}

/// Averages of all windows of `l` cells that meet the line, indexed so that
/// entry `s + l - 1` is the window covering cells `s .. s + l` (`s` may be
/// negative); values outside the line count as zero.
fn window_sums(prefix: &[f64], l: usize, n: usize) -> Vec<f64> {
    (0..n + l - 1)
        .map(|e| {
            let hi = (e + 1).min(n);
            let lo = (e + 1).saturating_sub(l);
            prefix[hi] - prefix[lo]
        })
        .collect()
}

fn maximal_1d(abs: &[f64], cells: &[usize]) -> Vec<f64> {
    let n = abs.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + abs[i];
    }
    let mut out = vec![0.0; n];
    for &l in cells {
        let sums: Vec<f64> = window_sums(&prefix, l, n)
            .into_iter()
            .map(|s| s / l as f64)
            .collect();
        covering_max(&sums, l, &mut out);
    }
    out
}

fn maximal_2d_cubes(abs: &[f64], n: usize, cells: &[usize]) -> Vec<f64> {
    let per_size: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&l| {
            let ext = n + l - 1;
            // row pass: window sums along axis 1 for each row
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let row = &abs[i * n..(i + 1) * n];
                    let mut prefix = vec![0.0; n + 1];
                    for j in 0..n {
                        prefix[j + 1] = prefix[j] + row[j];
                    }
                    window_sums(&prefix, l, n)
                })
                .collect();
            // column pass on the extended grid
            let mut avg = vec![0.0; ext * ext];
            for j in 0..ext {
                let mut prefix = vec![0.0; n + 1];
                for i in 0..n {
                    prefix[i + 1] = prefix[i] + rows[i][j];
                }
                for (e, s) in window_sums(&prefix, l, n).into_iter().enumerate() {
                    avg[e * ext + j] = s / (l * l) as f64;
                }
            }
            // covering max: rows then columns
            let mut tmp = vec![0.0; ext * n];
            for e in 0..ext {
                let mut o = vec![0.0; n];
                covering_max(&avg[e * ext..(e + 1) * ext], l, &mut o);
                tmp[e * n..(e + 1) * n].copy_from_slice(&o);
            }
            let mut out = vec![0.0; n * n];
            let mut col = vec![0.0; ext];
            for j in 0..n {
                for e in 0..ext {
                    col[e] = tmp[e * n + j];
                }
                let mut o = vec![0.0; n];
                covering_max(&col, l, &mut o);
                for i in 0..n {
                    out[i * n + j] = o[i];
                }
            }
            out
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for m in per_size {
        for (o, v) in out.iter_mut().zip(m) {
            if v > *o {
                *o = v;
            }
        }
    }
    out
}

/// Disc of node offsets `(di, dj)` with `|(di h, dj h)| <= r`, as row spans.
fn disc_rows(r: f64, h: f64) -> Vec<(i64, i64)> {
    let k = (r / h).floor() as i64;
    (-k..=k)
        .map(|di| {
            let w = ((r / h).powi(2) - (di * di) as f64).max(0.0).sqrt().floor() as i64;
            (di, w)
        })
        .collect()
}

/// Range-maximum table over one row.
struct SparseMax {
    levels: Vec<Vec<f64>>,
}

impl SparseMax {
    fn new(row: &[f64]) -> Self {
        let mut levels = vec![row.to_vec()];
        let mut w = 1;
        while 2 * w <= row.len() {
            let prev = levels.last().expect("nonempty");
            let next: Vec<f64> = (0..=row.len() - 2 * w)
                .map(|i| prev[i].max(prev[i + w]))
                .collect();
            levels.push(next);
            w *= 2;
        }
        Self { levels }
    }

    /// Max over `[a, b]` inclusive.
    fn query(&self, a: usize, b: usize) -> f64 {
        let len = b - a + 1;
        let k = (usize::BITS - 1 - len.leading_zeros()) as usize;
        self.levels[k][a].max(self.levels[k][b + 1 - (1 << k)])
    }
}

/// Balls are centred at box nodes; each node takes the largest average over
/// the balls of every configured radius that contain it.
fn maximal_2d_balls(abs: &[f64], n: usize, h: f64, radii: &[f64]) -> Vec<f64> {
    let ni = n as i64;
    let mut prefix = vec![0.0; n * (n + 1)];
    for i in 0..n {
        for j in 0..n {
            prefix[i * (n + 1) + j + 1] = prefix[i * (n + 1) + j] + abs[i * n + j];
        }
    }
    let row_sum = |i: i64, a: i64, b: i64| -> f64 {
        if i < 0 || i >= ni {
            return 0.0;
        }
        let lo = a.clamp(0, ni) as usize;
        let hi = (b + 1).clamp(0, ni) as usize;
        if hi <= lo {
            0.0
        } else {
            prefix[i as usize * (n + 1) + hi] - prefix[i as usize * (n + 1) + lo]
        }
    };
    let per_radius: Vec<Vec<f64>> = radii
        .par_iter()
        .map(|&r| {
            let rows = disc_rows(r, h);
            let count: i64 = rows.iter().map(|(_, w)| 2 * w + 1).sum();
            let mut avg = vec![0.0; n * n];
            for ci in 0..ni {
                for cj in 0..ni {
                    let s: f64 = rows
                        .iter()
                        .map(|&(di, w)| row_sum(ci + di, cj - w, cj + w))
                        .sum();
                    avg[(ci * ni + cj) as usize] = s / count as f64;
                }
            }
            let tables: Vec<SparseMax> = (0..n)
                .map(|i| SparseMax::new(&avg[i * n..(i + 1) * n]))
                .collect();
            let mut out = vec![0.0; n * n];
            for i in 0..ni {
                for j in 0..ni {
                    let mut m: f64 = 0.0;
                    for &(di, w) in &rows {
                        let ci = i + di;
                        if ci < 0 || ci >= ni {
                            continue;
                        }
                        let a = (j - w).max(0) as usize;
                        let b = (j + w).min(ni - 1) as usize;
                        m = m.max(tables[ci as usize].query(a, b));
                    }
                    out[(i * ni + j) as usize] = m;
                }
            }
            out
        })
        .collect();
    let mut out = vec![0.0; n * n];
    for m in per_radius {
        for (o, v) in out.iter_mut().zip(m) {
            if v > *o {
                *o = v;
            }
        }
    }
    out
}

/// `Mf(x) = max over configured sets B containing x of |B|^-1 int_B |f|`,
/// with `f` zero outside the box.
pub fn hl_maximal(f: &GridFunction, cfg: &MaximalConfig) -> GridFunction {
    let grid = f.grid();
    let abs: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    let n = grid.points_per_axis();
    let values = match (grid.dim(), cfg.geometry) {
        (1, _) => maximal_1d(&abs, &cfg.window_cells(grid)),
        (_, Geometry::Cubes) => maximal_2d_cubes(&abs, n, &cfg.window_cells(grid)),
        (_, Geometry::Balls) => maximal_2d_balls(&abs, n, grid.h(), &cfg.radii),
    };
    GridFunction::new(grid.clone(), values).expect("maximal values are finite")
}

#[derive(Clone, Debug, Serialize)]
pub struct FsReport {
    pub ratio: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub family_size: usize,
}

/// `|| (sum_j (M f_j)^r)^{1/r} ||_{p(.)} / || (sum_j |f_j|^r)^{1/r} ||_{p(.)}`.
pub fn fs_vector_check(
    fs: &[GridFunction],
    r: f64,
    p: &ExponentFunction,
    cfg: &MaximalConfig,
) -> Result<FsReport> {
    if p.p_minus() <= 1.0 {
        return Err(Error::Hypothesis(format!(
            "vector-valued maximal inequality needs p_minus > 1, got {}",
            p.p_minus()
        )));
    }
    if !(r > 1.0 && r.is_finite()) {
        return Err(Error::Parameter(format!("r = {r} must lie in (1, inf)")));
    }
    let Some(first) = fs.first() else {
        return Ok(FsReport {
            ratio: 0.0,
            lhs: 0.0,
            rhs: 0.0,
            family_size: 0,
        });
    };
    let grid = first.grid().clone();
    let mut left = vec![0.0; grid.node_count()];
    let mut right = vec![0.0; grid.node_count()];
    for f in fs {
        if f.grid() != &grid {
            return Err(Error::InvalidInput(
                "family lives on different grids".into(),
            ));
        }
        let m = hl_maximal(f, cfg);
        for ((l, mv), (rr, fv)) in left
            .iter_mut()
            .zip(m.values())
            .zip(right.iter_mut().zip(f.values()))
        {
            *l += mv.powf(r);
            *rr += fv.abs().powf(r);
        }
    }
    let root = |v: Vec<f64>| {
        GridFunction::new(
            grid.clone(),
            v.into_iter().map(|s| s.powf(1.0 / r)).collect(),
        )
    };
    let lhs = lebesgue::norm(&root(left)?, p)?;
    let rhs = lebesgue::norm(&root(right)?, p)?;
    let ratio = if rhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(FsReport {
        ratio,
        lhs,
        rhs,
        family_size: fs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Cube;
    use proptest::prelude::*;

    /// Brute force over all cell-aligned windows that meet the line.
    fn brute_1d(f: &[f64]) -> Vec<f64> {
        let n = f.len() as i64;
        (0..n)
            .map(|i| {
                let mut best: f64 = 0.0;
                for l in 1..=n {
                    for s in (i - l + 1)..=i {
                        let sum: f64 = (s..s + l)
                            .filter(|k| (0..n).contains(k))
                            .map(|k| f[k as usize].abs())
                            .sum();
                        best = best.max(sum / l as f64);
                    }
                }
                best
            })
            .collect()
    }

    #[test]
    fn indicator_example() {
        let g = GridBox::line(-4.0, 4.0, 256).unwrap();
        let f = GridFunction::from_fn(&g, |x| if (0.0..1.0).contains(&x[0]) { 1.0 } else { 0.0 })
            .unwrap();
        let m = hl_maximal(&f, &MaximalConfig::default_for(&g));
        // the cell [2 - h, 2]
        let i = g.nearest_index(&[2.0 - 0.5 * g.h()]);
        assert!((m.values()[i] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn constant_and_domination() {
        let g = GridBox::line(-4.0, 4.0, 128).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        let m = hl_maximal(&one, &MaximalConfig::default_for(&g));
        assert!(m.values().iter().all(|v| (v - 1.0).abs() < 1e-14));
        let g2 = GridBox::square(-2.0, 2.0, 32).unwrap();
        let one = GridFunction::constant(&g2, 1.0);
        for geom in [Geometry::Balls, Geometry::Cubes] {
            let m = hl_maximal(&one, &MaximalConfig::geometric(&g2, geom));
            assert!(m.values().iter().all(|v| (v - 1.0).abs() < 1e-13));
        }
    }

    #[test]
    fn fs_examples() {
        let g = GridBox::line(-8.0, 8.0, 256).unwrap();
        let cfg = MaximalConfig::default_for(&g);
        let p = ExponentFunction::constant(1.5, &g).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        let r = fs_vector_check(&[one], 2.0, &p, &cfg).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
        let zeros = vec![GridFunction::zeros(&g); 3];
        assert_eq!(fs_vector_check(&zeros, 2.0, &p, &cfg).unwrap().ratio, 0.0);
        let bad = ExponentFunction::constant(1.0, &g).unwrap();
        assert!(matches!(
            fs_vector_check(&zeros, 2.0, &bad, &cfg),
            Err(Error::Hypothesis(_))
        ));
        let fam: Vec<GridFunction> = (0..8)
            .map(|k| {
                Cube::new(&[-6.0 + 1.5 * k as f64], 1.0)
                    .unwrap()
                    .indicator(&g)
            })
            .collect();
        let r4 = fs_vector_check(&fam[..4], 2.0, &p, &cfg).unwrap().ratio;
        let r8 = fs_vector_check(&fam, 2.0, &p, &cfg).unwrap().ratio;
        assert!(r4 > 1.0 && r8 > 1.0 && (r8 / r4 - 1.0).abs() < 0.5);
    }

    #[test]
    fn two_dimensional_cubes_brute_force() {
        let g = GridBox::square(0.0, 1.0, 8).unwrap();
        let f = GridFunction::from_fn(&g, |x| (7.0 * x[0]).sin() + x[1] * x[1]).unwrap();
        let m = hl_maximal(&f, &MaximalConfig::exhaustive(&g, Geometry::Cubes));
        let n = 8i64;
        let a: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
        for i in 0..n {
            for j in 0..n {
                let mut best: f64 = 0.0;
                for l in 1..=n {
                    for si in (i - l + 1)..=i {
                        for sj in (j - l + 1)..=j {
                            let mut s = 0.0;
                            for u in si..si + l {
                                for v in sj..sj + l {
                                    if (0..n).contains(&u) && (0..n).contains(&v) {
                                        s += a[(u * n + v) as usize];
                                    }
                                }
                            }
                            best = best.max(s / (l * l) as f64);
                        }
                    }
                }
                assert!((m.values()[(i * n + j) as usize] - best).abs() < 1e-13);
            }
        }
    }

    proptest! {
        #[test]
        fn one_dimensional_matches_brute_force(v in proptest::collection::vec(-3.0f64..3.0, 8..24)) {
            let g = GridBox::line(0.0, 1.0, v.len()).unwrap();
            let f = GridFunction::new(g.clone(), v.clone()).unwrap();
            let m = hl_maximal(&f, &MaximalConfig::exhaustive(&g, Geometry::Balls));
            for (a, b) in m.values().iter().zip(brute_1d(&v)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in m.values().iter().zip(&v) {
                prop_assert!(*a >= b.abs() - 1e-12);
            }
        }

        #[test]
        fn dilation_trick(k in 1u32..4, c in -2.0f64..2.0, r in 0.5f64..0.95) {
            let g = GridBox::line(-16.0, 16.0, 512).unwrap();
            let q = Cube::new(&[c], 0.5).unwrap();
            let m = hl_maximal(&q.indicator(&g), &MaximalConfig::default_for(&g));
            let big = q.dilate(2f64.powi(k as i32)).indicator(&g);
            let factor = 2f64.powf(k as f64 / r);
            for (b, mv) in big.values().iter().zip(m.values()) {
                prop_assert!(*b <= factor * mv.powf(1.0 / r) + 1e-12);
            }
        }
    }
}
