//! Variable-exponent Lebesgue space: modular, Luxemburg quasi-norm, the
//! cube-normalized coefficient functional and nested-cube norm ratios.

use std::collections::HashMap;
use std::sync::RwLock;

use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exponent::ExponentFunction;
use crate::grid::{Cube, GridBox, GridFunction};

/// Default tolerance on `|modular(f / norm) - 1|`.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Relative bracket width at which bisection stops.
const BRACKET_REL_WIDTH: f64 = 1e-13;
const MAX_ITERATIONS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormResult {
    pub value: f64,
    pub modular_at_value: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// `int |f(x)|^p(x) dx`.
pub fn modular(f: &GridFunction, p: &ExponentFunction) -> f64 {
    let vol = f.grid().cell_volume();
    if let Some(c) = p.as_constant() {
        return f.values().iter().map(|v| v.abs().powf(c)).sum::<f64>() * vol;
    }
    let pv = p.node_values(f.grid());
    f.values()
        .iter()
        .zip(pv.iter())
        .map(|(v, e)| v.abs().powf(*e))
        .sum::<f64>()
        * vol
}

/// `lambda -> sum_i exp(p_i (ln|f_i| - ln lambda)) h^n` over the nonzero samples.
struct ScaledModular {
    log_abs: Vec<f64>,
    exps: Vec<f64>,
    vol: f64,
}

impl ScaledModular {
    fn eval(&self, log_lambda: f64) -> f64 {
        self.log_abs
            .iter()
            .zip(&self.exps)
            .map(|(l, p)| (p * (l - log_lambda)).exp())
            .sum::<f64>()
            * self.vol
    }

    fn solve(&self, p_minus: f64, p_plus: f64, tol: f64) -> NormResult {
        let m0 = self.eval(0.0);
        let a = m0.ln() / p_plus;
        let b = m0.ln() / p_minus;
        let (mut lo, mut hi) = (a.min(b), a.max(b));
        // rho is decreasing in lambda; make sure rho(lo) >= 1 >= rho(hi).
        let mut widen = 1e-12_f64.max(1e-12 * lo.abs());
        while self.eval(lo) < 1.0 {
            lo -= widen;
            widen *= 2.0;
        }
        widen = 1e-12_f64.max(1e-12 * hi.abs());
        while self.eval(hi) > 1.0 {
            hi += widen;
            widen *= 2.0;
        }
        let bracket = (lo.exp(), hi.exp());
        let mut iterations = 0;
        while hi - lo > BRACKET_REL_WIDTH && iterations < MAX_ITERATIONS {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        let mut best = 0.5 * (lo + hi);
        let mut rho = self.eval(best);
        // Exponents near zero make rho flat; fall back to the bracket end
        // that is closer to unit modular.
        for cand in [lo, hi] {
            let r = self.eval(cand);
            if (r - 1.0).abs() < (rho - 1.0).abs() {
                best = cand;
                rho = r;
            }
        }
        debug_assert!((rho - 1.0).abs() <= tol.max(1e-6), "rho = {rho}");
        NormResult {
            value: best.exp(),
            modular_at_value: rho,
            iterations,
            bracket,
        }
    }
}

/// `inf { lambda > 0 : modular(f / lambda) <= 1 }` by bisection in `log lambda`.
pub fn luxemburg_norm(f: &GridFunction, p: &ExponentFunction, tol: f64) -> Result<NormResult> {
    if !(tol > 0.0 && tol <= 1e-4) {
        return Err(Error::Parameter(format!(
            "tolerance {tol} outside (0, 1e-4]"
        )));
    }
    if let Some(i) = f.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value at node {i}")));
    }
    if f.is_zero() {
        return Ok(NormResult {
            value: 0.0,
            modular_at_value: 0.0,
            iterations: 0,
            bracket: (0.0, 0.0),
        });
    }
    let pv = p.node_values(f.grid());
    let mut log_abs = Vec::new();
    let mut exps = Vec::new();
    for (v, e) in f.values().iter().zip(pv.iter()) {
        if *v != 0.0 {
            log_abs.push(v.abs().ln());
            exps.push(*e);
        }
    }
    let (pm, pp) = exps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| {
            (a.min(e), b.max(e))
        });
    let sm = ScaledModular {
        log_abs,
        exps,
        vol: f.grid().cell_volume(),
    };
    Ok(sm.solve(pm, pp, tol))
}

/// Luxemburg norm at the default tolerance.
pub fn norm(f: &GridFunction, p: &ExponentFunction) -> Result<f64> {
    Ok(luxemburg_norm(f, p, DEFAULT_TOL)?.value)
}

/// `||chi_Q||_{p(.)}` on a grid, cached by the cube's node range.
///
/// Reads take a shared lock and insertions an exclusive one, so a single
/// cache can be shared by worker threads.
pub struct CubeNorms<'a> {
    p: &'a ExponentFunction,
    grid: GridBox,
    cache: RwLock<HashMap<([usize; 2], [usize; 2]), f64>>,
}

impl<'a> CubeNorms<'a> {
    pub fn new(p: &'a ExponentFunction, grid: &GridBox) -> Self {
        Self {
            p,
            grid: grid.clone(),
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn exponent(&self) -> &ExponentFunction {
        self.p
    }

    pub fn grid(&self) -> &GridBox {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("cube cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, cube: &Cube) -> Result<f64> {
        let range = cube.node_range(&self.grid);
        let dim = self.grid.dim();
        if range.is_empty(dim) {
            return Err(Error::InvalidInput(format!(
                "cube {cube:?} contains no grid node"
            )));
        }
        let key = (range.lo, range.hi);
        if let Some(v) = self.cache.read().expect("cube cache poisoned").get(&key) {
            return Ok(*v);
        }
        let vol = self.grid.cell_volume();
        let value = match self.p.as_constant() {
            Some(c) => (range.count(dim) as f64 * vol).powf(1.0 / c),
            None => {
                let pv = self.p.node_values(&self.grid);
                let exps: Vec<f64> = range.indices(&self.grid).iter().map(|&i| pv[i]).collect();
                let (pm, pp) = exps
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| {
                        (a.min(e), b.max(e))
                    });
                let sm = ScaledModular {
                    log_abs: vec![0.0; exps.len()],
                    exps,
                    vol,
                };
                sm.solve(pm, pp, DEFAULT_TOL).value
            }
        };
        self.cache
            .write()
            .expect("cube cache poisoned")
            .insert(key, value);
        Ok(value)
    }
}

/// `|| ( sum_j [|lambda_j| chi_{Q_j} / ||chi_{Q_j}||]^{p_} )^{1/p_} ||_{p(.)}`
/// with `p_ = min(1, p_minus)`.
pub fn a_functional(
    lambdas: &[Complex64],
    cubes: &[Cube],
    p: &ExponentFunction,
    grid: &GridBox,
) -> Result<f64> {
    a_functional_with(&CubeNorms::new(p, grid), lambdas, cubes)
}

pub fn a_functional_with(
    norms: &CubeNorms<'_>,
    lambdas: &[Complex64],
    cubes: &[Cube],
) -> Result<f64> {
    if lambdas.len() != cubes.len() {
        return Err(Error::InvalidInput(format!(
            "{} coefficients for {} cubes",
            lambdas.len(),
            cubes.len()
        )));
    }
    if lambdas.is_empty() {
        return Ok(0.0);
    }
    let grid = norms.grid();
    let pu = norms.exponent().underline_p();
    let mut acc = vec![0.0; grid.node_count()];
    for (l, q) in lambdas.iter().zip(cubes) {
        let a = l.norm();
        if a == 0.0 {
            continue;
        }
        let c = (a / norms.get(q)?).powf(pu);
        for idx in q.node_range(grid).indices(grid) {
            acc[idx] += c;
        }
    }
    let g = GridFunction::new(
        grid.clone(),
        acc.into_iter().map(|v| v.powf(1.0 / pu)).collect(),
    )?;
    norm(&g, norms.exponent())
}

#[derive(Clone, Debug, Serialize)]
pub struct CubePairRatio {
    pub inner: Cube,
    pub outer: Cube,
    pub ratio: f64,
    pub measure_ratio: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CubeRatioReport {
    pub pairs: Vec<CubePairRatio>,
    /// Smallest `C` with `C^-1 (|Q1|/|Q2|)^{1/p_minus} <= r <= C (|Q1|/|Q2|)^{1/p_plus}`
    /// on every pair.
    pub constant: f64,
}

/// Certifies the two-sided norm-ratio bound for nested cube pairs `(Q1, Q2)`.
pub fn cube_ratio_check(
    p: &ExponentFunction,
    grid: &GridBox,
    pairs: &[(Cube, Cube)],
) -> Result<CubeRatioReport> {
    let norms = CubeNorms::new(p, grid);
    let dim = grid.dim();
    let mut out = Vec::with_capacity(pairs.len());
    let mut constant: f64 = 0.0;
    for (q1, q2) in pairs {
        if !q1.is_inside(q2, dim) {
            return Err(Error::InvalidInput(format!("{q1:?} is not inside {q2:?}")));
        }
        let ratio = norms.get(q1)? / norms.get(q2)?;
        let measure_ratio = q1.discrete_measure(grid) / q2.discrete_measure(grid);
        let lower_bound = measure_ratio.powf(1.0 / p.p_minus());
        let upper_bound = measure_ratio.powf(1.0 / p.p_plus());
        constant = constant.max(ratio / upper_bound).max(lower_bound / ratio);
        out.push(CubePairRatio {
            inner: *q1,
            outer: *q2,
            ratio,
            measure_ratio,
            lower_bound,
            upper_bound,
        });
    }
    Ok(CubeRatioReport {
        pairs: out,
        constant,
    })
}

/// Pairs `(Q, 2^k Q)` for `k = 1..=levels` around a base cube.
pub fn dyadic_tower(base: &Cube, levels: usize) -> Vec<(Cube, Cube)> {
    (1..=levels)
        .map(|k| (*base, base.dilate(2f64.powi(k as i32))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::const_lp_norm;
    use approx::assert_relative_eq;

    fn line() -> GridBox {
        GridBox::line(-4.0, 4.0, 512).unwrap()
    }

    fn unit_indicator(g: &GridBox, c: f64) -> GridFunction {
        GridFunction::from_fn(g, |x| if (0.0..1.0).contains(&x[0]) { c } else { 0.0 }).unwrap()
    }

    #[test]
    fn modular_examples() {
        let g = line();
        let p = ExponentFunction::preset("paper-example-1", &g).unwrap();
        assert_relative_eq!(modular(&unit_indicator(&g, 1.0), &p), 1.0, epsilon = 1e-12);
        assert_eq!(modular(&GridFunction::zeros(&g), &p), 0.0);
        let two = ExponentFunction::constant(2.0, &g).unwrap();
        assert_relative_eq!(
            modular(&unit_indicator(&g, 2.0), &two),
            4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn norm_examples() {
        let g = line();
        let two = ExponentFunction::constant(2.0, &g).unwrap();
        let r = luxemburg_norm(&unit_indicator(&g, 1.0), &two, 1e-8).unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-10);
        assert!((r.modular_at_value - 1.0).abs() < 1e-8);
        for p0 in [0.5, 1.0, 1.5, 3.0] {
            let p = ExponentFunction::constant(p0, &g).unwrap();
            let f = unit_indicator(&g, 2.7);
            let v = luxemburg_norm(&f, &p, 1e-8).unwrap().value;
            assert_relative_eq!(v, 2.7, max_relative = 1e-9);
            assert_relative_eq!(v, const_lp_norm(&f, p0), max_relative = 1e-9);
        }
        let zero = luxemburg_norm(&GridFunction::zeros(&g), &two, 1e-8).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(luxemburg_norm(&GridFunction::zeros(&g), &two, 1e-3).is_err());
    }

    #[test]
    fn golden_ratio_two_piece() {
        let g = GridBox::line(-1.0, 3.0, 256).unwrap();
        let p =
            ExponentFunction::from_fn("step", &g, |x| if x[0] <= 1.0 { 1.0 } else { 2.0 }).unwrap();
        let f = GridFunction::from_fn(&g, |x| if (0.0..2.0).contains(&x[0]) { 1.0 } else { 0.0 })
            .unwrap();
        let v = luxemburg_norm(&f, &p, 1e-8).unwrap().value;
        assert!((v - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-10, "{v}");
    }

    #[test]
    fn a_functional_examples() {
        let g = line();
        let q0 = Cube::new(&[0.5], 1.0).unwrap();
        let q1 = Cube::new(&[-2.0], 0.5).unwrap();
        for name in ["paper-example-1", "const:0.7", "const:1"] {
            let p = ExponentFunction::preset(name, &g).unwrap();
            let one = a_functional(&[Complex64::new(0.0, 1.0)], &[q0], &p, &g).unwrap();
            assert!((one - 1.0).abs() < 1e-8, "{name}: {one}");
        }
        let p1 = ExponentFunction::constant(1.0, &g).unwrap();
        let two = a_functional(&[Complex64::new(1.0, 0.0); 2], &[q0, q1], &p1, &g).unwrap();
        assert!((two - 2.0).abs() < 1e-8);
        assert_eq!(a_functional(&[], &[], &p1, &g).unwrap(), 0.0);
        assert!(a_functional(&[Complex64::new(1.0, 0.0)], &[], &p1, &g).is_err());
    }

    #[test]
    fn cube_norm_cache_reuses_geometry() {
        let g = line();
        let p = ExponentFunction::preset("paper-example-1", &g).unwrap();
        let norms = CubeNorms::new(&p, &g);
        let q = Cube::new(&[0.5], 1.0).unwrap();
        let a = norms.get(&q).unwrap();
        let b = norms.get(&Cube::new(&[0.5 + 1e-12], 1.0).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(norms.len(), 1);
        let direct = norm(&q.indicator(&g), &p).unwrap();
        assert_relative_eq!(a, direct, max_relative = 1e-12);
    }

    #[test]
    fn cube_ratio_examples() {
        let g = GridBox::line(-32.0, 32.0, 4096).unwrap();
        let base = Cube::new(&[0.25], 0.5).unwrap();
        let c = ExponentFunction::constant(1.5, &g).unwrap();
        let r = cube_ratio_check(&c, &g, &dyadic_tower(&base, 5)).unwrap();
        assert!((r.constant - 1.0).abs() < 1e-12);
        let same = cube_ratio_check(&c, &g, &[(base, base)]).unwrap();
        assert_eq!(same.pairs[0].ratio, 1.0);

        let p = ExponentFunction::preset("paper-example-1", &g).unwrap();
        let r = cube_ratio_check(&p, &g, &dyadic_tower(&base, 5)).unwrap();
        assert!(r.constant.is_finite() && r.constant >= 1.0);
        for w in r.pairs.windows(2) {
            assert!(w[1].ratio < w[0].ratio);
        }
        assert!(cube_ratio_check(&p, &g, &[(base.dilate(2.0), base)]).is_err());
    }
}
