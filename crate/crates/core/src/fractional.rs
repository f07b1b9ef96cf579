//! The fractional integral `L^{-gamma}` and the Hardy-space ratio harness
//! around it.

use serde::Serialize;
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{Error, Result};
use crate::exponent::{sobolev_conjugate, ExponentFunction};
use crate::grid::{const_lp_norm, integrate, Cube, GridFunction, ScaleLadder, Spectrum};
use crate::hardy::hardy_norm;
use crate::lebesgue::norm;
use crate::semigroup::{heat_apply, Boundary, SemigroupSpec, SpecKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FractionalParams {
    pub gamma: f64,
    pub m: f64,
    pub n: usize,
}

impl FractionalParams {
    pub fn new(gamma: f64, m: f64, n: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma < n as f64 / m) {
            return Err(Error::Parameter(format!(
                "gamma = {gamma} must lie in (0, n/m = {})",
                n as f64 / m
            )));
        }
        Ok(Self { gamma, m, n })
    }
}

/// Share of `|int f|` in `||f||_1` above which the large-time tail of the
/// Gamma integral is considered divergent.
const MEAN_TOL: f64 = 1e-6;

/// Step in `ln t` of the Gamma quadrature.
const LOG_STEP: f64 = 0.05;

/// Size of the integrand, relative to its peak, where the ladder stops.
const TAIL_TOL: f64 = 1e-12;

/// Times `t_k`, the log step and the lower cut `t_0` for a frequency band
/// `[x2_min, x2_max]` of `|xi|^2`.
fn gamma_ladder(gamma: f64, x2_min: f64, x2_max: f64) -> (Vec<f64>, f64, f64) {
    let t0 = 1e-7 / x2_max;
    // t^gamma e^{-t x2_min} peaks at gamma / x2_min
    let peak = gamma / x2_min;
    let log_peak = gamma * peak.ln() - gamma;
    let mut t_max = peak.max(t0 * 2.0);
    while gamma * t_max.ln() - t_max * x2_min > log_peak + TAIL_TOL.ln() {
        t_max *= 1.25;
    }
    let (a, b) = (t0.ln(), t_max.ln());
    let steps = ((b - a) / LOG_STEP).ceil().max(1.0) as usize;
    let dlog = (b - a) / steps as f64;
    let times = (0..=steps).map(|k| (a + k as f64 * dlog).exp()).collect();
    (times, dlog, t0)
}

/// `(1/Gamma(gamma)) [t0^gamma/gamma + sum_k w_k t_k^gamma e^{-t_k x2}]`,
/// trapezoid weights in `ln t`.
fn gamma_symbol(x2: f64, gamma: f64, times: &[f64], dlog: f64, t0: f64, norm: f64) -> f64 {
    if x2 == 0.0 {
        return 0.0;
    }
    let last = times.len() - 1;
    let mut s = t0.powf(gamma) / gamma;
    for (k, &t) in times.iter().enumerate() {
        let w = if k == 0 || k == last { 0.5 } else { 1.0 };
        s += w * dlog * t.powf(gamma) * (-t * x2).exp();
    }
    s / norm
}

/// `L^{-gamma} f = (1/Gamma(gamma)) int_0^inf t^{gamma-1} e^{-tL} f dt`.
pub fn fractional_apply(
    f: &GridFunction,
    params: FractionalParams,
    spec: &SemigroupSpec,
) -> Result<GridFunction> {
    FractionalParams::new(params.gamma, params.m, params.n)?;
    let grid = f.grid();
    if params.n != grid.dim() || params.m != spec.m {
        return Err(Error::Parameter(
            "fractional parameters do not match the grid and spec".into(),
        ));
    }
    if f.is_zero() {
        return Ok(GridFunction::zeros(grid));
    }
    let l1 = const_lp_norm(f, 1.0);
    let mean = integrate(f).abs();
    if mean > MEAN_TOL * l1 {
        return Err(Error::Tail(format!(
            "|int f| = {mean:e} is {:e} of ||f||_1; the large-time tail diverges",
            mean / l1
        )));
    }
    let gamma = params.gamma;
    let norm = gamma_fn(gamma);
    let h = grid.h();
    let x2_max = grid.dim() as f64 * (std::f64::consts::PI / h).powi(2);
    match spec.kind {
        SpecKind::Gaussian => {
            let spectrum = match spec.boundary {
                Boundary::Periodic => Spectrum::periodic(f),
                Boundary::Zero => {
                    let extent = (0..grid.dim()).map(|a| grid.extent(a)).fold(0.0, f64::max);
                    Spectrum::zero_padded(f, 2.0 * extent)?
                }
            };
            let period = spectrum.transform_len() as f64 * h;
            let x2_min = (2.0 * std::f64::consts::PI / period).powi(2);
            let (times, dlog, t0) = gamma_ladder(gamma, x2_min, x2_max);
            Ok(spectrum.apply(|x2| gamma_symbol(x2, gamma, &times, dlog, t0, norm)))
        }
        SpecKind::Custom(_) => {
            let extent = (0..grid.dim()).map(|a| grid.extent(a)).fold(0.0, f64::max);
            let x2_min = (2.0 * std::f64::consts::PI / (3.0 * extent)).powi(2);
            let (times, dlog, t0) = gamma_ladder(gamma, x2_min, x2_max);
            let mut out = f.scaled(t0.powf(gamma) / gamma);
            let last = times.len() - 1;
            for (k, &t) in times.iter().enumerate() {
                let w = if k == 0 || k == last { 0.5 } else { 1.0 };
                out = out.axpy(w * dlog * t.powf(gamma), &heat_apply(f, t, spec)?);
            }
            Ok(out.scaled(1.0 / norm))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FractionalReport {
    /// `hardy_norm(L^{-gamma} f, q) / hardy_norm(f, p)`; `None` for zero members.
    pub ratios: Vec<Option<f64>>,
    pub max_ratio: f64,
    pub median_ratio: f64,
    /// Least-squares slope of the ratio against the member index, times the
    /// index span, over the median.
    pub growth_trend: f64,
    pub q_exponent: String,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn relative_trend(points: &[(f64, f64)], scale: f64) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 || scale == 0.0 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let span = points.last().unwrap().0 - points[0].0;
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx * span / scale
    }
}

/// Ratios `||L^{-gamma} f||_{H_L^{q(.)}} / ||f||_{H_L^{p(.)}}` over a family,
/// with `1/q = 1/p - m gamma / n`.
pub fn fractional_hardy_check(
    family: &[GridFunction],
    p: &ExponentFunction,
    params: FractionalParams,
    spec: &SemigroupSpec,
    ladder: &ScaleLadder,
) -> Result<FractionalReport> {
    if p.p_plus() > 1.0 {
        return Err(Error::Hypothesis(format!(
            "p_plus = {} must not exceed 1",
            p.p_plus()
        )));
    }
    let n = params.n as f64;
    if !spec.is_gaussian() {
        let bound = n / (n + spec.epsilon);
        if p.p_minus() <= bound {
            return Err(Error::Hypothesis(format!(
                "p_minus = {} must exceed n/(n + theta) = {bound}",
                p.p_minus()
            )));
        }
    }
    let q = sobolev_conjugate(p, params.gamma, params.m, params.n)?;
    let mut ratios = Vec::with_capacity(family.len());
    for f in family {
        if f.is_zero() {
            ratios.push(None);
            continue;
        }
        let num = hardy_norm(&fractional_apply(f, params, spec)?, &q, spec, ladder)?;
        let den = hardy_norm(f, p, spec, ladder)?;
        ratios.push(Some(num / den));
    }
    let points: Vec<(f64, f64)> = ratios
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i as f64, r)))
        .collect();
    let mut vals: Vec<f64> = points.iter().map(|p| p.1).collect();
    let max_ratio = vals.iter().copied().fold(0.0, f64::max);
    let median_ratio = median(&mut vals);
    Ok(FractionalReport {
        growth_trend: relative_trend(&points, median_ratio),
        ratios,
        max_ratio,
        median_ratio,
        q_exponent: q.name().to_string(),
    })
}

/// `||sum |lambda_j| |R_j|^{delta/n} chi_{R_j}||_{q(.)} /
/// ||sum |lambda_j| chi_{R_j}||_{p(.)}` with `1/q = 1/p - delta/n`.
pub fn cube_sum_ratio(
    lambdas: &[f64],
    cubes: &[Cube],
    p: &ExponentFunction,
    delta: f64,
) -> Result<f64> {
    let grid = p.domain();
    let n = grid.dim();
    if !(delta > 0.0 && delta < n as f64) {
        return Err(Error::Parameter(format!(
            "delta = {delta} must lie in (0, {n})"
        )));
    }
    if lambdas.len() != cubes.len() || cubes.is_empty() {
        return Err(Error::InvalidInput("need one coefficient per cube".into()));
    }
    let q = sobolev_conjugate(p, delta, 1.0, n)?;
    let mut top = vec![0.0; grid.node_count()];
    let mut bottom = vec![0.0; grid.node_count()];
    for (l, c) in lambdas.iter().zip(cubes) {
        let w = c.measure(n).powf(delta / n as f64);
        for i in c.node_range(grid).indices(grid) {
            top[i] += l.abs() * w;
            bottom[i] += l.abs();
        }
    }
    let top = GridFunction::new(grid.clone(), top)?;
    let bottom = GridFunction::new(grid.clone(), bottom)?;
    let den = norm(&bottom, p)?;
    if den == 0.0 {
        return Err(Error::InvalidInput("cubes hold no grid point".into()));
    }
    Ok(norm(&top, &q)? / den)
}
