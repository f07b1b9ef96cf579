//! Variable exponents: construction, bounds over the working box,
//! sampled log-Hölder verification and the Sobolev conjugate.

use std::fmt;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::GridBox;

type Sampler = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Slope constant of the second example exponent.
pub fn example_two_slope() -> f64 {
    7.0 / (10.0 * (0.3f64.sqrt() - 1.0))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A variable exponent `p(.)` with bounds cached over a working box.
#[derive(Clone)]
pub struct ExponentFunction {
    name: String,
    sampler: Sampler,
    domain: GridBox,
    p_minus: f64,
    p_plus: f64,
    p_infinity: f64,
    p_infinity_spread: f64,
    constant: Option<f64>,
    cache: Arc<RwLock<Vec<(GridBox, Arc<Vec<f64>>)>>>,
}

impl fmt::Debug for ExponentFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExponentFunction")
            .field("name", &self.name)
            .field("p_minus", &self.p_minus)
            .field("p_plus", &self.p_plus)
            .field("p_infinity", &self.p_infinity)
            .finish()
    }
}

/// Points used to bound `p` over a box: a dense uniform sample plus the
/// box corners.
fn bound_samples(domain: &GridBox) -> Vec<[f64; 2]> {
    let dim = domain.dim();
    let per_axis = if dim == 1 { 1 << 14 } else { 512 };
    let mut pts = Vec::new();
    let coord =
        |a: usize, i: usize| domain.lower(a) + domain.extent(a) * i as f64 / (per_axis - 1) as f64;
    match dim {
        1 => pts.extend((0..per_axis).map(|i| [coord(0, i), 0.0])),
        _ => {
            for i in 0..per_axis {
                for j in 0..per_axis {
                    pts.push([coord(0, i), coord(1, j)]);
                }
            }
        }
    }
    for idx in 0..domain.node_count() {
        pts.push(domain.coord(idx));
    }
    let mut centre = [0.0; 2];
    for (a, c) in centre.iter_mut().enumerate().take(dim) {
        *c = 0.5 * (domain.lower(a) + domain.upper(a));
    }
    pts.push(centre);
    if (0..dim).all(|a| domain.lower(a) <= 0.0 && domain.upper(a) >= 0.0) {
        pts.push([0.0, 0.0]);
    }
    pts
}

/// Far-field probes: radii `2^j * R` for `j = 0..12` in a few directions.
fn far_probes(domain: &GridBox) -> Vec<[f64; 2]> {
    let dim = domain.dim();
    let r0 = domain.diameter().max(1.0);
    let dirs: Vec<[f64; 2]> = if dim == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..8)
            .map(|k| {
                let a = k as f64 * std::f64::consts::FRAC_PI_4 + 0.1;
                [a.cos(), a.sin()]
            })
            .collect()
    };
    let mut pts = Vec::new();
    for j in 0..12 {
        let r = r0 * 2f64.powi(j);
        for d in &dirs {
            pts.push([r * d[0], r * d[1]]);
        }
    }
    pts
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ExponentFunction {
    /// Wraps a sampler. `p` must be finite and positive on the box.
    pub fn from_fn(
        name: impl Into<String>,
        domain: &GridBox,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::build(name.into(), domain, Arc::new(f), None)
    }

    fn build(
        name: String,
        domain: &GridBox,
        sampler: Sampler,
        constant: Option<f64>,
    ) -> Result<Self> {
        let dim = domain.dim();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let samples = match constant {
            Some(_) => vec![domain.coord(0)],
            None => bound_samples(domain),
        };
        for x in &samples {
            let v = sampler(&x[..dim]);
            if !v.is_finite() {
                return Err(Error::InvalidExponent(format!(
                    "{name}: non-finite value {v} at {:?}",
                    &x[..dim]
                )));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo <= 0.0 {
            return Err(Error::InvalidExponent(format!(
                "{name}: p_minus = {lo} is not positive"
            )));
        }
        let mut far: Vec<f64> = far_probes(domain)
            .iter()
            .map(|x| sampler(&x[..dim]))
            .filter(|v| v.is_finite())
            .collect();
        let (p_inf, spread) = if far.is_empty() {
            (f64::NAN, f64::INFINITY)
        } else {
            let spread = far.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - far.iter().cloned().fold(f64::INFINITY, f64::min);
            (median(&mut far), spread)
        };
        Ok(Self {
            name,
            sampler,
            domain: domain.clone(),
            p_minus: lo,
            p_plus: hi,
            p_infinity: p_inf,
            p_infinity_spread: spread,
            constant,
            cache: Arc::new(RwLock::new(Vec::new())),
        })
    }

    pub fn constant(v: f64, domain: &GridBox) -> Result<Self> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidExponent(format!("constant exponent {v}")));
        }
        Self::build(format!("const:{v}"), domain, Arc::new(move |_| v), Some(v))
    }

    /// Parses a preset name or an expression in `x`, `y`, `r`.
    ///
    /// Presets: `const:<v>`, `paper-example-1`, `paper-example-2`,
    /// `bump:<base>:<peak>` (equal to `peak` at the origin, relaxing to
    /// `base` as `exp(-|x|^2)`).
    pub fn preset(spec: &str, domain: &GridBox) -> Result<Self> {
        let spec = spec.trim();
        if let Some(v) = spec.strip_prefix("const:") {
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidExponent(format!("bad constant in {spec}")))?;
            return Self::constant(v, domain);
        }
        if let Some(rest) = spec.strip_prefix("bump:") {
            let parts: Vec<f64> = rest
                .split(':')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidExponent(format!("bad bump parameters in {spec}")))?;
            if parts.len() != 2 {
                return Err(Error::InvalidExponent(format!(
                    "{spec}: expected bump:<base>:<peak>"
                )));
            }
            let (base, peak) = (parts[0], parts[1]);
            return Self::build(
                spec.to_string(),
                domain,
                Arc::new(move |x| {
                    let r2: f64 = x.iter().map(|v| v * v).sum();
                    base + (peak - base) * (-r2).exp()
                }),
                None,
            );
        }
        match spec {
            "paper-example-1" => Self::build(
                spec.to_string(),
                domain,
                Arc::new(|x| {
                    let r = norm(x);
                    let inner = (1.5 - r * r).clamp(0.5, 1.2);
                    (1.0 - (3.0 - r).exp()).max(inner)
                }),
                None,
            ),
            "paper-example-2" => {
                let k = example_two_slope();
                Self::build(
                    spec.to_string(),
                    domain,
                    Arc::new(move |x| {
                        let r = norm(x);
                        let inner = (k * r + 0.5 - k).clamp(0.5, 1.2);
                        (1.0 - (3.0 - r).exp()).max(inner)
                    }),
                    None,
                )
            }
            _ => {
                let expr = Expr::parse(spec)?;
                Self::build(
                    spec.to_string(),
                    domain,
                    Arc::new(move |x| expr.eval(x, 0.0).unwrap_or(f64::NAN)),
                    None,
                )
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &GridBox {
        &self.domain
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.sampler)(x)
    }

    pub fn p_minus(&self) -> f64 {
        self.p_minus
    }

    pub fn p_plus(&self) -> f64 {
        self.p_plus
    }

    /// Median of the far-field probes.
    pub fn p_infinity(&self) -> f64 {
        self.p_infinity
    }

    /// Spread (max - min) of the far-field probes.
    pub fn p_infinity_spread(&self) -> f64 {
        self.p_infinity_spread
    }

    /// `min(1, p_minus)`.
    pub fn underline_p(&self) -> f64 {
        self.p_minus.min(1.0)
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }

    /// `p` at every node of `grid`, cached per grid.
    pub fn node_values(&self, grid: &GridBox) -> Arc<Vec<f64>> {
        if let Some(v) = self
            .cache
            .read()
            .expect("exponent cache poisoned")
            .iter()
            .find(|(g, _)| g == grid)
        {
            return v.1.clone();
        }
        let dim = grid.dim();
        let values: Vec<f64> = (0..grid.node_count())
            .map(|i| self.eval(&grid.coord(i)[..dim]))
            .collect();
        let values = Arc::new(values);
        let mut cache = self.cache.write().expect("exponent cache poisoned");
        if cache.len() >= 8 {
            cache.remove(0);
        }
        cache.push((grid.clone(), values.clone()));
        values
    }
}

/// Outcome of the sampled log-Hölder test.
#[derive(Clone, Debug, Serialize)]
pub struct LogHolderReport {
    pub c_local: f64,
    pub c_infinity: f64,
    pub p_infinity_estimate: f64,
    pub p_infinity_spread: f64,
    pub passed: bool,
    pub worst_pair: (Vec<f64>, Vec<f64>),
    /// Maximum of the local quotient per dyadic distance shell, coarse to fine.
    pub local_shells: Vec<f64>,
    /// Maximum of the decay quotient per dyadic radius shell, near to far.
    pub far_shells: Vec<f64>,
    pub local_growth: f64,
    pub far_growth: f64,
}

/// Shell maxima must not grow by more than this factor from the first third
/// of the shells to the last third.
pub const LOG_HOLDER_GROWTH_LIMIT: f64 = 1.5;

const LOCAL_SHELLS: usize = 30;
const FAR_SHELLS: usize = 30;

fn growth(shells: &[f64]) -> f64 {
    let k = (shells.len() / 3).max(1);
    let first = shells[..k].iter().cloned().fold(0.0, f64::max);
    let last = shells[shells.len() - k..]
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    if last <= 1e-14 {
        0.0
    } else if first <= 1e-14 {
        f64::INFINITY
    } else {
        last / first
    }
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> [f64; 2] {
    if dim == 1 {
        [if rng.gen::<bool>() { 1.0 } else { -1.0 }, 0.0]
    } else {
        let a = rng.gen::<f64>() * std::f64::consts::TAU;
        [a.cos(), a.sin()]
    }
}

/// Samples `budget` pairs split evenly between dyadic distance shells
/// `|x - y| ~ 2^-j` inside the box (local condition) and dyadic radius
/// shells `|x| ~ 2^j` reaching far outside it (decay condition).
///
/// The test passes when neither sequence of shell maxima grows from its
/// first third to its last third by more than [`LOG_HOLDER_GROWTH_LIMIT`].
pub fn verify_log_holder(
    p: &ExponentFunction,
    domain: &GridBox,
    budget: usize,
) -> Result<LogHolderReport> {
    if budget < 1000 {
        return Err(Error::Parameter(format!(
            "log-Holder budget {budget} < 1000"
        )));
    }
    if p.p_minus() <= 0.0 {
        return Err(Error::InvalidExponent(format!("p_minus = {}", p.p_minus())));
    }
    let dim = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x10c_401d);
    let per_local = (budget / 2).div_ceil(LOCAL_SHELLS);
    let per_far = (budget / 2).div_ceil(FAR_SHELLS);
    let scale = domain.diameter();

    let mut local_shells = vec![0.0f64; LOCAL_SHELLS];
    let mut worst = (0.0, (vec![0.0; dim], vec![0.0; dim]));
    for (j, shell) in local_shells.iter_mut().enumerate() {
        // Half of each shell refines around the worst pair found so far, so
        // that isolated jumps keep being straddled as distances shrink.
        let anchor = worst.1.clone();
        for s in 0..per_local {
            let mut x = [0.0; 2];
            if j > 0 && s % 2 == 1 {
                let u: f64 = rng.gen();
                for a in 0..dim {
                    x[a] = anchor.0[a] + u * (anchor.1[a] - anchor.0[a]);
                }
            } else {
                for (a, xa) in x.iter_mut().enumerate().take(dim) {
                    *xa = domain.lower(a) + rng.gen::<f64>() * domain.extent(a);
                }
            }
            let d = scale * 2f64.powf(-(j as f64) - rng.gen::<f64>());
            let u = random_direction(&mut rng, dim);
            let y = [x[0] + d * u[0], x[1] + d * u[1]];
            let q = (p.eval(&x[..dim]) - p.eval(&y[..dim])).abs()
                * (std::f64::consts::E + 1.0 / d).ln();
            if q > *shell {
                *shell = q;
            }
            if q > worst.0 {
                worst = (q, (x[..dim].to_vec(), y[..dim].to_vec()));
            }
        }
    }

    let p_inf = p.p_infinity();
    let mut far_shells = vec![0.0f64; FAR_SHELLS];
    for (j, shell) in far_shells.iter_mut().enumerate() {
        for _ in 0..per_far {
            let r = 2f64.powf(j as f64 + rng.gen::<f64>());
            let u = random_direction(&mut rng, dim);
            let x = [r * u[0], r * u[1]];
            let q = (p.eval(&x[..dim]) - p_inf).abs() * (std::f64::consts::E + r).ln();
            if q.is_finite() && q > *shell {
                *shell = q;
            }
        }
    }
    let c_local = local_shells.iter().cloned().fold(0.0, f64::max);
    let c_infinity = far_shells.iter().cloned().fold(0.0, f64::max);
    let local_growth = growth(&local_shells);
    let far_growth = growth(&far_shells);
    let passed = p_inf.is_finite()
        && c_local.is_finite()
        && c_infinity.is_finite()
        && local_growth <= LOG_HOLDER_GROWTH_LIMIT
        && far_growth <= LOG_HOLDER_GROWTH_LIMIT;
    Ok(LogHolderReport {
        c_local,
        c_infinity,
        p_infinity_estimate: p_inf,
        p_infinity_spread: p.p_infinity_spread(),
        passed,
        worst_pair: worst.1,
        local_shells,
        far_shells,
        local_growth,
        far_growth,
    })
}

/// `1/q = 1/p - m gamma / n`.
pub fn sobolev_conjugate(
    p: &ExponentFunction,
    gamma: f64,
    m: f64,
    n: usize,
) -> Result<ExponentFunction> {
    let n_f = n as f64;
    if !(gamma > 0.0 && gamma < n_f / m) {
        return Err(Error::Parameter(format!(
            "gamma = {gamma} must lie in (0, n/m = {})",
            n_f / m
        )));
    }
    let ratio = m * gamma / n_f;
    let limit = 1.0 / p.p_plus();
    if ratio >= limit {
        return Err(Error::ExponentOverflow { ratio, limit });
    }
    let conj = move |v: f64| 1.0 / (1.0 / v - ratio);
    let inner = p.sampler.clone();
    let sampler: Sampler = Arc::new(move |x| conj(inner(x)));
    let mut far: Vec<f64> = far_probes(&p.domain)
        .iter()
        .map(|x| sampler(&x[..p.domain.dim()]))
        .filter(|v| v.is_finite())
        .collect();
    let spread = far.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - far.iter().cloned().fold(f64::INFINITY, f64::min);
    let p_inf = if far.is_empty() {
        f64::NAN
    } else {
        median(&mut far)
    };
    Ok(ExponentFunction {
        name: format!("sobolev({}; gamma={gamma}, m={m}, n={n})", p.name),
        sampler,
        domain: p.domain.clone(),
        p_minus: conj(p.p_minus),
        p_plus: conj(p.p_plus),
        p_infinity: p_inf,
        p_infinity_spread: spread,
        constant: p.constant.map(conj),
        cache: Arc::new(RwLock::new(Vec::new())),
    })
}
