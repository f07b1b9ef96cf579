//! The generator `L`, its semigroup `e^{-tL}` and the derived operators
//! `P_{s,t} = I - (I - e^{-tL})^{s+1}` and `Q_{s,t} = (tL)^{s+1} e^{-tL}`.
//!
//! The Gaussian case `L = -Laplacian` is applied through exact Fourier
//! symbols on a zero-padded torus whose padding follows the kernel tail.
//! Custom kernels `p_t(r) = t^{-n/m} g(r / t^{1/m}) / Z` are applied by direct
//! convolution; their `Q_{s,t}` uses central differences in `t`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::exponent::ExponentFunction;
use crate::expr::Expr;
use rayon::prelude::*;

use crate::grid::{apply_kernel, GridBox, GridFunction, SpectralSum, Spectrum};

/// Kernel mass allowed to wrap around the padded torus.
const WRAP_TOL: f64 = 1e-16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Functions vanish outside the box.
    #[default]
    Zero,
    /// The box is a torus.
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    pub tau: f64,
    pub delta: f64,
    pub gamma: f64,
}

/// Radial decay profile of a custom kernel family, normalized to unit mass.
#[derive(Clone, Debug)]
pub struct CustomProfile {
    expr: Expr,
    mass: [Option<f64>; 2],
}

/// `int_{R^n} g(|x|) dx` for `n = 1, 2` by the trapezoid rule in `log r`;
/// `None` where the integral diverges.
fn radial_mass(g: &dyn Fn(f64) -> f64) -> Result<[Option<f64>; 2]> {
    let (u0, u1, steps) = (-40.0f64, 80.0f64, 24_000usize);
    let du = (u1 - u0) / steps as f64;
    let mut m = [0.0, 0.0];
    let mut tail = [0.0, 0.0];
    for i in 0..=steps {
        let r = (u0 + i as f64 * du).exp();
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        let v = g(r);
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Parameter(format!(
                "profile g({r}) = {v} is not a finite non-negative value"
            )));
        }
        m[0] += w * v * r;
        m[1] += w * v * r * r;
        if i == steps {
            tail = [v * r, v * r * r];
        }
    }
    // the integrand must have died out at the far end
    let mass = [2.0 * m[0] * du, 2.0 * std::f64::consts::PI * m[1] * du];
    let ok = |k: usize| (tail[k] <= 1e-8 * m[k] && mass[k] > 0.0).then_some(mass[k]);
    if ok(0).is_none() {
        return Err(Error::Parameter("profile g is not integrable".into()));
    }
    Ok([ok(0), ok(1)])
}

impl CustomProfile {
    pub fn parse(source: &str) -> Result<Self> {
        let expr = Expr::parse(source)?;
        let g = |r: f64| expr.eval(&[r, 0.0], 0.0).unwrap_or(f64::NAN);
        let mass = radial_mass(&g)?;
        Ok(Self { expr, mass })
    }

    pub fn source(&self) -> &str {
        self.expr.source()
    }

    /// `int g(|x|) dx` over `R^dim`.
    pub fn mass(&self, dim: usize) -> Result<f64> {
        self.mass[dim - 1].ok_or_else(|| {
            Error::Parameter(format!("profile g is not integrable in dimension {dim}"))
        })
    }

    pub fn g(&self, r: f64) -> f64 {
        // r is passed as x so that expressions may use either name
        let v = self.expr.eval(&[r, 0.0], 0.0).unwrap_or(f64::NAN);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub enum SpecKind {
    Gaussian,
    Custom(CustomProfile),
}

/// Operator descriptor.
#[derive(Clone, Debug)]
pub struct SemigroupSpec {
    pub kind: SpecKind,
    /// Homogeneity order.
    pub m: f64,
    /// Decay exponent `epsilon` of the profile bound.
    pub epsilon: f64,
    pub regularity: Option<Regularity>,
    pub boundary: Boundary,
    /// Kernel mass allowed outside the box for custom kernels.
    pub truncation_tol: f64,
}

/// Serialized form of a [`SemigroupSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemigroupConfig {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub g: Option<String>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub truncation_tol: Option<f64>,
}

fn default_kind() -> String {
    "gaussian".into()
}

fn default_epsilon() -> f64 {
    1.0
}

impl Default for SemigroupConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            m: None,
            g: None,
            epsilon: default_epsilon(),
            tau: None,
            delta: None,
            gamma: None,
            boundary: Boundary::Zero,
            truncation_tol: None,
        }
    }
}

impl SemigroupSpec {
    pub fn gaussian() -> Self {
        Self {
            kind: SpecKind::Gaussian,
            m: 2.0,
            epsilon: 1.0,
            regularity: Some(Regularity {
                tau: 1.0,
                delta: 1.0,
                gamma: 1.0,
            }),
            boundary: Boundary::Zero,
            truncation_tol: 1e-10,
        }
    }

    pub fn custom(g: &str, m: f64, epsilon: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Parameter(format!("homogeneity order m = {m}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Parameter(format!(
                "decay exponent epsilon = {epsilon}"
            )));
        }
        Ok(Self {
            kind: SpecKind::Custom(CustomProfile::parse(g)?),
            m,
            epsilon,
            regularity: None,
            boundary: Boundary::Zero,
            truncation_tol: 1e-10,
        })
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn from_config(cfg: &SemigroupConfig) -> Result<Self> {
        let mut spec = match cfg.kind.as_str() {
            "gaussian" => {
                if cfg.m.is_some_and(|m| m != 2.0) {
                    return Err(Error::Config("the gaussian spec has m = 2".into()));
                }
                if cfg.g.is_some() {
                    return Err(Error::Config("the gaussian spec takes no profile g".into()));
                }
                let mut s = Self::gaussian();
                s.epsilon = cfg.epsilon;
                s
            }
            "custom" => {
                let g = cfg
                    .g
                    .as_deref()
                    .ok_or_else(|| Error::Config("custom spec needs a profile g".into()))?;
                let mut s = Self::custom(g, cfg.m.unwrap_or(2.0), cfg.epsilon)?;
                if let (Some(tau), Some(delta), Some(gamma)) = (cfg.tau, cfg.delta, cfg.gamma) {
                    s.regularity = Some(Regularity { tau, delta, gamma });
                }
                s
            }
            other => return Err(Error::Config(format!("unknown semigroup kind {other:?}"))),
        };
        spec.boundary = cfg.boundary;
        if let Some(t) = cfg.truncation_tol {
            spec.truncation_tol = t;
        }
        Ok(spec)
    }

    pub fn to_config(&self) -> SemigroupConfig {
        let (kind, g) = match &self.kind {
            SpecKind::Gaussian => ("gaussian".to_string(), None),
            SpecKind::Custom(p) => ("custom".to_string(), Some(p.source().to_string())),
        };
        SemigroupConfig {
            kind,
            m: Some(self.m),
            g,
            epsilon: self.epsilon,
            tau: self.regularity.map(|r| r.tau),
            delta: self.regularity.map(|r| r.delta),
            gamma: self.regularity.map(|r| r.gamma),
            boundary: self.boundary,
            truncation_tol: Some(self.truncation_tol),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, SpecKind::Gaussian)
    }

    /// Custom specs are only bound-checked; Hardy-space runs on them are
    /// experimental.
    pub fn is_experimental(&self) -> bool {
        !self.is_gaussian()
    }

    /// Heat kernel `p_t(r)` in dimension `dim`.
    pub fn kernel(&self, r: f64, t: f64, dim: usize) -> f64 {
        match &self.kind {
            SpecKind::Gaussian => {
                (4.0 * std::f64::consts::PI * t).powf(-(dim as f64) / 2.0)
                    * (-r * r / (4.0 * t)).exp()
            }
            SpecKind::Custom(p) => {
                let s = t.powf(1.0 / self.m);
                s.powi(-(dim as i32)) * p.g(r / s) / p.mass[dim - 1].unwrap_or(f64::NAN)
            }
        }
    }

    /// Kernel of `Q_{s,t}`.
    pub fn q_kernel(&self, r: f64, t: f64, s: usize, dim: usize) -> f64 {
        let k = s + 1;
        match &self.kind {
            SpecKind::Gaussian => {
                let a = r * r / (4.0 * t);
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * self.kernel(r, t, dim) * gaussian_time_polynomial(k, dim, a)
            }
            SpecKind::Custom(_) => {
                // (tL)^k e^{-tL} = (-t d/dt)^k-type combination realized as
                // (-1)^k t^k d^k/dt^k p_t by central differences.
                let eta = 1e-16f64.powf(1.0 / (k as f64 + 2.0)).min(0.5 / k as f64);
                let d = eta * t;
                let mut acc = 0.0;
                let mut binom = 1.0;
                for j in 0..=k {
                    let tj = t + (0.5 * k as f64 - j as f64) * d;
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    acc += sign * binom * self.kernel(r, tj, dim);
                    binom = binom * (k - j) as f64 / (j + 1) as f64;
                }
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * t.powi(k as i32) * acc / d.powi(k as i32)
            }
        }
    }
}

/// `P_k(a)` with `t^k d^k/dt^k p_t = p_t P_k(r^2 / 4t)` for the Gaussian:
/// `P_0 = 1`, `P_{k+1} = (a - n/2) P_k - a P_k' - k P_k`.
pub fn gaussian_time_polynomial(k: usize, dim: usize, a: f64) -> f64 {
    // coefficients in powers of a
    let mut c = vec![1.0];
    let half_n = dim as f64 / 2.0;
    for j in 0..k {
        let mut next = vec![0.0; c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i + 1] += ci;
            next[i] -= (half_n + j as f64 + i as f64) * ci;
        }
        c = next;
    }
    c.iter().rev().fold(0.0, |acc, ci| acc * a + ci)
}

/// Powers `s` and `s0` of the derived operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub s: usize,
    pub s0: usize,
}

impl OperatorParams {
    /// `s0 = max(0, floor((n/m)(1/p_minus - 1)))`; `s` defaults to `s0`.
    pub fn for_exponent(p: &ExponentFunction, n: usize, m: f64, s: Option<usize>) -> Result<Self> {
        let s0 = ((n as f64 / m) * (1.0 / p.p_minus() - 1.0))
            .floor()
            .max(0.0) as usize;
        let s = s.unwrap_or(s0);
        Self::new(s, s0)
    }

    pub fn new(s: usize, s0: usize) -> Result<Self> {
        if s < s0 {
            return Err(Error::Parameter(format!(
                "s = {s} must be at least s0 = {s0}"
            )));
        }
        Ok(Self { s, s0 })
    }
}

/// `1 - (1 - e^{-u})^{k}` written to keep precision at small `u`.
fn one_minus_pow(u: f64, k: usize) -> f64 {
    1.0 - (-(-u).exp_m1()).powi(k as i32)
}

/// Fourier symbols (as functions of `u = t |xi|^2`) of the Gaussian operators.
pub mod symbol {
    pub fn heat(u: f64) -> f64 {
        (-u).exp()
    }

    pub fn q(u: f64, s: usize) -> f64 {
        u.powi(s as i32 + 1) * (-u).exp()
    }

    pub fn p(u: f64, s: usize) -> f64 {
        super::one_minus_pow(u, s + 1)
    }

    /// `(1 - e^{-u})^{s0 + 1}`, the symbol of `I - P_{s0,t}`.
    pub fn i_minus_p(u: f64, s0: usize) -> f64 {
        (-(-u).exp_m1()).powi(s0 as i32 + 1)
    }
}

/// Padding that keeps the wrap-around mass of a Gaussian-type kernel at time
/// `time` (with a polynomial factor of degree `degree` in `r^2/4t`) below
/// `WRAP_TOL`.
pub fn gaussian_padding(time: f64, degree: usize) -> f64 {
    let z = erfc_inv(WRAP_TOL);
    2.0 * time.sqrt() * (z + (degree as f64 + 1.0).sqrt())
}

/// Transform of `f` suited to Gaussian symbols reaching up to time `time`.
pub fn gaussian_spectrum(
    f: &GridFunction,
    time: f64,
    degree: usize,
    boundary: Boundary,
) -> Result<Spectrum> {
    match boundary {
        Boundary::Periodic => Ok(Spectrum::periodic(f)),
        Boundary::Zero => {
            let pad = gaussian_padding(time, degree);
            Spectrum::zero_padded(f, pad).map_err(|e| match e {
                Error::Truncation { .. } => Error::Truncation {
                    scale: time,
                    tail: 1.0,
                    tol: WRAP_TOL,
                },
                other => other,
            })
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Parameter(format!("time t = {t} must be positive")));
    }
    Ok(())
}

fn custom_apply(
    f: &GridFunction,
    spec: &SemigroupSpec,
    t: f64,
    kernel: impl Fn(f64, f64, usize) -> f64 + Sync,
) -> Result<GridFunction> {
    if spec.boundary == Boundary::Periodic {
        return Err(Error::Parameter(
            "periodic boundary is only available for the gaussian spec".into(),
        ));
    }
    if let SpecKind::Custom(p) = &spec.kind {
        p.mass(f.grid().dim())?;
    }
    apply_kernel(f, &kernel, t, spec.truncation_tol)
}

/// `e^{-tL} f`.
pub fn heat_apply(f: &GridFunction, t: f64, spec: &SemigroupSpec) -> Result<GridFunction> {
    check_time(t)?;
    match spec.kind {
        SpecKind::Gaussian => {
            Ok(gaussian_spectrum(f, t, 0, spec.boundary)?.apply(|x2| symbol::heat(t * x2)))
        }
        SpecKind::Custom(_) => custom_apply(f, spec, t, |r, t, d| spec.kernel(r, t, d)),
    }
}

/// Smallest time resolvable by `Q_{s,t}` on a grid of spacing `h`.
pub fn min_resolved_time(h: f64) -> f64 {
    2.0 * h * h
}

/// `Q_{s,t} f = (tL)^{s+1} e^{-tL} f`.
pub fn apply_qst(f: &GridFunction, t: f64, s: usize, spec: &SemigroupSpec) -> Result<GridFunction> {
    check_time(t)?;
    let h = f.grid().h();
    if t < min_resolved_time(h) {
        return Err(Error::Resolution(format!(
            "t = {t} is below 2h^2 = {}",
            min_resolved_time(h)
        )));
    }
    match spec.kind {
        SpecKind::Gaussian => {
            Ok(gaussian_spectrum(f, t, s + 1, spec.boundary)?.apply(|x2| symbol::q(t * x2, s)))
        }
        SpecKind::Custom(_) => custom_apply(f, spec, t, |r, t, d| spec.q_kernel(r, t, s, d)),
    }
}

/// `P_{s,t} f = sum_{k=1}^{s+1} (-1)^{k+1} C(s+1, k) e^{-ktL} f`.
pub fn apply_pst(f: &GridFunction, t: f64, s: usize, spec: &SemigroupSpec) -> Result<GridFunction> {
    check_time(t)?;
    match spec.kind {
        SpecKind::Gaussian => Ok(gaussian_spectrum(f, (s + 1) as f64 * t, 0, spec.boundary)?
            .apply(|x2| symbol::p(t * x2, s))),
        SpecKind::Custom(_) => {
            let mut out = GridFunction::zeros(f.grid());
            let mut binom = 1.0;
            for k in 1..=s + 1 {
                binom = binom * (s + 2 - k) as f64 / k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                out = out.axpy(sign * binom, &heat_apply(f, k as f64 * t, spec)?);
            }
            Ok(out)
        }
    }
}

/// Transform length for Gaussian symbols reaching up to time `time`.
pub fn gaussian_transform_len(
    grid: &GridBox,
    time: f64,
    degree: usize,
    boundary: Boundary,
) -> Result<usize> {
    match boundary {
        Boundary::Periodic => Ok(grid.points_per_axis()),
        Boundary::Zero => {
            Spectrum::padded_len(grid, gaussian_padding(time, degree)).map_err(|_| {
                Error::Truncation {
                    scale: time,
                    tail: 1.0,
                    tol: WRAP_TOL,
                }
            })
        }
    }
}

/// `Q_{s,t} f` for every time in `times`. The Gaussian route shares one
/// transform and applies exact symbols, so no resolution limit applies to it;
/// custom kernels go through [`apply_qst`] level by level.
pub fn qst_family(
    f: &GridFunction,
    times: &[f64],
    s: usize,
    spec: &SemigroupSpec,
) -> Result<Vec<GridFunction>> {
    for &t in times {
        check_time(t)?;
    }
    match spec.kind {
        SpecKind::Gaussian => {
            let t_max = times.iter().copied().fold(0.0, f64::max);
            let m = gaussian_transform_len(f.grid(), t_max, s + 1, spec.boundary)?;
            let spectrum = Spectrum::with_len(f, m)?;
            Ok(times
                .par_iter()
                .map(|&t| spectrum.apply(|x2| symbol::q(t * x2, s)))
                .collect())
        }
        SpecKind::Custom(_) => times
            .par_iter()
            .map(|&t| apply_qst(f, t, s, spec))
            .collect(),
    }
}

/// `P_{s,t} f` for every time in `times` (one shared transform for the
/// Gaussian).
pub fn pst_family(
    f: &GridFunction,
    times: &[f64],
    s: usize,
    spec: &SemigroupSpec,
) -> Result<Vec<GridFunction>> {
    for &t in times {
        check_time(t)?;
    }
    match spec.kind {
        SpecKind::Gaussian => {
            let t_max = times.iter().copied().fold(0.0, f64::max);
            let m = gaussian_transform_len(f.grid(), (s + 1) as f64 * t_max, 0, spec.boundary)?;
            let spectrum = Spectrum::with_len(f, m)?;
            Ok(times
                .par_iter()
                .map(|&t| spectrum.apply(|x2| symbol::p(t * x2, s)))
                .collect())
        }
        SpecKind::Custom(_) => times
            .par_iter()
            .map(|&t| apply_pst(f, t, s, spec))
            .collect(),
    }
}

/// `Q_{s,t} (I - P_{s0,t}) f` for every time in `times`.
pub fn qp_family(
    f: &GridFunction,
    times: &[f64],
    s: usize,
    s0: usize,
    spec: &SemigroupSpec,
) -> Result<Vec<GridFunction>> {
    for &t in times {
        check_time(t)?;
    }
    match spec.kind {
        SpecKind::Gaussian => {
            let t_max = times.iter().copied().fold(0.0, f64::max);
            let m =
                gaussian_transform_len(f.grid(), (s0 + 2) as f64 * t_max, s + 1, spec.boundary)?;
            let spectrum = Spectrum::with_len(f, m)?;
            Ok(times
                .par_iter()
                .map(|&t| spectrum.apply(|x2| symbol::q(t * x2, s) * symbol::i_minus_p(t * x2, s0)))
                .collect())
        }
        SpecKind::Custom(_) => times
            .par_iter()
            .map(|&t| {
                let rest = f.sub(&apply_pst(f, t, s0, spec)?);
                apply_qst(&rest, t, s, spec)
            })
            .collect(),
    }
}

/// Levels summed per accumulator in [`synthesize`]; fixed so that the
/// reduction order does not depend on the thread count.
const SYNTHESIS_CHUNK: usize = 8;

/// `sum_k w_k Q_{s,t_k} (I - P_{s0,t_k}) F_k` over `(t_k, w_k, F_k)`.
pub fn synthesize(
    levels: &[(f64, f64, &GridFunction)],
    s: usize,
    s0: usize,
    spec: &SemigroupSpec,
) -> Result<GridFunction> {
    let grid = match levels.first() {
        Some((_, _, f)) => f.grid().clone(),
        None => return Err(Error::InvalidInput("nothing to synthesize".into())),
    };
    for (t, _, f) in levels {
        check_time(*t)?;
        if f.grid() != &grid {
            return Err(Error::InvalidInput("levels live on different grids".into()));
        }
    }
    match spec.kind {
        SpecKind::Gaussian => {
            let t_max = levels.iter().map(|l| l.0).fold(0.0, f64::max);
            let m = gaussian_transform_len(&grid, (s0 + 2) as f64 * t_max, s + 1, spec.boundary)?;
            let partial: Vec<Result<SpectralSum>> = levels
                .par_chunks(SYNTHESIS_CHUNK)
                .map(|chunk| {
                    let mut acc = SpectralSum::new(&grid, m);
                    for &(t, w, f) in chunk {
                        let spec_f = Spectrum::with_len(f, m)?;
                        acc.add(&spec_f, |x2| {
                            let u = t * x2;
                            w * symbol::q(u, s) * symbol::i_minus_p(u, s0)
                        });
                    }
                    Ok(acc)
                })
                .collect();
            let mut total = SpectralSum::new(&grid, m);
            for p in partial {
                total.merge(&p?);
            }
            Ok(total.finish())
        }
        SpecKind::Custom(_) => {
            let parts: Vec<Result<GridFunction>> = levels
                .par_iter()
                .map(|&(t, w, f)| {
                    let rest = f.sub(&apply_pst(f, t, s0, spec)?);
                    Ok(apply_qst(&rest, t, s, spec)?.scaled(w))
                })
                .collect();
            let mut out = GridFunction::zeros(&grid);
            for p in parts {
                out = out.add(&p?);
            }
            Ok(out)
        }
    }
}

/// Probe ladder for [`verify_kernel_decay`]: scales `t` (the kernel is
/// evaluated at time `t^m`) and normalized radii `rho = |x - y| / t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelProbes {
    pub scales: Vec<f64>,
    pub radii: Vec<f64>,
    /// Also check `|t^k d^k/dt^k p_t|` for `k = 2..=higher_k`.
    #[serde(default)]
    pub higher_k: usize,
}

impl Default for KernelProbes {
    fn default() -> Self {
        Self {
            scales: (-4..=4).map(|k| 2f64.powi(k)).collect(),
            radii: (0..=90)
                .map(|k| 10f64.powf(-3.0 + k as f64 / 10.0))
                .collect(),
            higher_k: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelDecayReport {
    /// Smallest `C` with `|p| + |q| <= C t^-n g(|x - y| / t)` on the probes.
    pub constant: f64,
    /// Log-log slope of `rho^{n + epsilon} g(rho)` over the outer probes.
    pub tail_slope: f64,
    pub epsilon: f64,
    pub dim: usize,
    pub probes: usize,
    pub higher_k_constants: Vec<f64>,
}

/// Bounding profile for the check: the spec's own `g` for custom kernels and
/// `exp(-rho^2 / (8 (s + 1)))` for the Gaussian.
fn bound_profile(spec: &SemigroupSpec, rho: f64, s: usize) -> f64 {
    match &spec.kind {
        SpecKind::Gaussian => (-rho * rho / (8.0 * (s + 1) as f64)).exp(),
        SpecKind::Custom(p) => p.g(rho),
    }
}

fn p_st_kernel(spec: &SemigroupSpec, r: f64, t: f64, s: usize, dim: usize) -> f64 {
    let mut acc = 0.0;
    let mut binom = 1.0;
    for k in 1..=s + 1 {
        binom = binom * (s + 2 - k) as f64 / k as f64;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        acc += sign * binom * spec.kernel(r, k as f64 * t, dim);
    }
    acc
}

/// Certifies `|p_{s,t^m}(x,y)| + |q_{s,t^m}(x,y)| <= C t^-n g(|x-y|/t)` on the
/// probe grid and that `rho^{n+epsilon} g(rho)` decays over the outer third
/// of the radii. Fails with a witness `(t, x, y)`.
pub fn verify_kernel_decay(
    spec: &SemigroupSpec,
    probes: &KernelProbes,
    dim: usize,
    s: usize,
) -> Result<KernelDecayReport> {
    if !(dim == 1 || dim == 2) {
        return Err(Error::Parameter(format!("dimension {dim}")));
    }
    if probes.scales.is_empty() || probes.radii.len() < 3 {
        return Err(Error::Parameter(
            "kernel probes need scales and at least 3 radii".into(),
        ));
    }
    let n = dim as f64;
    let witness = |t: f64, rho: f64| -> (Vec<f64>, Vec<f64>) {
        let mut y = vec![0.0; dim];
        y[0] = rho * t;
        (vec![0.0; dim], y)
    };
    let mut constant: f64 = 0.0;
    let mut count = 0;
    let mut higher = vec![0.0f64; probes.higher_k.saturating_sub(1)];
    for &t in &probes.scales {
        let time = t.powf(spec.m);
        for &rho in &probes.radii {
            let r = rho * t;
            let g = bound_profile(spec, rho, s);
            let lhs =
                p_st_kernel(spec, r, time, s, dim).abs() + spec.q_kernel(r, time, s, dim).abs();
            let bound = t.powf(-n) * g;
            if !lhs.is_finite() {
                let (x, y) = witness(t, rho);
                return Err(Error::KernelBound {
                    t,
                    x,
                    y,
                    detail: format!("kernel value {lhs} is not finite"),
                });
            }
            if bound > 0.0 {
                constant = constant.max(lhs / bound);
            } else if lhs > 0.0 {
                let (x, y) = witness(t, rho);
                return Err(Error::KernelBound {
                    t,
                    x,
                    y,
                    detail: format!("kernel {lhs:e} against a vanishing bound"),
                });
            }
            for (i, c) in higher.iter_mut().enumerate() {
                let k = i + 2;
                let v = spec.q_kernel(r, time, k - 1, dim).abs();
                if bound > 0.0 {
                    *c = c.max(v / bound);
                }
            }
            count += 1;
        }
    }
    if !constant.is_finite() {
        return Err(Error::KernelBound {
            t: probes.scales[0],
            x: vec![0.0; dim],
            y: vec![0.0; dim],
            detail: "no finite bounding constant".into(),
        });
    }
    // decay of rho^{n+eps} g(rho) over the outer third of the radii
    let k0 = probes.radii.len() * 2 / 3;
    let tail: Vec<(f64, f64)> = probes.radii[k0..]
        .iter()
        .map(|&rho| {
            (
                rho.ln(),
                (n + spec.epsilon) * rho.ln() + bound_profile(spec, rho, s).ln(),
            )
        })
        .collect();
    let finite: Vec<&(f64, f64)> = tail.iter().filter(|(_, v)| v.is_finite()).collect();
    let tail_slope = if finite.len() < 2 {
        // the profile underflowed: super-polynomial decay
        f64::NEG_INFINITY
    } else {
        let m = finite.len() as f64;
        let mx = finite.iter().map(|(x, _)| x).sum::<f64>() / m;
        let my = finite.iter().map(|(_, y)| y).sum::<f64>() / m;
        let sxy: f64 = finite.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = finite.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        sxy / sxx
    };
    if tail_slope >= 0.0 {
        let rho = *probes.radii.last().expect("radii checked nonempty");
        let (x, y) = witness(1.0, rho);
        return Err(Error::KernelBound {
            t: 1.0,
            x,
            y,
            detail: format!(
                "rho^(n+epsilon) g(rho) does not decay: log-log slope {tail_slope:.4} with epsilon = {}",
                spec.epsilon
            ),
        });
    }
    Ok(KernelDecayReport {
        constant,
        tail_slope,
        epsilon: spec.epsilon,
        dim,
        probes: count,
        higher_k_constants: higher,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, GridBox};
    use proptest::prelude::*;

    fn line() -> GridBox {
        GridBox::line(-16.0, 16.0, 1024).unwrap()
    }

    fn interior_rel_err(a: &GridFunction, b: &GridFunction, margin: f64) -> f64 {
        let mask = a.grid().interior_mask(margin);
        a.sub(b).masked_l2_norm(&mask) / b.masked_l2_norm(&mask)
    }

    #[test]
    fn time_polynomials() {
        // k = 1: a - n/2; k = 2: a^2 - (n + 2) a + n/2 (n/2 + 1)
        for dim in [1, 2] {
            let n = dim as f64;
            for a in [0.0, 0.3, 2.0] {
                assert!((gaussian_time_polynomial(1, dim, a) - (a - n / 2.0)).abs() < 1e-14);
                let p2 = a * a - (n + 2.0) * a + n / 2.0 * (n / 2.0 + 1.0);
                assert!((gaussian_time_polynomial(2, dim, a) - p2).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn q_kernel_matches_time_derivative() {
        let spec = SemigroupSpec::gaussian();
        for dim in [1, 2] {
            for (r, t) in [(0.0, 0.5), (0.7, 0.3), (2.0, 1.5)] {
                let d = 1e-5 * t;
                let dp = (spec.kernel(r, t + d, dim) - spec.kernel(r, t - d, dim)) / (2.0 * d);
                assert!((spec.q_kernel(r, t, 0, dim) + t * dp).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn heat_examples() {
        let g = line();
        let spec = SemigroupSpec::gaussian();
        let (xi, t) = (2.0, 0.3);
        let f = GridFunction::from_fn(&g, |x| (xi * x[0]).cos()).unwrap();
        let out = heat_apply(&f, t, &spec).unwrap();
        let expect = f.scaled((-t * xi * xi).exp());
        assert!(interior_rel_err(&out, &expect, 6.0) < 1e-6);

        let bump = GridFunction::from_fn(&g, |x| (-x[0] * x[0]).exp()).unwrap();
        let tiny = heat_apply(&bump, 1e-6 * g.h() * g.h(), &spec).unwrap();
        // the change is about t |f''| <= 2t
        assert!(tiny.sub(&bump).max_abs() < 3e-6 * g.h() * g.h());

        let one = GridFunction::constant(&g, 1.0);
        let out = heat_apply(&one, 0.5, &spec).unwrap();
        let mask = g.interior_mask(8.0);
        for (v, m) in out.values().iter().zip(&mask) {
            if *m {
                assert!((v - 1.0).abs() < 1e-10);
            }
        }
        assert!(heat_apply(&one, 0.0, &spec).is_err());
    }

    #[test]
    fn qst_and_pst_examples() {
        let g = line();
        let spec = SemigroupSpec::gaussian();
        let (xi, t) = (2.0, 0.3);
        let u = t * xi * xi;
        let f = GridFunction::from_fn(&g, |x| (xi * x[0]).cos()).unwrap();
        let q = apply_qst(&f, t, 0, &spec).unwrap();
        assert!(interior_rel_err(&q, &f.scaled(u * (-u).exp()), 6.0) < 1e-6);

        let c = GridFunction::constant(&g, 3.0);
        let qc = apply_qst(&c, 0.5, 0, &spec).unwrap();
        let mask = g.interior_mask(8.0);
        assert!(qc.masked_l2_norm(&mask) < 1e-9);

        let p0 = apply_pst(&f, t, 0, &spec).unwrap();
        let h = heat_apply(&f, t, &spec).unwrap();
        assert!(p0.sub(&h).max_abs() < 1e-12);
        let p1 = apply_pst(&f, t, 1, &spec).unwrap();
        let m1 = 1.0 - (1.0 - (-u).exp()).powi(2);
        assert!(interior_rel_err(&p1, &f.scaled(m1), 6.0) < 1e-6);
        let one = GridFunction::constant(&g, 1.0);
        let p2 = apply_pst(&one, 0.2, 2, &spec).unwrap();
        for (v, m) in p2.values().iter().zip(&mask) {
            if *m {
                assert!((v - 1.0).abs() < 1e-9);
            }
        }

        assert!(matches!(
            apply_qst(&f, g.h() * g.h(), 0, &spec),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn q_multiplier_bound() {
        let g = line();
        let spec = SemigroupSpec::gaussian();
        let f = GridFunction::from_fn(&g, |x| (-x[0] * x[0]).exp() * (3.0 * x[0]).cos()).unwrap();
        let norm = f.l2_norm();
        for t in [0.01, 0.05, 0.1, 0.3, 1.0, 3.0] {
            let q = apply_qst(&f, t, 0, &spec).unwrap();
            assert!(q.l2_norm() <= (-1f64).exp() * norm * (1.0 + 1e-9));
        }
    }

    #[test]
    fn spectral_and_kernel_routes_agree() {
        let g = GridBox::line(-8.0, 8.0, 512).unwrap();
        let spec = SemigroupSpec::gaussian();
        let f = GridFunction::from_fn(&g, |x| (-2.0 * x[0] * x[0]).exp() * (1.0 + x[0])).unwrap();
        for s in [0, 1, 2] {
            let t = 0.2;
            let spectral = apply_qst(&f, t, s, &spec).unwrap();
            let direct = apply_kernel(
                &f,
                &|r: f64, t: f64, d: usize| spec.q_kernel(r, t, s, d),
                t,
                1e-10,
            )
            .unwrap();
            assert!(spectral.sub(&direct).max_abs() < 1e-9, "s = {s}");
        }
        let g2 = GridBox::square(-6.0, 6.0, 64).unwrap();
        let f2 = GridFunction::from_fn(&g2, |x| (-(x[0] * x[0] + x[1] * x[1])).exp()).unwrap();
        let spectral = apply_qst(&f2, 0.3, 0, &spec).unwrap();
        let direct = apply_kernel(
            &f2,
            &|r: f64, t: f64, d: usize| spec.q_kernel(r, t, 0, d),
            0.3,
            1e-10,
        )
        .unwrap();
        assert!(spectral.sub(&direct).max_abs() < 1e-8);
    }

    #[test]
    fn custom_gaussian_profile_matches_gaussian() {
        let g = GridBox::line(-8.0, 8.0, 256).unwrap();
        let custom = SemigroupSpec::custom("exp(-r^2/4)", 2.0, 1.0).unwrap();
        let spec = SemigroupSpec::gaussian();
        let f = GridFunction::from_fn(&g, |x| (-x[0] * x[0]).exp()).unwrap();
        let a = heat_apply(&f, 0.4, &custom).unwrap();
        let b = heat_apply(&f, 0.4, &spec).unwrap();
        assert!(a.sub(&b).max_abs() < 1e-9);
        let qa = apply_qst(&f, 0.4, 0, &custom).unwrap();
        let qb = apply_qst(&f, 0.4, 0, &spec).unwrap();
        assert!(qa.sub(&qb).max_abs() < 1e-6);
        let pa = apply_pst(&f, 0.2, 1, &custom).unwrap();
        let pb = apply_pst(&f, 0.2, 1, &spec).unwrap();
        assert!(pa.sub(&pb).max_abs() < 1e-9);
        assert!(integrate(&f) > 0.0);
    }

    #[test]
    fn heavy_tail_custom_kernel_reports_truncation() {
        let g = GridBox::line(-2.0, 2.0, 64).unwrap();
        let spec = SemigroupSpec::custom("(1 + r)^(-1.5)", 2.0, 0.4).unwrap();
        let f = GridFunction::constant(&g, 1.0);
        assert!(matches!(
            heat_apply(&f, 1.0, &spec),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn kernel_decay_examples() {
        let probes = KernelProbes {
            higher_k: 3,
            ..KernelProbes::default()
        };
        for dim in [1, 2] {
            let r = verify_kernel_decay(&SemigroupSpec::gaussian(), &probes, dim, 0).unwrap();
            assert!(r.constant.is_finite() && r.constant > 0.0);
            assert!(r.higher_k_constants.iter().all(|c| c.is_finite()));
        }
        let mut big_eps = SemigroupSpec::gaussian();
        big_eps.epsilon = 50.0;
        assert!(verify_kernel_decay(&big_eps, &KernelProbes::default(), 1, 1).is_ok());

        let ok = SemigroupSpec::custom("(1 + r)^(-1.5)", 2.0, 0.4).unwrap();
        let rep = verify_kernel_decay(&ok, &KernelProbes::default(), 1, 0).unwrap();
        assert!(rep.tail_slope < 0.0);
        let bad = SemigroupSpec::custom("(1 + r)^(-1.5)", 2.0, 0.6).unwrap();
        match verify_kernel_decay(&bad, &KernelProbes::default(), 1, 0) {
            Err(Error::KernelBound { t, x, y, .. }) => {
                assert_eq!(t, 1.0);
                assert_eq!(x, vec![0.0]);
                assert!(y[0] > 1e5);
            }
            other => panic!("expected a kernel bound failure, got {other:?}"),
        }
    }

    #[test]
    fn config_round_trip() {
        let cfg: SemigroupConfig =
            toml::from_str("kind = \"custom\"\ng = \"(1 + r)^(-1.5)\"\nm = 2.0\nepsilon = 0.4\n")
                .unwrap();
        let spec = SemigroupSpec::from_config(&cfg).unwrap();
        assert!(spec.is_experimental());
        let back = SemigroupSpec::from_config(&spec.to_config()).unwrap();
        assert_eq!(back.to_config(), spec.to_config());
        assert!(SemigroupSpec::from_config(&SemigroupConfig {
            kind: "other".into(),
            ..SemigroupConfig::default()
        })
        .is_err());
        assert!(SemigroupSpec::custom("(1 + r)^(-0.5)", 2.0, 0.4).is_err());
    }

    #[test]
    fn params_from_exponent() {
        let g = line();
        let p = ExponentFunction::constant(0.4, &g).unwrap();
        let params = OperatorParams::for_exponent(&p, 1, 2.0, None).unwrap();
        assert_eq!(params.s0, 0);
        let p = ExponentFunction::constant(0.2, &g).unwrap();
        let params = OperatorParams::for_exponent(&p, 1, 2.0, None).unwrap();
        assert_eq!(params.s0, 2);
        assert!(OperatorParams::for_exponent(&p, 1, 2.0, Some(1)).is_err());
    }

    fn localized(a: f64, b: f64, c: f64) -> impl Fn(&[f64]) -> f64 {
        move |x: &[f64]| {
            (-(x[0] - c).powi(2)).exp() * (a * x[0]).cos() + b * (-(x[0] + c).powi(2) * 2.0).exp()
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn semigroup_law(t in 0.05f64..1.0, s in 0.05f64..1.0, a in 0.0f64..4.0, b in -1.0f64..1.0, c in -2.0f64..2.0) {
            let g = line();
            let spec = SemigroupSpec::gaussian();
            let f = GridFunction::from_fn(&g, localized(a, b, c)).unwrap();
            let two_step = heat_apply(&heat_apply(&f, t, &spec).unwrap(), s, &spec).unwrap();
            let one_step = heat_apply(&f, t + s, &spec).unwrap();
            prop_assert!(interior_rel_err(&two_step, &one_step, 4.0) < 1e-8);
        }

        #[test]
        fn self_adjoint(t in 0.05f64..2.0, a in 0.0f64..4.0, b in -1.0f64..1.0, c in -3.0f64..3.0) {
            let g = line();
            let spec = SemigroupSpec::gaussian();
            let f = GridFunction::from_fn(&g, localized(a, b, c)).unwrap();
            let h = GridFunction::from_fn(&g, localized(b + 1.0, a, -c)).unwrap();
            let lhs = integrate(&heat_apply(&f, t, &spec).unwrap().mul(&h));
            let rhs = integrate(&f.mul(&heat_apply(&h, t, &spec).unwrap()));
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn pst_uniformly_bounded(t in 0.01f64..4.0, s in 0usize..3, a in 0.0f64..4.0, b in -1.0f64..1.0, c in -3.0f64..3.0) {
            let g = line();
            let spec = SemigroupSpec::gaussian();
            let f = GridFunction::from_fn(&g, localized(a, b, c)).unwrap();
            let out = apply_pst(&f, t, s, &spec).unwrap();
            // sup |1 - (1 - e^-u)^{s+1}| = 1 on L^2; the binomial sum bounds every L^p norm
            let lp_bound: f64 = (1..=s + 1).map(|k| {
                let mut b = 1.0;
                for j in 0..k { b = b * (s + 1 - j) as f64 / (j + 1) as f64; }
                b
            }).sum();
            for p in [2.0, 4.0] {
                let ratio = crate::grid::const_lp_norm(&out, p) / crate::grid::const_lp_norm(&f, p);
                let limit = if p == 2.0 { 1.0 + 1e-9 } else { lp_bound };
                prop_assert!(ratio <= limit, "ratio {} over {}", ratio, limit);
            }
        }

        #[test]
        fn linearity(t in 0.05f64..2.0, a in 0.0f64..4.0, b in -1.0f64..1.0, c in -3.0f64..3.0, k in -3.0f64..3.0) {
            let g = line();
            let spec = SemigroupSpec::gaussian();
            let f = GridFunction::from_fn(&g, localized(a, b, c)).unwrap();
            let h = GridFunction::from_fn(&g, localized(b, a, -c)).unwrap();
            let lhs = apply_qst(&f.axpy(k, &h), t, 0, &spec).unwrap();
            let rhs = apply_qst(&f, t, 0, &spec).unwrap().axpy(k, &apply_qst(&h, t, 0, &spec).unwrap());
            prop_assert!(lhs.sub(&rhs).max_abs() < 1e-12 * (1.0 + rhs.max_abs()));
        }
    }
}
