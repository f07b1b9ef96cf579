//! Certification suites: named checks over seeded random families, each
//! producing a JSON-serializable report.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bmo::{bmo_norm, carleson_norm, duality_ratio, pairing_via_tent, tent_duality_check};
use crate::error::{Error, Result};
use crate::exponent::ExponentFunction;
use crate::fractional::{
    cube_sum_ratio, fractional_apply, fractional_hardy_check, FractionalParams,
};
use crate::grid::{
    const_lp_norm, integrate, Cube, DyadicFamily, GridBox, GridFunction, HalfSpaceFunction,
    ScaleLadder,
};
use crate::hardy::{
    area_field, classical_atom_embedding_check, compute_cms, default_ladder, hardy_norm,
    lusin_area, molecular_decompose, molecule_delta, pi_l, synthesis_ratio, ClassicalAtom,
    Molecule,
};
use crate::lebesgue::{cube_ratio_check, dyadic_tower, luxemburg_norm, modular, CubeNorms};
use crate::maximal::{fs_vector_check, hl_maximal, MaximalConfig};
use crate::semigroup::{
    heat_apply, verify_kernel_decay, Boundary, KernelProbes, OperatorParams, SemigroupConfig,
    SemigroupSpec,
};
use crate::tent::{tent_atomic_decompose, tent_norm, TentAtom, TentExponent};

pub const SUITES: [&str; 7] = [
    "lebesgue",
    "maximal",
    "semigroup",
    "tent",
    "hardy",
    "bmo",
    "fractional",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl GridConfig {
    pub fn build(&self) -> Result<GridBox> {
        GridBox::new(
            self.dim,
            &vec![self.lower; self.dim],
            &vec![self.upper; self.dim],
            self.points,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    #[serde(default)]
    pub t_min: Option<f64>,
    #[serde(default)]
    pub t_max: Option<f64>,
    pub levels: usize,
}

impl LadderConfig {
    pub fn build(&self, grid: &GridBox, spec: &SemigroupSpec) -> Result<ScaleLadder> {
        let d = default_ladder(grid, spec)?;
        ScaleLadder::new(
            self.t_min.unwrap_or(d.t_min()),
            self.t_max.unwrap_or(d.t_max()),
            self.levels,
        )
    }
}

/// Trial counts of the randomized families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Trials {
    pub oracle: usize,
    pub modular: usize,
    pub tent: usize,
    pub reproducing: usize,
    pub molecular: usize,
    pub duality: usize,
    pub carleson: usize,
    pub pairing: usize,
    pub fractional: usize,
    pub cube_families: usize,
}

impl Default for Trials {
    fn default() -> Self {
        Self {
            oracle: 50,
            modular: 100,
            tent: 20,
            reproducing: 20,
            molecular: 4,
            duality: 100,
            carleson: 20,
            pairing: 6,
            fractional: 20,
            cube_families: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub luxemburg: f64,
    pub oracle: f64,
    pub modular: f64,
    pub cube_ratio_drift: f64,
    pub reproducing: f64,
    pub area_l2: f64,
    pub tent_residual: f64,
    pub tent_drift: f64,
    pub molecular_residual: f64,
    pub stability: f64,
    pub pairing: f64,
    pub multiplier: f64,
    pub embedding_spread: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            luxemburg: 1e-10,
            oracle: 1e-6,
            modular: 1e-6,
            cube_ratio_drift: 0.10,
            reproducing: 0.01,
            area_l2: 0.02,
            tent_residual: 1e-6,
            tent_drift: 2.0,
            molecular_residual: 0.02,
            stability: 10.0,
            pairing: 0.02,
            multiplier: 1e-3,
            embedding_spread: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub suites: Vec<String>,
    pub output_dir: Option<PathBuf>,
    pub plots: bool,
    pub grid: GridConfig,
    pub ladder: LadderConfig,
    /// Exponent of the Lebesgue-space suites.
    pub exponent: String,
    /// Exponent of the Hardy, BMO and tent suites (`p_plus <= 1`).
    pub hardy_exponent: String,
    pub semigroup: SemigroupConfig,
    pub tolerances: Tolerances,
    pub trials: Trials,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            suites: SUITES.iter().map(|s| s.to_string()).collect(),
            output_dir: None,
            plots: false,
            grid: GridConfig {
                dim: 1,
                lower: -8.0,
                upper: 8.0,
                points: 1024,
            },
            ladder: LadderConfig {
                t_min: None,
                t_max: None,
                levels: 64,
            },
            exponent: "paper-example-1".into(),
            hardy_exponent: "bump:0.9:0.75".into(),
            semigroup: SemigroupSpec::gaussian().to_config(),
            tolerances: Tolerances::default(),
            trials: Trials::default(),
        }
    }
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks that every named suite and preset exists.
    pub fn validate(&self) -> Result<()> {
        for s in &self.suites {
            if !SUITES.contains(&s.as_str()) {
                return Err(Error::Config(format!(
                    "unknown suite {s}; known: {}",
                    SUITES.join(", ")
                )));
            }
        }
        let grid = self.grid.build()?;
        ExponentFunction::preset(&self.exponent, &grid)?;
        ExponentFunction::preset(&self.hardy_exponent, &grid)?;
        let spec = SemigroupSpec::from_config(&self.semigroup)?;
        self.ladder.build(&grid, &spec)?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub id: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, Value>,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64) -> Self {
        Self {
            suite: suite.into(),
            seed,
            checks: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.id.as_str())
            .collect()
    }

    /// `value <= bound`.
    fn at_most(&mut self, id: &str, value: f64, bound: f64, detail: impl Into<String>) {
        self.checks.push(Check {
            id: format!("{}.{id}", self.suite),
            passed: value <= bound,
            value,
            bound,
            detail: detail.into(),
        });
    }

    fn flag(&mut self, id: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            id: format!("{}.{id}", self.suite),
            passed,
            value: if passed { 1.0 } else { 0.0 },
            bound: 1.0,
            detail: detail.into(),
        });
    }

    fn metric(&mut self, key: &str, v: impl Serialize) {
        self.metrics
            .insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    /// Records an error as a failed check instead of aborting the suite.
    fn guard(&mut self, id: &str, r: Result<()>) {
        if let Err(e) = r {
            self.flag(id, false, format!("error: {e}"));
        }
    }
}

/// Derived RNG for one check so that suites do not shift each other's
/// streams.
pub fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Seeded input families.
pub mod samples {
    use super::*;

    /// Rough inputs with zero patches, smooth modes and noise.
    pub fn rough(grid: &GridBox, rng: &mut ChaCha8Rng) -> GridFunction {
        let modes: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(0.2..5.0),
                    rng.gen_range(0.0..6.3),
                )
            })
            .collect();
        let cut = rng.gen_range(0.2..0.6);
        let noise: Vec<f64> = (0..grid.node_count())
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let lo = grid.lower(0);
        let w = grid.extent(0);
        let mut v: Vec<f64> = (0..grid.node_count())
            .map(|i| {
                let x = grid.coord(i);
                let u = (x[0] - lo) / w;
                if u < cut {
                    0.0
                } else {
                    modes
                        .iter()
                        .map(|(a, k, ph)| a * (k * x[0] + ph).sin())
                        .sum::<f64>()
                }
            })
            .collect();
        for (a, b) in v.iter_mut().zip(noise) {
            if *a != 0.0 {
                *a += b;
            }
        }
        GridFunction::new(grid.clone(), v).expect("finite samples")
    }

    /// Sum of Gaussian wave packets (width 1.5, `|xi|` in `[2, 8]`) in the
    /// middle of the box.
    pub fn packets(grid: &GridBox, rng: &mut ChaCha8Rng, count: usize) -> GridFunction {
        let dim = grid.dim();
        let params: Vec<(f64, [f64; 2], [f64; 2], f64)> = (0..count)
            .map(|_| {
                let amp = rng.gen_range(-1.0..1.0);
                let mut c = [0.0; 2];
                let mut xi = [0.0; 2];
                for a in 0..dim {
                    let (lo, hi) = (grid.lower(a), grid.upper(a));
                    let w = hi - lo;
                    c[a] = rng.gen_range(lo + 0.35 * w..hi - 0.35 * w);
                    xi[a] = rng.gen_range(2.0..8.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                }
                (amp, c, xi, rng.gen_range(0.0..6.28))
            })
            .collect();
        GridFunction::from_fn(grid, |x| {
            params
                .iter()
                .map(|(amp, c, xi, ph)| {
                    let mut r2 = 0.0;
                    let mut arg = *ph;
                    for a in 0..x.len() {
                        r2 += (x[a] - c[a]).powi(2);
                        arg += xi[a] * (x[a] - c[a]);
                    }
                    amp * (-r2 / 4.5).exp() * arg.cos()
                })
                .sum()
        })
        .expect("finite samples")
    }

    /// Smooth bumps in `(y, ln t)` kept away from the box edges.
    pub fn half_space(
        grid: &GridBox,
        ladder: &ScaleLadder,
        rng: &mut ChaCha8Rng,
    ) -> HalfSpaceFunction {
        let dim = grid.dim();
        let reach = 0.5 * grid.extent(0);
        let mid: Vec<f64> = (0..dim)
            .map(|a| 0.5 * (grid.lower(a) + grid.upper(a)))
            .collect();
        let (la, lb) = (ladder.t_min().ln(), (0.25 * reach).ln());
        let bumps: Vec<(f64, [f64; 2], f64, f64, f64)> = (0..4)
            .map(|_| {
                let mut c = [0.0; 2];
                for a in 0..dim {
                    c[a] = mid[a] + rng.gen_range(-0.3..0.3) * reach;
                }
                (
                    rng.gen_range(-1.0..1.0),
                    c,
                    rng.gen_range(0.05..0.3) * reach,
                    rng.gen_range(la..lb),
                    rng.gen_range(0.5..1.5),
                )
            })
            .collect();
        HalfSpaceFunction::from_fn(grid, ladder, |y, t| {
            let far = (0..dim).any(|a| (y[a] - mid[a]).abs() + t > 0.7 * reach);
            if far {
                return 0.0;
            }
            bumps
                .iter()
                .map(|(amp, c, w, lt, lw)| {
                    let r2: f64 = (0..dim).map(|a| (y[a] - c[a]).powi(2)).sum();
                    amp * (-r2 / (2.0 * w * w) - (t.ln() - lt).powi(2) / (2.0 * lw * lw)).exp()
                })
                .sum()
        })
        .expect("finite samples")
    }

    /// Random cube inside the middle part of the box with side in `[lo, hi]`.
    pub fn cube(grid: &GridBox, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Cube {
        let side = rng.gen_range(lo..hi);
        let center: Vec<f64> = (0..grid.dim())
            .map(|a| {
                let m = 0.5 * (grid.lower(a) + grid.upper(a));
                m + rng.gen_range(-0.25..0.25) * grid.extent(a)
            })
            .collect();
        Cube::new(&center, side).expect("positive side")
    }
}

/// Context shared by the suites.
pub struct Context {
    pub cfg: SuiteConfig,
    pub grid: GridBox,
    pub spec: SemigroupSpec,
    pub ladder: ScaleLadder,
}

impl Context {
    pub fn new(cfg: &SuiteConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid.build()?;
        let spec = SemigroupSpec::from_config(&cfg.semigroup)?;
        let ladder = cfg.ladder.build(&grid, &spec)?;
        Ok(Self {
            cfg: cfg.clone(),
            grid,
            spec,
            ladder,
        })
    }

    fn exponent(&self, grid: &GridBox) -> Result<ExponentFunction> {
        ExponentFunction::preset(&self.cfg.exponent, grid)
    }

    fn hardy_exponent(&self, grid: &GridBox) -> Result<ExponentFunction> {
        ExponentFunction::preset(&self.cfg.hardy_exponent, grid)
    }
}

pub fn run(name: &str, ctx: &Context) -> Result<SuiteReport> {
    let mut r = SuiteReport::new(name, ctx.cfg.seed);
    match name {
        "lebesgue" => lebesgue_suite(ctx, &mut r),
        "maximal" => maximal_suite(ctx, &mut r),
        "semigroup" => semigroup_suite(ctx, &mut r),
        "tent" => tent_suite(ctx, &mut r),
        "hardy" => hardy_suite(ctx, &mut r),
        "bmo" => bmo_suite(ctx, &mut r),
        "fractional" => fractional_suite(ctx, &mut r),
        other => return Err(Error::Config(format!("unknown suite {other}"))),
    }
    Ok(r)
}

fn spread(v: &[f64]) -> (f64, f64, f64) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    (min, max, if min > 0.0 { max / min } else { f64::INFINITY })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    if s.is_empty() {
        0.0
    } else if s.len() % 2 == 1 {
        s[s.len() / 2]
    } else {
        0.5 * (s[s.len() / 2 - 1] + s[s.len() / 2])
    }
}

// ---- lebesgue -------------------------------------------------------------

pub fn lebesgue_const_oracle(ctx: &Context) -> Result<f64> {
    let mut rng = rng_for(ctx.cfg.seed, "lebesgue.const-oracle");
    let mut worst: f64 = 0.0;
    for p in [0.5, 1.0, 1.5, 2.0] {
        let e = ExponentFunction::constant(p, &ctx.grid)?;
        for _ in 0..ctx.cfg.trials.oracle {
            let f = samples::rough(&ctx.grid, &mut rng);
            let v = luxemburg_norm(&f, &e, ctx.cfg.tolerances.luxemburg)?.value;
            let o = const_lp_norm(&f, p);
            worst = worst.max((v - o).abs() / o);
        }
    }
    Ok(worst)
}

pub fn golden_ratio_example() -> Result<f64> {
    let g = GridBox::line(-1.0, 3.0, 256)?;
    let p = ExponentFunction::from_fn("two-piece", &g, |x| if x[0] <= 1.0 { 1.0 } else { 2.0 })?;
    let f = GridFunction::from_fn(&g, |x| if (0.0..2.0).contains(&x[0]) { 1.0 } else { 0.0 })?;
    Ok(luxemburg_norm(&f, &p, 1e-12)?.value)
}

pub fn unit_modular_worst(ctx: &Context) -> Result<f64> {
    let mut rng = rng_for(ctx.cfg.seed, "lebesgue.unit-modular");
    let exps = [
        ctx.exponent(&ctx.grid)?,
        ExponentFunction::preset("paper-example-2", &ctx.grid)?,
        ExponentFunction::preset("bump:1.5:0.6", &ctx.grid)?,
    ];
    let mut worst: f64 = 0.0;
    for i in 0..ctx.cfg.trials.modular {
        let p = &exps[i % exps.len()];
        let f = samples::rough(&ctx.grid, &mut rng);
        let n = luxemburg_norm(&f, p, ctx.cfg.tolerances.luxemburg)?.value;
        worst = worst.max((modular(&f.scaled(1.0 / n), p) - 1.0).abs());
    }
    Ok(worst)
}

/// `(C on the base grid, C on the refined grid)` for a 6-level tower.
pub fn cube_ratio_constants(ctx: &Context) -> Result<(f64, f64)> {
    let base = Cube::new(&vec![0.25; ctx.grid.dim()], 0.5)?;
    let tower = dyadic_tower(&base, 6);
    let n = if ctx.grid.dim() == 1 { 2048 } else { 256 };
    let mut out = [0.0; 2];
    for (k, points) in [n, 2 * n].into_iter().enumerate() {
        let g = GridBox::new(
            ctx.grid.dim(),
            &vec![-32.0; ctx.grid.dim()],
            &vec![32.0; ctx.grid.dim()],
            points,
        )?;
        out[k] = cube_ratio_check(&ctx.exponent(&g)?, &g, &tower)?.constant;
    }
    Ok((out[0], out[1]))
}

fn lebesgue_suite(ctx: &Context, r: &mut SuiteReport) {
    let tol = ctx.cfg.tolerances.clone();
    let res = lebesgue_const_oracle(ctx).map(|w| {
        r.at_most(
            "const-oracle",
            w,
            tol.oracle,
            "max relative error vs the L^p formula",
        )
    });
    r.guard("const-oracle", res);
    let res = golden_ratio_example().map(|v| {
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        r.at_most(
            "golden-ratio",
            (v - golden).abs(),
            1e-6,
            format!("two-piece norm {v}"),
        );
    });
    r.guard("golden-ratio", res);
    let res = unit_modular_worst(ctx)
        .map(|w| r.at_most("unit-modular", w, tol.modular, "max |rho(f/||f||) - 1|"));
    r.guard("unit-modular", res);
    let res = cube_ratio_constants(ctx).map(|(a, b)| {
        r.metric("cube_ratio_constant", [a, b]);
        r.flag(
            "cube-ratio-finite",
            a.is_finite() && a >= 1.0,
            format!("C = {a}"),
        );
        r.at_most(
            "cube-ratio-drift",
            (b - a).abs() / a,
            tol.cube_ratio_drift,
            format!("C = {a} -> {b} under refinement"),
        );
    });
    r.guard("cube-ratio", res);
}

// ---- maximal --------------------------------------------------------------

fn maximal_suite(ctx: &Context, r: &mut SuiteReport) {
    let res = (|| -> Result<()> {
        let mut rng = rng_for(ctx.cfg.seed, "maximal");
        let cfg = MaximalConfig::default_for(&ctx.grid);
        // pointwise |f| <= M f and boundedness on L^{p(.)} with p_minus > 1
        let p = ExponentFunction::preset("bump:1.5:2.5", &ctx.grid)?;
        let mut dominated = true;
        let mut ratios = Vec::new();
        for _ in 0..10 {
            let f = samples::rough(&ctx.grid, &mut rng);
            let m = hl_maximal(&f, &cfg);
            dominated &= f
                .values()
                .iter()
                .zip(m.values())
                .all(|(a, b)| a.abs() <= b * (1.0 + 1e-12));
            ratios.push(crate::lebesgue::norm(&m, &p)? / crate::lebesgue::norm(&f, &p)?);
        }
        r.flag("dominates", dominated, "|f| <= M f at every node");
        let (lo, hi, _) = spread(&ratios);
        r.metric("maximal_ratio_range", [lo, hi]);
        r.at_most(
            "lp-bound",
            hi,
            ctx.cfg.tolerances.stability,
            "max ||Mf|| / ||f||",
        );
        let family: Vec<GridFunction> = (0..6)
            .map(|_| samples::rough(&ctx.grid, &mut rng))
            .collect();
        let fs = fs_vector_check(&family, 2.0, &p, &cfg)?;
        r.metric("fefferman_stein", &fs);
        r.at_most(
            "fefferman-stein",
            fs.ratio,
            ctx.cfg.tolerances.stability,
            "vector-valued ratio, r = 2",
        );
        Ok(())
    })();
    r.guard("maximal", res);
}

// ---- semigroup ------------------------------------------------------------

fn semigroup_suite(ctx: &Context, r: &mut SuiteReport) {
    let dim = ctx.grid.dim();
    match verify_kernel_decay(&ctx.spec, &KernelProbes::default(), dim, 0) {
        Ok(rep) => {
            r.metric("kernel_decay", &rep);
            r.flag(
                "kernel-decay",
                rep.constant.is_finite(),
                format!("C = {}", rep.constant),
            );
        }
        Err(e @ Error::KernelBound { .. }) => {
            if let Error::KernelBound { t, x, y, detail } = &e {
                r.metric(
                    "kernel_witness",
                    json!({"t": t, "x": x, "y": y, "detail": detail}),
                );
            }
            r.flag("kernel-decay", false, e.to_string());
        }
        Err(e) => r.flag("kernel-decay", false, format!("error: {e}")),
    }
    if ctx.spec.is_gaussian() {
        let res = (|| -> Result<()> {
            let f = GridFunction::from_fn(&ctx.grid, |x| {
                (-x.iter().map(|v| v * v).sum::<f64>()).exp()
            })?;
            let t = 0.5;
            let u = heat_apply(&f, t, &ctx.spec)?;
            let drift = (integrate(&u) - integrate(&f)).abs() / integrate(&f);
            r.at_most(
                "conservation",
                drift,
                1e-8,
                "relative change of the integral under e^{-tL}",
            );
            let periodic = ctx.spec.clone().with_boundary(Boundary::Periodic);
            let k = 2.0 * std::f64::consts::PI * 5.0 / ctx.grid.extent(0);
            let wave = GridFunction::from_fn(&ctx.grid, |x| (k * x[0]).cos())?;
            let out = heat_apply(&wave, t, &periodic)?;
            let err = out.sub(&wave.scaled((-t * k * k).exp())).max_abs();
            r.at_most(
                "heat-symbol",
                err,
                1e-12,
                "periodic mode decays as e^{-t xi^2}",
            );
            Ok(())
        })();
        r.guard("semigroup", res);
    }
}

// ---- tent -----------------------------------------------------------------

/// Per grid size: (max residual, `a_value / tent_norm` over the trials).
pub fn tent_ratios(ctx: &Context, points: usize) -> Result<(f64, Vec<f64>)> {
    let g = GridBox::new(
        ctx.grid.dim(),
        &vec![-4.0; ctx.grid.dim()],
        &vec![4.0; ctx.grid.dim()],
        points,
    )?;
    let ladder = ScaleLadder::new(0.5 * g.h(), 4.0, 32)?;
    let p = ctx.hardy_exponent(&g)?;
    let mut rng = rng_for(ctx.cfg.seed, "tent.inputs");
    let mut worst: f64 = 0.0;
    let mut ratios = Vec::new();
    for _ in 0..ctx.cfg.trials.tent {
        let f = samples::half_space(&g, &ladder, &mut rng);
        let dec = tent_atomic_decompose(&f, &p)?;
        worst = worst.max(dec.residual(&f) / f.l2_dt_over_t());
        ratios.push(dec.a_value / tent_norm(&f, TentExponent::Variable(&p))?);
    }
    Ok((worst, ratios))
}

fn tent_suite(ctx: &Context, r: &mut SuiteReport) {
    let res = (|| -> Result<()> {
        let sizes = if ctx.grid.dim() == 1 {
            [128, 256]
        } else {
            [32, 64]
        };
        let mut maxes = Vec::new();
        for n in sizes {
            let (res, ratios) = tent_ratios(ctx, n)?;
            let (lo, hi, _) = spread(&ratios);
            r.metric(&format!("ratio_range_n{n}"), [lo, hi]);
            r.at_most(
                &format!("residual-n{n}"),
                res,
                ctx.cfg.tolerances.tent_residual,
                "relative T_2^2 residual",
            );
            maxes.push(hi);
        }
        let drift = maxes[1].max(maxes[0]) / maxes[1].min(maxes[0]);
        r.at_most(
            "constant-drift",
            drift,
            ctx.cfg.tolerances.tent_drift,
            "max A / ||f||_T across grid sizes",
        );
        Ok(())
    })();
    r.guard("tent", res);
}

// ---- hardy ----------------------------------------------------------------

/// Max relative error of `pi_L(Q_{t^m} f)` against `f`.
pub fn reproducing_errors(ctx: &Context) -> Result<Vec<f64>> {
    let params = OperatorParams::new(0, 0)?;
    let mut rng = rng_for(ctx.cfg.seed, "hardy.reproducing");
    let mut errs = Vec::new();
    for _ in 0..ctx.cfg.trials.reproducing {
        let count = rng.gen_range(1..5);
        let f = samples::packets(&ctx.grid, &mut rng, count);
        let back = pi_l(&area_field(&f, &ctx.spec, &ctx.ladder)?, params, &ctx.spec)?;
        errs.push(f.sub(&back).l2_norm() / f.l2_norm());
    }
    Ok(errs)
}

/// `||S_L f||_2 / ||f||_2` over band-limited inputs.
pub fn area_ratios(ctx: &Context) -> Result<Vec<f64>> {
    let mut rng = rng_for(ctx.cfg.seed, "hardy.area");
    let mut out = Vec::new();
    for _ in 0..ctx.cfg.trials.reproducing {
        let count = rng.gen_range(1..5);
        let f = samples::packets(&ctx.grid, &mut rng, count);
        out.push(lusin_area(&f, &ctx.spec, &ctx.ladder)?.l2_norm() / f.l2_norm());
    }
    Ok(out)
}

/// `sqrt(omega_n / 8)`, the Plancherel value of `||S_L f|| / ||f||` for `m = 2`.
pub fn area_constant(dim: usize) -> f64 {
    let omega = if dim == 1 { 2.0 } else { std::f64::consts::PI };
    (omega / 8.0).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct MolecularSummary {
    pub residuals: Vec<f64>,
    pub b_over_hardy: Vec<f64>,
    pub molecules: Vec<usize>,
}

pub fn molecular_round_trips(ctx: &Context) -> Result<MolecularSummary> {
    let p = ctx.hardy_exponent(&ctx.grid)?;
    let params = OperatorParams::for_exponent(&p, ctx.grid.dim(), ctx.spec.m, None)?;
    let mut rng = rng_for(ctx.cfg.seed, "hardy.molecular");
    let mut out = MolecularSummary {
        residuals: Vec::new(),
        b_over_hardy: Vec::new(),
        molecules: Vec::new(),
    };
    for _ in 0..ctx.cfg.trials.molecular {
        let count = rng.gen_range(1..4);
        let f = samples::packets(&ctx.grid, &mut rng, count);
        let dec = molecular_decompose(&f, &p, &ctx.spec, params, &ctx.ladder)?;
        out.residuals.push(dec.residual);
        out.b_over_hardy
            .push(dec.b_value / hardy_norm(&f, &p, &ctx.spec, &ctx.ladder)?);
        out.molecules.push(dec.len());
    }
    Ok(out)
}

/// Molecules `pi_L(a)` of normalized tent atoms on random cubes.
pub fn random_molecules(
    ctx: &Context,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> Result<Vec<Molecule>> {
    let p = ctx.hardy_exponent(&ctx.grid)?;
    let params = OperatorParams::for_exponent(&p, ctx.grid.dim(), ctx.spec.m, None)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let cube = samples::cube(&ctx.grid, rng, 0.25, 2.0);
        let atom = TentAtom::tent_indicator(cube, &ctx.grid, &ctx.ladder, &p, &[2.0])?;
        out.push(Molecule::from_atom(atom, params, &ctx.spec)?);
    }
    Ok(out)
}

/// Synthesis ratios `||sum lambda alpha||_{H_L} / B` for growing families.
pub fn synthesis_ratios(ctx: &Context) -> Result<Vec<(usize, f64)>> {
    let p = ctx.hardy_exponent(&ctx.grid)?;
    let mut rng = rng_for(ctx.cfg.seed, "hardy.synthesis");
    let pool = random_molecules(ctx, &mut rng, 16)?;
    let lambdas: Vec<Complex64> = (0..pool.len())
        .map(|_| {
            Complex64::new(
                rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                0.0,
            )
        })
        .collect();
    let mut out = Vec::new();
    for size in [1usize, 2, 4, 8, 16] {
        out.push((
            size,
            synthesis_ratio(&lambdas[..size], &pool[..size], &p, &ctx.spec, &ctx.ladder)?,
        ));
    }
    Ok(out)
}

/// Annulus constants `k = 1..3` over a molecule family.
pub fn molecule_decay(ctx: &Context) -> Result<Vec<f64>> {
    let p = ctx.hardy_exponent(&ctx.grid)?;
    let norms = CubeNorms::new(&p, &ctx.grid);
    let mut rng = rng_for(ctx.cfg.seed, "hardy.decay");
    let mut out = Vec::new();
    for m in random_molecules(ctx, &mut rng, 6)? {
        let c = m.annulus_constants(&norms, molecule_delta(&ctx.spec), 3)?;
        out.push(c.into_iter().flatten().fold(0.0, f64::max));
    }
    Ok(out)
}

/// Hardy norms of Haar atoms over translations and dyadic sides 1/4..4.
pub fn embedding_values(ctx: &Context) -> Result<Vec<f64>> {
    let p = ctx.hardy_exponent(&ctx.grid)?;
    let dim = ctx.grid.dim();
    let mut out = Vec::new();
    for side in [0.25, 0.5, 1.0, 2.0, 4.0] {
        for shift in [-1.5, 0.0, 1.0] {
            let cube = Cube::new(&vec![shift; dim], side)?;
            let a = ClassicalAtom::haar(&ctx.grid, cube, &p, 2.0)?;
            out.push(classical_atom_embedding_check(
                &a,
                &p,
                &ctx.spec,
                &ctx.ladder,
            )?);
        }
    }
    Ok(out)
}

fn hardy_suite(ctx: &Context, r: &mut SuiteReport) {
    let tol = ctx.cfg.tolerances.clone();
    let res = compute_cms(2.0, 0, 0).map(|c| {
        r.at_most(
            "cms",
            (c - 14.4).abs() / 14.4,
            1e-8,
            format!("C_(2,0) = {c}"),
        )
    });
    r.guard("cms", res);
    if !ctx.spec.is_gaussian() || ctx.spec.m != 2.0 {
        r.flag(
            "gaussian-only",
            true,
            "Plancherel and reproducing checks need the Gaussian spec",
        );
        return;
    }
    let res = reproducing_errors(ctx).map(|e| {
        let (_, hi, _) = spread(&e);
        r.metric("reproducing_errors", &e);
        r.at_most(
            "reproducing",
            hi,
            tol.reproducing,
            "max ||pi_L(Q f) - f|| / ||f||",
        );
    });
    r.guard("reproducing", res);
    let res = area_ratios(ctx).map(|v| {
        let c = area_constant(ctx.grid.dim());
        let worst = v.iter().map(|x| (x / c - 1.0).abs()).fold(0.0, f64::max);
        r.metric("area_ratios", &v);
        r.at_most(
            "area-l2",
            worst,
            tol.area_l2,
            format!("relative deviation from {c}"),
        );
    });
    r.guard("area-l2", res);
    let res = molecular_round_trips(ctx).map(|s| {
        let (_, worst, _) = spread(&s.residuals);
        let (_, _, b_spread) = spread(&s.b_over_hardy);
        r.at_most(
            "molecular-residual",
            worst,
            tol.molecular_residual,
            "max ||f - sum lambda alpha|| / ||f||",
        );
        r.at_most(
            "b-over-hardy-spread",
            b_spread,
            tol.stability,
            "max/min of B / ||f||_H",
        );
        r.metric("molecular", &s);
    });
    r.guard("molecular", res);
    let res = synthesis_ratios(ctx).map(|v| {
        let vals: Vec<f64> = v.iter().map(|x| x.1).collect();
        let (_, _, s) = spread(&vals);
        r.metric("synthesis_ratios", &v);
        r.at_most(
            "synthesis-stability",
            s,
            tol.stability,
            "max/min of ||sum lambda alpha||_H / B over family sizes",
        );
    });
    r.guard("synthesis", res);
    let res = molecule_decay(ctx).map(|v| {
        let (_, hi, s) = spread(&v);
        r.metric("annulus_constants", &v);
        r.flag(
            "molecule-decay",
            hi.is_finite(),
            format!("max constant {hi}"),
        );
        r.at_most(
            "molecule-decay-uniform",
            s,
            tol.stability * tol.stability,
            "max/min annulus constant",
        );
    });
    r.guard("molecule-decay", res);
    let res = embedding_values(ctx).map(|v| {
        let (_, _, s) = spread(&v);
        r.metric("embedding_values", &v);
        r.at_most(
            "embedding",
            s,
            tol.embedding_spread,
            "max/min Hardy norm of normalized atoms",
        );
    });
    r.guard("embedding", res);
}

// ---- bmo ------------------------------------------------------------------

/// Worst `lhs / rhs` of the tent duality inequality over random pairs.
pub fn duality_worst(ctx: &Context) -> Result<(f64, usize)> {
    let g = GridBox::new(
        ctx.grid.dim(),
        &vec![-4.0; ctx.grid.dim()],
        &vec![4.0; ctx.grid.dim()],
        if ctx.grid.dim() == 1 { 128 } else { 32 },
    )?;
    let ladder = ScaleLadder::new(0.5 * g.h(), 4.0, 24)?;
    let mut rng = rng_for(ctx.cfg.seed, "bmo.duality");
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..ctx.cfg.trials.duality {
        let mut f = samples::half_space(&g, &ladder, &mut rng);
        let h = samples::half_space(&g, &ladder, &mut rng);
        if rng.gen_bool(0.5) {
            // rough component
            let vals: Vec<f64> = f
                .values()
                .iter()
                .map(|&v| {
                    if v != 0.0 {
                        v + rng.gen_range(-0.2..0.2)
                    } else {
                        0.0
                    }
                })
                .collect();
            f = HalfSpaceFunction::new(g.clone(), ladder.clone(), vals)?;
        }
        let rep = tent_duality_check(&f, &h)?;
        if !rep.holds {
            violations += 1;
        }
        if rep.rhs > 0.0 {
            worst = worst.max(rep.lhs / rep.rhs);
        }
    }
    Ok((worst, violations))
}

fn smooth_random(grid: &GridBox, rng: &mut ChaCha8Rng) -> GridFunction {
    let modes: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.3..4.0),
                rng.gen_range(0.0..6.28),
            )
        })
        .collect();
    GridFunction::from_fn(grid, |x| {
        modes
            .iter()
            .map(|(a, k, ph)| a * (k * x[0] + ph).sin())
            .sum()
    })
    .expect("finite samples")
}

/// Carleson-to-BMO ratios at two family depths.
pub fn carleson_ratios(ctx: &Context) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = ctx.hardy_exponent(&ctx.grid)?;
    let params = OperatorParams::for_exponent(&p, ctx.grid.dim(), ctx.spec.m, None)?;
    let depth = DyadicFamily::max_depth(&ctx.grid).min(if ctx.grid.dim() == 1 { 6 } else { 4 });
    let shallow = DyadicFamily::new(&ctx.grid, depth - 1)?;
    let deep = DyadicFamily::new(&ctx.grid, depth)?;
    let mut rng = rng_for(ctx.cfg.seed, "bmo.carleson");
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..ctx.cfg.trials.carleson {
        let f = smooth_random(&ctx.grid, &mut rng);
        for (fam, out) in [(&shallow, &mut a), (&deep, &mut b)] {
            let c = carleson_norm(&f, &p, params, &ctx.spec, fam, &ctx.ladder)?;
            out.push(c / bmo_norm(&f, &p, params.s0, &ctx.spec, fam)?);
        }
    }
    Ok((a, b))
}

/// Relative gaps of the pairing identity and the duality ratios.
pub fn pairing_checks(ctx: &Context) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = ctx.hardy_exponent(&ctx.grid)?;
    let params = OperatorParams::for_exponent(&p, ctx.grid.dim(), ctx.spec.m, None)?;
    let family = DyadicFamily::new(&ctx.grid, DyadicFamily::max_depth(&ctx.grid).min(5))?;
    let mut rng = rng_for(ctx.cfg.seed, "bmo.pairing");
    let molecules = random_molecules(ctx, &mut rng, ctx.cfg.trials.pairing)?;
    let (mut gaps, mut ratios) = (Vec::new(), Vec::new());
    for m in &molecules {
        let g = samples::packets(&ctx.grid, &mut rng, 2);
        let (lhs, rhs) = pairing_via_tent(m, &g, &ctx.spec, params)?;
        gaps.push((lhs - rhs).abs() / lhs.abs().max(1e-300));
        let h = smooth_random(&ctx.grid, &mut rng);
        ratios.push(duality_ratio(
            &m.values,
            &h,
            &p,
            params.s0,
            &ctx.spec,
            &family,
            &ctx.ladder,
        )?);
    }
    Ok((gaps, ratios))
}

fn bmo_suite(ctx: &Context, r: &mut SuiteReport) {
    let tol = ctx.cfg.tolerances.clone();
    let res = (|| -> Result<()> {
        let p = ctx.hardy_exponent(&ctx.grid)?;
        let family = DyadicFamily::new(&ctx.grid, DyadicFamily::max_depth(&ctx.grid).min(5))?;
        let c = GridFunction::constant(&ctx.grid, 0.7);
        let v = bmo_norm(&c, &p, 0, &ctx.spec, &family)?;
        r.flag("constant-zero", v == 0.0, format!("bmo_norm(0.7) = {v}"));
        Ok(())
    })();
    r.guard("constant-zero", res);
    let res = duality_worst(ctx).map(|(w, viol)| {
        r.metric("duality_worst_ratio", w);
        r.at_most(
            "tent-duality",
            viol as f64,
            0.0,
            format!("violations over {} pairs", ctx.cfg.trials.duality),
        );
    });
    r.guard("tent-duality", res);
    if !ctx.spec.is_gaussian() {
        r.flag(
            "gaussian-only",
            true,
            "Carleson and pairing checks need the Gaussian spec",
        );
        return;
    }
    let res = carleson_ratios(ctx).map(|(a, b)| {
        let (_, ha, _) = spread(&a);
        let (_, hb, _) = spread(&b);
        r.metric("carleson_over_bmo", json!({"shallow": a, "deep": b}));
        r.at_most("carleson-bound", hb, tol.stability, "max Carleson / BMO");
        r.at_most(
            "carleson-depth-drift",
            (hb - ha).abs() / hb,
            0.10,
            format!("C = {ha} -> {hb} with one more generation"),
        );
    });
    r.guard("carleson", res);
    let res = pairing_checks(ctx).map(|(gaps, ratios)| {
        let (_, worst, _) = spread(&gaps);
        let (_, hi, _) = spread(&ratios);
        r.metric("pairing_gaps", &gaps);
        r.metric("duality_ratios", &ratios);
        r.at_most(
            "pairing-identity",
            worst,
            tol.pairing,
            "max |lhs - rhs| / |lhs|",
        );
        r.at_most(
            "pairing-bound",
            hi,
            tol.stability,
            "max |<f,g>| / (||f||_H ||g||_BMO)",
        );
    });
    r.guard("pairing", res);
}

// ---- fractional -----------------------------------------------------------

/// Worst relative error of `L^{-gamma}` against `|xi|^{-2 gamma}` on
/// periodic modes in the middle half of the band.
pub fn multiplier_error(ctx: &Context) -> Result<f64> {
    let n = ctx.grid.points_per_axis();
    let g = GridBox::line(0.0, 2.0 * std::f64::consts::PI, n)?;
    let spec = SemigroupSpec::gaussian().with_boundary(Boundary::Periodic);
    let mut worst: f64 = 0.0;
    for gamma in [0.1, 0.25, 0.45] {
        let params = FractionalParams::new(gamma, 2.0, 1)?;
        let (lo, hi) = (n / 8, 3 * n / 8);
        for k in [lo, (lo + hi) / 2, hi] {
            let k = k as f64;
            let f = GridFunction::from_fn(&g, |x| (k * x[0]).cos())?;
            let out = fractional_apply(&f, params, &spec)?;
            let want = f.scaled(k.powf(-2.0 * gamma));
            worst = worst.max(out.sub(&want).l2_norm() / want.l2_norm());
        }
    }
    Ok(worst)
}

/// Haar atoms with sides cycling through 1/4..2 and centres sweeping
/// `[-2, 2]`.
pub fn haar_family(
    grid: &GridBox,
    p: &ExponentFunction,
    members: usize,
) -> Result<Vec<GridFunction>> {
    let sides = [0.25, 0.5, 1.0, 2.0];
    (0..members)
        .map(|i| {
            let shift = -2.0 + 4.0 * (i as f64) / (members.max(2) - 1) as f64;
            let cube = Cube::new(&vec![shift; grid.dim()], sides[i % sides.len()])?;
            Ok(ClassicalAtom::haar(grid, cube, p, 2.0)?.values)
        })
        .collect()
}

/// Ratio report of `L^{-gamma}` over a Haar family.
pub fn fractional_family_with(
    ctx: &Context,
    gamma: f64,
    p: &ExponentFunction,
    members: usize,
) -> Result<crate::fractional::FractionalReport> {
    let params = FractionalParams::new(gamma, ctx.spec.m, ctx.grid.dim())?;
    let family = haar_family(&ctx.grid, p, members)?;
    fractional_hardy_check(&family, p, params, &ctx.spec, &ctx.ladder)
}

pub fn fractional_family(ctx: &Context) -> Result<crate::fractional::FractionalReport> {
    let p = ExponentFunction::constant(1.0, &ctx.grid)?;
    fractional_family_with(ctx, 0.125, &p, ctx.cfg.trials.fractional)
}

/// Cube-sum ratios over random families.
pub fn cube_sum_ratios(ctx: &Context) -> Result<Vec<f64>> {
    let p = ctx.hardy_exponent(&ctx.grid)?;
    let mut rng = rng_for(ctx.cfg.seed, "fractional.cubes");
    let delta = 0.25 * ctx.grid.dim() as f64;
    let mut out = Vec::new();
    for _ in 0..ctx.cfg.trials.cube_families {
        let count = rng.gen_range(1..8);
        let cubes: Vec<Cube> = (0..count)
            .map(|_| samples::cube(&ctx.grid, &mut rng, 0.1, 4.0))
            .collect();
        let lambdas: Vec<f64> = (0..count).map(|_| rng.gen_range(-2.0..2.0)).collect();
        out.push(cube_sum_ratio(&lambdas, &cubes, &p, delta)?);
    }
    Ok(out)
}

fn fractional_suite(ctx: &Context, r: &mut SuiteReport) {
    let tol = ctx.cfg.tolerances.clone();
    let res = multiplier_error(ctx).map(|e| {
        r.at_most(
            "multiplier",
            e,
            tol.multiplier,
            "max relative error vs |xi|^{-2 gamma}",
        )
    });
    r.guard("multiplier", res);
    if ctx.spec.is_gaussian() && ctx.spec.boundary == Boundary::Zero {
        let res = fractional_family(ctx).map(|rep| {
            r.at_most(
                "hardy-ratio",
                rep.max_ratio / rep.median_ratio,
                tol.stability,
                "max ratio over the family median",
            );
            r.at_most(
                "growth-trend",
                rep.growth_trend,
                0.5,
                "relative least-squares trend of the ratio",
            );
            r.metric("fractional_family", &rep);
        });
        r.guard("hardy-ratio", res);
    }
    let res = cube_sum_ratios(ctx).map(|v| {
        let (_, hi, _) = spread(&v);
        let med = median(&v);
        r.metric("cube_sum_ratios", [med, hi]);
        r.at_most(
            "cube-sums",
            hi / med,
            tol.stability,
            "max cube-sum ratio over the median",
        );
    });
    r.guard("cube-sums", res);
}
