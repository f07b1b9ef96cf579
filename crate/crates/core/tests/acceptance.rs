//! Acceptance criteria, one line each. Exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use varhardy::bmo::bmo_norm;
use varhardy::cli::run_suite;
use varhardy::exponent::ExponentFunction;
use varhardy::grid::{DyadicFamily, GridFunction};
use varhardy::hardy::compute_cms;
use varhardy::suites::{self, Context, SuiteConfig};
use varhardy::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        passed,
        detail: detail.into(),
    })
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn c1(ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let worst = suites::lebesgue_const_oracle(ctx)?;
    let golden = suites::golden_ratio_example()?;
    let err = (golden - (1.0 + 5f64.sqrt()) / 2.0).abs();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-6 && err < 1e-6 && secs < 10.0,
        format!("max rel err {worst:.2e}, golden {golden:.12} ({err:.1e}), {secs:.2}s"),
    )
}

fn c2(ctx: &Context) -> Result<Outcome> {
    let worst = suites::unit_modular_worst(ctx)?;
    outcome(
        worst < 1e-6,
        format!(
            "max |rho - 1| = {worst:.2e} over {} inputs",
            ctx.cfg.trials.modular
        ),
    )
}

fn c3(ctx: &Context) -> Result<Outcome> {
    let (a, b) = suites::cube_ratio_constants(ctx)?;
    let drift = (b - a).abs() / a;
    outcome(
        a.is_finite() && drift < 0.10,
        format!("C = {a:.6} -> {b:.6}, drift {:.2}%", 100.0 * drift),
    )
}

fn c4(ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let cms = compute_cms(2.0, 0, 0)?;
    let errs = suites::reproducing_errors(ctx)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = max(&errs);
    outcome(
        (cms - 72.0 / 5.0).abs() < 1e-8 && worst < 0.01 && secs < 60.0,
        format!(
            "C = {cms:.10}, max rel err {worst:.2e} over {} inputs, {secs:.1}s",
            errs.len()
        ),
    )
}

fn c5(ctx: &Context) -> Result<Outcome> {
    let v = suites::area_ratios(ctx)?;
    let c = suites::area_constant(ctx.grid.dim());
    let worst = v.iter().map(|x| (x / c - 1.0).abs()).fold(0.0, f64::max);
    outcome(
        worst < 0.02,
        format!("ratio in [{:.6}, {:.6}] vs {c}", min(&v), max(&v)),
    )
}

fn c6(ctx: &Context) -> Result<Outcome> {
    let mut highs = Vec::new();
    let mut worst: f64 = 0.0;
    for n in [128, 256] {
        let (res, ratios) = suites::tent_ratios(ctx, n)?;
        worst = worst.max(res);
        highs.push(max(&ratios));
    }
    let drift = max(&highs) / min(&highs);
    outcome(
        worst < 1e-6 && drift < 2.0,
        format!(
            "residual {worst:.1e}, max A/||f||_T {:.4} -> {:.4} (drift {drift:.3}x)",
            highs[0], highs[1]
        ),
    )
}

fn c7(ctx: &Context) -> Result<Outcome> {
    let s = suites::molecular_round_trips(ctx)?;
    let worst = max(&s.residuals);
    let syn = suites::synthesis_ratios(ctx)?;
    let vals: Vec<f64> = syn.iter().map(|x| x.1).collect();
    let spread = max(&vals) / min(&vals);
    outcome(
        worst < 0.02 && spread < 10.0,
        format!(
            "residual {worst:.2e}, synthesis C in [{:.4}, {:.4}] over family sizes 1..16",
            min(&vals),
            max(&vals)
        ),
    )
}

fn c8(ctx: &Context) -> Result<Outcome> {
    let (worst, violations) = suites::duality_worst(ctx)?;
    outcome(
        violations == 0,
        format!(
            "{violations} violations over {} pairs, max lhs/rhs {worst:.4}",
            ctx.cfg.trials.duality
        ),
    )
}

fn c9(ctx: &Context) -> Result<Outcome> {
    let p = ExponentFunction::preset(&ctx.cfg.hardy_exponent, &ctx.grid)?;
    let family = DyadicFamily::new(&ctx.grid, 5)?;
    let zero = bmo_norm(
        &GridFunction::constant(&ctx.grid, 3.25),
        &p,
        0,
        &ctx.spec,
        &family,
    )?;
    let (a, b) = suites::carleson_ratios(ctx)?;
    let (ha, hb) = (max(&a), max(&b));
    let drift = (hb - ha).abs() / hb;
    outcome(
        zero == 0.0 && hb.is_finite() && drift < 0.10,
        format!("bmo(const) = {zero}, C = {ha:.4} -> {hb:.4} with one more generation"),
    )
}

fn c10(ctx: &Context) -> Result<Outcome> {
    let (gaps, ratios) = suites::pairing_checks(ctx)?;
    let worst = max(&gaps);
    let hi = max(&ratios);
    outcome(
        worst < 0.02 && hi < 10.0,
        format!("max gap {worst:.2e}, max |<f,g>|/(H BMO) {hi:.4}"),
    )
}

fn c11(ctx: &Context) -> Result<Outcome> {
    let mult = suites::multiplier_error(ctx)?;
    let rep = suites::fractional_family(ctx)?;
    let cubes = suites::cube_sum_ratios(ctx)?;
    let cube_hi = max(&cubes);
    let mut sorted = cubes.clone();
    sorted.sort_by(f64::total_cmp);
    let cube_med = sorted[sorted.len() / 2];
    let ok = mult < 1e-3
        && rep.growth_trend.abs() < 0.5
        && rep.max_ratio / rep.median_ratio < 10.0
        && cube_hi / cube_med < 10.0;
    outcome(
        ok,
        format!(
            "multiplier err {mult:.1e}, trend {:.3} over {} members, cube-sum ratio in [{:.4}, {cube_hi:.4}] on {} families",
            rep.growth_trend,
            rep.ratios.len(),
            sorted[0],
            cubes.len()
        ),
    )
}

fn c12(ctx: &Context) -> Result<Outcome> {
    let v = suites::embedding_values(ctx)?;
    let spread = max(&v) / min(&v);
    outcome(
        spread < 10.0,
        format!(
            "hardy norms in [{:.4}, {:.4}], max/min {spread:.3}",
            min(&v),
            max(&v)
        ),
    )
}

fn c13(_: &Context) -> Result<Outcome> {
    let dir = std::env::temp_dir().join(format!("varhardy-acceptance-{}", std::process::id()));
    let cfg = SuiteConfig::default();
    let start = Instant::now();
    let a = run_suite(&cfg, &dir.join("a"))?;
    let b = run_suite(&cfg, &dir.join("b"))?;
    let elapsed = start.elapsed();
    let mut identical = true;
    for name in cfg
        .suites
        .iter()
        .map(|s| format!("{s}.json"))
        .chain(["summary.csv".to_string()])
    {
        let x = std::fs::read(dir.join("a").join(&name))?;
        let y = std::fs::read(dir.join("b").join(&name))?;
        identical &= x == y;
    }
    let _ = std::fs::remove_dir_all(&dir);
    let all_pass = a.iter().chain(&b).all(|r| r.passed());
    outcome(
        identical && elapsed < Duration::from_secs(15 * 60),
        format!(
            "reports identical: {identical}, suites passing: {all_pass}, two runs in {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    let cfg = SuiteConfig::default();
    let ctx = match Context::new(&cfg) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cannot build the default context: {e}");
            std::process::exit(1);
        }
    };
    type Criterion = fn(&Context) -> Result<Outcome>;
    let criteria: [(&str, Criterion); 13] = [
        ("luxemburg oracle", c1),
        ("unit modular", c2),
        ("cube ratio", c3),
        ("reproducing formula", c4),
        ("area L2 identity", c5),
        ("tent decomposition", c6),
        ("molecular round trip", c7),
        ("tent duality", c8),
        ("carleson bound", c9),
        ("pairing identity", c10),
        ("fractional", c11),
        ("classical embedding", c12),
        ("determinism", c13),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (passed, detail) = match f(&ctx) {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "C{:<2} {:<22} {}  {detail} [{:.1}s]",
            i + 1,
            name,
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
