//! Command-line front end: suite orchestration and single-operation verbs.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use crate::bmo::{bmo_report, carleson_density, carleson_measure};
use crate::error::{Error, Result};
use crate::exponent::ExponentFunction;
use crate::fractional::{fractional_apply, fractional_hardy_check, FractionalParams};
use crate::grid::io::{
    load_grid_function, load_half_space, save_grid_function, save_half_space, sniff, FileKind,
};
use crate::grid::{Cube, DyadicFamily, GridBox, GridFunction, HalfSpaceFunction, ScaleLadder};
use crate::hardy::{
    area_field, classical_atom_embedding_check, hardy_norm, meta_path, molecular_decompose,
    ClassicalAtom, MolecularDecomposition,
};
use crate::lebesgue::{luxemburg_norm, modular, DEFAULT_TOL};
use crate::semigroup::{Boundary, OperatorParams, SemigroupConfig, SemigroupSpec};
use crate::suites::{self, rng_for, Context, SuiteConfig, SuiteReport};
use crate::tent::{tent_atomic_decompose, TentDecomposition};

pub const OUT_ENV: &str = "VARHARDY_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "varhardy",
    version,
    about = "Variable-exponent Hardy spaces of semigroup generators"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the certification suites.
    Run(RunArgs),
    /// Luxemburg norm of a grid function.
    Norm(NormArgs),
    /// Modular of a grid function.
    Modular(NormArgs),
    /// Hardy quasi-norm (Luxemburg norm of the Lusin area function).
    HardyNorm(HardyArgs),
    /// Tent decomposition of a half-space file or molecular decomposition of a grid file.
    Decompose(DecomposeArgs),
    /// Rebuild the function from a decomposition bundle.
    Reconstruct(ReconstructArgs),
    /// Apply the negative fractional power of the generator.
    FracApply(FracArgs),
    /// BMO norm over the dyadic family of the grid.
    BmoNorm(BmoArgs),
    /// Carleson norm of the measure built from a grid function.
    Carleson(BmoArgs),
    /// Hardy norm of a normalized Haar atom on a cube.
    EmbedCheck(EmbedArgs),
    /// Fractional-integral ratio report over a Haar atom family.
    FracSuite(FracSuiteArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config; flags override it.
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: $VARHARDY_OUT, else ./varhardy-out).
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Suites to run; repeat the flag. `--suite none` runs nothing.
    #[arg(long = "suite")]
    pub suites: Vec<String>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Args)]
pub struct SemigroupArgs {
    /// Semigroup spec as a TOML file (default: Gaussian).
    #[arg(long)]
    pub semigroup: Option<PathBuf>,
    /// Boundary treatment of the Gaussian spectral route.
    #[arg(long, value_parser = ["zero", "periodic"])]
    pub boundary: Option<String>,
}

impl SemigroupArgs {
    fn spec(&self) -> Result<SemigroupSpec> {
        let mut spec = match &self.semigroup {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                let cfg: SemigroupConfig =
                    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
                SemigroupSpec::from_config(&cfg)?
            }
            None => SemigroupSpec::gaussian(),
        };
        match self.boundary.as_deref() {
            Some("periodic") => spec = spec.with_boundary(Boundary::Periodic),
            Some(_) => spec = spec.with_boundary(Boundary::Zero),
            None => {}
        }
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct LadderArgs {
    #[arg(long)]
    pub t_min: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub levels: usize,
}

impl LadderArgs {
    fn ladder(&self, grid: &GridBox, spec: &SemigroupSpec) -> Result<ScaleLadder> {
        suites::LadderConfig {
            t_min: self.t_min,
            t_max: self.t_max,
            levels: self.levels,
        }
        .build(grid, spec)
    }
}

#[derive(Debug, Args)]
pub struct NormArgs {
    /// Exponent preset or expression in x.
    #[arg(long)]
    pub p: String,
    pub input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct HardyArgs {
    #[arg(long)]
    pub p: String,
    pub input: PathBuf,
    #[command(flatten)]
    pub semigroup: SemigroupArgs,
    #[command(flatten)]
    pub ladder: LadderArgs,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub p: String,
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Cancellation order of the molecules (default: the smallest admissible).
    #[arg(long)]
    pub s: Option<usize>,
    #[command(flatten)]
    pub semigroup: SemigroupArgs,
    #[command(flatten)]
    pub ladder: LadderArgs,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FracArgs {
    #[arg(long)]
    pub gamma: f64,
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub semigroup: SemigroupArgs,
}

#[derive(Debug, Args)]
pub struct BmoArgs {
    #[arg(long)]
    pub p: String,
    pub input: PathBuf,
    /// Generations of the dyadic family below the top cube.
    #[arg(long)]
    pub depth: Option<usize>,
    #[command(flatten)]
    pub semigroup: SemigroupArgs,
    #[command(flatten)]
    pub ladder: LadderArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = -8.0, allow_hyphen_values = true)]
    pub lower: f64,
    #[arg(long, default_value_t = 8.0, allow_hyphen_values = true)]
    pub upper: f64,
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
}

impl GridArgs {
    fn grid(&self) -> Result<GridBox> {
        suites::GridConfig {
            dim: self.dim,
            lower: self.lower,
            upper: self.upper,
            points: self.points,
        }
        .build()
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub p: String,
    /// Cube centre, repeated on every axis.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub center: f64,
    #[arg(long)]
    pub side: f64,
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub semigroup: SemigroupArgs,
    #[command(flatten)]
    pub ladder: LadderArgs,
}

#[derive(Debug, Args)]
pub struct FracSuiteArgs {
    #[arg(long)]
    pub gamma: f64,
    #[arg(long, default_value = "const:1")]
    pub p: String,
    #[arg(long, default_value_t = 20)]
    pub members: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub semigroup: SemigroupArgs,
    #[command(flatten)]
    pub ladder: LadderArgs,
}

/// Process exit status of a finished command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Failed = 1,
    Usage = 2,
}

pub fn main_with(cli: Cli) -> Status {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("varhardy: {e}");
            return Status::Usage;
        }
    }
    match dispatch(cli.command) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("varhardy: {e}");
            match e {
                Error::Format(_) | Error::Config(_) | Error::Io(_) => Status::Usage,
                _ => Status::Failed,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<Status> {
    let mut out = std::io::stdout().lock();
    match cmd {
        Command::Run(args) => {
            let cfg = run_config(&args)?;
            let dir = cfg
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("varhardy-out"));
            let outcome = run_suite(&cfg, &dir)?;
            for r in &outcome {
                let status = if r.passed() { "ok" } else { "FAILED" };
                writeln!(
                    out,
                    "{:<12} {:>3} checks  {status}",
                    r.suite,
                    r.checks.len()
                )?;
            }
            let failed: Vec<&str> = outcome.iter().flat_map(|r| r.failures()).collect();
            if failed.is_empty() {
                Ok(Status::Ok)
            } else {
                eprintln!("failed checks: {}", failed.join(", "));
                Ok(Status::Failed)
            }
        }
        Command::Norm(a) => {
            let f = load_grid_function(&a.input)?;
            let p = ExponentFunction::preset(&a.p, f.grid())?;
            writeln!(out, "{}", luxemburg_norm(&f, &p, a.tol)?.value)?;
            Ok(Status::Ok)
        }
        Command::Modular(a) => {
            let f = load_grid_function(&a.input)?;
            let p = ExponentFunction::preset(&a.p, f.grid())?;
            writeln!(out, "{}", modular(&f, &p))?;
            Ok(Status::Ok)
        }
        Command::HardyNorm(a) => {
            let f = load_grid_function(&a.input)?;
            let spec = a.semigroup.spec()?;
            let p = ExponentFunction::preset(&a.p, f.grid())?;
            let ladder = a.ladder.ladder(f.grid(), &spec)?;
            writeln!(out, "{}", hardy_norm(&f, &p, &spec, &ladder)?)?;
            Ok(Status::Ok)
        }
        Command::Decompose(a) => {
            let spec = a.semigroup.spec()?;
            match sniff(&a.input)? {
                FileKind::HalfSpaceBinary | FileKind::HalfSpaceCsv => {
                    let f = load_half_space(&a.input)?;
                    let p = ExponentFunction::preset(&a.p, f.grid())?;
                    let dec = tent_atomic_decompose(&f, &p)?;
                    dec.save(&a.out)?;
                    let res = dec.residual(&f) / f.l2_dt_over_t().max(f64::MIN_POSITIVE);
                    let summary = serde_json::json!({"kind": "tent", "atoms": dec.atoms.len(), "a_value": dec.a_value, "residual": res});
                    writeln!(out, "{summary}")?;
                }
                FileKind::GridBinary | FileKind::GridCsv => {
                    let f = load_grid_function(&a.input)?;
                    let p = ExponentFunction::preset(&a.p, f.grid())?;
                    let params = OperatorParams::for_exponent(&p, f.grid().dim(), spec.m, a.s)?;
                    let ladder = a.ladder.ladder(f.grid(), &spec)?;
                    let dec = molecular_decompose(&f, &p, &spec, params, &ladder)?;
                    dec.save(&a.out, &spec)?;
                    let summary = serde_json::json!({"kind": "molecular", "molecules": dec.len(), "b_value": dec.b_value, "residual": dec.residual});
                    writeln!(out, "{summary}")?;
                }
            }
            Ok(Status::Ok)
        }
        Command::Reconstruct(a) => {
            if meta_path(&a.input).exists() {
                let (dec, _) = MolecularDecomposition::load(&a.input)?;
                save_grid_function(&a.out, &dec.reconstruct())?;
            } else {
                let dec = TentDecomposition::load(&a.input)?;
                save_half_space(&a.out, &dec.reconstruct())?;
            }
            Ok(Status::Ok)
        }
        Command::FracApply(a) => {
            let f = load_grid_function(&a.input)?;
            let spec = a.semigroup.spec()?;
            let params = FractionalParams::new(a.gamma, spec.m, f.grid().dim())?;
            save_grid_function(&a.out, &fractional_apply(&f, params, &spec)?)?;
            Ok(Status::Ok)
        }
        Command::BmoNorm(a) => {
            let (f, p, spec, _, family) = bmo_inputs(&a)?;
            let params = OperatorParams::for_exponent(&p, f.grid().dim(), spec.m, None)?;
            let rep = bmo_report(&f, &p, params.s0, &spec, &family)?;
            writeln!(
                out,
                "{}",
                serde_json::to_string(&rep).map_err(|e| Error::Format(e.to_string()))?
            )?;
            Ok(Status::Ok)
        }
        Command::Carleson(a) => {
            let (f, p, spec, ladder, family) = bmo_inputs(&a)?;
            let params = OperatorParams::for_exponent(&p, f.grid().dim(), spec.m, None)?;
            let c = carleson_measure(carleson_density(&f, params, &spec, &ladder)?, &p, &family)?;
            let summary =
                serde_json::json!({"value": c.norm_value, "attaining_cube": c.attaining_cube});
            writeln!(out, "{summary}")?;
            Ok(Status::Ok)
        }
        Command::EmbedCheck(a) => {
            let grid = a.grid.grid()?;
            let spec = a.semigroup.spec()?;
            let p = ExponentFunction::preset(&a.p, &grid)?;
            let ladder = a.ladder.ladder(&grid, &spec)?;
            let cube = Cube::new(&vec![a.center; grid.dim()], a.side)?;
            let atom = ClassicalAtom::haar(&grid, cube, &p, a.q)?;
            let value = classical_atom_embedding_check(&atom, &p, &spec, &ladder)?;
            let summary = serde_json::json!({"value": value, "cube": cube, "q": a.q, "d": atom.d});
            writeln!(out, "{summary}")?;
            Ok(Status::Ok)
        }
        Command::FracSuite(a) => {
            let grid = a.grid.grid()?;
            let spec = a.semigroup.spec()?;
            let p = ExponentFunction::preset(&a.p, &grid)?;
            let ladder = a.ladder.ladder(&grid, &spec)?;
            let params = FractionalParams::new(a.gamma, spec.m, grid.dim())?;
            let family = suites::haar_family(&grid, &p, a.members)?;
            let rep = fractional_hardy_check(&family, &p, params, &spec, &ladder)?;
            writeln!(
                out,
                "{}",
                serde_json::to_string(&rep).map_err(|e| Error::Format(e.to_string()))?
            )?;
            Ok(Status::Ok)
        }
    }
}

type BmoInputs = (
    GridFunction,
    ExponentFunction,
    SemigroupSpec,
    ScaleLadder,
    DyadicFamily,
);

fn bmo_inputs(a: &BmoArgs) -> Result<BmoInputs> {
    let f = load_grid_function(&a.input)?;
    let spec = a.semigroup.spec()?;
    let p = ExponentFunction::preset(&a.p, f.grid())?;
    let ladder = a.ladder.ladder(f.grid(), &spec)?;
    let depth = a
        .depth
        .unwrap_or_else(|| DyadicFamily::max_depth(f.grid()).min(6));
    let family = DyadicFamily::new(f.grid(), depth)?;
    Ok((f, p, spec, ladder, family))
}

fn run_config(args: &RunArgs) -> Result<SuiteConfig> {
    let mut cfg = match &args.config {
        Some(path) => SuiteConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => SuiteConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.clone());
    }
    if !args.suites.is_empty() {
        cfg.suites = args
            .suites
            .iter()
            .filter(|s| s.as_str() != "none")
            .cloned()
            .collect();
    }
    if let Some(n) = args.points {
        cfg.grid.points = n;
    }
    if let Some(l) = args.levels {
        cfg.ladder.levels = l;
    }
    cfg.plots |= args.plots;
    Ok(cfg)
}

/// Runs the selected suites in order and writes `<suite>.json` plus
/// `summary.csv` into `dir`.
pub fn run_suite(cfg: &SuiteConfig, dir: &Path) -> Result<Vec<SuiteReport>> {
    std::fs::create_dir_all(dir)?;
    let mut reports = Vec::new();
    if cfg.suites.is_empty() {
        write_summary(dir, &reports)?;
        return Ok(reports);
    }
    let ctx = Context::new(cfg)?;
    for name in &cfg.suites {
        let r = suites::run(name, &ctx)?;
        let text = serde_json::to_string_pretty(&r).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join(format!("{name}.json")), text + "\n")?;
        reports.push(r);
    }
    write_summary(dir, &reports)?;
    if cfg.plots {
        plots(&ctx, dir)?;
    }
    Ok(reports)
}

fn write_summary(dir: &Path, reports: &[SuiteReport]) -> Result<()> {
    let mut s = String::from("suite,check,passed,value,bound\n");
    for r in reports {
        for c in &r.checks {
            s.push_str(&format!(
                "{},{},{},{:e},{:e}\n",
                r.suite, c.id, c.passed, c.value, c.bound
            ));
        }
    }
    std::fs::write(dir.join("summary.csv"), s)?;
    Ok(())
}

/// Heat map of `|Q_{t^m} f|` over `(x, level)` and a histogram of
/// `log2 |lambda|` for one seeded sample.
fn plots(ctx: &Context, dir: &Path) -> Result<()> {
    if !ctx.spec.is_gaussian() || ctx.grid.dim() != 1 {
        return Ok(());
    }
    let mut rng = rng_for(ctx.cfg.seed, "plots");
    let count = rng.gen_range(1..4);
    let f = suites::samples::packets(&ctx.grid, &mut rng, count);
    let field = area_field(&f, &ctx.spec, &ctx.ladder)?;
    heat_map(&field, &dir.join("area_field.png"))?;
    let p = ExponentFunction::preset(&ctx.cfg.hardy_exponent, &ctx.grid)?;
    let params = OperatorParams::for_exponent(&p, 1, ctx.spec.m, None)?;
    let dec = molecular_decompose(&f, &p, &ctx.spec, params, &ctx.ladder)?;
    let logs: Vec<f64> = dec
        .lambdas
        .iter()
        .map(|l| l.norm())
        .filter(|v| *v > 0.0)
        .map(f64::log2)
        .collect();
    histogram(&logs, &dir.join("coefficients.png"))
}

fn heat_map(field: &HalfSpaceFunction, path: &Path) -> Result<()> {
    let n = field.grid().node_count();
    let levels = field.ladder().levels();
    let peak = field
        .values()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let img = image::GrayImage::from_fn(n as u32, levels as u32, |x, y| {
        // small scales at the bottom
        let k = levels - 1 - y as usize;
        let v = field.values()[k * n + x as usize].abs() / peak;
        image::Luma([(255.0 * v.sqrt()).round() as u8])
    });
    img.save(path).map_err(|e| Error::Format(e.to_string()))
}

fn histogram(values: &[f64], path: &Path) -> Result<()> {
    const BINS: usize = 32;
    const W: u32 = 256;
    const H: u32 = 128;
    let mut img = image::GrayImage::from_pixel(W, H, image::Luma([255]));
    if values.is_empty() {
        return img.save(path).map_err(|e| Error::Format(e.to_string()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / BINS as f64).max(1e-12);
    let mut counts = [0usize; BINS];
    for v in values {
        counts[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    let top = *counts.iter().max().unwrap_or(&1) as f64;
    let bar = W / BINS as u32;
    for (b, &c) in counts.iter().enumerate() {
        let height = ((c as f64 / top) * (H - 1) as f64).round() as u32;
        for x in b as u32 * bar..(b as u32 + 1) * bar - 1 {
            for y in H - height..H {
                img.put_pixel(x, y, image::Luma([0]));
            }
        }
    }
    img.save(path).map_err(|e| Error::Format(e.to_string()))
}
