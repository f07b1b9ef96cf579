//! Hardy spaces attached to a semigroup: the Lusin area function, the
//! quasi-norm, the synthesis operator `pi_L`, molecules and the molecular
//! decomposition, plus classical atoms for the embedding check.

use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::ExponentFunction;
use crate::grid::{
    integrate, Cube, GridBox, GridFunction, HalfSpaceFunction, ScaleLadder, Spectrum,
};
use crate::lebesgue::{a_functional_with, norm, CubeNorms};
use crate::semigroup::{
    min_resolved_time, qst_family, synthesize, OperatorParams, SemigroupConfig, SemigroupSpec,
};
use crate::tent::{
    tent_atomic_decompose_with, tent_t, DecomposeOptions, TentAtom, TentDecomposition,
};

/// Levels of the default ladder.
pub const DEFAULT_LEVELS: usize = 64;

/// Fewest ladder levels with `t >= h` the area function accepts.
const MIN_RESOLVED_LEVELS: usize = 8;

/// Half-space entries below this fraction of the peak are dropped before the
/// tent decomposition.
const FIELD_FLOOR: f64 = 1e-12;

/// `t` from `h/16` to the largest box extent. Kernel-based specs start
/// where `t^m` reaches the resolvable time of `Q_{s,t}`.
pub fn default_ladder(grid: &GridBox, spec: &SemigroupSpec) -> Result<ScaleLadder> {
    let extent = (0..grid.dim()).map(|a| grid.extent(a)).fold(0.0, f64::max);
    let mut t_min = grid.h() / 16.0;
    if !spec.is_gaussian() {
        t_min = t_min.max(min_resolved_time(grid.h()).powf(1.0 / spec.m) * (1.0 + 1e-12));
    }
    ScaleLadder::new(t_min, extent, DEFAULT_LEVELS)
}

fn times(ladder: &ScaleLadder, m: f64) -> Vec<f64> {
    ladder.scales().iter().map(|t| t.powf(m)).collect()
}

/// `Q_{t^m} f` on every level of the ladder.
pub fn area_field(
    f: &GridFunction,
    spec: &SemigroupSpec,
    ladder: &ScaleLadder,
) -> Result<HalfSpaceFunction> {
    let levels = qst_family(f, &times(ladder, spec.m), 0, spec)?;
    HalfSpaceFunction::from_levels(ladder, levels)
}

/// `S_L f(x)`: the cone functional applied to `Q_{t^m} f`.
pub fn lusin_area(
    f: &GridFunction,
    spec: &SemigroupSpec,
    ladder: &ScaleLadder,
) -> Result<GridFunction> {
    let h = f.grid().h();
    let resolved = ladder.scales().iter().filter(|&&t| t >= h).count();
    if resolved < MIN_RESOLVED_LEVELS {
        return Err(Error::Resolution(format!(
            "only {resolved} ladder levels reach the grid spacing; need {MIN_RESOLVED_LEVELS}"
        )));
    }
    if f.is_zero() {
        return Ok(GridFunction::zeros(f.grid()));
    }
    Ok(tent_t(&area_field(f, spec, ladder)?))
}

/// `||S_L f||_{p(.)}`.
pub fn hardy_norm(
    f: &GridFunction,
    p: &ExponentFunction,
    spec: &SemigroupSpec,
    ladder: &ScaleLadder,
) -> Result<f64> {
    norm(&lusin_area(f, spec, ladder)?, p)
}

/// `C_{(m,s)}`: reciprocal of
/// `int_0^inf t^{m(s+2)} e^{-2t^m} (1 - e^{-t^m})^{s0+1} dt/t`.
pub fn compute_cms(m: f64, s: usize, s0: usize) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::Parameter(format!("m = {m} must be positive")));
    }
    OperatorParams::new(s, s0)?;
    // u = t^m, v = ln u: the integrand decays doubly exponentially in v at
    // both ends, so the trapezoid rule converges geometrically
    let (lo, hi, steps) = (-50.0f64, 5.0f64, 20_000usize);
    let dv = (hi - lo) / steps as f64;
    let mut sum = 0.0;
    for i in 0..=steps {
        let u = (lo + i as f64 * dv).exp();
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        sum += w * u.powi(s as i32 + 2) * (-2.0 * u).exp() * (-(-u).exp_m1()).powi(s0 as i32 + 1);
    }
    Ok(m / (sum * dv))
}

/// `C_{(m,s)} int Q_{s,t^m} (I - P_{s0,t^m}) F(., t) dt/t` on the ladder.
pub fn pi_l(
    f: &HalfSpaceFunction,
    params: OperatorParams,
    spec: &SemigroupSpec,
) -> Result<GridFunction> {
    let ladder = f.ladder();
    let levels: Vec<(usize, GridFunction)> = (0..ladder.levels())
        .map(|k| (k, f.level_function(k)))
        .filter(|(_, g)| !g.is_zero())
        .collect();
    synthesize_levels(f.grid(), ladder, &levels, params, spec)
}

fn synthesize_levels(
    grid: &GridBox,
    ladder: &ScaleLadder,
    levels: &[(usize, GridFunction)],
    params: OperatorParams,
    spec: &SemigroupSpec,
) -> Result<GridFunction> {
    if levels.is_empty() {
        return Ok(GridFunction::zeros(grid));
    }
    let w = compute_cms(spec.m, params.s, params.s0)? * ladder.dlog();
    let args: Vec<(f64, f64, &GridFunction)> = levels
        .iter()
        .map(|(k, g)| (ladder.scale(*k).powf(spec.m), w, g))
        .collect();
    synthesize(&args, params.s, params.s0, spec)
}

/// Share of the energy of `f` at frequencies above half the Nyquist limit.
pub fn high_frequency_fraction(f: &GridFunction) -> Result<f64> {
    let total = f.l2_norm();
    if total == 0.0 {
        return Ok(0.0);
    }
    let cut = std::f64::consts::PI / (2.0 * f.grid().h());
    let spectrum = Spectrum::with_len(f, f.grid().points_per_axis())?;
    let high = spectrum.apply(|x2| if x2 > cut * cut { 1.0 } else { 0.0 });
    Ok((high.l2_norm() / total).powi(2))
}

/// Admissibility of inputs for the reproducing formula.
pub fn check_band_limited(f: &GridFunction) -> Result<()> {
    let frac = high_frequency_fraction(f)?;
    if frac > 1e-6 {
        return Err(Error::Resolution(format!(
            "input is not band-limited: {frac:e} of its energy lies above half the Nyquist frequency"
        )));
    }
    Ok(())
}

/// `pi_L` of a tent atom.
#[derive(Clone, Debug)]
pub struct Molecule {
    pub values: GridFunction,
    pub source_atom: TentAtom,
    pub cube: Cube,
    pub params: OperatorParams,
}

impl Molecule {
    pub fn from_atom(atom: TentAtom, params: OperatorParams, spec: &SemigroupSpec) -> Result<Self> {
        let grid = atom.grid().clone();
        let levels: Vec<(usize, GridFunction)> = atom
            .levels()
            .into_iter()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(k, l)| {
                let mut v = vec![0.0; grid.node_count()];
                for (i, x) in l {
                    v[i] = x;
                }
                (k, GridFunction::from_parts(grid.clone(), v))
            })
            .collect();
        let values = synthesize_levels(&grid, atom.ladder(), &levels, params, spec)?;
        Ok(Self {
            values,
            cube: atom.cube,
            source_atom: atom,
            params,
        })
    }

    /// `sup_{D_k} |alpha| ||chi_Q|| 2^{k(n+delta)}` over the annuli
    /// `D_k = 2^{k+1}Q \ 2^k Q`, `k = 1..=k_max`; `None` where `D_k` misses
    /// the grid.
    pub fn annulus_constants(
        &self,
        norms: &CubeNorms<'_>,
        delta: f64,
        k_max: usize,
    ) -> Result<Vec<Option<f64>>> {
        let grid = self.values.grid();
        let dim = grid.dim();
        let chi = norms.get(&self.cube)?;
        let mut out = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            let inner = self.cube.dilate((1u64 << k) as f64);
            let outer = self.cube.dilate((1u64 << (k + 1)) as f64);
            let mut sup: Option<f64> = None;
            for i in outer.node_range(grid).indices(grid) {
                let x = grid.coord(i);
                if inner.contains(&x[..dim]) {
                    continue;
                }
                let v = self.values.values()[i].abs();
                sup = Some(sup.map_or(v, |s: f64| s.max(v)));
            }
            out.push(sup.map(|s| s * chi * 2f64.powf(k as f64 * (dim as f64 + delta))));
        }
        Ok(out)
    }
}

/// Decay exponent `delta` used for molecule annuli.
pub fn molecule_delta(spec: &SemigroupSpec) -> f64 {
    spec.regularity.map_or(spec.epsilon, |r| r.delta)
}

#[derive(Clone, Debug)]
pub struct MolecularDecomposition {
    pub lambdas: Vec<Complex64>,
    pub molecules: Vec<Molecule>,
    pub cubes: Vec<Cube>,
    /// `B` of the coefficients: the `A` functional of the tent decomposition.
    pub b_value: f64,
    /// `||f - sum lambda_j alpha_j||_2 / ||f||_2` against the source.
    pub residual: f64,
    pub params: OperatorParams,
    pub tent: TentDecomposition,
}

impl MolecularDecomposition {
    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    /// `sum_j lambda_j alpha_j`.
    pub fn reconstruct(&self) -> GridFunction {
        let grid = self.tent.grid();
        let mut v = vec![0.0; grid.node_count()];
        for (l, m) in self.lambdas.iter().zip(&self.molecules) {
            for (acc, x) in v.iter_mut().zip(m.values.values()) {
                *acc += l.re * x;
            }
        }
        GridFunction::from_parts(grid.clone(), v)
    }

    /// Writes the tent decomposition (see [`TentDecomposition::save`]) and a
    /// `<path>.molecular.json` descriptor with the operator data.
    pub fn save(&self, path: &Path, spec: &SemigroupSpec) -> Result<()> {
        self.tent.save(path)?;
        let meta = MolecularMeta {
            kind: "molecular".into(),
            s: self.params.s,
            s0: self.params.s0,
            b_value: self.b_value,
            residual: self.residual,
            semigroup: spec.to_config(),
        };
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(meta_path(path), text)?;
        Ok(())
    }

    /// Reads a saved decomposition and rebuilds the molecules.
    pub fn load(path: &Path) -> Result<(Self, SemigroupSpec)> {
        let tent = TentDecomposition::load(path)?;
        let text = std::fs::read_to_string(meta_path(path))?;
        let meta: MolecularMeta =
            serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if meta.kind != "molecular" {
            return Err(Error::Format(format!(
                "expected a molecular descriptor, found {}",
                meta.kind
            )));
        }
        let spec = SemigroupSpec::from_config(&meta.semigroup)?;
        let params = OperatorParams::new(meta.s, meta.s0)?;
        let molecules = molecules_of(&tent, params, &spec)?;
        Ok((
            Self {
                lambdas: tent.lambdas.clone(),
                cubes: tent.cubes.clone(),
                molecules,
                b_value: meta.b_value,
                residual: meta.residual,
                params,
                tent,
            },
            spec,
        ))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MolecularMeta {
    kind: String,
    s: usize,
    s0: usize,
    b_value: f64,
    residual: f64,
    semigroup: SemigroupConfig,
}

pub fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".molecular.json");
    s.into()
}

fn molecules_of(
    tent: &TentDecomposition,
    params: OperatorParams,
    spec: &SemigroupSpec,
) -> Result<Vec<Molecule>> {
    tent.atoms
        .par_iter()
        .map(|a| Molecule::from_atom(a.clone(), params, spec))
        .collect()
}

/// `f = pi_L(Q_{t^m} f)` with the tent decomposition of `Q_{t^m} f` pushed
/// through `pi_L` atom by atom.
pub fn molecular_decompose(
    f: &GridFunction,
    p: &ExponentFunction,
    spec: &SemigroupSpec,
    params: OperatorParams,
    ladder: &ScaleLadder,
) -> Result<MolecularDecomposition> {
    check_band_limited(f)?;
    let field = area_field(f, spec, ladder)?;
    let peak = field.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let field = field.map(|v| if v.abs() < FIELD_FLOOR * peak { 0.0 } else { v });
    let tent = tent_atomic_decompose_with(&field, p, &DecomposeOptions::default())?;
    let molecules = molecules_of(&tent, params, spec)?;
    let mut out = MolecularDecomposition {
        lambdas: tent.lambdas.clone(),
        cubes: tent.cubes.clone(),
        molecules,
        b_value: tent.a_value,
        residual: 0.0,
        params,
        tent,
    };
    let fnorm = f.l2_norm();
    out.residual = if fnorm == 0.0 {
        0.0
    } else {
        f.sub(&out.reconstruct()).l2_norm() / fnorm
    };
    Ok(out)
}

/// `||sum lambda_k alpha_k||_{H_L} / B({lambda_k alpha_k})`.
pub fn synthesis_ratio(
    lambdas: &[Complex64],
    molecules: &[Molecule],
    p: &ExponentFunction,
    spec: &SemigroupSpec,
    ladder: &ScaleLadder,
) -> Result<f64> {
    let first = molecules
        .first()
        .ok_or_else(|| Error::InvalidInput("empty molecule family".into()))?;
    let grid = first.values.grid();
    let mut sum = GridFunction::zeros(grid);
    for (l, m) in lambdas.iter().zip(molecules) {
        sum = sum.axpy(l.re, &m.values);
    }
    let cubes: Vec<Cube> = molecules.iter().map(|m| m.cube).collect();
    let norms = CubeNorms::new(p, grid);
    let b = a_functional_with(&norms, lambdas, &cubes)?;
    Ok(hardy_norm(&sum, p, spec, ladder)? / b)
}

/// Piece of the annular splitting of a molecule.
#[derive(Clone, Debug)]
pub struct SplitPiece {
    /// `k` of the annulus the piece sits on.
    pub k: usize,
    pub values: GridFunction,
    /// Smallest cube `2^j Q` holding the support.
    pub cube: Cube,
    pub mean: f64,
    /// `||piece||_inf ||chi_cube||_{p(.)}`.
    pub size: f64,
    /// `size * 2^{k(n + delta - n/p_minus)}`.
    pub scaled_size: f64,
}

#[derive(Clone, Debug)]
pub struct MoleculeSplitting {
    /// `h_k = alpha chi_k - m_k chi~_k` for each annulus.
    pub annular: Vec<SplitPiece>,
    /// `N_{k+1} (chi~_{k+1} - chi~_k)`.
    pub telescoping: Vec<SplitPiece>,
    /// `N_0 = int alpha`, carried by `chi~_0`.
    pub remainder: f64,
}

impl MoleculeSplitting {
    pub fn sum(&self, grid: &GridBox) -> GridFunction {
        let mut out = GridFunction::zeros(grid);
        for p in self.annular.iter().chain(&self.telescoping) {
            out = out.add(&p.values);
        }
        out
    }
}

/// Splits `alpha` over `D_0 = 2Q`, `D_k = 2^{k+1}Q \ 2^k Q` until the
/// dilates cover the box.
pub fn split_molecule(
    alpha: &GridFunction,
    cube: &Cube,
    p: &ExponentFunction,
    delta: f64,
) -> Result<MoleculeSplitting> {
    let grid = alpha.grid();
    let dim = grid.dim();
    let n = dim as f64;
    let norms = CubeNorms::new(p, grid);
    let lower: Vec<f64> = (0..dim).map(|a| grid.lower(a)).collect();
    let upper: Vec<f64> = (0..dim).map(|a| grid.upper(a)).collect();
    let covers = |c: &Cube| (0..dim).all(|a| c.lower(a) <= lower[a] && c.upper(a) >= upper[a]);
    // annulus index of every node
    let mut k_max = 0usize;
    while !covers(&cube.dilate((1u64 << (k_max + 1)) as f64)) {
        k_max += 1;
        if k_max > 60 {
            return Err(Error::InvalidInput("cube too small for the box".into()));
        }
    }
    let ring: Vec<usize> = (0..grid.node_count())
        .map(|i| {
            let x = grid.coord(i);
            (0..=k_max)
                .find(|&k| cube.dilate((1u64 << (k + 1)) as f64).contains(&x[..dim]))
                .unwrap_or(k_max)
        })
        .collect();
    let vol = grid.cell_volume();
    let counts: Vec<f64> = (0..=k_max)
        .map(|k| ring.iter().filter(|&&r| r == k).count() as f64 * vol)
        .collect();
    let masses: Vec<f64> = (0..=k_max)
        .map(|k| {
            alpha
                .values()
                .iter()
                .zip(&ring)
                .filter(|(_, &r)| r == k)
                .map(|(v, _)| v * vol)
                .sum()
        })
        .collect();
    let normalized = |k: usize| -> GridFunction {
        let c = if counts[k] > 0.0 {
            1.0 / counts[k]
        } else {
            0.0
        };
        GridFunction::from_parts(
            grid.clone(),
            ring.iter().map(|&r| if r == k { c } else { 0.0 }).collect(),
        )
    };
    let piece = |k: usize, values: GridFunction, j: usize| -> Result<SplitPiece> {
        let support = cube.dilate((1u64 << j) as f64);
        let size = values.max_abs() * norms.get(&support)?;
        Ok(SplitPiece {
            k,
            mean: integrate(&values),
            scaled_size: size * 2f64.powf(k as f64 * (n + delta - n / p.p_minus())),
            cube: support,
            size,
            values,
        })
    };
    let mut annular = Vec::new();
    for k in 0..=k_max {
        let h = GridFunction::from_parts(
            grid.clone(),
            alpha
                .values()
                .iter()
                .zip(&ring)
                .map(|(v, &r)| if r == k { *v } else { 0.0 })
                .collect(),
        )
        .axpy(-masses[k], &normalized(k));
        annular.push(piece(k, h, k + 1)?);
    }
    let mut telescoping = Vec::new();
    for k in 0..k_max {
        let tail: f64 = masses[k + 1..].iter().sum();
        let b = normalized(k + 1).sub(&normalized(k)).scaled(tail);
        telescoping.push(piece(k, b, k + 2)?);
    }
    Ok(MoleculeSplitting {
        annular,
        telescoping,
        remainder: masses.iter().sum(),
    })
}

/// `(p(.), q, d)`-atom on a cube `R`.
#[derive(Clone, Debug)]
pub struct ClassicalAtom {
    pub values: GridFunction,
    pub cube: Cube,
    pub q: f64,
    pub d: usize,
}

/// `max(0, floor(n (1/p_minus - 1)))`.
pub fn moment_order(p: &ExponentFunction, n: usize) -> usize {
    (n as f64 * (1.0 / p.p_minus() - 1.0)).floor().max(0.0) as usize
}

impl ClassicalAtom {
    /// `(chi_left - chi_right) / ||chi_R||_{p(.)}`, split across axis 0, so
    /// that `||a||_q = |R|^{1/q} / ||chi_R||` on the grid.
    pub fn haar(grid: &GridBox, cube: Cube, p: &ExponentFunction, q: f64) -> Result<Self> {
        let d = moment_order(p, grid.dim());
        if d > 0 {
            return Err(Error::Hypothesis(format!(
                "Haar atoms only cancel to order 0, need {d}"
            )));
        }
        let range = cube.node_range(grid);
        if range.is_empty(grid.dim()) {
            return Err(Error::Resolution("atom cube holds no grid point".into()));
        }
        let (lo, hi) = (range.lo[0], range.hi[0]);
        if (hi - lo) % 2 != 0 {
            return Err(Error::Resolution(format!(
                "atom cube spans {} nodes along axis 0; need an even count",
                hi - lo
            )));
        }
        let mid = lo + (hi - lo) / 2;
        let c = 1.0 / CubeNorms::new(p, grid).get(&cube)?;
        let mut v = vec![0.0; grid.node_count()];
        for i in range.indices(grid) {
            v[i] = if grid.multi_index(i)[0] < mid { c } else { -c };
        }
        Ok(Self {
            values: GridFunction::from_parts(grid.clone(), v),
            cube,
            q,
            d,
        })
    }
}

fn multi_indices(dim: usize, d: usize) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for a in 0..=d {
        if dim == 1 {
            out.push([a, 0]);
        } else {
            for b in 0..=(d - a) {
                out.push([a, b]);
            }
        }
    }
    out
}

/// Support in `R`, `||a||_q <= |R|^{1/q}/||chi_R||` and vanishing moments up
/// to order `d` about the centre of `R`.
pub fn is_classical_atom(
    a: &GridFunction,
    cube: &Cube,
    p: &ExponentFunction,
    q: f64,
    d: usize,
) -> Result<bool> {
    if !(q > 1f64.max(p.p_plus())) {
        return Err(Error::Parameter(format!(
            "q = {q} must exceed max(1, p_plus)"
        )));
    }
    let grid = a.grid();
    let dim = grid.dim();
    let inside = cube.node_range(grid).indices(grid);
    let mut mask = vec![false; grid.node_count()];
    for &i in &inside {
        mask[i] = true;
    }
    if a.values().iter().zip(&mask).any(|(v, &m)| *v != 0.0 && !m) {
        return Ok(false);
    }
    if inside.is_empty() {
        return Ok(a.is_zero());
    }
    let lq = crate::grid::const_lp_norm(a, q);
    let bound = cube.discrete_measure(grid).powf(1.0 / q) / CubeNorms::new(p, grid).get(cube)?;
    if lq > bound * (1.0 + 1e-9) {
        return Ok(false);
    }
    let l1 = crate::grid::const_lp_norm(a, 1.0);
    for beta in multi_indices(dim, d) {
        let moment: f64 = inside
            .iter()
            .map(|&i| {
                let x = grid.coord(i);
                let mut w = ((x[0] - cube.center[0]) / cube.side).powi(beta[0] as i32);
                if dim == 2 {
                    w *= ((x[1] - cube.center[1]) / cube.side).powi(beta[1] as i32);
                }
                a.values()[i] * w
            })
            .sum::<f64>()
            * grid.cell_volume();
        if moment.abs() > 1e-10 * l1 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Hypotheses of the classical-atom embedding: a Gaussian spec,
/// `p_minus in (n/(n+1), 1]` and `2/p_minus - 1/p_plus < (n+1)/n`.
pub fn check_embedding_hypotheses(
    p: &ExponentFunction,
    spec: &SemigroupSpec,
    n: usize,
) -> Result<()> {
    if !spec.is_gaussian() {
        return Err(Error::Hypothesis(
            "the embedding check needs the Gaussian semigroup".into(),
        ));
    }
    let nf = n as f64;
    let (pm, pp) = (p.p_minus(), p.p_plus());
    if !(pm > nf / (nf + 1.0) && pm <= 1.0) {
        return Err(Error::Hypothesis(format!(
            "p_minus = {pm} outside ({}, 1]",
            nf / (nf + 1.0)
        )));
    }
    if !(2.0 / pm - 1.0 / pp < (nf + 1.0) / nf) {
        return Err(Error::Hypothesis(format!(
            "2/p_minus - 1/p_plus = {} must stay below {}",
            2.0 / pm - 1.0 / pp,
            (nf + 1.0) / nf
        )));
    }
    Ok(())
}

/// `||a||_{H_L^{p(.)}}` for a classical atom.
pub fn classical_atom_embedding_check(
    a: &ClassicalAtom,
    p: &ExponentFunction,
    spec: &SemigroupSpec,
    ladder: &ScaleLadder,
) -> Result<f64> {
    check_embedding_hypotheses(p, spec, a.values.grid().dim())?;
    hardy_norm(&a.values, p, spec, ladder)
}
