//! BMO-type norms, `p(.)`-Carleson measures and numeric checks of the
//! tent-space duality and the pairing identity.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exponent::ExponentFunction;
use crate::grid::{Cube, DyadicFamily, GridFunction, HalfSpaceFunction, ScaleLadder};
use crate::hardy::{area_field, compute_cms, hardy_norm, Molecule};
use crate::lebesgue::CubeNorms;
use crate::semigroup::{pst_family, qp_family, OperatorParams, SemigroupSpec};
use crate::tent::{in_tent, tent_t};

/// Fewest dyadic generations a family must span.
pub const MIN_GENERATIONS: usize = 4;

#[derive(Clone, Debug, Serialize)]
pub struct BmoReport {
    pub value: f64,
    pub attaining_cube: Option<Cube>,
    pub family_depth: usize,
    /// `|v_depth - v_{depth-1}| / v_depth`, when the coarser family still
    /// has enough generations.
    pub stability_drift: Option<f64>,
}

fn check_family(family: &DyadicFamily) -> Result<()> {
    if family.depth() + 1 < MIN_GENERATIONS {
        return Err(Error::Parameter(format!(
            "dyadic family spans {} generations; need {MIN_GENERATIONS}",
            family.depth() + 1
        )));
    }
    Ok(())
}

/// `f - c` with `c` the value of a constant `f` or else the mean of `f`:
/// outside the box `f` is taken to continue as `c`, which `P_{s,t}`
/// reproduces and `Q_{s,t}` annihilates.
fn mean_free(f: &GridFunction) -> GridFunction {
    let v = f.values();
    let c = if v.iter().all(|x| *x == v[0]) {
        v[0]
    } else {
        f.mean()
    };
    f.map(|x| x - c)
}

fn sup_over<'a>(values: impl Iterator<Item = (&'a Cube, f64)>) -> (f64, Option<Cube>) {
    let mut best = (0.0, None);
    for (c, v) in values {
        if v > best.0 {
            best = (v, Some(*c));
        }
    }
    best
}

/// `(|Q|^{1/2} / ||chi_Q||) (int_Q |f - P_{s,l(Q)^m} f|^2)^{1/2}` for every
/// cube of the family.
pub fn bmo_cube_values(
    f: &GridFunction,
    p: &ExponentFunction,
    s: usize,
    spec: &SemigroupSpec,
    family: &DyadicFamily,
) -> Result<Vec<(Cube, f64)>> {
    check_family(family)?;
    let grid = f.grid();
    let r = mean_free(f);
    let cubes: Vec<Cube> = family.cubes().copied().collect();
    if r.is_zero() {
        return Ok(cubes.into_iter().map(|c| (c, 0.0)).collect());
    }
    let sides: Vec<f64> = (0..=family.depth())
        .map(|j| grid.extent(0) / (1u64 << j) as f64)
        .collect();
    let times: Vec<f64> = sides.iter().map(|l| l.powf(spec.m)).collect();
    let smooth = pst_family(&r, &times, s, spec)?;
    let osc: Vec<GridFunction> = smooth.iter().map(|ps| r.sub(ps)).collect();
    let norms = CubeNorms::new(p, grid);
    let vol = grid.cell_volume();
    cubes
        .par_iter()
        .map(|c| {
            let j = sides
                .iter()
                .position(|l| (l - c.side).abs() <= 1e-9 * l)
                .ok_or_else(|| Error::InvalidInput("cube outside the dyadic family".into()))?;
            let energy: f64 = c
                .node_range(grid)
                .indices(grid)
                .iter()
                .map(|&i| osc[j].values()[i].powi(2))
                .sum::<f64>()
                * vol;
            let weight = c.discrete_measure(grid).sqrt() / norms.get(c)?;
            Ok((*c, weight * energy.sqrt()))
        })
        .collect()
}

pub fn bmo_norm(
    f: &GridFunction,
    p: &ExponentFunction,
    s: usize,
    spec: &SemigroupSpec,
    family: &DyadicFamily,
) -> Result<f64> {
    Ok(bmo_report(f, p, s, spec, family)?.value)
}

/// The BMO sup with its attaining cube and the drift against the family one
/// generation shallower.
pub fn bmo_report(
    f: &GridFunction,
    p: &ExponentFunction,
    s: usize,
    spec: &SemigroupSpec,
    family: &DyadicFamily,
) -> Result<BmoReport> {
    let values = bmo_cube_values(f, p, s, spec, family)?;
    let (value, attaining_cube) = sup_over(values.iter().map(|(c, v)| (c, *v)));
    let depth = family.depth();
    let stability_drift = if depth >= MIN_GENERATIONS {
        let coarse_side = family.grid().extent(0) / (1u64 << (depth - 1)) as f64;
        let (coarse, _) = sup_over(
            values
                .iter()
                .filter(|(c, _)| c.side >= coarse_side * (1.0 - 1e-9))
                .map(|(c, v)| (c, *v)),
        );
        Some(if value > 0.0 {
            (value - coarse).abs() / value
        } else {
            0.0
        })
    } else {
        None
    };
    Ok(BmoReport {
        value,
        attaining_cube,
        family_depth: depth,
        stability_drift,
    })
}

/// Density of `d mu` against `dx dt/t` together with its Carleson norm.
#[derive(Clone, Debug)]
pub struct CarlesonMeasure {
    pub density: HalfSpaceFunction,
    pub norm_value: f64,
    pub attaining_cube: Option<Cube>,
}

/// `|Q_{s,t^m} (I - P_{s0,t^m}) g|^2` on the ladder.
pub fn carleson_density(
    g: &GridFunction,
    params: OperatorParams,
    spec: &SemigroupSpec,
    ladder: &ScaleLadder,
) -> Result<HalfSpaceFunction> {
    let r = mean_free(g);
    if r.is_zero() {
        return Ok(HalfSpaceFunction::zeros(g.grid(), ladder));
    }
    let times: Vec<f64> = ladder.scales().iter().map(|t| t.powf(spec.m)).collect();
    let levels = qp_family(&r, &times, params.s, params.s0, spec)?;
    HalfSpaceFunction::from_levels(
        ladder,
        levels.into_iter().map(|l| l.map(|v| v * v)).collect(),
    )
}

/// `(|Q|^{1/2} / ||chi_Q||) (mu(Q^))^{1/2}` for every cube of the family.
pub fn carleson_cube_values(
    density: &HalfSpaceFunction,
    p: &ExponentFunction,
    family: &DyadicFamily,
) -> Result<Vec<(Cube, f64)>> {
    if density.values().iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidInput(
            "Carleson density must be nonnegative".into(),
        ));
    }
    let grid = density.grid();
    let ladder = density.ladder();
    let dim = grid.dim();
    let norms = CubeNorms::new(p, grid);
    let w = grid.cell_volume() * ladder.dlog();
    let cubes: Vec<Cube> = family.cubes().copied().collect();
    cubes
        .par_iter()
        .map(|c| {
            let nodes = c.node_range(grid).indices(grid);
            let mut mass = 0.0;
            for k in 0..ladder.levels() {
                let t = ladder.scale(k);
                if t > 0.5 * c.side * (1.0 + 1e-12) {
                    break;
                }
                let level = density.level(k);
                for &i in &nodes {
                    if in_tent(c, &grid.coord(i)[..dim], t) {
                        mass += level[i];
                    }
                }
            }
            let weight = c.discrete_measure(grid).sqrt() / norms.get(c)?;
            Ok((*c, weight * (mass * w).sqrt()))
        })
        .collect()
}

pub fn carleson_measure(
    density: HalfSpaceFunction,
    p: &ExponentFunction,
    family: &DyadicFamily,
) -> Result<CarlesonMeasure> {
    check_family(family)?;
    let values = carleson_cube_values(&density, p, family)?;
    let (norm_value, attaining_cube) = sup_over(values.iter().map(|(c, v)| (c, *v)));
    Ok(CarlesonMeasure {
        density,
        norm_value,
        attaining_cube,
    })
}

/// Carleson norm of `d mu_g = |Q_{s,t^m}(I - P_{s0,t^m}) g|^2 dx dt/t`.
pub fn carleson_norm(
    g: &GridFunction,
    p: &ExponentFunction,
    params: OperatorParams,
    spec: &SemigroupSpec,
    family: &DyadicFamily,
    ladder: &ScaleLadder,
) -> Result<f64> {
    check_family(family)?;
    let density = carleson_density(g, params, spec, ladder)?;
    Ok(carleson_measure(density, p, family)?.norm_value)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DualityReport {
    /// `int int |f g| dy dt/t`.
    pub lhs: f64,
    /// `int T(f) T(g) dx`.
    pub rhs: f64,
    pub holds: bool,
}

/// Both sides of the tent-space duality inequality on the shared
/// discretization.
pub fn tent_duality_check(f: &HalfSpaceFunction, g: &HalfSpaceFunction) -> Result<DualityReport> {
    if f.grid() != g.grid() || f.ladder() != g.ladder() {
        return Err(Error::InvalidInput(
            "duality pair on different discretizations".into(),
        ));
    }
    let w = f.grid().cell_volume() * f.ladder().dlog();
    let lhs = f
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| (a * b).abs())
        .sum::<f64>()
        * w;
    let (tf, tg) = (tent_t(f), tent_t(g));
    let rhs = tf
        .values()
        .iter()
        .zip(tg.values())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * f.grid().cell_volume();
    Ok(DualityReport {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-12),
    })
}

/// `int g alpha dx` and its half-space form
/// `C_{(m,s)} int int Q_{t^m} alpha Q_{s,t^m}(I - P_{s0,t^m}) g dx dt/t`.
pub fn pairing_via_tent(
    alpha: &Molecule,
    g: &GridFunction,
    spec: &SemigroupSpec,
    params: OperatorParams,
) -> Result<(f64, f64)> {
    if !spec.is_gaussian() {
        return Err(Error::Hypothesis(
            "the pairing identity needs a self-adjoint (Gaussian) spec".into(),
        ));
    }
    if alpha.values.grid() != g.grid() {
        return Err(Error::InvalidInput(
            "molecule and g live on different grids".into(),
        ));
    }
    let vol = g.grid().cell_volume();
    let lhs = alpha
        .values
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * vol;
    if g.is_zero() || alpha.values.is_zero() {
        return Ok((lhs, 0.0));
    }
    let ladder = alpha.source_atom.ladder();
    let qa = area_field(&alpha.values, spec, ladder)?;
    let r = mean_free(g);
    let times: Vec<f64> = ladder.scales().iter().map(|t| t.powf(spec.m)).collect();
    let qg = qp_family(&r, &times, params.s, params.s0, spec)?;
    let mut total = 0.0;
    for (k, level) in qg.iter().enumerate() {
        total += qa
            .level(k)
            .iter()
            .zip(level.values())
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
    let rhs = compute_cms(spec.m, params.s, params.s0)? * ladder.dlog() * vol * total;
    Ok((lhs, rhs))
}

/// `|int f g| / (||f||_{H_L} ||g||_{BMO})`.
pub fn duality_ratio(
    f: &GridFunction,
    g: &GridFunction,
    p: &ExponentFunction,
    s0: usize,
    spec: &SemigroupSpec,
    family: &DyadicFamily,
    ladder: &ScaleLadder,
) -> Result<f64> {
    let pairing = f
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * f.grid().cell_volume();
    let denom = hardy_norm(f, p, spec, ladder)? * bmo_norm(g, p, s0, spec, family)?;
    if denom == 0.0 {
        return Err(Error::InvalidInput(
            "degenerate pair: zero Hardy or BMO norm".into(),
        ));
    }
    Ok(pairing.abs() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridBox;
    use crate::hardy::default_ladder;
    use crate::tent::TentAtom;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line() -> GridBox {
        GridBox::line(-8.0, 8.0, 512).unwrap()
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
        .unwrap()
    }

    #[test]
    fn constants_have_zero_bmo_and_carleson_norm() {
        let g = line();
        let spec = SemigroupSpec::gaussian();
        let family = DyadicFamily::new(&g, 5).unwrap();
        let p = ExponentFunction::preset("paper-example-1", &g).unwrap();
        let c = GridFunction::constant(&g, 0.3);
        assert_eq!(bmo_norm(&c, &p, 0, &spec, &family).unwrap(), 0.0);
        let ladder = default_ladder(&g, &spec).unwrap();
        let params = OperatorParams::new(0, 0).unwrap();
        assert_eq!(
            carleson_norm(&c, &p, params, &spec, &family, &ladder).unwrap(),
            0.0
        );
    }

    #[test]
    fn shallow_families_are_rejected() {
        let g = line();
        let family = DyadicFamily::new(&g, 2).unwrap();
        let p = ExponentFunction::constant(1.0, &g).unwrap();
        let f = GridFunction::constant(&g, 1.0);
        assert!(bmo_norm(&f, &p, 0, &SemigroupSpec::gaussian(), &family).is_err());
    }

    #[test]
    fn step_function_is_stable_in_depth() {
        let g = GridBox::line(-8.0, 8.0, 1024).unwrap();
        let spec = SemigroupSpec::gaussian();
        let p = ExponentFunction::constant(1.0, &g).unwrap();
        let f = GridFunction::from_fn(&g, |x| if x[0] < 0.0 { 1.0 } else { 0.0 }).unwrap();
        let a = bmo_norm(&f, &p, 0, &spec, &DyadicFamily::new(&g, 4).unwrap()).unwrap();
        let b = bmo_norm(&f, &p, 0, &spec, &DyadicFamily::new(&g, 8).unwrap()).unwrap();
        assert!(a > 0.0 && a.is_finite());
        assert!((b - a).abs() / b < 0.05, "{a} vs {b}");
    }

    #[test]
    fn indicator_attains_near_its_cube() {
        let g = line();
        let spec = SemigroupSpec::gaussian();
        let p = ExponentFunction::constant(0.8, &g).unwrap();
        let family = DyadicFamily::new(&g, 5).unwrap();
        let q0 = *family.generation(4).nth(5).unwrap();
        let f = q0.indicator(&g);
        let rep = bmo_report(&f, &p, 0, &spec, &family).unwrap();
        let at = rep.attaining_cube.unwrap();
        assert!(
            (at.center[0] - q0.center[0]).abs() <= at.side,
            "{at:?} vs {q0:?}"
        );
        assert!(rep.stability_drift.is_some());
    }

    #[test]
    fn carleson_bounded_by_bmo() {
        let g = line();
        let spec = SemigroupSpec::gaussian();
        let p = ExponentFunction::preset("paper-example-1", &g).unwrap();
        let family = DyadicFamily::new(&g, 5).unwrap();
        let ladder = default_ladder(&g, &spec).unwrap();
        let params = OperatorParams::for_exponent(&p, 1, 2.0, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut ratios = Vec::new();
        for _ in 0..5 {
            let f = smooth_random(&g, &mut rng);
            let c = carleson_norm(&f, &p, params, &spec, &family, &ladder).unwrap();
            let b = bmo_norm(&f, &p, params.s0, &spec, &family).unwrap();
            ratios.push(c / b);
        }
        let max = ratios.iter().copied().fold(0.0, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max < 10.0 && max / min < 5.0, "{ratios:?}");
    }

    #[test]
    fn single_cell_duality() {
        let g = line();
        let ladder = ScaleLadder::new(0.01, 4.0, 32).unwrap();
        let mut v = vec![0.0; g.node_count() * ladder.levels()];
        v[10 * g.node_count() + 256] = 2.0;
        let f = HalfSpaceFunction::new(g.clone(), ladder.clone(), v).unwrap();
        let rep = tent_duality_check(&f, &f).unwrap();
        // T(f)^2 integrates to omega_1 = 2 times the half-space L^2 mass
        assert_relative_eq!(rep.rhs, 2.0 * rep.lhs, max_relative = 1e-12);
        assert!(rep.holds && rep.lhs < rep.rhs);
        let z = HalfSpaceFunction::zeros(&g, &ladder);
        let rep = tent_duality_check(&z, &f).unwrap();
        assert_eq!((rep.lhs, rep.rhs), (0.0, 0.0));
        assert!(rep.holds);
    }

    fn random_half_space(grid: &GridBox, ladder: &ScaleLadder, seed: u64) -> HalfSpaceFunction {
        let rng = std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(seed));
        let (lo, hi) = (grid.lower(0), grid.upper(0));
        let w = hi - lo;
        HalfSpaceFunction::from_fn(grid, ladder, |y, t| {
            let inside = y[0] > lo + 0.3 * w && y[0] < hi - 0.3 * w && t < 0.2 * w;
            let mut rng = rng.borrow_mut();
            if inside && rng.gen_bool(0.3) {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn duality_inequality(seed in 0u64..1000) {
            let g = GridBox::line(-4.0, 4.0, 128).unwrap();
            let ladder = ScaleLadder::new(0.02, 4.0, 24).unwrap();
            let f = random_half_space(&g, &ladder, seed);
            let h = random_half_space(&g, &ladder, seed + 7919);
            prop_assert!(tent_duality_check(&f, &h).unwrap().holds);
        }

        #[test]
        fn pairing_is_bilinear(seed in 0u64..1000, a in -2.0f64..2.0) {
            let g = GridBox::line(-4.0, 4.0, 256).unwrap();
            let spec = SemigroupSpec::gaussian();
            let ladder = default_ladder(&g, &spec).unwrap();
            let p = ExponentFunction::constant(1.0, &g).unwrap();
            let params = OperatorParams::new(0, 0).unwrap();
            let cube = Cube::new(&[0.0], 1.0).unwrap();
            let atom = TentAtom::tent_indicator(cube, &g, &ladder, &p, &[2.0]).unwrap();
            let alpha = Molecule::from_atom(atom, params, &spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g1 = smooth_random(&g, &mut rng);
            let g2 = smooth_random(&g, &mut rng);
            let (l1, r1) = pairing_via_tent(&alpha, &g1, &spec, params).unwrap();
            let (l2, r2) = pairing_via_tent(&alpha, &g2, &spec, params).unwrap();
            let (l, r) = pairing_via_tent(&alpha, &g1.axpy(a, &g2), &spec, params).unwrap();
            let scale = l1.abs() + l2.abs() + r1.abs() + r2.abs();
            prop_assert!((l - (l1 + a * l2)).abs() <= 1e-10 * scale);
            prop_assert!((r - (r1 + a * r2)).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn pairing_identity() {
        let g = GridBox::line(-8.0, 8.0, 1024).unwrap();
        let spec = SemigroupSpec::gaussian();
        let ladder = default_ladder(&g, &spec).unwrap();
        let p = ExponentFunction::constant(0.9, &g).unwrap();
        let params = OperatorParams::new(0, 0).unwrap();
        let cube = Cube::new(&[0.25], 1.0).unwrap();
        let atom = TentAtom::tent_indicator(cube, &g, &ladder, &p, &[2.0]).unwrap();
        let alpha = Molecule::from_atom(atom, params, &spec).unwrap();
        let h = GridFunction::from_fn(&g, |x| {
            (-(x[0] - 0.5).powi(2) / 4.0).exp() * (2.0 * x[0]).cos()
        })
        .unwrap();
        let (lhs, rhs) = pairing_via_tent(&alpha, &h, &spec, params).unwrap();
        assert!((lhs - rhs).abs() / lhs.abs() < 0.02, "{lhs} vs {rhs}");
        let (l0, r0) = pairing_via_tent(&alpha, &GridFunction::zeros(&g), &spec, params).unwrap();
        assert_eq!((l0, r0), (0.0, 0.0));
    }
}
