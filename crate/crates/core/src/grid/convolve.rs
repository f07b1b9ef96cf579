//! Translation-invariant operators on grid functions.
//!
//! Two routes are provided. [`apply_kernel`] convolves the zero-extended
//! samples with a sampled radial kernel (exact linear convolution, computed
//! by FFT). [`Spectrum`] applies a radial Fourier symbol on a zero-padded
//! torus, which is how the Gaussian semigroup and its derived operators are
//! realized without sampling the kernel itself.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{GridBox, GridFunction};
use crate::error::{Error, Result};

/// Largest transform length per axis accepted in dimension 1.
pub const MAX_TRANSFORM_1D: usize = 1 << 22;
/// Largest transform length per axis accepted in dimension 2.
pub const MAX_TRANSFORM_2D: usize = 1 << 12;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Smallest `2^a 3^b >= n`.
pub fn smooth_size(n: usize) -> usize {
    let n = n.max(1);
    let mut best = n.next_power_of_two();
    let mut p3 = 1usize;
    while p3 < best {
        let mut v = p3;
        while v < n {
            v *= 2;
        }
        best = best.min(v);
        p3 *= 3;
    }
    best
}

fn max_transform(dim: usize) -> usize {
    if dim == 1 {
        MAX_TRANSFORM_1D
    } else {
        MAX_TRANSFORM_2D
    }
}

fn transform(data: &mut [Complex64], m: usize, dim: usize, inverse: bool) {
    let fft = plan(m, inverse);
    if dim == 1 {
        fft.process(data);
        return;
    }
    fft.process(data);
    transpose(data, m);
    fft.process(data);
    transpose(data, m);
}

fn transpose(data: &mut [Complex64], m: usize) {
    for i in 0..m {
        for j in (i + 1)..m {
            data.swap(i * m + j, j * m + i);
        }
    }
}

/// Signed angular frequency of DFT bin `k` for transform length `m`, spacing `h`.
fn frequency(k: usize, m: usize, h: f64) -> f64 {
    let signed = if k <= m / 2 {
        k as f64
    } else {
        k as f64 - m as f64
    };
    2.0 * PI * signed / (m as f64 * h)
}

/// Forward transform of a grid function embedded in an `m^n` torus.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: GridBox,
    m: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    /// Zero-extends `f` and embeds it in a torus with at least `pad_length`
    /// of empty space per axis, so that wrap-around contributions come from
    /// kernel mass beyond distance `pad_length`.
    pub fn zero_padded(f: &GridFunction, pad_length: f64) -> Result<Self> {
        Ok(Self::embed(f, Self::padded_len(f.grid(), pad_length)?))
    }

    /// Transform length used by [`Spectrum::zero_padded`].
    pub fn padded_len(grid: &GridBox, pad_length: f64) -> Result<usize> {
        let n = grid.points_per_axis();
        let extra = (pad_length.max(0.0) / grid.h()).ceil();
        let limit = max_transform(grid.dim());
        let too_long = Error::Truncation {
            scale: pad_length,
            tail: 1.0,
            tol: 0.0,
        };
        if !extra.is_finite() || extra >= limit as f64 {
            return Err(too_long);
        }
        let m = smooth_size(n + extra as usize);
        if m > limit {
            return Err(too_long);
        }
        Ok(m)
    }

    /// Embeds `f` in a torus of `m >= N` points per axis.
    pub fn with_len(f: &GridFunction, m: usize) -> Result<Self> {
        let grid = f.grid();
        if m < grid.points_per_axis() || m > max_transform(grid.dim()) {
            return Err(Error::InvalidInput(format!(
                "transform length {m} for {} points",
                grid.points_per_axis()
            )));
        }
        Ok(Self::embed(f, m))
    }

    /// Treats the box as a torus (periodic extension).
    pub fn periodic(f: &GridFunction) -> Self {
        Self::embed(f, f.grid().points_per_axis())
    }

    fn embed(f: &GridFunction, m: usize) -> Self {
        let grid = f.grid().clone();
        let n = grid.points_per_axis();
        let dim = grid.dim();
        let mut data = vec![Complex64::new(0.0, 0.0); m.pow(dim as u32)];
        match dim {
            1 => {
                for (d, v) in data.iter_mut().zip(f.values()) {
                    d.re = *v;
                }
            }
            _ => {
                for i in 0..n {
                    for j in 0..n {
                        data[i * m + j].re = f.values()[i * n + j];
                    }
                }
            }
        }
        transform(&mut data, m, dim, false);
        Self { grid, m, data }
    }

    pub fn transform_len(&self) -> usize {
        self.m
    }

    /// Grid spacing times transform length: the torus period per axis.
    pub fn period(&self, axis: usize) -> f64 {
        self.m as f64 * self.grid.spacing(axis)
    }

    /// Smallest nonzero `|xi|` on the torus.
    pub fn min_frequency(&self) -> f64 {
        (0..self.grid.dim())
            .map(|a| 2.0 * PI / self.period(a))
            .fold(f64::INFINITY, f64::min)
    }

    /// Zero-frequency coefficient divided by the torus volume, i.e. the mean
    /// of the embedded function over the torus.
    pub fn torus_mean(&self) -> f64 {
        self.data[0].re / (self.m.pow(self.grid.dim() as u32) as f64)
    }

    /// Applies the radial symbol `symbol(|xi|^2)` and returns the result on
    /// the box nodes.
    pub fn apply(&self, symbol: impl Fn(f64) -> f64) -> GridFunction {
        let mut acc = SpectralSum::new(&self.grid, self.m);
        acc.add(self, symbol);
        acc.finish()
    }
}

/// Sum of several spectra, each multiplied by its own radial symbol, with a
/// single inverse transform at the end.
#[derive(Clone, Debug)]
pub struct SpectralSum {
    grid: GridBox,
    m: usize,
    data: Vec<Complex64>,
}

impl SpectralSum {
    pub fn new(grid: &GridBox, m: usize) -> Self {
        Self {
            grid: grid.clone(),
            m,
            data: vec![Complex64::new(0.0, 0.0); m.pow(grid.dim() as u32)],
        }
    }

    pub fn transform_len(&self) -> usize {
        self.m
    }

    /// Adds `symbol(|xi|^2) * spec`; the spectrum must share grid and length.
    pub fn add(&mut self, spec: &Spectrum, symbol: impl Fn(f64) -> f64) {
        assert_eq!(spec.m, self.m, "transform length mismatch");
        assert_eq!(spec.grid, self.grid, "grid mismatch");
        let m = self.m;
        match self.grid.dim() {
            1 => {
                let h = self.grid.spacing(0);
                for (k, (c, d)) in self.data.iter_mut().zip(&spec.data).enumerate() {
                    let xi = frequency(k, m, h);
                    *c += d * symbol(xi * xi);
                }
            }
            _ => {
                let h0 = self.grid.spacing(0);
                let h1 = self.grid.spacing(1);
                let xi1: Vec<f64> = (0..m).map(|k| frequency(k, m, h1).powi(2)).collect();
                for i in 0..m {
                    let a = frequency(i, m, h0).powi(2);
                    for j in 0..m {
                        self.data[i * m + j] += spec.data[i * m + j] * symbol(a + xi1[j]);
                    }
                }
            }
        }
    }

    /// Adds another accumulator of the same shape.
    pub fn merge(&mut self, other: &SpectralSum) {
        assert_eq!(other.m, self.m, "transform length mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn finish(self) -> GridFunction {
        let dim = self.grid.dim();
        let m = self.m;
        let mut buf = self.data;
        transform(&mut buf, m, dim, true);
        let norm = 1.0 / (m.pow(dim as u32) as f64);
        let n = self.grid.points_per_axis();
        let values = match dim {
            1 => buf[..n].iter().map(|c| c.re * norm).collect(),
            _ => {
                let mut v = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        v.push(buf[i * m + j].re * norm);
                    }
                }
                v
            }
        };
        GridFunction::from_parts(self.grid, values)
    }
}

/// Radial kernel family `k_t(r)` in dimension `dim`.
pub trait RadialKernel: Sync {
    fn value(&self, r: f64, t: f64, dim: usize) -> f64;
}

impl<F> RadialKernel for F
where
    F: Fn(f64, f64, usize) -> f64 + Sync,
{
    fn value(&self, r: f64, t: f64, dim: usize) -> f64 {
        self(r, t, dim)
    }
}

/// Heat kernel of `-Laplacian`: `(4 pi t)^(-n/2) exp(-r^2 / (4t))`.
#[derive(Clone, Copy, Debug, Default)]
pub struct GaussianHeatKernel;

impl RadialKernel for GaussianHeatKernel {
    fn value(&self, r: f64, t: f64, dim: usize) -> f64 {
        (4.0 * PI * t).powf(-(dim as f64) / 2.0) * (-r * r / (4.0 * t)).exp()
    }
}

/// `x_i -> sum_j k_t(|x_i - x_j|) f_j h^n` with `f` zero outside the box.
///
/// The kernel is sampled on every offset realized between two box nodes. If
/// more than `tol` of the kernel's absolute mass lies beyond that window the
/// call fails with [`Error::Truncation`].
pub fn apply_kernel(
    f: &GridFunction,
    kernel: &dyn RadialKernel,
    t: f64,
    tol: f64,
) -> Result<GridFunction> {
    let grid = f.grid();
    let dim = grid.dim();
    let n = grid.points_per_axis();
    let vol = grid.cell_volume();
    let h: Vec<f64> = (0..dim).map(|a| grid.spacing(a)).collect();

    let tail = kernel_tail_fraction(kernel, t, grid);
    if tail > tol {
        return Err(Error::Truncation {
            scale: t,
            tail,
            tol,
        });
    }

    let m = smooth_size(2 * n);
    let offset = |d: usize| -> f64 {
        if d < n {
            d as f64
        } else {
            d as f64 - m as f64
        }
    };
    let mut kern = vec![Complex64::new(0.0, 0.0); m.pow(dim as u32)];
    match dim {
        1 => {
            for d in (0..n).chain(m + 1 - n..m) {
                kern[d].re = kernel.value((offset(d) * h[0]).abs(), t, 1) * vol;
            }
        }
        _ => {
            for i in (0..n).chain(m + 1 - n..m) {
                let a = offset(i) * h[0];
                for j in (0..n).chain(m + 1 - n..m) {
                    let b = offset(j) * h[1];
                    kern[i * m + j].re = kernel.value((a * a + b * b).sqrt(), t, 2) * vol;
                }
            }
        }
    }
    transform(&mut kern, m, dim, false);
    let spec = Spectrum::embed(f, m);
    let mut buf = spec.data;
    for (b, k) in buf.iter_mut().zip(&kern) {
        *b *= k;
    }
    transform(&mut buf, m, dim, true);
    let norm = 1.0 / (m.pow(dim as u32) as f64);
    let values = match dim {
        1 => buf[..n].iter().map(|c| c.re * norm).collect(),
        _ => {
            let mut v = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    v.push(buf[i * m + j].re * norm);
                }
            }
            v
        }
    };
    GridFunction::new(grid.clone(), values)
}

/// Fraction of `sum |k| h^n` over an extended window (four box widths per
/// side) that falls outside the node-offset window of the box.
fn kernel_tail_fraction(kernel: &dyn RadialKernel, t: f64, grid: &GridBox) -> f64 {
    let dim = grid.dim();
    let n = grid.points_per_axis() as i64;
    let reach = 4 * n;
    let h0 = grid.spacing(0);
    let (mut inside, mut total) = (0.0, 0.0);
    match dim {
        1 => {
            for d in -reach..=reach {
                let v = kernel.value((d as f64 * h0).abs(), t, 1).abs();
                total += v;
                if d.abs() < n {
                    inside += v;
                }
            }
        }
        _ => {
            let h1 = grid.spacing(1);
            let reach = 2 * n;
            for i in -reach..=reach {
                let a = i as f64 * h0;
                for j in -reach..=reach {
                    let b = j as f64 * h1;
                    let v = kernel.value((a * a + b * b).sqrt(), t, 2).abs();
                    total += v;
                    if i.abs() < n && j.abs() < n {
                        inside += v;
                    }
                }
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        (total - inside) / total
    }
}
