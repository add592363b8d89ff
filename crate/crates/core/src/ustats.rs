//! U- and V-statistics of degree at most four with real-array kernels.
//!
//! Kernel values are flat `f64` buffers; matrix kernels store row-major.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 4;

pub trait Kernel<T>: Sync {
    fn degree(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Whether the value is invariant under permutations of the arguments.
    fn symmetric(&self) -> bool {
        true
    }
    /// Write `Φ(args)` into `out` (length [`Kernel::output_dim`]).
    fn eval(&self, args: &[&T], out: &mut [f64]);
}

/// Kernel from a closure.
pub struct FnKernel<F> {
    degree: usize,
    dim: usize,
    symmetric: bool,
    f: F,
}

impl<F> FnKernel<F> {
    pub fn new(degree: usize, dim: usize, symmetric: bool, f: F) -> Self {
        FnKernel {
            degree,
            dim,
            symmetric,
            f,
        }
    }
}

impl<T, F> Kernel<T> for FnKernel<F>
where
    F: Fn(&[&T], &mut [f64]) + Sync,
{
    fn degree(&self) -> usize {
        self.degree
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn symmetric(&self) -> bool {
        self.symmetric
    }
    fn eval(&self, args: &[&T], out: &mut [f64]) {
        (self.f)(args, out)
    }
}

fn check_degree(m: usize) -> Result<()> {
    if m == 0 || m > MAX_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "kernel degree must be between 1 and {MAX_DEGREE}, got {m}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Tuples {
    /// `i₁ < … < i_m`.
    Increasing,
    /// Pairwise distinct, any order.
    Distinct,
    /// All of `{0..n}^m`.
    All,
}

/// Sum of kernel values over the tuples whose first index is `lead`.
fn block_sum<T, K: Kernel<T> + ?Sized>(kernel: &K, data: &[T], lead: usize, mode: Tuples) -> (Vec<f64>, usize) {
    struct Walk<'a, T, K: ?Sized> {
        kernel: &'a K,
        data: &'a [T],
        mode: Tuples,
        idx: Vec<usize>,
        args: Vec<&'a T>,
        total: Vec<f64>,
        buf: Vec<f64>,
        count: usize,
    }

    impl<'a, T, K: Kernel<T> + ?Sized> Walk<'a, T, K> {
        fn go(&mut self, depth: usize) {
            if depth == self.idx.len() {
                self.kernel.eval(&self.args, &mut self.buf);
                for (t, b) in self.total.iter_mut().zip(&self.buf) {
                    *t += b;
                }
                self.count += 1;
                return;
            }
            let start = match self.mode {
                Tuples::Increasing => self.idx[depth - 1] + 1,
                _ => 0,
            };
            for i in start..self.data.len() {
                if self.mode == Tuples::Distinct && self.idx[..depth].contains(&i) {
                    continue;
                }
                self.idx[depth] = i;
                self.args[depth] = &self.data[i];
                self.go(depth + 1);
            }
        }
    }

    let m = kernel.degree();
    let dim = kernel.output_dim();
    let mut walk = Walk {
        kernel,
        data,
        mode,
        idx: vec![lead; m],
        args: vec![&data[lead]; m],
        total: vec![0.0; dim],
        buf: vec![0.0; dim],
        count: 0,
    };
    walk.go(1);
    (walk.total, walk.count)
}

fn average<T: Sync, K: Kernel<T> + ?Sized>(kernel: &K, data: &[T], mode: Tuples) -> Vec<f64> {
    let blocks: Vec<(Vec<f64>, usize)> = (0..data.len())
        .into_par_iter()
        .map(|lead| block_sum(kernel, data, lead, mode))
        .collect();
    // Blocks are reduced in index order so the result does not depend on
    // scheduling.
    let mut total = vec![0.0; kernel.output_dim()];
    let mut count = 0usize;
    for (b, c) in blocks {
        for (t, v) in total.iter_mut().zip(b) {
            *t += v;
        }
        count += c;
    }
    total.iter().map(|t| t / count as f64).collect()
}

/// `C(n, m)⁻¹ Σ_{i₁<…<i_m} Φ(X_{i₁}, …, X_{i_m})`. A kernel not flagged
/// symmetric is averaged over all ordered tuples of distinct indices, i.e.
/// it is symmetrized.
pub fn u_statistic<T: Sync, K: Kernel<T> + ?Sized>(kernel: &K, data: &[T]) -> Result<Vec<f64>> {
    let m = kernel.degree();
    check_degree(m)?;
    if data.len() < m {
        return Err(Error::Arity { degree: m, n: data.len() });
    }
    let mode = if kernel.symmetric() {
        Tuples::Increasing
    } else {
        Tuples::Distinct
    };
    Ok(average(kernel, data, mode))
}

/// `n^{−m} Σ_{i₁} … Σ_{i_m} Φ(X_{i₁}, …, X_{i_m})`, diagonal tuples included.
pub fn v_statistic<T: Sync, K: Kernel<T> + ?Sized>(kernel: &K, data: &[T]) -> Result<Vec<f64>> {
    let m = kernel.degree();
    check_degree(m)?;
    if data.is_empty() {
        return Err(Error::Arity { degree: 1, n: 0 });
    }
    Ok(average(kernel, data, Tuples::All))
}

/// Resample of size `n` drawn with replacement.
pub fn resample<T: Clone, R: Rng + ?Sized>(data: &[T], rng: &mut R) -> Vec<T> {
    (0..data.len())
        .map(|_| data[rng.random_range(0..data.len())].clone())
        .collect()
}

/// U-statistic of a with-replacement resample; tuples range over distinct
/// positions of the resample, so repeated original observations may meet.
pub fn bootstrap_u_statistic<T: Sync + Clone, K: Kernel<T> + ?Sized, R: Rng + ?Sized>(
    kernel: &K,
    data: &[T],
    rng: &mut R,
) -> Result<Vec<f64>> {
    u_statistic(kernel, &resample(data, rng))
}

pub fn bootstrap_v_statistic<T: Sync + Clone, K: Kernel<T> + ?Sized, R: Rng + ?Sized>(
    kernel: &K,
    data: &[T],
    rng: &mut R,
) -> Result<Vec<f64>> {
    v_statistic(kernel, &resample(data, rng))
}

/// Degree-3 kernel whose V-statistic is the second-order part of the
/// corrected meat matrix at a fixed parameter.
///
/// Data items are row indices into the tables: `a` holds `A(β, Z_k)` as rows
/// (n × q) and `second` holds the second-order influence values
/// `φ̈(X_k, X_l)` (n × n). Output is the q × q matrix, row-major.
pub struct SecondOrderMeatKernel<'a> {
    a: &'a DMatrix<f64>,
    second: &'a DMatrix<f64>,
}

impl<'a> SecondOrderMeatKernel<'a> {
    pub fn new(a: &'a DMatrix<f64>, second: &'a DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if second.nrows() != n || second.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "second-order table is {}x{}, expected {n}x{n}",
                second.nrows(),
                second.ncols()
            )));
        }
        Ok(SecondOrderMeatKernel { a, second })
    }

    /// The full V-statistic `n⁻³ Σ_k h_k h_kᵀ` with `h_k = Σ_l A_l φ̈(X_l, X_k)`,
    /// computed in O(n²q) instead of O(n³q²).
    pub fn v_closed_form(&self) -> Vec<f64> {
        let n = self.a.nrows() as f64;
        let h = self.second.transpose() * self.a;
        let s = h.transpose() * &h / (n * n * n);
        let q = self.a.ncols();
        (0..q * q).map(|e| s[(e / q, e % q)]).collect()
    }
}

impl Kernel<usize> for SecondOrderMeatKernel<'_> {
    fn degree(&self) -> usize {
        3
    }
    fn output_dim(&self) -> usize {
        self.a.ncols() * self.a.ncols()
    }
    // Only the sum over all index arrangements is meaningful.
    fn symmetric(&self) -> bool {
        false
    }
    fn eval(&self, args: &[&usize], out: &mut [f64]) {
        let (x1, x2, x3) = (*args[0], *args[1], *args[2]);
        let s = self.second;
        let (p12, p13, p23) = (s[(x1, x2)], s[(x1, x3)], s[(x2, x3)]);
        let q = self.a.ncols();
        for i in 0..q {
            for j in 0..q {
                out[i * q + j] = (self.a[(x1, i)] * self.a[(x2, j)] * p13 * p23
                    + self.a[(x2, i)] * self.a[(x3, j)] * p12 * p13
                    + self.a[(x1, i)] * self.a[(x3, j)] * p12 * p23)
                    / 3.0;
            }
        }
    }
}

/// Largest absolute coordinate difference.
pub fn max_abs_deviation(value: &[f64], target: &[f64]) -> f64 {
    value
        .iter()
        .zip(target)
        .map(|(v, t)| (v - t).abs())
        .fold(0.0, f64::max)
}
