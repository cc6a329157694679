//! Uniform B-spline bases on an extended knot grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Highest spline order supported by the fixed-size local evaluation buffers.
pub const MAX_ORDER: usize = 12;

/// `grid_size` intervals over `[lo, hi]`, padded with `order` knots of the
/// same spacing on each side, giving `grid_size + order` basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineGrid {
    grid_size: usize,
    order: usize,
    lo: f64,
    hi: f64,
    step: f64,
    knots: Vec<f64>,
}

/// Nonzero basis values (and first derivatives) at one point.
///
/// `values[t]` belongs to basis function `start + t` for `t < count`.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis {
    pub start: usize,
    pub count: usize,
    pub values: [f64; MAX_ORDER + 1],
    pub derivs: [f64; MAX_ORDER + 1],
}

impl LocalBasis {
    const EMPTY: LocalBasis = LocalBasis { start: 0, count: 0, values: [0.0; MAX_ORDER + 1], derivs: [0.0; MAX_ORDER + 1] };
}

impl SplineGrid {
    pub fn new(grid_size: usize, order: usize, lo: f64, hi: f64) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::BadDimensions("grid size must be at least 1".into()));
        }
        if order > MAX_ORDER {
            return Err(Error::BadDimensions(alloc::format!("spline order {order} exceeds {MAX_ORDER}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::BadDimensions(alloc::format!("bad spline domain [{lo}, {hi}]")));
        }
        let step = (hi - lo) / grid_size as f64;
        let knots = (0..grid_size + 2 * order + 1).map(|m| knot_at(lo, step, order, m as isize)).collect();
        Ok(Self { grid_size, order, lo, hi, step, knots })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn basis_count(&self) -> usize {
        self.grid_size + self.order
    }

    /// All basis values at `x`, zero outside the extended knot span.
    pub fn basis(&self, x: f64) -> Result<Vec<f64>> {
        let local = self.local_basis(x)?;
        let mut out = vec![0.0; self.basis_count()];
        out[local.start..local.start + local.count].copy_from_slice(&local.values[..local.count]);
        Ok(out)
    }

    /// All basis derivatives at `x`.
    pub fn basis_derivative(&self, x: f64) -> Result<Vec<f64>> {
        let local = self.local_basis(x)?;
        let mut out = vec![0.0; self.basis_count()];
        out[local.start..local.start + local.count].copy_from_slice(&local.derivs[..local.count]);
        Ok(out)
    }

    /// Evaluates the at most `order + 1` nonzero basis functions at `x`
    /// together with their derivatives, via the triangular Cox–de Boor
    /// scheme on the knot span containing `x`.
    pub fn local_basis(&self, x: f64) -> Result<LocalBasis> {
        let mut out = LocalBasis::EMPTY;
        let (start, count) = self.local_basis_into(x, &mut out.values, &mut out.derivs)?;
        out.start = start;
        out.count = count;
        Ok(out)
    }

    /// As [`local_basis`](Self::local_basis), writing the `count` values and
    /// derivatives into the front of the given buffers (each at least
    /// `order + 1` long). Returns `(start, count)`.
    pub fn local_basis_into(&self, x: f64, values: &mut [f64], derivs: &mut [f64]) -> Result<(usize, usize)> {
        if !x.is_finite() {
            return Err(Error::NonFiniteInput(x));
        }
        let k = self.order;
        let last_knot = self.knots.len() - 1;
        if x < self.knots[0] || x >= self.knots[last_knot] {
            return Ok((0, 0));
        }
        // Span m with t_m <= x < t_{m+1}.
        let mut m = libm::floor((x - self.knots[0]) / self.step) as isize;
        m = m.clamp(0, last_knot as isize - 1);
        while m > 0 && x < self.knots[m as usize] {
            m -= 1;
        }
        while (m as usize) < last_knot - 1 && x >= self.knots[m as usize + 1] {
            m += 1;
        }

        let knot = |i: isize| knot_at(self.lo, self.step, k, i);
        let mut n = [0.0; MAX_ORDER + 1];
        let mut prev = [0.0; MAX_ORDER + 1];
        let mut left = [0.0; MAX_ORDER + 1];
        let mut right = [0.0; MAX_ORDER + 1];
        n[0] = 1.0;
        for j in 1..=k {
            if j == k {
                prev[..k].copy_from_slice(&n[..k]);
            }
            left[j] = x - knot(m + 1 - j as isize);
            right[j] = knot(m + j as isize) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }

        // n[r] is basis function m - k + r; drop indices outside [0, G + k).
        let first = m - k as isize;
        let lo_r = (-first).max(0) as usize;
        let hi_r = ((self.basis_count() as isize - first).min(k as isize + 1)).max(0) as usize;
        if hi_r <= lo_r {
            return Ok((0, 0));
        }
        let count = hi_r - lo_r;
        values[..count].copy_from_slice(&n[lo_r..hi_r]);
        let inv_h = 1.0 / self.step;
        for (t, r) in (lo_r..hi_r).enumerate() {
            derivs[t] = if k == 0 {
                0.0
            } else {
                let a = if r >= 1 { prev[r - 1] } else { 0.0 };
                let b = if r < k { prev[r] } else { 0.0 };
                (a - b) * inv_h
            };
        }
        Ok(((first + lo_r as isize) as usize, count))
    }
}

#[inline]
fn knot_at(lo: f64, step: f64, order: usize, index: isize) -> f64 {
    lo + (index - order as isize) as f64 * step
}
