use crate::error::{Error, Result};
use crate::numeric::diff::three_point_slopes;
use crate::numeric::quad::gauss_legendre;
use crate::real::Real;

/// Piecewise cubic Hermite interpolant on strictly increasing knots.
///
/// Outside the knot range the interpolant is held constant at the end values.
#[derive(Debug, Clone, PartialEq)]
pub struct Hermite<T> {
    x: Vec<T>,
    y: Vec<T>,
    d: Vec<T>,
}

impl<T: Real> Hermite<T> {
    /// Interpolant with the given node slopes, used as is.
    pub fn new(x: Vec<T>, y: Vec<T>, d: Vec<T>) -> Result<Self> {
        check_knots(&x, &y)?;
        if d.len() != x.len() {
            return Err(crate::error::invalid("slopes", "length differs from knots"));
        }
        Ok(Self { x, y, d })
    }

    /// Monotone interpolant: three-point slope estimates with Fritsch–Carlson limiting.
    pub fn monotone(x: Vec<T>, y: Vec<T>) -> Result<Self> {
        check_knots(&x, &y)?;
        let d = three_point_slopes(&x, &y);
        Self::monotone_with_slopes(x, y, d)
    }

    /// Monotone interpolant from supplied slopes; slopes are limited only
    /// where they would break monotonicity. Non-finite slopes are replaced.
    pub fn monotone_with_slopes(x: Vec<T>, y: Vec<T>, mut d: Vec<T>) -> Result<Self> {
        check_knots(&x, &y)?;
        let n = x.len();
        let three = T::lit(3.0);
        for i in 0..n {
            if !d[i].is_finite() {
                let j = if i + 1 < n { i } else { i - 1 };
                d[i] = three * (y[j + 1] - y[j]) / (x[j + 1] - x[j]);
            }
        }
        for i in 0..n - 1 {
            let delta = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
            if delta == T::zero() {
                d[i] = T::zero();
                d[i + 1] = T::zero();
                continue;
            }
            let mut a = d[i] / delta;
            let mut b = d[i + 1] / delta;
            if a < T::zero() {
                d[i] = T::zero();
                a = T::zero();
            }
            if b < T::zero() {
                d[i + 1] = T::zero();
                b = T::zero();
            }
            let s = a * a + b * b;
            if s > T::lit(9.0) {
                let tau = three / s.sqrt();
                d[i] = tau * a * delta;
                d[i + 1] = tau * b * delta;
            }
        }
        Ok(Self { x, y, d })
    }

    pub fn knots(&self) -> &[T] {
        &self.x
    }

    pub fn values(&self) -> &[T] {
        &self.y
    }

    pub fn slopes(&self) -> &[T] {
        &self.d
    }

    pub fn lo(&self) -> T {
        self.x[0]
    }

    pub fn hi(&self) -> T {
        self.x[self.x.len() - 1]
    }

    fn cell(&self, t: T) -> usize {
        let n = self.x.len();
        let k = self.x.partition_point(|&v| v <= t);
        k.clamp(1, n - 1) - 1
    }

    pub fn eval(&self, t: T) -> T {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        self.eval_in(self.cell(t), t)
    }

    fn eval_in(&self, i: usize, t: T) -> T {
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (two, three) = (T::lit(2.0), T::lit(3.0));
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = three * s2 - two * s3;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    /// First derivative; one-sided at the knot range ends, zero outside.
    pub fn deriv(&self, t: T) -> T {
        let n = self.x.len();
        if t < self.x[0] || t > self.x[n - 1] {
            return T::zero();
        }
        let i = self.cell(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (two, three, four, six) = (T::lit(2.0), T::lit(3.0), T::lit(4.0), T::lit(6.0));
        let s2 = s * s;
        ((six * s2 - six * s) * (self.y[i] - self.y[i + 1])
            + (three * s2 - four * s + T::one()) * h * self.d[i]
            + (three * s2 - two * s) * h * self.d[i + 1])
            / h
    }

    /// Inverse of a nondecreasing interpolant, clamped to the knot range.
    pub fn inverse(&self, v: T) -> T {
        let n = self.y.len();
        if v <= self.y[0] {
            return self.x[0];
        }
        if v >= self.y[n - 1] {
            return self.x[n - 1];
        }
        let k = self.y.partition_point(|&w| w <= v).clamp(1, n - 1) - 1;
        let (mut lo, mut hi) = (self.x[k], self.x[k + 1]);
        let mut t = lo + (hi - lo) * (v - self.y[k]) / (self.y[k + 1] - self.y[k]);
        for _ in 0..100 {
            let f = self.eval_in(k, t) - v;
            if f == T::zero() {
                return t;
            }
            if f > T::zero() {
                hi = t;
            } else {
                lo = t;
            }
            let slope = self.deriv(t);
            let newton = t - f / slope;
            let next = if slope > T::zero() && newton > lo && newton < hi { newton } else { (lo + hi) / T::lit(2.0) };
            if (next - t).abs() <= T::tiny() * t.abs().max(T::one()) || hi - lo <= T::tiny() {
                return next;
            }
            t = next;
        }
        t
    }

    /// `∫_a^b w(t) s(t) dt` with an 8-point rule per knot cell.
    pub fn integrate_weighted<W: Fn(T) -> T>(&self, w: &W, a: T, b: T) -> T {
        if b <= a {
            return T::zero();
        }
        let mut total = T::zero();
        let i0 = self.cell(a);
        let i1 = self.cell(b);
        for i in i0..=i1 {
            let lo = a.max(self.x[i]);
            let hi = b.min(self.x[i + 1]);
            if hi > lo {
                total = total + gauss_legendre(&|t: T| w(t) * self.eval_in(i, t), lo, hi, 8);
            }
        }
        total
    }
}

fn check_knots<T: Real>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(crate::error::invalid("knots", "need at least two knots and matching values"));
    }
    for w in x.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::NonMonotone { what: "interpolation knots", at: w[0].as_f64() });
        }
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "interpolation values", at: v.as_f64() });
    }
    Ok(())
}
