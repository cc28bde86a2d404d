use crate::error::{Error, Result};
use crate::real::Real;

/// Sign-change bracket on a continuous function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket<T> {
    pub lo: T,
    pub hi: T,
}

/// Bisection for a root of `f` in `[lo, hi]`; the endpoint values must not
/// share a strict sign.
pub fn bisect<T: Real, F: Fn(T) -> T>(f: F, bracket: Bracket<T>, tol: T) -> Result<T> {
    let Bracket { mut lo, mut hi } = bracket;
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == T::zero() {
        return Ok(lo);
    }
    if fhi == T::zero() {
        return Ok(hi);
    }
    if !(flo.is_finite() && fhi.is_finite()) || flo.signum() == fhi.signum() {
        return Err(Error::Domain(format!("no sign change on [{}, {}]", lo.as_f64(), hi.as_f64())));
    }
    for _ in 0..400 {
        let mid = (lo + hi) / T::lit(2.0);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == T::zero() {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) / T::lit(2.0))
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
pub fn golden_min<T: Real, F: Fn(T) -> T>(f: F, mut a: T, mut b: T, tol: T) -> T {
    let r = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..300 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    (a + b) / T::lit(2.0)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope<T: Real>(x: &[T], y: &[T]) -> Option<T> {
    let pts: Vec<(T, T)> =
        x.iter().zip(y).filter(|(a, b)| **a > T::zero() && **b > T::zero()).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = T::of(pts.len());
    let mx = pts.iter().map(|p| p.0).sum::<T>() / n;
    let my = pts.iter().map(|p| p.1).sum::<T>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<T>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<T>();
    (sxx > T::zero()).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x: f64| x * x - 2.0, Bracket { lo: 0.0, hi: 2.0 }, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn bisect_rejects_same_sign() {
        assert!(bisect(|x: f64| x * x + 1.0, Bracket { lo: 0.0, hi: 1.0 }, 1e-10).is_err());
    }

    #[test]
    fn golden_finds_parabola_vertex() {
        let m = golden_min(|x: f64| (x - 0.3).powi(2), 0.0, 1.0, 1e-12);
        assert!((m - 0.3).abs() < 1e-6);
    }

    #[test]
    fn loglog_slope_of_power() {
        let x: Vec<f64> = (1..20).map(|i| i as f64 * 0.01).collect();
        let y: Vec<f64> = x.iter().map(|t| 5.0 * t.powf(2.5)).collect();
        assert!((loglog_slope(&x, &y).unwrap() - 2.5).abs() < 1e-12);
    }
}
