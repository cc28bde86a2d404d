use std::sync::OnceLock;

use crate::real::Real;

fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Nodes and weights on `[-1, 1]` for the supported orders 8, 16, 32 and 64.
pub fn gauss_legendre_rule(order: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static R8: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R16: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R32: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R64: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match order {
        8 => R8.get_or_init(|| legendre_nodes(8)),
        16 => R16.get_or_init(|| legendre_nodes(16)),
        32 => R32.get_or_init(|| legendre_nodes(32)),
        64 => R64.get_or_init(|| legendre_nodes(64)),
        _ => panic!("unsupported Gauss-Legendre order {order}"),
    }
}

/// Fixed-order Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, order: usize) -> T {
    let (x, w) = gauss_legendre_rule(order);
    let half = (b - a) / T::lit(2.0);
    let mid = (a + b) / T::lit(2.0);
    let mut s = T::zero();
    for (xi, wi) in x.iter().zip(w) {
        s = s + T::lit(*wi) * f(mid + half * T::lit(*xi));
    }
    s * half
}

/// Adaptive Gauss–Legendre quadrature by recursive bisection.
///
/// Each panel compares a 16-point rule against the sum over its two halves;
/// integrable endpoint singularities such as `sqrt(t)` are resolved by
/// repeated halving toward the singular end. Returns `None` on non-finite
/// integrand values.
pub fn adaptive_integral<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, rel_tol: T) -> Option<T> {
    if a == b {
        return Some(T::zero());
    }
    let tol = rel_tol.max(T::epsilon() * T::lit(16.0));
    let whole = gauss_legendre(f, a, b, 16);
    let density = whole.abs() / (b - a).abs();
    let v = recurse(f, a, b, whole, tol, density, 0)?;
    v.is_finite().then_some(v)
}

fn recurse<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, whole: T, tol: T, density: T, depth: u32) -> Option<T> {
    if !whole.is_finite() {
        return None;
    }
    let m = (a + b) / T::lit(2.0);
    let left = gauss_legendre(f, a, m, 16);
    let right = gauss_legendre(f, m, b, 16);
    let both = left + right;
    let scale = both.abs().max(density * (b - a).abs()).max(T::min_positive_value());
    if (both - whole).abs() <= tol * scale || depth >= 60 || m <= a || m >= b {
        return both.is_finite().then_some(both);
    }
    Some(recurse(f, a, m, left, tol, density, depth + 1)? + recurse(f, m, b, right, tol, density, depth + 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_integrate_polynomials_exactly() {
        for order in [8, 16, 32, 64] {
            let deg = 2 * order - 1;
            let v: f64 = gauss_legendre(&|x: f64| x.powi(deg as i32 - 1), 0.0, 1.0, order);
            assert!((v - 1.0 / (deg - 1 + 1) as f64).abs() < 1e-13, "order {order}");
            let (_, w) = gauss_legendre_rule(order);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn adaptive_handles_sqrt_endpoint() {
        let v = adaptive_integral(&|t: f64| t.sqrt(), 0.0, 1.0, 1e-14).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-13);
        let v = adaptive_integral(&|t: f64| 1.0 / t.sqrt(), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-6);
    }

    #[test]
    fn adaptive_reports_non_finite() {
        assert!(adaptive_integral(&|_t: f64| f64::NAN, 0.0, 1.0, 1e-10).is_none());
    }

    #[test]
    fn works_in_single_precision() {
        let v = adaptive_integral(&|t: f32| t * t, 0.0, 1.0, 1e-6).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
    }
}
