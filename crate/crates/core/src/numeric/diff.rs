use crate::real::Real;

/// Derivative estimates at every node from the local quadratic through
/// three neighbouring points; one-sided at the ends.
pub fn three_point_slopes<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    let n = x.len();
    assert_eq!(n, y.len());
    if n < 2 {
        return vec![T::zero(); n];
    }
    if n == 2 {
        let s = (y[1] - y[0]) / (x[1] - x[0]);
        return vec![s, s];
    }
    let mut d = vec![T::zero(); n];
    for i in 1..n - 1 {
        let h1 = x[i] - x[i - 1];
        let h2 = x[i + 1] - x[i];
        d[i] = -h2 / (h1 * (h1 + h2)) * y[i - 1] + (h2 - h1) / (h1 * h2) * y[i] + h1 / (h2 * (h1 + h2)) * y[i + 1];
    }
    let (h1, h2) = (x[1] - x[0], x[2] - x[1]);
    d[0] = -(T::lit(2.0) * h1 + h2) / (h1 * (h1 + h2)) * y[0] + (h1 + h2) / (h1 * h2) * y[1]
        - h1 / (h2 * (h1 + h2)) * y[2];
    let (h1, h2) = (x[n - 2] - x[n - 3], x[n - 1] - x[n - 2]);
    d[n - 1] = h2 / (h1 * (h1 + h2)) * y[n - 3] - (h1 + h2) / (h1 * h2) * y[n - 2]
        + (h1 + T::lit(2.0) * h2) / (h2 * (h1 + h2)) * y[n - 1];
    d
}

/// Derivative of the Lagrange interpolant through the `width` nodes nearest
/// each point (centred where possible); falls back to three points on short input.
pub fn stencil_slopes<T: Real>(x: &[T], y: &[T], width: usize) -> Vec<T> {
    let n = x.len();
    assert_eq!(n, y.len());
    if n < width || width < 3 {
        return three_point_slopes(x, y);
    }
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(width / 2).min(n - width);
            let nodes = start..start + width;
            let mut d = T::zero();
            for j in nodes.clone() {
                let w = if j == i {
                    nodes.clone().filter(|&m| m != i).map(|m| T::one() / (x[i] - x[m])).sum::<T>()
                } else {
                    let num = nodes.clone().filter(|&m| m != i && m != j).fold(T::one(), |p, m| p * (x[i] - x[m]));
                    let den = nodes.clone().filter(|&m| m != j).fold(T::one(), |p, m| p * (x[j] - x[m]));
                    num / den
                };
                d = d + w * y[j];
            }
            d
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_quadratics() {
        let x = [0.0, 0.1, 0.35, 0.5, 0.9, 1.0];
        let y: Vec<f64> = x.iter().map(|t| 3.0 * t * t - t + 2.0).collect();
        let d = three_point_slopes(&x, &y);
        for (t, s) in x.iter().zip(&d) {
            assert!((s - (6.0 * t - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn stencil_exact_on_quartics() {
        let x = [0.0, 0.1, 0.35, 0.5, 0.55, 0.9, 1.0];
        let f = |t: f64| t.powi(4) - 2.0 * t.powi(3) + t;
        let df = |t: f64| 4.0 * t.powi(3) - 6.0 * t * t + 1.0;
        let y: Vec<f64> = x.iter().map(|&t| f(t)).collect();
        for (t, s) in x.iter().zip(stencil_slopes(&x, &y, 5)) {
            assert!((s - df(*t)).abs() < 1e-10);
        }
    }
}
