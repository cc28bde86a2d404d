use crate::real::Real;

pub const DEFAULT_GRID_SIZE: usize = 1001;

/// Points `(1 - cos(pi i / (n-1))) / 2`, clustered at both ends of `[0, 1]`.
pub fn chebyshev_grid<T: Real>(n: usize) -> Vec<T> {
    let n = n.max(2);
    let m = T::of(n - 1);
    (0..n)
        .map(|i| {
            if i == 0 {
                T::zero()
            } else if i == n - 1 {
                T::one()
            } else {
                let c = (T::PI() * T::of(i) / m).cos();
                (T::one() - c) / T::lit(2.0)
            }
        })
        .collect()
}

pub fn uniform_grid<T: Real>(a: T, b: T, n: usize) -> Vec<T> {
    let n = n.max(2);
    let m = T::of(n - 1);
    (0..n).map(|i| if i == n - 1 { b } else { a + (b - a) * T::of(i) / m }).collect()
}
