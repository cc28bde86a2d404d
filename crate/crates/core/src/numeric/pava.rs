use crate::real::Real;

/// Least-squares nondecreasing fit (pool adjacent violators), equal weights.
pub fn isotonic_increasing<T: Real>(y: &[T]) -> Vec<T> {
    let mut means: Vec<T> = Vec::with_capacity(y.len());
    let mut sizes: Vec<usize> = Vec::with_capacity(y.len());
    for &v in y {
        means.push(v);
        sizes.push(1);
        while means.len() > 1 && means[means.len() - 2] > means[means.len() - 1] {
            let (m2, s2) = (means.pop().unwrap(), sizes.pop().unwrap());
            let (m1, s1) = (means.pop().unwrap(), sizes.pop().unwrap());
            let s = s1 + s2;
            means.push((m1 * T::of(s1) + m2 * T::of(s2)) / T::of(s));
            sizes.push(s);
        }
    }
    means.into_iter().zip(sizes).flat_map(|(m, s)| std::iter::repeat_n(m, s)).collect()
}
