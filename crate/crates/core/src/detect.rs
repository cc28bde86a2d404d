//! Density-discontinuity detection from a sample of winning bids using
//! one-sided k-nearest-neighbour density estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Window fraction of the tentative jump and critical value.
    pub h0: f64,
    /// Window fraction of the segmented density.
    pub h1: f64,
    pub epsilon: f64,
    pub max_jumps: usize,
    /// Bias-correct jump sizes by extrapolating over two window lengths.
    pub refine_sizes: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { h0: 0.2, h1: 0.5, epsilon: 0.01, max_jumps: 10, refine_sizes: true }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h0 > 0.0 && self.h0 < self.h1 && self.h1 < 1.0) {
            return Err(invalid("h0", format!("need 0 < h0 < h1 < 1, got h0 = {}, h1 = {}", self.h0, self.h1)));
        }
        if self.h0 >= (-1.0f64).exp() {
            return Err(invalid("h0", format!("h0 = {} must be below 1/e for ln ln(1/h0) to exist", self.h0)));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        if self.max_jumps == 0 {
            return Err(invalid("max_jumps", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump<T> {
    pub location: T,
    /// Jump size used downstream (refined when configured).
    pub size: T,
    /// Left-minus-right density difference at the selected order statistic.
    pub raw_size: T,
    /// 0-based order-statistic index.
    pub index: usize,
    /// The right window reaches the sample maximum, so only the left side is informative.
    pub edge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint<T> {
    pub b: T,
    pub g: T,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSet<T> {
    /// Sorted by location.
    pub jumps: Vec<Jump<T>>,
    pub density: Vec<DensityPoint<T>>,
    pub sample_size: usize,
    pub sample_max: T,
    pub critical_constant: T,
    /// Indices skipped because their window had zero spacing.
    pub degenerate_windows: usize,
}

impl<T: Real> JumpSet<T> {
    pub fn locations(&self) -> Vec<T> {
        self.jumps.iter().map(|j| j.location).collect()
    }

    pub fn sizes(&self) -> Vec<T> {
        self.jumps.iter().map(|j| j.size).collect()
    }

    /// Segmented density at `b`, linear between evaluation points of the same
    /// segment and right-continuous across jumps.
    pub fn density_at(&self, b: T) -> T {
        let d = &self.density;
        if d.is_empty() || b < d[0].b || b > d[d.len() - 1].b {
            return T::zero();
        }
        let i = d.partition_point(|p| p.b <= b);
        if i == 0 {
            return d[0].g;
        }
        if i == d.len() {
            return d[i - 1].g;
        }
        let (a, c) = (d[i - 1], d[i]);
        if a.segment != c.segment || c.b == a.b {
            return if b == a.b { a.g } else { c.g };
        }
        a.g + (c.g - a.g) * (b - a.b) / (c.b - a.b)
    }

    /// Trapezoid integral of the segmented density within segments.
    pub fn density_mass(&self) -> T {
        self.density
            .windows(2)
            .filter(|w| w[0].segment == w[1].segment)
            .map(|w| (w[1].b - w[0].b) * (w[0].g + w[1].g) / T::lit(2.0))
            .sum()
    }
}

/// Sorts ascending; ties keep input order.
pub fn sort_sample<T: Real>(sample: &[T]) -> Result<Vec<T>> {
    if let Some(i) = sample.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFinite { what: "sample value", at: i as f64 });
    }
    let mut w = sample.to_vec();
    w.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(w)
}

/// Half window `round(h L / 2)`, at least 1.
pub fn half_window(l: usize, h: f64) -> usize {
    ((h * l as f64 / 2.0).round() as usize).max(1)
}

fn check_sample<T: Real>(sorted: &[T], index: usize) -> Result<()> {
    if sorted.len() < 4 {
        return Err(Error::SampleSize { needed: 4, got: sorted.len() });
    }
    if index >= sorted.len() {
        return Err(invalid("index", format!("{index} out of range for {} points", sorted.len())));
    }
    Ok(())
}

fn ratio<T: Real>(count: usize, l: usize, spread: T, index: usize) -> Result<T> {
    if count == 0 {
        return Ok(T::zero());
    }
    if !(spread > T::zero()) {
        return Err(Error::DegenerateWindow { index });
    }
    Ok(T::of(count) / (T::of(l) * spread))
}

/// Two-sided k-NN density at order statistic `index` (0-based).
pub fn knn_density<T: Real>(sorted: &[T], index: usize, h: f64) -> Result<T> {
    check_sample(sorted, index)?;
    let l = sorted.len();
    let k = half_window(l, h);
    let lo = index.saturating_sub(k);
    let hi = (index + k).min(l - 1);
    ratio(hi - lo, l, sorted[hi] - sorted[lo], index)
}

fn left_density<T: Real>(sorted: &[T], index: usize, k: usize) -> Result<T> {
    let lo = index.saturating_sub(k);
    ratio(index - lo, sorted.len(), sorted[index] - sorted[lo], index)
}

fn right_density<T: Real>(sorted: &[T], index: usize, k: usize) -> Result<T> {
    let hi = (index + k).min(sorted.len() - 1);
    ratio(hi - index, sorted.len(), sorted[hi] - sorted[index], index)
}

/// Left minus right k-NN density at order statistic `index`.
pub fn tentative_jump<T: Real>(sorted: &[T], index: usize, h0: f64) -> Result<T> {
    check_sample(sorted, index)?;
    let k = half_window(sorted.len(), h0);
    Ok(left_density(sorted, index, k)? - right_density(sorted, index, k)?)
}

/// `c(eps; h0) = sqrt(ln(1/h0)) + (ln ln(1/h0) - ln(pi) + 2 eps) / (2 sqrt(ln(1/h0)))`.
pub fn critical_constant(h0: f64, epsilon: f64) -> Result<f64> {
    if !(h0 > 0.0 && h0 < (-1.0f64).exp()) {
        return Err(invalid("h0", format!("h0 = {h0} must lie in (0, 1/e)")));
    }
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    let a = (1.0 / h0).ln();
    Ok(a.sqrt() + (a.ln() - std::f64::consts::PI.ln() + 2.0 * epsilon) / (2.0 * a.sqrt()))
}

/// Threshold `g * c(eps; h0)`.
pub fn critical_value<T: Real>(density: T, h0: f64, epsilon: f64) -> Result<T> {
    Ok(density * T::lit(critical_constant(h0, epsilon)?))
}

/// One-sided estimates extrapolated over windows `k` and `k/2`, cancelling the
/// first-order bias of each side.
fn refined_jump<T: Real>(sorted: &[T], index: usize, k: usize) -> Result<T> {
    let two = T::lit(2.0);
    let half = (k / 2).max(1);
    if half == k {
        return Ok(left_density(sorted, index, k)? - right_density(sorted, index, k)?);
    }
    let left = two * left_density(sorted, index, half)? - left_density(sorted, index, k)?;
    let right = two * right_density(sorted, index, half)? - right_density(sorted, index, k)?;
    Ok(left.max(T::zero()) - right.max(T::zero()))
}

/// Greedy extraction of density discontinuities followed by the segmented
/// density estimate.
pub fn detect_jumps<T: Real>(sorted: &[T], config: &DetectionConfig) -> Result<JumpSet<T>> {
    config.validate()?;
    let l = sorted.len();
    if l < 20 {
        return Err(Error::SampleSize { needed: 20, got: l });
    }
    if sorted.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("sample", "must be sorted ascending"));
    }
    let c = critical_constant(config.h0, config.epsilon)?;
    let k = half_window(l, config.h0);
    let scan: Vec<Option<(T, T)>> = (0..l)
        .into_par_iter()
        .map(|i| {
            let d = tentative_jump(sorted, i, config.h0).ok()?;
            let g = knn_density(sorted, i, config.h0).ok()?;
            Some((d, g * T::lit(c)))
        })
        .collect();
    let degenerate = scan.iter().filter(|s| s.is_none()).count();
    let mut excluded = vec![false; l];
    let mut jumps = Vec::new();
    while jumps.len() < config.max_jumps {
        let best = (0..l).filter(|&i| !excluded[i]).filter_map(|i| scan[i].map(|(d, crit)| (i, d, crit))).fold(
            None,
            |acc: Option<(usize, T, T)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            },
        );
        let Some((i, d, crit)) = best else { break };
        if d < crit || !(d > T::zero()) {
            break;
        }
        let size = if config.refine_sizes { refined_jump(sorted, i, k).unwrap_or(d) } else { d };
        jumps.push(Jump { location: sorted[i], size, raw_size: d, index: i, edge: i + k > l - 1 });
        for e in excluded.iter_mut().take((i + k).min(l - 1) + 1).skip(i.saturating_sub(k)) {
            *e = true;
        }
    }
    jumps.sort_by_key(|j| j.index);
    let cuts: Vec<usize> = jumps.iter().map(|j| j.index).collect();
    let density = segmented_density(sorted, &cuts, config.h1);
    Ok(JumpSet {
        jumps,
        density,
        sample_size: l,
        sample_max: sorted[l - 1],
        critical_constant: T::lit(c),
        degenerate_windows: degenerate,
    })
}

/// k-NN density restricted to segments `(cut_q, cut_{q+1}]`; the first segment
/// starts at index 0 and the last ends at the sample maximum.
pub fn segmented_density<T: Real>(sorted: &[T], cuts: &[usize], h1: f64) -> Vec<DensityPoint<T>> {
    let l = sorted.len();
    let k = half_window(l, h1);
    let mut bounds = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for &c in cuts {
        bounds.push((start, c));
        start = c + 1;
    }
    if start < l {
        bounds.push((start, l - 1));
    }
    let mut out = Vec::with_capacity(l);
    for (seg, &(a, b)) in bounds.iter().enumerate() {
        if b <= a {
            continue;
        }
        for i in a..=b {
            let hi = (i + k).min(b);
            let lo = i.saturating_sub(k).max(a);
            let spread = sorted[hi] - sorted[lo];
            if spread > T::zero() {
                out.push(DensityPoint { b: sorted[i], g: T::of(hi - lo) / (T::of(l) * spread), segment: seg });
            }
        }
    }
    out
}
