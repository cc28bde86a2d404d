//! From density discontinuities to the distribution of the number of bidders,
//! plus the lower-tail estimate of the smallest number of bidders.

use serde::{Deserialize, Serialize};

use crate::detect::JumpSet;
use crate::equilibrium::CompetitionPmf;
use crate::error::{invalid, Error, Result};
use crate::real::Real;
use crate::simulate::{OutcomeSample, Status};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inequality<T> {
    pub lhs: T,
    pub rhs: T,
    pub holds: bool,
}

impl<T: Real> Inequality<T> {
    fn le(lhs: T, rhs: T) -> Self {
        Self { lhs, rhs, holds: lhs <= rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitionDiagnostics<T> {
    pub positive_jumps: bool,
    /// `v̄ > b̄` at the largest discontinuity.
    pub value_above_top_bid: bool,
    pub weights_in_unit_interval: bool,
    /// `Σ w_k (b̄_top - b̄_k) <= θ`.
    pub upper_value: Inequality<T>,
    /// `1 + Σ w_k (b̄_k - b̄_n) / θ <= Σ w_k / w_n`, one per `n`.
    pub weight_bounds: Vec<Inequality<T>>,
    /// Largest observed bid against `v̄`; present when identified from a sample.
    pub sample_below_value: Option<Inequality<T>>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitionEstimate<T> {
    pub n_lo: usize,
    pub n_hi: usize,
    pub theta: T,
    /// `p_n` for `n = n_lo..=n_hi`.
    pub weights: Vec<T>,
    pub v_hi: T,
    pub locations: Vec<T>,
    pub sizes: Vec<T>,
    pub diagnostics: CompetitionDiagnostics<T>,
}

impl<T: Real> CompetitionEstimate<T> {
    pub fn pmf(&self) -> Result<CompetitionPmf<T>> {
        if !self.diagnostics.passed {
            return Err(Error::Inconsistent("competition diagnostics failed".into()));
        }
        CompetitionPmf::new(self.n_lo, self.weights.clone())
    }

    pub fn p(&self, n: usize) -> T {
        if n < self.n_lo || n > self.n_hi {
            T::zero()
        } else {
            self.weights[n - self.n_lo]
        }
    }

    /// Discontinuity location `b̄_n`.
    pub fn upper_bid(&self, n: usize) -> Option<T> {
        (n >= self.n_lo && n <= self.n_hi).then(|| self.locations[n - self.n_lo])
    }
}

/// `w_k = (k-1)/k Δ_k`.
fn jump_weights<T: Real>(sizes: &[T], n_lo: usize) -> Vec<T> {
    sizes.iter().enumerate().map(|(i, &d)| T::of(n_lo + i - 1) / T::of(n_lo + i) * d).collect()
}

fn check_jumps<T: Real>(locations: &[T], sizes: &[T], n_lo: usize) -> Result<()> {
    if locations.is_empty() {
        return Err(invalid("jumps", "no discontinuities"));
    }
    if locations.len() != sizes.len() {
        return Err(invalid("jumps", "locations and sizes differ in length"));
    }
    if n_lo < 2 {
        return Err(invalid("n_lo", "must be at least 2"));
    }
    if locations.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("jumps", "locations must be strictly increasing"));
    }
    if locations.iter().chain(sizes).any(|x| !x.is_finite()) {
        return Err(invalid("jumps", "non-finite location or size"));
    }
    Ok(())
}

/// Upper value bound and competition weights implied by discontinuity
/// locations `b̄_k` and sizes `Δ_k`, `k = n_lo, n_lo + 1, ...`, under CRRA
/// exponent `theta` (1 for risk neutrality).
pub fn identify_competition<T: Real>(
    locations: &[T],
    sizes: &[T],
    n_lo: usize,
    theta: T,
) -> Result<CompetitionEstimate<T>> {
    check_jumps(locations, sizes, n_lo)?;
    if !(theta > T::zero() && theta <= T::one()) {
        return Err(invalid("theta", format!("{theta} is not in (0, 1]")));
    }
    let w = jump_weights(sizes, n_lo);
    let s: T = w.iter().copied().sum();
    let mean: T = w.iter().zip(locations).map(|(w, b)| *w * *b).sum::<T>() / s;
    let v_hi = theta / s + mean;
    let weights: Vec<T> = w.iter().zip(locations).map(|(&wn, &b)| wn / s + wn * (mean - b) / theta).collect();
    let top = *locations.last().unwrap();

    let positive_jumps = sizes.iter().all(|&d| d > T::zero());
    let value_above_top_bid = v_hi > top;
    let weights_in_unit_interval = weights.iter().all(|&p| p >= T::zero() && p <= T::one());
    let spread: T = w.iter().zip(locations).map(|(&wk, &b)| wk * (top - b)).sum();
    let upper_value = Inequality::le(spread, theta);
    let weight_bounds: Vec<Inequality<T>> = w
        .iter()
        .zip(locations)
        .map(|(&wn, &bn)| {
            let lhs = T::one() + w.iter().zip(locations).map(|(&wk, &bk)| wk * (bk - bn)).sum::<T>() / theta;
            Inequality::le(lhs, s / wn)
        })
        .collect();
    let passed = positive_jumps && value_above_top_bid && weights_in_unit_interval;
    Ok(CompetitionEstimate {
        n_lo,
        n_hi: n_lo + locations.len() - 1,
        theta,
        weights,
        v_hi,
        locations: locations.to_vec(),
        sizes: sizes.to_vec(),
        diagnostics: CompetitionDiagnostics {
            positive_jumps,
            value_above_top_bid,
            weights_in_unit_interval,
            upper_value,
            weight_bounds,
            sample_below_value: None,
            passed,
        },
    })
}

pub fn identify_from_jumps<T: Real>(jumps: &JumpSet<T>, n_lo: usize, theta: T) -> Result<CompetitionEstimate<T>> {
    let mut est = identify_competition(&jumps.locations(), &jumps.sizes(), n_lo, theta)?;
    let check = Inequality::le(jumps.sample_max, est.v_hi);
    est.diagnostics.passed &= check.holds;
    est.diagnostics.sample_below_value = Some(check);
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum ThetaConstraint {
    /// `p_n(θ) <= 1`.
    WeightAtMostOne { n: usize },
    /// `p_n(θ) >= 0`.
    WeightNonNegative { n: usize },
    /// `v̄(θ)` above the largest discontinuity.
    UpperValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBound<T> {
    /// Largest implied lower bound; zero when no constraint is informative.
    pub lower: T,
    pub informative: bool,
    /// Constraints attaining `lower`.
    pub binding: Vec<ThetaConstraint>,
    pub candidates: Vec<(ThetaConstraint, T)>,
}

/// Lower bound on the CRRA exponent: every `p_n(θ) = a_n + c_n / θ` is affine
/// in `1/θ`, so each constraint solves in closed form.
pub fn crra_lower_bound<T: Real>(locations: &[T], sizes: &[T], n_lo: usize) -> Result<ThetaBound<T>> {
    check_jumps(locations, sizes, n_lo)?;
    let w = jump_weights(sizes, n_lo);
    let s: T = w.iter().copied().sum();
    let mean: T = w.iter().zip(locations).map(|(w, b)| *w * *b).sum::<T>() / s;
    let scale = T::lit(1e-12) * locations.iter().fold(T::zero(), |m, b| m.max(b.abs())).max(T::one());
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for (i, (&wn, &bn)) in w.iter().zip(locations).enumerate() {
        let n = n_lo + i;
        let a = wn / s;
        let c = wn * (mean - bn);
        if c > scale * wn && a < T::one() {
            upper.push((ThetaConstraint::WeightAtMostOne { n }, c / (T::one() - a)));
        } else if c < -scale * wn && a > T::zero() {
            lower.push((ThetaConstraint::WeightNonNegative { n }, -c / a));
        }
    }
    let top = *locations.last().unwrap();
    let spread: T = w.iter().zip(locations).map(|(&wk, &b)| wk * (top - b)).sum();
    let mut candidates = upper;
    candidates.extend(lower);
    if spread > scale * s {
        candidates.push((ThetaConstraint::UpperValue, spread));
    }
    let best = candidates.iter().fold(T::zero(), |m, c| m.max(c.1));
    let tol = T::lit(1e-9) * best.max(T::epsilon());
    let binding = candidates.iter().filter(|c| (c.1 - best).abs() <= tol).map(|c| c.0).collect::<Vec<_>>();
    Ok(ThetaBound { lower: best, informative: !candidates.is_empty(), binding, candidates })
}

fn default_cells() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HillConfig {
    /// Inclusive range of top-order counts `M`; defaults to `[ceil(0.1 L), ceil(0.3 L)]`.
    #[serde(default)]
    pub m_range: Option<(usize, usize)>,
    /// Quantile cells per covariate.
    #[serde(default = "default_cells")]
    pub cells: usize,
    #[serde(default)]
    pub use_covariates: bool,
    /// Average the normalized bids themselves instead of their logarithms.
    #[serde(default)]
    pub literal: bool,
}

impl Default for HillConfig {
    fn default() -> Self {
        Self { m_range: None, cells: 2, use_covariates: false, literal: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillEstimate<T> {
    /// `(M, ñ)` pairs.
    pub trace: Vec<(usize, T)>,
    /// Most frequent rounded value over the trace (smallest on ties).
    pub n_lo: usize,
    pub sample_size: usize,
}

/// `k` such that `k - 1/2 < x <= k + 1/2`.
pub fn round_half_down<T: Real>(x: T) -> i64 {
    (x - T::lit(0.5)).ceil().to_i64().unwrap_or(i64::MAX)
}

/// Hill statistic `ñ` at every `M` in `range` from the positive normalized
/// values sorted ascending (`W†_(2), W†_(3), ...`).
pub fn hill_trace<T: Real>(positive: &[T], range: (usize, usize), literal: bool) -> Result<Vec<(usize, T)>> {
    let (m_lo, m_hi) = range;
    if m_lo < 2 || m_hi < m_lo {
        return Err(invalid("m_range", format!("need 2 <= M_lo <= M_hi, got ({m_lo}, {m_hi})")));
    }
    if positive.len() + 1 < m_hi {
        return Err(Error::SampleSize { needed: m_hi - 1, got: positive.len() });
    }
    let term = |x: T| if literal { x } else { x.ln() };
    let mut prefix = Vec::with_capacity(m_hi);
    let mut acc = T::zero();
    prefix.push(acc);
    for &x in &positive[..m_hi - 1] {
        acc = acc + term(x);
        prefix.push(acc);
    }
    let trace: Vec<(usize, T)> = (m_lo..=m_hi)
        .map(|m| {
            let mean = prefix[m - 1] / T::of(m - 1);
            (m, T::one() / (positive[m - 2].ln() - mean))
        })
        .collect();
    if trace.iter().any(|(_, n)| !n.is_finite()) {
        return Err(Error::SampleSize { needed: m_hi, got: 0 });
    }
    Ok(trace)
}

/// Type-7 sample quantile of sorted data.
pub(crate) fn quantile_sorted<T: Real>(sorted: &[T], p: T) -> T {
    let h = T::of(sorted.len() - 1) * p;
    let i = h.floor().to_usize().unwrap_or(0).min(sorted.len() - 1);
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - T::of(i)) * (sorted[j] - sorted[i])
}

/// Lower value bound per record: the smallest observed bid in its covariate
/// cell, or the global minimum when covariates are unused or the cell is thin.
fn cell_lower_bounds<T: Real>(records: &[(T, &[T], &[T])], config: &HillConfig) -> Result<Vec<T>> {
    let min_of = |w: T, bids: &[T]| bids.iter().copied().fold(w, T::min);
    let global = records.iter().map(|(w, _, b)| min_of(*w, b)).fold(T::infinity(), T::min);
    if !config.use_covariates {
        return Ok(vec![global; records.len()]);
    }
    if config.cells == 0 {
        return Err(invalid("cells", "must be at least 1"));
    }
    let d = records.iter().map(|(_, x, _)| x.len()).min().unwrap_or(0);
    if d == 0 {
        return Err(Error::MissingColumn("x1".into()));
    }
    let cuts: Vec<Vec<T>> = (0..d)
        .map(|j| {
            let mut col: Vec<T> = records.iter().map(|(_, x, _)| x[j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (1..config.cells).map(|c| quantile_sorted(&col, T::of(c) / T::of(config.cells))).collect()
        })
        .collect();
    let cell_of =
        |x: &[T]| (0..d).fold(0usize, |acc, j| acc * config.cells + cuts[j].iter().filter(|&&c| x[j] > c).count());
    let cells: Vec<usize> = records.iter().map(|(_, x, _)| cell_of(x)).collect();
    let total = config.cells.pow(d as u32);
    let mut lows = vec![T::infinity(); total];
    let mut counts = vec![0usize; total];
    for ((w, _, b), &c) in records.iter().zip(&cells) {
        lows[c] = lows[c].min(min_of(*w, b));
        counts[c] += 1;
    }
    Ok(cells.iter().map(|&c| if counts[c] < 2 { global } else { lows[c] }).collect())
}

/// Normalized bids `W† = (W / v̲̂) / min(W / v̲̂) - 1`, sorted ascending.
pub fn normalized_bids<T: Real>(sample: &OutcomeSample<T>, config: &HillConfig) -> Result<Vec<T>> {
    let records: Vec<(T, &[T], &[T])> = sample
        .records
        .iter()
        .filter_map(|r| match r.status {
            Status::SoldCompetitive(w) => Some((w, r.covariates.as_slice(), r.bids.as_slice())),
            _ => None,
        })
        .collect();
    if records.is_empty() {
        return Err(Error::Empty);
    }
    let lows = cell_lower_bounds(&records, config)?;
    if lows.iter().any(|&l| !(l > T::zero())) {
        return Err(invalid("winning_bid", "normalization needs strictly positive lower bounds"));
    }
    let ratio: Vec<T> = records.iter().zip(&lows).map(|((w, _, _), &l)| *w / l).collect();
    let min = ratio.iter().copied().fold(T::infinity(), T::min);
    let mut out: Vec<T> = ratio.iter().map(|&r| r / min - T::one()).collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(out)
}

/// Hill estimate of the smallest number of bidders from the lower tail of
/// normalized winning bids.
pub fn hill_n_lower<T: Real>(sample: &OutcomeSample<T>, config: &HillConfig) -> Result<HillEstimate<T>> {
    let normalized = normalized_bids(sample, config)?;
    let positive: Vec<T> = normalized.iter().copied().filter(|&x| x > T::zero()).collect();
    let l = normalized.len();
    let range = config.m_range.unwrap_or(((l as f64 * 0.1).ceil() as usize, (l as f64 * 0.3).ceil() as usize));
    let range = (range.0.max(2), range.1.max(range.0.max(2)));
    let trace = hill_trace(&positive, range, config.literal)?;
    let mut counts = std::collections::BTreeMap::new();
    for (_, n) in &trace {
        *counts.entry(round_half_down(*n)).or_insert(0usize) += 1;
    }
    let modal = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(k, _)| *k).unwrap();
    Ok(HillEstimate { trace, n_lo: modal.max(0) as usize, sample_size: l })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsamples {
    /// Record indices with both covariates at or below their medians.
    pub low: Vec<usize>,
    /// Both covariates within their quartiles.
    pub medium: Vec<usize>,
    /// Both covariates above their medians.
    pub high: Vec<usize>,
}

/// Low / Medium / High split on the first two covariates; memberships may overlap.
pub fn subsample_split<T: Real>(sample: &OutcomeSample<T>) -> Result<Subsamples> {
    if sample.records.iter().any(|r| r.covariates.len() < 2) || sample.is_empty() {
        return Err(Error::MissingColumn("x1, x2".into()));
    }
    let q = |j: usize, p: f64| {
        let mut col: Vec<T> = sample.records.iter().map(|r| r.covariates[j]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        quantile_sorted(&col, T::lit(p))
    };
    let (med, q1, q3) = ([q(0, 0.5), q(1, 0.5)], [q(0, 0.25), q(1, 0.25)], [q(0, 0.75), q(1, 0.75)]);
    let mut out = Subsamples { low: Vec::new(), medium: Vec::new(), high: Vec::new() };
    for (i, r) in sample.records.iter().enumerate() {
        let x = &r.covariates;
        if x[0] <= med[0] && x[1] <= med[1] {
            out.low.push(i);
        }
        if (0..2).all(|j| x[j] >= q1[j] && x[j] <= q3[j]) {
            out.medium.push(i);
        }
        if x[0] > med[0] && x[1] > med[1] {
            out.high.push(i);
        }
    }
    Ok(out)
}

impl<T: Real> OutcomeSample<T> {
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}
