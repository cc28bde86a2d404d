//! Value-quantile recovery from the winning-bid distribution by successive
//! extension of the identified interval towards the lowest quantiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::competition::{identify_from_jumps, CompetitionEstimate};
use crate::detect::{detect_jumps, DetectionConfig, JumpSet};
use crate::equilibrium::WinningBidLaw;
use crate::error::{invalid, Error, Result};
use crate::numeric::{bisect, chebyshev_grid, isotonic_increasing, stencil_slopes, Bracket, Hermite};
use crate::real::Real;
use crate::simulate::OutcomeSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub alpha_min: f64,
    pub max_iter: usize,
    /// Global node grid on `[0, 1]`; each iteration uses the nodes it uncovers.
    pub grid_size: usize,
    /// Tolerated negative excursion of the top-component cdf argument.
    pub consistency_tol: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { alpha_min: 0.01, max_iter: 50, grid_size: 1001, consistency_tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredValue<T> {
    pub n_lo: usize,
    pub n_hi: usize,
    pub theta: T,
    /// Increasing quantile levels covering `[alpha_seq.last(), 1]`.
    pub alpha: Vec<T>,
    pub value: Vec<T>,
    /// `bids[n - n_lo][j] = B_n(alpha[j])`.
    pub bids: Vec<Vec<T>>,
    /// `(b, G_top(b))` pairs for the largest competition level.
    pub top_cdf: Vec<(T, T)>,
    pub alpha_seq: Vec<T>,
    /// `B_{n_hi - 1}(alpha_k)`; empty with a single component.
    pub beta_seq: Vec<T>,
    pub iterations: usize,
    /// The interval stopped shrinking before reaching `alpha_min`.
    pub stalled: bool,
}

impl<T: Real> RecoveredValue<T> {
    pub fn alpha_floor(&self) -> T {
        self.alpha[0]
    }

    /// Monotone interpolation of the recovered values; clamped outside the recovered range.
    pub fn value_at(&self, alpha: T) -> T {
        match Hermite::monotone(self.alpha.clone(), self.value.clone()) {
            Ok(h) => h.eval(alpha),
            Err(_) => self.value[0],
        }
    }

    pub fn bid(&self, n: usize) -> Option<&[T]> {
        (n >= self.n_lo && n <= self.n_hi).then(|| self.bids[n - self.n_lo].as_slice())
    }
}

/// Winning-bid law estimated from a sample: monotone cubic fit of the
/// empirical quantile function on a uniform level grid.
#[derive(Debug, Clone)]
pub struct EmpiricalWinningBid<T> {
    quantile: Hermite<T>,
}

impl<T: Real> EmpiricalWinningBid<T> {
    pub fn from_sorted(sorted: &[T], points: usize) -> Result<Self> {
        if sorted.len() < 2 {
            return Err(Error::SampleSize { needed: 2, got: sorted.len() });
        }
        if points < 4 {
            return Err(invalid("points", "need at least 4 quantile levels"));
        }
        let levels: Vec<T> = (0..points).map(|i| T::of(i) / T::of(points - 1)).collect();
        let values: Vec<T> = levels.iter().map(|&u| crate::competition::quantile_sorted(sorted, u)).collect();
        Ok(Self { quantile: Hermite::monotone(levels, values)? })
    }

    pub fn quantile_fn(&self) -> &Hermite<T> {
        &self.quantile
    }

    fn density(&self, b: T) -> T {
        let (lo, hi) = self.support();
        if b < lo || b > hi {
            return T::zero();
        }
        let d = self.quantile.deriv(self.quantile.inverse(b));
        if d > T::zero() {
            T::one() / d
        } else {
            T::infinity()
        }
    }
}

impl<T: Real> WinningBidLaw<T> for EmpiricalWinningBid<T> {
    fn cdf(&self, b: T) -> T {
        let (lo, hi) = self.support();
        if b < lo {
            T::zero()
        } else if b >= hi {
            T::one()
        } else {
            self.quantile.inverse(b)
        }
    }

    fn density_left(&self, b: T) -> T {
        self.density(b)
    }

    fn density_right(&self, b: T) -> T {
        self.density(b)
    }

    fn support(&self) -> (T, T) {
        let v = self.quantile.values();
        (v[0], v[v.len() - 1])
    }

    fn quantile(&self, u: T) -> T {
        self.quantile.eval(u)
    }
}

/// Lower-component bid quantiles given the current value tabulation.
struct Lower<T> {
    n: usize,
    cap: T,
    spline: Option<Hermite<T>>,
}

impl<T: Real> Lower<T> {
    /// `G_n(b)`; one at and above the upper bound.
    fn cdf(&self, b: T) -> T {
        if b >= self.cap {
            return T::one();
        }
        self.spline.as_ref().map_or(T::one(), |s| s.inverse(b))
    }

    /// Density of `G_n` at `b`.
    fn pdf(&self, b: T) -> T {
        if b >= self.cap {
            return T::zero();
        }
        match &self.spline {
            Some(s) => {
                let d = s.deriv(s.inverse(b));
                if d > T::zero() {
                    T::one() / d
                } else {
                    T::zero()
                }
            }
            None => T::zero(),
        }
    }
}

struct State<'a, T: Real> {
    law: &'a dyn WinningBidLaw<T>,
    est: &'a CompetitionEstimate<T>,
    lower: Vec<Lower<T>>,
}

impl<T: Real> State<'_, T> {
    /// `H(b) = G(b) - sum_{n < n_hi} p_n G_n(b)^n = p_top G_top(b)^n_hi`.
    fn h(&self, b: T) -> T {
        self.law.cdf(b) - self.lower.iter().map(|c| self.est.p(c.n) * c.cdf(b).powi(c.n as i32)).sum::<T>()
    }

    fn h_prime(&self, b: T, left: bool) -> T {
        let g = if left { self.law.density_left(b) } else { self.law.density_right(b) };
        g - self
            .lower
            .iter()
            .map(|c| self.est.p(c.n) * T::of(c.n) * c.cdf(b).powi(c.n as i32 - 1) * c.pdf(b))
            .sum::<T>()
    }
}

/// `B_n(a) = a^{-k} [b̄_n - k ∫_a^1 t^{k-1} V(t) dt]`, `k = (n - 1) / θ`, at
/// every node, with slopes from `B' = k (V - B) / a`.
fn lower_bids<T: Real>(alpha: &[T], value: &Hermite<T>, vals: &[T], upper: T, n: usize, theta: T) -> (Vec<T>, Vec<T>) {
    let k = T::of(n - 1) / theta;
    let m = alpha.len();
    let mut integral = vec![T::zero(); m];
    for j in (0..m - 1).rev() {
        let w = |t: T| t.powf(k - T::one());
        integral[j] = integral[j + 1] + value.integrate_weighted(&w, alpha[j], alpha[j + 1]);
    }
    let mut b = Vec::with_capacity(m);
    let mut d = Vec::with_capacity(m);
    for j in 0..m {
        let a = alpha[j];
        let bj = if j == m - 1 { upper } else { (upper - k * integral[j]) / a.powf(k) };
        b.push(bj);
        d.push(if a > T::zero() { k * (vals[j] - bj) / a } else { T::zero() });
    }
    (b, d)
}

/// First extension: the top component on `[b̄_{n_hi - 1}, b̄_{n_hi}]`.
pub fn step1_top_component<T: Real>(
    law: &dyn WinningBidLaw<T>,
    est: &CompetitionEstimate<T>,
    config: &RecoveryConfig,
) -> Result<RecoveredValue<T>> {
    iterate_recovery(law, est, &RecoveryConfig { max_iter: 1, ..*config })
}

pub fn iterate_recovery<T: Real>(
    law: &dyn WinningBidLaw<T>,
    est: &CompetitionEstimate<T>,
    config: &RecoveryConfig,
) -> Result<RecoveredValue<T>> {
    if !est.diagnostics.passed {
        return Err(Error::Diagnostics("competition estimate failed its inequality checks".into()));
    }
    if config.max_iter == 0 || !(config.alpha_min >= 0.0 && config.alpha_min < 1.0) {
        return Err(invalid("recovery", "need max_iter >= 1 and alpha_min in [0, 1)"));
    }
    let n_top = est.n_hi;
    let theta = est.theta;
    let p_top = *est.weights.last().unwrap();
    if !(p_top > T::zero()) {
        return Err(Error::Inconsistent("top competition weight is not positive".into()));
    }
    let top = *est.locations.last().unwrap();
    let tol = T::lit(config.consistency_tol);
    let grid = chebyshev_grid::<T>(config.grid_size.max(3));
    let lower_ns: Vec<usize> = (est.n_lo..n_top).collect();
    let mut state = State {
        law,
        est,
        lower: lower_ns.iter().map(|&n| Lower { n, cap: est.upper_bid(n).unwrap(), spline: None }).collect(),
    };

    let mut alpha: Vec<T> = Vec::new();
    let mut value: Vec<T> = Vec::new();
    let mut top_bid: Vec<T> = Vec::new();
    let mut lower_tabs: Vec<Vec<T>> = vec![Vec::new(); lower_ns.len()];
    let mut alpha_seq = Vec::new();
    let mut beta_seq = Vec::new();
    let mut stalled = false;
    let mut a_prev = T::one();
    let mut b_prev = match lower_ns.last() {
        Some(&n) => est.upper_bid(n).unwrap(),
        None => law.support().0,
    };

    for iter in 1..=config.max_iter {
        let arg = state.h(b_prev) / p_top;
        if arg < -tol {
            return Err(Error::Inconsistent(format!(
                "G at {} is below the mass of the lower components by {}",
                b_prev,
                -arg * p_top
            )));
        }
        let a_new = arg.max(T::zero()).min(T::one()).powf(T::one() / T::of(n_top));
        if iter > 1 && a_new > a_prev - T::lit(1e-12) {
            stalled = true;
            break;
        }
        let mut levels: Vec<T> = vec![a_new];
        levels.extend(grid.iter().copied().filter(|&a| a > a_new && a < a_prev));
        if iter == 1 {
            levels.push(T::one());
        }
        let sref = &state;
        let new: Vec<Option<(T, T, T)>> = levels
            .par_iter()
            .map(|&a| {
                let target = p_top * a.powi(n_top as i32);
                let b = if a == a_new {
                    b_prev
                } else if a == T::one() || sref.h(top) <= target {
                    top
                } else {
                    bisect(|b| sref.h(b) - target, Bracket { lo: b_prev, hi: top }, T::tiny() * top.abs().max(T::one()))
                        .ok()?
                };
                if a == T::zero() {
                    return Some((a, b, b));
                }
                // one-sided limits just inside the interval at discontinuity points
                let nudge = T::lit(8.0) * T::epsilon() * top.abs().max(T::one());
                let hp = if a == T::one() {
                    sref.h_prime(b - nudge, true)
                } else if a == a_new && iter == 1 {
                    sref.h_prime(b + nudge, false)
                } else {
                    sref.h_prime(b, false)
                };
                if !(hp > T::zero()) || !hp.is_finite() {
                    return None;
                }
                let slope = T::of(n_top) * p_top * a.powi(n_top as i32 - 1) / hp;
                Some((a, b, b + theta * a * slope / T::of(n_top - 1)))
            })
            .collect();
        for (a, b, v) in new.into_iter().flatten() {
            if v.is_finite() {
                alpha.push(a);
                top_bid.push(b);
                value.push(v);
            }
        }
        let mut order: Vec<usize> = (0..alpha.len()).collect();
        order.sort_by(|&i, &j| alpha[i].partial_cmp(&alpha[j]).unwrap());
        let mut sorted_a: Vec<T> = Vec::with_capacity(order.len());
        let mut sorted_b = Vec::with_capacity(order.len());
        let mut sorted_v = Vec::with_capacity(order.len());
        for i in order {
            if sorted_a.last().is_none_or(|&l| alpha[i] > l) {
                sorted_a.push(alpha[i]);
                sorted_b.push(top_bid[i]);
                sorted_v.push(value[i]);
            }
        }
        if sorted_a.len() < 2 {
            return Err(Error::Inconsistent("recovered fewer than two value nodes".into()));
        }
        alpha = sorted_a;
        top_bid = sorted_b;
        value = isotonic_increasing(&sorted_v);
        let vslopes = stencil_slopes(&alpha, &value, 5);
        let vspline = Hermite::monotone_with_slopes(alpha.clone(), value.clone(), vslopes)?;
        for (slot, c) in state.lower.iter_mut().enumerate() {
            let (b, d) = lower_bids(&alpha, &vspline, &value, c.cap, c.n, theta);
            let b = isotonic_increasing(&b);
            c.spline = Some(Hermite::monotone_with_slopes(alpha.clone(), b.clone(), d)?);
            lower_tabs[slot] = b;
        }
        alpha_seq.push(a_new);
        if let Some(last) = lower_tabs.last() {
            beta_seq.push(last[0]);
            b_prev = last[0];
        }
        a_prev = a_new;
        if a_new < T::lit(config.alpha_min) || a_new == T::zero() {
            break;
        }
    }

    let mut bids = lower_tabs;
    bids.push(top_bid.clone());
    let top_cdf = top_bid.iter().copied().zip(alpha.iter().copied()).collect();
    Ok(RecoveredValue {
        n_lo: est.n_lo,
        n_hi: n_top,
        theta,
        iterations: alpha_seq.len(),
        alpha,
        value,
        bids,
        top_cdf,
        alpha_seq,
        beta_seq,
        stalled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detection: DetectionConfig,
    pub recovery: RecoveryConfig,
    pub theta: f64,
    /// Smallest number of bidders; required, see `hill_n_lower` for a data-driven value.
    pub n_lo: usize,
    pub min_sample: usize,
    pub quantile_points: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detection: DetectionConfig::default(),
            recovery: RecoveryConfig::default(),
            theta: 1.0,
            n_lo: 2,
            min_sample: 500,
            quantile_points: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub jumps: JumpSet<T>,
    pub estimate: CompetitionEstimate<T>,
    /// `None` when the competition diagnostics fail.
    pub recovered: Option<RecoveredValue<T>>,
}

/// Detection, identification and recovery on the competitive sales of `sample`.
pub fn empirical_pipeline<T: Real>(sample: &OutcomeSample<T>, config: &PipelineConfig) -> Result<PipelineOutput<T>> {
    let w = sample.competitive_bids();
    if w.len() < config.min_sample {
        return Err(Error::SampleSize { needed: config.min_sample, got: w.len() });
    }
    let jumps = detect_jumps(&w, &config.detection)?;
    if jumps.jumps.is_empty() {
        return Err(Error::NotIdentified("no density discontinuity detected".into()));
    }
    let estimate = identify_from_jumps(&jumps, config.n_lo, T::lit(config.theta))?;
    if !estimate.diagnostics.passed {
        return Ok(PipelineOutput { jumps, estimate, recovered: None });
    }
    let law = EmpiricalWinningBid::from_sorted(&w, config.quantile_points)?;
    let recovered = iterate_recovery(&law, &estimate, &config.recovery)?;
    Ok(PipelineOutput { jumps, estimate, recovered: Some(recovered) })
}
