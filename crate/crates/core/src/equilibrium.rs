//! Benchmark equilibrium: value and bid quantile functions, conditional bid
//! distributions and the winning-bid mixture.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{adaptive_integral, bisect, chebyshev_grid, loglog_slope, three_point_slopes, Bracket, Hermite};
use crate::real::Real;

type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

#[derive(Clone)]
enum ValueKind<T> {
    Power { scale: T, exponent: T },
    Function { f: ScalarFn<T>, df: Option<ScalarFn<T>> },
    Tabulated(Hermite<T>),
}

/// Private-value quantile function `V` on `[0, 1]`.
#[derive(Clone)]
pub struct ValueQuantile<T> {
    kind: ValueKind<T>,
    lo: T,
    hi: T,
}

impl<T: Real> fmt::Debug for ValueQuantile<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            ValueKind::Power { exponent, .. } => format!("power({exponent})"),
            ValueKind::Function { .. } => "function".to_string(),
            ValueKind::Tabulated(h) => format!("tabulated({} knots)", h.knots().len()),
        };
        f.debug_struct("ValueQuantile").field("kind", &kind).field("v_lo", &self.lo).field("v_hi", &self.hi).finish()
    }
}

impl<T: Real> ValueQuantile<T> {
    /// `V(a) = lo + (hi - lo) a^exponent`.
    pub fn power(lo: T, hi: T, exponent: T) -> Result<Self> {
        if !(hi > lo) || !(exponent > T::zero()) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid("value quantile", "need hi > lo and a positive exponent"));
        }
        Ok(Self { kind: ValueKind::Power { scale: hi - lo, exponent }, lo, hi })
    }

    pub fn uniform(lo: T, hi: T) -> Result<Self> {
        Self::power(lo, hi, T::one())
    }

    /// Arbitrary quantile function, checked on a probe grid.
    pub fn from_fn(
        f: impl Fn(T) -> T + Send + Sync + 'static,
        df: Option<Box<dyn Fn(T) -> T + Send + Sync>>,
    ) -> Result<Self> {
        let f: ScalarFn<T> = Arc::new(f);
        let df: Option<ScalarFn<T>> = df.map(Arc::from);
        let v = Self { lo: f(T::zero()), hi: f(T::one()), kind: ValueKind::Function { f, df } };
        v.validate()?;
        Ok(v)
    }

    /// Monotone cubic interpolation of node values covering `[0, 1]`.
    ///
    /// Node values must be nondecreasing (ties can occur where increments fall
    /// below the floating point resolution) and `V(1) > V(0)`.
    pub fn tabulated(alpha: Vec<T>, values: Vec<T>) -> Result<Self> {
        if alpha.first() != Some(&T::zero()) || alpha.last() != Some(&T::one()) {
            return Err(invalid("value tabulation", "grid must start at 0 and end at 1"));
        }
        for w in values.windows(2) {
            if w[1] < w[0] {
                return Err(Error::NonMonotone { what: "value tabulation", at: w[0].as_f64() });
            }
        }
        if !(values[values.len() - 1] > values[0]) {
            return Err(Error::NonMonotone { what: "value tabulation", at: 0.0 });
        }
        let h = Hermite::monotone(alpha, values)?;
        Ok(Self::from_spline(h))
    }

    pub(crate) fn from_spline(h: Hermite<T>) -> Self {
        let lo = h.values()[0];
        let hi = *h.values().last().unwrap();
        Self { kind: ValueKind::Tabulated(h), lo, hi }
    }

    fn validate(&self) -> Result<()> {
        let probe: Vec<T> = chebyshev_grid(257);
        let vals: Vec<T> = probe.iter().map(|&a| self.eval(a)).collect();
        for (a, v) in probe.iter().zip(&vals) {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "value quantile", at: a.as_f64() });
            }
        }
        for (i, w) in vals.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::NonMonotone { what: "value quantile", at: probe[i].as_f64() });
            }
        }
        if let ValueKind::Function { df: Some(df), .. } = &self.kind {
            let h = T::lit(1e-5);
            for k in 1..20 {
                let a = T::of(k) / T::lit(20.0);
                let d = df(a);
                let fd = (self.eval(a + h) - self.eval(a - h)) / (h + h);
                if !(d > T::zero()) || (d - fd).abs() > T::lit(1e-3) * (T::one() + fd.abs()) {
                    return Err(invalid(
                        "value derivative",
                        format!("derivative {} disagrees with finite difference {} at {}", d, fd, a),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, alpha: T) -> T {
        let a = alpha.max(T::zero()).min(T::one());
        match &self.kind {
            ValueKind::Power { scale, exponent } => self.lo + *scale * a.powf(*exponent),
            ValueKind::Function { f, .. } => f(a),
            ValueKind::Tabulated(h) => h.eval(a),
        }
    }

    /// Analytic derivative when available (may be `+inf` at an endpoint).
    pub fn derivative(&self, alpha: T) -> Option<T> {
        let a = alpha.max(T::zero()).min(T::one());
        match &self.kind {
            ValueKind::Power { scale, exponent } => {
                if *exponent == T::one() {
                    Some(*scale)
                } else if a == T::zero() {
                    Some(if *exponent < T::one() { T::infinity() } else { T::zero() })
                } else {
                    Some(*scale * *exponent * a.powf(*exponent - T::one()))
                }
            }
            ValueKind::Function { df, .. } => df.as_ref().map(|d| d(a)),
            ValueKind::Tabulated(h) => Some(h.deriv(a)),
        }
    }

    /// Derivative, falling back to a finite difference.
    pub fn slope(&self, alpha: T) -> T {
        if let Some(d) = self.derivative(alpha) {
            return d;
        }
        let h = T::lit(1e-6);
        let a = alpha.max(T::zero()).min(T::one());
        let (l, r) = ((a - h).max(T::zero()), (a + h).min(T::one()));
        (self.eval(r) - self.eval(l)) / (r - l)
    }

    pub fn v_lo(&self) -> T {
        self.lo
    }

    pub fn v_hi(&self) -> T {
        self.hi
    }

    /// Value cdf `F = V^{-1}`.
    pub fn cdf(&self, v: T) -> T {
        if v <= self.lo {
            return T::zero();
        }
        if v >= self.hi {
            return T::one();
        }
        match &self.kind {
            ValueKind::Power { scale, exponent } => ((v - self.lo) / *scale).powf(exponent.recip()),
            ValueKind::Tabulated(h) => h.inverse(v),
            ValueKind::Function { .. } => {
                bisect(|a| self.eval(a) - v, Bracket { lo: T::zero(), hi: T::one() }, T::tiny()).unwrap_or(T::zero())
            }
        }
    }

    /// Value density `f(v) = 1 / V'(F(v))`.
    pub fn pdf(&self, v: T) -> T {
        if v < self.lo || v > self.hi {
            return T::zero();
        }
        T::one() / self.slope(self.cdf(v))
    }

    /// Truncated quantile `a -> V(q + (1 - q) a)`.
    pub fn truncated(&self, q: T) -> Self {
        let base = self.clone();
        let base_d = self.clone();
        let s = T::one() - q;
        let has_d = self.derivative(T::lit(0.5)).is_some();
        let df: Option<ScalarFn<T>> = has_d.then(|| Arc::new(move |a: T| s * base_d.slope(q + s * a)) as ScalarFn<T>);
        let f: ScalarFn<T> = Arc::new(move |a: T| base.eval(q + s * a));
        Self { lo: self.eval(q), hi: self.hi, kind: ValueKind::Function { f, df } }
    }

    /// Node values on a grid, for export.
    pub fn tabulate(&self, grid: &[T]) -> Vec<(T, T)> {
        grid.iter().map(|&a| (a, self.eval(a))).collect()
    }
}

/// Distribution of the number of bidders on `n_lo..=n_hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitionPmf<T> {
    n_lo: usize,
    weights: Vec<T>,
}

impl<T: Real> CompetitionPmf<T> {
    pub fn new(n_lo: usize, weights: Vec<T>) -> Result<Self> {
        if n_lo < 2 {
            return Err(invalid("n_lo", "must be at least 2"));
        }
        if weights.is_empty() || weights.iter().any(|w| !(*w > T::zero())) {
            return Err(invalid("weights", "must be nonempty and strictly positive"));
        }
        let total: T = weights.iter().copied().sum();
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(8.0) * T::of(weights.len()));
        if (total - T::one()).abs() > tol {
            return Err(invalid("weights", format!("sum to {total}, not 1")));
        }
        Ok(Self { n_lo, weights })
    }

    /// All mass on a single bidder count.
    pub fn degenerate(n: usize) -> Result<Self> {
        Self::new(n, vec![T::one()])
    }

    pub fn n_lo(&self) -> usize {
        self.n_lo
    }

    pub fn n_hi(&self) -> usize {
        self.n_lo + self.weights.len() - 1
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn p(&self, n: usize) -> T {
        if n < self.n_lo || n > self.n_hi() {
            T::zero()
        } else {
            self.weights[n - self.n_lo]
        }
    }

    pub fn counts(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.weights.iter().enumerate().map(move |(i, w)| (self.n_lo + i, *w))
    }
}

/// How a bid quantile maps back to values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BidKind<T> {
    /// Bidders know `n`: `V = B + theta a B' / (n - 1)`.
    Known,
    /// Bidders only know `n_potential` and the screening level `q`:
    /// `V = B + (a + q / (1 - q)) B' / (n_potential - 1)`.
    Pooled { q: T },
}

type ExactFn<T> = Arc<dyn Fn(T) -> (T, T) + Send + Sync>;

/// Conditional bid quantile function `B_n`.
///
/// Tabulated on a grid; below the first positive node the defining integral
/// is evaluated directly when the generating value quantile is known, so the
/// lower tail keeps its exact shape.
#[derive(Clone)]
pub struct BidQuantile<T> {
    n: usize,
    theta: T,
    kind: BidKind<T>,
    spline: Hermite<T>,
    exact: Option<ExactFn<T>>,
}

impl<T: Real> fmt::Debug for BidQuantile<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BidQuantile")
            .field("n", &self.n)
            .field("theta", &self.theta)
            .field("kind", &self.kind)
            .field("b_lo", &self.b_lo())
            .field("b_hi", &self.b_hi())
            .finish()
    }
}

impl<T: Real> BidQuantile<T> {
    pub(crate) fn from_nodes(
        n: usize,
        theta: T,
        kind: BidKind<T>,
        grid: Vec<T>,
        values: Vec<T>,
        slopes: Vec<T>,
    ) -> Result<Self> {
        for (i, w) in values.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::NonMonotone { what: "bid quantile", at: grid[i].as_f64() });
            }
        }
        let spline = Hermite::monotone_with_slopes(grid, values, slopes)?;
        Ok(Self { n, theta, kind, spline, exact: None })
    }

    /// Attaches a direct evaluator `a -> (B(a), B'(a))` used below the first positive node.
    pub(crate) fn with_exact(mut self, exact: ExactFn<T>) -> Self {
        self.exact = Some(exact);
        self
    }

    fn first_node(&self) -> T {
        self.spline.knots()[1]
    }

    fn near_zero(&self, alpha: T) -> Option<&ExactFn<T>> {
        match &self.exact {
            Some(e) if alpha > T::zero() && alpha < self.first_node() => Some(e),
            _ => None,
        }
    }

    /// Bid quantile from node values only; slopes by three-point differencing.
    pub fn from_tabulation(n: usize, theta: T, kind: BidKind<T>, grid: Vec<T>, values: Vec<T>) -> Result<Self> {
        check_grid(&grid)?;
        let slopes = three_point_slopes(&grid, &values);
        Self::from_nodes(n, theta, kind, grid, values, slopes)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn kind(&self) -> BidKind<T> {
        self.kind
    }

    pub fn grid(&self) -> &[T] {
        self.spline.knots()
    }

    pub fn values(&self) -> &[T] {
        self.spline.values()
    }

    pub fn eval(&self, alpha: T) -> T {
        match self.near_zero(alpha) {
            Some(e) => e(alpha).0,
            None => self.spline.eval(alpha),
        }
    }

    pub fn derivative(&self, alpha: T) -> T {
        match self.near_zero(alpha) {
            Some(e) => e(alpha).1,
            None => self.spline.deriv(alpha),
        }
    }

    pub fn b_lo(&self) -> T {
        self.spline.values()[0]
    }

    pub fn b_hi(&self) -> T {
        *self.spline.values().last().unwrap()
    }

    /// Conditional bid cdf `G_n = B_n^{-1}`, equal to 0 below and 1 above the support.
    pub fn cdf(&self, b: T) -> T {
        let v1 = self.spline.values()[1];
        match &self.exact {
            Some(e) if b > self.b_lo() && b < v1 => bisect(
                |a| e(a).0 - b,
                Bracket { lo: T::zero(), hi: self.first_node() },
                T::min_positive_value().max(T::tiny() * T::tiny()),
            )
            .unwrap_or_else(|_| self.spline.inverse(b)),
            _ => self.spline.inverse(b),
        }
    }

    /// Conditional bid density `g_n(b) = 1 / B_n'(G_n(b))` inside the support.
    pub fn pdf(&self, b: T) -> T {
        if b < self.b_lo() || b > self.b_hi() {
            return T::zero();
        }
        T::one() / self.derivative(self.cdf(b))
    }
}

fn check_grid<T: Real>(grid: &[T]) -> Result<()> {
    if grid.len() < 200 {
        return Err(invalid("grid", format!("need at least 200 points, got {}", grid.len())));
    }
    if grid[0] != T::zero() || *grid.last().unwrap() != T::one() {
        return Err(invalid("grid", "must include both endpoints 0 and 1"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("grid", "must be strictly increasing"));
    }
    Ok(())
}

fn check_theta<T: Real>(theta: T) -> Result<()> {
    if !(theta > T::zero() && theta <= T::one()) {
        return Err(invalid("theta", format!("{theta} is outside (0, 1]")));
    }
    Ok(())
}

fn quad_tol<T: Real>() -> T {
    T::lit(1e-14).max(T::epsilon() * T::lit(16.0))
}

/// Equilibrium bid quantile `B_n(a) = k a^{-k} ∫_0^a t^{k-1} V(t) dt`, `k = (n-1)/theta`.
pub fn bid_quantile_from_value<T: Real>(
    v: &ValueQuantile<T>,
    n: usize,
    theta: T,
    grid: &[T],
) -> Result<BidQuantile<T>> {
    if n < 2 {
        return Err(invalid("n", "need at least two bidders"));
    }
    check_theta(theta)?;
    check_grid(grid)?;
    let vals: Vec<T> = grid.iter().map(|&a| v.eval(a)).collect();
    for (i, w) in vals.windows(2).enumerate() {
        if w[1] < w[0] {
            return Err(Error::NonMonotone { what: "value quantile", at: grid[i].as_f64() });
        }
    }
    let k = T::of(n - 1) / theta;
    let nodes: Vec<Result<(T, T)>> = grid
        .par_iter()
        .zip(vals.par_iter())
        .map(|(&a, &va)| {
            if a == T::zero() {
                let d0 = v.slope(T::zero());
                return Ok((va, k / (k + T::one()) * d0));
            }
            let integrand = |u: T| u.powf(k - T::one()) * v.eval(a * u);
            let b = adaptive_integral(&integrand, T::zero(), T::one(), quad_tol())
                .map(|i| k * i)
                .ok_or(Error::NonFinite { what: "bid quadrature", at: a.as_f64() })?;
            Ok((b, k * (va - b) / a))
        })
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut slopes = Vec::with_capacity(grid.len());
    for node in nodes {
        let (b, d) = node?;
        values.push(b);
        slopes.push(d);
    }
    let src = v.clone();
    let exact: ExactFn<T> = Arc::new(move |a: T| {
        let integrand = |u: T| u.powf(k - T::one()) * src.eval(a * u);
        let b = adaptive_integral(&integrand, T::zero(), T::one(), quad_tol()).unwrap_or(T::nan()) * k;
        (b, k * (src.eval(a) - b) / a)
    });
    let bq = BidQuantile::from_nodes(n, theta, BidKind::Known, grid.to_vec(), values, slopes)?.with_exact(exact);
    if !(bq.b_hi() < v.v_hi()) {
        return Err(Error::Domain(format!("bid upper bound {} not below v_hi", bq.b_hi())));
    }
    Ok(bq)
}

/// Inverts the first-order condition on the tabulation grid.
pub fn value_from_bid_quantile<T: Real>(b: &BidQuantile<T>) -> Result<ValueQuantile<T>> {
    let grid = b.grid().to_vec();
    let vals = b.values();
    let d = three_point_slopes(&grid, vals);
    let m = T::of(b.n - 1);
    let out: Vec<T> = grid
        .iter()
        .zip(vals.iter().zip(&d))
        .map(|(&a, (&bv, &dv))| match b.kind {
            BidKind::Known => bv + b.theta * a * dv / m,
            BidKind::Pooled { q } => bv + (a + q / (T::one() - q)) * dv / m,
        })
        .collect();
    for (i, w) in out.windows(2).enumerate() {
        if w[1] < w[0] {
            return Err(Error::IncompatibleBid { n: b.n, at: grid[i].as_f64() });
        }
    }
    ValueQuantile::tabulated(grid, out)
}

/// Outcome of [`compatibility_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatibilityReport {
    pub max_discrepancy: f64,
    pub all_increasing: bool,
    pub compatible: bool,
    /// `(n, recovered values increasing)` per input.
    pub per_n: Vec<(usize, bool)>,
}

/// Tolerance and comparison window for [`compatibility_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityConfig {
    pub tolerance: f64,
    /// Nodes below this quantile level are skipped; differencing near a
    /// singular `V'(0)` is not informative.
    pub alpha_floor: f64,
}

impl Default for CompatibilityConfig {
    fn default() -> Self {
        Self { tolerance: 1e-3, alpha_floor: 0.01 }
    }
}

/// Checks that bid quantiles for different `n` map back to one value quantile.
pub fn compatibility_check<T: Real>(
    bids: &[BidQuantile<T>],
    config: CompatibilityConfig,
) -> Result<CompatibilityReport> {
    if bids.len() < 2 {
        return Err(invalid("bids", "need at least two bid quantiles"));
    }
    let grid = bids[0].grid();
    if bids.iter().any(|b| b.grid() != grid) {
        return Err(invalid("bids", "bid quantiles must share a grid"));
    }
    let mut per_n = Vec::new();
    let mut recovered = Vec::new();
    for b in bids {
        match value_from_bid_quantile(b) {
            Ok(v) => {
                per_n.push((b.n, true));
                recovered.push(Some(v));
            }
            Err(Error::IncompatibleBid { .. }) => {
                per_n.push((b.n, false));
                recovered.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let all_increasing = per_n.iter().all(|p| p.1);
    let floor = T::lit(config.alpha_floor);
    let mut max_discrepancy = 0.0f64;
    let ok: Vec<&ValueQuantile<T>> = recovered.iter().flatten().collect();
    for &a in grid.iter().filter(|&&a| a >= floor) {
        for i in 0..ok.len() {
            for j in i + 1..ok.len() {
                let d = (ok[i].eval(a) - ok[j].eval(a)).abs().as_f64();
                max_discrepancy = max_discrepancy.max(d);
            }
        }
    }
    Ok(CompatibilityReport {
        max_discrepancy,
        all_increasing,
        compatible: all_increasing && max_discrepancy < config.tolerance,
        per_n,
    })
}

/// Distribution of the winning bid.
pub trait WinningBidLaw<T: Real>: Sync {
    fn cdf(&self, b: T) -> T;
    /// Density, left limit at discontinuities.
    fn density_left(&self, b: T) -> T;
    /// Density, right limit at discontinuities.
    fn density_right(&self, b: T) -> T;
    fn support(&self) -> (T, T);

    fn quantile(&self, u: T) -> T {
        let (lo, hi) = self.support();
        if u <= T::zero() {
            return lo;
        }
        if u >= T::one() {
            return hi;
        }
        bisect(|b| self.cdf(b) - u, Bracket { lo, hi }, T::tiny() * hi.abs().max(T::one())).unwrap_or(hi)
    }
}

/// Winning-bid mixture `G = sum_n p_n G_n^n`.
#[derive(Clone)]
pub struct WinningBidMixture<T> {
    pmf: CompetitionPmf<T>,
    bids: Vec<BidQuantile<T>>,
    v_lo: T,
    v_hi: T,
}

/// A density discontinuity `(location, size)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpPoint<T> {
    pub location: T,
    pub size: T,
}

impl<T: Real> fmt::Debug for WinningBidMixture<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WinningBidMixture").field("pmf", &self.pmf).field("bids", &self.bids).finish()
    }
}

impl<T: Real> WinningBidMixture<T> {
    /// Assembles a mixture from already computed component bid quantiles.
    pub fn from_components(pmf: CompetitionPmf<T>, bids: Vec<BidQuantile<T>>, v_lo: T, v_hi: T) -> Result<Self> {
        if bids.len() != pmf.weights().len() {
            return Err(invalid("bids", "need one bid quantile per bidder count"));
        }
        if bids.iter().zip(pmf.counts()).any(|(b, (n, _))| b.n != n) {
            return Err(invalid("bids", "bid quantiles must be ordered by bidder count"));
        }
        Ok(Self { pmf, bids, v_lo, v_hi })
    }

    pub fn pmf(&self) -> &CompetitionPmf<T> {
        &self.pmf
    }

    pub fn bids(&self) -> &[BidQuantile<T>] {
        &self.bids
    }

    pub fn v_lo(&self) -> T {
        self.v_lo
    }

    pub fn v_hi(&self) -> T {
        self.v_hi
    }

    pub fn component(&self, n: usize) -> Option<&BidQuantile<T>> {
        self.bids.iter().find(|b| b.n == n)
    }

    pub fn cdf(&self, b: T) -> T {
        self.bids.iter().zip(self.pmf.weights()).map(|(bq, &p)| p * bq.cdf(b).powi(bq.n as i32)).sum()
    }

    fn density(&self, b: T, left: bool) -> T {
        let mut g = T::zero();
        for (bq, &p) in self.bids.iter().zip(self.pmf.weights()) {
            let inside = if left { b > bq.b_lo() && b <= bq.b_hi() } else { b >= bq.b_lo() && b < bq.b_hi() };
            if inside {
                let a = bq.cdf(b);
                g = g + p * T::of(bq.n) * a.powi(bq.n as i32 - 1) / bq.derivative(a);
            }
        }
        g
    }

    /// Density, left-continuous at the jump points.
    pub fn pdf(&self, b: T) -> T {
        self.density(b, true)
    }

    /// Jump sizes `n p_n g_n(b_n)` at each conditional upper bound.
    pub fn jump_points(&self) -> Vec<JumpPoint<T>> {
        self.bids
            .iter()
            .zip(self.pmf.weights())
            .map(|(bq, &p)| JumpPoint { location: bq.b_hi(), size: T::of(bq.n) * p / bq.derivative(T::one()) })
            .collect()
    }
}

impl<T: Real> WinningBidLaw<T> for WinningBidMixture<T> {
    fn cdf(&self, b: T) -> T {
        WinningBidMixture::cdf(self, b)
    }

    fn density_left(&self, b: T) -> T {
        self.density(b, true)
    }

    fn density_right(&self, b: T) -> T {
        self.density(b, false)
    }

    fn support(&self) -> (T, T) {
        (self.v_lo, self.bids.last().map(|b| b.b_hi()).unwrap_or(self.v_hi))
    }
}

/// Builds the winning-bid mixture implied by `V`, the bidder-count pmf and `theta`.
pub fn winning_bid_mixture<T: Real>(
    v: &ValueQuantile<T>,
    pmf: &CompetitionPmf<T>,
    theta: T,
    grid: &[T],
) -> Result<WinningBidMixture<T>> {
    let bids = pmf.counts().map(|(n, _)| bid_quantile_from_value(v, n, theta, grid)).collect::<Result<Vec<_>>>()?;
    WinningBidMixture::from_components(pmf.clone(), bids, v.v_lo(), v.v_hi())
}

/// Closed-form conditional densities at both ends of the bid support.
pub fn boundary_densities<T: Real>(v: &ValueQuantile<T>, n: usize, theta: T) -> Result<(T, T)> {
    if n < 2 {
        return Err(invalid("n", "need at least two bidders"));
    }
    check_theta(theta)?;
    let d0 = v.slope(T::zero());
    let d1 = v.slope(T::one());
    if d0.is_nan() || !(d0 > T::zero()) {
        return Err(Error::Domain(format!("V'(0) = {d0} is not positive")));
    }
    if !d1.is_finite() || !(d1 > T::zero()) {
        return Err(Error::Domain(format!("V'(1) = {d1} is not positive and finite")));
    }
    let k = T::of(n - 1) / theta;
    let lower = if d0.is_infinite() { T::zero() } else { (k + T::one()) / (k * d0) };
    let integrand = |u: T| u.powf(k - T::one()) * v.eval(u);
    let b_hi = adaptive_integral(&integrand, T::zero(), T::one(), quad_tol())
        .ok_or(Error::NonFinite { what: "bid upper bound", at: 1.0 })?
        * k;
    Ok((lower, theta / (T::of(n - 1) * (v.v_hi() - b_hi))))
}

/// Least-squares slope of `ln G(v_lo + t)` on `ln t` over the smaller half of the offsets.
pub fn tail_exponent_of_cdf<T: Real>(g: impl Fn(T) -> T, v_lo: T, t_grid: &[T]) -> Result<T> {
    let mut ts: Vec<T> = t_grid.iter().copied().filter(|t| *t > T::zero()).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pts: Vec<(T, T)> = ts.iter().map(|&t| (t, g(v_lo + t))).filter(|p| p.1 > T::zero()).collect();
    if pts.len() < 2 {
        return Err(Error::Tail("cdf vanishes on the offset grid".into()));
    }
    let keep = (pts.len() / 2).max(2);
    let (x, y): (Vec<T>, Vec<T>) = pts[..keep].iter().copied().unzip();
    loglog_slope(&x, &y).ok_or_else(|| Error::Tail("offsets carry no spread".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{chebyshev_grid, DEFAULT_GRID_SIZE};
    use proptest::prelude::*;

    fn grid() -> Vec<f64> {
        chebyshev_grid(DEFAULT_GRID_SIZE)
    }

    fn sqrt_v() -> ValueQuantile<f64> {
        ValueQuantile::power(0.0, 1.0, 0.5).unwrap()
    }

    fn sqrt_mixture() -> WinningBidMixture<f64> {
        let pmf = CompetitionPmf::new(2, vec![0.5, 0.5]).unwrap();
        winning_bid_mixture(&sqrt_v(), &pmf, 1.0, &grid()).unwrap()
    }

    /// Composite Simpson on a uniform mesh in `u`, after `u = s^2` to
    /// smooth the square-root endpoint.
    fn simpson_bid(v: &dyn Fn(f64) -> f64, k: f64, a: f64) -> f64 {
        let m = 20_000;
        let h = 1.0 / m as f64;
        let f = |s: f64| 2.0 * s * (s * s).powf(k - 1.0) * v(a * s * s);
        let mut acc = f(0.0) + f(1.0);
        for i in 1..m {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        k * acc * h / 3.0
    }

    #[test]
    fn sqrt_upper_bounds() {
        let g = grid();
        let b2 = bid_quantile_from_value(&sqrt_v(), 2, 1.0, &g).unwrap();
        let b3 = bid_quantile_from_value(&sqrt_v(), 3, 1.0, &g).unwrap();
        assert!((b2.b_hi() - 2.0 / 3.0).abs() < 1e-12);
        assert!((b3.b_hi() - 0.8).abs() < 1e-12);
        for &a in &[0.01, 0.2, 0.5, 0.93] {
            assert!((b2.eval(a) - 2.0 / 3.0 * a.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_bids_are_linear() {
        let v = ValueQuantile::uniform(0.0, 1.0).unwrap();
        for n in 2..6 {
            let b = bid_quantile_from_value(&v, n, 1.0, &grid()).unwrap();
            let c = (n - 1) as f64 / n as f64;
            for &a in &[0.0, 0.1, 0.37, 1.0] {
                assert!((b.eval(a) - c * a).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn risk_averse_bid_matches_quadrature_oracle() {
        let b = bid_quantile_from_value(&sqrt_v(), 2, 0.5, &grid()).unwrap();
        for &a in &[0.05, 0.3, 0.8, 1.0] {
            let oracle = simpson_bid(&|t| t.sqrt(), 2.0, a);
            assert!((b.eval(a) - oracle).abs() < 1e-8, "{a}");
            assert!((oracle - 2.0 / 2.5 * a.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn theta_one_is_risk_neutral_path() {
        let g = grid();
        let a = bid_quantile_from_value(&sqrt_v(), 3, 1.0, &g).unwrap();
        let b = bid_quantile_from_value(&sqrt_v(), 3, 1.0f64, &g).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn value_round_trip_examples() {
        let g = grid();
        for (n, _c) in [(2, 2.0 / 3.0), (3, 0.8)] {
            let b = bid_quantile_from_value(&sqrt_v(), n, 1.0, &g).unwrap();
            let v = value_from_bid_quantile(&b).unwrap();
            for &a in g.iter().filter(|a| **a >= 0.01) {
                assert!((v.eval(a) - a.sqrt()).abs() < 1e-4);
            }
        }
        let lin: Vec<f64> = g.iter().map(|a| 0.75 * a).collect();
        let b = BidQuantile::from_tabulation(4, 1.0, BidKind::Known, g.clone(), lin).unwrap();
        let v = value_from_bid_quantile(&b).unwrap();
        assert!((v.eval(0.4) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn value_round_trip_against_finite_difference_oracle() {
        let g = grid();
        let vals: Vec<f64> = g.iter().map(|a| 0.8 * a.sqrt()).collect();
        let b = BidQuantile::from_tabulation(3, 1.0, BidKind::Known, g, vals).unwrap();
        let v = value_from_bid_quantile(&b).unwrap();
        let h = 1e-6;
        for &a in &[0.02f64, 0.25, 0.6, 0.9] {
            let fd = 0.8 * ((a + h).sqrt() - (a - h).sqrt()) / (2.0 * h);
            let oracle = 0.8 * a.sqrt() + a * fd / 2.0;
            assert!((v.eval(a) - oracle).abs() < 1e-4);
        }
    }

    #[test]
    fn compatibility_examples() {
        let g = grid();
        let b2 = bid_quantile_from_value(&sqrt_v(), 2, 1.0, &g).unwrap();
        let b3 = bid_quantile_from_value(&sqrt_v(), 3, 1.0, &g).unwrap();
        let r = compatibility_check(&[b2.clone(), b3], CompatibilityConfig::default()).unwrap();
        assert!(r.compatible && r.max_discrepancy < 1e-4);

        let lin = bid_quantile_from_value(&ValueQuantile::uniform(0.0, 1.0).unwrap(), 3, 1.0, &g).unwrap();
        let r = compatibility_check(&[b2.clone(), lin], CompatibilityConfig::default()).unwrap();
        assert!(!r.compatible);

        let scaled: Vec<f64> = b2.values().iter().map(|v| 1.1 * v).collect();
        let b2s = BidQuantile::from_tabulation(2, 1.0, BidKind::Known, g.clone(), scaled).unwrap();
        let r = compatibility_check(&[b2, b2s], CompatibilityConfig::default()).unwrap();
        // oracle: V recomputed from 1.1 B_2 is 1.1 sqrt(a), so the gap at a = 1 is 0.1
        assert!(!r.compatible);
        assert!((r.max_discrepancy - 0.1).abs() < 1e-3);
    }

    #[test]
    fn jump_sizes_of_sqrt_model() {
        let j = sqrt_mixture().jump_points();
        assert!((j[0].location - 2.0 / 3.0).abs() < 1e-12);
        assert!((j[0].size - 3.0).abs() < 1e-9);
        assert!((j[1].size - 3.75).abs() < 1e-9);
    }

    #[test]
    fn single_component_mixture() {
        let pmf = CompetitionPmf::degenerate(3).unwrap();
        let m = winning_bid_mixture(&sqrt_v(), &pmf, 1.0, &grid()).unwrap();
        assert_eq!(m.jump_points().len(), 1);
        let b3 = m.component(3).unwrap();
        for &b in &[0.1, 0.4, 0.7] {
            assert!((m.cdf(b) - b3.cdf(b).powi(3)).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_identity_on_independent_grid() {
        let m = sqrt_mixture();
        for i in 0..997 {
            let b = 0.8 * (i as f64 + 0.5) / 997.0;
            let g2 = (1.5 * b).powi(2).min(1.0);
            let g3 = (1.25 * b).powi(2).min(1.0);
            let oracle = 0.5 * g2 * g2 + 0.5 * g3 * g3 * g3;
            assert!((m.cdf(b) - oracle).abs() < 1e-10, "{b}");
        }
        assert_eq!(m.cdf(0.0), 0.0);
        assert!((m.cdf(0.8) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_mixture_pdf_integrates_to_one() {
        let v = ValueQuantile::uniform(0.0, 1.0).unwrap();
        let pmf = CompetitionPmf::new(2, vec![0.5, 0.5]).unwrap();
        let m = winning_bid_mixture(&v, &pmf, 1.0, &grid()).unwrap();
        let f = |b: f64| m.pdf(b);
        let total =
            adaptive_integral(&f, 0.0, 0.5, 1e-10).unwrap() + adaptive_integral(&f, 0.5, 2.0 / 3.0, 1e-10).unwrap();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn measured_jumps_match_closed_form() {
        let m = sqrt_mixture();
        for jp in m.jump_points() {
            let h = 1e-7;
            let measured = m.pdf(jp.location - h) - m.pdf(jp.location + h);
            let n = if jp.location < 0.7 { 2.0 } else { 3.0 };
            let closed = n * 0.5 / ((n - 1.0) * (1.0 - jp.location));
            assert!(((measured - closed) / closed).abs() < 1e-3);
        }
    }

    #[test]
    fn slope_at_zero() {
        let v = ValueQuantile::power(1.0, 3.0, 1.5).unwrap();
        let v2 = ValueQuantile::from_fn(|a: f64| 1.0 + a + a * a, Some(Box::new(|a: f64| 1.0 + 2.0 * a))).unwrap();
        for n in [2, 4] {
            let b = bid_quantile_from_value(&v2, n, 1.0, &grid()).unwrap();
            let expect = (n - 1) as f64 / n as f64 * 1.0;
            assert!((b.derivative(0.0) - expect).abs() < 1e-3);
            let b = bid_quantile_from_value(&v, n, 1.0, &grid()).unwrap();
            assert!(b.derivative(0.0).abs() < 1e-3);
        }
    }

    #[test]
    fn boundary_density_examples() {
        let (lo, hi) = boundary_densities(&sqrt_v(), 2, 1.0).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 3.0).abs() < 1e-10);
        let (lo, hi) = boundary_densities(&ValueQuantile::<f64>::uniform(0.0, 1.0).unwrap(), 2, 1.0).unwrap();
        assert!((lo - 2.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-10);
        let flat_top =
            ValueQuantile::from_fn(|a: f64| 1.0 - (1.0 - a).sqrt(), Some(Box::new(|a: f64| 0.5 / (1.0 - a).sqrt())))
                .unwrap();
        assert!(boundary_densities(&flat_top, 2, 1.0).is_err());
    }

    #[test]
    fn tail_exponents() {
        let t: Vec<f64> = (0..40).map(|i| 1e-2 * 0.7f64.powi(i)).collect();
        let e = tail_exponent_of_cdf(|x: f64| x.powi(3), 0.0, &t).unwrap();
        assert!((e - 3.0).abs() < 1e-12);

        let pmf = CompetitionPmf::degenerate(4).unwrap();
        let m = winning_bid_mixture(&ValueQuantile::uniform(0.0, 1.0).unwrap(), &pmf, 1.0, &grid()).unwrap();
        let e = tail_exponent_of_cdf(|b| m.cdf(b), 0.0, &t).unwrap();
        assert!((e - 4.0).abs() < 0.1);

        // V = sqrt(a) has f(0) = 0: G_2 ~ (3t/2)^2 so G ~ t^4 at the bottom
        let m = sqrt_mixture();
        let e = tail_exponent_of_cdf(|b| m.cdf(b), 0.0, &t).unwrap();
        assert!((e - 4.0).abs() < 0.05, "{e}");

        assert!(tail_exponent_of_cdf(|_x: f64| 0.0, 0.0, &t).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = grid();
        assert!(bid_quantile_from_value(&sqrt_v(), 1, 1.0, &g).is_err());
        assert!(bid_quantile_from_value(&sqrt_v(), 2, 1.5, &g).is_err());
        assert!(bid_quantile_from_value(&sqrt_v(), 2, 1.0, &g[..100]).is_err());
        assert!(ValueQuantile::from_fn(|a: f64| (a - 0.5).powi(2), None).is_err());
        assert!(CompetitionPmf::new(2, vec![0.5, 0.6]).is_err());
        assert!(CompetitionPmf::new(1, vec![1.0f64]).is_err());
    }

    #[test]
    fn single_precision_path() {
        let g: Vec<f32> = chebyshev_grid(401);
        let v = ValueQuantile::<f32>::power(0.0, 1.0, 0.5).unwrap();
        let b = bid_quantile_from_value(&v, 2, 1.0, &g).unwrap();
        assert!((b.b_hi() - 2.0 / 3.0).abs() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bids_ordered_below_values(p in 0.3f64..3.0, lo in 0.0f64..2.0, n in 2usize..6) {
            let v = ValueQuantile::power(lo, lo + 1.0, p).unwrap();
            let g = grid();
            let bn = bid_quantile_from_value(&v, n, 1.0, &g).unwrap();
            let bm = bid_quantile_from_value(&v, n + 1, 1.0, &g).unwrap();
            prop_assert!((bn.eval(0.0) - lo).abs() < 1e-12);
            for &a in g.iter().skip(1).step_by(25).filter(|&&a| v.eval(a) - lo > 1e-9) {
                prop_assert!(bn.eval(a) < bm.eval(a));
                prop_assert!(bm.eval(a) < v.eval(a));
            }
            prop_assert!(bn.b_hi() < bm.b_hi() && bm.b_hi() < v.v_hi());
        }
    }
}
