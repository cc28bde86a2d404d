//! Endogenous participation: binding reserve prices and costly entry, with
//! bidders either informed or not about the number of participants.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    bid_quantile_from_value, BidKind, BidQuantile, CompetitionPmf, ValueQuantile, WinningBidLaw, WinningBidMixture,
};
use crate::error::{invalid, Error, Result};
use crate::numeric::{adaptive_integral, bisect, chebyshev_grid, loglog_slope, Bracket};
use crate::real::Real;

/// Whether active bidders observe how many others participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfoRegime {
    KnownN,
    UnknownN,
}

/// Instrument-dependent scalar `a + b z` (constant when `slope` is zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Schedule<T> {
    pub intercept: T,
    #[serde(default)]
    pub slope: T,
}

impl<T: Real> Schedule<T> {
    pub fn constant(v: T) -> Self {
        Self { intercept: v, slope: T::zero() }
    }

    pub fn at(&self, z: Option<T>) -> T {
        self.intercept + self.slope * z.unwrap_or(T::zero())
    }
}

/// Reserve-price model.
#[derive(Debug, Clone)]
pub struct ReserveModel<T: Real> {
    pub value: ValueQuantile<T>,
    pub n_potential: usize,
    pub reserve: Schedule<T>,
    pub info: InfoRegime,
}

impl<T: Real> ReserveModel<T> {
    pub fn new(value: ValueQuantile<T>, n_potential: usize, reserve: Schedule<T>, info: InfoRegime) -> Result<Self> {
        if n_potential < 2 {
            return Err(invalid("n_potential", "must be at least 2"));
        }
        Ok(Self { value, n_potential, reserve, info })
    }

    pub fn reserve_at(&self, z: Option<T>) -> Result<T> {
        let r = self.reserve.at(z);
        if !(r > self.value.v_lo() && r < self.value.v_hi()) {
            return Err(invalid("reserve", format!("R = {r} is outside the value support")));
        }
        Ok(r)
    }

    /// Screening level `q = F(R(z))`.
    pub fn screening(&self, z: Option<T>) -> Result<T> {
        let q = self.value.cdf(self.reserve_at(z)?);
        if !(q > T::zero() && q < T::one()) {
            return Err(invalid("reserve", format!("screening level {q} is not in (0, 1)")));
        }
        Ok(q)
    }
}

/// Bid quantile given `n` participants who observe `n`.
pub fn reserve_bid_known<T: Real>(
    model: &ReserveModel<T>,
    n: usize,
    z: Option<T>,
    grid: &[T],
) -> Result<BidQuantile<T>> {
    let q = model.screening(z)?;
    bid_quantile_from_value(&model.value.truncated(q), n, T::one(), grid)
}

/// Bid quantile when participants do not observe how many others entered.
pub fn reserve_bid_unknown<T: Real>(model: &ReserveModel<T>, z: Option<T>, grid: &[T]) -> Result<BidQuantile<T>> {
    let q = model.screening(z)?;
    pooled_bid(&model.value.truncated(q), model.n_potential, q, grid)
}

/// `B(a) = [q^m V_s(0) + m (1-q) ∫_0^a w(t)^{m-1} V_s(t) dt] / w(a)^m` with
/// `w(t) = q + (1-q) t` and `m = n_potential - 1`: the integrated form of the
/// pooled first-order condition.
pub(crate) fn pooled_bid<T: Real>(
    vs: &ValueQuantile<T>,
    n_potential: usize,
    q: T,
    grid: &[T],
) -> Result<BidQuantile<T>> {
    if n_potential < 2 {
        return Err(invalid("n_potential", "must be at least 2"));
    }
    if grid.len() < 200 || grid[0] != T::zero() || *grid.last().unwrap() != T::one() {
        return Err(invalid("grid", "need at least 200 points covering [0, 1]"));
    }
    let src = vs.clone();
    let exact = Arc::new(move |a: T| pooled_point(&src, n_potential, q, a));
    let nodes: Vec<(T, T)> = grid.par_iter().map(|&a| exact(a)).collect();
    for (a, (b, _)) in grid.iter().zip(&nodes) {
        if !b.is_finite() {
            return Err(Error::NonFinite { what: "pooled bid quadrature", at: a.as_f64() });
        }
    }
    let (values, slopes): (Vec<T>, Vec<T>) = nodes.into_iter().unzip();
    Ok(BidQuantile::from_nodes(n_potential, T::one(), BidKind::Pooled { q }, grid.to_vec(), values, slopes)?
        .with_exact(exact))
}

fn pooled_point<T: Real>(vs: &ValueQuantile<T>, n_potential: usize, q: T, a: T) -> (T, T) {
    let m = n_potential - 1;
    let mt = T::of(m);
    let s = T::one() - q;
    let w = |t: T| q + s * t;
    let v0 = vs.eval(T::zero());
    if a == T::zero() {
        return (v0, T::zero());
    }
    let integrand = |u: T| w(a * u).powi(m as i32 - 1) * vs.eval(a * u);
    let tol = T::lit(1e-14).max(T::epsilon() * T::lit(16.0));
    let int = adaptive_integral(&integrand, T::zero(), T::one(), tol).unwrap_or(T::nan()) * a;
    let wa = w(a).powi(m as i32);
    let b = (q.powi(m as i32) * v0 + mt * s * int) / wa;
    (b, mt * s * (vs.eval(a) - b) / w(a))
}

/// Family of conditional value cdfs `F(v | s)`, decreasing in the signal `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionalFamily<T> {
    /// `F(v | s) = (v - lo) / (hi - lo)` for every signal.
    SignalFree { lo: T, hi: T },
    /// `F(v | s) = x^{1 + gamma s}` with `x = (v - lo) / (hi - lo)`.
    TruncatedPower { lo: T, hi: T, gamma: T },
    /// `cdf[i][j] = F(v[i] | s[j])`, bilinear between nodes.
    Tabulated { v: Vec<T>, s: Vec<T>, cdf: Vec<Vec<T>> },
}

impl<T: Real> ConditionalFamily<T> {
    pub fn support(&self) -> (T, T) {
        match self {
            Self::SignalFree { lo, hi } | Self::TruncatedPower { lo, hi, .. } => (*lo, *hi),
            Self::Tabulated { v, .. } => (v[0], v[v.len() - 1]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.support();
        if !(hi > lo) {
            return Err(invalid("family", "empty value support"));
        }
        match self {
            Self::TruncatedPower { gamma, .. } if *gamma < T::zero() => {
                return Err(invalid("gamma", "must be nonnegative so that F(v|s) decreases in s"))
            }
            Self::Tabulated { v, s, cdf } => {
                if v.len() < 2 || s.len() < 2 || cdf.len() != v.len() || cdf.iter().any(|r| r.len() != s.len()) {
                    return Err(invalid("family", "table shape does not match its axes"));
                }
                if v.windows(2).any(|w| w[0] >= w[1]) || s.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid("family", "axes must be strictly increasing"));
                }
                for j in 0..s.len() {
                    if cdf[0][j] != T::zero() || cdf[v.len() - 1][j] != T::one() {
                        return Err(invalid("family", "each column must run from 0 to 1"));
                    }
                    if (1..v.len()).any(|i| cdf[i][j] <= cdf[i - 1][j]) {
                        return Err(invalid("family", "F(.|s) must increase in v"));
                    }
                }
                for row in cdf {
                    if row.windows(2).any(|w| w[1] > w[0]) {
                        return Err(invalid("family", "F(v|.) must decrease in s"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// `F(v | s)`.
    pub fn cdf(&self, v: T, s: T) -> T {
        let (lo, hi) = self.support();
        if v <= lo {
            return T::zero();
        }
        if v >= hi {
            return T::one();
        }
        let x = (v - lo) / (hi - lo);
        match self {
            Self::SignalFree { .. } => x,
            Self::TruncatedPower { gamma, .. } => x.powf(T::one() + *gamma * s),
            Self::Tabulated { v: vs, s: ss, cdf } => {
                let i = vs.partition_point(|&a| a <= v).clamp(1, vs.len() - 1) - 1;
                let sc = s.max(ss[0]).min(ss[ss.len() - 1]);
                let j = ss.partition_point(|&a| a <= sc).clamp(1, ss.len() - 1) - 1;
                let tv = (v - vs[i]) / (vs[i + 1] - vs[i]);
                let ts = (sc - ss[j]) / (ss[j + 1] - ss[j]);
                let a = cdf[i][j] + tv * (cdf[i + 1][j] - cdf[i][j]);
                let b = cdf[i][j + 1] + tv * (cdf[i + 1][j + 1] - cdf[i][j + 1]);
                a + ts * (b - a)
            }
        }
    }

    /// Updated cdf of entrants' values `F_c(v | s) = (1-s)^{-1} ∫_s^1 F(v | t) dt`.
    pub fn updated_cdf(&self, v: T, s: T) -> T {
        match self {
            Self::SignalFree { .. } => self.cdf(v, s),
            _ if s >= T::one() => self.cdf(v, T::one()),
            _ => {
                let f = |t: T| self.cdf(v, t);
                let tol = T::lit(1e-13).max(T::epsilon() * T::lit(16.0));
                adaptive_integral(&f, s, T::one(), tol).unwrap_or(T::nan()) / (T::one() - s)
            }
        }
    }

    /// Updated value quantile `V_c(. | s)`.
    pub fn updated_value(&self, s: T) -> Result<ValueQuantile<T>> {
        let (lo, hi) = self.support();
        if let Self::SignalFree { .. } = self {
            return ValueQuantile::uniform(lo, hi);
        }
        let vgrid: Vec<T> = chebyshev_grid::<T>(1001).into_iter().map(|x| lo + (hi - lo) * x).collect();
        let mut alpha = Vec::with_capacity(vgrid.len());
        let mut vals = Vec::with_capacity(vgrid.len());
        for (i, &v) in vgrid.iter().enumerate() {
            let a = if i == 0 {
                T::zero()
            } else if i == vgrid.len() - 1 {
                T::one()
            } else {
                self.updated_cdf(v, s)
            };
            if alpha.last().is_none_or(|&p| a > p) {
                alpha.push(a);
                vals.push(v);
            }
        }
        if *alpha.last().unwrap() != T::one() {
            *alpha.last_mut().unwrap() = T::one();
            *vals.last_mut().unwrap() = hi;
        }
        ValueQuantile::tabulated(alpha, vals)
    }
}

/// Entry-cost model.
#[derive(Debug, Clone)]
pub struct EntryModel<T> {
    pub family: ConditionalFamily<T>,
    pub n_potential: usize,
    pub cost: Schedule<T>,
    pub info: InfoRegime,
}

/// Solution of the break-even condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryThreshold<T> {
    /// Cost at or below the lowest break-even profit: everyone enters (`s = 0`).
    AllEnter,
    /// Cost at or above the highest break-even profit: nobody enters (`s = 1`).
    NoneEnter,
    Interior {
        s: T,
        /// False if the break-even map decreased somewhere on the probe grid.
        monotone: bool,
    },
}

impl<T: Real> EntryThreshold<T> {
    pub fn s(&self) -> T {
        match self {
            Self::AllEnter => T::zero(),
            Self::NoneEnter => T::one(),
            Self::Interior { s, .. } => *s,
        }
    }
}

impl<T: Real> EntryModel<T> {
    pub fn new(family: ConditionalFamily<T>, n_potential: usize, cost: Schedule<T>, info: InfoRegime) -> Result<Self> {
        if n_potential < 2 {
            return Err(invalid("n_potential", "must be at least 2"));
        }
        family.validate()?;
        Ok(Self { family, n_potential, cost, info })
    }

    /// First-stage expected profit `Π(S; s)` of a buyer with signal `S`
    /// facing the entry threshold `s`.
    pub fn profit(&self, signal: T, s: T) -> T {
        let (_, hi) = self.family.support();
        let m = self.n_potential as i32 - 1;
        let f = |v: T| {
            (T::one() - self.family.cdf(v, signal)) * (s + (T::one() - s) * self.family.updated_cdf(v, s)).powi(m)
        };
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
        adaptive_integral(&f, T::zero(), hi, tol).unwrap_or(T::nan())
    }

    pub fn break_even(&self, s: T) -> T {
        self.profit(s, s)
    }

    /// Signal threshold below which buyers stay out.
    pub fn threshold(&self, z: Option<T>) -> Result<EntryThreshold<T>> {
        entry_threshold(self, z)
    }

    fn interior_threshold(&self, z: Option<T>) -> Result<T> {
        match entry_threshold(self, z)? {
            EntryThreshold::Interior { s, .. } => Ok(s),
            other => Err(invalid("cost", format!("entry cost is not binding: {other:?}"))),
        }
    }
}

/// Solves `Π(s; s) = c(z)`: bracketing on a 64-point signal grid, then bisection.
pub fn entry_threshold<T: Real>(model: &EntryModel<T>, z: Option<T>) -> Result<EntryThreshold<T>> {
    let c = model.cost.at(z);
    let probe: Vec<T> = (0..64).map(|i| T::of(i) / T::of(63)).collect();
    let pi: Vec<T> = probe.iter().map(|&s| model.break_even(s)).collect();
    if c <= pi[0] {
        return Ok(EntryThreshold::AllEnter);
    }
    if c >= pi[63] {
        return Ok(EntryThreshold::NoneEnter);
    }
    let monotone = pi.windows(2).all(|w| w[1] >= w[0]);
    let i = (1..64).find(|&i| pi[i] >= c).unwrap();
    let s = bisect(
        |s| model.break_even(s) - c,
        Bracket { lo: probe[i - 1], hi: probe[i] },
        T::lit(1e-12).max(T::epsilon() * T::lit(4.0)),
    )?;
    Ok(EntryThreshold::Interior { s, monotone })
}

/// Bid quantile of `n` entrants who observe `n`.
pub fn entry_bid_known<T: Real>(model: &EntryModel<T>, n: usize, z: Option<T>, grid: &[T]) -> Result<BidQuantile<T>> {
    let s = model.interior_threshold(z)?;
    bid_quantile_from_value(&model.family.updated_value(s)?, n, T::one(), grid)
}

/// Bid quantile of entrants who do not observe how many others entered.
pub fn entry_bid_unknown<T: Real>(model: &EntryModel<T>, z: Option<T>, grid: &[T]) -> Result<BidQuantile<T>> {
    let s = model.interior_threshold(z)?;
    pooled_bid(&model.family.updated_value(s)?, model.n_potential, s, grid)
}

/// Reserve-price or entry-cost model.
#[derive(Debug, Clone)]
pub enum ParticipationModel<T: Real> {
    Reserve(ReserveModel<T>),
    Entry(EntryModel<T>),
}

impl<T: Real> ParticipationModel<T> {
    pub fn info(&self) -> InfoRegime {
        match self {
            Self::Reserve(m) => m.info,
            Self::Entry(m) => m.info,
        }
    }

    pub fn n_potential(&self) -> usize {
        match self {
            Self::Reserve(m) => m.n_potential,
            Self::Entry(m) => m.n_potential,
        }
    }

    /// Probability that a potential buyer stays out: `F(R(z))` or `s(z)`.
    pub fn screening(&self, z: Option<T>) -> Result<T> {
        match self {
            Self::Reserve(m) => m.screening(z),
            Self::Entry(m) => m.interior_threshold(z),
        }
    }

    /// Price of the lone-participant atom under known participation.
    pub fn atom_price(&self, z: Option<T>) -> Result<T> {
        match self {
            Self::Reserve(m) => m.reserve_at(z),
            Self::Entry(_) => Ok(T::zero()),
        }
    }

    pub fn lower_bid(&self, z: Option<T>) -> Result<T> {
        match self {
            Self::Reserve(m) => m.reserve_at(z),
            Self::Entry(m) => Ok(m.family.support().0),
        }
    }

    pub fn bid_known(&self, n: usize, z: Option<T>, grid: &[T]) -> Result<BidQuantile<T>> {
        match self {
            Self::Reserve(m) => reserve_bid_known(m, n, z, grid),
            Self::Entry(m) => entry_bid_known(m, n, z, grid),
        }
    }

    pub fn bid_unknown(&self, z: Option<T>, grid: &[T]) -> Result<BidQuantile<T>> {
        match self {
            Self::Reserve(m) => reserve_bid_unknown(m, z, grid),
            Self::Entry(m) => entry_bid_unknown(m, z, grid),
        }
    }
}

/// Sold-price law when bidders do not observe participation:
/// `G(b) = ([q + (1-q) G_s(b)]^n - q^n) / (1 - q^n)`.
#[derive(Clone)]
pub struct PooledLaw<T> {
    pub bid: BidQuantile<T>,
    pub n_potential: usize,
    pub q: T,
}

impl<T: Real> fmt::Debug for PooledLaw<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PooledLaw").field("n_potential", &self.n_potential).field("q", &self.q).finish()
    }
}

impl<T: Real> PooledLaw<T> {
    pub fn cdf(&self, b: T) -> T {
        let n = self.n_potential as i32;
        let inner = self.q + (T::one() - self.q) * self.bid.cdf(b);
        (inner.powi(n) - self.q.powi(n)) / (T::one() - self.q.powi(n))
    }

    pub fn pdf(&self, b: T) -> T {
        if b <= self.bid.b_lo() {
            return if b == self.bid.b_lo() { T::infinity() } else { T::zero() };
        }
        if b > self.bid.b_hi() {
            return T::zero();
        }
        let n = self.n_potential as i32;
        let a = self.bid.cdf(b);
        let inner = self.q + (T::one() - self.q) * a;
        T::of(self.n_potential) * (T::one() - self.q) * inner.powi(n - 1)
            / self.bid.derivative(a)
            / (T::one() - self.q.powi(n))
    }
}

impl<T: Real> WinningBidLaw<T> for PooledLaw<T> {
    fn cdf(&self, b: T) -> T {
        PooledLaw::cdf(self, b)
    }

    fn density_left(&self, b: T) -> T {
        self.pdf(b)
    }

    fn density_right(&self, b: T) -> T {
        if b >= self.bid.b_hi() {
            T::zero()
        } else {
            self.pdf(b)
        }
    }

    fn support(&self) -> (T, T) {
        (self.bid.b_lo(), self.bid.b_hi())
    }
}

/// Continuous component of the sold-price distribution.
#[derive(Debug, Clone)]
pub enum SoldLaw<T: Real> {
    /// Known participation: mixture over `n >= 2` with binomial weights.
    Mixture(WinningBidMixture<T>),
    /// Unknown participation: a single pooled cdf including lone entrants.
    Pooled(PooledLaw<T>),
}

impl<T: Real> WinningBidLaw<T> for SoldLaw<T> {
    fn cdf(&self, b: T) -> T {
        match self {
            Self::Mixture(m) => m.cdf(b),
            Self::Pooled(p) => p.cdf(b),
        }
    }

    fn density_left(&self, b: T) -> T {
        match self {
            Self::Mixture(m) => m.density_left(b),
            Self::Pooled(p) => p.density_left(b),
        }
    }

    fn density_right(&self, b: T) -> T {
        match self {
            Self::Mixture(m) => m.density_right(b),
            Self::Pooled(p) => p.density_right(b),
        }
    }

    fn support(&self) -> (T, T) {
        match self {
            Self::Mixture(m) => m.support(),
            Self::Pooled(p) => p.support(),
        }
    }
}

/// Outcome probabilities and the sold-price law at one instrument value.
#[derive(Debug, Clone)]
pub struct OutcomeDistribution<T: Real> {
    pub p_not_sold: T,
    /// Probability of exactly one participant.
    pub p_single: T,
    /// Atom `(price, probability)`; present only under known participation.
    pub atom: Option<(T, T)>,
    pub sold: SoldLaw<T>,
}

/// Binomial probabilities `P(N = n)` for `n = 0..=n_potential` with stay-out probability `q`.
pub fn binomial_participation<T: Real>(n_potential: usize, q: T) -> Vec<T> {
    let mut out = Vec::with_capacity(n_potential + 1);
    let mut choose = T::one();
    for n in 0..=n_potential {
        if n > 0 {
            choose = choose * T::of(n_potential - n + 1) / T::of(n);
        }
        out.push(choose * q.powi((n_potential - n) as i32) * (T::one() - q).powi(n as i32));
    }
    out
}

/// Conditional weights `p_n`, `n = 2..=n_potential`, given at least two participants.
pub fn conditional_weights<T: Real>(n_potential: usize, q: T) -> Vec<T> {
    let b = binomial_participation(n_potential, q);
    let total: T = b[2..].iter().copied().sum();
    b[2..].iter().map(|&p| p / total).collect()
}

pub fn outcome_distribution<T: Real>(
    model: &ParticipationModel<T>,
    z: Option<T>,
    grid: &[T],
) -> Result<OutcomeDistribution<T>> {
    let q = model.screening(z)?;
    let nbar = model.n_potential();
    let probs = binomial_participation(nbar, q);
    let (p_not_sold, p_single) = (probs[0], probs[1]);
    match model.info() {
        InfoRegime::KnownN => {
            let w = conditional_weights(nbar, q);
            let first = w.iter().position(|&p| p > T::zero()).unwrap_or(w.len() - 1);
            let weights: Vec<T> = w[first..].to_vec();
            let total: T = weights.iter().copied().sum();
            let weights: Vec<T> = weights.iter().map(|&p| p / total).collect();
            let pmf = CompetitionPmf::new(first + 2, weights)?;
            let bids = pmf.counts().map(|(n, _)| model.bid_known(n, z, grid)).collect::<Result<Vec<_>>>()?;
            let lo = model.lower_bid(z)?;
            let hi = bids.last().unwrap().b_hi();
            let mix = WinningBidMixture::from_components(pmf, bids, lo, hi)?;
            Ok(OutcomeDistribution {
                p_not_sold,
                p_single,
                atom: Some((model.atom_price(z)?, p_single)),
                sold: SoldLaw::Mixture(mix),
            })
        }
        InfoRegime::UnknownN => {
            let bid = model.bid_unknown(z, grid)?;
            Ok(OutcomeDistribution {
                p_not_sold,
                p_single,
                atom: None,
                sold: SoldLaw::Pooled(PooledLaw { bid, n_potential: nbar, q }),
            })
        }
    }
}

/// Local exponent `κ` in `G(lower + t) ≈ c t^κ` from a tabulation `(b, G(b))`.
pub fn lower_tail_divergence_check<T: Real>(tabulation: &[(T, T)], lower: T) -> Result<T> {
    let pts: Vec<(T, T)> =
        tabulation.iter().filter(|(b, g)| *b > lower && *g > T::zero()).map(|(b, g)| (*b - lower, *g)).collect();
    if pts.len() < 10 {
        return Err(Error::Tail(format!("only {} usable points near the lower bound", pts.len())));
    }
    let (x, y): (Vec<T>, Vec<T>) = pts.into_iter().unzip();
    loglog_slope(&x, &y).ok_or_else(|| Error::Tail("no spread in offsets".into()))
}

/// Empirical cdf at the lowest order statistics, `G(W_(j)) = j / L`, for
/// `j` up to `fraction * L`. When `lower` is not given the sample minimum is used.
pub fn lower_tail_tabulation<T: Real>(sorted: &[T], lower: Option<T>, fraction: T) -> Vec<(T, T)> {
    let l = sorted.len();
    if l == 0 {
        return Vec::new();
    }
    let lower = lower.unwrap_or(sorted[0]);
    let top = (fraction * T::of(l)).ceil().to_usize().unwrap_or(l).min(l);
    (0..top).filter(|&j| sorted[j] > lower).map(|j| (sorted[j], T::of(j + 1) / T::of(l))).collect()
}
