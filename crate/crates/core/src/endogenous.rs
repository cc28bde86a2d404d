//! Identification under endogenous participation: reserve prices and entry
//! costs from outcome distributions, and tests that tell the regimes apart.

use serde::{Deserialize, Serialize};

use crate::competition::{identify_from_jumps, CompetitionEstimate};
use crate::detect::{detect_jumps, DetectionConfig};
use crate::error::{invalid, Error, Result};
use crate::numeric::{adaptive_integral, bisect, golden_min, isotonic_increasing, Bracket};
use crate::participation::{lower_tail_divergence_check, lower_tail_tabulation, InfoRegime};
use crate::real::Real;
use crate::recovery::{iterate_recovery, EmpiricalWinningBid, RecoveredValue, RecoveryConfig};
use crate::simulate::{OutcomeSample, Status};

/// Residual above which a real-valued `n̄` is reported as a misfit.
pub const INTEGRALITY_TOLERANCE: f64 = 0.2;

/// Outcome summary at one instrument value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct InstrumentedOutcome<T> {
    pub z: Option<T>,
    /// Number of auctions behind the summary; zero for population inputs.
    pub records: usize,
    pub p_not_sold: T,
    pub p_atom: T,
    /// Competitive sale prices, sorted: a sample, or quantiles at evenly spaced levels.
    pub prices: Vec<T>,
    pub lower: T,
    pub upper: T,
}

impl<T: Real> InstrumentedOutcome<T> {
    /// Summary of the records at `z` (all records when `z` is `None`).
    pub fn from_sample(sample: &OutcomeSample<T>, z: Option<T>) -> Result<Self> {
        let records: Vec<_> = sample.records.iter().filter(|r| z.is_none() || r.z == z).collect();
        if records.is_empty() {
            return Err(Error::Empty);
        }
        let mut prices = Vec::new();
        let (mut not_sold, mut atoms) = (0usize, 0usize);
        for r in &records {
            match r.status {
                Status::NotSold => not_sold += 1,
                Status::SoldAtAtom(_) => atoms += 1,
                Status::SoldCompetitive(p) => prices.push(p),
            }
        }
        if prices.len() < 2 {
            return Err(Error::SampleSize { needed: 2, got: prices.len() });
        }
        prices.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let l = T::of(records.len());
        Ok(Self {
            z,
            records: records.len(),
            p_not_sold: T::of(not_sold) / l,
            p_atom: T::of(atoms) / l,
            lower: prices[0],
            upper: prices[prices.len() - 1],
            prices,
        })
    }

    /// Population summary from a competitive sale-price quantile function.
    pub fn from_quantile(
        z: Option<T>,
        p_not_sold: T,
        p_atom: T,
        quantile: impl Fn(T) -> T,
        points: usize,
    ) -> Result<Self> {
        if points < 4 {
            return Err(invalid("points", "need at least 4 quantile levels"));
        }
        let prices: Vec<T> = (0..points).map(|i| quantile(T::of(i) / T::of(points - 1))).collect();
        if prices.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::NonMonotone { what: "sale-price quantiles", at: 0.0 });
        }
        Ok(Self { z, records: 0, p_not_sold, p_atom, lower: prices[0], upper: prices[points - 1], prices })
    }

    pub fn p_competitive(&self) -> T {
        T::one() - self.p_not_sold - self.p_atom
    }

    fn check(&self) -> Result<()> {
        let unit = |p: T| p >= T::zero() && p <= T::one();
        if !(unit(self.p_not_sold) && unit(self.p_atom) && unit(self.p_not_sold + self.p_atom)) {
            return Err(invalid("outcome", format!("probabilities out of range at z = {:?}", self.z)));
        }
        if !(self.lower <= self.upper) {
            return Err(invalid("outcome", "lower support bound exceeds the upper bound"));
        }
        Ok(())
    }
}

/// Binomial participation fitted to conditional competition weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinomialFit<T> {
    pub n_lo: usize,
    pub n_potential: usize,
    /// `1 / (1 + n̄ p_n̄ / p_{n̄-1})`.
    pub ratio_screening: T,
    /// Least-squares screening level.
    pub screening: T,
    pub fitted: Vec<T>,
    /// Largest absolute weight residual at the fitted level.
    pub residual: T,
    pub lack_of_fit: bool,
}

/// Binomial weights `C(n̄, n) q^{n̄-n} (1-q)^n` for `n = n_lo..=n̄`, normalized.
pub fn truncated_binomial<T: Real>(n_lo: usize, n_potential: usize, q: T) -> Vec<T> {
    let mut choose = T::one();
    for k in 0..n_lo {
        choose = choose * T::of(n_potential - k) / T::of(k + 1);
    }
    let mut w = Vec::with_capacity(n_potential + 1 - n_lo);
    for n in n_lo..=n_potential {
        if n > n_lo {
            choose = choose * T::of(n_potential - n + 1) / T::of(n);
        }
        w.push(choose * q.powi((n_potential - n) as i32) * (T::one() - q).powi(n as i32));
    }
    let total: T = w.iter().copied().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Fits `q` to weights `p_n`, `n = n_lo..`, with `n̄` the largest count.
pub fn binomial_fit<T: Real>(n_lo: usize, weights: &[T], tolerance: T) -> Result<BinomialFit<T>> {
    let n_potential = n_lo + weights.len() - 1;
    if weights.len() < 2 {
        return Err(Error::NotIdentified(format!(
            "a single competition weight (n̄ = {n_potential}) does not identify the screening level from sold prices; \
             supply the not-sold and atom probabilities"
        )));
    }
    let (top, below) = (weights[weights.len() - 1], weights[weights.len() - 2]);
    if !(top > T::zero() && below > T::zero()) {
        return Err(invalid("weights", "the two largest-count weights must be positive"));
    }
    let ratio_screening = T::one() / (T::one() + T::of(n_potential) * top / below);
    let loss = |q: T| {
        truncated_binomial(n_lo, n_potential, q).iter().zip(weights).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>()
    };
    let probe = 2000;
    let best = (1..probe)
        .map(|i| T::of(i) / T::of(probe))
        .fold((T::infinity(), T::zero()), |m, q| {
            let l = loss(q);
            if l < m.0 {
                (l, q)
            } else {
                m
            }
        })
        .1;
    let step = T::one() / T::of(probe);
    let screening = golden_min(loss, (best - step).max(T::zero()), (best + step).min(T::one()), T::tiny());
    let fitted = truncated_binomial(n_lo, n_potential, screening);
    let residual = fitted.iter().zip(weights).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max);
    Ok(BinomialFit {
        n_lo,
        n_potential,
        ratio_screening,
        screening,
        fitted,
        residual,
        lack_of_fit: residual > tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveKnownId<T> {
    pub reserve: T,
    pub v_hi: T,
    pub fit: BinomialFit<T>,
    /// `(v, F(v))` on the recovered range, when value recovery is supplied.
    pub value_cdf: Vec<(T, T)>,
}

/// Reserve price with buyers who observe participation: `F(R)` from the
/// binomial structure of the competition weights.
pub fn identify_reserve_known_n<T: Real>(
    estimate: &CompetitionEstimate<T>,
    reserve: T,
    recovered: Option<&RecoveredValue<T>>,
    tolerance: T,
) -> Result<ReserveKnownId<T>> {
    let fit = binomial_fit(estimate.n_lo, &estimate.weights, tolerance)?;
    let q = fit.screening;
    let value_cdf = recovered
        .map(|r| r.alpha.iter().zip(&r.value).map(|(&a, &v)| (v, q + (T::one() - q) * a)).collect())
        .unwrap_or_default();
    Ok(ReserveKnownId { reserve, v_hi: estimate.v_hi, fit, value_cdf })
}

/// `φ(x) = (1 - x) / (x ln x)`, increasing from `-∞` to `-1` on `(0, 1)`.
pub fn phi<T: Real>(x: T) -> T {
    (T::one() - x) / (x * x.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomId<T> {
    pub screening: T,
    /// `ln P(not sold) / ln F(R)` before rounding.
    pub n_real: T,
    pub n_potential: usize,
    pub residual: T,
    pub misfit: bool,
}

/// `F(R)` and `n̄` from the not-sold and lone-participant probabilities.
pub fn identify_reserve_unknown_n_atoms<T: Real>(p_not_sold: T, p_atom: T) -> Result<AtomId<T>> {
    if !(p_not_sold > T::zero() && p_atom > T::zero() && p_not_sold + p_atom < T::one()) {
        return Err(Error::InfeasibleAtoms(format!(
            "need 0 < p_not_sold, 0 < p_atom and p_not_sold + p_atom < 1, got {p_not_sold} and {p_atom}"
        )));
    }
    let target = p_atom / (p_not_sold * p_not_sold.ln());
    if !(target < -T::one()) {
        return Err(Error::InfeasibleAtoms(format!("phi target {target} is outside (-inf, -1)")));
    }
    let eps = T::epsilon();
    let (mut lo, mut hi) = (eps, T::one() - eps.sqrt());
    while phi(lo) > target && lo > T::min_positive_value() {
        lo = lo * eps;
    }
    while phi(hi) < target && hi < T::one() - eps {
        hi = (hi + T::one()) / T::lit(2.0);
    }
    let screening = bisect(|x| phi(x) - target, Bracket { lo, hi }, T::tiny())?;
    let n_real = p_not_sold.ln() / screening.ln();
    Ok(integral_n(screening, n_real))
}

fn integral_n<T: Real>(screening: T, n_real: T) -> AtomId<T> {
    let rounded = n_real.round().max(T::one());
    let residual = (n_real - rounded).abs();
    AtomId {
        screening,
        n_real,
        n_potential: rounded.to_usize().unwrap_or(1),
        residual,
        misfit: residual > T::lit(INTEGRALITY_TOLERANCE),
    }
}

/// `γ(z) = n̄ / (n̄ - 1) / (v̄ - b̄(z))` from the slope of `1 - 𝔾` at the upper
/// bound: least squares of the survivor on `t` and `t²` over the top
/// `fraction` of the support.
pub fn estimate_gamma<T: Real>(outcome: &InstrumentedOutcome<T>, fraction: T) -> Result<T> {
    outcome.check()?;
    let m = outcome.prices.len();
    let span = outcome.upper - outcome.lower;
    if !(span > T::zero()) {
        return Err(invalid("outcome", "degenerate sale-price support"));
    }
    let cut = outcome.upper - fraction * span;
    let mass = outcome.p_competitive();
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    let mut count = 0;
    for (j, &b) in outcome.prices.iter().enumerate().rev() {
        if b < cut {
            break;
        }
        let t = outcome.upper - b;
        let y = mass * (T::one() - T::of(j) / T::of(m - 1));
        let t2 = t * t;
        s11 = s11 + t2;
        s12 = s12 + t2 * t;
        s22 = s22 + t2 * t2;
        r1 = r1 + t * y;
        r2 = r2 + t2 * y;
        count += 1;
    }
    if count < 5 {
        return Err(Error::SampleSize { needed: 5, got: count });
    }
    let det = s11 * s22 - s12 * s12;
    let gamma = if det > T::zero() { (r1 * s22 - r2 * s12) / det } else { r1 / s11 };
    if !(gamma > T::zero() && gamma.is_finite()) {
        return Err(Error::Domain(format!("non-positive upper-tail slope {gamma}")));
    }
    Ok(gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSystem<T> {
    pub v_hi: T,
    /// `n̄ / (n̄ - 1)`, the common value of `γ(z)(v̄ - b̄(z))`.
    pub ratio: T,
    pub n_real: T,
    pub n_potential: usize,
    pub residual: T,
    pub misfit: bool,
    /// `v̄` from each pair of instrument values.
    pub pairwise_v_hi: Vec<T>,
}

/// Solves `γ_z (v̄ - b̄_z) = n̄ / (n̄ - 1)` over `(b̄_z, γ_z)` pairs; least
/// squares when more than two instrument values are given.
pub fn solve_gamma_system<T: Real>(points: &[(T, T)]) -> Result<GammaSystem<T>> {
    if points.len() < 2 {
        return Err(Error::NotIdentified("need at least two instrument values".into()));
    }
    let scale = points.iter().map(|p| p.0.abs()).fold(T::one(), T::max);
    let distinct = points.iter().any(|p| (p.0 - points[0].0).abs() > T::lit(1e-12) * scale);
    if !distinct {
        return Err(Error::NotIdentified("the upper bid bound does not vary with the instrument".into()));
    }
    let mut pairwise_v_hi = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let ((b1, g1), (b2, g2)) = (points[i], points[j]);
            if g2 != g1 {
                pairwise_v_hi.push((g2 * b2 - g1 * b1) / (g2 - g1));
            }
        }
    }
    // γ b̄ = v̄ γ - κ: regress γ b̄ on γ
    let n = T::of(points.len());
    let mx = points.iter().map(|p| p.1).sum::<T>() / n;
    let my = points.iter().map(|p| p.1 * p.0).sum::<T>() / n;
    let sxx = points.iter().map(|p| (p.1 - mx) * (p.1 - mx)).sum::<T>();
    let sxy = points.iter().map(|p| (p.1 - mx) * (p.1 * p.0 - my)).sum::<T>();
    if !(sxx > T::zero()) {
        return Err(Error::NotIdentified("the upper-tail slope does not vary with the instrument".into()));
    }
    let v_hi = sxy / sxx;
    let ratio = v_hi * mx - my;
    if !(ratio > T::one()) {
        return Err(Error::Inconsistent(format!("γ(v̄ - b̄) = {ratio} must exceed 1")));
    }
    let n_real = ratio / (ratio - T::one());
    let id = integral_n(T::zero(), n_real);
    Ok(GammaSystem {
        v_hi,
        ratio,
        n_real,
        n_potential: id.n_potential.max(2),
        residual: id.residual,
        misfit: id.misfit,
        pairwise_v_hi,
    })
}

/// `(α, V(α))` with `V = B + (α + q/(1-q)) B' / (n̄ - 1)`, where the
/// participants' bid quantile `B` is read off the sale-price quantile.
pub fn pooled_value_quantile<T: Real>(
    outcome: &InstrumentedOutcome<T>,
    q: T,
    n_potential: usize,
    levels: &[T],
) -> Result<Vec<(T, T)>> {
    if n_potential < 2 {
        return Err(invalid("n_potential", "must be at least 2"));
    }
    if !(q >= T::zero() && q < T::one()) {
        return Err(invalid("screening", format!("{q} is not in [0, 1)")));
    }
    let law = EmpiricalWinningBid::from_sorted(&outcome.prices, 512.min(outcome.prices.len()).max(4))?;
    let w = law.quantile_fn();
    let nb = n_potential as i32;
    let p0 = q.powi(nb);
    let mass = T::one() - p0;
    let m = T::of(n_potential - 1);
    let out: Vec<(T, T)> = levels
        .iter()
        .map(|&a| {
            let base = q + (T::one() - q) * a;
            let u = ((base.powi(nb) - p0) / mass).max(T::zero()).min(T::one());
            let du = T::of(n_potential) * (T::one() - q) * base.powi(nb - 1) / mass;
            let b = w.eval(u);
            let db = w.deriv(u) * du;
            (a, b + (a + q / (T::one() - q)) * db / m)
        })
        .collect();
    let v = isotonic_increasing(&out.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(out.iter().zip(v).map(|(p, v)| (p.0, v)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentPointId<T> {
    pub z: Option<T>,
    pub upper: T,
    pub gamma: T,
    pub screening: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentId<T> {
    pub system: GammaSystem<T>,
    pub points: Vec<InstrumentPointId<T>>,
    /// `(u, V(u))` for `u` from the smallest screening level to 1, averaged across `z`.
    pub value_quantile: Vec<(T, T)>,
    /// Largest spread between instrument values where their ranges overlap.
    pub overlap_discrepancy: T,
}

/// Reserve price with buyers who do not observe participation, identified
/// through instrument variation in the upper bid bound.
pub fn identify_reserve_unknown_n_instrument<T: Real>(
    outcomes: &[InstrumentedOutcome<T>],
    tail_fraction: T,
    levels: usize,
) -> Result<InstrumentId<T>> {
    let gammas = outcomes.iter().map(|o| estimate_gamma(o, tail_fraction)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(T, T)> = outcomes.iter().zip(&gammas).map(|(o, &g)| (o.upper, g)).collect();
    let system = solve_gamma_system(&pairs)?;
    let nbar = system.n_potential;
    let points: Vec<InstrumentPointId<T>> = outcomes
        .iter()
        .zip(&gammas)
        .map(|(o, &gamma)| InstrumentPointId {
            z: o.z,
            upper: o.upper,
            gamma,
            screening: o.p_not_sold.powf(T::one() / T::of(nbar)),
        })
        .collect();
    let grid: Vec<T> = (0..levels.max(2)).map(|i| T::of(i) / T::of(levels.max(2) - 1)).collect();
    let per_z: Vec<(T, Vec<(T, T)>)> = outcomes
        .iter()
        .zip(&points)
        .map(|(o, p)| Ok((p.screening, pooled_value_quantile(o, p.screening, nbar, &grid)?)))
        .collect::<Result<_>>()?;
    let (value_quantile, overlap_discrepancy) = stitch(&per_z, levels.max(2));
    Ok(InstrumentId { system, points, value_quantile, overlap_discrepancy })
}

/// Maps each `(q, [(α, V)])` to `u = q + (1-q) α` and averages on a common grid.
fn stitch<T: Real>(per_z: &[(T, Vec<(T, T)>)], levels: usize) -> (Vec<(T, T)>, T) {
    let q_min = per_z.iter().map(|p| p.0).fold(T::one(), T::min);
    let mut out = Vec::with_capacity(levels);
    let mut worst = T::zero();
    for i in 0..levels {
        let u = q_min + (T::one() - q_min) * T::of(i) / T::of(levels - 1);
        let vals: Vec<T> = per_z
            .iter()
            .filter(|(q, _)| u >= *q)
            .map(|(q, tab)| {
                let a = if *q < T::one() { (u - *q) / (T::one() - *q) } else { T::one() };
                interp(tab, a)
            })
            .collect();
        if vals.is_empty() {
            continue;
        }
        let hi = vals.iter().copied().fold(T::neg_infinity(), T::max);
        let lo = vals.iter().copied().fold(T::infinity(), T::min);
        worst = worst.max(hi - lo);
        out.push((u, vals.iter().copied().sum::<T>() / T::of(vals.len())));
    }
    (out, worst)
}

/// Linear interpolation in an increasing `(x, y)` table, clamped at the ends.
fn interp<T: Real>(tab: &[(T, T)], x: T) -> T {
    let n = tab.len();
    if x <= tab[0].0 {
        return tab[0].1;
    }
    if x >= tab[n - 1].0 {
        return tab[n - 1].1;
    }
    let k = tab.partition_point(|p| p.0 <= x).clamp(1, n - 1) - 1;
    let (a, b) = (tab[k], tab[k + 1]);
    if b.0 == a.0 {
        return b.1;
    }
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

/// Entry cost `c = ∫_0^{v̄} [1 - F(v|s)] [s + (1-s) F_c(v|s)]^{n̄-1} dv`.
pub fn entry_cost<T: Real>(cond: impl Fn(T) -> T, updated: impl Fn(T) -> T, s: T, n_potential: usize, v_hi: T) -> T {
    let m = n_potential as i32 - 1;
    let f = |v: T| (T::one() - cond(v)) * (s + (T::one() - s) * updated(v)).powi(m);
    let tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
    adaptive_integral(&f, T::zero(), v_hi, tol).unwrap_or(T::nan())
}

/// Threshold and entrants' value cdf at one instrument value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryPoint<T> {
    pub z: Option<T>,
    pub s: T,
    /// `(v, F_c(v|s))`, increasing in `v`, from 0 to 1.
    pub updated_cdf: Vec<(T, T)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryEstimate<T> {
    pub z: Option<T>,
    pub s: T,
    pub cost: T,
    /// `(v, F(v|s))`.
    pub signal_cdf: Vec<(T, T)>,
    /// False when a single threshold forced `F(.|s) = F_c(.|s)`.
    pub differenced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryId<T> {
    pub n_potential: usize,
    pub points: Vec<EntryEstimate<T>>,
    pub warnings: Vec<String>,
}

/// `F(v|s) = -∂/∂s [(1-s) F_c(v|s)]` by differencing across thresholds, then
/// the entry cost at each threshold.
pub fn identify_entry<T: Real>(points: &[EntryPoint<T>], n_potential: usize, grid_size: usize) -> Result<EntryId<T>> {
    if points.is_empty() {
        return Err(Error::Empty);
    }
    if n_potential < 2 {
        return Err(invalid("n_potential", "must be at least 2"));
    }
    for p in points {
        if !(p.s >= T::zero() && p.s < T::one()) {
            return Err(invalid("s", format!("threshold {} is not in [0, 1)", p.s)));
        }
        if p.updated_cdf.len() < 2 {
            return Err(invalid("updated_cdf", "need at least two points"));
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].s.partial_cmp(&points[b].s).unwrap());
    let v_lo = points.iter().map(|p| p.updated_cdf[0].0).fold(T::infinity(), T::min);
    let v_hi = points.iter().map(|p| p.updated_cdf[p.updated_cdf.len() - 1].0).fold(T::neg_infinity(), T::max);
    let size = grid_size.max(2);
    let vgrid: Vec<T> = (0..size).map(|i| v_lo + (v_hi - v_lo) * T::of(i) / T::of(size - 1)).collect();
    let fc = |k: usize, v: T| {
        let tab = &points[k].updated_cdf;
        if v < tab[0].0 {
            T::zero()
        } else {
            interp(tab, v)
        }
    };
    let mut warnings = Vec::new();
    let single = {
        let s0 = points[order[0]].s;
        order.iter().all(|&k| points[k].s == s0)
    };
    if single {
        warnings.push("a single entry threshold: F(.|s) cannot be differenced, F_c(.|s) is used in its place".into());
    }
    let mut estimates = Vec::with_capacity(points.len());
    for (rank, &k) in order.iter().enumerate() {
        let p = &points[k];
        let signal_cdf: Vec<(T, T)> = if single {
            vgrid.iter().map(|&v| (v, fc(k, v))).collect()
        } else {
            let (a, b) = neighbours(&order, rank, |i| points[i].s);
            let (sa, sb) = (points[a].s, points[b].s);
            let raw: Vec<T> = vgrid
                .iter()
                .map(|&v| {
                    let d = ((T::one() - sb) * fc(b, v) - (T::one() - sa) * fc(a, v)) / (sb - sa);
                    (-d).max(T::zero()).min(T::one())
                })
                .collect();
            vgrid.iter().copied().zip(isotonic_increasing(&raw)).collect()
        };
        let cost = entry_cost(|v| lookup(&signal_cdf, v), |v| fc(k, v), p.s, n_potential, v_hi);
        estimates.push(EntryEstimate { z: p.z, s: p.s, cost, signal_cdf, differenced: !single });
    }
    Ok(EntryId { n_potential, points: estimates, warnings })
}

/// Indices used to difference at `order[rank]`: the neighbours on both sides
/// when available, else the nearest distinct threshold.
fn neighbours<T: Real>(order: &[usize], rank: usize, s: impl Fn(usize) -> T) -> (usize, usize) {
    let here = s(order[rank]);
    let below = order[..rank].iter().rev().copied().find(|&i| s(i) < here);
    let above = order[rank + 1..].iter().copied().find(|&i| s(i) > here);
    match (below, above) {
        (Some(a), Some(b)) => (a, b),
        (Some(a), None) => (a, order[rank]),
        (None, Some(b)) => (order[rank], b),
        (None, None) => (order[rank], order[rank]),
    }
}

fn lookup<T: Real>(tab: &[(T, T)], v: T) -> T {
    if v < tab[0].0 {
        T::zero()
    } else if v >= tab[tab.len() - 1].0 {
        T::one()
    } else {
        interp(tab, v)
    }
}

/// Entry thresholds and entrants' value cdfs when bidders do not observe
/// participation: `n̄` from the instrument system, `s(z) = P(not sold)^{1/n̄}`.
pub fn entry_points_unknown_n<T: Real>(
    outcomes: &[InstrumentedOutcome<T>],
    tail_fraction: T,
    levels: usize,
) -> Result<(GammaSystem<T>, Vec<EntryPoint<T>>)> {
    let gammas = outcomes.iter().map(|o| estimate_gamma(o, tail_fraction)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(T, T)> = outcomes.iter().zip(&gammas).map(|(o, &g)| (o.upper, g)).collect();
    let system = solve_gamma_system(&pairs)?;
    let nbar = system.n_potential;
    let grid: Vec<T> = (0..levels.max(2)).map(|i| T::of(i) / T::of(levels.max(2) - 1)).collect();
    let points = outcomes
        .iter()
        .map(|o| {
            let s = o.p_not_sold.powf(T::one() / T::of(nbar));
            let tab = pooled_value_quantile(o, s, nbar, &grid)?;
            Ok(EntryPoint { z: o.z, s, updated_cdf: cdf_from_quantile(&tab) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((system, points))
}

/// Entry thresholds and entrants' value cdfs when bidders observe
/// participation: per instrument value, detected competition weights give
/// `s(z)` through the binomial form and value recovery gives `F_c(.|s)`.
pub fn entry_points_known_n<T: Real>(
    outcomes: &[InstrumentedOutcome<T>],
    detection: &DetectionConfig,
    recovery: &RecoveryConfig,
    tolerance: T,
) -> Result<(usize, Vec<EntryPoint<T>>)> {
    let mut nbar = None;
    let mut points = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let jumps = detect_jumps(&o.prices, detection)?;
        if jumps.jumps.is_empty() {
            return Err(Error::NotIdentified(format!("no density discontinuity at z = {:?}", o.z)));
        }
        let est = identify_from_jumps(&jumps, 2, T::one())?;
        let fit = binomial_fit(2, &est.weights, tolerance)?;
        if *nbar.get_or_insert(fit.n_potential) != fit.n_potential {
            return Err(Error::Inconsistent("the number of discontinuities varies with the instrument".into()));
        }
        let law = EmpiricalWinningBid::from_sorted(&o.prices, 512)?;
        let r = iterate_recovery(&law, &est, recovery)?;
        let mut tab: Vec<(T, T)> = r.alpha.iter().zip(&r.value).map(|(&a, &v)| (a, v)).collect();
        if tab[0].0 > T::zero() {
            tab.insert(0, (T::zero(), o.lower.min(tab[0].1)));
        }
        points.push(EntryPoint { z: o.z, s: fit.screening, updated_cdf: cdf_from_quantile(&tab) });
    }
    Ok((nbar.unwrap_or(2), points))
}

/// `(α, V)` to `(v, α)`, dropping flat stretches of `V`.
fn cdf_from_quantile<T: Real>(tab: &[(T, T)]) -> Vec<(T, T)> {
    let mut out: Vec<(T, T)> = Vec::with_capacity(tab.len());
    for &(a, v) in tab {
        match out.last_mut() {
            Some(last) if v <= last.0 => last.1 = a,
            _ => out.push((v, a)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfoVerdict {
    BuyersObserveN,
    BuyersDoNotObserveN,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryVerdict {
    ReservePrice,
    EntryCost,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    Strong,
    Weak,
    /// Computed but not pointing either way.
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub test: String,
    pub z: Option<f64>,
    pub statistic: f64,
    pub strength: Strength,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationReport {
    pub info_verdict: InfoVerdict,
    pub info_evidence: Vec<Evidence>,
    pub entry_verdict: EntryVerdict,
    pub entry_evidence: Vec<Evidence>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminationConfig {
    pub detection: DetectionConfig,
    /// Share of the lowest prices used in the lower-tail exponent fit.
    pub tail_fraction: f64,
    /// Exponents inside this band count as square-root divergence.
    pub divergence_band: (f64, f64),
    /// Exponents at or above this count as a bounded density.
    pub bounded_exponent: f64,
    pub atom_min_count: usize,
    pub atom_min_share: f64,
    /// Spread of lower bounds across `z`, relative to the price range, above which they vary.
    pub lower_bound_tolerance: f64,
    /// Spread of `(1-π) F_c + π` across `z` above which it depends on `z`.
    pub constancy_tolerance: f64,
    pub upper_tail_fraction: f64,
}

impl Default for DiscriminationConfig {
    fn default() -> Self {
        Self {
            detection: DetectionConfig { h0: 0.3, ..Default::default() },
            tail_fraction: 0.01,
            divergence_band: (0.3, 0.8),
            bounded_exponent: 0.9,
            atom_min_count: 5,
            atom_min_share: 0.001,
            lower_bound_tolerance: 0.02,
            constancy_tolerance: 0.05,
            upper_tail_fraction: 0.05,
        }
    }
}

/// Exact-duplicate point mass at the sample minimum or at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Atom {
    price: f64,
    count: usize,
}

fn find_atom<T: Real>(sorted: &[T], config: &DiscriminationConfig) -> Option<Atom> {
    let l = sorted.len();
    let need = config.atom_min_count.max((config.atom_min_share * l as f64).ceil() as usize);
    let min = *sorted.first()?;
    let at_min = sorted.iter().take_while(|&&p| p == min).count();
    let at_zero = sorted.iter().filter(|&&p| p == T::zero()).count();
    if at_min >= need {
        Some(Atom { price: min.as_f64(), count: at_min })
    } else if at_zero >= need {
        Some(Atom { price: 0.0, count: at_zero })
    } else {
        None
    }
}

struct ZSummary {
    z: Option<f64>,
    lower: f64,
    span: f64,
    atom: Option<Atom>,
    kappa: Option<f64>,
    interior_jumps: Option<usize>,
}

fn summarize<T: Real>(sample: &OutcomeSample<T>, z: Option<T>, config: &DiscriminationConfig) -> Option<ZSummary> {
    let mut sold: Vec<T> =
        sample.records.iter().filter(|r| z.is_none() || r.z == z).filter_map(|r| r.price()).collect();
    if sold.len() < 20 {
        return None;
    }
    sold.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let atom = find_atom(&sold, config);
    let rest: Vec<T> = match atom {
        Some(a) => sold.iter().copied().filter(|p| p.as_f64() != a.price).collect(),
        None => sold.clone(),
    };
    let lower = atom.map_or(sold[0].as_f64(), |a| a.price.min(sold[0].as_f64()));
    let span = sold[sold.len() - 1].as_f64() - lower;
    let kappa = if rest.len() >= 20 {
        let anchor = atom.map(|a| T::lit(a.price));
        let tab = lower_tail_tabulation(&rest, anchor, T::lit(config.tail_fraction));
        lower_tail_divergence_check(&tab, anchor.unwrap_or(rest[0])).ok().map(|k| k.as_f64())
    } else {
        None
    };
    let interior_jumps =
        detect_jumps(&rest, &config.detection).ok().map(|set| set.jumps.iter().filter(|j| !j.edge).count());
    Some(ZSummary { z: z.map(|v| v.as_f64()), lower, span, atom, kappa, interior_jumps })
}

fn evidence(test: &str, z: Option<f64>, statistic: f64, strength: Strength, note: impl Into<String>) -> Evidence {
    Evidence { test: test.into(), z, statistic, strength, note: note.into() }
}

/// Information-regime and reserve-versus-entry tests on a sample.
pub fn discriminate<T: Real>(sample: &OutcomeSample<T>, config: &DiscriminationConfig) -> DiscriminationReport {
    let mut warnings = Vec::new();
    let zs = sample.instrument_values();
    let summaries: Vec<ZSummary> = if zs.is_empty() {
        warnings.push("no instrument column: reserve-versus-entry tests need variation in z".into());
        summarize(sample, None, config).into_iter().collect()
    } else {
        zs.iter().filter_map(|&z| summarize(sample, Some(z), config)).collect()
    };
    if summaries.is_empty() {
        warnings.push("too few sales to run any test".into());
    }

    let mut info_evidence = Vec::new();
    let (mut observe, mut not_observe) = (false, false);
    for s in &summaries {
        match s.atom {
            Some(a) => {
                observe = true;
                info_evidence.push(evidence(
                    "atom_at_lower_bound",
                    s.z,
                    a.count as f64,
                    Strength::Strong,
                    format!("{} sales at exactly {}", a.count, a.price),
                ));
            }
            None => info_evidence.push(evidence("atom_at_lower_bound", s.z, 0.0, Strength::Neutral, "no point mass")),
        }
        if let Some(k) = s.kappa {
            let (lo, hi) = config.divergence_band;
            let (strength, note) = if k >= lo && k <= hi {
                if s.atom.is_none() {
                    not_observe = true;
                }
                (Strength::Strong, "square-root divergence of the density at the lower bound")
            } else if k >= config.bounded_exponent {
                (Strength::Weak, "bounded density at the lower bound")
            } else {
                (Strength::Neutral, "exponent outside both bands")
            };
            info_evidence.push(evidence("lower_tail_exponent", s.z, k, strength, note));
        }
        if let Some(j) = s.interior_jumps {
            let nbar = 2 + j;
            let strength = match j {
                0 => Strength::Neutral,
                _ if nbar > 3 => {
                    observe = true;
                    Strength::Strong
                }
                _ => Strength::Weak,
            };
            info_evidence.push(evidence(
                "interior_discontinuities",
                s.z,
                j as f64,
                strength,
                format!("implied n̄ = {nbar}"),
            ));
        }
    }
    let info_verdict = match (observe, not_observe) {
        (true, false) => InfoVerdict::BuyersObserveN,
        (false, true) => InfoVerdict::BuyersDoNotObserveN,
        _ => InfoVerdict::Inconclusive,
    };

    let mut entry_evidence = Vec::new();
    let entry_verdict = if summaries.len() < 2 {
        warnings.push("fewer than two instrument values: reserve-versus-entry verdict is inconclusive".into());
        EntryVerdict::Inconclusive
    } else {
        let lows: Vec<f64> = summaries.iter().map(|s| s.lower).collect();
        let scale = summaries.iter().map(|s| s.span).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let spread = (lows.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - lows.iter().copied().fold(f64::INFINITY, f64::min))
            / scale;
        let zv: Vec<f64> = summaries.iter().filter_map(|s| s.z).collect();
        let slope = regression_slope(&zv, &lows);
        let varies = spread > config.lower_bound_tolerance;
        entry_evidence.push(evidence(
            "lower_bound_spread",
            None,
            spread,
            Strength::Strong,
            format!(
                "lower bound {} with z (slope {:.4})",
                if varies { "varies" } else { "is constant" },
                slope.unwrap_or(f64::NAN)
            ),
        ));
        let atom_at_zero = summaries.iter().any(|s| s.atom.is_some_and(|a| a.price == 0.0));
        if atom_at_zero {
            entry_evidence.push(evidence("atom_at_zero", None, 1.0, Strength::Strong, "lone entrants pay zero"));
        }
        let divergent = info_verdict == InfoVerdict::BuyersDoNotObserveN;
        let mut dependent = false;
        if divergent && !varies {
            if let Some(stat) = constancy_statistic(sample, &zs, config) {
                dependent = stat > config.constancy_tolerance;
                entry_evidence.push(evidence(
                    "participation_adjusted_cdf_constancy",
                    None,
                    stat,
                    if dependent { Strength::Strong } else { Strength::Neutral },
                    "spread of (1 - π) F_c + π across z",
                ));
            }
        }
        if varies {
            EntryVerdict::ReservePrice
        } else if atom_at_zero || divergent || dependent {
            EntryVerdict::EntryCost
        } else {
            EntryVerdict::Inconclusive
        }
    };
    DiscriminationReport { info_verdict, info_evidence, entry_verdict, entry_evidence, warnings }
}

fn regression_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Spread across `z` of the participation-adjusted value quantile under the
/// unobserved-participation route; `None` when that route fails.
fn constancy_statistic<T: Real>(sample: &OutcomeSample<T>, zs: &[T], config: &DiscriminationConfig) -> Option<f64> {
    let outcomes: Vec<InstrumentedOutcome<T>> =
        zs.iter().filter_map(|&z| InstrumentedOutcome::from_sample(sample, Some(z)).ok()).collect();
    let id = identify_reserve_unknown_n_instrument(&outcomes, T::lit(config.upper_tail_fraction), 201).ok()?;
    let scale = id.value_quantile.last()?.1 - id.value_quantile.first()?.1;
    (scale > T::zero()).then(|| (id.overlap_discrepancy / scale).as_f64())
}

/// Regime used for routing identification of entry models.
pub fn regime_of(report: &DiscriminationReport) -> Option<InfoRegime> {
    match report.info_verdict {
        InfoVerdict::BuyersObserveN => Some(InfoRegime::KnownN),
        InfoVerdict::BuyersDoNotObserveN => Some(InfoRegime::UnknownN),
        InfoVerdict::Inconclusive => None,
    }
}
