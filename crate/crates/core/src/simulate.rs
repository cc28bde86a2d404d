//! Monte-Carlo draws of auction outcomes and CSV input/output.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{bid_quantile_from_value, BidQuantile, CompetitionPmf, ValueQuantile};
use crate::error::{invalid, Error, Result};
use crate::numeric::chebyshev_grid;
use crate::participation::{ConditionalFamily, EntryModel, InfoRegime, ParticipationModel, ReserveModel, Schedule};
use crate::real::Real;

/// Parametric value quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueSpec<T> {
    Uniform {
        lo: T,
        hi: T,
    },
    /// `V(a) = lo + (hi - lo) a^exponent`.
    Power {
        lo: T,
        hi: T,
        exponent: T,
    },
    Tabulated {
        alpha: Vec<T>,
        values: Vec<T>,
    },
}

impl<T: Real> ValueSpec<T> {
    pub fn build(&self) -> Result<ValueQuantile<T>> {
        match self {
            Self::Uniform { lo, hi } => ValueQuantile::uniform(*lo, *hi),
            Self::Power { lo, hi, exponent } => ValueQuantile::power(*lo, *hi, *exponent),
            Self::Tabulated { alpha, values } => ValueQuantile::tabulated(alpha.clone(), values.clone()),
        }
    }
}

fn one<T: Real>() -> T {
    T::one()
}

/// Data-generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", bound = "T: Real")]
pub enum ModelSpec<T> {
    /// Exogenous participation with `N` drawn from `weights` on `n_lo, n_lo + 1, ...`.
    Benchmark {
        value: ValueSpec<T>,
        n_lo: usize,
        weights: Vec<T>,
        #[serde(default = "one")]
        theta: T,
    },
    Reserve {
        value: ValueSpec<T>,
        n_potential: usize,
        reserve: Schedule<T>,
        info: InfoRegime,
    },
    Entry {
        family: ConditionalFamily<T>,
        n_potential: usize,
        cost: Schedule<T>,
        info: InfoRegime,
    },
}

impl<T: Real> ModelSpec<T> {
    pub fn participation(&self) -> Result<Option<ParticipationModel<T>>> {
        Ok(match self {
            Self::Benchmark { .. } => None,
            Self::Reserve { value, n_potential, reserve, info } => {
                Some(ParticipationModel::Reserve(ReserveModel::new(value.build()?, *n_potential, *reserve, *info)?))
            }
            Self::Entry { family, n_potential, cost, info } => {
                Some(ParticipationModel::Entry(EntryModel::new(family.clone(), *n_potential, *cost, *info)?))
            }
        })
    }
}

/// Instrument value and its sampling probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstrumentPoint<T> {
    pub z: T,
    pub weight: T,
}

/// Covariates `x_j ~ U(0, 1)` scaling every price by `exp(beta · x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec<T> {
    pub beta: Vec<T>,
}

fn default_grid_size() -> usize {
    crate::numeric::DEFAULT_GRID_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SimConfig<T> {
    pub model: ModelSpec<T>,
    pub sample_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub instruments: Option<Vec<InstrumentPoint<T>>>,
    #[serde(default)]
    pub covariates: Option<CovariateSpec<T>>,
    /// Also emit every submitted bid (`b1..bk` columns).
    #[serde(default)]
    pub per_bid: bool,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
}

impl<T: Real> SimConfig<T> {
    pub fn new(model: ModelSpec<T>, sample_size: usize, seed: u64) -> Self {
        Self {
            model,
            sample_size,
            seed,
            instruments: None,
            covariates: None,
            per_bid: false,
            grid_size: default_grid_size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 {
            return Err(invalid("sample_size", "must be at least 1"));
        }
        if let Some(points) = &self.instruments {
            if points.is_empty() {
                return Err(invalid("instruments", "list is empty"));
            }
            if points.iter().any(|p| !(p.weight >= T::zero()) || !p.z.is_finite()) {
                return Err(invalid("instruments", "weights must be nonnegative and z finite"));
            }
            let total: T = points.iter().map(|p| p.weight).sum();
            if (total - T::one()).abs() > T::lit(1e-9) {
                return Err(invalid("instruments", format!("weights sum to {total}, expected 1")));
            }
        }
        if let Some(c) = &self.covariates {
            if c.beta.iter().any(|b| !b.is_finite()) {
                return Err(invalid("covariates", "beta must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Status<T> {
    NotSold,
    SoldAtAtom(T),
    SoldCompetitive(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord<T> {
    pub status: Status<T>,
    pub z: Option<T>,
    pub covariates: Vec<T>,
    /// Submitted bids when observed, unordered.
    pub bids: Vec<T>,
}

impl<T: Real> OutcomeRecord<T> {
    pub fn price(&self) -> Option<T> {
        match self.status {
            Status::NotSold => None,
            Status::SoldAtAtom(p) | Status::SoldCompetitive(p) => Some(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub enum Provenance<T> {
    Simulated(Box<SimConfig<T>>),
    Ingested { source: String, rows_read: usize, rejected: Vec<RejectedRow> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeSample<T> {
    pub records: Vec<OutcomeRecord<T>>,
    pub provenance: Provenance<T>,
}

impl<T: Real> OutcomeSample<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Competitive sale prices sorted ascending.
    pub fn competitive_bids(&self) -> Vec<T> {
        let mut w: Vec<T> = self
            .records
            .iter()
            .filter_map(|r| match r.status {
                Status::SoldCompetitive(w) => Some(w),
                _ => None,
            })
            .collect();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        w
    }

    /// Every sale price, atoms included, sorted ascending.
    pub fn sale_prices(&self) -> Vec<T> {
        let mut w: Vec<T> = self.records.iter().filter_map(|r| r.price()).collect();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        w
    }

    pub fn has_instrument(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.z.is_some())
    }

    pub fn covariate_count(&self) -> usize {
        self.records.iter().map(|r| r.covariates.len()).max().unwrap_or(0)
    }

    /// Distinct instrument values in increasing order.
    pub fn instrument_values(&self) -> Vec<T> {
        let mut z: Vec<T> = self.records.iter().filter_map(|r| r.z).collect();
        z.sort_by(|a, b| a.partial_cmp(b).unwrap());
        z.dedup();
        z
    }

    /// Records with instrument equal to `z`.
    pub fn at_instrument(&self, z: T) -> Self {
        Self {
            records: self.records.iter().filter(|r| r.z == Some(z)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn rejected(&self) -> &[RejectedRow] {
        match &self.provenance {
            Provenance::Ingested { rejected, .. } => rejected,
            Provenance::Simulated(_) => &[],
        }
    }
}

/// Equilibrium objects needed to draw outcomes at one instrument value.
enum Regime<T: Real> {
    Benchmark { pmf: CompetitionPmf<T>, bids: Vec<BidQuantile<T>> },
    Known { q: T, n_potential: usize, atom: T, bids: Vec<Option<BidQuantile<T>>> },
    Unknown { q: T, n_potential: usize, bid: BidQuantile<T> },
}

impl<T: Real> Regime<T> {
    fn build(model: &ModelSpec<T>, z: Option<T>, grid: &[T]) -> Result<Self> {
        if let ModelSpec::Benchmark { value, n_lo, weights, theta } = model {
            let v = value.build()?;
            let pmf = CompetitionPmf::new(*n_lo, weights.clone())?;
            let bids =
                pmf.counts().map(|(n, _)| bid_quantile_from_value(&v, n, *theta, grid)).collect::<Result<Vec<_>>>()?;
            return Ok(Self::Benchmark { pmf, bids });
        }
        let pm = model.participation()?.expect("participation model");
        let q = pm.screening(z)?;
        let n_potential = pm.n_potential();
        match pm.info() {
            InfoRegime::KnownN => {
                let bids = (0..=n_potential)
                    .map(|n| if n >= 2 { pm.bid_known(n, z, grid).map(Some) } else { Ok(None) })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::Known { q, n_potential, atom: pm.atom_price(z)?, bids })
            }
            InfoRegime::UnknownN => Ok(Self::Unknown { q, n_potential, bid: pm.bid_unknown(z, grid)? }),
        }
    }

    fn participants(q: T, n_potential: usize, rng: &mut ChaCha8Rng) -> usize {
        (0..n_potential).filter(|_| T::lit(rng.gen::<f64>()) >= q).count()
    }

    /// Returns the status and, when `per_bid`, the submitted bids, before covariate scaling.
    fn draw(&self, rng: &mut ChaCha8Rng, per_bid: bool) -> (Status<T>, Vec<T>) {
        let (n, bid) = match self {
            Self::Benchmark { pmf, bids } => {
                let u = T::lit(rng.gen::<f64>());
                let mut acc = T::zero();
                let mut idx = pmf.weights().len() - 1;
                for (i, &p) in pmf.weights().iter().enumerate() {
                    acc = acc + p;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                (pmf.n_lo() + idx, &bids[idx])
            }
            Self::Known { q, n_potential, atom, bids } => {
                let n = Self::participants(*q, *n_potential, rng);
                match n {
                    0 => return (Status::NotSold, Vec::new()),
                    1 => return (Status::SoldAtAtom(*atom), if per_bid { vec![*atom] } else { Vec::new() }),
                    _ => (n, bids[n].as_ref().expect("bid for n >= 2")),
                }
            }
            Self::Unknown { q, n_potential, bid } => {
                let n = Self::participants(*q, *n_potential, rng);
                if n == 0 {
                    return (Status::NotSold, Vec::new());
                }
                (n, bid)
            }
        };
        if per_bid {
            let bids: Vec<T> = (0..n).map(|_| bid.eval(T::lit(rng.gen::<f64>()))).collect();
            let w = bids.iter().copied().fold(T::neg_infinity(), T::max);
            (Status::SoldCompetitive(w), bids)
        } else {
            let u = T::lit(rng.gen::<f64>());
            (Status::SoldCompetitive(bid.eval(u.powf(T::one() / T::of(n)))), Vec::new())
        }
    }
}

/// Draws `sample_size` outcomes. Record `i` uses its own ChaCha8 stream, so the
/// output does not depend on how work is split across threads.
pub fn simulate<T: Real>(config: &SimConfig<T>) -> Result<OutcomeSample<T>> {
    config.validate()?;
    let grid = chebyshev_grid::<T>(config.grid_size);
    let points: Vec<(Option<T>, T)> = match &config.instruments {
        Some(p) => p.iter().map(|p| (Some(p.z), p.weight)).collect(),
        None => vec![(None, T::one())],
    };
    let regimes = points.iter().map(|(z, _)| Regime::build(&config.model, *z, &grid)).collect::<Result<Vec<_>>>()?;
    let beta: &[T] = config.covariates.as_ref().map_or(&[], |c| &c.beta);
    let records = (0..config.sample_size)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let mut k = points.len() - 1;
            if points.len() > 1 {
                let u = T::lit(rng.gen::<f64>());
                let mut acc = T::zero();
                for (j, (_, w)) in points.iter().enumerate() {
                    acc = acc + *w;
                    if u < acc {
                        k = j;
                        break;
                    }
                }
            }
            let x: Vec<T> = beta.iter().map(|_| T::lit(rng.gen::<f64>())).collect();
            let scale = beta.iter().zip(&x).map(|(b, x)| *b * *x).sum::<T>().exp();
            let (status, bids) = regimes[k].draw(&mut rng, config.per_bid);
            let status = match status {
                Status::NotSold => Status::NotSold,
                Status::SoldAtAtom(p) => Status::SoldAtAtom(p * scale),
                Status::SoldCompetitive(p) => Status::SoldCompetitive(p * scale),
            };
            OutcomeRecord { status, z: points[k].0, covariates: x, bids: bids.into_iter().map(|b| b * scale).collect() }
        })
        .collect();
    Ok(OutcomeSample { records, provenance: Provenance::Simulated(Box::new(config.clone())) })
}

/// Writes the outcome CSV: `winning_bid,sold,atom[,z][,x1..][,b1..]`.
pub fn write_csv<T: Real, W: Write>(sample: &OutcomeSample<T>, out: W) -> Result<()> {
    let has_z = sample.records.iter().any(|r| r.z.is_some());
    let nx = sample.covariate_count();
    let nb = sample.records.iter().map(|r| r.bids.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["winning_bid".to_string(), "sold".into(), "atom".into()];
    if has_z {
        header.push("z".into());
    }
    header.extend((1..=nx).map(|j| format!("x{j}")));
    header.extend((1..=nb).map(|j| format!("b{j}")));
    w.write_record(&header)?;
    let opt = |v: Option<T>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &sample.records {
        let (bid, sold, atom) = match r.status {
            Status::NotSold => (String::new(), "0", "0"),
            Status::SoldAtAtom(p) => (p.to_string(), "1", "1"),
            Status::SoldCompetitive(p) => (p.to_string(), "1", "0"),
        };
        let mut row = vec![bid, sold.into(), atom.into()];
        if has_z {
            row.push(opt(r.z));
        }
        row.extend((0..nx).map(|j| opt(r.covariates.get(j).copied())));
        row.extend((0..nb).map(|j| opt(r.bids.get(j).copied())));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Real>(sample: &OutcomeSample<T>, path: &Path) -> Result<()> {
    write_csv(sample, std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn numbered_columns(headers: &csv::StringRecord, prefix: char) -> Vec<usize> {
    let mut cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let h = h.trim();
            h.strip_prefix(prefix).and_then(|d| d.parse::<usize>().ok()).map(|k| (k, i))
        })
        .collect();
    cols.sort();
    cols.into_iter().map(|(_, i)| i).collect()
}

fn parse_opt<T: Real>(field: &str) -> std::result::Result<Option<T>, ()> {
    let f = field.trim();
    if f.is_empty() {
        return Ok(None);
    }
    match f.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(T::lit(v))),
        _ => Err(()),
    }
}

fn parse_flag(field: &str) -> std::result::Result<Option<bool>, ()> {
    match field.trim() {
        "" => Ok(None),
        "0" => Ok(Some(false)),
        "1" => Ok(Some(true)),
        _ => Err(()),
    }
}

/// Reads an outcome CSV. Missing required columns, a non-numeric winning bid
/// and an empty file are errors; contradictory rows are rejected and reported.
pub fn ingest_csv<T: Real, R: Read>(input: R, source: &str) -> Result<OutcomeSample<T>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Empty);
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let bid_col = col("winning_bid").ok_or_else(|| Error::MissingColumn("winning_bid".into()))?;
    let sold_col = col("sold").ok_or_else(|| Error::MissingColumn("sold".into()))?;
    let atom_col = col("atom");
    let z_col = col("z");
    let x_cols = numbered_columns(&headers, 'x');
    let b_cols = numbered_columns(&headers, 'b');

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut rows_read = 0;
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        rows_read += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RejectedRow { row: row_no, reason: e.to_string() });
                continue;
            }
        };
        if row.len() != headers.len() {
            rejected.push(RejectedRow {
                row: row_no,
                reason: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
            continue;
        }
        let bid = parse_opt::<T>(&row[bid_col]).map_err(|_| Error::Row {
            row: row_no,
            message: format!("winning_bid '{}' is not a number", &row[bid_col]),
        })?;
        let mut reject = |reason: String| rejected.push(RejectedRow { row: row_no, reason });
        let sold = match parse_flag(&row[sold_col]) {
            Ok(Some(s)) => s,
            _ => {
                reject(format!("sold must be 0 or 1, found '{}'", &row[sold_col]));
                continue;
            }
        };
        let atom = match atom_col.map(|c| parse_flag(&row[c])) {
            None | Some(Ok(None)) => false,
            Some(Ok(Some(a))) => a,
            Some(Err(())) => {
                reject(format!("atom must be 0 or 1, found '{}'", &row[atom_col.unwrap()]));
                continue;
            }
        };
        let status = match (sold, atom, bid) {
            (false, false, None) => Status::NotSold,
            (false, _, Some(_)) => {
                reject("sold = 0 but winning_bid is present".into());
                continue;
            }
            (false, true, None) => {
                reject("atom = 1 but sold = 0".into());
                continue;
            }
            (true, _, None) => {
                reject("sold = 1 but winning_bid is empty".into());
                continue;
            }
            (true, true, Some(p)) => Status::SoldAtAtom(p),
            (true, false, Some(p)) => Status::SoldCompetitive(p),
        };
        let z = match z_col.map(|c| parse_opt::<T>(&row[c])) {
            None => None,
            Some(Ok(z)) => z,
            Some(Err(())) => {
                reject(format!("z '{}' is not a number", &row[z_col.unwrap()]));
                continue;
            }
        };
        let numbers = |cols: &[usize], what: char| -> std::result::Result<Vec<T>, String> {
            let mut out = Vec::new();
            for (j, &c) in cols.iter().enumerate() {
                match parse_opt::<T>(&row[c]) {
                    Ok(Some(v)) => out.push(v),
                    Ok(None) if what == 'b' => {}
                    _ => return Err(format!("{what}{} '{}' is not a number", j + 1, &row[c])),
                }
            }
            Ok(out)
        };
        let covariates = match numbers(&x_cols, 'x') {
            Ok(v) => v,
            Err(e) => {
                reject(e);
                continue;
            }
        };
        let bids = match numbers(&b_cols, 'b') {
            Ok(v) => v,
            Err(e) => {
                reject(e);
                continue;
            }
        };
        records.push(OutcomeRecord { status, z, covariates, bids });
    }
    if rows_read == 0 {
        return Err(Error::Empty);
    }
    Ok(OutcomeSample { records, provenance: Provenance::Ingested { source: source.to_string(), rows_read, rejected } })
}

pub fn ingest_csv_file<T: Real>(path: &Path) -> Result<OutcomeSample<T>> {
    let file = std::fs::File::open(path)?;
    ingest_csv(std::io::BufReader::new(file), &path.display().to_string())
}
