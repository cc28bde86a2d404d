use std::path::Path;

use fpa_core::competition::{
    crra_lower_bound, hill_n_lower, CompetitionDiagnostics, CompetitionEstimate, HillEstimate, ThetaBound,
};
use fpa_core::detect::{detect_jumps, sort_sample, DensityPoint, Jump, JumpSet};
use fpa_core::endogenous::{
    discriminate, entry_points_known_n, entry_points_unknown_n, identify_entry, identify_reserve_known_n,
    identify_reserve_unknown_n_atoms, identify_reserve_unknown_n_instrument, regime_of, AtomId, DiscriminationReport,
    EntryId, EntryVerdict, GammaSystem, InstrumentId, InstrumentedOutcome, ReserveKnownId,
};
use fpa_core::participation::InfoRegime;
use fpa_core::recovery::{empirical_pipeline, iterate_recovery, EmpiricalWinningBid, PipelineConfig, RecoveredValue};
use fpa_core::simulate::{ingest_csv_file, simulate, write_csv_file, OutcomeSample, Provenance, SimConfig, Status};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{file_sha256, InputInfo, OutDir};

fn load_sample(cfg: &RunConfig, out: &mut OutDir) -> Result<(OutcomeSample<f64>, InputInfo)> {
    let path = cfg.input()?;
    let sample: OutcomeSample<f64> = ingest_csv_file(path)?;
    let (rows_read, rejected) = match &sample.provenance {
        Provenance::Ingested { rows_read, rejected, .. } => (*rows_read, rejected.clone()),
        Provenance::Simulated(_) => (sample.len(), Vec::new()),
    };
    if !rejected.is_empty() {
        out.csv("rejected.csv", &["row", "reason"], rejected.iter().map(|r| (r.row, &r.reason)))?;
        eprintln!("warning: {} rows rejected, see rejected.csv", rejected.len());
    }
    let info = InputInfo {
        path: path.display().to_string(),
        sha256: file_sha256(path)?,
        rows_read,
        rejected_rows: rejected.len(),
    };
    Ok((sample, info))
}

fn sorted_bids(sample: &OutcomeSample<f64>) -> Result<Vec<f64>> {
    let w = sample.competitive_bids();
    if w.is_empty() {
        return Err(CliError::validation("input", "no competitive sales (rows with sold = 1 and atom = 0)"));
    }
    Ok(sort_sample(&w)?)
}

#[derive(Serialize)]
struct SimProvenance<'a> {
    source: &'static str,
    config: &'a SimConfig<f64>,
    rows: usize,
    csv_sha256: String,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let (sim, name) = cfg.sim_config()?;
    if name.is_empty() || Path::new(name).file_name().map(|f| f != name).unwrap_or(true) {
        return Err(CliError::validation("simulate.output", format!("`{name}` must be a plain file name")));
    }
    sim.validate()?;
    let sample = simulate(&sim)?;
    let mut out = OutDir::create(cfg.out_dir())?;
    let path = out.path(name);
    write_csv_file(&sample, &path)?;
    out.record(name);
    let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or("outcomes");
    let prov = SimProvenance { source: "simulated", config: &sim, rows: sample.len(), csv_sha256: file_sha256(&path)? };
    out.json(&format!("{stem}.provenance.json"), &prov)?;
    out.finish("simulate", cfg, None)?;
    println!("wrote {} rows to {}", sample.len(), path.display());
    Ok(())
}

fn write_jumps(out: &mut OutDir, set: &JumpSet<f64>) -> Result<()> {
    out.csv(
        "jumps.csv",
        &["index", "location", "size", "raw_size", "edge"],
        set.jumps.iter().map(|j| (j.index, j.location, j.size, j.raw_size, j.edge)),
    )?;
    out.csv(
        "density.csv",
        &["b", "g", "segment"],
        set.density.iter().map(|d: &DensityPoint<f64>| (d.b, d.g, d.segment)),
    )
}

pub fn cmd_detect(cfg: &RunConfig) -> Result<()> {
    let mut out = OutDir::create(cfg.out_dir())?;
    let (sample, info) = load_sample(cfg, &mut out)?;
    let set = detect_jumps(&sorted_bids(&sample)?, &cfg.detection)?;
    write_jumps(&mut out, &set)?;
    out.finish("detect", cfg, Some(&info))?;
    let locs: Vec<String> = set.jumps.iter().map(|j| format!("{:.6}", j.location)).collect();
    println!("{} jumps: {}", set.jumps.len(), locs.join(" "));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WeightRow {
    pub n: usize,
    pub p: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HillSummary {
    pub n_lo: usize,
    pub sample_size: usize,
    pub m_range: (usize, usize),
    pub agrees_with_config: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompetitionReport {
    pub estimate: CompetitionEstimate<f64>,
    pub weights: Vec<WeightRow>,
    pub jumps: Vec<Jump<f64>>,
    pub critical_constant: f64,
    pub theta_bound: Option<ThetaBound<f64>>,
    pub hill: Option<HillSummary>,
    pub passed: bool,
    pub failed_checks: Vec<String>,
    pub warnings: Vec<String>,
}

fn failed_checks(d: &CompetitionDiagnostics<f64>) -> Vec<String> {
    let mut out = Vec::new();
    if !d.positive_jumps {
        out.push("positive_jumps".into());
    }
    if !d.value_above_top_bid {
        out.push("value_above_top_bid".into());
    }
    if !d.weights_in_unit_interval {
        out.push("weights_in_unit_interval".into());
    }
    if !d.upper_value.holds {
        out.push(format!("upper_value ({} vs {})", d.upper_value.lhs, d.upper_value.rhs));
    }
    for (i, w) in d.weight_bounds.iter().enumerate().filter(|(_, w)| !w.holds) {
        out.push(format!("weight_bounds[{i}] ({} vs {})", w.lhs, w.rhs));
    }
    if let Some(s) = d.sample_below_value.filter(|s| !s.holds) {
        out.push(format!("sample_below_value (max bid {} above value bound {})", s.lhs, s.rhs));
    }
    out
}

#[derive(Serialize)]
struct RecoveryTrace<'a> {
    n_lo: usize,
    n_hi: usize,
    theta: f64,
    iterations: usize,
    stalled: bool,
    alpha_floor: f64,
    alpha_seq: &'a [f64],
    beta_seq: &'a [f64],
    top_cdf: &'a [(f64, f64)],
}

fn write_recovery(out: &mut OutDir, r: &RecoveredValue<f64>) -> Result<()> {
    let mut header = vec!["alpha".to_string(), "value".to_string()];
    header.extend((r.n_lo..=r.n_hi).map(|n| format!("bid_n{n}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..r.alpha.len()).map(|j| {
        let mut row = vec![r.alpha[j], r.value[j]];
        row.extend(r.bids.iter().map(|b| b[j]));
        row
    });
    out.csv("value_quantile.csv", &header, rows)?;
    out.json(
        "recovery_trace.json",
        &RecoveryTrace {
            n_lo: r.n_lo,
            n_hi: r.n_hi,
            theta: r.theta,
            iterations: r.iterations,
            stalled: r.stalled,
            alpha_floor: r.alpha_floor(),
            alpha_seq: &r.alpha_seq,
            beta_seq: &r.beta_seq,
            top_cdf: &r.top_cdf,
        },
    )
}

fn hill_summary(h: &HillEstimate<f64>, n_lo: usize) -> HillSummary {
    let first = h.trace.first().map_or(0, |t| t.0);
    let last = h.trace.last().map_or(0, |t| t.0);
    HillSummary { n_lo: h.n_lo, sample_size: h.sample_size, m_range: (first, last), agrees_with_config: h.n_lo == n_lo }
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<()> {
    let mut out = OutDir::create(cfg.out_dir())?;
    let (sample, info) = load_sample(cfg, &mut out)?;
    let mut warnings = Vec::new();
    let hill = match hill_n_lower(&sample, &cfg.hill) {
        Ok(h) => Some(h),
        Err(e) => {
            warnings.push(format!("hill: {e}"));
            None
        }
    };
    let trace = hill.as_ref().map(|h| h.trace.clone()).unwrap_or_default();
    out.csv("hill_trace.csv", &["m", "n_tilde"], trace)?;
    let n_lo = cfg.estimate.n_lo;
    if let Some(h) = hill.as_ref().filter(|h| h.n_lo != n_lo) {
        warnings.push(format!("tail index suggests n_lo = {} but estimate.n_lo = {n_lo} is used", h.n_lo));
    }

    let run = empirical_pipeline(&sample, &cfg.pipeline())?;
    write_jumps(&mut out, &run.jumps)?;
    let est = run.estimate;
    let theta_bound = crra_lower_bound(&est.locations, &est.sizes, est.n_lo).ok();
    if let Some(b) = theta_bound.as_ref().filter(|b| b.lower > est.theta) {
        warnings.push(format!("risk-aversion bound {} exceeds theta = {}", b.lower, est.theta));
    }
    let failed = failed_checks(&est.diagnostics);
    let report = CompetitionReport {
        weights: (est.n_lo..=est.n_hi).map(|n| WeightRow { n, p: est.p(n) }).collect(),
        jumps: run.jumps.jumps.clone(),
        critical_constant: run.jumps.critical_constant,
        theta_bound,
        hill: hill.as_ref().map(|h| hill_summary(h, n_lo)),
        passed: est.diagnostics.passed,
        failed_checks: failed.clone(),
        warnings,
        estimate: est,
    };
    out.json("competition.json", &report)?;
    if let Some(r) = &run.recovered {
        write_recovery(&mut out, r)?;
    }
    out.finish("estimate", cfg, Some(&info))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.passed {
        return Err(CliError::Diagnostics(failed.join("; ")));
    }
    let ps: Vec<String> = report.weights.iter().map(|w| format!("p{}={:.4}", w.n, w.p)).collect();
    println!("v_hi={:.6} {}", report.estimate.v_hi, ps.join(" "));
    Ok(())
}

pub fn cmd_recover(cfg: &RunConfig, competition: Option<&Path>) -> Result<()> {
    let mut out = OutDir::create(cfg.out_dir())?;
    let (sample, info) = load_sample(cfg, &mut out)?;
    let recovered = match competition {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let report: CompetitionReport = serde_json::from_str(&text)
                .map_err(|e| CliError::validation("competition", format!("{}: {e}", path.display())))?;
            let est = report.estimate;
            let failed = failed_checks(&est.diagnostics);
            if !failed.is_empty() {
                return Err(CliError::Diagnostics(format!("{}: {}", path.display(), failed.join("; "))));
            }
            let law = EmpiricalWinningBid::from_sorted(&sorted_bids(&sample)?, cfg.estimate.quantile_points)?;
            iterate_recovery(&law, &est, &cfg.recovery)?
        }
        None => {
            let run = empirical_pipeline(&sample, &cfg.pipeline())?;
            match run.recovered {
                Some(r) => r,
                None => return Err(CliError::Diagnostics(failed_checks(&run.estimate.diagnostics).join("; "))),
            }
        }
    };
    write_recovery(&mut out, &recovered)?;
    out.finish("recover", cfg, Some(&info))?;
    println!(
        "{} iterations, alpha floor {:.4}{}",
        recovered.iterations,
        recovered.alpha_floor(),
        if recovered.stalled { " (stalled)" } else { "" }
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReserveKnownAt {
    z: Option<f64>,
    reserve: Option<f64>,
    /// From the not-sold and atom frequencies.
    atoms: Option<AtomId<f64>>,
    /// From the binomial form of the detected competition weights.
    binomial: Option<ReserveKnownId<f64>>,
    notes: Vec<String>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "route", rename_all = "snake_case")]
enum Identification {
    None { reason: String },
    ReserveKnownN { points: Vec<ReserveKnownAt> },
    ReserveUnknownN { result: InstrumentId<f64> },
    EntryKnownN { result: EntryId<f64> },
    EntryUnknownN { system: GammaSystem<f64>, result: EntryId<f64> },
}

#[derive(Debug, Serialize)]
struct EndogenousReport {
    report: DiscriminationReport,
    regime: Option<InfoRegime>,
    identification: Identification,
    warnings: Vec<String>,
}

fn instrument_slices(sample: &OutcomeSample<f64>) -> Vec<Option<f64>> {
    let zs = sample.instrument_values();
    if zs.is_empty() {
        vec![None]
    } else {
        zs.into_iter().map(Some).collect()
    }
}

fn reserve_price(sample: &OutcomeSample<f64>, z: Option<f64>) -> Option<f64> {
    let at = sample.records.iter().filter(|r| z.is_none() || r.z == z);
    at.clone()
        .find_map(|r| match r.status {
            Status::SoldAtAtom(p) => Some(p),
            _ => None,
        })
        .or_else(|| at.filter_map(|r| r.price()).reduce(f64::min))
}

fn identify(sample: &OutcomeSample<f64>, report: &DiscriminationReport, cfg: &RunConfig) -> Result<Identification> {
    let en = &cfg.endogenous;
    let regime = regime_of(report);
    let zs = instrument_slices(sample);
    let outcomes =
        || zs.iter().map(|&z| InstrumentedOutcome::from_sample(sample, z)).collect::<fpa_core::Result<Vec<_>>>();
    Ok(match (report.entry_verdict, regime) {
        (_, None) | (EntryVerdict::Inconclusive, _) => {
            Identification::None { reason: "the discrimination tests are inconclusive".into() }
        }
        (EntryVerdict::ReservePrice, Some(InfoRegime::UnknownN)) => Identification::ReserveUnknownN {
            result: identify_reserve_unknown_n_instrument(&outcomes()?, en.gamma_tail_fraction, en.levels)?,
        },
        (EntryVerdict::ReservePrice, Some(InfoRegime::KnownN)) => {
            let pipeline =
                PipelineConfig { detection: en.discrimination.detection, n_lo: 2, theta: 1.0, ..cfg.pipeline() };
            let points = zs
                .iter()
                .map(|&z| {
                    let mut notes = Vec::new();
                    let outcome = InstrumentedOutcome::from_sample(sample, z)?;
                    let atoms = identify_reserve_unknown_n_atoms(outcome.p_not_sold, outcome.p_atom)
                        .map_err(|e| notes.push(format!("atoms: {e}")))
                        .ok();
                    let reserve = reserve_price(sample, z);
                    let sub = z.map_or_else(|| sample.clone(), |z| sample.at_instrument(z));
                    let binomial = empirical_pipeline(&sub, &pipeline)
                        .and_then(|run| {
                            identify_reserve_known_n(
                                &run.estimate,
                                reserve.unwrap_or(f64::NAN),
                                run.recovered.as_ref(),
                                en.binomial_tolerance,
                            )
                        })
                        .map_err(|e| notes.push(format!("binomial: {e}")))
                        .ok();
                    Ok(ReserveKnownAt { z, reserve, atoms, binomial, notes })
                })
                .collect::<fpa_core::Result<Vec<_>>>()?;
            if points.iter().all(|p| p.atoms.is_none() && p.binomial.is_none()) {
                let notes: Vec<String> = points.iter().flat_map(|p| p.notes.iter().cloned()).collect();
                return Err(CliError::Diagnostics(notes.join("; ")));
            }
            Identification::ReserveKnownN { points }
        }
        (EntryVerdict::EntryCost, Some(InfoRegime::UnknownN)) => {
            let (system, points) = entry_points_unknown_n(&outcomes()?, en.gamma_tail_fraction, en.levels)?;
            let result = identify_entry(&points, system.n_potential, en.entry_grid)?;
            Identification::EntryUnknownN { system, result }
        }
        (EntryVerdict::EntryCost, Some(InfoRegime::KnownN)) => {
            let (nbar, points) =
                entry_points_known_n(&outcomes()?, &en.discrimination.detection, &cfg.recovery, en.binomial_tolerance)?;
            Identification::EntryKnownN { result: identify_entry(&points, nbar, en.entry_grid)? }
        }
    })
}

pub fn cmd_diagnose(cfg: &RunConfig) -> Result<()> {
    let mut out = OutDir::create(cfg.out_dir())?;
    let (sample, info) = load_sample(cfg, &mut out)?;
    let report = discriminate(&sample, &cfg.endogenous.discrimination);
    let mut warnings = report.warnings.clone();
    let identification = identify(&sample, &report, cfg).unwrap_or_else(|e| {
        warnings.push(format!("identification failed: {e}"));
        Identification::None { reason: e.to_string() }
    });
    let entry = match &identification {
        Identification::EntryKnownN { result } | Identification::EntryUnknownN { result, .. } => Some(result),
        _ => None,
    };
    if let Some(entry) = entry {
        out.csv(
            "cost_curve.csv",
            &["z", "s", "cost", "differenced"],
            entry.points.iter().map(|p| (p.z, p.s, p.cost, p.differenced)),
        )?;
        warnings.extend(entry.warnings.iter().cloned());
    }
    let doc = EndogenousReport { regime: regime_of(&report), report, identification, warnings };
    out.json("endogenous.json", &doc)?;
    out.finish("diagnose", cfg, Some(&info))?;
    println!("information: {:?}, participation: {:?}", doc.report.info_verdict, doc.report.entry_verdict);
    for w in &doc.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}
