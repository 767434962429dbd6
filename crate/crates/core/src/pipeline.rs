//! Stage wiring shared by the CLI and the closed-loop validation run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::addrclass::{classify_session_addresses, type_histogram, AddressClassConfig, AddressSelection, AddressType};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{AggLevel, Prefix6, ProbePacket, SourceKey};
use crate::netsel::{classify_netsel, NetSelLabel};
use crate::randomness::{session_randomness, BitSection, RandomnessConfig, SessionRandomness};
use crate::schedule::{generate_schedule, AnnouncementSchedule, ScheduleParams, Window};
use crate::sessionizer::{sessionize, ScanSession, SessionizerConfig};
use crate::simulator::{population, simulate, GroundTruth, SimTelescopes};
use crate::temporal::{classify_all, TemporalKind, TemporalLabel};
use crate::timefmt::parse_timestamp;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SessionAddrsel {
    pub session: u64,
    pub source: SourceKey,
    pub telescope: String,
    pub packets: usize,
    pub dominant_type: Option<AddressType>,
    /// Frequency-test verdict on the IID bits; `None` below the packet minimum.
    pub iid_random: Option<bool>,
    pub subnet_random: Option<bool>,
    pub label: AddressSelection,
}

pub fn classify_addresses(
    sessions: &[ScanSession],
    telescopes: &BTreeMap<String, Prefix6>,
    addr_cfg: &AddressClassConfig,
    rand_cfg: &RandomnessConfig,
) -> Result<Vec<SessionAddrsel>> {
    rand_cfg.validate()?;
    sessions
        .par_iter()
        .map(|s| {
            let scope = telescopes.get(&s.telescope).copied();
            let r = session_randomness(&s.targets, scope, rand_cfg)?;
            let iid_random = r.verdict(BitSection::Iid64);
            let dominant_type = type_histogram(&s.targets, addr_cfg)
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(t, _)| t);
            Ok(SessionAddrsel {
                session: s.id,
                source: s.source,
                telescope: s.telescope.clone(),
                packets: s.packet_count,
                dominant_type,
                iid_random,
                subnet_random: match &r {
                    SessionRandomness::NotApplicable => None,
                    r => r.verdict(BitSection::Subnet32),
                },
                label: classify_session_addresses(&s.targets, iid_random, addr_cfg),
            })
        })
        .collect()
}

/// Majority session label per source; ties go to the earlier label in
/// structured, random, unknown order.
pub fn source_addrsel(per_session: &[SessionAddrsel]) -> BTreeMap<SourceKey, AddressSelection> {
    let mut votes: BTreeMap<SourceKey, BTreeMap<AddressSelection, usize>> = BTreeMap::new();
    for s in per_session {
        *votes.entry(s.source).or_default().entry(s.label).or_default() += 1;
    }
    votes
        .into_iter()
        .map(|(k, v)| {
            let best = v
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(l, _)| *l)
                .expect("non-empty votes");
            (k, best)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SourceLabels {
    pub temporal: TemporalLabel,
    pub netsel: NetSelLabel,
    pub addrsel: AddressSelection,
}

/// Runs the three classifiers over one session set.
pub fn classify_sources(
    sessions: &[ScanSession],
    schedule: &AnnouncementSchedule,
    window: Window,
    cfg: &RunConfig,
) -> Result<(BTreeMap<SourceKey, SourceLabels>, Vec<SessionAddrsel>)> {
    let temporal = classify_all(sessions, &cfg.temporal(), window)?;
    let netsel = classify_netsel(sessions, schedule, &cfg.netsel());
    let per_session = classify_addresses(sessions, &cfg.telescopes, &cfg.addresses(), &cfg.randomness())?;
    let addrsel = source_addrsel(&per_session);
    let labels = temporal
        .into_iter()
        .map(|(k, t)| {
            (
                k,
                SourceLabels {
                    temporal: t,
                    netsel: netsel[&k].label,
                    addrsel: addrsel[&k],
                },
            )
        })
        .collect();
    Ok((labels, per_session))
}

pub fn schedule_from_config(cfg: &RunConfig, cycles: usize, params: ScheduleParams) -> Result<AnnouncementSchedule> {
    let t0 = parse_timestamp(&cfg.schedule.start)?;
    generate_schedule(cfg.schedule.base, cycles, t0, params)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxisScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub required: f64,
    pub pass: bool,
}

impl AxisScore {
    fn new(correct: usize, total: usize, required: f64) -> Self {
        let accuracy = if total == 0 { 1.0 } else { correct as f64 / total as f64 };
        AxisScore {
            correct,
            total,
            accuracy,
            required,
            pass: accuracy >= required,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Miss {
    pub scanner: String,
    pub axis: &'static str,
    pub expected: String,
    pub got: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scorecard {
    pub config_hash: String,
    pub seed: u64,
    pub scanners: usize,
    pub packets: usize,
    pub sessions: usize,
    pub trace_sha256: String,
    pub temporal: AxisScore,
    pub netsel: AxisScore,
    pub addrsel: AxisScore,
    pub misses: Vec<Miss>,
}

impl Scorecard {
    pub fn pass(&self) -> bool {
        self.temporal.pass && self.netsel.pass && self.addrsel.pass
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config  {}", self.config_hash);
        let _ = writeln!(s, "seed    {}", self.seed);
        let _ = writeln!(s, "trace   {} packets, {} sessions, sha256 {}", self.packets, self.sessions, self.trace_sha256);
        for (name, a) in [("temporal", &self.temporal), ("netsel", &self.netsel), ("addrsel", &self.addrsel)] {
            let _ = writeln!(
                s,
                "{name:<9}{:>4}/{:<4} {:>7.3}  (min {:.2})  {}",
                a.correct,
                a.total,
                a.accuracy,
                a.required,
                if a.pass { "PASS" } else { "FAIL" }
            );
        }
        for m in &self.misses {
            let _ = writeln!(s, "miss  {} {} expected={} got={}", m.scanner, m.axis, m.expected, m.got);
        }
        let _ = writeln!(s, "result  {}", if self.pass() { "PASS" } else { "FAIL" });
        s
    }
}

#[derive(Clone, Debug)]
pub struct ValidationRun {
    pub scorecard: Scorecard,
    pub truth: Vec<GroundTruth>,
    pub predictions: BTreeMap<SourceKey, SourceLabels>,
    pub schedule: AnnouncementSchedule,
}

impl ValidationRun {
    pub fn predictions_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["source", "temporal", "period_secs", "netsel", "addrsel"])?;
        for (k, l) in &self.predictions {
            w.write_record([
                k.to_string(),
                l.temporal.kind.to_string(),
                l.temporal
                    .period
                    .map_or_else(String::new, |p| (p / crate::model::MICROS_PER_SEC).to_string()),
                l.netsel.to_string(),
                l.addrsel.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
    }
}

struct HashWriter(Sha256);

impl std::io::Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

pub fn trace_digest(packets: &[ProbePacket]) -> Result<String> {
    let mut h = HashWriter(Sha256::new());
    crate::ingest::write_ndjson(&mut h, packets)?;
    Ok(hex::encode(h.0.finalize()))
}

/// Simulates a population, runs the full pipeline on the trace at /64
/// aggregation and scores the labels against ground truth.
pub fn validate(cfg: &RunConfig) -> Result<ValidationRun> {
    let v = &cfg.validate;
    let schedule = schedule_from_config(
        cfg,
        v.cycles,
        ScheduleParams {
            cycle_days: v.cycle_days,
            dark_days: v.dark_days,
            baseline_days: v.baseline_days,
        },
    )?;
    let tel_id = cfg
        .telescopes
        .iter()
        .find(|(_, p)| **p == schedule.base)
        .map_or("T1", |(k, _)| k.as_str());
    let telescopes = SimTelescopes::single(tel_id, &schedule);
    let specs = population(v.scanners, v.seed);
    let sim = simulate(&specs, &schedule, &telescopes, v.seed, &cfg.simulator())?;

    let sess_cfg = SessionizerConfig::new(cfg.sessions.timeout_secs * crate::model::MICROS_PER_SEC, AggLevel::Net64)?;
    let sessions = sessionize(&sim.packets, &sess_cfg);
    let window = Window::new(schedule.baseline.start, schedule.end());
    let mut run_cfg = cfg.clone();
    run_cfg.telescopes.insert(tel_id.to_string(), schedule.base);
    let (predictions, _) = classify_sources(&sessions, &schedule, window, &run_cfg)?;

    let mut misses = Vec::new();
    let (mut t_ok, mut n_ok, mut a_ok) = (0, 0, 0);
    for t in &sim.truth {
        let key = SourceKey::new(t.home64.base(), AggLevel::Net64);
        let Some(p) = predictions.get(&key) else {
            for axis in ["temporal", "netsel", "addrsel"] {
                misses.push(Miss {
                    scanner: t.scanner.clone(),
                    axis,
                    expected: String::new(),
                    got: "no sessions".into(),
                });
            }
            continue;
        };
        let mut check = |axis: &'static str, expected: String, got: String, ok: &mut usize| {
            if expected == got {
                *ok += 1;
            } else {
                misses.push(Miss {
                    scanner: t.scanner.clone(),
                    axis,
                    expected,
                    got,
                });
            }
        };
        check("temporal", t.temporal.to_string(), p.temporal.kind.to_string(), &mut t_ok);
        check("netsel", t.netsel.to_string(), p.netsel.to_string(), &mut n_ok);
        check("addrsel", t.addrsel.to_string(), p.addrsel.to_string(), &mut a_ok);
    }
    let n = sim.truth.len();
    let scorecard = Scorecard {
        config_hash: cfg.hash(),
        seed: v.seed,
        scanners: n,
        packets: sim.packets.len(),
        sessions: sessions.len(),
        trace_sha256: trace_digest(&sim.packets)?,
        temporal: AxisScore::new(t_ok, n, v.min_temporal_accuracy),
        netsel: AxisScore::new(n_ok, n, v.min_netsel_accuracy),
        addrsel: AxisScore::new(a_ok, n, v.min_addrsel_accuracy),
        misses,
    };
    Ok(ValidationRun {
        scorecard,
        truth: sim.truth,
        predictions,
        schedule,
    })
}

/// Accuracy per temporal class, for diagnostics.
pub fn temporal_breakdown(run: &ValidationRun) -> BTreeMap<TemporalKind, (usize, usize)> {
    let mut out: BTreeMap<TemporalKind, (usize, usize)> = BTreeMap::new();
    for t in &run.truth {
        let key = SourceKey::new(t.home64.base(), AggLevel::Net64);
        let e = out.entry(t.temporal).or_default();
        e.1 += 1;
        if run.predictions.get(&key).is_some_and(|p| p.temporal.kind == t.temporal) {
            e.0 += 1;
        }
    }
    out
}
