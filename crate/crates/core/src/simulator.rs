//! Synthetic scanner traces with ground-truth labels.
//!
//! Each scanner draws from its own ChaCha stream (seed, scanner index), so
//! traces do not depend on generation order. Scanners are BGP-aware: they
//! only probe prefixes announced at visit time, never during dark periods,
//! and not before `reaction_delay` has passed since an announcement.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::addrclass::AddressSelection;
use crate::error::{Error, Result};
use crate::model::{
    Address6, Micros, Prefix6, ProbePacket, Proto, TcpFlags, MICROS_PER_HOUR, MICROS_PER_SEC,
};
use crate::netsel::NetSelLabel;
use crate::schedule::{AnnouncementSchedule, Window};
use crate::temporal::TemporalKind;

const MINUTE: Micros = 60 * MICROS_PER_SEC;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    Fixed128,
    /// A fresh random IID inside the home /64 for every session.
    RotateIn64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemporalSpec {
    OneOff,
    Periodic {
        period_secs: i64,
        /// Uniform start-time jitter as a fraction of the period, applied per visit.
        #[serde(default)]
        jitter: f64,
    },
    Intermittent {
        #[serde(default)]
        sessions: Option<usize>,
    },
}

impl TemporalSpec {
    pub fn kind(&self) -> TemporalKind {
        match self {
            TemporalSpec::OneOff => TemporalKind::OneOff,
            TemporalSpec::Periodic { .. } => TemporalKind::Periodic,
            TemporalSpec::Intermittent { .. } => TemporalKind::Intermittent,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleChoice {
    /// The announced prefix with the lowest address.
    #[default]
    Lowest,
    /// The upper half of the most recent split.
    Newest,
    /// A random announced prefix, redrawn each cycle.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetselSpec {
    SinglePrefix {
        #[serde(default)]
        choice: SingleChoice,
    },
    /// One session per visit covering every announced prefix.
    SizeIndependent,
    /// One session per visit on a prefix picked by smooth weighted
    /// round-robin with weights proportional to prefix size, reset each cycle.
    SizeDependent,
}

impl NetselSpec {
    pub fn label(&self) -> NetSelLabel {
        match self {
            NetselSpec::SinglePrefix { .. } => NetSelLabel::SinglePrefix,
            NetselSpec::SizeIndependent => NetSelLabel::SizeIndependent,
            NetselSpec::SizeDependent => NetSelLabel::SizeDependent,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddrselSpec {
    /// `::1, ::2, ...` in each target prefix, prefixes in ascending order.
    LowByteIteration,
    /// `::1` of consecutive /64 subnets, prefixes in ascending order.
    SequentialTraversal,
    /// Uniform addresses inside the target prefixes.
    Random,
    /// A shuffled blend of address types; too short for randomness testing.
    Mixed,
}

impl AddrselSpec {
    pub fn label(&self) -> AddressSelection {
        match self {
            AddrselSpec::LowByteIteration | AddrselSpec::SequentialTraversal => {
                AddressSelection::Structured
            }
            AddrselSpec::Random => AddressSelection::Random,
            AddrselSpec::Mixed => AddressSelection::Unknown,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtoMix {
    pub icmp6: f64,
    pub tcp: f64,
    pub udp: f64,
}

impl Default for ProtoMix {
    fn default() -> Self {
        ProtoMix {
            icmp6: 1.0,
            tcp: 0.0,
            udp: 0.0,
        }
    }
}

impl ProtoMix {
    fn weights(&self) -> [(Proto, f64); 3] {
        [
            (Proto::Icmp6, self.icmp6),
            (Proto::Tcp, self.tcp),
            (Proto::Udp, self.udp),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayloadSpec {
    /// Hex-encoded payload bytes.
    pub template: String,
    /// Offset of a 4-byte big-endian counter incremented per packet.
    #[serde(default)]
    pub counter_offset: Option<usize>,
    #[serde(default)]
    pub tool: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScannerSpec {
    pub id: String,
    pub source_mode: SourceMode,
    pub home: Address6,
    pub temporal: TemporalSpec,
    pub netsel: NetselSpec,
    pub addrsel: AddrselSpec,
    #[serde(default)]
    pub proto_mix: ProtoMix,
    /// Destination ports for TCP and UDP, used round-robin.
    #[serde(default)]
    pub ports: Vec<u16>,
    #[serde(default)]
    pub payload: Option<PayloadSpec>,
    /// Packets per session.
    pub rate: usize,
    /// Telescope ids to visit; empty means the scheduled telescope only.
    #[serde(default)]
    pub telescopes: Vec<String>,
    #[serde(default, with = "opt_ts")]
    pub active_from: Option<Micros>,
    #[serde(default, with = "opt_ts")]
    pub active_until: Option<Micros>,
}

mod opt_ts {
    use super::Micros;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Micros>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(t) => s.serialize_str(&crate::timefmt::to_rfc3339(*t)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Micros>, D::Error> {
        #[derive(Deserialize)]
        struct W(#[serde(with = "crate::timefmt::flexible")] Micros);
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

impl ScannerSpec {
    pub fn validate(&self, telescopes: &SimTelescopes) -> Result<()> {
        let bad = |why: String| Error::Invalid(format!("scanner {}: {why}", self.id));
        if self.rate < 1 {
            return Err(bad("rate must be at least 1".into()));
        }
        let w = self.proto_mix.weights();
        if w.iter().any(|(_, x)| *x < 0.0) || (w.iter().map(|(_, x)| x).sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(bad("protocol weights must be non-negative and sum to 1".into()));
        }
        if (self.proto_mix.tcp > 0.0 || self.proto_mix.udp > 0.0) && self.ports.is_empty() {
            return Err(bad("TCP/UDP traffic needs ports".into()));
        }
        if let TemporalSpec::Periodic { period_secs, jitter } = self.temporal {
            if period_secs <= 0 || !(0.0..0.5).contains(&jitter) {
                return Err(bad("periodic needs a positive period and jitter in [0, 0.5)".into()));
            }
        }
        if let Some(p) = &self.payload {
            let bytes = hex::decode(&p.template).map_err(|e| bad(format!("payload: {e}")))?;
            if p.counter_offset.is_some_and(|o| o + 4 > bytes.len()) {
                return Err(bad("payload counter outside template".into()));
            }
        }
        for t in self.visited(telescopes) {
            if telescopes.prefix(t).is_none() {
                return Err(bad(format!("unknown telescope `{t}`")));
            }
        }
        let home = Prefix6::truncating(self.home, 64);
        for (_, p) in telescopes.all() {
            if p.overlaps(&home) {
                return Err(bad("home lies inside a telescope".into()));
            }
        }
        Ok(())
    }

    fn visited<'a>(&'a self, t: &'a SimTelescopes) -> Vec<&'a str> {
        if self.telescopes.is_empty() {
            vec![t.scheduled.as_str()]
        } else {
            self.telescopes.iter().map(String::as_str).collect()
        }
    }
}

/// The scheduled telescope follows the announcement schedule; static ones
/// announce a fixed prefix for the whole run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTelescopes {
    pub scheduled: String,
    pub base: Prefix6,
    #[serde(default)]
    pub fixed: BTreeMap<String, Prefix6>,
}

impl SimTelescopes {
    pub fn single(id: &str, schedule: &AnnouncementSchedule) -> Self {
        SimTelescopes {
            scheduled: id.to_string(),
            base: schedule.base,
            fixed: BTreeMap::new(),
        }
    }

    pub fn prefix(&self, id: &str) -> Option<Prefix6> {
        if id == self.scheduled {
            Some(self.base)
        } else {
            self.fixed.get(id).copied()
        }
    }

    fn all(&self) -> impl Iterator<Item = (&str, Prefix6)> {
        std::iter::once((self.scheduled.as_str(), self.base))
            .chain(self.fixed.iter().map(|(k, v)| (k.as_str(), *v)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub reaction_delay: Micros,
    pub min_session_minutes: i64,
    pub max_session_minutes: i64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            reaction_delay: 30 * MINUTE,
            min_session_minutes: 1,
            max_session_minutes: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scanner: String,
    pub source_mode: SourceMode,
    /// Home /64, the key the validation pipeline aggregates on.
    pub home64: Prefix6,
    pub temporal: TemporalKind,
    pub period_secs: Option<i64>,
    pub netsel: NetSelLabel,
    pub addrsel: AddressSelection,
    pub tool: Option<String>,
    pub sessions: usize,
    pub packets: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SimOutput {
    /// Sorted by timestamp; ties keep scanner order.
    pub packets: Vec<ProbePacket>,
    pub truth: Vec<GroundTruth>,
}

/// A planned visit: start, session length and the cycle it falls in.
#[derive(Clone, Copy, Debug)]
struct Visit {
    start: Micros,
    len: Micros,
    cycle: usize,
}

struct Ctx<'a> {
    schedule: &'a AnnouncementSchedule,
    cfg: &'a SimConfig,
    span: Window,
}

impl Ctx<'_> {
    /// Cycle of a visit on the scheduled telescope if the whole session fits
    /// inside one announcement window, past the reaction delay.
    fn scheduled_cycle(&self, start: Micros, len: Micros) -> Option<usize> {
        let info = self.schedule.cycle_at(start)?;
        if info.dark {
            return None;
        }
        let w = match self.schedule.cycle(info.index) {
            Some(c) => c.window,
            None => self.schedule.baseline,
        };
        (start >= w.start + self.cfg.reaction_delay && start + len < w.end).then_some(info.index)
    }

    fn draw_len(&self, rng: &mut ChaCha8Rng) -> Micros {
        rng.random_range(self.cfg.min_session_minutes..=self.cfg.max_session_minutes) * MINUTE
    }
}

fn seeded(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Largest count of pairwise start differences lying within 3 h of one another.
fn max_near_differences(starts: &[Micros]) -> usize {
    let mut diffs = Vec::new();
    for (i, a) in starts.iter().enumerate() {
        for b in &starts[i + 1..] {
            diffs.push(b - a);
        }
    }
    diffs.sort_unstable();
    let tol = 3 * MICROS_PER_HOUR;
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..diffs.len() {
        while diffs[hi] - diffs[lo] > tol {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}

fn plan_visits(
    spec: &ScannerSpec,
    scheduled: bool,
    ctx: &Ctx<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Visit>> {
    let from = spec.active_from.unwrap_or(ctx.span.start).max(ctx.span.start);
    let until = spec.active_until.unwrap_or(ctx.span.end).min(ctx.span.end);
    if from >= until {
        return Err(Error::Invalid(format!("scanner {}: empty activity window", spec.id)));
    }
    let check = |start: Micros, len: Micros| -> Option<Visit> {
        if start < from || start + len >= until {
            return None;
        }
        let cycle = if scheduled {
            ctx.scheduled_cycle(start, len)?
        } else {
            ctx.schedule.cycle_at(start).map_or(0, |c| c.index)
        };
        Some(Visit { start, len, cycle })
    };
    let n_cycles = ctx.schedule.cycles.len();
    match spec.temporal {
        TemporalSpec::OneOff => {
            // Prefer cycles with prefixes of several sizes.
            let first = if scheduled { n_cycles.min(2) } else { 0 };
            for _ in 0..10_000 {
                let len = ctx.draw_len(rng);
                let c = rng.random_range(first..=n_cycles);
                let w = match ctx.schedule.cycle(c) {
                    Some(cy) => cy.window,
                    None => ctx.schedule.baseline,
                };
                let lo = w.start.max(from);
                let hi = w.end.min(until);
                if lo >= hi {
                    continue;
                }
                if let Some(v) = check(rng.random_range(lo..hi), len) {
                    return Ok(vec![v]);
                }
            }
            Err(Error::Invalid(format!("scanner {}: no room for a visit", spec.id)))
        }
        TemporalSpec::Periodic { period_secs, jitter } => {
            let period = period_secs * MICROS_PER_SEC;
            let phase = rng.random_range(0..period);
            let mut out = Vec::new();
            let mut k = 0i64;
            loop {
                let nominal = from + phase + k * period;
                if nominal >= until {
                    break;
                }
                let j = if jitter > 0.0 {
                    (rng.random_range(-jitter..=jitter) * period as f64) as Micros
                } else {
                    0
                };
                let len = ctx.draw_len(rng);
                if let Some(v) = check(nominal + j, len) {
                    out.push(v);
                }
                k += 1;
            }
            Ok(out)
        }
        TemporalSpec::Intermittent { sessions } => {
            let (lo_gap, hi_gap) = ((2 * MICROS_PER_HOUR) as f64, (200 * MICROS_PER_HOUR) as f64);
            for _ in 0..10_000 {
                let n = sessions.unwrap_or_else(|| rng.random_range(4..=10));
                let mut starts = vec![rng.random_range(from..until)];
                for _ in 1..n {
                    let g = (lo_gap.ln() + rng.random::<f64>() * (hi_gap.ln() - lo_gap.ln())).exp();
                    starts.push(starts.last().unwrap() + g as Micros);
                }
                let visits: Vec<Visit> = starts
                    .iter()
                    .filter_map(|&s| check(s, ctx.draw_len(rng)))
                    .collect();
                if visits.len() != n {
                    continue;
                }
                let kept: Vec<Micros> = visits.iter().map(|v| v.start).collect();
                if max_near_differences(&kept) >= 2.max(n / 4) {
                    continue;
                }
                if scheduled && needs_multi_size_cycle(spec) && !visits.iter().any(|v| v.cycle >= 2) {
                    continue;
                }
                return Ok(visits);
            }
            Err(Error::Invalid(format!("scanner {}: cannot place intermittent visits", spec.id)))
        }
    }
}

fn needs_multi_size_cycle(spec: &ScannerSpec) -> bool {
    !matches!(spec.netsel, NetselSpec::SinglePrefix { .. })
}

/// Per-cycle state for prefix choice.
struct NetselState {
    cycle: Option<usize>,
    random_pick: Option<Prefix6>,
    credit: Vec<i128>,
}

fn target_prefixes(
    spec: &ScannerSpec,
    schedule: &AnnouncementSchedule,
    cycle: usize,
    st: &mut NetselState,
    rng: &mut ChaCha8Rng,
) -> Vec<Prefix6> {
    let announced = schedule.announced(cycle).expect("cycle exists");
    if st.cycle != Some(cycle) {
        st.cycle = Some(cycle);
        st.random_pick = None;
        st.credit = vec![0; announced.len()];
    }
    match spec.netsel {
        NetselSpec::SizeIndependent => announced.to_vec(),
        NetselSpec::SinglePrefix { choice } => vec![match choice {
            SingleChoice::Lowest => announced[0],
            SingleChoice::Newest => schedule.cycle(cycle).map_or(schedule.base, |c| c.new_pair[1]),
            SingleChoice::Random => *st
                .random_pick
                .get_or_insert_with(|| announced[rng.random_range(0..announced.len())]),
        }],
        NetselSpec::SizeDependent => {
            let longest = announced.iter().map(|p| p.len()).max().unwrap();
            let weights: Vec<i128> = announced.iter().map(|p| 1i128 << (longest - p.len())).collect();
            let total: i128 = weights.iter().sum();
            for (c, w) in st.credit.iter_mut().zip(&weights) {
                *c += w;
            }
            let mut best = 0;
            for i in 1..st.credit.len() {
                if st.credit[i] > st.credit[best] {
                    best = i;
                }
            }
            st.credit[best] -= total;
            vec![announced[best]]
        }
    }
}

fn random_in(p: Prefix6, rng: &mut ChaCha8Rng) -> Address6 {
    let host = if p.len() == 0 { u128::MAX } else { !crate::model::mask(p.len()) };
    Address6(p.base().0 | (rng.random::<u128>() & host))
}

fn session_targets(
    kind: AddrselSpec,
    prefixes: &[Prefix6],
    rate: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Address6> {
    let mut sorted = prefixes.to_vec();
    sorted.sort();
    let k = sorted.len();
    let share = |i: usize| rate / k + usize::from(i < rate % k);
    match kind {
        AddrselSpec::LowByteIteration => sorted
            .iter()
            .enumerate()
            .flat_map(|(i, p)| (1..=share(i) as u128).map(move |j| Address6(p.base().0 | j)))
            .collect(),
        AddrselSpec::SequentialTraversal => sorted
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                let step = if p.len() <= 64 { 1u128 << 64 } else { 1 };
                (0..share(i) as u128).map(move |j| Address6(p.base().0 + j * step + 1))
            })
            .collect(),
        AddrselSpec::Random => (0..rate).map(|i| random_in(sorted[i % k], rng)).collect(),
        AddrselSpec::Mixed => {
            let mut out: Vec<Address6> = (0..rate)
                .map(|i| {
                    let net = random_in(sorted[i % k], rng).truncate(64).0;
                    let b: u64 = rng.random();
                    let iid: u64 = match i % 5 {
                        0 => rng.random_range(1..=0xff),
                        1 => (b & 0xffff_ff00_0000_0000) | 0x0000_00ff_fe00_0000 | (b & 0xff_ffff),
                        2 => 0xc000_0200 | (b & 0xff),
                        3 => 0x1111_1111_1111_1111 * rng.random_range(1..=0xfu64),
                        _ => b,
                    };
                    Address6(net | iid as u128)
                })
                .collect();
            out.shuffle(rng);
            out
        }
    }
}

struct Emitter {
    proto_credit: [f64; 3],
    port_next: BTreeMap<Proto, usize>,
    counter: u32,
    payload: Option<(Vec<u8>, Option<usize>)>,
}

impl Emitter {
    fn new(spec: &ScannerSpec) -> Self {
        Emitter {
            proto_credit: [0.0; 3],
            port_next: BTreeMap::new(),
            counter: 0,
            payload: spec
                .payload
                .as_ref()
                .map(|p| (hex::decode(&p.template).expect("validated"), p.counter_offset)),
        }
    }

    /// Smooth weighted round-robin over the protocol mix, reset per session.
    fn next_proto(&mut self, mix: &ProtoMix) -> Proto {
        let w = mix.weights();
        let mut best = 0;
        for i in 0..3 {
            self.proto_credit[i] += w[i].1;
            if self.proto_credit[i] > self.proto_credit[best] + 1e-12 {
                best = i;
            }
        }
        self.proto_credit[best] -= 1.0;
        w[best].0
    }

    fn next_payload(&mut self) -> Vec<u8> {
        let Some((tpl, off)) = &self.payload else {
            return Vec::new();
        };
        let mut p = tpl.clone();
        if let Some(o) = off {
            p[*o..o + 4].copy_from_slice(&self.counter.to_be_bytes());
        }
        self.counter = self.counter.wrapping_add(1);
        p
    }
}

fn emit_session(
    spec: &ScannerSpec,
    src: Address6,
    telescope: &str,
    start: Micros,
    len: Micros,
    targets: &[Address6],
    em: &mut Emitter,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<ProbePacket>,
) {
    em.proto_credit = [0.0; 3];
    let n = targets.len() as i64;
    for (i, &dst) in targets.iter().enumerate() {
        let ts = start + len * i as i64 / n.max(1);
        let proto = em.next_proto(&spec.proto_mix);
        let dport = match proto {
            Proto::Icmp6 => None,
            _ => {
                let next = em.port_next.entry(proto).or_default();
                let port = spec.ports[*next % spec.ports.len()];
                *next += 1;
                Some(port)
            }
        };
        out.push(ProbePacket {
            ts,
            src,
            dst,
            proto,
            sport: dport.map(|_| rng.random_range(32768..=60999)),
            dport,
            icmp_type: (proto == Proto::Icmp6).then_some(128),
            tcp_flags: (proto == Proto::Tcp).then(TcpFlags::syn),
            payload: em.next_payload(),
            telescope: telescope.to_string(),
        });
    }
}

fn simulate_one(
    index: usize,
    spec: &ScannerSpec,
    telescopes: &SimTelescopes,
    ctx: &Ctx<'_>,
    seed: u64,
) -> Result<(Vec<ProbePacket>, GroundTruth)> {
    let mut rng = seeded(seed, index);
    let visited = spec.visited(telescopes);
    let scheduled = visited.contains(&telescopes.scheduled.as_str());
    let visits = plan_visits(spec, scheduled, ctx, &mut rng)?;
    let mut st = NetselState {
        cycle: None,
        random_pick: None,
        credit: Vec::new(),
    };
    let mut em = Emitter::new(spec);
    let mut packets = Vec::new();
    let mut sessions = 0;
    let home64 = Prefix6::truncating(spec.home, 64);
    for v in &visits {
        let src = match spec.source_mode {
            SourceMode::Fixed128 => spec.home,
            SourceMode::RotateIn64 => random_in(home64, &mut rng),
        };
        // Sessions at several telescopes run back to back within the visit.
        let mut t = v.start;
        for tel in &visited {
            let prefixes = if *tel == telescopes.scheduled {
                target_prefixes(spec, ctx.schedule, v.cycle, &mut st, &mut rng)
            } else {
                vec![telescopes.prefix(tel).expect("validated")]
            };
            let targets = session_targets(spec.addrsel, &prefixes, spec.rate, &mut rng);
            emit_session(spec, src, tel, t, v.len, &targets, &mut em, &mut rng, &mut packets);
            sessions += 1;
            t += v.len + MINUTE;
        }
    }
    let truth = GroundTruth {
        scanner: spec.id.clone(),
        source_mode: spec.source_mode,
        home64,
        temporal: if visits.len() == 1 {
            TemporalKind::OneOff
        } else {
            spec.temporal.kind()
        },
        period_secs: match spec.temporal {
            TemporalSpec::Periodic { period_secs, .. } => Some(period_secs),
            _ => None,
        },
        netsel: if scheduled {
            spec.netsel.label()
        } else {
            NetSelLabel::SinglePrefix
        },
        addrsel: spec.addrsel.label(),
        tool: spec.payload.as_ref().and_then(|p| p.tool.clone()),
        sessions,
        packets: packets.len(),
    };
    Ok((packets, truth))
}

pub fn simulate(
    specs: &[ScannerSpec],
    schedule: &AnnouncementSchedule,
    telescopes: &SimTelescopes,
    seed: u64,
    cfg: &SimConfig,
) -> Result<SimOutput> {
    let mut ids = BTreeSet::new();
    let mut homes = BTreeSet::new();
    for s in specs {
        if !ids.insert(s.id.as_str()) {
            return Err(Error::Invalid(format!("duplicate scanner id `{}`", s.id)));
        }
        if !homes.insert(s.home.truncate(64)) {
            return Err(Error::Invalid(format!("scanner {}: home /64 already used", s.id)));
        }
        s.validate(telescopes)?;
    }
    let ctx = Ctx {
        schedule,
        cfg,
        span: Window::new(schedule.baseline.start, schedule.end()),
    };
    let mut out = SimOutput::default();
    for (i, spec) in specs.iter().enumerate() {
        let (p, t) = simulate_one(i, spec, telescopes, &ctx, seed)?;
        out.packets.extend(p);
        out.truth.push(t);
    }
    out.packets.sort_by_key(|p| p.ts);
    Ok(out)
}

/// A population cycling through every feasible combination of the three
/// axes. Size-dependent scanners are always periodic: with few visits a
/// size-proportional split is indistinguishable from chance.
pub fn population(n: usize, seed: u64) -> Vec<ScannerSpec> {
    let temporal = [TemporalKind::OneOff, TemporalKind::Periodic, TemporalKind::Intermittent];
    let netsel = [
        NetselSpec::SinglePrefix { choice: SingleChoice::Lowest },
        NetselSpec::SizeIndependent,
        NetselSpec::SizeDependent,
    ];
    let addrsel = [
        AddrselSpec::LowByteIteration,
        AddrselSpec::SequentialTraversal,
        AddrselSpec::Random,
        AddrselSpec::Mixed,
    ];
    let mut combos = Vec::new();
    for t in temporal {
        for ns in netsel {
            if ns == NetselSpec::SizeDependent && t != TemporalKind::Periodic {
                continue;
            }
            for a in addrsel {
                combos.push((t, ns, a));
            }
        }
    }
    let periods_h = [4i64, 6, 8, 12, 24];
    let choices = [SingleChoice::Lowest, SingleChoice::Newest, SingleChoice::Random];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_eed0_f5ca_77e5);
    (0..n)
        .map(|i| {
            let (t, mut ns, a) = combos[i % combos.len()];
            if let NetselSpec::SinglePrefix { .. } = ns {
                ns = NetselSpec::SinglePrefix {
                    choice: choices[(i / combos.len()) % choices.len()],
                };
            }
            let temporal = match t {
                TemporalKind::OneOff => TemporalSpec::OneOff,
                TemporalKind::Periodic => {
                    let p = periods_h[rng.random_range(0..periods_h.len())];
                    // At most 5 % of the period and under half an hour.
                    let cap = 0.05f64.min(0.45 / p as f64);
                    TemporalSpec::Periodic {
                        period_secs: p * 3600,
                        jitter: rng.random_range(0.0..=cap),
                    }
                }
                TemporalKind::Intermittent => TemporalSpec::Intermittent { sessions: None },
            };
            let rate = match a {
                AddrselSpec::Random => rng.random_range(150..=200),
                AddrselSpec::Mixed => rng.random_range(30..=80),
                _ => rng.random_range(8..=20),
            };
            let home = Address6((0x2001_0db9u128 << 96) | ((i as u128 + 1) << 64));
            let (proto_mix, ports) = match i % 3 {
                0 => (ProtoMix::default(), vec![]),
                1 => (ProtoMix { icmp6: 0.5, tcp: 0.5, udp: 0.0 }, vec![80, 443]),
                _ => (ProtoMix { icmp6: 0.6, tcp: 0.3, udp: 0.1 }, vec![443, 53, 33434]),
            };
            let payload = (i % 5 == 0).then(|| {
                let tool = ["tool-a", "tool-b", "tool-c"][(i / 5) % 3];
                let mut tpl = format!("{tool}-probe-").into_bytes();
                tpl.resize(28, b'.');
                tpl.extend([0u8; 4]);
                PayloadSpec {
                    template: hex::encode(tpl),
                    counter_offset: Some(28),
                    tool: Some(tool.to_string()),
                }
            });
            ScannerSpec {
                id: format!("s{i:04}"),
                source_mode: if i % 2 == 0 { SourceMode::Fixed128 } else { SourceMode::RotateIn64 },
                home: Address6(home.0 | 0x10),
                temporal,
                netsel: ns,
                addrsel: a,
                proto_mix,
                ports,
                payload,
                rate,
                telescopes: vec![],
                active_from: None,
                active_until: None,
            }
        })
        .collect()
}

pub fn write_truth_csv<W: Write>(w: W, truth: &[GroundTruth]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "scanner", "source_mode", "home64", "temporal", "period_secs", "netsel", "addrsel", "tool",
        "sessions", "packets",
    ])?;
    for t in truth {
        wr.write_record([
            t.scanner.clone(),
            match t.source_mode {
                SourceMode::Fixed128 => "fixed_128".into(),
                SourceMode::RotateIn64 => "rotate_in_64".into(),
            },
            t.home64.to_string(),
            t.temporal.to_string(),
            t.period_secs.map_or_else(String::new, |p| p.to_string()),
            t.netsel.to_string(),
            t.addrsel.as_str().to_string(),
            t.tool.clone().unwrap_or_default(),
            t.sessions.to_string(),
            t.packets.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{generate_schedule, ScheduleParams};

    fn schedule(cycles: usize) -> AnnouncementSchedule {
        let params = ScheduleParams {
            cycle_days: 7,
            dark_days: 1,
            baseline_days: 7,
        };
        generate_schedule("2001:db8::/32".parse().unwrap(), cycles, 0, params).unwrap()
    }

    fn spec(temporal: TemporalSpec, netsel: NetselSpec, addrsel: AddrselSpec) -> ScannerSpec {
        ScannerSpec {
            id: "x".into(),
            source_mode: SourceMode::Fixed128,
            home: "2001:db9::1".parse().unwrap(),
            temporal,
            netsel,
            addrsel,
            proto_mix: ProtoMix::default(),
            ports: vec![],
            payload: None,
            rate: 5,
            telescopes: vec![],
            active_from: None,
            active_until: None,
        }
    }

    fn run(specs: &[ScannerSpec], s: &AnnouncementSchedule) -> SimOutput {
        simulate(specs, s, &SimTelescopes::single("T1", s), 1, &SimConfig::default()).unwrap()
    }

    #[test]
    fn bgp_aware() {
        let s = schedule(3);
        let sp = spec(
            TemporalSpec::Periodic { period_secs: 86400, jitter: 0.0 },
            NetselSpec::SizeIndependent,
            AddrselSpec::LowByteIteration,
        );
        let out = run(&[sp], &s);
        assert!(!out.packets.is_empty());
        for p in &out.packets {
            let c = s.cycle_at(p.ts).unwrap();
            assert!(!c.dark);
            assert!(c.announced.iter().any(|a| a.contains(p.dst)));
            assert!((1..=5).contains(&p.dst.iid()), "{}", p.dst);
        }
        // Every announced prefix is hit on each post-baseline visit.
        for c in &s.cycles {
            let hit: BTreeSet<Prefix6> = out
                .packets
                .iter()
                .filter(|p| c.window.contains(p.ts))
                .filter_map(|p| c.announced.iter().find(|a| a.contains(p.dst)).copied())
                .collect();
            assert_eq!(hit.len(), c.announced.len());
        }
    }

    #[test]
    fn timestamps_increase_per_source() {
        let s = schedule(3);
        let sp = spec(
            TemporalSpec::Periodic { period_secs: 4 * 3600, jitter: 0.05 },
            NetselSpec::SizeDependent,
            AddrselSpec::Random,
        );
        let out = run(&[ScannerSpec { rate: 150, ..sp }], &s);
        assert!(out.packets.windows(2).all(|w| w[0].ts < w[1].ts));
    }

    #[test]
    fn size_dependent_counts_follow_size() {
        let s = schedule(4);
        let sp = spec(
            TemporalSpec::Periodic { period_secs: 4 * 3600, jitter: 0.0 },
            NetselSpec::SizeDependent,
            AddrselSpec::LowByteIteration,
        );
        let out = run(&[sp], &s);
        let c = &s.cycles[3];
        let mut counts: BTreeMap<Prefix6, usize> = BTreeMap::new();
        for p in out.packets.iter().filter(|p| c.window.contains(p.ts) && p.dst.iid() == 1) {
            *counts.entry(s.most_specific_announced(4, p.dst).unwrap()).or_default() += 1;
        }
        let by_len: Vec<(u8, usize)> = counts.iter().map(|(p, &n)| (p.len(), n)).collect();
        for w in by_len.windows(2) {
            if w[0].0 < w[1].0 {
                assert!(w[0].1 >= w[1].1, "{by_len:?}");
            }
        }
    }

    #[test]
    fn deterministic_and_rejects_duplicates() {
        let s = schedule(2);
        let specs = population(30, 3);
        let a = run(&specs, &s);
        let b = run(&specs, &s);
        assert_eq!(a.packets, b.packets);
        assert_eq!(a.truth, b.truth);
        let dup = vec![specs[0].clone(), specs[0].clone()];
        assert!(simulate(&dup, &s, &SimTelescopes::single("T1", &s), 1, &SimConfig::default()).is_err());
    }

    #[test]
    fn one_off_is_one_session() {
        let s = schedule(3);
        let sp = spec(TemporalSpec::OneOff, NetselSpec::SinglePrefix { choice: SingleChoice::Newest }, AddrselSpec::Random);
        let out = run(&[ScannerSpec { rate: 150, ..sp }], &s);
        assert_eq!(out.truth[0].sessions, 1);
        assert_eq!(out.packets.len(), 150);
    }

    #[test]
    fn protocol_plan_is_exact() {
        let s = schedule(2);
        let mut sp = spec(
            TemporalSpec::Intermittent { sessions: Some(5) },
            NetselSpec::SinglePrefix { choice: SingleChoice::Lowest },
            AddrselSpec::LowByteIteration,
        );
        sp.rate = 10;
        sp.proto_mix = ProtoMix { icmp6: 0.6, tcp: 0.3, udp: 0.1 };
        sp.ports = vec![80, 443];
        let out = run(&[sp], &s);
        let count = |pr: Proto| out.packets.iter().filter(|p| p.proto == pr).count();
        assert_eq!((count(Proto::Icmp6), count(Proto::Tcp), count(Proto::Udp)), (30, 15, 5));
    }

    #[test]
    fn near_difference_counter() {
        let h = MICROS_PER_HOUR;
        assert_eq!(max_near_differences(&[0, 10 * h, 20 * h]), 2);
        assert_eq!(max_near_differences(&[0, h, 38 * h, 41 * h, 131 * h, 142 * h]), 3);
    }
}
