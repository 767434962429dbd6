//! Aggregate tables and plot-ready series over sessions, labels and schedules.
//!
//! Typed builders return row structs; [`ReportBundle`] renders them into CSV
//! tables that each carry the config hash, plus a JSON manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::addrclass::{classify_iid, AddressClassConfig, AddressType};
use crate::error::{Error, Result};
use crate::ingest::EnrichmentMaps;
use crate::model::{AggLevel, Address6, Micros, Prefix6, ProbePacket, Proto, SourceKey, MICROS_PER_SEC};
use crate::netsel::{classify_netsel, CycleLabel, NetselConfig};
use crate::schedule::{AnnouncementSchedule, Window};
use crate::sessionizer::ScanSession;

pub const MICROS_PER_DAY: Micros = 86_400 * MICROS_PER_SEC;
pub const TRACEROUTE_PORTS: std::ops::RangeInclusive<u16> = 33434..=33523;

/// Percentage with two decimals; `0.00` for an empty denominator.
pub fn percent(num: u64, den: u64) -> String {
    if den == 0 {
        return "0.00".into();
    }
    format!("{:.2}", 100.0 * num as f64 / den as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub packets: u64,
    pub sessions: u64,
    pub sources: u64,
}

pub fn totals(sessions: &[ScanSession]) -> Totals {
    Totals {
        packets: sessions.iter().map(|s| s.packet_count as u64).sum(),
        sessions: sessions.len() as u64,
        sources: sessions.iter().map(|s| s.source).collect::<BTreeSet<_>>().len() as u64,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProtocolRow {
    pub proto: Proto,
    pub packets: u64,
    pub sessions: u64,
    pub sources: u64,
}

#[derive(Default)]
struct ProtoAcc {
    packets: BTreeMap<Proto, u64>,
    sessions: BTreeMap<Proto, u64>,
    sources: BTreeMap<Proto, BTreeSet<SourceKey>>,
}

impl ProtoAcc {
    fn merge(mut self, o: ProtoAcc) -> ProtoAcc {
        for (p, n) in o.packets {
            *self.packets.entry(p).or_default() += n;
        }
        for (p, n) in o.sessions {
            *self.sessions.entry(p).or_default() += n;
        }
        for (p, s) in o.sources {
            self.sources.entry(p).or_default().extend(s);
        }
        self
    }
}

/// Packets, sessions and sources per protocol, in protocol order. Sources are
/// counted at the sessions' aggregation level.
pub fn protocol_table(sessions: &[ScanSession]) -> Vec<ProtocolRow> {
    let acc = sessions
        .par_iter()
        .fold(ProtoAcc::default, |mut a, s| {
            for (&p, &n) in &s.proto_packets {
                *a.packets.entry(p).or_default() += n as u64;
                *a.sessions.entry(p).or_default() += 1;
                a.sources.entry(p).or_default().insert(s.source);
            }
            a
        })
        .reduce(ProtoAcc::default, ProtoAcc::merge);
    acc.packets
        .iter()
        .map(|(&proto, &packets)| ProtocolRow {
            proto,
            packets,
            sessions: acc.sessions[&proto],
            sources: acc.sources[&proto].len() as u64,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TargetTypeRow {
    pub address_type: AddressType,
    pub packets: u64,
    pub sessions: u64,
    pub sources: u64,
}

/// Target address types by packets, sessions and sources, most packets first.
pub fn target_type_table(sessions: &[ScanSession], cfg: &AddressClassConfig) -> Vec<TargetTypeRow> {
    let per_session: Vec<(SourceKey, BTreeMap<AddressType, u64>)> = sessions
        .par_iter()
        .map(|s| {
            let mut h: BTreeMap<AddressType, u64> = BTreeMap::new();
            for &t in &s.targets {
                *h.entry(classify_iid(t, cfg)).or_default() += 1;
            }
            (s.source, h)
        })
        .collect();
    let mut packets: BTreeMap<AddressType, u64> = BTreeMap::new();
    let mut sess: BTreeMap<AddressType, u64> = BTreeMap::new();
    let mut sources: BTreeMap<AddressType, BTreeSet<SourceKey>> = BTreeMap::new();
    for (src, h) in per_session {
        for (t, n) in h {
            *packets.entry(t).or_default() += n;
            *sess.entry(t).or_default() += 1;
            sources.entry(t).or_default().insert(src);
        }
    }
    let mut rows: Vec<TargetTypeRow> = packets
        .into_iter()
        .map(|(t, p)| TargetTypeRow {
            address_type: t,
            packets: p,
            sessions: sess[&t],
            sources: sources[&t].len() as u64,
        })
        .collect();
    rows.sort_by(|a, b| b.packets.cmp(&a.packets).then(a.address_type.cmp(&b.address_type)));
    rows
}

/// A destination port, with the traceroute range collapsed into one entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PortKey {
    Port(u16),
    Traceroute,
}

impl PortKey {
    pub fn of(proto: Proto, port: u16) -> Self {
        if proto == Proto::Udp && TRACEROUTE_PORTS.contains(&port) {
            PortKey::Traceroute
        } else {
            PortKey::Port(port)
        }
    }
}

impl fmt::Display for PortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortKey::Port(p) => write!(f, "{p}"),
            PortKey::Traceroute => f.write_str("traceroute"),
        }
    }
}

impl Serialize for PortKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PortRow {
    pub proto: Proto,
    pub rank: usize,
    pub port: PortKey,
    pub sessions: u64,
    /// Sessions using `proto` at all; the share denominator.
    pub proto_sessions: u64,
}

/// Top `k` destination ports per port-bearing protocol. Each port counts once
/// per session. Ties rank by port number, with the traceroute row last.
pub fn top_ports(sessions: &[ScanSession], k: usize) -> Result<Vec<PortRow>> {
    if let Some(s) = sessions.iter().find(|s| s.source.level != AggLevel::Net64) {
        return Err(Error::Invalid(format!("top ports need /64 sessions, got source {}", s.source)));
    }
    let mut counts: BTreeMap<Proto, BTreeMap<PortKey, u64>> = BTreeMap::new();
    let mut totals: BTreeMap<Proto, u64> = BTreeMap::new();
    for s in sessions {
        for p in &s.protocols {
            *totals.entry(*p).or_default() += 1;
        }
        for (&proto, ports) in &s.dports {
            let keys: BTreeSet<PortKey> = ports.iter().map(|&p| PortKey::of(proto, p)).collect();
            let c = counts.entry(proto).or_default();
            for key in keys {
                *c.entry(key).or_default() += 1;
            }
        }
    }
    let mut rows = Vec::new();
    for (proto, c) in counts {
        let mut ranked: Vec<(PortKey, u64)> = c.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        for (i, (port, n)) in ranked.into_iter().take(k).enumerate() {
            rows.push(PortRow {
                proto,
                rank: i + 1,
                port,
                sessions: n,
                proto_sessions: totals[&proto],
            });
        }
    }
    Ok(rows)
}

/// Packets per (telescope, /128 sender).
pub type PacketCounts = BTreeMap<(String, Address6), u64>;

pub fn packet_counts_from_packets(packets: &[ProbePacket]) -> PacketCounts {
    let mut out = PacketCounts::new();
    for p in packets {
        *out.entry((p.telescope.clone(), p.src)).or_default() += 1;
    }
    out
}

/// Exact only when every session has a single sender; errors otherwise.
pub fn packet_counts_from_sessions(sessions: &[ScanSession]) -> Result<PacketCounts> {
    let mut out = PacketCounts::new();
    for s in sessions {
        let mut it = s.senders.iter();
        match (it.next(), it.next()) {
            (Some(&a), None) => *out.entry((s.telescope.clone(), a)).or_default() += s.packet_count as u64,
            _ => {
                return Err(Error::Invalid(format!(
                    "session {} has {} senders; per-address packet counts need /128 sessions",
                    s.id,
                    s.senders.len()
                )))
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HeavyHitter {
    pub telescope: String,
    pub source: Address6,
    pub packets: u64,
    pub telescope_packets: u64,
}

/// Sources whose packet share at a telescope strictly exceeds `share`.
/// The comparison runs on integers with `share` resolved to parts per million.
pub fn heavy_hitters(counts: &PacketCounts, share: f64) -> Vec<HeavyHitter> {
    let ppm = (share * 1e6).round() as u128;
    let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
    for ((tel, _), n) in counts {
        *totals.entry(tel.as_str()).or_default() += n;
    }
    counts
        .iter()
        .filter(|((tel, _), &n)| n as u128 * 1_000_000 > ppm * totals[tel.as_str()] as u128)
        .map(|((tel, src), &n)| HeavyHitter {
            telescope: tel.clone(),
            source: *src,
            packets: n,
            telescope_packets: totals[tel.as_str()],
        })
        .collect()
}

/// Day boundaries `start + d * 1 day` covering `window`.
fn day_count(window: Window) -> usize {
    if window.end <= window.start {
        return 0;
    }
    ((window.end - window.start + MICROS_PER_DAY - 1) / MICROS_PER_DAY) as usize
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CumulativePoint {
    pub day: usize,
    pub prefix: Prefix6,
    pub sessions: u64,
}

/// Cumulative sessions per most-specific announced prefix at the end of each
/// day of the schedule. A session counts once for every distinct announced
/// prefix its targets fall in, using the cycle at its start; sessions outside
/// the schedule or on dark days are not attributed. Rows cover every prefix
/// the schedule ever announces, sorted by day then prefix.
pub fn per_prefix_cumulative(sessions: &[ScanSession], schedule: &AnnouncementSchedule) -> Vec<CumulativePoint> {
    let window = Window::new(schedule.baseline.start, schedule.end());
    let days = day_count(window);
    let mut prefixes: BTreeSet<Prefix6> = BTreeSet::new();
    prefixes.insert(schedule.base);
    for c in &schedule.cycles {
        prefixes.extend(c.announced.iter().copied());
    }
    let mut daily: BTreeMap<Prefix6, Vec<u64>> = prefixes.iter().map(|&p| (p, vec![0; days])).collect();
    for s in sessions {
        let Some(info) = schedule.cycle_at(s.start) else { continue };
        if info.dark {
            continue;
        }
        let day = ((s.start - window.start) / MICROS_PER_DAY) as usize;
        let hit: BTreeSet<Prefix6> = s
            .targets
            .iter()
            .filter_map(|&t| schedule.most_specific_announced(info.index, t))
            .collect();
        for p in hit {
            daily.get_mut(&p).expect("announced prefix")[day] += 1;
        }
    }
    let mut out = Vec::with_capacity(days * daily.len());
    let mut running: BTreeMap<Prefix6, u64> = BTreeMap::new();
    for day in 0..days {
        for (p, v) in &daily {
            let r = running.entry(*p).or_default();
            *r += v[day];
            out.push(CumulativePoint {
                day,
                prefix: *p,
                sessions: *r,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DiscoveryPoint {
    pub day: usize,
    pub new_prefixes: u64,
}

/// Per day of `window`, the number of sender prefixes of length `len` first
/// seen that day. First sightings outside the window are not counted.
pub fn new_prefix_discovery(sessions: &[ScanSession], window: Window, len: u8) -> Vec<DiscoveryPoint> {
    let mut first: BTreeMap<Prefix6, Micros> = BTreeMap::new();
    for s in sessions {
        for &a in &s.senders {
            let p = Prefix6::truncating(a, len);
            let e = first.entry(p).or_insert(s.start);
            *e = (*e).min(s.start);
        }
    }
    let mut counts = vec![0u64; day_count(window)];
    for ts in first.into_values() {
        if window.contains(ts) {
            counts[((ts - window.start) / MICROS_PER_DAY) as usize] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(day, new_prefixes)| DiscoveryPoint { day, new_prefixes })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IntersectionKey {
    Addr128,
    Asn,
}

impl std::str::FromStr for IntersectionKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "addr128" => Ok(IntersectionKey::Addr128),
            "asn" => Ok(IntersectionKey::Asn),
            other => Err(Error::Parse(format!("unknown intersection key `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IntersectionRow {
    /// Telescope ids joined with `&`; a single id for per-telescope totals.
    pub combination: String,
    /// `exclusive` for UpSet bars, `total` for per-telescope set sizes.
    pub kind: &'static str,
    pub count: u64,
}

/// Per-telescope sets of /128 senders, or of their origin ASNs.
pub fn telescope_sets(
    sessions: &[ScanSession],
    key: IntersectionKey,
    enrichment: Option<&EnrichmentMaps>,
) -> Result<BTreeMap<String, BTreeSet<u128>>> {
    let mut out: BTreeMap<String, BTreeSet<u128>> = BTreeMap::new();
    for s in sessions {
        let set = out.entry(s.telescope.clone()).or_default();
        for &a in &s.senders {
            match key {
                IntersectionKey::Addr128 => {
                    set.insert(a.0);
                }
                IntersectionKey::Asn => {
                    let maps = enrichment.ok_or(Error::Config("asn intersections need an ASN map".into()))?;
                    if let Some(&asn) = maps.asn.get(a) {
                        set.insert(asn as u128);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// UpSet-style exclusive combination counts plus per-telescope totals.
pub fn source_intersections(sets: &BTreeMap<String, BTreeSet<u128>>) -> Result<Vec<IntersectionRow>> {
    if sets.len() < 2 {
        return Err(Error::Invalid(format!("intersections need at least 2 telescopes, got {}", sets.len())));
    }
    let mut membership: BTreeMap<u128, Vec<&str>> = BTreeMap::new();
    for (tel, set) in sets {
        for &x in set {
            membership.entry(x).or_default().push(tel);
        }
    }
    let mut combos: BTreeMap<String, u64> = BTreeMap::new();
    for tels in membership.values() {
        *combos.entry(tels.join("&")).or_default() += 1;
    }
    let mut rows: Vec<IntersectionRow> = sets
        .iter()
        .map(|(t, s)| IntersectionRow {
            combination: t.clone(),
            kind: "total",
            count: s.len() as u64,
        })
        .collect();
    rows.extend(combos.into_iter().map(|(combination, count)| IntersectionRow {
        combination,
        kind: "exclusive",
        count,
    }));
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TelescopeRow {
    pub telescope: String,
    pub packets: u64,
    pub sessions: u64,
    pub sources128: u64,
    pub sources64: u64,
    pub asns: Option<u64>,
    pub destinations: u64,
    pub icmp6_sources: u64,
    pub tcp_sources: u64,
    pub udp_sources: u64,
}

/// Volume and source counts per telescope. Per-protocol source counts are
/// over /128 senders and are exact only for /128 sessions.
pub fn telescope_comparison(sessions: &[ScanSession], enrichment: Option<&EnrichmentMaps>) -> Vec<TelescopeRow> {
    #[derive(Default)]
    struct Acc {
        packets: u64,
        sessions: u64,
        senders: BTreeSet<Address6>,
        destinations: BTreeSet<Address6>,
        proto: BTreeMap<Proto, BTreeSet<Address6>>,
    }
    let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
    for s in sessions {
        let a = acc.entry(&s.telescope).or_default();
        a.packets += s.packet_count as u64;
        a.sessions += 1;
        a.senders.extend(s.senders.iter().copied());
        a.destinations.extend(s.targets.iter().copied());
        for p in &s.protocols {
            a.proto.entry(*p).or_default().extend(s.senders.iter().copied());
        }
    }
    acc.into_iter()
        .map(|(tel, a)| {
            let nets: BTreeSet<Address6> = a.senders.iter().map(|s| s.truncate(64)).collect();
            let asns = enrichment.map(|m| {
                a.senders
                    .iter()
                    .filter_map(|s| m.asn.get(*s))
                    .collect::<BTreeSet<_>>()
                    .len() as u64
            });
            let n = |p: Proto| a.proto.get(&p).map_or(0, |s| s.len() as u64);
            TelescopeRow {
                telescope: tel.to_string(),
                packets: a.packets,
                sessions: a.sessions,
                sources128: a.senders.len() as u64,
                sources64: nets.len() as u64,
                asns,
                destinations: a.destinations.len() as u64,
                icmp6_sources: n(Proto::Icmp6),
                tcp_sources: n(Proto::Tcp),
                udp_sources: n(Proto::Udp),
            }
        })
        .collect()
}

/// Source-level labels as read from classification CSVs. Absent axes are `None`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelRecord {
    pub temporal: Option<String>,
    pub netsel: Option<String>,
    pub addrsel: Option<String>,
}

/// Merges label CSVs with a `source` column and any of `temporal`, `netsel`,
/// `addrsel`. Later files overwrite earlier values for the same cell.
pub fn read_labels<R: std::io::Read>(readers: Vec<R>) -> Result<BTreeMap<SourceKey, LabelRecord>> {
    let mut out: BTreeMap<SourceKey, LabelRecord> = BTreeMap::new();
    for r in readers {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let src = col("source").ok_or_else(|| Error::Parse("label file lacks a `source` column".into()))?;
        let (t, n, a) = (col("temporal"), col("netsel"), col("addrsel"));
        for rec in rdr.records() {
            let rec = rec?;
            let key: SourceKey = rec.get(src).unwrap_or_default().parse()?;
            let e = out.entry(key).or_default();
            let get = |c: Option<usize>| c.and_then(|i| rec.get(i)).filter(|v| !v.is_empty()).map(str::to_string);
            if let Some(v) = get(t) {
                e.temporal = Some(v);
            }
            if let Some(v) = get(n) {
                e.netsel = Some(v);
            }
            if let Some(v) = get(a) {
                e.addrsel = Some(v);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TaxonomyRow {
    pub axis: &'static str,
    pub label: String,
    pub scanners: u64,
    pub sessions: u64,
    /// Labeled scanners on this axis; the share denominator.
    pub axis_scanners: u64,
    pub axis_sessions: u64,
}

/// Scanner and session counts per label on each axis. Sessions are matched to
/// labels by source key.
pub fn taxonomy_table(labels: &BTreeMap<SourceKey, LabelRecord>, sessions: &[ScanSession]) -> Vec<TaxonomyRow> {
    let mut per_source: BTreeMap<SourceKey, u64> = BTreeMap::new();
    for s in sessions {
        *per_source.entry(s.source).or_default() += 1;
    }
    let mut rows = Vec::new();
    let axes: [(&'static str, fn(&LabelRecord) -> Option<&String>); 3] = [
        ("temporal", |l| l.temporal.as_ref()),
        ("netsel", |l| l.netsel.as_ref()),
        ("addrsel", |l| l.addrsel.as_ref()),
    ];
    for (axis, get) in axes {
        let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
        for (k, l) in labels {
            if let Some(v) = get(l) {
                let e = counts.entry(v).or_default();
                e.0 += 1;
                e.1 += per_source.get(k).copied().unwrap_or(0);
            }
        }
        let axis_scanners = counts.values().map(|c| c.0).sum();
        let axis_sessions = counts.values().map(|c| c.1).sum();
        rows.extend(counts.into_iter().map(|(label, (scanners, sessions))| TaxonomyRow {
            axis,
            label: label.to_string(),
            scanners,
            sessions,
            axis_scanners,
            axis_sessions,
        }));
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NetselRow {
    pub cycle: usize,
    pub label: CycleLabel,
    pub sources: u64,
}

/// Per-cycle label counts from the network-selection classifier.
pub fn netsel_table(sessions: &[ScanSession], schedule: &AnnouncementSchedule, cfg: &NetselConfig) -> Vec<NetselRow> {
    let mut counts: BTreeMap<(usize, CycleLabel), u64> = BTreeMap::new();
    for src in classify_netsel(sessions, schedule, cfg).into_values() {
        for (cycle, label) in src.cycles {
            *counts.entry((cycle, label)).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|((cycle, label), sources)| NetselRow { cycle, label, sources })
        .collect()
}

/// A rendered CSV table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// CSV with a leading `config_hash` column on every row.
    pub fn to_csv(&self, config_hash: &str) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["config_hash"];
        head.extend(&self.header);
        w.write_record(&head)?;
        for r in &self.rows {
            w.write_record(std::iter::once(config_hash).chain(r.iter().map(String::as_str)))?;
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
    }
}

fn s<T: ToString>(v: T) -> String {
    v.to_string()
}

/// Session and source shares are against all sessions and sources, so they
/// may sum past 100.
pub fn render_protocols(rows: &[ProtocolRow], t: &Totals) -> Table {
    Table {
        name: "protocols",
        header: vec!["proto", "packets", "packets_pct", "sessions", "sessions_pct", "sources", "sources_pct"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    s(r.proto),
                    s(r.packets),
                    percent(r.packets, t.packets),
                    s(r.sessions),
                    percent(r.sessions, t.sessions),
                    s(r.sources),
                    percent(r.sources, t.sources),
                ]
            })
            .collect(),
    }
}

pub fn render_target_types(rows: &[TargetTypeRow], t: &Totals) -> Table {
    Table {
        name: "target_types",
        header: vec!["address_type", "packets", "packets_pct", "sessions", "sessions_pct", "sources", "sources_pct"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    s(r.address_type),
                    s(r.packets),
                    percent(r.packets, t.packets),
                    s(r.sessions),
                    percent(r.sessions, t.sessions),
                    s(r.sources),
                    percent(r.sources, t.sources),
                ]
            })
            .collect(),
    }
}

pub fn render_top_ports(rows: &[PortRow]) -> Table {
    Table {
        name: "top_ports",
        header: vec!["proto", "rank", "port", "sessions", "sessions_pct"],
        rows: rows
            .iter()
            .map(|r| vec![s(r.proto), s(r.rank), s(r.port), s(r.sessions), percent(r.sessions, r.proto_sessions)])
            .collect(),
    }
}

pub fn render_telescopes(rows: &[TelescopeRow]) -> Table {
    Table {
        name: "telescopes",
        header: vec![
            "telescope",
            "packets",
            "sessions",
            "sources128",
            "sources64",
            "asns",
            "destinations",
            "icmp6_sources",
            "tcp_sources",
            "udp_sources",
        ],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.telescope.clone(),
                    s(r.packets),
                    s(r.sessions),
                    s(r.sources128),
                    s(r.sources64),
                    r.asns.map_or_else(String::new, s),
                    s(r.destinations),
                    s(r.icmp6_sources),
                    s(r.tcp_sources),
                    s(r.udp_sources),
                ]
            })
            .collect(),
    }
}

pub fn render_heavy_hitters(rows: &[HeavyHitter]) -> Table {
    Table {
        name: "heavy_hitters",
        header: vec!["telescope", "source", "packets", "packets_pct"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.telescope.clone(),
                    s(r.source),
                    s(r.packets),
                    percent(r.packets, r.telescope_packets),
                ]
            })
            .collect(),
    }
}

pub fn render_taxonomy(rows: &[TaxonomyRow]) -> Table {
    Table {
        name: "taxonomy",
        header: vec!["axis", "label", "scanners", "scanners_pct", "sessions", "sessions_pct"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    s(r.axis),
                    r.label.clone(),
                    s(r.scanners),
                    percent(r.scanners, r.axis_scanners),
                    s(r.sessions),
                    percent(r.sessions, r.axis_sessions),
                ]
            })
            .collect(),
    }
}

pub fn render_netsel(rows: &[NetselRow]) -> Table {
    let mut per_cycle: BTreeMap<usize, u64> = BTreeMap::new();
    for r in rows {
        *per_cycle.entry(r.cycle).or_default() += r.sources;
    }
    Table {
        name: "netsel_cycles",
        header: vec!["cycle", "label", "sources", "sources_pct"],
        rows: rows
            .iter()
            .map(|r| vec![s(r.cycle), s(r.label), s(r.sources), percent(r.sources, per_cycle[&r.cycle])])
            .collect(),
    }
}

pub fn render_cumulative(rows: &[CumulativePoint]) -> Table {
    Table {
        name: "per_prefix_cumulative",
        header: vec!["day", "prefix", "sessions"],
        rows: rows.iter().map(|r| vec![s(r.day), s(r.prefix), s(r.sessions)]).collect(),
    }
}

pub fn render_discovery(rows: &[DiscoveryPoint]) -> Table {
    Table {
        name: "new_prefix_discovery",
        header: vec!["day", "new_prefixes"],
        rows: rows.iter().map(|r| vec![s(r.day), s(r.new_prefixes)]).collect(),
    }
}

pub fn render_intersections(name: &'static str, rows: &[IntersectionRow]) -> Table {
    Table {
        name,
        header: vec!["combination", "kind", "count"],
        rows: rows.iter().map(|r| vec![r.combination.clone(), s(r.kind), s(r.count)]).collect(),
    }
}

/// Everything the report needs. Optional inputs gate the tables that use them.
pub struct ReportInputs<'a> {
    /// Sessions at either aggregation level.
    pub sessions: &'a [ScanSession],
    /// /64 sessions for the port table, when `sessions` are /128.
    pub sessions64: Option<&'a [ScanSession]>,
    /// Packet counts for heavy hitters; derived from `sessions` when absent.
    pub packet_counts: Option<PacketCounts>,
    pub labels: Option<&'a BTreeMap<SourceKey, LabelRecord>>,
    pub schedule: Option<&'a AnnouncementSchedule>,
    pub enrichment: Option<&'a EnrichmentMaps>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportParams {
    pub heavy_hitter_share: f64,
    pub top_ports: usize,
    pub discovery_prefix_len: u8,
    pub address: AddressClassConfig,
    pub netsel: NetselConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportBundle {
    pub config_hash: String,
    pub tables: Vec<Table>,
    /// Tables not produced, with the reason.
    pub omitted: BTreeMap<&'static str, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportManifest {
    pub config_hash: String,
    pub params: ReportParams,
    pub inputs: BTreeMap<String, String>,
    pub tables: BTreeMap<String, String>,
    pub omitted: BTreeMap<String, String>,
}

pub fn build_report(inp: &ReportInputs<'_>, params: &ReportParams, config_hash: &str) -> ReportBundle {
    let mut tables = Vec::new();
    let mut omitted = BTreeMap::new();
    let sessions = inp.sessions;
    let t = totals(sessions);

    tables.push(render_protocols(&protocol_table(sessions), &t));
    tables.push(render_target_types(&target_type_table(sessions, &params.address), &t));

    let s64 = match (inp.sessions64, sessions.first().map(|s| s.source.level)) {
        (Some(s), _) => Some(s),
        (None, Some(AggLevel::Net64)) | (None, None) => Some(sessions),
        _ => None,
    };
    match s64.map(|s| top_ports(s, params.top_ports)) {
        Some(Ok(rows)) => tables.push(render_top_ports(&rows)),
        Some(Err(e)) => {
            omitted.insert("top_ports", e.to_string());
        }
        None => {
            omitted.insert("top_ports", "no /64 sessions supplied".into());
        }
    }

    tables.push(render_telescopes(&telescope_comparison(sessions, inp.enrichment)));

    let counts = match &inp.packet_counts {
        Some(c) => Ok(c.clone()),
        None => packet_counts_from_sessions(sessions),
    };
    match counts {
        Ok(c) => tables.push(render_heavy_hitters(&heavy_hitters(&c, params.heavy_hitter_share))),
        Err(e) => {
            omitted.insert("heavy_hitters", e.to_string());
        }
    }

    match inp.labels {
        Some(l) => tables.push(render_taxonomy(&taxonomy_table(l, sessions))),
        None => {
            omitted.insert("taxonomy", "no label files supplied".into());
        }
    }

    let window = match inp.schedule {
        Some(sch) => {
            tables.push(render_netsel(&netsel_table(sessions, sch, &params.netsel)));
            tables.push(render_cumulative(&per_prefix_cumulative(sessions, sch)));
            Some(Window::new(sch.baseline.start, sch.end()))
        }
        None => {
            for name in ["netsel_cycles", "per_prefix_cumulative"] {
                omitted.insert(name, "no schedule supplied".into());
            }
            crate::temporal::covering_window(sessions, MICROS_PER_DAY)
        }
    };
    match window {
        Some(w) => tables.push(render_discovery(&new_prefix_discovery(sessions, w, params.discovery_prefix_len))),
        None => {
            omitted.insert("new_prefix_discovery", "no sessions".into());
        }
    }

    for (name, key) in [("intersections_addr128", IntersectionKey::Addr128), ("intersections_asn", IntersectionKey::Asn)] {
        match telescope_sets(sessions, key, inp.enrichment).and_then(|sets| source_intersections(&sets)) {
            Ok(rows) => tables.push(render_intersections(name, &rows)),
            Err(e) => {
                omitted.insert(name, e.to_string());
            }
        }
    }

    ReportBundle {
        config_hash: config_hash.to_string(),
        tables,
        omitted,
    }
}

impl ReportBundle {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes one CSV per table and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, params: &ReportParams, inputs: BTreeMap<String, String>) -> Result<ReportManifest> {
        std::fs::create_dir_all(dir)?;
        let mut files = BTreeMap::new();
        for t in &self.tables {
            let file = format!("{}.csv", t.name);
            std::fs::write(dir.join(&file), t.to_csv(&self.config_hash)?)?;
            files.insert(t.name.to_string(), file);
        }
        let manifest = ReportManifest {
            config_hash: self.config_hash.clone(),
            params: params.clone(),
            inputs,
            tables: files,
            omitted: self.omitted.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        std::fs::write(dir.join("manifest.json"), json)?;
        Ok(manifest)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MICROS_PER_HOUR;

    fn sess(id: u64, src: &str, tel: &str, start_h: i64, proto: Proto, ports: &[u16], targets: &[&str]) -> ScanSession {
        let a: Address6 = src.parse().unwrap();
        let n = targets.len().max(1);
        ScanSession {
            id,
            source: SourceKey::new(a, AggLevel::Addr128),
            telescope: tel.into(),
            start: start_h * MICROS_PER_HOUR,
            end: start_h * MICROS_PER_HOUR,
            packet_count: n,
            distinct_targets: n,
            protocols: [proto].into(),
            proto_packets: [(proto, n)].into(),
            dports: if ports.is_empty() { BTreeMap::new() } else { [(proto, ports.iter().copied().collect())].into() },
            targets: targets.iter().map(|t| t.parse().unwrap()).collect(),
            senders: [a].into(),
            packets: Vec::new(),
        }
    }

    fn at64(mut s: ScanSession) -> ScanSession {
        s.source = SourceKey::new(s.source.value, AggLevel::Net64);
        s
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(percent(1, 3), "33.33");
        assert_eq!(percent(0, 0), "0.00");
        assert_eq!(percent(2, 2), "100.00");
    }

    #[test]
    fn icmp_only_corpus() {
        let ss = vec![sess(0, "2001:db8:1::1", "T1", 0, Proto::Icmp6, &[], &["2001:db8::1"])];
        let rows = protocol_table(&ss);
        assert_eq!(rows.len(), 1);
        let t = render_protocols(&rows, &totals(&ss));
        assert_eq!(t.rows[0][2..], ["100.00", "1", "100.00", "1", "100.00"]);
        assert!(protocol_table(&[]).is_empty());
    }

    #[test]
    fn ports_once_per_session_and_traceroute_collapse() {
        let ss = vec![
            at64(sess(0, "2001:db8:1::1", "T1", 0, Proto::Tcp, &[80, 443], &["2001:db8::1", "2001:db8::2", "2001:db8::3"])),
            at64(sess(1, "2001:db8:1::1", "T1", 5, Proto::Udp, &[33434, 33500, 53], &["2001:db8::1"])),
        ];
        let rows = top_ports(&ss, 5).unwrap();
        let tcp: Vec<_> = rows.iter().filter(|r| r.proto == Proto::Tcp).map(|r| (r.port, r.sessions)).collect();
        assert_eq!(tcp, [(PortKey::Port(80), 1), (PortKey::Port(443), 1)]);
        let udp: Vec<_> = rows.iter().filter(|r| r.proto == Proto::Udp).map(|r| (r.port, r.sessions)).collect();
        assert_eq!(udp, [(PortKey::Port(53), 1), (PortKey::Traceroute, 1)]);
        assert!(top_ports(&[sess(0, "2001:db8::1", "T1", 0, Proto::Tcp, &[80], &[])], 5).is_err());
    }

    #[test]
    fn heavy_hitter_boundary_is_strict() {
        let mut c = PacketCounts::new();
        let a: Address6 = "2001:db8::a".parse().unwrap();
        let b: Address6 = "2001:db8::b".parse().unwrap();
        c.insert(("T1".into(), a), 10);
        c.insert(("T1".into(), b), 90);
        assert!(heavy_hitters(&c, 0.10).iter().all(|h| h.source != a));
        c.insert(("T1".into(), a), 11);
        c.insert(("T1".into(), b), 89);
        assert!(heavy_hitters(&c, 0.10).iter().any(|h| h.source == a));
    }

    #[test]
    fn intersections_disjoint_and_identical() {
        let disjoint: BTreeMap<String, BTreeSet<u128>> =
            [("A".to_string(), [1, 2].into()), ("B".to_string(), [3].into())].into();
        let rows = source_intersections(&disjoint).unwrap();
        let ex: Vec<_> = rows.iter().filter(|r| r.kind == "exclusive").map(|r| (r.combination.as_str(), r.count)).collect();
        assert_eq!(ex, [("A", 2), ("B", 1)]);
        let same: BTreeMap<String, BTreeSet<u128>> =
            [("A".to_string(), [1, 2].into()), ("B".to_string(), [1, 2].into())].into();
        let rows = source_intersections(&same).unwrap();
        let ex: Vec<_> = rows.iter().filter(|r| r.kind == "exclusive").map(|r| (r.combination.as_str(), r.count)).collect();
        assert_eq!(ex, [("A&B", 2)]);
        assert!(source_intersections(&[("A".to_string(), BTreeSet::new())].into()).is_err());
    }

    #[test]
    fn discovery_spike_then_zero_and_daily_fresh() {
        let w = Window::new(0, 3 * MICROS_PER_DAY);
        let constant: Vec<_> = (0..3).map(|d| sess(d, "2001:db8:1::1", "T1", 24 * d as i64, Proto::Icmp6, &[], &[])).collect();
        let v: Vec<u64> = new_prefix_discovery(&constant, w, 48).iter().map(|p| p.new_prefixes).collect();
        assert_eq!(v, [1, 0, 0]);
        let fresh: Vec<_> = (0..3)
            .map(|d| sess(d, &format!("2001:db8:{}::1", d + 1), "T1", 24 * d as i64, Proto::Icmp6, &[], &[]))
            .collect();
        let v: Vec<u64> = new_prefix_discovery(&fresh, w, 48).iter().map(|p| p.new_prefixes).collect();
        assert_eq!(v, [1, 1, 1]);
    }

    #[test]
    fn csv_carries_config_hash() {
        let t = render_discovery(&[DiscoveryPoint { day: 0, new_prefixes: 2 }]);
        let csv = String::from_utf8(t.to_csv("abc").unwrap()).unwrap();
        assert_eq!(csv, "config_hash,day,new_prefixes\nabc,0,2\n");
    }
}
