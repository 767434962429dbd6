//! Payload clustering and scan-tool labeling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rayon::prelude::*;
use regex::bytes::Regex;
use serde::Serialize;

use crate::dbscan::{dbscan, ClusteringParams};
use crate::error::{Error, Result};
use crate::model::{AggLevel, Address6, ProbePacket, SourceKey};
use crate::sessionizer::ScanSession;

/// Bytes compared by the payload distance.
pub const HORIZON: usize = 64;
pub const RANDOM_BYTES_MIN_DISTANCE: f64 = 0.45;
pub const DEFAULT_SIGNATURES: &str = include_str!("../data/signatures.tsv");

#[derive(Clone, Debug)]
pub enum Matcher {
    Substring(Vec<u8>),
    Regex(Regex),
    BytesAtOffset(Vec<u8>, usize),
    RdnsSuffix(String),
}

#[derive(Clone, Debug)]
pub struct Signature {
    pub tool: String,
    pub matcher: Matcher,
}

impl Signature {
    pub fn matches_payload(&self, payload: &[u8]) -> bool {
        match &self.matcher {
            Matcher::Substring(p) => p.is_empty() || payload.windows(p.len()).any(|w| w == &p[..]),
            Matcher::Regex(r) => r.is_match(payload),
            Matcher::BytesAtOffset(p, off) => payload.get(*off..off + p.len()) == Some(&p[..]),
            Matcher::RdnsSuffix(_) => false,
        }
    }

    pub fn matches_rdns(&self, name: &str) -> bool {
        match &self.matcher {
            Matcher::RdnsSuffix(s) => {
                let name = name.trim_end_matches('.').to_ascii_lowercase();
                name == *s || name.ends_with(&format!(".{s}"))
            }
            _ => false,
        }
    }
}

impl FromStr for Signature {
    type Err = Error;
    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |why: &str| Error::Parse(format!("signature `{line}`: {why}"));
        if fields.len() < 3 {
            return Err(bad("expected tool, kind and pattern"));
        }
        let hex_pattern = || {
            let p = fields[2];
            if p.chars().any(|c| c.is_ascii_uppercase()) {
                return Err(bad("hex pattern must be lowercase"));
            }
            hex::decode(p).map_err(|e| bad(&e.to_string()))
        };
        let matcher = match fields[1] {
            "substring" => Matcher::Substring(hex_pattern()?),
            "regex" => Matcher::Regex(Regex::new(fields[2]).map_err(|e| bad(&e.to_string()))?),
            "bytes_at_offset" => {
                let off = fields
                    .get(3)
                    .ok_or_else(|| bad("bytes_at_offset needs an offset"))?
                    .parse()
                    .map_err(|_| bad("offset is not an integer"))?;
                Matcher::BytesAtOffset(hex_pattern()?, off)
            }
            "rdns_suffix" => Matcher::RdnsSuffix(fields[2].trim_matches('.').to_ascii_lowercase()),
            k => return Err(bad(&format!("unknown kind `{k}`"))),
        };
        Ok(Signature {
            tool: fields[0].to_string(),
            matcher,
        })
    }
}

/// Parses a signature file, skipping blank lines and `#` comments.
pub fn read_signatures<R: BufRead>(r: R) -> Result<Vec<Signature>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim_end_matches(['\r', '\n']);
        if t.trim().is_empty() || t.trim_start().starts_with('#') {
            continue;
        }
        out.push(t.parse()?);
    }
    Ok(out)
}

pub fn default_signatures() -> Vec<Signature> {
    read_signatures(DEFAULT_SIGNATURES.as_bytes()).expect("bundled signatures parse")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SessionPayload {
    pub source: SourceKey,
    pub session: u64,
    pub payload: Vec<u8>,
}

/// First non-empty payload of each session that has one, in session order.
pub fn session_payloads(sessions: &[ScanSession], packets: &[ProbePacket]) -> Vec<SessionPayload> {
    sessions
        .iter()
        .filter_map(|s| {
            let p = s
                .packets
                .iter()
                .map(|&i| &packets[i].payload)
                .find(|p| !p.is_empty())?;
            Some(SessionPayload {
                source: s.source,
                session: s.id,
                payload: p.clone(),
            })
        })
        .collect()
}

/// Normalized byte Hamming distance over the first 64 bytes; each byte
/// present in only one payload counts as a mismatch.
pub fn payload_distance(a: &[u8], b: &[u8]) -> f64 {
    let a = &a[..a.len().min(HORIZON)];
    let b = &b[..b.len().min(HORIZON)];
    let common = a.len().min(b.len());
    let diff = a.iter().zip(b).filter(|(x, y)| x != y).count();
    let missing = a.len().max(b.len()) - common;
    (diff + missing) as f64 / HORIZON as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubTag {
    RandomBytes,
    AddressRotation,
    Other,
}

impl SubTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SubTag::RandomBytes => "random_bytes",
            SubTag::AddressRotation => "address_rotation",
            SubTag::Other => "other",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ClusterLabel {
    Tool(String),
    Unlabeled(SubTag),
}

impl fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterLabel::Tool(t) => f.write_str(t),
            ClusterLabel::Unlabeled(s) => write!(f, "unlabeled:{}", s.as_str()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PayloadCluster {
    pub id: usize,
    /// DBSCAN noise point kept as a singleton.
    pub noise: bool,
    pub members: Vec<(SourceKey, u64)>,
    #[serde(skip)]
    pub member_index: Vec<usize>,
    #[serde(serialize_with = "as_hex")]
    pub representative: Vec<u8>,
    pub label: Option<ClusterLabel>,
}

fn as_hex<S: serde::Serializer>(b: &[u8], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(b))
}

/// Clusters session payloads. Dense clusters come first in DBSCAN order,
/// followed by one singleton per noise point in input order.
pub fn cluster_payloads(items: &[SessionPayload], params: ClusteringParams) -> Vec<PayloadCluster> {
    let ids = dbscan(items, params, |a, b| payload_distance(&a.payload, &b.payload));
    let n_clusters = ids.iter().flatten().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    let mut noise = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        match id {
            Some(c) => groups[*c].push(i),
            None => noise.push(vec![i]),
        }
    }
    let n_dense = groups.len();
    groups.extend(noise);
    groups
        .into_par_iter()
        .enumerate()
        .map(|(id, idx)| PayloadCluster {
            id,
            noise: id >= n_dense,
            members: idx.iter().map(|&i| (items[i].source, items[i].session)).collect(),
            representative: items[medoid(items, &idx)].payload.clone(),
            member_index: idx,
            label: None,
        })
        .collect()
}

/// Member with the smallest summed distance to the others; ties go to the first.
fn medoid(items: &[SessionPayload], idx: &[usize]) -> usize {
    let mut best = (f64::INFINITY, idx[0]);
    for &i in idx {
        let s: f64 = idx
            .iter()
            .map(|&j| payload_distance(&items[i].payload, &items[j].payload))
            .sum();
        if s < best.0 {
            best = (s, i);
        }
    }
    best.1
}

fn mean_pairwise(items: &[SessionPayload], idx: &[usize]) -> Option<f64> {
    if idx.len() < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            sum += payload_distance(&items[i].payload, &items[j].payload);
            n += 1;
        }
    }
    Some(sum / n as f64)
}

fn rdns_domain(name: &str) -> Option<String> {
    let labels: Vec<&str> = name.trim_end_matches('.').split('.').filter(|l| !l.is_empty()).collect();
    (labels.len() >= 2).then(|| labels[labels.len() - 2..].join(".").to_ascii_lowercase())
}

pub fn label_cluster(
    c: &PayloadCluster,
    items: &[SessionPayload],
    signatures: &[Signature],
    rdns: &HashMap<Address6, String>,
) -> ClusterLabel {
    let names: Vec<&String> = c
        .members
        .iter()
        .filter_map(|(s, _)| rdns.get(&s.value))
        .collect();
    for sig in signatures {
        if sig.matches_payload(&c.representative) || names.iter().any(|n| sig.matches_rdns(n)) {
            return ClusterLabel::Tool(sig.tool.clone());
        }
    }
    let mut domains: BTreeMap<String, usize> = BTreeMap::new();
    for n in &names {
        if let Some(d) = rdns_domain(n) {
            *domains.entry(d).or_default() += 1;
        }
    }
    if let Some((d, k)) = domains.iter().max_by_key(|(_, &k)| k) {
        if 2 * k > c.members.len() {
            return ClusterLabel::Tool(format!("rdns:{d}"));
        }
    }
    if mean_pairwise(items, &c.member_index).is_some_and(|d| d >= RANDOM_BYTES_MIN_DISTANCE) {
        return ClusterLabel::Unlabeled(SubTag::RandomBytes);
    }
    let sources: BTreeSet<Address6> = c.members.iter().map(|(s, _)| s.value).collect();
    let nets: BTreeSet<Address6> = sources.iter().map(|a| a.truncate(64)).collect();
    if sources.len() >= 2 && nets.len() == 1 {
        return ClusterLabel::Unlabeled(SubTag::AddressRotation);
    }
    ClusterLabel::Unlabeled(SubTag::Other)
}

/// Sessionizes at /128, clusters payloads and labels every cluster.
pub fn fingerprint(
    sessions: &[ScanSession],
    packets: &[ProbePacket],
    params: ClusteringParams,
    signatures: &[Signature],
    rdns: &HashMap<Address6, String>,
) -> Result<(Vec<SessionPayload>, Vec<PayloadCluster>)> {
    if sessions.iter().any(|s| s.source.level != AggLevel::Addr128) {
        return Err(Error::Invalid("fingerprinting needs /128 sessions".into()));
    }
    let items = session_payloads(sessions, packets);
    let mut clusters = cluster_payloads(&items, params);
    for c in clusters.iter_mut() {
        c.label = Some(label_cluster(c, &items, signatures, rdns));
    }
    Ok((items, clusters))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToolRow {
    pub tool: String,
    pub scanners: usize,
    pub scanners_pct: f64,
    pub sessions: usize,
    pub sessions_pct: f64,
}

/// Distinct sources and sessions per label, sorted by scanner count then name.
pub fn tool_report(clusters: &[PayloadCluster]) -> Vec<ToolRow> {
    let mut per: BTreeMap<String, (BTreeSet<SourceKey>, BTreeSet<u64>)> = BTreeMap::new();
    let mut all_src = BTreeSet::new();
    let mut all_sess = BTreeSet::new();
    for c in clusters {
        let label = c
            .label
            .as_ref()
            .map_or_else(|| "unlabeled".to_string(), |l| l.to_string());
        let e = per.entry(label).or_default();
        for &(s, id) in &c.members {
            e.0.insert(s);
            e.1.insert(id);
            all_src.insert(s);
            all_sess.insert(id);
        }
    }
    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    let mut rows: Vec<ToolRow> = per
        .into_iter()
        .map(|(tool, (s, x))| ToolRow {
            tool,
            scanners: s.len(),
            scanners_pct: pct(s.len(), all_src.len()),
            sessions: x.len(),
            sessions_pct: pct(x.len(), all_sess.len()),
        })
        .collect();
    rows.sort_by(|a, b| b.scanners.cmp(&a.scanners).then_with(|| a.tool.cmp(&b.tool)));
    rows
}
