//! Network-selection strategy per announcement cycle and per source.
//!
//! A session counts once for every distinct most-specific announced prefix
//! its targets fall in, using the cycle in effect at the session start.
//! Baseline and dark-period sessions are not counted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dbscan::{dbscan, euclidean, ClusteringParams};
use crate::error::{Error, Result};
use crate::model::{Prefix6, SourceKey};
use crate::schedule::AnnouncementSchedule;
use crate::sessionizer::ScanSession;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetSelLabel {
    SinglePrefix,
    SizeIndependent,
    SizeDependent,
    Inconsistent,
}

impl NetSelLabel {
    pub const ALL: [NetSelLabel; 4] = [
        NetSelLabel::SinglePrefix,
        NetSelLabel::SizeIndependent,
        NetSelLabel::SizeDependent,
        NetSelLabel::Inconsistent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NetSelLabel::SinglePrefix => "single_prefix",
            NetSelLabel::SizeIndependent => "size_independent",
            NetSelLabel::SizeDependent => "size_dependent",
            NetSelLabel::Inconsistent => "inconsistent",
        }
    }
}

impl fmt::Display for NetSelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NetSelLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        NetSelLabel::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown network-selection label `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleLabel {
    SinglePrefix,
    SizeIndependent,
    SizeDependent,
    Undetermined,
}

impl CycleLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CycleLabel::SinglePrefix => "single_prefix",
            CycleLabel::SizeIndependent => "size_independent",
            CycleLabel::SizeDependent => "size_dependent",
            CycleLabel::Undetermined => "undetermined",
        }
    }

    fn overall(self) -> Option<NetSelLabel> {
        match self {
            CycleLabel::SinglePrefix => Some(NetSelLabel::SinglePrefix),
            CycleLabel::SizeIndependent => Some(NetSelLabel::SizeIndependent),
            CycleLabel::SizeDependent => Some(NetSelLabel::SizeDependent),
            CycleLabel::Undetermined => None,
        }
    }
}

impl fmt::Display for CycleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetselConfig {
    pub cv_max: f64,
    pub rho_min: f64,
    pub min_sizes_hit: usize,
    pub clustering: ClusteringParams,
}

impl Default for NetselConfig {
    fn default() -> Self {
        NetselConfig {
            cv_max: 0.25,
            rho_min: 0.8,
            min_sizes_hit: 3,
            clustering: ClusteringParams::default(),
        }
    }
}

impl NetselConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cv_max >= 0.0) || !(-1.0..=1.0).contains(&self.rho_min) {
            return Err(Error::Config("netsel thresholds out of range".into()));
        }
        self.clustering.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleFeature {
    pub source: SourceKey,
    pub cycle: usize,
    /// Every prefix announced in the cycle, zero counts included.
    pub counts: BTreeMap<Prefix6, u64>,
}

impl CycleFeature {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Counts scaled to sum 1, in prefix order.
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.counts.values().map(|&c| c as f64 / t).collect()
    }
}

fn mean_cv(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return f64::INFINITY;
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation (Pearson over average ranks). `None` if either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Prefix lengths stand in for sizes: a shorter prefix is larger.
fn size_key(p: &Prefix6) -> f64 {
    -(p.len() as f64)
}

pub fn classify_cycle(f: &CycleFeature, cfg: &NetselConfig) -> CycleLabel {
    let prefixes: Vec<&Prefix6> = f.counts.keys().collect();
    let counts: Vec<f64> = f.counts.values().map(|&c| c as f64).collect();
    let nonzero = counts.iter().filter(|&&c| c > 0.0).count();
    if nonzero == 0 {
        return CycleLabel::Undetermined;
    }
    if nonzero == 1 {
        return CycleLabel::SinglePrefix;
    }
    let announced_sizes: BTreeSet<u8> = prefixes.iter().map(|p| p.len()).collect();
    if nonzero == counts.len() && announced_sizes.len() >= 2 && mean_cv(&counts) <= cfg.cv_max {
        return CycleLabel::SizeIndependent;
    }
    let sizes_hit: BTreeSet<u8> = prefixes
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0.0)
        .map(|(p, _)| p.len())
        .collect();
    if sizes_hit.len() >= cfg.min_sizes_hit {
        let sizes: Vec<f64> = prefixes.iter().map(|p| size_key(p)).collect();
        if spearman(&counts, &sizes).is_some_and(|rho| rho >= cfg.rho_min) {
            return CycleLabel::SizeDependent;
        }
    }
    CycleLabel::Undetermined
}

/// Combines per-cycle labels; an empty list means no cycle activity.
pub fn classify_source(labels: &[CycleLabel]) -> NetSelLabel {
    if labels.is_empty() {
        return NetSelLabel::SinglePrefix;
    }
    let decided: BTreeSet<NetSelLabel> = labels.iter().filter_map(|l| l.overall()).collect();
    match decided.len() {
        1 => *decided.iter().next().unwrap(),
        _ => NetSelLabel::Inconsistent,
    }
}

fn session_features(
    source: SourceKey,
    sessions: &[&ScanSession],
    schedule: &AnnouncementSchedule,
) -> Vec<CycleFeature> {
    let mut by_cycle: BTreeMap<usize, CycleFeature> = BTreeMap::new();
    for s in sessions {
        let Some(info) = schedule.cycle_at(s.start) else {
            continue;
        };
        if info.index == 0 || info.dark {
            continue;
        }
        let hit: BTreeSet<Prefix6> = s
            .targets
            .iter()
            .filter_map(|&t| schedule.most_specific_announced(info.index, t))
            .collect();
        if hit.is_empty() {
            continue;
        }
        let f = by_cycle.entry(info.index).or_insert_with(|| CycleFeature {
            source,
            cycle: info.index,
            counts: info.announced.iter().map(|&p| (p, 0)).collect(),
        });
        for p in hit {
            *f.counts.get_mut(&p).expect("announced prefix") += 1;
        }
    }
    by_cycle.into_values().collect()
}

/// Per-cycle features for every source with counted activity.
pub fn extract_features(sessions: &[ScanSession], schedule: &AnnouncementSchedule) -> Vec<CycleFeature> {
    let groups: Vec<_> = crate::sessionizer::by_source(sessions).into_iter().collect();
    groups
        .into_par_iter()
        .map(|(k, ss)| session_features(k, &ss, schedule))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SourceNetsel {
    pub label: NetSelLabel,
    pub cycles: Vec<(usize, CycleLabel)>,
}

/// Labels every source present in `sessions`.
pub fn classify_netsel(
    sessions: &[ScanSession],
    schedule: &AnnouncementSchedule,
    cfg: &NetselConfig,
) -> BTreeMap<SourceKey, SourceNetsel> {
    let mut per_source: BTreeMap<SourceKey, Vec<(usize, CycleLabel)>> =
        sessions.iter().map(|s| (s.source, Vec::new())).collect();
    for f in extract_features(sessions, schedule) {
        per_source
            .get_mut(&f.source)
            .expect("feature source has sessions")
            .push((f.cycle, classify_cycle(&f, cfg)));
    }
    per_source
        .into_iter()
        .map(|(k, cycles)| {
            let labels: Vec<CycleLabel> = cycles.iter().map(|c| c.1).collect();
            (
                k,
                SourceNetsel {
                    label: classify_source(&labels),
                    cycles,
                },
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Archetype {
    pub source: SourceKey,
    pub cycle: usize,
    /// Cluster ids are unique across cycles.
    pub cluster: Option<usize>,
    pub archetype: Option<CycleLabel>,
}

/// Label for a cluster centroid, if it matches one of the three shapes.
pub fn centroid_archetype(centroid: &[f64], prefixes: &[Prefix6], cfg: &NetselConfig) -> Option<CycleLabel> {
    let max = centroid.iter().cloned().fold(0.0, f64::max);
    if max >= 0.9 {
        return Some(CycleLabel::SinglePrefix);
    }
    if mean_cv(centroid) <= cfg.cv_max {
        return Some(CycleLabel::SizeIndependent);
    }
    let sizes: Vec<f64> = prefixes.iter().map(size_key).collect();
    if spearman(centroid, &sizes).is_some_and(|r| r >= cfg.rho_min) {
        return Some(CycleLabel::SizeDependent);
    }
    None
}

/// DBSCAN over normalized vectors, separately per cycle (vectors of one cycle share a dimension).
pub fn cluster_archetypes(features: &[CycleFeature], cfg: &NetselConfig) -> Vec<Archetype> {
    let mut by_cycle: BTreeMap<usize, Vec<&CycleFeature>> = BTreeMap::new();
    for f in features {
        by_cycle.entry(f.cycle).or_default().push(f);
    }
    let mut out = Vec::with_capacity(features.len());
    let mut offset = 0;
    for (cycle, fs) in by_cycle {
        let vectors: Vec<Vec<f64>> = fs.iter().map(|f| f.normalized()).collect();
        let prefixes: Vec<Prefix6> = fs[0].counts.keys().copied().collect();
        let ids = dbscan(&vectors, cfg.clustering, |a, b| euclidean(a, b));
        let n_clusters = ids.iter().flatten().max().map_or(0, |m| m + 1);
        let archetypes: Vec<Option<CycleLabel>> = (0..n_clusters)
            .map(|c| {
                let members: Vec<&Vec<f64>> = vectors
                    .iter()
                    .zip(&ids)
                    .filter(|(_, id)| **id == Some(c))
                    .map(|(v, _)| v)
                    .collect();
                let mut centroid = vec![0.0; prefixes.len()];
                for v in &members {
                    for (c, x) in centroid.iter_mut().zip(v.iter()) {
                        *c += x / members.len() as f64;
                    }
                }
                centroid_archetype(&centroid, &prefixes, cfg)
            })
            .collect();
        for (f, id) in fs.iter().zip(&ids) {
            out.push(Archetype {
                source: f.source,
                cycle,
                cluster: id.map(|c| c + offset),
                archetype: id.and_then(|c| archetypes[c]),
            });
        }
        offset += n_clusters;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{generate_schedule, ScheduleParams};

    fn src() -> SourceKey {
        "2001:db8:ffff::1".parse().unwrap()
    }

    fn feature(cycle: usize, counts: &[u64]) -> CycleFeature {
        let s = generate_schedule("2001:db8::/32".parse().unwrap(), 16, 0, ScheduleParams::default())
            .unwrap();
        let ann = s.announced(cycle).unwrap();
        assert_eq!(ann.len(), counts.len());
        CycleFeature {
            source: src(),
            cycle,
            counts: ann.iter().copied().zip(counts.iter().copied()).collect(),
        }
    }

    #[test]
    fn cycle_labels() {
        let cfg = NetselConfig::default();
        let mut one = vec![0; 17];
        one[3] = 5;
        assert_eq!(classify_cycle(&feature(16, &one), &cfg), CycleLabel::SinglePrefix);
        assert_eq!(classify_cycle(&feature(16, &[4; 17]), &cfg), CycleLabel::SizeIndependent);
        // Proportional to 2^(128 - len), scaled down so /48 gets 1.
        let f = feature(16, &[0; 17]);
        let prop: Vec<u64> = f.counts.keys().map(|p| 1u64 << (48 - p.len())).collect();
        let f = feature(16, &prop);
        let sizes: Vec<f64> = f.counts.keys().map(|p| 2f64.powi(128 - p.len() as i32)).collect();
        let counts: Vec<f64> = prop.iter().map(|&c| c as f64).collect();
        assert!((spearman(&counts, &sizes).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(classify_cycle(&f, &cfg), CycleLabel::SizeDependent);
        // Two equal-size prefixes cannot separate the two strategies.
        assert_eq!(classify_cycle(&feature(1, &[3, 3]), &cfg), CycleLabel::Undetermined);
        assert_eq!(classify_cycle(&feature(2, &[2, 1, 1]), &cfg), CycleLabel::Undetermined);
    }

    #[test]
    fn scaling_invariance() {
        let cfg = NetselConfig::default();
        for counts in [vec![5, 0, 0, 1], vec![3, 3, 3, 3], vec![8, 4, 2, 2], vec![1, 5, 2, 0]] {
            let base = classify_cycle(&feature(3, &counts), &cfg);
            for k in [2, 7, 100] {
                let scaled: Vec<u64> = counts.iter().map(|c| c * k).collect();
                assert_eq!(classify_cycle(&feature(3, &scaled), &cfg), base);
            }
        }
    }

    #[test]
    fn source_labels() {
        use CycleLabel::*;
        assert_eq!(classify_source(&[SinglePrefix, SinglePrefix]), NetSelLabel::SinglePrefix);
        assert_eq!(
            classify_source(&[SizeIndependent, SizeIndependent, SizeIndependent, SinglePrefix]),
            NetSelLabel::Inconsistent
        );
        assert_eq!(classify_source(&[Undetermined, SizeDependent]), NetSelLabel::SizeDependent);
        assert_eq!(classify_source(&[Undetermined]), NetSelLabel::Inconsistent);
        assert_eq!(classify_source(&[]), NetSelLabel::SinglePrefix);
    }

    #[test]
    fn ranks_and_correlation() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn archetype_clusters() {
        let cfg = NetselConfig::default();
        let mut fs = Vec::new();
        for _ in 0..5 {
            fs.push(feature(3, &[0, 0, 7, 0]));
        }
        for _ in 0..5 {
            fs.push(feature(3, &[2, 2, 2, 2]));
        }
        fs.push(feature(3, &[1, 9, 4, 0]));
        let a = cluster_archetypes(&fs, &cfg);
        assert_eq!(a[0].archetype, Some(CycleLabel::SinglePrefix));
        assert_eq!(a[5].archetype, Some(CycleLabel::SizeIndependent));
        assert_ne!(a[0].cluster, a[5].cluster);
        assert_eq!(a[10].cluster, None);
        assert_eq!(a[10].archetype, None);
    }
}
