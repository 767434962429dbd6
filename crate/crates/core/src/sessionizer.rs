//! Timeout-based scan sessions.
//!
//! Packets are grouped by `(source key, telescope)`, ordered by timestamp, and
//! cut wherever two consecutive packets are more than `timeout` apart. A gap
//! of exactly `timeout` stays in the current session.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AggLevel, Address6, Micros, ProbePacket, Proto, SourceKey, MICROS_PER_SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionizerConfig {
    pub timeout: Micros,
    pub level: AggLevel,
}

impl Default for SessionizerConfig {
    fn default() -> Self {
        SessionizerConfig {
            timeout: 3600 * MICROS_PER_SEC,
            level: AggLevel::Addr128,
        }
    }
}

impl SessionizerConfig {
    pub fn new(timeout: Micros, level: AggLevel) -> Result<Self> {
        if timeout <= 0 {
            return Err(Error::Config("session timeout must be positive".into()));
        }
        Ok(SessionizerConfig { timeout, level })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanSession {
    pub id: u64,
    pub source: SourceKey,
    pub telescope: String,
    #[serde(with = "crate::timefmt::flexible")]
    pub start: Micros,
    #[serde(with = "crate::timefmt::flexible")]
    pub end: Micros,
    pub packet_count: usize,
    pub distinct_targets: usize,
    pub protocols: BTreeSet<Proto>,
    /// Packets per protocol.
    pub proto_packets: BTreeMap<Proto, usize>,
    pub dports: BTreeMap<Proto, BTreeSet<u16>>,
    /// Destination of each packet, in arrival order.
    pub targets: Vec<Address6>,
    /// Distinct /128 senders (differs from `source` only at /64 aggregation).
    pub senders: BTreeSet<Address6>,
    /// Indices into the packet slice the session was built from. Not serialized.
    #[serde(skip)]
    pub packets: Vec<usize>,
}

impl ScanSession {
    fn open(source: SourceKey, telescope: &str, first: &ProbePacket, idx: usize) -> Self {
        let mut s = ScanSession {
            id: 0,
            source,
            telescope: telescope.to_string(),
            start: first.ts,
            end: first.ts,
            packet_count: 0,
            distinct_targets: 0,
            protocols: BTreeSet::new(),
            proto_packets: BTreeMap::new(),
            dports: BTreeMap::new(),
            targets: Vec::new(),
            senders: BTreeSet::new(),
            packets: Vec::new(),
        };
        s.push(first, idx);
        s
    }

    fn push(&mut self, p: &ProbePacket, idx: usize) {
        self.end = p.ts;
        self.packet_count += 1;
        self.protocols.insert(p.proto);
        *self.proto_packets.entry(p.proto).or_default() += 1;
        if let Some(port) = p.dport {
            self.dports.entry(p.proto).or_default().insert(port);
        }
        self.targets.push(p.dst);
        self.senders.insert(p.src);
        self.packets.push(idx);
    }

    fn finish(mut self) -> Self {
        self.distinct_targets = self.targets.iter().collect::<BTreeSet<_>>().len();
        self
    }

    pub fn duration(&self) -> Micros {
        self.end - self.start
    }
}

type GroupKey = (SourceKey, String);

/// Tie-break for equal timestamps: `(dst, proto, dport)`, then input order.
fn packet_order(p: &ProbePacket) -> (Micros, Address6, Proto, Option<u16>) {
    (p.ts, p.dst, p.proto, p.dport)
}

fn group(packets: &[ProbePacket], level: AggLevel) -> BTreeMap<GroupKey, Vec<usize>> {
    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in packets.iter().enumerate() {
        groups
            .entry((p.source(level), p.telescope.clone()))
            .or_default()
            .push(i);
    }
    groups
}

fn split_group(
    key: &GroupKey,
    mut idx: Vec<usize>,
    packets: &[ProbePacket],
    timeout: Micros,
) -> Vec<ScanSession> {
    // sort_by_key is stable, so input order breaks any remaining ties.
    idx.sort_by_key(|&i| packet_order(&packets[i]));
    let mut out = Vec::new();
    let mut iter = idx.into_iter();
    let Some(first) = iter.next() else {
        return out;
    };
    let mut cur = ScanSession::open(key.0, &key.1, &packets[first], first);
    for i in iter {
        let p = &packets[i];
        if p.ts - cur.end > timeout {
            let next = ScanSession::open(key.0, &key.1, p, i);
            out.push(std::mem::replace(&mut cur, next).finish());
        } else {
            cur.push(p, i);
        }
    }
    out.push(cur.finish());
    out
}

/// Partitions packets into scan sessions.
///
/// Output order is by `(source key, telescope, start)`; ids are assigned in
/// that order starting at 0. Groups are processed on the current rayon pool,
/// and the result does not depend on its size.
pub fn sessionize(packets: &[ProbePacket], cfg: &SessionizerConfig) -> Vec<ScanSession> {
    let groups: Vec<(GroupKey, Vec<usize>)> = group(packets, cfg.level).into_iter().collect();
    let mut sessions: Vec<ScanSession> = groups
        .into_par_iter()
        .map(|(key, idx)| split_group(&key, idx, packets, cfg.timeout))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    for (i, s) in sessions.iter_mut().enumerate() {
        s.id = i as u64;
    }
    sessions
}

pub fn write_sessions<'a, W: Write>(
    mut w: W,
    sessions: impl IntoIterator<Item = &'a ScanSession>,
) -> Result<()> {
    for s in sessions {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sessions<R: BufRead>(r: R) -> Result<Vec<ScanSession>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: ScanSession = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("session line {}: {e}", n + 1)))?;
        out.push(s);
    }
    Ok(out)
}

/// Sessions bucketed by source key, preserving order.
pub fn by_source(sessions: &[ScanSession]) -> BTreeMap<SourceKey, Vec<&ScanSession>> {
    let mut map: BTreeMap<SourceKey, Vec<&ScanSession>> = BTreeMap::new();
    for s in sessions {
        map.entry(s.source).or_default().push(s);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(ts_s: i64, src: &str, dst: &str) -> ProbePacket {
        ProbePacket {
            ts: ts_s * MICROS_PER_SEC,
            src: src.parse().unwrap(),
            dst: dst.parse().unwrap(),
            proto: Proto::Icmp6,
            sport: None,
            dport: None,
            icmp_type: Some(128),
            tcp_flags: None,
            payload: vec![],
            telescope: "T1".into(),
        }
    }

    #[test]
    fn single_packet() {
        let s = sessionize(&[pkt(5, "2001:db8::5", "2001:db8::1")], &SessionizerConfig::default());
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].packet_count, 1);
        assert_eq!(s[0].start, s[0].end);
    }

    #[test]
    fn timeout_boundary() {
        let p = vec![
            pkt(0, "2001:db8::5", "2001:db8::1"),
            pkt(1800, "2001:db8::5", "2001:db8::2"),
            pkt(5401, "2001:db8::5", "2001:db8::3"),
        ];
        let s = sessionize(&p, &SessionizerConfig::default());
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].packet_count, 2);
        assert_eq!(s[1].start, 5401 * MICROS_PER_SEC);

        // A gap of exactly T stays in session.
        let q = vec![
            pkt(0, "2001:db8::5", "2001:db8::1"),
            pkt(3600, "2001:db8::5", "2001:db8::2"),
        ];
        assert_eq!(sessionize(&q, &SessionizerConfig::default()).len(), 1);
    }

    #[test]
    fn per_telescope_streams() {
        let mut b = pkt(10, "2001:db8::5", "2001:db8::2");
        b.telescope = "T2".into();
        let p = vec![pkt(0, "2001:db8::5", "2001:db8::1"), b];
        let s = sessionize(&p, &SessionizerConfig::default());
        assert_eq!(s.len(), 2);
        assert_ne!(s[0].telescope, s[1].telescope);
    }

    #[test]
    fn net64_merges_siblings() {
        let p = vec![
            pkt(0, "2001:db8:0:1::a", "2001:db8::1"),
            pkt(100, "2001:db8:0:1::b", "2001:db8::2"),
            pkt(200, "2001:db8:0:1::a", "2001:db8::3"),
        ];
        let at128 = sessionize(&p, &SessionizerConfig::default());
        assert_eq!(at128.len(), 2);
        let cfg = SessionizerConfig::new(3600 * MICROS_PER_SEC, AggLevel::Net64).unwrap();
        let at64 = sessionize(&p, &cfg);
        assert_eq!(at64.len(), 1);
        assert_eq!(at64[0].senders.len(), 2);
        assert_eq!(at64[0].source.to_string(), "2001:db8:0:1::/64");
    }

    #[test]
    fn equal_timestamps_are_ordered_by_destination() {
        let p = vec![
            pkt(0, "2001:db8::5", "2001:db8::9"),
            pkt(0, "2001:db8::5", "2001:db8::1"),
        ];
        let s = sessionize(&p, &SessionizerConfig::default());
        assert_eq!(s[0].targets[0], "2001:db8::1".parse().unwrap());
        assert_eq!(s[0].packets, vec![1, 0]);
    }

    #[test]
    fn rejects_nonpositive_timeout() {
        assert!(SessionizerConfig::new(0, AggLevel::Addr128).is_err());
    }

    #[test]
    fn session_file_round_trip() {
        let p = vec![
            pkt(0, "2001:db8::5", "2001:db8::1"),
            pkt(9000, "2001:db8::6", "2001:db8::1"),
        ];
        let mut s = sessionize(&p, &SessionizerConfig::default());
        let mut buf = Vec::new();
        write_sessions(&mut buf, &s).unwrap();
        let back = read_sessions(&buf[..]).unwrap();
        for x in s.iter_mut() {
            x.packets.clear();
        }
        assert_eq!(back, s);
    }
}
