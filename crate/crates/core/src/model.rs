//! Shared domain types: addresses, prefixes, source keys and probe packets.
//!
//! Addresses are plain 128-bit integers so that prefix arithmetic is exact.
//! Text forms follow RFC 5952 (lowercase, `::` compression) everywhere.

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv6Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Microseconds since the Unix epoch.
pub type Micros = i64;

pub const MICROS_PER_SEC: Micros = 1_000_000;
pub const MICROS_PER_HOUR: Micros = 3600 * MICROS_PER_SEC;
pub const MICROS_PER_DAY: Micros = 24 * MICROS_PER_HOUR;

/// An IPv6 address held as a big-endian 128-bit value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address6(pub u128);

impl Address6 {
    pub const UNSPECIFIED: Address6 = Address6(0);

    pub fn bits(self) -> u128 {
        self.0
    }

    /// The interface identifier (low 64 bits).
    pub fn iid(self) -> u64 {
        self.0 as u64
    }

    /// IID bytes in network order.
    pub fn iid_bytes(self) -> [u8; 8] {
        self.iid().to_be_bytes()
    }

    /// Keep only the top `len` bits.
    pub fn truncate(self, len: u8) -> Address6 {
        Address6(self.0 & mask(len))
    }

    pub fn to_ipv6(self) -> Ipv6Addr {
        Ipv6Addr::from(self.0)
    }
}

impl From<Ipv6Addr> for Address6 {
    fn from(a: Ipv6Addr) -> Self {
        Address6(u128::from(a))
    }
}

impl From<u128> for Address6 {
    fn from(v: u128) -> Self {
        Address6(v)
    }
}

impl fmt::Display for Address6 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // std renders RFC 5952 canonical text.
        fmt::Display::fmt(&self.to_ipv6(), f)
    }
}

impl FromStr for Address6 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<Ipv6Addr>()
            .map(Address6::from)
            .map_err(|_| Error::Parse(format!("invalid IPv6 address `{s}`")))
    }
}

impl Serialize for Address6 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address6 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Network mask with the top `len` bits set.
pub fn mask(len: u8) -> u128 {
    match len {
        0 => 0,
        l if l >= 128 => u128::MAX,
        l => u128::MAX << (128 - l),
    }
}

/// An IPv6 prefix with cleared host bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix6 {
    base: Address6,
    len: u8,
}

impl Prefix6 {
    /// Builds a prefix, rejecting set host bits.
    pub fn new(base: Address6, len: u8) -> Result<Self> {
        if len > 128 {
            return Err(Error::Parse(format!("prefix length {len} exceeds 128")));
        }
        if base.0 & !mask(len) != 0 {
            return Err(Error::Parse(format!("{base}/{len} has host bits set")));
        }
        Ok(Prefix6 { base, len })
    }

    /// Builds a prefix, clearing any host bits of `addr`.
    pub fn truncating(addr: Address6, len: u8) -> Self {
        let len = len.min(128);
        Prefix6 {
            base: addr.truncate(len),
            len,
        }
    }

    pub fn base(&self) -> Address6 {
        self.base
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_host(&self) -> bool {
        self.len == 128
    }

    /// Highest address inside the prefix.
    pub fn last(&self) -> Address6 {
        Address6(self.base.0 | !mask(self.len))
    }

    /// log2 of the number of addresses covered.
    pub fn size_log2(&self) -> u32 {
        128 - self.len as u32
    }

    pub fn contains(&self, a: Address6) -> bool {
        a.0 & mask(self.len) == self.base.0
    }

    /// True when `other` lies entirely within `self`.
    pub fn covers(&self, other: &Prefix6) -> bool {
        other.len >= self.len && self.contains(other.base)
    }

    pub fn overlaps(&self, other: &Prefix6) -> bool {
        self.covers(other) || other.covers(self)
    }

    /// Halves the prefix into its lower and upper more-specific children.
    pub fn split(&self) -> Result<(Prefix6, Prefix6)> {
        if self.len >= 128 {
            return Err(Error::CannotSplit(*self));
        }
        let len = self.len + 1;
        let upper_bit = 1u128 << (127 - self.len as u32);
        Ok((
            Prefix6 {
                base: self.base,
                len,
            },
            Prefix6 {
                base: Address6(self.base.0 | upper_bit),
                len,
            },
        ))
    }

    /// The base address with its least-significant bit set, e.g. `2001:db8::1`.
    pub fn low_byte_address(&self) -> Address6 {
        Address6(self.base.0 | 1)
    }
}

impl fmt::Display for Prefix6 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base, self.len)
    }
}

impl FromStr for Prefix6 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| Error::Parse(format!("prefix `{s}` lacks a length")))?;
        let len: u8 = len
            .parse()
            .map_err(|_| Error::Parse(format!("invalid prefix length in `{s}`")))?;
        Prefix6::new(addr.parse()?, len)
    }
}

impl Serialize for Prefix6 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix6 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn split(p: Prefix6) -> Result<(Prefix6, Prefix6)> {
    p.split()
}

pub fn low_byte_address(p: Prefix6) -> Address6 {
    p.low_byte_address()
}

pub fn contains(p: Prefix6, a: Address6) -> bool {
    p.contains(a)
}

/// Linear longest-prefix match over an unordered table.
pub fn longest_prefix_match<T>(table: &[(Prefix6, T)], a: Address6) -> Option<&T> {
    table
        .iter()
        .filter(|(p, _)| p.contains(a))
        .max_by_key(|(p, _)| p.len())
        .map(|(_, tag)| tag)
}

/// Longest-prefix-match table bucketed by prefix length.
///
/// Lookups probe each populated length from most to least specific, so the
/// cost is bounded by the number of distinct lengths rather than entries.
#[derive(Clone, Debug)]
pub struct PrefixMap<T> {
    buckets: Vec<HashMap<u128, T>>,
    lengths: Vec<u8>,
    entries: usize,
}

impl<T> Default for PrefixMap<T> {
    fn default() -> Self {
        PrefixMap {
            buckets: (0..=128).map(|_| HashMap::new()).collect(),
            lengths: Vec::new(),
            entries: 0,
        }
    }
}

impl<T> PrefixMap<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the tag for `p`.
    pub fn insert(&mut self, p: Prefix6, tag: T) -> Option<T> {
        let bucket = &mut self.buckets[p.len() as usize];
        let old = bucket.insert(p.base().0, tag);
        if old.is_none() {
            self.entries += 1;
            if let Err(pos) = self.lengths.binary_search_by(|l| p.len().cmp(l)) {
                self.lengths.insert(pos, p.len());
            }
        }
        old
    }

    pub fn lookup(&self, a: Address6) -> Option<(Prefix6, &T)> {
        self.lengths.iter().find_map(|&len| {
            let base = a.0 & mask(len);
            self.buckets[len as usize].get(&base).map(|tag| {
                (
                    Prefix6 {
                        base: Address6(base),
                        len,
                    },
                    tag,
                )
            })
        })
    }

    pub fn get(&self, a: Address6) -> Option<&T> {
        self.lookup(a).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }
}

impl<T> FromIterator<(Prefix6, T)> for PrefixMap<T> {
    fn from_iter<I: IntoIterator<Item = (Prefix6, T)>>(iter: I) -> Self {
        let mut map = PrefixMap::new();
        for (p, t) in iter {
            map.insert(p, t);
        }
        map
    }
}

/// Granularity at which packet sources are grouped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AggLevel {
    #[serde(rename = "128")]
    Addr128,
    #[serde(rename = "64")]
    Net64,
}

impl AggLevel {
    pub fn prefix_len(self) -> u8 {
        match self {
            AggLevel::Addr128 => 128,
            AggLevel::Net64 => 64,
        }
    }
}

impl fmt::Display for AggLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggLevel::Addr128 => "128",
            AggLevel::Net64 => "64",
        })
    }
}

impl FromStr for AggLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().trim_start_matches('/') {
            "128" | "addr128" => Ok(AggLevel::Addr128),
            "64" | "net64" => Ok(AggLevel::Net64),
            other => Err(Error::Parse(format!("unknown aggregation level `{other}`"))),
        }
    }
}

/// A scan source: an address truncated to its aggregation level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceKey {
    pub level: AggLevel,
    pub value: Address6,
}

impl SourceKey {
    pub fn new(addr: Address6, level: AggLevel) -> Self {
        SourceKey {
            level,
            value: addr.truncate(level.prefix_len()),
        }
    }

    pub fn prefix(&self) -> Prefix6 {
        Prefix6::truncating(self.value, self.level.prefix_len())
    }
}

impl fmt::Display for SourceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.level {
            AggLevel::Addr128 => write!(f, "{}", self.value),
            AggLevel::Net64 => write!(f, "{}/64", self.value),
        }
    }
}

impl FromStr for SourceKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('/') {
            Some((a, "64")) => Ok(SourceKey::new(a.parse()?, AggLevel::Net64)),
            Some((a, "128")) | Some((a, "")) => Ok(SourceKey::new(a.parse()?, AggLevel::Addr128)),
            Some(_) => Err(Error::Parse(format!("unsupported source key `{s}`"))),
            None => Ok(SourceKey::new(s.parse()?, AggLevel::Addr128)),
        }
    }
}

impl Serialize for SourceKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SourceKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Icmp6,
    Tcp,
    Udp,
}

impl Proto {
    pub const ALL: [Proto; 3] = [Proto::Icmp6, Proto::Tcp, Proto::Udp];

    pub fn as_str(self) -> &'static str {
        match self {
            Proto::Icmp6 => "icmp6",
            Proto::Tcp => "tcp",
            Proto::Udp => "udp",
        }
    }
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Proto {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "icmp6" => Ok(Proto::Icmp6),
            "tcp" => Ok(Proto::Tcp),
            "udp" => Ok(Proto::Udp),
            other => Err(Error::Parse(format!("unknown proto `{other}`"))),
        }
    }
}

/// TCP control flags, rendered as a subset of `SAFRPU`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
    pub const URG: u8 = 0x20;

    // Rendering order of the wire format.
    const LETTERS: [(char, u8); 6] = [
        ('S', Self::SYN),
        ('A', Self::ACK),
        ('F', Self::FIN),
        ('R', Self::RST),
        ('P', Self::PSH),
        ('U', Self::URG),
    ];

    pub fn syn() -> Self {
        TcpFlags(Self::SYN)
    }

    pub fn contains(self, bit: u8) -> bool {
        self.0 & bit == bit
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (c, bit) in Self::LETTERS {
            if self.contains(bit) {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for TcpFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bits = 0u8;
        for c in s.chars() {
            let bit = Self::LETTERS
                .iter()
                .find(|(l, _)| *l == c.to_ascii_uppercase())
                .map(|(_, b)| *b)
                .ok_or_else(|| Error::Parse(format!("unknown TCP flag `{c}`")))?;
            bits |= bit;
        }
        Ok(TcpFlags(bits))
    }
}

/// One normalized captured probe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbePacket {
    pub ts: Micros,
    pub src: Address6,
    pub dst: Address6,
    pub proto: Proto,
    pub sport: Option<u16>,
    pub dport: Option<u16>,
    pub icmp_type: Option<u8>,
    pub tcp_flags: Option<TcpFlags>,
    pub payload: Vec<u8>,
    pub telescope: String,
}

impl ProbePacket {
    /// Checks the port/protocol consistency rule.
    pub fn validate(&self) -> Result<()> {
        match self.proto {
            Proto::Icmp6 if self.sport.is_some() || self.dport.is_some() => Err(Error::Invalid(
                "icmp6 packets carry no ports".into(),
            )),
            Proto::Tcp | Proto::Udp if self.dport.is_none() => Err(Error::Invalid(format!(
                "{} packet without dport",
                self.proto
            ))),
            _ => Ok(()),
        }
    }

    pub fn source(&self, level: AggLevel) -> SourceKey {
        SourceKey::new(self.src, level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> Prefix6 {
        s.parse().unwrap()
    }

    fn a(s: &str) -> Address6 {
        s.parse().unwrap()
    }

    #[test]
    fn split_examples() {
        assert_eq!(
            p("2001:db8::/32").split().unwrap(),
            (p("2001:db8::/33"), p("2001:db8:8000::/33"))
        );
        assert_eq!(
            p("2001:db8:8000::/33").split().unwrap(),
            (p("2001:db8:8000::/34"), p("2001:db8:c000::/34"))
        );
        assert_eq!(p("::/0").split().unwrap(), (p("::/1"), p("8000::/1")));
        assert!(matches!(
            p("2001:db8::1/128").split(),
            Err(Error::CannotSplit(_))
        ));
    }

    #[test]
    fn low_byte_examples() {
        assert_eq!(p("2001:db8::/32").low_byte_address(), a("2001:db8::1"));
        assert_eq!(p("2001:db8:8000::/33").low_byte_address(), a("2001:db8:8000::1"));
        assert_eq!(p("::/0").low_byte_address(), a("::1"));
    }

    #[test]
    fn contains_examples() {
        assert!(p("2001:db8::/33").contains(a("2001:db8::1")));
        assert!(!p("2001:db8:8000::/33").contains(a("2001:db8::1")));
        assert!(p("::/0").contains(a("ffff::1")));
    }

    #[test]
    fn lpm_examples() {
        let table = vec![(p("2001:db8::/32"), "A"), (p("2001:db8:8000::/33"), "B")];
        // 2001:db8:9::1 has bit 32 clear, so only the /32 covers it.
        assert_eq!(longest_prefix_match(&table, a("2001:db8:9::1")), Some(&"A"));
        assert_eq!(longest_prefix_match(&table, a("2001:db8:9000::1")), Some(&"B"));
        assert_eq!(longest_prefix_match(&table, a("2001:db8:1::1")), Some(&"A"));
        assert_eq!(longest_prefix_match(&table, a("2002::1")), None);
        let map: PrefixMap<&str> = table.iter().cloned().collect();
        assert_eq!(map.get(a("2001:db8:9000::1")), Some(&"B"));
        assert_eq!(map.get(a("2002::1")), None);
    }

    #[test]
    fn rejects_host_bits() {
        assert!("2001:db8::1/32".parse::<Prefix6>().is_err());
        assert!("2001:db8::/129".parse::<Prefix6>().is_err());
    }

    #[test]
    fn tcp_flags_text() {
        let f: TcpFlags = "SA".parse().unwrap();
        assert!(f.contains(TcpFlags::SYN) && f.contains(TcpFlags::ACK));
        assert_eq!(f.to_string(), "SA");
        assert_eq!("FS".parse::<TcpFlags>().unwrap().to_string(), "SF");
        assert!("X".parse::<TcpFlags>().is_err());
    }

    #[test]
    fn packet_invariant() {
        let mut pkt = ProbePacket {
            ts: 0,
            src: a("2001:db8::5"),
            dst: a("2001:db8:f::1"),
            proto: Proto::Tcp,
            sport: None,
            dport: None,
            icmp_type: None,
            tcp_flags: None,
            payload: vec![],
            telescope: "T1".into(),
        };
        assert!(pkt.validate().is_err());
        pkt.dport = Some(0);
        assert!(pkt.validate().is_ok());
        pkt.proto = Proto::Icmp6;
        assert!(pkt.validate().is_err());
    }

    #[test]
    fn source_key_truncates() {
        let k = SourceKey::new(a("2001:db8:1:2:3:4:5:6"), AggLevel::Net64);
        assert_eq!(k.value, a("2001:db8:1:2::"));
        assert_eq!(k.to_string(), "2001:db8:1:2::/64");
        assert_eq!(k.to_string().parse::<SourceKey>().unwrap(), k);
    }

    proptest! {
        #[test]
        fn text_round_trip(v in any::<u128>()) {
            let addr = Address6(v);
            prop_assert_eq!(addr.to_string().parse::<Address6>().unwrap(), addr);
        }

        #[test]
        fn split_partitions(v in any::<u128>(), len in 0u8..128, probe in any::<u128>()) {
            let parent = Prefix6::truncating(Address6(v), len);
            let (lo, hi) = parent.split().unwrap();
            prop_assert_eq!(lo.len(), len + 1);
            prop_assert_eq!(hi.len(), len + 1);
            prop_assert_eq!(lo.size_log2(), hi.size_log2());
            prop_assert!(!lo.overlaps(&hi));
            // Membership sampling: a probe inside the parent is in exactly one half.
            let inside = Address6((probe & !mask(len)) | parent.base().0);
            prop_assert!(lo.contains(inside) ^ hi.contains(inside));
            let outside_any = !parent.contains(Address6(probe));
            prop_assert_eq!(outside_any, !lo.contains(Address6(probe)) && !hi.contains(Address6(probe)));
        }

        #[test]
        fn low_byte_is_contained(v in any::<u128>(), len in 0u8..=127) {
            let pfx = Prefix6::truncating(Address6(v), len);
            prop_assert!(pfx.contains(pfx.low_byte_address()));
        }

        #[test]
        fn prefix_map_matches_linear_scan(
            entries in proptest::collection::vec((any::<u128>(), 0u8..=128), 0..40),
            probes in proptest::collection::vec(any::<u128>(), 1..20),
        ) {
            let table: Vec<(Prefix6, usize)> = entries
                .iter()
                .enumerate()
                .map(|(i, (v, l))| (Prefix6::truncating(Address6(*v), *l), i))
                .collect();
            // Later duplicates win in the map; mirror that in the linear table.
            let mut dedup: Vec<(Prefix6, usize)> = Vec::new();
            for (p, i) in &table {
                dedup.retain(|(q, _)| q != p);
                dedup.push((*p, *i));
            }
            let map: PrefixMap<usize> = table.into_iter().collect();
            for probe in probes {
                // Reuse entry bases as probes too so matches actually happen.
                for addr in [Address6(probe)].into_iter().chain(dedup.iter().map(|(p, _)| p.base())) {
                    prop_assert_eq!(map.get(addr), longest_prefix_match(&dedup, addr));
                }
            }
        }
    }
}
