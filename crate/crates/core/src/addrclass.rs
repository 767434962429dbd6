//! Interface-identifier classification of target addresses and the
//! per-session address-selection label.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Address6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressType {
    LowByte,
    EmbeddedIpv4,
    EmbeddedPort,
    IeeeDerived,
    Isatap,
    PatternBytes,
    SubnetAnycast,
    Randomized,
}

impl AddressType {
    pub const ALL: [AddressType; 8] = [
        AddressType::Randomized,
        AddressType::LowByte,
        AddressType::PatternBytes,
        AddressType::EmbeddedIpv4,
        AddressType::SubnetAnycast,
        AddressType::EmbeddedPort,
        AddressType::IeeeDerived,
        AddressType::Isatap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AddressType::LowByte => "low_byte",
            AddressType::EmbeddedIpv4 => "embedded_ipv4",
            AddressType::EmbeddedPort => "embedded_port",
            AddressType::IeeeDerived => "ieee_derived",
            AddressType::Isatap => "isatap",
            AddressType::PatternBytes => "pattern_bytes",
            AddressType::SubnetAnycast => "subnet_anycast",
            AddressType::Randomized => "randomized",
        }
    }
}

impl fmt::Display for AddressType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AddressType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AddressType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown address type `{s}`")))
    }
}

pub const DEFAULT_SERVICE_PORTS: [u16; 20] = [
    21, 22, 23, 25, 53, 80, 110, 123, 143, 161, 179, 443, 445, 993, 995, 3306, 3389, 5060, 8080,
    8443,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddressClassConfig {
    pub service_ports: Vec<u16>,
    /// Minimum share of the dominant non-random type for a structured label.
    pub structured_threshold: f64,
    /// Minimum number of distinct targets before monotone order counts as traversal.
    pub min_traversal_targets: usize,
}

impl Default for AddressClassConfig {
    fn default() -> Self {
        AddressClassConfig {
            service_ports: DEFAULT_SERVICE_PORTS.to_vec(),
            structured_threshold: 0.8,
            min_traversal_targets: 3,
        }
    }
}

/// Reads the hex digits of `word` as a decimal number, if they all are decimal digits.
fn hex_digits_as_decimal(word: u16) -> Option<u16> {
    let mut value = 0u16;
    for shift in [12, 8, 4, 0] {
        let nibble = (word >> shift) & 0xf;
        if nibble > 9 {
            return None;
        }
        value = value * 10 + nibble;
    }
    Some(value)
}

fn words(iid: [u8; 8]) -> [u16; 4] {
    [
        u16::from_be_bytes([iid[0], iid[1]]),
        u16::from_be_bytes([iid[2], iid[3]]),
        u16::from_be_bytes([iid[4], iid[5]]),
        u16::from_be_bytes([iid[6], iid[7]]),
    ]
}

fn is_embedded_ipv4(iid: [u8; 8]) -> bool {
    // Plain 32-bit embedding, e.g. ::192.0.0.1; a zero first octet is not an IPv4 address.
    if iid[..4] == [0; 4] && iid[4] != 0 {
        return true;
    }
    // One octet per word written in decimal, e.g. ::192:168:1:1.
    let w = words(iid);
    w[0] != 0
        && w.iter()
            .all(|&x| matches!(hex_digits_as_decimal(x), Some(v) if v <= 255))
}

fn is_embedded_port(iid: [u8; 8], ports: &[u16]) -> bool {
    if iid[..6] != [0; 6] {
        return false;
    }
    let last = u16::from_be_bytes([iid[6], iid[7]]);
    last != 0
        && (ports.contains(&last)
            || hex_digits_as_decimal(last).is_some_and(|d| ports.contains(&d)))
}

fn is_pattern_bytes(iid: [u8; 8]) -> bool {
    // One nonzero nibble repeated across the whole IID.
    let nib = iid[0] >> 4;
    if nib != 0 && iid.iter().all(|&b| b >> 4 == nib && b & 0xf == nib) {
        return true;
    }
    // One byte value in >= 3 consecutive positions, every other byte zero.
    let nonzero: Vec<usize> = (0..8).filter(|&i| iid[i] != 0).collect();
    let (Some(&first), Some(&last)) = (nonzero.first(), nonzero.last()) else {
        return false;
    };
    let run = last - first + 1;
    run >= 3 && run == nonzero.len() && nonzero.iter().all(|&i| iid[i] == iid[first])
}

/// Assigns exactly one type to an address, first match wins:
/// subnet anycast, ISATAP, IEEE-derived, embedded IPv4, embedded port,
/// low byte, pattern bytes, randomized.
pub fn classify_iid(a: Address6, cfg: &AddressClassConfig) -> AddressType {
    let iid = a.iid_bytes();
    if a.iid() == 0 {
        AddressType::SubnetAnycast
    } else if iid[..4] == [0x00, 0x00, 0x5e, 0xfe] || iid[..4] == [0x02, 0x00, 0x5e, 0xfe] {
        AddressType::Isatap
    } else if iid[3] == 0xff && iid[4] == 0xfe {
        AddressType::IeeeDerived
    } else if is_embedded_ipv4(iid) {
        AddressType::EmbeddedIpv4
    } else if is_embedded_port(iid, &cfg.service_ports) {
        AddressType::EmbeddedPort
    } else if iid[..6] == [0; 6] {
        AddressType::LowByte
    } else if is_pattern_bytes(iid) {
        AddressType::PatternBytes
    } else {
        AddressType::Randomized
    }
}

pub fn type_histogram<'a>(
    targets: impl IntoIterator<Item = &'a Address6>,
    cfg: &AddressClassConfig,
) -> BTreeMap<AddressType, usize> {
    let mut h = BTreeMap::new();
    for &t in targets {
        *h.entry(classify_iid(t, cfg)).or_default() += 1;
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressSelection {
    Structured,
    Random,
    Unknown,
}

impl AddressSelection {
    pub fn as_str(self) -> &'static str {
        match self {
            AddressSelection::Structured => "structured",
            AddressSelection::Random => "random",
            AddressSelection::Unknown => "unknown",
        }
    }
}

impl fmt::Display for AddressSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AddressSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(AddressSelection::Structured),
            "random" => Ok(AddressSelection::Random),
            "unknown" => Ok(AddressSelection::Unknown),
            other => Err(Error::Parse(format!("unknown address selection `{other}`"))),
        }
    }
}

/// True when the targets, in arrival order, walk the address space in one
/// direction without revisiting.
pub fn is_monotone_traversal(targets: &[Address6], min_targets: usize) -> bool {
    if targets.len() < min_targets.max(2) {
        return false;
    }
    let increasing = targets.windows(2).all(|w| w[0] < w[1]);
    let decreasing = targets.windows(2).all(|w| w[0] > w[1]);
    increasing || decreasing
}

/// Labels a session's address selection. Structure is checked before
/// randomness; `random_verdict` is `None` when the session was too short to test.
pub fn classify_session_addresses(
    targets: &[Address6],
    random_verdict: Option<bool>,
    cfg: &AddressClassConfig,
) -> AddressSelection {
    if !targets.is_empty() {
        let hist = type_histogram(targets, cfg);
        let dominant = hist
            .iter()
            .filter(|(t, _)| **t != AddressType::Randomized)
            .map(|(_, &n)| n)
            .max()
            .unwrap_or(0);
        if dominant as f64 / targets.len() as f64 >= cfg.structured_threshold {
            return AddressSelection::Structured;
        }
        if is_monotone_traversal(targets, cfg.min_traversal_targets) {
            return AddressSelection::Structured;
        }
    }
    match random_verdict {
        Some(true) => AddressSelection::Random,
        _ => AddressSelection::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classify(s: &str) -> AddressType {
        classify_iid(s.parse().unwrap(), &AddressClassConfig::default())
    }

    #[test]
    fn documented_examples() {
        assert_eq!(classify("2001:db8::1"), AddressType::LowByte);
        assert_eq!(classify("2001:db8::443"), AddressType::EmbeddedPort);
        assert_eq!(classify("2001:db8::192.0.0.1"), AddressType::EmbeddedIpv4);
        assert_eq!(classify("2001:db8:1234:5678::"), AddressType::SubnetAnycast);
        assert_eq!(classify("2001:db8::0200:5eff:fe01:0203"), AddressType::IeeeDerived);
    }

    #[test]
    fn remaining_types() {
        assert_eq!(classify("2001:db8::200:5efe:c000:201"), AddressType::Isatap);
        assert_eq!(classify("2001:db8::5efe:c000:201"), AddressType::Isatap);
        assert_eq!(classify("2001:db8::192:168:1:1"), AddressType::EmbeddedIpv4);
        assert_eq!(classify("2001:db8::1bb"), AddressType::EmbeddedPort);
        assert_eq!(classify("2001:db8::aaaa:aaaa:aaaa:aaaa"), AddressType::PatternBytes);
        assert_eq!(classify("2001:db8::abab:ab00:0:0"), AddressType::PatternBytes);
        assert_eq!(classify("2001:db8::7f3a:91c2:0d4e:b815"), AddressType::Randomized);
        // A single nonzero byte at the low end is low-byte, not a pattern.
        assert_eq!(classify("2001:db8::ff"), AddressType::LowByte);
    }

    #[test]
    fn port_list_decides_low_byte_versus_port() {
        let mut cfg = AddressClassConfig::default();
        let a: Address6 = "2001:db8::80".parse().unwrap();
        assert_eq!(classify_iid(a, &cfg), AddressType::EmbeddedPort);
        cfg.service_ports.retain(|&p| p != 80 && p != 128);
        assert_eq!(classify_iid(a, &cfg), AddressType::LowByte);
    }

    #[test]
    fn anycast_iff_zero_iid() {
        for v in [0u128, 1, 1 << 63, u64::MAX as u128] {
            let a = Address6((0x2001_0db8u128 << 96) | v);
            assert_eq!(classify_iid(a, &AddressClassConfig::default()) == AddressType::SubnetAnycast, v == 0);
        }
    }

    #[test]
    fn session_labels() {
        let cfg = AddressClassConfig::default();
        // ::1 of 17 different prefixes, visited in arbitrary order.
        let lowbyte: Vec<Address6> = (0..17u128)
            .map(|i| Address6((0x2001_0db8u128 << 96) | (((i * 7) % 17) << 80) | 1))
            .collect();
        assert_eq!(
            classify_session_addresses(&lowbyte, None, &cfg),
            AddressSelection::Structured
        );

        let mixed: Vec<Address6> = [
            "2001:db8::1",
            "2001:db8::7f3a:91c2:d4e:b815",
            "2001:db8::192.0.2.1",
            "2001:db8::aaaa:aaaa:aaaa:aaaa",
            "2001:db8:1::",
        ]
        .iter()
        .cycle()
        .take(50)
        .map(|s| s.parse().unwrap())
        .collect();
        assert_eq!(classify_session_addresses(&mixed, None, &cfg), AddressSelection::Unknown);
        assert_eq!(
            classify_session_addresses(&mixed, Some(true), &cfg),
            AddressSelection::Random
        );
    }

    #[test]
    fn traversal_needs_strict_order() {
        let up: Vec<Address6> = (0..5u128).map(|i| Address6(1000 + i * 0x1234_5678_9abc)).collect();
        assert!(is_monotone_traversal(&up, 3));
        let mut down = up.clone();
        down.reverse();
        assert!(is_monotone_traversal(&down, 3));
        let mut shuffled = up.clone();
        shuffled.swap(1, 3);
        assert!(!is_monotone_traversal(&shuffled, 3));
        assert!(!is_monotone_traversal(&up[..2], 3));
    }
}
