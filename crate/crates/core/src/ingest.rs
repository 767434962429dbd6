//! Capture ingest: NDJSON and pcap/pcapng readers producing [`ProbePacket`]s,
//! plus offline enrichment of scan sources.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::debug;
use pcap_parser::pcapng::Block;
use pcap_parser::{create_reader, Linktype, PcapBlockOwned, PcapError};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AggLevel, Address6, Micros, Prefix6, PrefixMap, ProbePacket, Proto, SourceKey, TcpFlags,
};
use crate::timefmt;

pub const DEFAULT_PAYLOAD_CAP: usize = 256;

#[derive(Clone, Debug)]
pub struct IngestOptions {
    /// Packets whose source or destination lies in any of these are dropped.
    pub exclude: Vec<Prefix6>,
    pub payload_cap: usize,
    /// Telescope id stamped on pcap packets (NDJSON records carry their own).
    pub telescope: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            exclude: Vec::new(),
            payload_cap: DEFAULT_PAYLOAD_CAP,
            telescope: "T1".to_string(),
        }
    }
}

impl IngestOptions {
    fn is_excluded(&self, p: &ProbePacket) -> bool {
        self.exclude
            .iter()
            .any(|x| x.contains(p.src) || x.contains(p.dst))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for Reject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub accepted: usize,
    pub rejects: Vec<Reject>,
    pub excluded: usize,
    pub skipped_non_ipv6: usize,
    pub skipped_fragments: usize,
    pub skipped_other: usize,
}

/// One NDJSON line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WireRecord {
    #[serde(with = "timefmt::flexible")]
    pub ts: Micros,
    pub src: String,
    pub dst: String,
    pub proto: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sport: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dport: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icmp_type: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcp_flags: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_hex: Option<String>,
    pub telescope: String,
}

impl From<&ProbePacket> for WireRecord {
    fn from(p: &ProbePacket) -> Self {
        WireRecord {
            ts: p.ts,
            src: p.src.to_string(),
            dst: p.dst.to_string(),
            proto: p.proto.to_string(),
            sport: p.sport,
            dport: p.dport,
            icmp_type: p.icmp_type,
            tcp_flags: p.tcp_flags.map(|f| f.to_string()),
            payload_hex: (!p.payload.is_empty()).then(|| hex::encode(&p.payload)),
            telescope: p.telescope.clone(),
        }
    }
}

impl WireRecord {
    pub fn into_packet(self, payload_cap: usize) -> Result<ProbePacket> {
        let mut payload = match self.payload_hex.as_deref() {
            Some(h) => hex::decode(h).map_err(|e| Error::Parse(format!("payload_hex: {e}")))?,
            None => Vec::new(),
        };
        payload.truncate(payload_cap);
        let pkt = ProbePacket {
            ts: self.ts,
            src: self.src.parse()?,
            dst: self.dst.parse()?,
            proto: self.proto.parse()?,
            sport: self.sport,
            dport: self.dport,
            icmp_type: self.icmp_type,
            tcp_flags: self.tcp_flags.as_deref().map(TcpFlags::from_str).transpose()?,
            payload,
            telescope: self.telescope,
        };
        pkt.validate()?;
        Ok(pkt)
    }
}

/// Streams NDJSON records as `(line number, outcome)`; blank lines are skipped.
pub struct NdjsonRecords<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    payload_cap: usize,
}

impl<R: BufRead> NdjsonRecords<R> {
    pub fn new(reader: R, payload_cap: usize) -> Self {
        NdjsonRecords {
            lines: reader.lines(),
            line_no: 0,
            payload_cap,
        }
    }
}

impl<R: BufRead> Iterator for NdjsonRecords<R> {
    type Item = std::io::Result<(usize, Result<ProbePacket>)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e)),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let outcome = serde_json::from_str::<WireRecord>(&line)
                .map_err(Error::from)
                .and_then(|r| r.into_packet(self.payload_cap));
            return Some(Ok((self.line_no, outcome)));
        }
    }
}

/// Reads a whole NDJSON stream. Bad lines are collected as rejects and
/// processing continues; only I/O failures abort.
pub fn read_ndjson<R: BufRead>(
    reader: R,
    opts: &IngestOptions,
) -> Result<(Vec<ProbePacket>, IngestSummary)> {
    let mut packets = Vec::new();
    let mut summary = IngestSummary::default();
    for item in NdjsonRecords::new(reader, opts.payload_cap) {
        let (line, outcome) = item?;
        match outcome {
            Ok(p) if opts.is_excluded(&p) => summary.excluded += 1,
            Ok(p) => packets.push(p),
            Err(e) => summary.rejects.push(Reject {
                line,
                reason: e.to_string(),
            }),
        }
    }
    summary.accepted = packets.len();
    Ok((packets, summary))
}

pub fn write_ndjson<'a, W: Write>(
    mut w: W,
    packets: impl IntoIterator<Item = &'a ProbePacket>,
) -> Result<()> {
    for p in packets {
        serde_json::to_writer(&mut w, &WireRecord::from(p))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Auto,
    Pcap,
    Ndjson,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(InputFormat::Auto),
            "pcap" | "pcapng" => Ok(InputFormat::Pcap),
            "ndjson" | "json" => Ok(InputFormat::Ndjson),
            other => Err(Error::Parse(format!("unknown input format `{other}`"))),
        }
    }
}

/// Sniffs pcap and pcapng magic numbers; everything else is NDJSON.
pub fn detect_format(head: &[u8]) -> InputFormat {
    const MAGICS: [[u8; 4]; 5] = [
        [0xd4, 0xc3, 0xb2, 0xa1],
        [0xa1, 0xb2, 0xc3, 0xd4],
        [0x4d, 0x3c, 0xb2, 0xa1],
        [0xa1, 0xb2, 0x3c, 0x4d],
        [0x0a, 0x0d, 0x0d, 0x0a],
    ];
    if head.len() >= 4 && MAGICS.iter().any(|m| head[..4] == *m) {
        InputFormat::Pcap
    } else {
        InputFormat::Ndjson
    }
}

/// Result of reading a capture: everything parsed before any failure.
#[derive(Debug)]
pub struct PcapIngest {
    pub packets: Vec<ProbePacket>,
    pub summary: IngestSummary,
    /// Set when the capture ended mid-record or was otherwise unreadable.
    pub error: Option<Error>,
}

enum FrameOutcome {
    Packet(ProbePacket),
    NotIpv6,
    Fragment,
    Other,
}

struct Interface {
    linktype: Linktype,
    resolution: u64,
    offset: i64,
}

pub fn read_pcap<R: Read>(reader: R, opts: &IngestOptions) -> PcapIngest {
    let mut out = PcapIngest {
        packets: Vec::new(),
        summary: IngestSummary::default(),
        error: None,
    };
    let mut rdr = match create_reader(1 << 20, reader) {
        Ok(r) => r,
        Err(PcapError::Eof) => return out,
        Err(e) => {
            out.error = Some(Error::Parse(format!("not a capture file: {e}")));
            return out;
        }
    };
    let mut legacy: Option<(Linktype, bool)> = None;
    let mut interfaces: Vec<Interface> = Vec::new();

    loop {
        match rdr.next() {
            Ok((offset, block)) => {
                let framed = match block {
                    PcapBlockOwned::LegacyHeader(h) => {
                        legacy = Some((h.network, h.is_nanosecond_precision()));
                        None
                    }
                    PcapBlockOwned::Legacy(b) => {
                        let (link, nanos) = legacy.unwrap_or((Linktype::ETHERNET, false));
                        let frac = if nanos {
                            b.ts_usec as i64 / 1000
                        } else {
                            b.ts_usec as i64
                        };
                        let ts = b.ts_sec as i64 * 1_000_000 + frac;
                        let data = &b.data[..(b.caplen as usize).min(b.data.len())];
                        Some(parse_frame(link, data, ts, opts))
                    }
                    PcapBlockOwned::NG(Block::SectionHeader(_)) => {
                        interfaces.clear();
                        None
                    }
                    PcapBlockOwned::NG(Block::InterfaceDescription(idb)) => {
                        interfaces.push(Interface {
                            linktype: idb.linktype,
                            resolution: idb.ts_resolution().unwrap_or(1_000_000),
                            offset: idb.ts_offset(),
                        });
                        None
                    }
                    PcapBlockOwned::NG(Block::EnhancedPacket(epb)) => {
                        match interfaces.get(epb.if_id as usize) {
                            Some(iface) => {
                                let raw = ((epb.ts_high as u64) << 32) | epb.ts_low as u64;
                                let secs = (raw / iface.resolution) as i64 + iface.offset;
                                let frac = (raw % iface.resolution) as i128 * 1_000_000
                                    / iface.resolution as i128;
                                let ts = secs * 1_000_000 + frac as i64;
                                let data = &epb.data[..(epb.caplen as usize).min(epb.data.len())];
                                Some(parse_frame(iface.linktype, data, ts, opts))
                            }
                            None => Some(FrameOutcome::Other),
                        }
                    }
                    PcapBlockOwned::NG(Block::SimplePacket(spb)) => {
                        let link = interfaces
                            .first()
                            .map(|i| i.linktype)
                            .unwrap_or(Linktype::ETHERNET);
                        // Simple packet blocks carry no timestamp.
                        Some(parse_frame(link, spb.data, 0, opts))
                    }
                    PcapBlockOwned::NG(_) => None,
                };
                if let Some(outcome) = framed {
                    out.record(outcome, opts);
                }
                rdr.consume(offset);
            }
            Err(PcapError::Eof) => break,
            Err(PcapError::Incomplete(_)) => {
                if rdr.reader_exhausted() {
                    out.error = Some(Error::TruncatedCapture {
                        parsed: out.packets.len(),
                        reason: "capture ends inside a record".into(),
                    });
                    break;
                }
                if let Err(e) = rdr.refill() {
                    out.error = Some(Error::TruncatedCapture {
                        parsed: out.packets.len(),
                        reason: e.to_string(),
                    });
                    break;
                }
            }
            Err(e) => {
                out.error = Some(Error::TruncatedCapture {
                    parsed: out.packets.len(),
                    reason: e.to_string(),
                });
                break;
            }
        }
    }
    out.summary.accepted = out.packets.len();
    out
}

impl PcapIngest {
    fn record(&mut self, outcome: FrameOutcome, opts: &IngestOptions) {
        match outcome {
            FrameOutcome::Packet(p) if opts.is_excluded(&p) => self.summary.excluded += 1,
            FrameOutcome::Packet(p) => self.packets.push(p),
            FrameOutcome::NotIpv6 => self.summary.skipped_non_ipv6 += 1,
            FrameOutcome::Fragment => self.summary.skipped_fragments += 1,
            FrameOutcome::Other => self.summary.skipped_other += 1,
        }
    }
}

const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;

fn be16(b: &[u8], at: usize) -> Option<u16> {
    b.get(at..at + 2).map(|s| u16::from_be_bytes([s[0], s[1]]))
}

fn parse_frame(link: Linktype, data: &[u8], ts: Micros, opts: &IngestOptions) -> FrameOutcome {
    let ip = match link {
        Linktype::ETHERNET => {
            let mut off = 12;
            let mut ethertype = be16(data, off);
            while ethertype == Some(ETHERTYPE_VLAN) {
                off += 4;
                ethertype = be16(data, off);
            }
            match ethertype {
                Some(ETHERTYPE_IPV6) => &data[off + 2..],
                _ => return FrameOutcome::NotIpv6,
            }
        }
        Linktype::RAW | Linktype::IPV6 => data,
        Linktype::IPV4 => return FrameOutcome::NotIpv6,
        Linktype::LINUX_SLL => match be16(data, 14) {
            Some(ETHERTYPE_IPV6) => &data[16.min(data.len())..],
            _ => return FrameOutcome::NotIpv6,
        },
        Linktype::LINUX_SLL2 => match be16(data, 0) {
            Some(ETHERTYPE_IPV6) => &data[20.min(data.len())..],
            _ => return FrameOutcome::NotIpv6,
        },
        Linktype::NULL | Linktype::LOOP => {
            // Address family in host (NULL) or network (LOOP) byte order.
            let fam = match data.get(..4) {
                Some(b) if link == Linktype::NULL => u32::from_le_bytes([b[0], b[1], b[2], b[3]]),
                Some(b) => u32::from_be_bytes([b[0], b[1], b[2], b[3]]),
                None => return FrameOutcome::Other,
            };
            match fam {
                10 | 24 | 28 | 30 => &data[4..],
                _ => return FrameOutcome::NotIpv6,
            }
        }
        other => {
            debug!("unsupported link type {other}");
            return FrameOutcome::Other;
        }
    };
    parse_ipv6(ip, ts, opts)
}

fn parse_ipv6(ip: &[u8], ts: Micros, opts: &IngestOptions) -> FrameOutcome {
    if ip.len() < 40 || ip[0] >> 4 != 6 {
        return if ip.first().map(|b| b >> 4) == Some(4) {
            FrameOutcome::NotIpv6
        } else {
            FrameOutcome::Other
        };
    }
    let payload_len = be16(ip, 4).unwrap_or(0) as usize;
    let end = (40 + payload_len).min(ip.len());
    let src = Address6(u128::from_be_bytes(ip[8..24].try_into().unwrap()));
    let dst = Address6(u128::from_be_bytes(ip[24..40].try_into().unwrap()));

    let mut next = ip[6];
    let mut off = 40;
    loop {
        match next {
            // hop-by-hop, routing, destination options
            0 | 43 | 60 => {
                let Some(hdr) = ip.get(off..off + 2) else {
                    return FrameOutcome::Other;
                };
                next = hdr[0];
                off += (hdr[1] as usize + 1) * 8;
            }
            44 => {
                let Some(hdr) = ip.get(off..off + 8) else {
                    return FrameOutcome::Other;
                };
                let frag_offset = u16::from_be_bytes([hdr[2], hdr[3]]) >> 3;
                if frag_offset != 0 {
                    return FrameOutcome::Fragment;
                }
                next = hdr[0];
                off += 8;
            }
            // authentication header
            51 => {
                let Some(hdr) = ip.get(off..off + 2) else {
                    return FrameOutcome::Other;
                };
                next = hdr[0];
                off += (hdr[1] as usize + 2) * 4;
            }
            _ => break,
        }
    }
    if off > end {
        return FrameOutcome::Other;
    }
    let l4 = &ip[off..end];
    let cap = opts.payload_cap;
    let body = |from: usize| l4.get(from..).map(|b| b[..b.len().min(cap)].to_vec());

    let mut pkt = ProbePacket {
        ts,
        src,
        dst,
        proto: Proto::Icmp6,
        sport: None,
        dport: None,
        icmp_type: None,
        tcp_flags: None,
        payload: Vec::new(),
        telescope: opts.telescope.clone(),
    };
    match next {
        6 => {
            if l4.len() < 20 {
                return FrameOutcome::Other;
            }
            let data_off = ((l4[12] >> 4) as usize * 4).max(20);
            pkt.proto = Proto::Tcp;
            pkt.sport = be16(l4, 0);
            pkt.dport = be16(l4, 2);
            pkt.tcp_flags = Some(TcpFlags(l4[13] & 0x3f));
            pkt.payload = body(data_off).unwrap_or_default();
        }
        17 => {
            if l4.len() < 8 {
                return FrameOutcome::Other;
            }
            pkt.proto = Proto::Udp;
            pkt.sport = be16(l4, 0);
            pkt.dport = be16(l4, 2);
            pkt.payload = body(8).unwrap_or_default();
        }
        58 => {
            if l4.len() < 4 {
                return FrameOutcome::Other;
            }
            pkt.icmp_type = Some(l4[0]);
            pkt.payload = body(8).unwrap_or_default();
        }
        _ => return FrameOutcome::Other,
    }
    FrameOutcome::Packet(pkt)
}

/// Network type categories used for source attribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NetType {
    Hosting,
    Isp,
    Education,
    Business,
    Government,
    #[default]
    Unknown,
}

impl FromStr for NetType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hosting" => Ok(NetType::Hosting),
            "isp" => Ok(NetType::Isp),
            "education" => Ok(NetType::Education),
            "business" => Ok(NetType::Business),
            "government" => Ok(NetType::Government),
            "unknown" => Ok(NetType::Unknown),
            other => Err(Error::Parse(format!("unknown network type `{other}`"))),
        }
    }
}

impl fmt::Display for NetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetType::Hosting => "hosting",
            NetType::Isp => "isp",
            NetType::Education => "education",
            NetType::Business => "business",
            NetType::Government => "government",
            NetType::Unknown => "unknown",
        })
    }
}

/// Offline snapshots standing in for ASN, geolocation, network type and RDNS services.
#[derive(Clone, Debug, Default)]
pub struct EnrichmentMaps {
    pub asn: PrefixMap<u32>,
    pub geo: PrefixMap<String>,
    pub nettype: PrefixMap<NetType>,
    pub rdns: HashMap<Address6, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SourceMeta {
    pub key: SourceKey,
    pub asn: Option<u32>,
    pub country: Option<String>,
    pub nettype: NetType,
    pub rdns: Option<String>,
}

pub fn enrich(key: SourceKey, maps: &EnrichmentMaps) -> SourceMeta {
    SourceMeta {
        key,
        asn: maps.asn.get(key.value).copied(),
        country: maps.geo.get(key.value).cloned(),
        nettype: maps.nettype.get(key.value).copied().unwrap_or_default(),
        rdns: match key.level {
            AggLevel::Addr128 => maps.rdns.get(&key.value).cloned(),
            AggLevel::Net64 => None,
        },
    }
}

fn read_pairs<R: Read>(r: R) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        match (rec.get(0), rec.get(1)) {
            (Some(k), Some(v)) => out.push((k.to_string(), v.to_string())),
            _ => return Err(Error::Parse(format!("expected two columns, got {rec:?}"))),
        }
    }
    Ok(out)
}

/// Loads a `(prefix, value)` CSV into a prefix map.
pub fn load_prefix_csv<R: Read, T: FromStr>(r: R) -> Result<PrefixMap<T>>
where
    T::Err: fmt::Display,
{
    read_pairs(r)?
        .into_iter()
        .map(|(p, v)| {
            let prefix: Prefix6 = p.parse()?;
            let value = v
                .parse::<T>()
                .map_err(|e| Error::Parse(format!("value `{v}`: {e}")))?;
            Ok((prefix, value))
        })
        .collect()
}

/// Loads an `(address, name)` CSV.
pub fn load_rdns_csv<R: Read>(r: R) -> Result<HashMap<Address6, String>> {
    read_pairs(r)?
        .into_iter()
        .map(|(a, n)| Ok((a.parse()?, n)))
        .collect()
}

impl EnrichmentMaps {
    pub fn load(
        asn: Option<&Path>,
        geo: Option<&Path>,
        nettype: Option<&Path>,
        rdns: Option<&Path>,
    ) -> Result<Self> {
        let open = |p: &Path| std::fs::File::open(p).map_err(Error::from);
        Ok(EnrichmentMaps {
            asn: asn.map(|p| load_prefix_csv(open(p)?)).transpose()?.unwrap_or_default(),
            geo: geo.map(|p| load_prefix_csv(open(p)?)).transpose()?.unwrap_or_default(),
            nettype: nettype
                .map(|p| load_prefix_csv(open(p)?))
                .transpose()?
                .unwrap_or_default(),
            rdns: rdns.map(|p| load_rdns_csv(open(p)?)).transpose()?.unwrap_or_default(),
        })
    }
}
