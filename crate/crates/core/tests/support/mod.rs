//! Independent oracles and planted corpora shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use darkscope::model::{AggLevel, Address6, Micros, Prefix6, ProbePacket, Proto, MICROS_PER_SEC};
use darkscope::schedule::{generate_schedule, AnnouncementSchedule, ScheduleParams};
use darkscope::simulator::{
    simulate, AddrselSpec, NetselSpec, ProtoMix, ScannerSpec, SimConfig, SimOutput, SimTelescopes, SingleChoice,
    SourceMode, TemporalSpec,
};
pub mod plant_checks;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HOUR: Micros = 3600 * MICROS_PER_SEC;
pub const DAY: Micros = 24 * HOUR;

/// Announced sets per cycle (index 0 is the baseline), as (base bits, length)
/// pairs sorted by base. Splits the base, then always the upper half of the
/// most recent split.
pub fn brute_force_schedule(base: u128, len: u8, cycles: usize) -> Vec<Vec<(u128, u8)>> {
    let mut sets = vec![vec![(base, len)]];
    let mut victim = (base, len);
    for _ in 0..cycles {
        let mut cur: Vec<(u128, u8)> = sets.last().unwrap().iter().copied().filter(|p| *p != victim).collect();
        let child_len = victim.1 + 1;
        let upper = victim.0 + (1u128 << (128 - child_len as u32));
        cur.push((victim.0, child_len));
        cur.push((upper, child_len));
        cur.sort();
        sets.push(cur);
        victim = (upper, child_len);
    }
    sets
}

pub fn prefix_bits(p: &Prefix6) -> (u128, u8) {
    (p.base().0, p.len())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NaiveSession {
    pub source: (AggLevel, u128),
    pub telescope: String,
    pub start: Micros,
    pub end: Micros,
    pub packets: Vec<usize>,
}

/// One global sort by (source, telescope, time, dst, proto, dport, index),
/// then a linear scan that splits on key change or on a gap above `timeout`.
pub fn naive_sessions(packets: &[ProbePacket], level: AggLevel, timeout: Micros) -> Vec<NaiveSession> {
    let keep = match level {
        AggLevel::Addr128 => u128::MAX,
        AggLevel::Net64 => !((1u128 << 64) - 1),
    };
    let mut order: Vec<usize> = (0..packets.len()).collect();
    let key = |i: usize| {
        let p = &packets[i];
        (p.src.0 & keep, p.telescope.clone(), p.ts, p.dst.0, p.proto, p.dport, i)
    };
    order.sort_by_key(|&i| key(i));
    let mut out: Vec<NaiveSession> = Vec::new();
    for i in order {
        let p = &packets[i];
        let src = p.src.0 & keep;
        match out.last_mut() {
            Some(s) if s.source.1 == src && s.telescope == p.telescope && p.ts - s.end <= timeout => {
                s.end = p.ts;
                s.packets.push(i);
            }
            _ => out.push(NaiveSession {
                source: (level, src),
                telescope: p.telescope.clone(),
                start: p.ts,
                end: p.ts,
                packets: vec![i],
            }),
        }
    }
    out
}

/// Random trace with up to `max_packets` packets from up to `max_sources`
/// sources spread over a few /64s and two telescopes. Gaps are drawn around
/// the timeout, including exact boundary values.
pub fn random_trace(rng: &mut ChaCha8Rng, max_packets: usize, max_sources: usize, timeout: Micros) -> Vec<ProbePacket> {
    let n_src = rng.random_range(1..=max_sources);
    let sources: Vec<Address6> = (0..n_src)
        .map(|_| {
            let net = rng.random_range(0..(n_src as u128 / 3 + 1));
            let iid = rng.random_range(1..4u128);
            Address6((0x2001_0db9u128 << 96) | (net << 64) | iid)
        })
        .collect();
    let n = rng.random_range(0..=max_packets);
    let mut clocks: Vec<Micros> = (0..n_src).map(|_| rng.random_range(0..DAY)).collect();
    let protos = [Proto::Icmp6, Proto::Tcp, Proto::Udp];
    (0..n)
        .map(|_| {
            let s = rng.random_range(0..n_src);
            let gap = match rng.random_range(0..10) {
                0 => timeout,
                1 => timeout + 1,
                2 => rng.random_range(timeout / 2..timeout * 3),
                3 => 0,
                _ => rng.random_range(0..60 * MICROS_PER_SEC),
            };
            clocks[s] += gap;
            let proto = protos[rng.random_range(0..3)];
            ProbePacket {
                ts: clocks[s],
                src: sources[s],
                dst: Address6((0x2001_0db8u128 << 96) | rng.random_range(0..16u128)),
                proto,
                sport: None,
                dport: (proto != Proto::Icmp6).then(|| rng.random_range(1..100)),
                icmp_type: (proto == Proto::Icmp6).then_some(128),
                tcp_flags: None,
                payload: Vec::new(),
                telescope: if rng.random_bool(0.8) { "T1".into() } else { "T2".into() },
            }
        })
        .collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A planted simulator corpus for report checks.
pub struct Planted {
    pub schedule: AnnouncementSchedule,
    pub specs: Vec<ScannerSpec>,
    pub sim: SimOutput,
    /// Telescope sets visited per scanner id.
    pub visits: BTreeMap<String, BTreeSet<String>>,
}

pub fn planted_schedule() -> AnnouncementSchedule {
    let params = ScheduleParams {
        cycle_days: 7,
        dark_days: 1,
        baseline_days: 7,
    };
    generate_schedule("2001:db8::/32".parse().unwrap(), 4, 0, params).unwrap()
}

fn base_spec(i: usize, id: &str) -> ScannerSpec {
    ScannerSpec {
        id: id.into(),
        source_mode: SourceMode::Fixed128,
        // One /48 per scanner so discovery onsets are per scanner.
        home: Address6((0x2001_0db9u128 << 96) | ((i as u128 + 1) << 80) | 1),
        temporal: TemporalSpec::Periodic { period_secs: 86400, jitter: 0.0 },
        netsel: NetselSpec::SinglePrefix { choice: SingleChoice::Lowest },
        addrsel: AddrselSpec::LowByteIteration,
        proto_mix: ProtoMix::default(),
        ports: vec![],
        payload: None,
        rate: 10,
        telescopes: vec![],
        active_from: None,
        active_until: None,
    }
}

fn periodic(hours: i64) -> TemporalSpec {
    TemporalSpec::Periodic { period_secs: hours * 3600, jitter: 0.0 }
}

fn only(p: Proto) -> ProtoMix {
    ProtoMix {
        icmp6: (p == Proto::Icmp6) as u8 as f64,
        tcp: (p == Proto::Tcp) as u8 as f64,
        udp: (p == Proto::Udp) as u8 as f64,
    }
}

/// Port plan, protocol mix, one flooder and staggered newest-prefix scanners,
/// all at the scheduled telescope.
pub fn planted_corpus() -> Planted {
    let schedule = planted_schedule();
    let mut specs = Vec::new();
    let push = |specs: &mut Vec<ScannerSpec>, f: &dyn Fn(ScannerSpec) -> ScannerSpec, id: &str| {
        let s = f(base_spec(specs.len(), id));
        specs.push(s);
    };
    let port = |h: i64, p: Proto, port: u16| {
        move |s: ScannerSpec| ScannerSpec {
            temporal: periodic(h),
            proto_mix: only(p),
            ports: vec![port],
            ..s
        }
    };
    push(&mut specs, &port(6, Proto::Tcp, 80), "tcp80");
    push(&mut specs, &port(12, Proto::Tcp, 443), "tcp443");
    push(&mut specs, &port(24, Proto::Tcp, 22), "tcp22");
    push(&mut specs, &port(8, Proto::Udp, 33434), "udp_tr1");
    push(&mut specs, &port(24, Proto::Udp, 33500), "udp_tr2");
    push(&mut specs, &port(12, Proto::Udp, 53), "udp53");
    push(
        &mut specs,
        &|s| ScannerSpec {
            temporal: periodic(24),
            proto_mix: ProtoMix { icmp6: 0.6, tcp: 0.3, udp: 0.1 },
            ports: vec![8080],
            ..s
        },
        "mix",
    );
    push(
        &mut specs,
        &|s| ScannerSpec {
            temporal: TemporalSpec::OneOff,
            rate: 20_000,
            ..s
        },
        "flooder",
    );
    // Staggered onsets: one newest-prefix scanner starting in each cycle.
    for c in 1..=4usize {
        let from = schedule.cycle(c).unwrap().window.start;
        push(
            &mut specs,
            &move |s| ScannerSpec {
                temporal: periodic(24),
                netsel: NetselSpec::SinglePrefix { choice: SingleChoice::Newest },
                active_from: Some(from),
                ..s
            },
            &format!("newest{c}"),
        );
    }
    finish(schedule, specs)
}

/// Scanners with planted telescope sets: {T1,T2}, {T2,T3}, {T1,T2,T3}, {T3}, {T2}.
pub fn multi_telescope_corpus() -> Planted {
    let schedule = planted_schedule();
    let mut specs: Vec<ScannerSpec> = Vec::new();
    let push = |specs: &mut Vec<ScannerSpec>, f: &dyn Fn(ScannerSpec) -> ScannerSpec, id: &str| {
        let s = f(base_spec(specs.len(), id));
        specs.push(s);
    };
    let sets: [&[&str]; 5] = [&["T1", "T2"], &["T2", "T3"], &["T1", "T2", "T3"], &["T3"], &["T2"]];
    for (i, set) in sets.iter().enumerate() {
        let tels: Vec<String> = set.iter().map(|s| s.to_string()).collect();
        push(
            &mut specs,
            &move |s| ScannerSpec {
                temporal: periodic(48),
                telescopes: tels.clone(),
                ..s
            },
            &format!("multi{i}"),
        );
    }
    finish(schedule, specs)
}

fn finish(schedule: AnnouncementSchedule, specs: Vec<ScannerSpec>) -> Planted {
    let mut telescopes = SimTelescopes::single("T1", &schedule);
    telescopes.fixed.insert("T2".into(), "2a00:1::/48".parse().unwrap());
    telescopes.fixed.insert("T3".into(), "2a00:2::/48".parse().unwrap());
    let sim = simulate(&specs, &schedule, &telescopes, 11, &SimConfig::default()).unwrap();
    let visits = specs
        .iter()
        .map(|s| {
            let set: BTreeSet<String> = if s.telescopes.is_empty() {
                ["T1".to_string()].into()
            } else {
                s.telescopes.iter().cloned().collect()
            };
            (s.id.clone(), set)
        })
        .collect();
    Planted {
        schedule,
        specs,
        sim,
        visits,
    }
}

/// Compares `sessionize` with `naive_sessions` and checks the partition and
/// gap invariants.
pub fn check_sessions(packets: &[ProbePacket], level: AggLevel, timeout: Micros) -> Result<(), String> {
    use darkscope::sessionizer::{sessionize, SessionizerConfig};
    let ours = sessionize(packets, &SessionizerConfig::new(timeout, level).unwrap());
    let oracle = naive_sessions(packets, level, timeout);
    if ours.len() != oracle.len() {
        return Err(format!("{} sessions, oracle {}", ours.len(), oracle.len()));
    }
    let mut seen = vec![0u8; packets.len()];
    for (i, (s, o)) in ours.iter().zip(&oracle).enumerate() {
        let same = s.id == i as u64
            && (s.source.level, s.source.value.0) == o.source
            && s.telescope == o.telescope
            && (s.start, s.end) == (o.start, o.end)
            && s.packets == o.packets
            && s.packet_count == o.packets.len();
        if !same {
            return Err(format!("session {i} differs: {s:?} vs {o:?}"));
        }
        if s.packets.windows(2).any(|w| packets[w[1]].ts - packets[w[0]].ts > timeout) {
            return Err(format!("session {i} has a gap above the timeout"));
        }
        for &p in &s.packets {
            seen[p] += 1;
        }
    }
    if seen.iter().any(|&c| c != 1) {
        return Err("not a partition".into());
    }
    for w in ours.windows(2) {
        if w[0].source == w[1].source && w[0].telescope == w[1].telescope && w[1].start - w[0].end <= timeout {
            return Err(format!("sessions {} and {} should merge", w[0].id, w[1].id));
        }
    }
    Ok(())
}
