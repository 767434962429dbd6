//! Report checks on the planted corpora, against values fixed by the scanner
//! specs and independently recomputed counts. Each check panics on mismatch.

use std::collections::{BTreeMap, BTreeSet};

use darkscope::model::{AggLevel, Proto, MICROS_PER_SEC};
use darkscope::report::{
    heavy_hitters, new_prefix_discovery, packet_counts_from_packets, per_prefix_cumulative, protocol_table,
    source_intersections, telescope_sets, top_ports, IntersectionKey, PortKey,
};
use darkscope::schedule::Window;
use darkscope::sessionizer::{sessionize, ScanSession, SessionizerConfig};

use super::{brute_force_schedule, naive_sessions, prefix_bits, Planted, DAY};

const T: i64 = 3600 * MICROS_PER_SEC;

pub fn sessions(p: &Planted, level: AggLevel) -> Vec<ScanSession> {
    sessionize(&p.sim.packets, &SessionizerConfig::new(T, level).unwrap())
}

pub fn truth_sessions(p: &Planted) -> BTreeMap<&str, u64> {
    p.sim.truth.iter().map(|t| (t.scanner.as_str(), t.sessions as u64)).collect()
}

pub fn protocols(p: &Planted) {
    
    let s = truth_sessions(p);
    let newest: u64 = (1..=4).map(|c| s[format!("newest{c}").as_str()]).sum();
    // Ten packets per session split by smooth weighted round robin: the mix
    // scanner sends 6 ICMPv6, 3 TCP and 1 UDP packet every session.
    let expect = [
        (Proto::Icmp6, 6 * s["mix"] + 20_000 * s["flooder"] + 10 * newest, s["mix"] + s["flooder"] + newest, 6),
        (Proto::Tcp, 10 * (s["tcp80"] + s["tcp443"] + s["tcp22"]) + 3 * s["mix"], s["tcp80"] + s["tcp443"] + s["tcp22"] + s["mix"], 4),
        (Proto::Udp, 10 * (s["udp_tr1"] + s["udp_tr2"] + s["udp53"]) + s["mix"], s["udp_tr1"] + s["udp_tr2"] + s["udp53"] + s["mix"], 4),
    ];
    let rows = protocol_table(&sessions(p, AggLevel::Net64));
    assert_eq!(rows.len(), 3);
    for (proto, packets, n_sessions, sources) in expect {
        let r = rows.iter().find(|r| r.proto == proto).unwrap();
        assert_eq!((r.packets, r.sessions, r.sources), (packets, n_sessions, sources), "{proto:?}");
    }
    let raw: u64 = p.sim.packets.len() as u64;
    assert_eq!(rows.iter().map(|r| r.packets).sum::<u64>(), raw);
}

pub fn ports(p: &Planted) {
    
    let s = truth_sessions(p);
    let rank = |mut v: Vec<(PortKey, u64)>| {
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    };
    let tcp = rank(vec![
        (PortKey::Port(80), s["tcp80"]),
        (PortKey::Port(443), s["tcp443"]),
        (PortKey::Port(22), s["tcp22"]),
        (PortKey::Port(8080), s["mix"]),
    ]);
    let udp = rank(vec![
        (PortKey::Traceroute, s["udp_tr1"] + s["udp_tr2"]),
        (PortKey::Port(53), s["udp53"]),
        (PortKey::Port(8080), s["mix"]),
    ]);
    // Periods fix the order: 6h, 8h+24h, 12h, 24h.
    assert_eq!(tcp[0].0, PortKey::Port(80));
    assert_eq!(udp[0].0, PortKey::Traceroute);
    let rows = top_ports(&sessions(p, AggLevel::Net64), 10).unwrap();
    for (proto, expected) in [(Proto::Tcp, tcp), (Proto::Udp, udp)] {
        let got: Vec<(PortKey, u64)> = rows.iter().filter(|r| r.proto == proto).map(|r| (r.port, r.sessions)).collect();
        assert_eq!(got, expected, "{proto:?}");
        let ranks: Vec<usize> = rows.iter().filter(|r| r.proto == proto).map(|r| r.rank).collect();
        assert_eq!(ranks, (1..=ranks.len()).collect::<Vec<_>>());
    }
    assert!(top_ports(&sessions(p, AggLevel::Addr128), 10).is_err());
}

pub fn flooder(p: &Planted, share: f64) {
    
    let mut per_tel: BTreeMap<(&str, u128), u64> = BTreeMap::new();
    for pk in &p.sim.packets {
        *per_tel.entry((pk.telescope.as_str(), pk.src.0)).or_default() += 1;
    }
    let total: u64 = per_tel.values().sum();
    let oracle: Vec<u128> = per_tel
        .iter()
        .filter(|(_, &n)| n as f64 / total as f64 > share)
        .map(|((_, a), _)| *a)
        .collect();
    let flooder = p.specs.iter().find(|s| s.id == "flooder").unwrap().home;
    assert_eq!(oracle, vec![flooder.0]);
    let got = heavy_hitters(&packet_counts_from_packets(&p.sim.packets), share);
    assert_eq!(got.len(), 1);
    assert_eq!((got[0].source, got[0].packets, got[0].telescope_packets), (flooder, 20_000, total));
}

pub fn cumulative(p: &Planted) {
    
    let sched = &p.schedule;
    let brute = brute_force_schedule(sched.base.base().0, sched.base.len(), sched.cycles.len());
    let start = sched.baseline.start;
    let days = ((sched.end() - start + DAY - 1) / DAY) as usize;
    // Live windows per cycle index, dark periods excluded.
    let mut live = vec![(0usize, sched.baseline)];
    live.extend(sched.cycles.iter().map(|c| (c.index, c.window)));
    let mut daily: BTreeMap<(u128, u8), Vec<u64>> = BTreeMap::new();
    for set in &brute {
        for &pr in set {
            daily.entry(pr).or_insert_with(|| vec![0; days]);
        }
    }
    for s in naive_sessions(&p.sim.packets, AggLevel::Net64, T) {
        let Some(&(idx, _)) = live.iter().find(|(_, w)| w.contains(s.start)) else { continue };
        let mut hit = BTreeSet::new();
        for &i in &s.packets {
            let dst = p.sim.packets[i].dst.0;
            let best = brute[idx]
                .iter()
                .filter(|(b, l)| *l == 0 || (dst ^ b) >> (128 - *l as u32) == 0)
                .max_by_key(|(_, l)| *l);
            if let Some(&pr) = best {
                hit.insert(pr);
            }
        }
        let day = ((s.start - start) / DAY) as usize;
        for pr in hit {
            daily.get_mut(&pr).unwrap()[day] += 1;
        }
    }
    let got = per_prefix_cumulative(&sessions(p, AggLevel::Net64), sched);
    assert_eq!(got.len(), days * daily.len());
    let mut running: BTreeMap<(u128, u8), u64> = BTreeMap::new();
    for day in 0..days {
        for (pr, v) in &daily {
            *running.entry(*pr).or_default() += v[day];
        }
        for row in got.iter().filter(|r| r.day == day) {
            assert_eq!(row.sessions, running[&prefix_bits(&row.prefix)], "day {day} {}", row.prefix);
        }
    }
    // Nothing accrues to a prefix before the cycle that first announces it.
    for c in &sched.cycles {
        let first_day = ((c.window.start - start) / DAY) as usize;
        for pr in c.new_pair {
            let before = got.iter().filter(|r| r.prefix == pr && r.day < first_day);
            assert!(before.clone().all(|r| r.sessions == 0), "{pr} before cycle {}", c.index);
        }
        assert!(
            c.new_pair.iter().any(|pr| got.iter().any(|r| r.prefix == *pr && r.sessions > 0)),
            "cycle {} pair never hit",
            c.index
        );
    }
}

pub fn discovery(p: &Planted) {
    
    let sched = &p.schedule;
    let window = Window::new(sched.baseline.start, sched.end());
    let days = ((window.end - window.start + DAY - 1) / DAY) as usize;
    let mut first: BTreeMap<u128, i64> = BTreeMap::new();
    for pk in &p.sim.packets {
        let e = first.entry(pk.src.0 >> 80).or_insert(pk.ts);
        *e = (*e).min(pk.ts);
    }
    let mut expected = vec![0u64; days];
    for ts in first.values() {
        expected[((ts - window.start) / DAY) as usize] += 1;
    }
    // The staggered scanners each appear on the first live day of their cycle.
    for c in 1..=4usize {
        let day = ((sched.cycle(c).unwrap().window.start - window.start) / DAY) as usize;
        assert!(expected[day] >= 1, "cycle {c}");
    }
    let got: Vec<u64> = new_prefix_discovery(&sessions(p, AggLevel::Addr128), window, 48)
        .into_iter()
        .map(|d| d.new_prefixes)
        .collect();
    assert_eq!(got, expected);
    assert_eq!(got.iter().sum::<u64>(), p.specs.len() as u64);
}

pub fn intersections(p: &Planted) {
    
    let mut exclusive: BTreeMap<String, u64> = BTreeMap::new();
    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    for set in p.visits.values() {
        *exclusive.entry(set.iter().cloned().collect::<Vec<_>>().join("&")).or_default() += 1;
        for t in set {
            *totals.entry(t.clone()).or_default() += 1;
        }
    }
    let sets = telescope_sets(&sessions(p, AggLevel::Addr128), IntersectionKey::Addr128, None).unwrap();
    let rows = source_intersections(&sets).unwrap();
    let pick = |kind: &str| -> BTreeMap<String, u64> {
        rows.iter().filter(|r| r.kind == kind).map(|r| (r.combination.clone(), r.count)).collect()
    };
    assert_eq!(pick("exclusive"), exclusive);
    assert_eq!(pick("total"), totals);
    assert_eq!(totals, BTreeMap::from([("T1".into(), 2), ("T2".into(), 4), ("T3".into(), 3)]));
    assert!(telescope_sets(&sessions(p, AggLevel::Addr128), IntersectionKey::Asn, None).is_err());
}
