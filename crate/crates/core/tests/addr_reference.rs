//! Address types against a pinned reference decoder run.

use std::collections::BTreeMap;

use darkscope::addrclass::{classify_iid, AddressClassConfig, AddressType};
use darkscope::model::Address6;

const REFERENCE: &str = include_str!("fixtures/addr6_reference.tsv");
const DISAGREEMENTS: &str = include_str!("fixtures/addr6_disagreements.tsv");

fn rows(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split('\t').collect())
}

#[test]
fn worked_examples() {
    let cfg = AddressClassConfig::default();
    for (a, t) in [
        ("2001:db8::1", AddressType::LowByte),
        ("2001:db8::443", AddressType::EmbeddedPort),
        ("2001:db8::192.0.0.1", AddressType::EmbeddedIpv4),
        ("2001:db8::", AddressType::SubnetAnycast),
        ("2001:db8:0:1::", AddressType::SubnetAnycast),
    ] {
        assert_eq!(classify_iid(a.parse::<Address6>().unwrap(), &cfg), t, "{a}");
    }
}

#[test]
fn agrees_with_reference_and_documents_every_disagreement() {
    let cfg = AddressClassConfig::default();
    let documented: BTreeMap<&str, (&str, &str)> = rows(DISAGREEMENTS).map(|r| (r[0], (r[1], r[2]))).collect();
    let mut total = 0;
    let mut found = BTreeMap::new();
    for r in rows(REFERENCE) {
        total += 1;
        let ours = classify_iid(r[0].parse().unwrap(), &cfg).to_string();
        if ours != r[1] {
            found.insert(r[0], (r[1], ours));
        }
    }
    assert_eq!(total, 200);
    let agreement = 1.0 - found.len() as f64 / total as f64;
    println!("agreement {agreement:.3} ({} disagreements)", found.len());
    assert!(agreement >= 0.95, "agreement {agreement}");
    let found_ref: BTreeMap<&str, (&str, &str)> = found.iter().map(|(k, (a, b))| (*k, (*a, b.as_str()))).collect();
    assert_eq!(found_ref, documented, "disagreements differ from the documented list");
}
