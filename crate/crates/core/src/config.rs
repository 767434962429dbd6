//! Run configuration: a TOML file with one table per stage.
//!
//! Any key can be overridden from the environment as
//! `DARKSCOPE_<SECTION>__<KEY>=<value>` (case-insensitive); the value is read
//! as a TOML literal when it parses as one and as a string otherwise.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::addrclass::{AddressClassConfig, DEFAULT_SERVICE_PORTS};
use crate::dbscan::ClusteringParams;
use crate::error::{Error, Result};
use crate::ingest::DEFAULT_PAYLOAD_CAP;
use crate::model::{AggLevel, Prefix6, MICROS_PER_SEC};
use crate::netsel::NetselConfig;
use crate::randomness::RandomnessConfig;
use crate::schedule::ScheduleParams;
use crate::sessionizer::SessionizerConfig;
use crate::simulator::SimConfig;
use crate::temporal::TemporalConfig;

pub const ENV_PREFIX: &str = "DARKSCOPE_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionsSection {
    pub timeout_secs: i64,
    #[serde(with = "level_text")]
    pub level: AggLevel,
}

/// Accepts `level = "64"` as well as `level = 64`.
mod level_text {
    use super::AggLevel;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(l: &AggLevel, s: S) -> Result<S::Ok, S::Error> {
        l.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AggLevel, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Int(i) => i.to_string(),
            Raw::Text(t) => t,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl Default for SessionsSection {
    fn default() -> Self {
        SessionsSection {
            timeout_secs: 3600,
            level: AggLevel::Addr128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalSection {
    pub bin_secs: i64,
    pub min_sessions_periodic: usize,
    pub acf_threshold: f64,
}

impl Default for TemporalSection {
    fn default() -> Self {
        let d = TemporalConfig::default();
        TemporalSection {
            bin_secs: d.bin_width / MICROS_PER_SEC,
            min_sessions_periodic: d.min_sessions_periodic,
            acf_threshold: d.acf_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetselSection {
    pub cv_max: f64,
    pub rho_min: f64,
    pub min_sizes_hit: usize,
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for NetselSection {
    fn default() -> Self {
        let d = NetselConfig::default();
        NetselSection {
            cv_max: d.cv_max,
            rho_min: d.rho_min,
            min_sizes_hit: d.min_sizes_hit,
            eps: d.clustering.eps,
            min_pts: d.clustering.min_pts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomnessSection {
    pub alpha: f64,
    pub min_packets: usize,
}

impl Default for RandomnessSection {
    fn default() -> Self {
        let d = RandomnessConfig::default();
        RandomnessSection {
            alpha: d.alpha,
            min_packets: d.min_packets,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AddressesSection {
    pub structured_threshold: f64,
    pub min_traversal_targets: usize,
    pub service_ports: Vec<u16>,
}

impl Default for AddressesSection {
    fn default() -> Self {
        AddressesSection {
            structured_threshold: 0.8,
            min_traversal_targets: 3,
            service_ports: DEFAULT_SERVICE_PORTS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintSection {
    pub eps: f64,
    pub min_pts: usize,
    /// Signature file; the bundled database is used when unset.
    pub signatures: Option<PathBuf>,
}

impl Default for FingerprintSection {
    fn default() -> Self {
        FingerprintSection {
            eps: 0.1,
            min_pts: 2,
            signatures: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub exclude: Vec<Prefix6>,
    pub payload_cap: usize,
    pub telescope: String,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            exclude: Vec::new(),
            payload_cap: DEFAULT_PAYLOAD_CAP,
            telescope: "T1".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichmentSection {
    pub asn: Option<PathBuf>,
    pub geo: Option<PathBuf>,
    pub nettype: Option<PathBuf>,
    pub rdns: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Heavy hitters exceed this share of one telescope's packets.
    pub heavy_hitter_share: f64,
    pub top_ports: usize,
    pub discovery_prefix_len: u8,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            heavy_hitter_share: 0.10,
            top_ports: 5,
            discovery_prefix_len: 48,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub base: Prefix6,
    pub cycles: usize,
    pub start: String,
    pub cycle_days: i64,
    pub dark_days: i64,
    pub baseline_days: i64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let p = ScheduleParams::default();
        ScheduleSection {
            base: "2001:db8::/32".parse().unwrap(),
            cycles: 16,
            start: "2024-01-01T00:00:00Z".into(),
            cycle_days: p.cycle_days,
            dark_days: p.dark_days,
            baseline_days: p.baseline_days,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub reaction_delay_secs: i64,
    pub min_session_minutes: i64,
    pub max_session_minutes: i64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimulateSection {
            reaction_delay_secs: d.reaction_delay / MICROS_PER_SEC,
            min_session_minutes: d.min_session_minutes,
            max_session_minutes: d.max_session_minutes,
        }
    }
}

/// Closed-loop validation run. Uses a compressed schedule so a run stays small.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub scanners: usize,
    pub seed: u64,
    pub cycles: usize,
    pub cycle_days: i64,
    pub dark_days: i64,
    pub baseline_days: i64,
    pub min_temporal_accuracy: f64,
    pub min_netsel_accuracy: f64,
    pub min_addrsel_accuracy: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection {
            scanners: 200,
            seed: 7,
            cycles: 4,
            cycle_days: 7,
            dark_days: 1,
            baseline_days: 7,
            min_temporal_accuracy: 0.95,
            min_netsel_accuracy: 0.90,
            min_addrsel_accuracy: 0.90,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sessions: SessionsSection,
    pub temporal: TemporalSection,
    pub netsel: NetselSection,
    pub randomness: RandomnessSection,
    pub addresses: AddressesSection,
    pub fingerprint: FingerprintSection,
    pub ingest: IngestSection,
    pub enrichment: EnrichmentSection,
    pub report: ReportSection,
    pub schedule: ScheduleSection,
    pub simulate: SimulateSection,
    pub validate: ValidateSection,
    /// Telescope id to announced prefix.
    pub telescopes: BTreeMap<String, Prefix6>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sessions: Default::default(),
            temporal: Default::default(),
            netsel: Default::default(),
            randomness: Default::default(),
            addresses: Default::default(),
            fingerprint: Default::default(),
            ingest: Default::default(),
            enrichment: Default::default(),
            report: Default::default(),
            schedule: Default::default(),
            simulate: Default::default(),
            validate: Default::default(),
            telescopes: [("T1".to_string(), "2001:db8::/32".parse().unwrap())].into(),
        }
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl RunConfig {
    /// Reads `path` (or defaults when `None`) and applies environment overrides.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                .parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for (k, v) in env {
            let Some(rest) = k.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let mut parts: Vec<String> = rest.split("__").map(str::to_ascii_lowercase).collect();
            let mut key = parts.pop().unwrap();
            // Telescope ids keep their case.
            if parts == ["telescopes"] {
                key = rest.rsplit("__").next().unwrap().to_string();
            }
            let mut cur = &mut table;
            for sect in &parts {
                cur = cur
                    .entry(sect.clone())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{k}: `{sect}` is not a table")))?;
            }
            cur.insert(key, parse_env_value(&v));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.sessionizer()?;
        self.temporal().validate()?;
        self.netsel().validate()?;
        self.randomness().validate()?;
        ClusteringParams {
            eps: self.fingerprint.eps,
            min_pts: self.fingerprint.min_pts,
        }
        .validate()?;
        let r = &self.report;
        if !(0.0..1.0).contains(&r.heavy_hitter_share) || r.discovery_prefix_len > 128 {
            return Err(Error::Config("report thresholds out of range".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn sessionizer(&self) -> Result<SessionizerConfig> {
        SessionizerConfig::new(self.sessions.timeout_secs * MICROS_PER_SEC, self.sessions.level)
    }

    pub fn temporal(&self) -> TemporalConfig {
        TemporalConfig {
            bin_width: self.temporal.bin_secs * MICROS_PER_SEC,
            min_sessions_periodic: self.temporal.min_sessions_periodic,
            acf_threshold: self.temporal.acf_threshold,
        }
    }

    pub fn netsel(&self) -> NetselConfig {
        NetselConfig {
            cv_max: self.netsel.cv_max,
            rho_min: self.netsel.rho_min,
            min_sizes_hit: self.netsel.min_sizes_hit,
            clustering: ClusteringParams {
                eps: self.netsel.eps,
                min_pts: self.netsel.min_pts,
            },
        }
    }

    pub fn randomness(&self) -> RandomnessConfig {
        RandomnessConfig {
            alpha: self.randomness.alpha,
            min_packets: self.randomness.min_packets,
        }
    }

    pub fn addresses(&self) -> AddressClassConfig {
        AddressClassConfig {
            service_ports: self.addresses.service_ports.clone(),
            structured_threshold: self.addresses.structured_threshold,
            min_traversal_targets: self.addresses.min_traversal_targets,
        }
    }

    pub fn fingerprint_params(&self) -> ClusteringParams {
        ClusteringParams {
            eps: self.fingerprint.eps,
            min_pts: self.fingerprint.min_pts,
        }
    }

    pub fn simulator(&self) -> SimConfig {
        SimConfig {
            reaction_delay: self.simulate.reaction_delay_secs * MICROS_PER_SEC,
            min_session_minutes: self.simulate.min_session_minutes,
            max_session_minutes: self.simulate.max_session_minutes,
        }
    }

    pub fn ingest(&self) -> crate::ingest::IngestOptions {
        crate::ingest::IngestOptions {
            exclude: self.ingest.exclude.clone(),
            payload_cap: self.ingest.payload_cap,
            telescope: self.ingest.telescope.clone(),
        }
    }
}
