//! Timestamp parsing and rendering (integer microseconds or RFC 3339).

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serializer};

use crate::error::{Error, Result};
use crate::model::Micros;

pub fn parse_rfc3339(s: &str) -> Result<Micros> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|dt| dt.timestamp_micros())
        .map_err(|e| Error::Parse(format!("invalid timestamp `{s}`: {e}")))
}

/// Accepts either an integer microsecond count or an RFC 3339 string.
pub fn parse_timestamp(s: &str) -> Result<Micros> {
    let s = s.trim();
    match s.parse::<i64>() {
        Ok(v) => Ok(v),
        Err(_) => parse_rfc3339(s),
    }
}

pub fn to_rfc3339(ts: Micros) -> String {
    DateTime::<Utc>::from_timestamp_micros(ts)
        .map(|dt| dt.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        .unwrap_or_else(|| ts.to_string())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Either {
    Int(i64),
    Text(String),
}

/// Serde adapter: writes RFC 3339, reads integer microseconds or RFC 3339.
pub mod rfc3339 {
    use super::*;

    pub fn serialize<S: Serializer>(ts: &Micros, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&to_rfc3339(*ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Micros, D::Error> {
        match Either::deserialize(d)? {
            Either::Int(v) => Ok(v),
            Either::Text(t) => parse_rfc3339(&t).map_err(serde::de::Error::custom),
        }
    }
}

/// Serde adapter: writes integer microseconds, reads either form.
pub mod flexible {
    use super::*;

    pub fn serialize<S: Serializer>(ts: &Micros, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i64(*ts)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Micros, D::Error> {
        match Either::deserialize(d)? {
            Either::Int(v) => Ok(v),
            Either::Text(t) => parse_timestamp(&t).map_err(serde::de::Error::custom),
        }
    }
}
