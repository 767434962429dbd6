//! Python bindings. Packets cross the boundary as NDJSON text; sessions,
//! schedules and results are exposed as classes, tuples and lists.

use std::collections::BTreeSet;

use darkscope::addrclass::{classify_iid, AddressClassConfig};
use darkscope::config::RunConfig;
use darkscope::dbscan::{dbscan as run_dbscan, euclidean, ClusteringParams};
use darkscope::ingest::{read_ndjson, write_ndjson, IngestOptions};
use darkscope::model::{AggLevel, Address6, Prefix6, MICROS_PER_SEC};
use darkscope::pipeline::validate as validate_run;
use darkscope::randomness::run_all;
use darkscope::schedule::{generate_schedule, AnnouncementSchedule, ScheduleParams, Window};
use darkscope::sessionizer::{sessionize as run_sessionize, ScanSession, SessionizerConfig};
use darkscope::simulator::{population, simulate as run_simulate, SimConfig, SimTelescopes};
use darkscope::temporal::{classify_starts, TemporalConfig};
use darkscope::timefmt::parse_timestamp;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn addr(s: &str) -> PyResult<Address6> {
    s.parse().map_err(err)
}

fn level(bits: u8) -> PyResult<AggLevel> {
    match bits {
        128 => Ok(AggLevel::Addr128),
        64 => Ok(AggLevel::Net64),
        other => Err(err(format!("aggregation level must be 128 or 64, got {other}"))),
    }
}

/// Address type of the interface identifier, e.g. `low_byte`.
#[pyfunction]
fn classify_address(address: &str) -> PyResult<String> {
    Ok(classify_iid(addr(address)?, &AddressClassConfig::default()).to_string())
}

/// Prefix-splitting announcement schedule.
#[pyclass(name = "Schedule", module = "darkscope", frozen)]
struct PySchedule {
    inner: AnnouncementSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (base, cycles, start=None, cycle_days=14, dark_days=1, baseline_days=84))]
    fn new(
        base: &str,
        cycles: usize,
        start: Option<&str>,
        cycle_days: i64,
        dark_days: i64,
        baseline_days: i64,
    ) -> PyResult<Self> {
        let base: Prefix6 = base.parse().map_err(err)?;
        let t0 = start.map(parse_timestamp).transpose().map_err(err)?.unwrap_or(0);
        let params = ScheduleParams {
            cycle_days,
            dark_days,
            baseline_days,
        };
        Ok(PySchedule {
            inner: generate_schedule(base, cycles, t0, params).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PySchedule {
            inner: AnnouncementSchedule::from_reader(text.as_bytes()).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        let mut out = Vec::new();
        self.inner.to_writer(&mut out).map_err(err)?;
        String::from_utf8(out).map_err(err)
    }

    #[getter]
    fn cycles(&self) -> usize {
        self.inner.cycles.len()
    }

    #[getter]
    fn base(&self) -> String {
        self.inner.base.to_string()
    }

    /// Start and end of the whole schedule, in microseconds.
    #[getter]
    fn span(&self) -> (i64, i64) {
        (self.inner.baseline.start, self.inner.end())
    }

    /// Prefixes announced in a cycle; 0 is the baseline.
    fn announced(&self, cycle: usize) -> PyResult<Vec<String>> {
        let set = self
            .inner
            .announced(cycle)
            .ok_or_else(|| err(format!("no cycle {cycle}")))?;
        Ok(set.iter().map(|p| p.to_string()).collect())
    }

    /// `(cycle, dark)` at a timestamp, or None outside the schedule.
    fn cycle_at(&self, ts: i64) -> Option<(usize, bool)> {
        self.inner.cycle_at(ts).map(|c| (c.index, c.dark))
    }

    fn most_specific(&self, cycle: usize, address: &str) -> PyResult<Option<String>> {
        Ok(self
            .inner
            .most_specific_announced(cycle, addr(address)?)
            .map(|p| p.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Schedule(base='{}', cycles={})", self.inner.base, self.inner.cycles.len())
    }
}

/// One scan session.
#[pyclass(name = "Session", module = "darkscope", frozen)]
struct PySession {
    inner: ScanSession,
}

#[pymethods]
impl PySession {
    #[getter]
    fn id(&self) -> u64 {
        self.inner.id
    }

    #[getter]
    fn source(&self) -> String {
        self.inner.source.to_string()
    }

    #[getter]
    fn telescope(&self) -> &str {
        &self.inner.telescope
    }

    #[getter]
    fn start(&self) -> i64 {
        self.inner.start
    }

    #[getter]
    fn end(&self) -> i64 {
        self.inner.end
    }

    #[getter]
    fn packet_count(&self) -> usize {
        self.inner.packet_count
    }

    #[getter]
    fn distinct_targets(&self) -> usize {
        self.inner.distinct_targets
    }

    #[getter]
    fn protocols(&self) -> Vec<String> {
        self.inner.protocols.iter().map(|p| p.to_string()).collect()
    }

    #[getter]
    fn targets(&self) -> Vec<String> {
        self.inner.targets.iter().map(|a| a.to_string()).collect()
    }

    #[getter]
    fn senders(&self) -> Vec<String> {
        self.inner.senders.iter().map(|a| a.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Session(id={}, source='{}', telescope='{}', packets={})",
            self.inner.id, self.inner.source, self.inner.telescope, self.inner.packet_count
        )
    }
}

/// Groups NDJSON packets into sessions. Returns the sessions and the
/// number of rejected lines.
#[pyfunction]
#[pyo3(signature = (ndjson, timeout_secs=3600, level_bits=128))]
fn sessionize(py: Python<'_>, ndjson: &str, timeout_secs: i64, level_bits: u8) -> PyResult<(Vec<PySession>, usize)> {
    let cfg = SessionizerConfig::new(timeout_secs * MICROS_PER_SEC, level(level_bits)?).map_err(err)?;
    let (packets, summary) = read_ndjson(ndjson.as_bytes(), &IngestOptions::default()).map_err(err)?;
    let sessions = py.detach(|| run_sessionize(&packets, &cfg));
    Ok((
        sessions.into_iter().map(|inner| PySession { inner }).collect(),
        summary.rejects.len(),
    ))
}

/// `(kind, period_secs)` for one source's session start times (microseconds)
/// observed over `[window_start, window_end)`.
#[pyfunction]
fn temporal_label(starts: Vec<i64>, window_start: i64, window_end: i64) -> PyResult<(String, Option<i64>)> {
    let label = classify_starts(&starts, &TemporalConfig::default(), Window::new(window_start, window_end)).map_err(err)?;
    Ok((label.kind.to_string(), label.period.map(|p| p / MICROS_PER_SEC)))
}

/// Randomness tests on a `0`/`1` string: `(test, p_value, passed)` per test.
#[pyfunction]
#[pyo3(signature = (bits, alpha=0.01))]
fn nist(bits: &str, alpha: f64) -> PyResult<Vec<(String, f64, bool)>> {
    let bits: Vec<bool> = bits
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(err(format!("unexpected character {other:?} in bit string"))),
        })
        .collect::<PyResult<_>>()?;
    let results = run_all(&bits, alpha).map_err(err)?;
    Ok(results
        .into_iter()
        .map(|r| (r.test.as_str().to_string(), r.p_value, r.pass))
        .collect())
}

/// Euclidean DBSCAN; cluster id per point, None for noise.
#[pyfunction]
fn dbscan(points: Vec<Vec<f64>>, eps: f64, min_pts: usize) -> PyResult<Vec<Option<usize>>> {
    let params = ClusteringParams { eps, min_pts };
    params.validate().map_err(err)?;
    if points.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(err("points must share one dimension"));
    }
    Ok(run_dbscan(&points, params, |a: &Vec<f64>, b: &Vec<f64>| euclidean(a, b)))
}

/// Synthetic trace for a generated scanner population, as NDJSON.
#[pyfunction]
#[pyo3(signature = (schedule, scanners=20, seed=7))]
fn simulate(py: Python<'_>, schedule: &PySchedule, scanners: usize, seed: u64) -> PyResult<String> {
    let specs = population(scanners, seed);
    let tels = SimTelescopes::single("T1", &schedule.inner);
    let out = py
        .detach(|| run_simulate(&specs, &schedule.inner, &tels, seed, &SimConfig::default()))
        .map_err(err)?;
    let mut buf = Vec::new();
    write_ndjson(&mut buf, &out.packets).map_err(err)?;
    String::from_utf8(buf).map_err(err)
}

/// Closed-loop validation with the default configuration; the scorecard as JSON.
#[pyfunction]
#[pyo3(signature = (seed=7, scanners=200))]
fn validate(py: Python<'_>, seed: u64, scanners: usize) -> PyResult<String> {
    let mut cfg = RunConfig::default();
    cfg.validate.seed = seed;
    cfg.validate.scanners = scanners;
    let run = py.detach(|| validate_run(&cfg)).map_err(err)?;
    serde_json::to_string(&run.scorecard).map_err(err)
}

/// Distinct /64s among the given addresses.
#[pyfunction]
fn distinct_64s(addresses: Vec<String>) -> PyResult<usize> {
    let mut seen = BTreeSet::new();
    for a in &addresses {
        seen.insert(Prefix6::truncating(addr(a)?, 64));
    }
    Ok(seen.len())
}

#[pymodule(name = "darkscope")]
fn darkscope_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(classify_address, m)?)?;
    m.add_function(wrap_pyfunction!(sessionize, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_label, m)?)?;
    m.add_function(wrap_pyfunction!(nist, m)?)?;
    m.add_function(wrap_pyfunction!(dbscan, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(distinct_64s, m)?)?;
    Ok(())
}
