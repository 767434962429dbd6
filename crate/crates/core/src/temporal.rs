//! One-off / periodic / intermittent labels from session start times.
//!
//! Session starts are binned into a binary activity series over the analysis
//! window. A scanner is periodic when the tolerant autocorrelation has a
//! local maximum at or above the threshold. The tolerant value at lag k is
//! the chance-corrected share of active bins followed by another active bin
//! k-1..k+1 bins later, which absorbs start-time jitter of up to half a bin.
//! With a one-lag window it reduces to the binary ACF. The reported period is
//! the centroid of the positive raw ACF values around the maximum, rounded to
//! whole bins.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Micros, SourceKey, MICROS_PER_SEC};
use crate::schedule::Window;
use crate::sessionizer::ScanSession;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    OneOff,
    Periodic,
    Intermittent,
}

impl TemporalKind {
    pub const ALL: [TemporalKind; 3] = [
        TemporalKind::OneOff,
        TemporalKind::Periodic,
        TemporalKind::Intermittent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemporalKind::OneOff => "one_off",
            TemporalKind::Periodic => "periodic",
            TemporalKind::Intermittent => "intermittent",
        }
    }
}

impl fmt::Display for TemporalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemporalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TemporalKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown temporal label `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalLabel {
    pub kind: TemporalKind,
    /// Present iff `kind` is periodic.
    pub period: Option<Micros>,
}

impl TemporalLabel {
    fn plain(kind: TemporalKind) -> Self {
        TemporalLabel { kind, period: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    pub bin_width: Micros,
    pub min_sessions_periodic: usize,
    pub acf_threshold: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        TemporalConfig {
            bin_width: 3600 * MICROS_PER_SEC,
            min_sessions_periodic: 3,
            acf_threshold: 0.5,
        }
    }
}

impl TemporalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bin_width <= 0 {
            return Err(Error::Config("temporal bin width must be positive".into()));
        }
        if self.min_sessions_periodic < 3 {
            return Err(Error::Config("min_sessions_periodic must be at least 3".into()));
        }
        Ok(())
    }
}

/// Indices of active bins (sorted, distinct) and the total bin count.
pub fn activity_bins(starts: &[Micros], window: Window, bin_width: Micros) -> (Vec<usize>, usize) {
    let span = (window.end - window.start).max(1);
    let n_bins = ((span + bin_width - 1) / bin_width).max(1) as usize;
    let mut bins: Vec<usize> = starts
        .iter()
        .map(|&t| (((t - window.start).max(0) / bin_width) as usize).min(n_bins - 1))
        .collect();
    bins.sort_unstable();
    bins.dedup();
    (bins, n_bins)
}

/// Normalized (variance-scaled, biased) autocorrelation of a binary series,
/// given by its active positions, for lags `0..=max_lag`.
///
/// Returns `None` when the series is constant.
pub fn binary_acf(ones: &[usize], n: usize, max_lag: usize) -> Option<Vec<f64>> {
    let k1 = ones.len() as f64;
    let nf = n as f64;
    let mean = k1 / nf;
    let denom = k1 - nf * mean * mean;
    if denom <= 1e-12 {
        return None;
    }
    let mut pairs = vec![0usize; max_lag + 1];
    for (i, &a) in ones.iter().enumerate() {
        for &b in &ones[i..] {
            let d = b - a;
            if d > max_lag {
                break;
            }
            pairs[d] += 1;
        }
    }
    let count_below = |j: usize| ones.partition_point(|&x| x < j) as f64;
    let acf = (0..=max_lag)
        .map(|k| {
            let head = count_below(n - k);
            let tail = k1 - count_below(k);
            let num = pairs[k] as f64 - mean * (head + tail) + (n - k) as f64 * mean * mean;
            num / denom
        })
        .collect();
    Some(acf)
}

/// Chance-corrected share of active bins `t` that have an active bin in
/// `t+lo..=t+hi`. Only bins whose window fits the series count as hits, but
/// the share is taken over all active bins, damping long lags like the biased
/// ACF does. `None` when no bin qualifies or the series is too dense for the
/// window to be informative.
pub fn tolerant_acf(ones: &[usize], n: usize, lo: usize, hi: usize) -> Option<f64> {
    if lo == 0 || hi < lo || n == 0 {
        return None;
    }
    let m = ones.len() as f64 / n as f64;
    let chance = 1.0 - (1.0 - m).powi((hi - lo + 1) as i32);
    if chance >= 0.95 {
        return None;
    }
    let (mut eligible, mut hits) = (0usize, 0usize);
    for &t in ones {
        if t + hi >= n {
            break;
        }
        eligible += 1;
        let first = ones.partition_point(|&x| x < t + lo);
        if ones.get(first).is_some_and(|&x| x <= t + hi) {
            hits += 1;
        }
    }
    if eligible == 0 {
        return None;
    }
    let excess = hits as f64 - chance * eligible as f64;
    Some(excess / (ones.len() as f64 * (1.0 - chance)))
}

/// Period in bins, if the activity series shows one.
pub fn detect_period(ones: &[usize], n: usize, threshold: f64) -> Option<usize> {
    let max_lag = n / 2;
    if max_lag < 1 {
        return None;
    }
    let r = binary_acf(ones, n, max_lag + 1)?;
    let rt: Vec<f64> = (0..=max_lag + 1)
        .map(|k| {
            if k == 0 {
                return f64::NEG_INFINITY;
            }
            tolerant_acf(ones, n, (k - 1).max(1), k + 1).unwrap_or(f64::NEG_INFINITY)
        })
        .collect();
    for k in 1..=max_lag {
        let is_peak = rt[k] >= rt[k - 1] && rt[k] >= rt[k + 1];
        if is_peak && rt[k] >= threshold {
            let lo = (k - 1).max(1);
            let hi = (k + 1).min(max_lag);
            let (mut w, mut wk) = (0.0, 0.0);
            for j in lo..=hi {
                if r[j] > 0.0 {
                    w += r[j];
                    wk += r[j] * j as f64;
                }
            }
            let best = if w > 0.0 { (wk / w).round() as usize } else { k };
            return Some(best);
        }
    }
    None
}

/// Labels one source from the start times of its sessions.
pub fn classify_starts(starts: &[Micros], cfg: &TemporalConfig, window: Window) -> Result<TemporalLabel> {
    match starts.len() {
        0 => Err(Error::Empty("session list")),
        1 => Ok(TemporalLabel::plain(TemporalKind::OneOff)),
        n => {
            if n >= cfg.min_sessions_periodic {
                let (ones, bins) = activity_bins(starts, window, cfg.bin_width);
                if let Some(lag) = detect_period(&ones, bins, cfg.acf_threshold) {
                    return Ok(TemporalLabel {
                        kind: TemporalKind::Periodic,
                        period: Some(lag as Micros * cfg.bin_width),
                    });
                }
            }
            Ok(TemporalLabel::plain(TemporalKind::Intermittent))
        }
    }
}

pub fn classify_temporal(
    sessions: &[&ScanSession],
    cfg: &TemporalConfig,
    window: Window,
) -> Result<TemporalLabel> {
    if let Some(first) = sessions.first() {
        if sessions.iter().any(|s| s.source != first.source) {
            return Err(Error::Invalid("sessions from more than one source".into()));
        }
    }
    let starts: Vec<Micros> = sessions.iter().map(|s| s.start).collect();
    classify_starts(&starts, cfg, window)
}

/// Smallest window covering every session start, widened to a whole bin.
pub fn covering_window(sessions: &[ScanSession], bin_width: Micros) -> Option<Window> {
    let start = sessions.iter().map(|s| s.start).min()?;
    let end = sessions.iter().map(|s| s.start).max()?;
    Some(Window::new(start, end + bin_width))
}

/// Labels every source present in `sessions`, in parallel.
pub fn classify_all(
    sessions: &[ScanSession],
    cfg: &TemporalConfig,
    window: Window,
) -> Result<BTreeMap<SourceKey, TemporalLabel>> {
    cfg.validate()?;
    let groups: Vec<(SourceKey, Vec<&ScanSession>)> =
        crate::sessionizer::by_source(sessions).into_iter().collect();
    groups
        .into_par_iter()
        .map(|(k, ss)| classify_temporal(&ss, cfg, window).map(|l| (k, l)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MICROS_PER_HOUR;

    const H: Micros = MICROS_PER_HOUR;

    fn classify(starts_h: &[i64], window_h: i64) -> TemporalLabel {
        let starts: Vec<Micros> = starts_h.iter().map(|h| h * H).collect();
        classify_starts(&starts, &TemporalConfig::default(), Window::new(0, window_h * H)).unwrap()
    }

    /// Direct O(n^2) ACF over the dense series.
    fn dense_acf(x: &[f64], k: usize) -> f64 {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let d: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        (0..n - k).map(|t| (x[t] - m) * (x[t + k] - m)).sum::<f64>() / d
    }

    #[test]
    fn sparse_acf_matches_dense() {
        let ones = vec![0usize, 3, 4, 10, 17, 18, 30];
        let n = 40;
        let mut x = vec![0.0; n];
        for &o in &ones {
            x[o] = 1.0;
        }
        let r = binary_acf(&ones, n, 20).unwrap();
        for k in 0..=20 {
            assert!((r[k] - dense_acf(&x, k)).abs() < 1e-12, "lag {k}");
        }
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!(binary_acf(&[], 10, 3).is_none());
    }

    #[test]
    fn one_off_and_empty() {
        assert_eq!(classify(&[5], 100).kind, TemporalKind::OneOff);
        assert!(classify_starts(&[], &TemporalConfig::default(), Window::new(0, 1)).is_err());
    }

    #[test]
    fn daily_train() {
        let starts: Vec<i64> = (0..10).map(|i| 3 + 24 * i).collect();
        let l = classify(&starts, 30 * 24);
        assert_eq!(l.kind, TemporalKind::Periodic);
        assert_eq!(l.period, Some(24 * H));
    }

    #[test]
    fn dense_train_straddling_bins() {
        // 4h period with starts alternating around an hour boundary, so
        // consecutive gaps spread over 3, 4 and 5 bins.
        let starts: Vec<Micros> = (0..120)
            .map(|i| i * 4 * H + if i % 3 == 0 { H - 60_000_000 } else { H + 60_000_000 })
            .collect();
        let l = classify_starts(&starts, &TemporalConfig::default(), Window::new(0, 500 * H)).unwrap();
        assert_eq!(l.kind, TemporalKind::Periodic);
        assert_eq!(l.period, Some(4 * H));
    }

    #[test]
    fn random_dense_occupancy_is_not_periodic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let starts: Vec<i64> = (0..400).filter(|_| rng.random_bool(0.25)).collect();
            assert_eq!(classify(&starts, 400).kind, TemporalKind::Intermittent);
        }
    }

    #[test]
    fn two_sessions_are_intermittent() {
        assert_eq!(classify(&[0, 24], 30 * 24).kind, TemporalKind::Intermittent);
    }

    #[test]
    fn irregular_gaps_are_intermittent() {
        let gaps = [1, 37, 3, 90, 11];
        let mut t = 0;
        let mut starts = vec![0];
        for g in gaps {
            t += g;
            starts.push(t);
        }
        assert_eq!(classify(&starts, 30 * 24).kind, TemporalKind::Intermittent);
    }

    #[test]
    fn jitter_within_half_bin() {
        let jit = [0.4, -0.3, 0.1, -0.45, 0.2, 0.0, 0.35, -0.2];
        let starts: Vec<Micros> = jit
            .iter()
            .enumerate()
            .map(|(i, j)| ((10.0 + 6.0 * i as f64 + j) * H as f64) as Micros)
            .collect();
        let l = classify_starts(&starts, &TemporalConfig::default(), Window::new(0, 100 * H)).unwrap();
        assert_eq!(l.kind, TemporalKind::Periodic);
        assert_eq!(l.period, Some(6 * H));
    }

    #[test]
    fn shift_invariance() {
        let starts: Vec<i64> = (0..6).map(|i| 12 * i).collect();
        let a = classify(&starts, 200);
        let shifted: Vec<Micros> = starts.iter().map(|h| (h + 1000) * H + 17).collect();
        let b = classify_starts(
            &shifted,
            &TemporalConfig::default(),
            Window::new(1000 * H + 17, 1200 * H + 17),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
