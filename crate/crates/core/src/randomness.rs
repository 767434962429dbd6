//! Four NIST SP 800-22 tests (frequency, runs, spectral, cumulative sums)
//! applied to sections of session target addresses.
//!
//! Bits are taken most-significant first. Sessions are tested without
//! de-duplicating repeated targets.

use std::collections::BTreeMap;
use std::fmt;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{Address6, Prefix6};

pub const MIN_BITS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitSection {
    /// Bits 32..64: the subnet part after a /32 telescope prefix.
    Subnet32,
    /// Bits 64..128.
    Iid64,
}

impl BitSection {
    pub fn as_str(self) -> &'static str {
        match self {
            BitSection::Subnet32 => "subnet32",
            BitSection::Iid64 => "iid64",
        }
    }

    pub fn width(self) -> usize {
        match self {
            BitSection::Subnet32 => 32,
            BitSection::Iid64 => 64,
        }
    }

    fn value(self, a: Address6) -> u64 {
        match self {
            BitSection::Subnet32 => ((a.0 >> 64) as u64) & 0xffff_ffff,
            BitSection::Iid64 => a.0 as u64,
        }
    }
}

impl fmt::Display for BitSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NistTest {
    Frequency,
    Runs,
    Fft,
    Cusum0,
    Cusum1,
}

impl NistTest {
    pub const ALL: [NistTest; 5] = [
        NistTest::Frequency,
        NistTest::Runs,
        NistTest::Fft,
        NistTest::Cusum0,
        NistTest::Cusum1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NistTest::Frequency => "frequency",
            NistTest::Runs => "runs",
            NistTest::Fft => "fft",
            NistTest::Cusum0 => "cusum0",
            NistTest::Cusum1 => "cusum1",
        }
    }
}

impl fmt::Display for NistTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: NistTest,
    pub p_value: f64,
    pub pass: bool,
    pub n_bits: usize,
    /// Runs test only: the frequency prerequisite failed and no statistic was computed.
    pub prerequisite_failed: bool,
}

impl TestResult {
    fn new(test: NistTest, p_value: f64, n_bits: usize, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        TestResult {
            test,
            p_value,
            pass: p_value >= alpha,
            n_bits,
            prerequisite_failed: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomnessConfig {
    pub alpha: f64,
    pub min_packets: usize,
}

impl Default for RandomnessConfig {
    fn default() -> Self {
        RandomnessConfig {
            alpha: 0.01,
            min_packets: 100,
        }
    }
}

impl RandomnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

fn check_len(bits: &[bool]) -> Result<()> {
    if bits.len() < MIN_BITS {
        return Err(Error::TooFewBits {
            needed: MIN_BITS,
            got: bits.len(),
        });
    }
    Ok(())
}

/// Frequency (monobit) p-value, no length gate.
pub fn frequency_p_value(bits: &[bool]) -> f64 {
    let n = bits.len() as f64;
    let sum: i64 = bits.iter().map(|&b| if b { 1 } else { -1 }).sum();
    let s_obs = (sum.abs() as f64) / n.sqrt();
    erfc(s_obs / std::f64::consts::SQRT_2)
}

/// Runs p-value, or `None` when the frequency prerequisite fails.
pub fn runs_p_value(bits: &[bool]) -> Option<f64> {
    let n = bits.len() as f64;
    let pi = bits.iter().filter(|&&b| b).count() as f64 / n;
    let tau = 2.0 / n.sqrt();
    if (pi - 0.5).abs() >= tau {
        return None;
    }
    let v_obs = 1 + bits.windows(2).filter(|w| w[0] != w[1]).count();
    let num = (v_obs as f64 - 2.0 * n * pi * (1.0 - pi)).abs();
    let den = 2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi);
    Some(erfc(num / den))
}

/// Spectral (DFT) p-value.
pub fn fft_p_value(bits: &[bool]) -> f64 {
    let n = bits.len();
    let mut buf: Vec<Complex<f64>> = bits
        .iter()
        .map(|&b| Complex::new(if b { 1.0 } else { -1.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let nf = n as f64;
    let threshold = ((1.0f64 / 0.05).ln() * nf).sqrt();
    let n0 = 0.95 * nf / 2.0;
    let n1 = buf[..n / 2].iter().filter(|c| c.norm() < threshold).count() as f64;
    let d = (n1 - n0) / (nf * 0.95 * 0.05 / 4.0).sqrt();
    erfc(d.abs() / std::f64::consts::SQRT_2)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Cumulative-sums p-value; `forward = false` walks the sequence backwards.
pub fn cusum_p_value(bits: &[bool], forward: bool) -> f64 {
    let n = bits.len();
    let step = |b: &bool| if *b { 1i64 } else { -1 };
    let mut s = 0i64;
    let mut z = 0i64;
    let mut walk = |b: &bool| {
        s += step(b);
        z = z.max(s.abs());
    };
    if forward {
        bits.iter().for_each(&mut walk);
    } else {
        bits.iter().rev().for_each(&mut walk);
    }
    let nf = n as f64;
    let zf = z as f64;
    let sqrt_n = nf.sqrt();
    // Summation bounds truncate toward zero, as in the reference implementation.
    let mut sum1 = 0.0;
    let mut k = ((-nf / zf + 1.0) / 4.0) as i64;
    while k as f64 <= (nf / zf - 1.0) / 4.0 {
        let kf = k as f64;
        sum1 += std_normal_cdf((4.0 * kf + 1.0) * zf / sqrt_n)
            - std_normal_cdf((4.0 * kf - 1.0) * zf / sqrt_n);
        k += 1;
    }
    let mut sum2 = 0.0;
    let mut k = ((-nf / zf - 3.0) / 4.0) as i64;
    while k as f64 <= (nf / zf - 1.0) / 4.0 {
        let kf = k as f64;
        sum2 += std_normal_cdf((4.0 * kf + 3.0) * zf / sqrt_n)
            - std_normal_cdf((4.0 * kf + 1.0) * zf / sqrt_n);
        k += 1;
    }
    1.0 - sum1 + sum2
}

pub fn frequency_test(bits: &[bool], alpha: f64) -> Result<TestResult> {
    check_len(bits)?;
    Ok(TestResult::new(
        NistTest::Frequency,
        frequency_p_value(bits),
        bits.len(),
        alpha,
    ))
}

pub fn runs_test(bits: &[bool], alpha: f64) -> Result<TestResult> {
    check_len(bits)?;
    Ok(match runs_p_value(bits) {
        Some(p) => TestResult::new(NistTest::Runs, p, bits.len(), alpha),
        None => TestResult {
            prerequisite_failed: true,
            ..TestResult::new(NistTest::Runs, 0.0, bits.len(), alpha)
        },
    })
}

pub fn fft_test(bits: &[bool], alpha: f64) -> Result<TestResult> {
    check_len(bits)?;
    Ok(TestResult::new(NistTest::Fft, fft_p_value(bits), bits.len(), alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

pub fn cusum_test(bits: &[bool], dir: Direction, alpha: f64) -> Result<TestResult> {
    check_len(bits)?;
    let (test, fwd) = match dir {
        Direction::Forward => (NistTest::Cusum0, true),
        Direction::Backward => (NistTest::Cusum1, false),
    };
    Ok(TestResult::new(test, cusum_p_value(bits, fwd), bits.len(), alpha))
}

/// Runs all five tests on one bit string.
pub fn run_all(bits: &[bool], alpha: f64) -> Result<Vec<TestResult>> {
    Ok(vec![
        frequency_test(bits, alpha)?,
        runs_test(bits, alpha)?,
        fft_test(bits, alpha)?,
        cusum_test(bits, Direction::Forward, alpha)?,
        cusum_test(bits, Direction::Backward, alpha)?,
    ])
}

/// Concatenates the chosen section of each target, in arrival order.
///
/// `telescope` must contain every target; for `Subnet32` it is expected to be a /32.
pub fn extract_bits(
    targets: &[Address6],
    section: BitSection,
    telescope: Prefix6,
) -> Result<Vec<bool>> {
    let width = section.width();
    let mut bits = Vec::with_capacity(targets.len() * width);
    for &t in targets {
        if !telescope.contains(t) {
            return Err(Error::OutsidePrefix {
                addr: t.to_string(),
                prefix: telescope,
            });
        }
        let v = section.value(t);
        bits.extend((0..width).rev().map(|i| (v >> i) & 1 == 1));
    }
    Ok(bits)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SectionResult {
    pub tests: Vec<TestResult>,
    /// Random iff the frequency test passes.
    pub random: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SessionRandomness {
    /// Fewer packets than the configured minimum.
    NotApplicable,
    Evaluated(BTreeMap<BitSection, SectionResult>),
}

impl SessionRandomness {
    pub fn verdict(&self, section: BitSection) -> Option<bool> {
        match self {
            SessionRandomness::NotApplicable => None,
            SessionRandomness::Evaluated(m) => m.get(&section).map(|r| r.random),
        }
    }
}

/// Tests the IID section, and the subnet section when a /32 telescope prefix is given.
pub fn session_randomness(
    targets: &[Address6],
    telescope: Option<Prefix6>,
    cfg: &RandomnessConfig,
) -> Result<SessionRandomness> {
    if targets.len() < cfg.min_packets {
        return Ok(SessionRandomness::NotApplicable);
    }
    let mut sections = vec![BitSection::Iid64];
    if telescope.is_some_and(|p| p.len() == 32) {
        sections.insert(0, BitSection::Subnet32);
    }
    let scope = telescope.unwrap_or_else(|| Prefix6::truncating(Address6(0), 0));
    let mut out = BTreeMap::new();
    for section in sections {
        let bits = extract_bits(targets, section, scope)?;
        let tests = run_all(&bits, cfg.alpha)?;
        let random = tests[0].pass;
        out.insert(section, SectionResult { tests, random });
    }
    Ok(SessionRandomness::Evaluated(out))
}
