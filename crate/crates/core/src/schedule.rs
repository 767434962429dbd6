//! Recursive asymmetric prefix-splitting announcement schedule.
//!
//! After a baseline announcing only the base prefix, each cycle withdraws one
//! prefix (the victim) and announces its two halves. The first victim is the
//! base; every later victim is the upper half created by the previous split.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Address6, Micros, Prefix6, MICROS_PER_DAY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    #[serde(with = "crate::timefmt::rfc3339")]
    pub start: Micros,
    #[serde(with = "crate::timefmt::rfc3339")]
    pub end: Micros,
}

impl Window {
    pub fn new(start: Micros, end: Micros) -> Self {
        Window { start, end }
    }

    /// Half-open containment: `start <= ts < end`.
    pub fn contains(&self, ts: Micros) -> bool {
        self.start <= ts && ts < self.end
    }

    pub fn duration(&self) -> Micros {
        self.end - self.start
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnouncementCycle {
    pub index: usize,
    /// Withdrawal period at the start of the cycle.
    pub dark: Window,
    pub window: Window,
    /// Sorted by address.
    pub announced: Vec<Prefix6>,
    /// The covering prefix withdrawn in this cycle.
    pub victim: Prefix6,
    pub new_pair: [Prefix6; 2],
}

impl AnnouncementCycle {
    pub fn span(&self) -> Window {
        Window::new(self.dark.start, self.window.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnouncementSchedule {
    pub base: Prefix6,
    pub baseline: Window,
    pub cycles: Vec<AnnouncementCycle>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub cycle_days: i64,
    pub dark_days: i64,
    pub baseline_days: i64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            cycle_days: 14,
            dark_days: 1,
            baseline_days: 84,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CycleInfo<'a> {
    /// 0 for the baseline.
    pub index: usize,
    pub announced: &'a [Prefix6],
    pub dark: bool,
}

pub fn generate_schedule(
    base: Prefix6,
    n_cycles: usize,
    t0: Micros,
    params: ScheduleParams,
) -> Result<AnnouncementSchedule> {
    if params.cycle_days <= 0 || params.dark_days < 0 || params.baseline_days < 0 {
        return Err(Error::Config("schedule durations must be non-negative".into()));
    }
    if params.dark_days >= params.cycle_days {
        return Err(Error::Config("dark period must be shorter than a cycle".into()));
    }
    if base.len() as usize + n_cycles > 128 {
        return Err(Error::CannotSplit(base));
    }
    let baseline = Window::new(t0, t0 + params.baseline_days * MICROS_PER_DAY);
    let mut announced = vec![base];
    let mut victim = base;
    let mut cycles = Vec::with_capacity(n_cycles);
    for k in 1..=n_cycles {
        let (lo, hi) = victim.split()?;
        let pos = announced
            .iter()
            .position(|&p| p == victim)
            .expect("victim is announced");
        announced.splice(pos..=pos, [lo, hi]);
        let start = baseline.end + (k as i64 - 1) * params.cycle_days * MICROS_PER_DAY;
        let dark_end = start + params.dark_days * MICROS_PER_DAY;
        cycles.push(AnnouncementCycle {
            index: k,
            dark: Window::new(start, dark_end),
            window: Window::new(dark_end, start + params.cycle_days * MICROS_PER_DAY),
            announced: announced.clone(),
            victim,
            new_pair: [lo, hi],
        });
        victim = hi;
    }
    Ok(AnnouncementSchedule {
        base,
        baseline,
        cycles,
    })
}

impl AnnouncementSchedule {
    pub fn end(&self) -> Micros {
        self.cycles.last().map_or(self.baseline.end, |c| c.window.end)
    }

    /// The announced set of cycle `index`, with 0 meaning the baseline.
    pub fn announced(&self, index: usize) -> Option<&[Prefix6]> {
        if index == 0 {
            Some(std::slice::from_ref(&self.base))
        } else {
            self.cycles.get(index - 1).map(|c| c.announced.as_slice())
        }
    }

    pub fn cycle(&self, index: usize) -> Option<&AnnouncementCycle> {
        index.checked_sub(1).and_then(|i| self.cycles.get(i))
    }

    pub fn cycle_at(&self, ts: Micros) -> Option<CycleInfo<'_>> {
        if self.baseline.contains(ts) {
            return Some(CycleInfo {
                index: 0,
                announced: std::slice::from_ref(&self.base),
                dark: false,
            });
        }
        let first = self.cycles.first()?;
        if ts < first.dark.start || ts >= self.end() {
            return None;
        }
        // Cycles are contiguous and equally long.
        let len = first.span().duration();
        let i = ((ts - first.dark.start) / len) as usize;
        let c = &self.cycles[i];
        Some(CycleInfo {
            index: c.index,
            announced: &c.announced,
            dark: c.dark.contains(ts),
        })
    }

    pub fn most_specific_announced(&self, cycle: usize, dst: Address6) -> Option<Prefix6> {
        // Announced prefixes are disjoint, so at most one contains dst.
        self.announced(cycle)?
            .iter()
            .copied()
            .find(|p| p.contains(dst))
    }

    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let s: AnnouncementSchedule = serde_json::from_reader(r)?;
        s.check()?;
        Ok(s)
    }

    /// Structural checks applied to schedules read from disk.
    pub fn check(&self) -> Result<()> {
        let mut prev_end = self.baseline.end;
        for (i, c) in self.cycles.iter().enumerate() {
            if c.index != i + 1 {
                return Err(Error::Invalid(format!("cycle {} out of order", c.index)));
            }
            if c.dark.start < prev_end || c.dark.end != c.window.start || c.window.end <= c.window.start {
                return Err(Error::Invalid(format!("cycle {} windows overlap", c.index)));
            }
            if c.announced.len() != c.index + 1 {
                return Err(Error::Invalid(format!(
                    "cycle {} announces {} prefixes",
                    c.index,
                    c.announced.len()
                )));
            }
            if !c.announced.iter().all(|p| self.base.covers(p)) {
                return Err(Error::Invalid(format!("cycle {} leaves the base prefix", c.index)));
            }
            prev_end = c.window.end;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Prefix6 {
        s.parse().unwrap()
    }

    fn sched(n: usize) -> AnnouncementSchedule {
        generate_schedule(p("2001:db8::/32"), n, 0, ScheduleParams::default()).unwrap()
    }

    #[test]
    fn first_cycles() {
        let s = sched(2);
        assert_eq!(
            s.cycles[0].announced,
            vec![p("2001:db8::/33"), p("2001:db8:8000::/33")]
        );
        assert_eq!(s.cycles[1].victim, p("2001:db8:8000::/33"));
        assert_eq!(
            s.cycles[1].announced,
            vec![
                p("2001:db8::/33"),
                p("2001:db8:8000::/34"),
                p("2001:db8:c000::/34")
            ]
        );
    }

    #[test]
    fn sixteen_cycles_reach_48() {
        let s = sched(16);
        let mut lens: Vec<u8> = s.cycles[15].announced.iter().map(|p| p.len()).collect();
        lens.sort();
        let mut want: Vec<u8> = (33..=48).collect();
        want.push(48);
        assert_eq!(lens, want);
        assert!(generate_schedule(p("2001:db8::/120"), 9, 0, ScheduleParams::default()).is_err());
    }

    #[test]
    fn cycle_lookup() {
        let s = sched(4);
        let d = MICROS_PER_DAY;
        let c = s.cycle_at(5 * d).unwrap();
        assert_eq!((c.index, c.announced, c.dark), (0, &[p("2001:db8::/32")][..], false));
        let c3 = s.cycle_at(84 * d + 28 * d + 3600).unwrap();
        assert_eq!(c3.index, 3);
        assert!(c3.dark);
        assert_eq!(c3.announced.len(), 4);
        let c3b = s.cycle_at(84 * d + 29 * d).unwrap();
        assert_eq!((c3b.index, c3b.dark), (3, false));
        assert!(s.cycle_at(s.end()).is_none());
        assert!(s.cycle_at(-1).is_none());
    }

    #[test]
    fn most_specific() {
        let s = sched(2);
        let a = |x: &str| x.parse::<Address6>().unwrap();
        assert_eq!(s.most_specific_announced(2, a("2001:db8:c000::1")), Some(p("2001:db8:c000::/34")));
        assert_eq!(s.most_specific_announced(1, a("2001:db8::1")), Some(p("2001:db8::/33")));
        assert_eq!(s.most_specific_announced(1, a("2001:db9::1")), None);
        assert_eq!(s.most_specific_announced(0, a("2001:db8::1")), Some(p("2001:db8::/32")));
    }

    #[test]
    fn json_round_trip() {
        let s = sched(3);
        let mut buf = Vec::new();
        s.to_writer(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"new_pair\""));
        assert!(text.contains("1970-03-26T00:00:00Z"));
        assert_eq!(AnnouncementSchedule::from_reader(&buf[..]).unwrap(), s);
    }
}
