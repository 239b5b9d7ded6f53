use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use super::policy::Decision;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("malformed strategy `{input}`: {reason}")]
pub struct StrategyError {
    pub input: String,
    pub reason: String,
}

/// Which side of the threshold triggers a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Above,
    Below,
}

/// Switch `from -> to` when coordinate `axis` is strictly above/below `level`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRule {
    pub from: usize,
    pub to: usize,
    pub axis: usize,
    pub side: Side,
    pub level: f64,
}

impl ThresholdRule {
    fn fires(&self, mode: usize, x: &[f64]) -> bool {
        self.from == mode
            && match self.side {
                Side::Above => x[self.axis] > self.level,
                Side::Below => x[self.axis] < self.level,
            }
    }
}

/// Explicit, non-optimal switching strategy.
///
/// Text forms (modes 1-based):
///
/// * `never`
/// * `schedule:0->2;0.5->1` switches into the given mode at the first
///   decision time at or after each listed time.
/// * `threshold:budget=3;1->2@x1>4.5;2->1@x1<3` applies the first matching
///   rule, at most once per decision time and `budget` times in total.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Never,
    Schedule(Vec<(f64, usize)>),
    Threshold { rules: Vec<ThresholdRule>, budget: usize },
}

/// Per-path mutable state of a strategy.
#[derive(Debug, Clone, Default)]
pub struct StrategyState {
    next_entry: usize,
    used: usize,
    last_switch_step: Option<usize>,
}

impl Strategy {
    /// Largest mode index referenced, plus one.
    pub fn modes_needed(&self) -> usize {
        match self {
            Strategy::Never => 0,
            Strategy::Schedule(e) => e.iter().map(|e| e.1 + 1).max().unwrap_or(0),
            Strategy::Threshold { rules, .. } => {
                rules.iter().map(|r| r.from.max(r.to) + 1).max().unwrap_or(0)
            }
        }
    }

    pub fn axes_needed(&self) -> usize {
        match self {
            Strategy::Threshold { rules, .. } => rules.iter().map(|r| r.axis + 1).max().unwrap_or(0),
            _ => 0,
        }
    }

    /// Next action at decision step `n` (time `t`), in mode `mode` at `x`.
    /// Called repeatedly within a step until it returns `Continue`.
    pub fn decide(&self, state: &mut StrategyState, n: usize, t: f64, x: &[f64], mode: usize) -> Decision {
        match self {
            Strategy::Never => Decision::Continue,
            Strategy::Schedule(entries) => {
                while let Some(&(when, to)) = entries.get(state.next_entry) {
                    if when > t + 1e-12 {
                        break;
                    }
                    state.next_entry += 1;
                    if to != mode {
                        return Decision::SwitchTo(to);
                    }
                }
                Decision::Continue
            }
            Strategy::Threshold { rules, budget } => {
                if state.used >= *budget || state.last_switch_step == Some(n) {
                    return Decision::Continue;
                }
                match rules.iter().find(|r| r.fires(mode, x)) {
                    Some(r) => {
                        state.used += 1;
                        state.last_switch_step = Some(n);
                        Decision::SwitchTo(r.to)
                    }
                    None => Decision::Continue,
                }
            }
        }
    }

    /// Random threshold strategy on `m` modes: every ordered pair gets a rule
    /// with probability one half (at least one rule overall), thresholds are
    /// uniform on `[lo[a], hi[a]]` of a uniformly chosen axis and the budget
    /// is uniform on `1..=5`.
    pub fn random_threshold<R: Rng + ?Sized>(rng: &mut R, m: usize, lo: &[f64], hi: &[f64]) -> Strategy {
        let mut rules = Vec::new();
        while rules.is_empty() && m > 1 {
            for from in 0..m {
                for to in (0..m).filter(|&to| to != from) {
                    if rng.random_bool(0.5) {
                        let axis = rng.random_range(0..lo.len());
                        rules.push(ThresholdRule {
                            from,
                            to,
                            axis,
                            side: if rng.random_bool(0.5) { Side::Above } else { Side::Below },
                            level: rng.random_range(lo[axis]..=hi[axis]),
                        });
                    }
                }
            }
        }
        Strategy::Threshold {
            rules,
            budget: rng.random_range(1..=5),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Never => f.write_str("never"),
            Strategy::Schedule(entries) => {
                f.write_str("schedule:")?;
                for (k, (t, to)) in entries.iter().enumerate() {
                    if k > 0 {
                        f.write_str(";")?;
                    }
                    write!(f, "{t:?}->{}", to + 1)?;
                }
                Ok(())
            }
            Strategy::Threshold { rules, budget } => {
                write!(f, "threshold:budget={budget}")?;
                for r in rules {
                    let op = if r.side == Side::Above { '>' } else { '<' };
                    write!(f, ";{}->{}@x{}{op}{:?}", r.from + 1, r.to + 1, r.axis + 1, r.level)?;
                }
                Ok(())
            }
        }
    }
}

fn parse_mode(s: &str) -> Option<usize> {
    s.trim().parse::<usize>().ok().filter(|&k| k >= 1).map(|k| k - 1)
}

impl FromStr for Strategy {
    type Err = StrategyError;

    fn from_str(input: &str) -> Result<Strategy, StrategyError> {
        let fail = |reason: &str| StrategyError {
            input: input.to_string(),
            reason: reason.to_string(),
        };
        let s = input.trim();
        if s == "never" {
            return Ok(Strategy::Never);
        }
        if let Some(body) = s.strip_prefix("schedule:") {
            let mut entries = Vec::new();
            for part in body.split(';').filter(|p| !p.trim().is_empty()) {
                let (t, to) = part.split_once("->").ok_or_else(|| fail("expected `time->mode`"))?;
                let t: f64 = t.trim().parse().map_err(|_| fail("bad time"))?;
                if !t.is_finite() || t < 0.0 {
                    return Err(fail("times must be finite and non-negative"));
                }
                let to = parse_mode(to).ok_or_else(|| fail("bad mode"))?;
                entries.push((t, to));
            }
            if entries.windows(2).any(|w| w[1].0 < w[0].0) {
                return Err(fail("schedule times must be non-decreasing"));
            }
            return Ok(Strategy::Schedule(entries));
        }
        if let Some(body) = s.strip_prefix("threshold:") {
            let mut parts = body.split(';');
            let budget = parts
                .next()
                .and_then(|b| b.trim().strip_prefix("budget="))
                .and_then(|b| b.trim().parse::<usize>().ok())
                .ok_or_else(|| fail("expected `budget=<n>` first"))?;
            let mut rules = Vec::new();
            for part in parts.filter(|p| !p.trim().is_empty()) {
                let (pair, cond) = part.split_once('@').ok_or_else(|| fail("expected `i->j@x<k><op><level>`"))?;
                let (from, to) = pair.split_once("->").ok_or_else(|| fail("expected `i->j`"))?;
                let from = parse_mode(from).ok_or_else(|| fail("bad mode"))?;
                let to = parse_mode(to).ok_or_else(|| fail("bad mode"))?;
                if from == to {
                    return Err(fail("a rule must change mode"));
                }
                let (var, side, level) = if let Some((a, b)) = cond.split_once('>') {
                    (a, Side::Above, b)
                } else if let Some((a, b)) = cond.split_once('<') {
                    (a, Side::Below, b)
                } else {
                    return Err(fail("expected `>` or `<`"));
                };
                let axis = var
                    .trim()
                    .strip_prefix('x')
                    .and_then(parse_mode)
                    .ok_or_else(|| fail("bad variable"))?;
                let level: f64 = level.trim().parse().map_err(|_| fail("bad level"))?;
                if !level.is_finite() {
                    return Err(fail("level must be finite"));
                }
                rules.push(ThresholdRule {
                    from,
                    to,
                    axis,
                    side,
                    level,
                });
            }
            return Ok(Strategy::Threshold { rules, budget });
        }
        Err(fail("expected `never`, `schedule:...` or `threshold:...`"))
    }
}
