//! Per-neuron archives of e-prop signals and the update-history bookkeeping
//! that decides which entries can be dropped.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{EpropError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecurrentHistoryEntry {
    pub t: i64,
    pub psi: f64,
    pub l: f64,
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReadoutHistoryEntry {
    pub t: i64,
    pub e: f64,
}

pub trait HistoryEntry: Copy {
    fn empty(t: i64) -> Self;
    fn t(&self) -> i64;
}

impl HistoryEntry for RecurrentHistoryEntry {
    fn empty(t: i64) -> Self {
        RecurrentHistoryEntry {
            t,
            ..Default::default()
        }
    }

    fn t(&self) -> i64 {
        self.t
    }
}

impl HistoryEntry for ReadoutHistoryEntry {
    fn empty(t: i64) -> Self {
        ReadoutHistoryEntry { t, e: 0.0 }
    }

    fn t(&self) -> i64 {
        self.t
    }
}

/// Ordered `(t_update, access_counter)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateHistory {
    entries: Vec<(i64, u32)>,
}

impl UpdateHistory {
    pub fn entries(&self) -> &[(i64, u32)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn contains(&self, t: i64) -> bool {
        self.entries.binary_search_by_key(&t, |&(k, _)| k).is_ok()
    }

    /// Register a synapse for the first time.
    pub fn add(&mut self, t: i64) {
        match self.entries.binary_search_by_key(&t, |&(k, _)| k) {
            Ok(i) => self.entries[i].1 += 1,
            Err(i) => self.entries.insert(i, (t, 1)),
        }
    }

    /// Move one registration from `t_old` to `t_new`.
    pub fn register_update(&mut self, t_old: i64, t_new: i64) -> Result<()> {
        if t_old == t_new {
            return if self.contains(t_old) {
                Ok(())
            } else {
                Err(EpropError::Bookkeeping(t_old))
            };
        }
        match self.entries.binary_search_by_key(&t_old, |&(k, _)| k) {
            Ok(i) => {
                self.entries[i].1 -= 1;
                if self.entries[i].1 == 0 {
                    self.entries.remove(i);
                }
            }
            Err(_) => return Err(EpropError::Bookkeeping(t_old)),
        }
        self.add(t_new);
        Ok(())
    }

    pub fn front(&self) -> Option<i64> {
        self.entries.first().map(|&(t, _)| t)
    }
}

/// Which cleaning rule applies to an archive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchiveMode {
    /// Samples of constant length `update_interval`, starting at `shift`.
    FixedInterval { update_interval: i64, shift: i64 },
    /// Registrations at arbitrary steps; history beyond `cutoff` after a
    /// registration is never read. `lag` is the delay after which entries
    /// are complete.
    PerSpike { cutoff: i64, lag: i64 },
}

/// Append-only (until cleaned) archive of per-step entries.
#[derive(Debug, Clone)]
pub struct EpropHistory<E: HistoryEntry> {
    entries: VecDeque<E>,
    pub updates: UpdateHistory,
    pub mode: ArchiveMode,
}

pub type RecurrentArchive = EpropHistory<RecurrentHistoryEntry>;
pub type ReadoutArchive = EpropHistory<ReadoutHistoryEntry>;

impl<E: HistoryEntry> EpropHistory<E> {
    pub fn new(mode: ArchiveMode) -> Self {
        EpropHistory {
            entries: VecDeque::new(),
            updates: UpdateHistory::default(),
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &E> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Insert an empty entry for step `t`.
    pub fn append_entry(&mut self, t: i64) -> Result<()> {
        if let Some(last) = self.entries.back() {
            if t <= last.t() {
                return Err(EpropError::Protocol(format!(
                    "append for step {t} after step {}",
                    last.t()
                )));
            }
        }
        self.entries.push_back(E::empty(t));
        Ok(())
    }

    fn index_of(&self, t: i64) -> Option<usize> {
        let first = self.entries.front()?.t();
        // entries are usually contiguous; fall back to search otherwise
        let guess = t - first;
        if guess >= 0 && (guess as usize) < self.entries.len() {
            let g = guess as usize;
            if self.entries[g].t() == t {
                return Some(g);
            }
        }
        self.entries.binary_search_by_key(&t, |e| e.t()).ok()
    }

    pub fn entry_mut(&mut self, t: i64) -> Result<&mut E> {
        let i = self
            .index_of(t)
            .ok_or_else(|| EpropError::Protocol(format!("write to missing entry at step {t}")))?;
        Ok(&mut self.entries[i])
    }

    /// Entries with `t_a < t <= t_b`, which must all still be present.
    pub fn get_range(&self, t_a: i64, t_b: i64) -> Result<Vec<E>> {
        let mut out = Vec::with_capacity((t_b - t_a).max(0) as usize);
        self.for_range(t_a, t_b, |e| out.push(*e))?;
        Ok(out)
    }

    /// Visit entries with `t_a < t <= t_b` in order without copying.
    pub fn for_range(&self, t_a: i64, t_b: i64, mut visit: impl FnMut(&E)) -> Result<()> {
        if t_b <= t_a {
            return Ok(());
        }
        let start = self.index_of(t_a + 1).ok_or(EpropError::ArchiveGap {
            from: t_a,
            to: t_b,
            missing: t_a + 1,
        })?;
        let mut expect = t_a + 1;
        for e in self.entries.range(start..) {
            if e.t() > t_b {
                break;
            }
            if e.t() != expect {
                return Err(EpropError::ArchiveGap {
                    from: t_a,
                    to: t_b,
                    missing: expect,
                });
            }
            visit(e);
            expect += 1;
        }
        if expect != t_b + 1 {
            return Err(EpropError::ArchiveGap {
                from: t_a,
                to: t_b,
                missing: expect,
            });
        }
        Ok(())
    }

    pub fn register_update(&mut self, t_old: i64, t_new: i64) -> Result<()> {
        self.updates.register_update(t_old, t_new)
    }

    /// Drop entries no registered synapse can still request. `now` is the
    /// current step (entries up to `now` may exist).
    pub fn erase_used_history(&mut self, now: i64) {
        let Some(front) = self.updates.front() else {
            self.entries.clear();
            return;
        };
        while self.entries.front().is_some_and(|e| e.t() <= front) {
            self.entries.pop_front();
        }
        let regs = &self.updates.entries;
        match self.mode {
            ArchiveMode::FixedInterval {
                update_interval,
                shift,
            } => {
                // an entry at t belongs to the interval starting at
                // shift + floor((t - shift - 1) / P) * P
                let p = update_interval;
                let current_start = shift + (now - shift).div_euclid(p) * p;
                self.entries.retain(|e| {
                    let start = shift + (e.t() - shift - 1).div_euclid(p) * p;
                    start >= current_start
                        || regs.binary_search_by_key(&start, |&(k, _)| k).is_ok()
                });
            }
            ArchiveMode::PerSpike { cutoff, lag } => {
                let complete_until = now - 1 - lag;
                // entries and registrations are both sorted: walk them together
                let mut i = 0;
                self.entries.retain(|e| {
                    let t = e.t();
                    while i < regs.len() && regs[i].0 < t {
                        i += 1;
                    }
                    // latest registration strictly before t
                    if i == 0 {
                        return false;
                    }
                    let t0 = regs[i - 1].0;
                    t <= t0 + cutoff || t > complete_until
                });
            }
        }
    }

    /// Drop only the entries at or before the earliest registration. Cheap
    /// enough to call after every registration move; the full
    /// [`erase_used_history`](Self::erase_used_history) still has to run
    /// periodically to keep the length bound.
    pub fn erase_front(&mut self) {
        if let Some(front) = self.updates.front() {
            while self.entries.front().is_some_and(|e| e.t() <= front) {
                self.entries.pop_front();
            }
        }
    }

    /// Upper bound on the archive length right after cleaning at step `now`.
    pub fn length_bound(&self, now: i64) -> usize {
        let regs = self.updates.entries();
        match self.mode {
            ArchiveMode::FixedInterval {
                update_interval, ..
            } => regs.len() * update_interval as usize + (now - self.current_start(now)) as usize,
            ArchiveMode::PerSpike { cutoff, lag } => {
                let complete_until = now - 1 - lag;
                let mut bound = 0i64;
                for w in regs.windows(2) {
                    bound += (w[1].0 - w[0].0).min(cutoff);
                }
                if let Some(&(last, _)) = regs.last() {
                    bound += (complete_until - last).clamp(0, cutoff);
                }
                bound += lag + 1;
                bound as usize
            }
        }
    }

    fn current_start(&self, now: i64) -> i64 {
        match self.mode {
            ArchiveMode::FixedInterval {
                update_interval,
                shift,
            } => shift + (now - shift).div_euclid(update_interval) * update_interval,
            ArchiveMode::PerSpike { .. } => now,
        }
    }
}

impl RecurrentArchive {
    pub fn write_psi(&mut self, t: i64, psi: f64, f: f64) -> Result<()> {
        let e = self.entry_mut(t)?;
        e.psi = psi;
        e.f = f;
        Ok(())
    }

    pub fn write_l(&mut self, t: i64, l: f64) -> Result<()> {
        self.entry_mut(t)?.l = l;
        Ok(())
    }

    /// Overwrite the rate of every entry in `(t_a, t_b]`.
    pub fn write_f_range(&mut self, t_a: i64, t_b: i64, f: f64) -> Result<()> {
        for t in t_a + 1..=t_b {
            self.entry_mut(t)?.f = f;
        }
        Ok(())
    }

    /// One `t psi L f` line per entry.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{} {:e} {:e} {:e}", e.t, e.psi, e.l, e.f);
        }
        s
    }
}

impl ReadoutArchive {
    pub fn write_e(&mut self, t: i64, e: f64) -> Result<()> {
        self.entry_mut(t)?.e = e;
        Ok(())
    }

    pub fn dump(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{} {:e}", e.t, e.e);
        }
        s
    }
}

/// Parse a `t psi L f` dump back into entries.
pub fn parse_dump(text: &str) -> Result<Vec<RecurrentHistoryEntry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || EpropError::Io(format!("malformed archive dump line {}", n + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(RecurrentHistoryEntry {
                t: f[0].parse().map_err(|_| bad())?,
                psi: f[1].parse().map_err(|_| bad())?,
                l: f[2].parse().map_err(|_| bad())?,
                f: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
