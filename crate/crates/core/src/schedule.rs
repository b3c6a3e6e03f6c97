//! Context schedule: which frames feed the context, how large a region is
//! taken around each window, and how coarsely each region is pooled.
//!
//! A schedule lists entries from the farthest reference frame down to the
//! target. Each entry takes an `r x r` full-resolution region and pools it
//! with patch size `p`, contributing `(r/p)^2` tokens; the total over all
//! entries is the per-window token count `m`. The target frame may appear
//! in more than one entry (a fine set plus an extra coarser set).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    /// Frames back from the target; 0 is the target itself.
    pub offset: usize,
    /// Side length of the gathered full-resolution region.
    pub r: usize,
    /// Pooling patch size applied to the source frame for this entry.
    pub p: usize,
}

impl ScheduleEntry {
    /// Side length of the pooled block this entry gathers.
    pub fn block_side(&self) -> usize {
        self.r / self.p
    }

    /// Tokens this entry contributes per window.
    pub fn tokens(&self) -> usize {
        self.block_side() * self.block_side()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSchedule {
    /// Window side length on the target frame.
    pub s: usize,
    /// Farthest frame first, target (offset 0) last; a trailing second
    /// offset-0 entry is an extra target set.
    pub entries: Vec<ScheduleEntry>,
}

impl ContextSchedule {
    /// Checks the structural rules and returns non-fatal warnings.
    ///
    /// Errors: empty schedule, s = 0, p = 0, p not dividing r, p > r,
    /// offsets increasing along the list, or no offset-0 entry. Pool sizes
    /// must not increase as offsets decrease (entries at the same offset
    /// are exempt, which is what permits the extra target set). A region
    /// size r that grows as offsets shrink is unusual but harmless, so it
    /// only warns.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.s == 0 {
            return Err(Error::contract("schedule", "window size s must be >= 1"));
        }
        if self.entries.is_empty() {
            return Err(Error::contract("schedule", "no entries"));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.p == 0 {
                return Err(Error::contract("schedule", format!("entry {i}: p must be >= 1")));
            }
            if e.r < e.p {
                return Err(Error::contract(
                    "schedule",
                    format!("entry {i}: region {} smaller than pool size {}", e.r, e.p),
                ));
            }
            if e.r % e.p != 0 {
                return Err(Error::contract(
                    "schedule",
                    format!("entry {i}: pool size {} must divide region {}", e.p, e.r),
                ));
            }
        }
        let mut warnings = Vec::new();
        for (i, pair) in self.entries.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            if b.offset > a.offset {
                return Err(Error::contract(
                    "schedule",
                    format!("entries {i},{}: offsets must not increase toward the end", i + 1),
                ));
            }
            if b.offset < a.offset {
                if b.p > a.p {
                    return Err(Error::contract(
                        "schedule",
                        format!(
                            "entries {i},{}: pooling must get finer toward the target ({} -> {})",
                            i + 1,
                            a.p,
                            b.p
                        ),
                    ));
                }
                if b.r > a.r {
                    warnings.push(format!(
                        "entries {i},{}: region grows toward the target ({} -> {})",
                        i + 1,
                        a.r,
                        b.r
                    ));
                }
            }
        }
        if self.entries.last().map(|e| e.offset) != Some(0) {
            return Err(Error::contract("schedule", "the last entry must cover the target (offset 0)"));
        }
        Ok(warnings)
    }

    /// Per-window context token count m.
    pub fn token_count(&self) -> usize {
        self.entries.iter().map(ScheduleEntry::tokens).sum()
    }

    /// Distinct reference offsets, farthest first (the k values).
    pub fn reference_offsets(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for e in &self.entries {
            if e.offset > 0 && !out.contains(&e.offset) {
                out.push(e.offset);
            }
        }
        out
    }

    /// Number of reference frames l.
    pub fn reference_count(&self) -> usize {
        self.reference_offsets().len()
    }

    /// Farthest offset (0 when the schedule only uses the target).
    pub fn max_offset(&self) -> usize {
        self.entries.iter().map(|e| e.offset).max().unwrap_or(0)
    }

    /// True when every window size and pool size divides (h, w).
    pub fn divides(&self, h: usize, w: usize) -> bool {
        let mut sides: Vec<usize> = vec![self.s];
        sides.extend(self.entries.iter().map(|e| e.p));
        sides.iter().all(|&d| d > 0 && h % d == 0 && w % d == 0)
    }

    /// Smallest extents >= (h, w) that satisfy [`Self::divides`].
    pub fn padded_extents(&self, h: usize, w: usize) -> (usize, usize) {
        let mut step = self.s.max(1);
        for e in &self.entries {
            step = lcm(step, e.p);
        }
        (h.div_ceil(step) * step, w.div_ceil(step) * step)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Schedule used in the walkthrough figure: three references plus target.
#[cfg(test)]
pub(crate) fn figure_schedule() -> ContextSchedule {
    ContextSchedule {
        s: 5,
        entries: vec![
            ScheduleEntry { offset: 9, r: 20, p: 4 },
            ScheduleEntry { offset: 6, r: 12, p: 3 },
            ScheduleEntry { offset: 3, r: 6, p: 2 },
            ScheduleEntry { offset: 0, r: 4, p: 1 },
        ],
    }
}

/// The full-scale default: k = {9, 6, 3}, r = {49, 20, 6}, p = {7, 4, 2},
/// a fine target set (7, 1) and an extra coarse target set (35, 5).
pub fn default_schedule() -> ContextSchedule {
    ContextSchedule {
        s: 7,
        entries: vec![
            ScheduleEntry { offset: 9, r: 49, p: 7 },
            ScheduleEntry { offset: 6, r: 20, p: 4 },
            ScheduleEntry { offset: 3, r: 6, p: 2 },
            ScheduleEntry { offset: 0, r: 7, p: 1 },
            ScheduleEntry { offset: 0, r: 35, p: 5 },
        ],
    }
}
