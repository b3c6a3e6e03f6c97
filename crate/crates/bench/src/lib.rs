//! Shared shapes for the criterion benchmarks. The suite compares one
//! forward pass of window-token mining against joint full self-attention
//! over the same frames; run it with `cargo bench -p cffm-bench`.

use cffm_core::harness::benchmark::BenchConfig;
use cffm_core::schedule::{ContextSchedule, ScheduleEntry};

/// A shape small enough for criterion's default sample counts: 3 frames of
/// 16x16x16 features, one layer, 48 context tokens per window.
pub fn small_config() -> BenchConfig {
    BenchConfig {
        h: 16,
        w: 16,
        c: 16,
        heads: 2,
        layers: 1,
        frames: 3,
        schedule: ContextSchedule {
            s: 4,
            entries: vec![
                ScheduleEntry { offset: 2, r: 8, p: 2 },
                ScheduleEntry { offset: 1, r: 4, p: 1 },
                ScheduleEntry { offset: 0, r: 4, p: 1 },
            ],
        },
        reps: 1,
        seed: 0,
        measure_multiplies: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_config_is_valid() {
        assert!(small_config().validate().is_ok());
    }
}
