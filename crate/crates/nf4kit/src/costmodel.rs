//! Analytical cost model for the two decoder strategies on a lane-parallel
//! machine: LUT traffic per block, per-weight instruction counts, access
//! latency ratios, and an Amdahl projection of end-to-end impact.
//!
//! The defaults describe a 64-lane block decoding 8 elements per lane with
//! a 64-byte code table, memory that costs ~290 cycles per uncached global
//! access, and fast local storage at 23 cycles per read and 19 per write.
//! Every function takes explicit inputs, so the same arithmetic answers
//! what-if questions about other machines; nothing is rounded except in
//! display formatting.

use thiserror::Error;

/// Shape of one decode block on the modeled machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelGeometry {
    /// Lanes executing in lockstep within one block.
    pub lanes_per_block: u32,
    /// Size of the code table in bytes (16 x f32).
    pub lut_bytes: u32,
    /// Elements each lane decodes.
    pub elems_per_lane: u32,
}

impl Default for KernelGeometry {
    fn default() -> Self {
        Self {
            lanes_per_block: 64,
            lut_bytes: 64,
            elems_per_lane: 8,
        }
    }
}

/// Access costs, in cycles, of the modeled memory hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleCosts {
    /// Uncached global memory access.
    pub global_access: f64,
    /// Read from fast block-local storage.
    pub shared_read: f64,
    /// Write to fast block-local storage.
    pub shared_write: f64,
}

impl Default for CycleCosts {
    fn default() -> Self {
        Self {
            global_access: 290.0,
            shared_read: 23.0,
            shared_write: 19.0,
        }
    }
}

/// Per-weight instruction counts of the two decode strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstrCounts {
    /// Branchy tree decode path.
    pub baseline: u32,
    /// Staged direct-lookup path.
    pub optimized: u32,
}

impl Default for InstrCounts {
    fn default() -> Self {
        Self {
            baseline: 7,
            optimized: 2,
        }
    }
}

/// LUT bytes moved per block under each strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LutTraffic {
    /// Every lane pulls its own copy of the table.
    pub baseline_bytes: u64,
    /// One staged copy serves the whole block.
    pub optimized_bytes: u64,
    /// `baseline / optimized`; equals the lane count.
    pub ratio: f64,
}

/// Per-weight instruction comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstrReduction {
    pub baseline: u32,
    pub optimized: u32,
    /// `(baseline - optimized) / baseline`, a fraction of work removed.
    pub reduction: f64,
}

/// Ratio of global-access latency to fast-storage latency; the bracket the
/// staging optimization can win per access.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyAdvantage {
    /// `global_access / shared_read`.
    pub read_ratio: f64,
    /// `global_access / shared_write`.
    pub write_ratio: f64,
}

/// Cost model domain errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostModelError {
    #[error("geometry fields must all be positive")]
    DegenerateGeometry,
    #[error("cycle costs must be finite and positive, with global_access > shared_read")]
    InvalidCycleCosts,
    #[error("baseline instruction count must be positive")]
    ZeroBaseline,
    #[error("overhead fraction {0} is outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("kernel speedup {0} must be positive and finite")]
    NonPositiveSpeedup(f64),
}

/// LUT bytes moved per block: baseline replicates the table into every
/// lane's access stream, the optimized kernel stages it once.
pub fn lut_traffic(geometry: &KernelGeometry) -> Result<LutTraffic, CostModelError> {
    if geometry.lanes_per_block == 0 || geometry.lut_bytes == 0 || geometry.elems_per_lane == 0 {
        return Err(CostModelError::DegenerateGeometry);
    }
    let baseline = u64::from(geometry.lanes_per_block) * u64::from(geometry.lut_bytes);
    let optimized = u64::from(geometry.lut_bytes);
    Ok(LutTraffic {
        baseline_bytes: baseline,
        optimized_bytes: optimized,
        ratio: baseline as f64 / optimized as f64,
    })
}

/// Fraction of per-weight instructions removed by the optimized decode.
pub fn instruction_reduction(counts: &InstrCounts) -> Result<InstrReduction, CostModelError> {
    if counts.baseline == 0 {
        return Err(CostModelError::ZeroBaseline);
    }
    let reduction =
        (f64::from(counts.baseline) - f64::from(counts.optimized)) / f64::from(counts.baseline);
    Ok(InstrReduction {
        baseline: counts.baseline,
        optimized: counts.optimized,
        reduction,
    })
}

/// Latency ratios of global access against fast-storage read and write.
pub fn latency_advantage(costs: &CycleCosts) -> Result<LatencyAdvantage, CostModelError> {
    let all = [costs.global_access, costs.shared_read, costs.shared_write];
    if all.iter().any(|c| !c.is_finite() || *c <= 0.0) || costs.global_access <= costs.shared_read
    {
        return Err(CostModelError::InvalidCycleCosts);
    }
    Ok(LatencyAdvantage {
        read_ratio: costs.global_access / costs.shared_read,
        write_ratio: costs.global_access / costs.shared_write,
    })
}

/// End-to-end speedup when a fraction `overhead_fraction` of total runtime
/// is the dequantization overhead being accelerated by `kernel_speedup`:
/// `1 / ((1 - f) + f / s)`.
///
/// Identity at the edges (`f = 0` or `s = 1` gives exactly 1) and monotone
/// non-decreasing in both arguments.
pub fn amdahl_projection(overhead_fraction: f64, kernel_speedup: f64) -> Result<f64, CostModelError> {
    if !overhead_fraction.is_finite() || !(0.0..=1.0).contains(&overhead_fraction) {
        return Err(CostModelError::FractionOutOfRange(overhead_fraction));
    }
    if !kernel_speedup.is_finite() || kernel_speedup <= 0.0 {
        return Err(CostModelError::NonPositiveSpeedup(kernel_speedup));
    }
    Ok(1.0 / ((1.0 - overhead_fraction) + overhead_fraction / kernel_speedup))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lut_traffic() {
        let t = lut_traffic(&KernelGeometry::default()).unwrap();
        assert_eq!(t.baseline_bytes, 4096);
        assert_eq!(t.optimized_bytes, 64);
        assert_eq!(t.ratio, 64.0);
    }

    #[test]
    fn lut_ratio_equals_lane_count() {
        for lanes in [1u32, 2, 32, 64, 128, 1024] {
            let g = KernelGeometry {
                lanes_per_block: lanes,
                ..Default::default()
            };
            assert_eq!(lut_traffic(&g).unwrap().ratio, f64::from(lanes));
        }
        let g = KernelGeometry {
            lanes_per_block: 0,
            ..Default::default()
        };
        assert!(lut_traffic(&g).is_err());
    }

    #[test]
    fn default_instruction_reduction() {
        let r = instruction_reduction(&InstrCounts::default()).unwrap();
        assert_eq!(r.baseline, 7);
        assert_eq!(r.optimized, 2);
        assert_eq!(r.reduction, 5.0 / 7.0);
        assert!((r.reduction - 0.714286).abs() < 5e-7);
    }

    #[test]
    fn instruction_reduction_edges() {
        let same = InstrCounts {
            baseline: 4,
            optimized: 4,
        };
        assert_eq!(instruction_reduction(&same).unwrap().reduction, 0.0);
        let zero = InstrCounts {
            baseline: 0,
            optimized: 2,
        };
        assert_eq!(
            instruction_reduction(&zero),
            Err(CostModelError::ZeroBaseline)
        );
    }

    #[test]
    fn default_latency_advantage() {
        let l = latency_advantage(&CycleCosts::default()).unwrap();
        assert_eq!(l.read_ratio, 290.0 / 23.0);
        assert_eq!(l.write_ratio, 290.0 / 19.0);
        assert!((l.read_ratio - 12.608696).abs() < 1e-6);
        assert!((l.write_ratio - 15.263158).abs() < 1e-6);
        assert!(l.read_ratio > 1.0 && l.write_ratio > 1.0);
    }

    #[test]
    fn latency_advantage_round_numbers() {
        let l = latency_advantage(&CycleCosts {
            global_access: 300.0,
            shared_read: 30.0,
            shared_write: 20.0,
        })
        .unwrap();
        assert_eq!(l.read_ratio, 10.0);
        assert_eq!(l.write_ratio, 15.0);
    }

    #[test]
    fn latency_advantage_rejects_bad_costs() {
        for costs in [
            CycleCosts {
                global_access: 10.0,
                shared_read: 23.0,
                shared_write: 19.0,
            },
            CycleCosts {
                global_access: f64::NAN,
                shared_read: 23.0,
                shared_write: 19.0,
            },
            CycleCosts {
                global_access: 290.0,
                shared_read: 0.0,
                shared_write: 19.0,
            },
        ] {
            assert!(latency_advantage(&costs).is_err(), "{costs:?}");
        }
    }

    #[test]
    fn amdahl_known_points() {
        // Half the runtime accelerated 2x: exactly 4/3.
        assert_eq!(amdahl_projection(0.5, 2.0).unwrap(), 4.0 / 3.0);
        // Identity edges.
        assert_eq!(amdahl_projection(0.0, 10.0).unwrap(), 1.0);
        assert_eq!(amdahl_projection(0.7, 1.0).unwrap(), 1.0);
        // Whole runtime accelerated: the projection is the speedup itself.
        assert_eq!(amdahl_projection(1.0, 8.0).unwrap(), 8.0);
        // Published-style operating point: ~29.5% overhead, 2.19x kernel.
        let p = amdahl_projection(0.295, 2.19).unwrap();
        assert!((p - 1.191).abs() < 5e-4, "{p}");
    }

    #[test]
    fn amdahl_domain_errors() {
        assert!(amdahl_projection(-0.1, 2.0).is_err());
        assert!(amdahl_projection(1.1, 2.0).is_err());
        assert!(amdahl_projection(f64::NAN, 2.0).is_err());
        assert!(amdahl_projection(0.5, 0.0).is_err());
        assert!(amdahl_projection(0.5, -3.0).is_err());
        assert!(amdahl_projection(0.5, f64::INFINITY).is_err());
    }

    #[test]
    fn amdahl_monotone_in_both_arguments() {
        let fs: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let ss: Vec<f64> = (0..20).map(|i| 1.0 + i as f64).collect();
        for &f in &fs {
            let mut prev = f64::NEG_INFINITY;
            for &s in &ss {
                let p = amdahl_projection(f, s).unwrap();
                assert!(p >= prev, "f={f} s={s}: {p} < {prev}");
                assert!(p >= 1.0 - 1e-15);
                prev = p;
            }
        }
        for &s in &ss {
            let mut prev = f64::NEG_INFINITY;
            for &f in &fs {
                let p = amdahl_projection(f, s).unwrap();
                assert!(p >= prev, "f={f} s={s}: {p} < {prev}");
                prev = p;
            }
        }
    }
}
