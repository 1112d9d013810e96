//! Motion-mode switching between the three constraint sets.
//!
//! - **LIU**: LiDAR + UWB (inside the UWB coverage region)
//! - **LIO**: LiDAR only (outside the region, geometry healthy)
//! - **LIW**: LiDAR + wheel (outside the region, LiDAR degenerate)
//!
//! Transitions out of LIU are immediate when the robot leaves the region;
//! all other transitions require the candidate mode to persist for
//! `min_dwell` consecutive decisions, which suppresses chattering around
//! the degradation threshold.

use crate::degradation::DegradationReport;
use crate::measurements::ConstraintFamily;
use nalgebra::Vector3;

/// Spherical region around the UWB anchor constellation within which the
/// positioning fixes are trusted.
#[derive(Clone, Copy, Debug)]
pub struct UwbRegion {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl UwbRegion {
    /// Boundary-inclusive membership test.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (p - self.center).norm() <= self.radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionMode {
    Liu,
    Lio,
    Liw,
}

impl MotionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MotionMode::Liu => "LIU",
            MotionMode::Lio => "LIO",
            MotionMode::Liw => "LIW",
        }
    }

    /// Constraint families fused in this mode (LiDAR is always active).
    pub fn active_constraints(&self) -> &'static [ConstraintFamily] {
        match self {
            MotionMode::Liu => &[
                ConstraintFamily::Lidar,
                ConstraintFamily::UwbPosition,
                ConstraintFamily::UwbDistance,
            ],
            MotionMode::Lio => &[ConstraintFamily::Lidar],
            MotionMode::Liw => &[ConstraintFamily::Lidar, ConstraintFamily::Wheel],
        }
    }
}

/// Hysteresis state for the mode switch.
#[derive(Clone, Copy, Debug)]
pub struct SwitchState {
    pub current: MotionMode,
    /// Consecutive decisions favoring `candidate`.
    pub dwell_count: usize,
    pub candidate: MotionMode,
    /// Decisions a non-LIU candidate must persist before switching.
    pub min_dwell: usize,
    /// LIW is only left for LIO once σ_p_max falls below this level; the
    /// entry threshold alone would limit-cycle, with each LIO excursion
    /// drifting freely until the flag re-fires. `INFINITY` disables the
    /// hysteresis (exit as soon as the flag clears).
    pub exit_sigma_p: f64,
    /// Rotational counterpart of `exit_sigma_p`.
    pub exit_sigma_r: f64,
}

impl SwitchState {
    pub fn new(initial: MotionMode) -> Self {
        SwitchState {
            current: initial,
            dwell_count: 0,
            candidate: initial,
            min_dwell: 10,
            exit_sigma_p: f64::INFINITY,
            exit_sigma_r: f64::INFINITY,
        }
    }

    /// Instantaneous preference given position and degradation analysis.
    fn preferred(&self, region: &UwbRegion, pos: &Vector3<f64>, report: &DegradationReport) -> MotionMode {
        if region.contains(pos) {
            MotionMode::Liu
        } else if report.degraded_p || report.degraded_r {
            MotionMode::Liw
        } else if self.current == MotionMode::Liw
            && (report.sigma_p[0] > self.exit_sigma_p || report.sigma_r[0] > self.exit_sigma_r)
        {
            MotionMode::Liw
        } else {
            MotionMode::Lio
        }
    }

    /// Advance the switch by one decision and return the active mode.
    ///
    /// Leaving the region while in LIU switches immediately (the UWB
    /// constraints become invalid at the boundary); every other change is
    /// subject to the dwell requirement.
    pub fn decide(
        &mut self,
        region: &UwbRegion,
        pos: &Vector3<f64>,
        report: &DegradationReport,
    ) -> MotionMode {
        let want = self.preferred(region, pos, report);
        if want == self.current {
            self.candidate = want;
            self.dwell_count = 0;
            return self.current;
        }
        let immediate = self.current == MotionMode::Liu && !region.contains(pos);
        if immediate {
            self.current = want;
            self.candidate = want;
            self.dwell_count = 0;
            return self.current;
        }
        if want == self.candidate {
            self.dwell_count += 1;
        } else {
            self.candidate = want;
            self.dwell_count = 1;
        }
        if self.dwell_count >= self.min_dwell {
            self.current = want;
            self.dwell_count = 0;
        }
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::{analyze, DegradationThresholds};
    use crate::state::Covariance;

    fn report(degraded_p: bool) -> DegradationReport {
        let mut p = Covariance::identity() * 1e-6;
        if degraded_p {
            p[(3, 3)] = 1.0;
        }
        analyze(&p, &DegradationThresholds::default())
    }

    fn region() -> UwbRegion {
        UwbRegion {
            center: Vector3::new(13.963, 0.0, 2.249),
            radius: 21.0,
        }
    }

    #[test]
    fn region_membership_is_boundary_inclusive() {
        let r = region();
        assert!(r.contains(&r.center));
        let on_boundary = r.center + Vector3::x() * r.radius;
        assert!(r.contains(&on_boundary));
        let outside = r.center + Vector3::x() * (r.radius + 1e-9);
        assert!(!r.contains(&outside));
    }

    #[test]
    fn inside_region_is_liu() {
        let mut s = SwitchState::new(MotionMode::Liu);
        let m = s.decide(&region(), &region().center, &report(false));
        assert_eq!(m, MotionMode::Liu);
    }

    #[test]
    fn leaving_region_switches_immediately() {
        let mut s = SwitchState::new(MotionMode::Liu);
        let outside = region().center + Vector3::x() * 30.0;
        let m = s.decide(&region(), &outside, &report(false));
        assert_eq!(m, MotionMode::Lio);
        // And straight to LIW if already degenerate on exit.
        let mut s = SwitchState::new(MotionMode::Liu);
        let m = s.decide(&region(), &outside, &report(true));
        assert_eq!(m, MotionMode::Liw);
    }

    #[test]
    fn lio_to_liw_requires_dwell() {
        let mut s = SwitchState::new(MotionMode::Lio);
        let outside = region().center + Vector3::x() * 30.0;
        for _ in 0..9 {
            assert_eq!(s.decide(&region(), &outside, &report(true)), MotionMode::Lio);
        }
        assert_eq!(s.decide(&region(), &outside, &report(true)), MotionMode::Liw);
    }

    #[test]
    fn chattering_does_not_switch() {
        let mut s = SwitchState::new(MotionMode::Lio);
        let outside = region().center + Vector3::x() * 30.0;
        for i in 0..50 {
            let m = s.decide(&region(), &outside, &report(i % 2 == 0));
            assert_eq!(m, MotionMode::Lio, "alternating preference must hold LIO");
        }
    }

    #[test]
    fn reentering_region_requires_dwell() {
        let mut s = SwitchState::new(MotionMode::Lio);
        let inside = region().center;
        for _ in 0..9 {
            assert_eq!(s.decide(&region(), &inside, &report(false)), MotionMode::Lio);
        }
        assert_eq!(s.decide(&region(), &inside, &report(false)), MotionMode::Liu);
    }

    #[test]
    fn liw_exit_hysteresis_holds_until_recovery() {
        let mut s = SwitchState::new(MotionMode::Liw);
        s.exit_sigma_p = 0.01;
        let outside = region().center + Vector3::x() * 30.0;
        // Flag cleared but σ_p_max above the recovery level: stay in LIW.
        let mut p = Covariance::identity() * 1e-6;
        p[(3, 3)] = 0.04; // σ_p_max = 0.04 < threshold 0.05, > exit 0.01
        let lingering = analyze(&p, &DegradationThresholds::default());
        assert!(!lingering.degraded_p);
        for _ in 0..50 {
            assert_eq!(s.decide(&region(), &outside, &lingering), MotionMode::Liw);
        }
        // Fully recovered: the dwell then releases the mode.
        let recovered = report(false);
        for _ in 0..9 {
            assert_eq!(s.decide(&region(), &outside, &recovered), MotionMode::Liw);
        }
        assert_eq!(s.decide(&region(), &outside, &recovered), MotionMode::Lio);
    }

    #[test]
    fn active_constraint_sets() {
        assert_eq!(MotionMode::Lio.active_constraints(), &[ConstraintFamily::Lidar]);
        assert!(MotionMode::Liu
            .active_constraints()
            .contains(&ConstraintFamily::UwbDistance));
        assert!(MotionMode::Liw
            .active_constraints()
            .contains(&ConstraintFamily::Wheel));
        assert!(!MotionMode::Liw
            .active_constraints()
            .contains(&ConstraintFamily::UwbPosition));
    }
}
