//! Line-of-sight waypoint guidance with sphere-of-acceptance switching.

use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kinematics::wrap_angle;

/// Ordered waypoints with per-leg desired speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    pub waypoints: Vec<Vector3<f64>>,
    /// Desired surge speed while heading for the matching waypoint (m/s).
    pub speeds: Vec<f64>,
    pub acceptance_radius_m: f64,
}

impl WaypointPlan {
    pub fn new(points: Vec<(Vector3<f64>, f64)>, acceptance_radius_m: f64) -> Result<Self> {
        let (waypoints, speeds) = points.into_iter().unzip();
        let plan = Self {
            waypoints,
            speeds,
            acceptance_radius_m,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(invalid("waypoint plan is empty"));
        }
        if self.waypoints.len() != self.speeds.len() {
            return Err(invalid("every waypoint needs a desired speed"));
        }
        if !(self.acceptance_radius_m > 0.0) {
            return Err(invalid("acceptance radius must be positive"));
        }
        if self.waypoints.windows(2).any(|w| (w[1] - w[0]).norm() == 0.0) {
            return Err(invalid("consecutive waypoints coincide"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Reads `x,y,z,u_d` rows.
    pub fn read_csv<R: Read>(input: R, acceptance_radius_m: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != ["x", "y", "z", "u_d"] {
            return Err(invalid("waypoint header must be `x,y,z,u_d`"));
        }
        let mut points = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let v = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| invalid(format!("waypoint row {}: {e}", i + 1)))?;
            if v.len() != 4 {
                return Err(invalid(format!("waypoint row {} needs 4 columns", i + 1)));
            }
            points.push((Vector3::new(v[0], v[1], v[2]), v[3]));
        }
        Self::new(points, acceptance_radius_m)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "z", "u_d"])?;
        for (p, u) in self.waypoints.iter().zip(&self.speeds) {
            w.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string(), u.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

const COINCIDENT: f64 = 1e-9;

/// Desired `(theta_d, psi_d)` towards `waypoint`, both from the x offset:
/// `theta_d = atan2(dz, dx)`, `psi_d = atan2(dy, dx)`.
pub fn los_angles(position: &Vector3<f64>, waypoint: &Vector3<f64>) -> Result<(f64, f64)> {
    let d = waypoint - position;
    if (d.z.abs() < COINCIDENT && d.x.abs() < COINCIDENT) || (d.y.abs() < COINCIDENT && d.x.abs() < COINCIDENT) {
        return Err(Error::CoincidentPoint);
    }
    Ok((wrap_angle(d.z.atan2(d.x)), wrap_angle(d.y.atan2(d.x))))
}

/// True when `position` lies inside or on the sphere of radius `r0` around `waypoint`.
pub fn check_acceptance(position: &Vector3<f64>, waypoint: &Vector3<f64>, r0: f64) -> bool {
    (waypoint - position).norm_squared() <= r0 * r0
}

/// Distance from `position` to the line through `from` and `to`.
pub fn cross_track_error(position: &Vector3<f64>, from: &Vector3<f64>, to: &Vector3<f64>) -> f64 {
    let leg = to - from;
    let len = leg.norm();
    if len == 0.0 {
        return (position - from).norm();
    }
    (position - from).cross(&leg).norm() / len
}

/// Guidance output of one control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceOutput {
    pub index: usize,
    pub theta_d: f64,
    pub psi_d: f64,
    pub u_d: f64,
    pub cross_track: f64,
    pub complete: bool,
}

/// Mutable guidance state: the active waypoint and the last references.
#[derive(Debug, Clone)]
pub struct Guidance {
    plan: WaypointPlan,
    start: Vector3<f64>,
    index: usize,
    complete: bool,
    last: (f64, f64),
}

impl Guidance {
    /// `start` serves as the previous waypoint of the first leg.
    pub fn new(plan: WaypointPlan, start: Vector3<f64>, heading: f64, pitch: f64) -> Result<Self> {
        plan.validate()?;
        Ok(Self {
            plan,
            start,
            index: 0,
            complete: false,
            last: (pitch, heading),
        })
    }

    pub fn plan(&self) -> &WaypointPlan {
        &self.plan
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    fn leg_start(&self) -> Vector3<f64> {
        if self.index == 0 {
            self.start
        } else {
            self.plan.waypoints[self.index - 1]
        }
    }

    /// Advances at most one waypoint and returns the new references.
    pub fn advance(&mut self, position: &Vector3<f64>) -> GuidanceOutput {
        let r0 = self.plan.acceptance_radius_m;
        if !self.complete && check_acceptance(position, &self.plan.waypoints[self.index], r0) {
            if self.index + 1 < self.plan.len() {
                self.index += 1;
            } else {
                self.complete = true;
            }
        }
        let target = self.plan.waypoints[self.index];
        let cross_track = cross_track_error(position, &self.leg_start(), &target);
        if self.complete {
            return GuidanceOutput {
                index: self.index,
                theta_d: self.last.0,
                psi_d: self.last.1,
                u_d: 0.0,
                cross_track,
                complete: true,
            };
        }
        if let Ok(angles) = los_angles(position, &target) {
            self.last = angles;
        }
        GuidanceOutput {
            index: self.index,
            theta_d: self.last.0,
            psi_d: self.last.1,
            u_d: self.plan.speeds[self.index],
            cross_track,
            complete: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn los_examples() {
        let (th, ps) = los_angles(&v(0.0, 0.0, 0.0), &v(10.0, 10.0, 0.0)).unwrap();
        assert_relative_eq!(ps, FRAC_PI_4, epsilon = 1e-15);
        assert_eq!(th, 0.0);
        let (th, _) = los_angles(&v(0.0, 0.0, 0.0), &v(10.0, 0.0, 10.0)).unwrap();
        assert_relative_eq!(th, FRAC_PI_4, epsilon = 1e-15);
        let (_, ps) = los_angles(&v(0.0, 0.0, 0.0), &v(-10.0, 0.0, 0.0)).unwrap();
        assert_eq!(ps, PI);
        assert!(matches!(los_angles(&v(1.0, 2.0, 3.0), &v(1.0, 2.0, 3.0)), Err(Error::CoincidentPoint)));
    }

    #[test]
    fn acceptance_boundary() {
        assert!(check_acceptance(&v(0.0, 0.0, 0.0), &v(2.0, 0.0, 0.0), 2.0));
        assert!(!check_acceptance(&v(0.0, 0.0, 0.0), &v(2.0 + 1e-9, 0.0, 0.0), 2.0));
        assert!(check_acceptance(&v(0.0, 0.0, 0.0), &v(3.0, 0.0, 4.0), 5.0));
    }

    #[test]
    fn start_inside_first_sphere() {
        let plan = WaypointPlan::new(vec![(v(0.5, 0.0, 0.0), 1.0), (v(20.0, 0.0, 0.0), 1.5)], 1.0).unwrap();
        let mut g = Guidance::new(plan, Vector3::zeros(), 0.0, 0.0).unwrap();
        let out = g.advance(&Vector3::zeros());
        assert_eq!(out.index, 1);
        assert_eq!(out.u_d, 1.5);
    }

    #[test]
    fn mission_complete_holds_references() {
        let plan = WaypointPlan::new(vec![(v(10.0, 5.0, 0.0), 1.0)], 1.0).unwrap();
        let mut g = Guidance::new(plan, Vector3::zeros(), 0.0, 0.0).unwrap();
        let first = g.advance(&v(0.0, 0.0, 0.0));
        assert!(!first.complete);
        let done = g.advance(&v(9.5, 5.0, 0.0));
        assert!(done.complete);
        assert_eq!(done.u_d, 0.0);
        let later = g.advance(&v(30.0, -4.0, 2.0));
        assert!(later.complete);
        assert_eq!(later.index, 0);
        assert!(later.u_d == 0.0);
    }

    #[test]
    fn on_line_vehicle_has_zero_xte_and_matching_heading() {
        let plan = WaypointPlan::new(vec![(v(10.0, 10.0, 0.0), 1.0), (v(20.0, 20.0, 0.0), 1.0)], 1.0).unwrap();
        let mut g = Guidance::new(plan, Vector3::zeros(), FRAC_PI_4, 0.0).unwrap();
        let out = g.advance(&v(3.0, 3.0, 0.0));
        assert!(out.cross_track.abs() < 1e-12);
        assert_relative_eq!(out.psi_d, FRAC_PI_4, epsilon = 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let plan = WaypointPlan::new(vec![(v(1.0, 2.0, 3.0), 1.0), (v(4.0, 5.0, 6.5), 0.75)], 2.0).unwrap();
        let mut buf = Vec::new();
        plan.write_csv(&mut buf).unwrap();
        assert_eq!(WaypointPlan::read_csv(buf.as_slice(), 2.0).unwrap(), plan);
        assert!(WaypointPlan::read_csv("x,y,z\n1,2,3\n".as_bytes(), 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn los_translation_invariant(
                p in proptest::array::uniform3(-50.0..50.0f64),
                w in proptest::array::uniform3(-50.0..50.0f64),
                s in proptest::array::uniform3(-100.0..100.0f64),
            ) {
                let (p, w, s) = (Vector3::from(p), Vector3::from(w), Vector3::from(s));
                prop_assume!((w - p).x.abs() > 1e-3);
                let a = los_angles(&p, &w).unwrap();
                let b = los_angles(&(p + s), &(w + s)).unwrap();
                prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
            }

            #[test]
            fn index_monotone_single_step(path in proptest::collection::vec(proptest::array::uniform3(-5.0..25.0f64), 1..80)) {
                let plan = WaypointPlan::new(
                    vec![(v(5.0, 0.0, 0.0), 1.0), (v(5.5, 0.0, 0.0), 1.0), (v(6.0, 0.0, 0.0), 1.0), (v(20.0, 0.0, 2.0), 1.0)],
                    1.0,
                ).unwrap();
                let mut g = Guidance::new(plan, Vector3::zeros(), 0.0, 0.0).unwrap();
                let mut prev = 0;
                for p in path {
                    let out = g.advance(&Vector3::from(p));
                    prop_assert!(out.index >= prev && out.index <= prev + 1);
                    prev = out.index;
                }
            }
        }
    }
}
