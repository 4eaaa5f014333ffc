//! Body-fixed / earth-fixed frame transforms and the vehicle state types.
//!
//! Pose `eta = [x, y, z, phi, theta, psi]` lives in the earth-fixed frame
//! (z pointing down, depth positive). Velocity `nu = [u, v, w, p, q, r]`
//! lives in the body-fixed frame. Attitude uses the ZYX (yaw-pitch-roll)
//! Euler convention.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Earth-fixed pose `[x, y, z, phi, theta, psi]`.
pub type Pose = Vector6<f64>;
/// Body-fixed velocity `[u, v, w, p, q, r]`.
pub type BodyVelocity = Vector6<f64>;

const SINGULAR_COS: f64 = 1e-6;

/// Pose and body velocity of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub eta: Pose,
    pub nu: BodyVelocity,
}

impl Default for VehicleState {
    fn default() -> Self {
        Self {
            eta: Pose::zeros(),
            nu: BodyVelocity::zeros(),
        }
    }
}

impl VehicleState {
    /// Builds a state and normalizes its Euler angles.
    pub fn new(eta: Pose, nu: BodyVelocity) -> Self {
        Self {
            eta: wrap_angles(&eta),
            nu,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.eta.iter().chain(self.nu.iter()).all(|v| v.is_finite())
    }

    pub fn position(&self) -> Vector3<f64> {
        self.eta.fixed_rows::<3>(0).into_owned()
    }
}

/// Body-fixed velocity of the surrounding water. Only translational
/// components exist; the rotational half is zero by construction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CurrentVelocity {
    pub linear: Vector3<f64>,
}

impl CurrentVelocity {
    pub fn new(u_c: f64, v_c: f64, w_c: f64) -> Self {
        Self {
            linear: Vector3::new(u_c, v_c, w_c),
        }
    }

    pub fn as_vector6(&self) -> Vector6<f64> {
        Vector6::new(self.linear.x, self.linear.y, self.linear.z, 0.0, 0.0, 0.0)
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid maps -pi onto pi already; this only guards rounding at 2*pi.
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Normalizes the three attitude entries of a pose, leaving position untouched.
pub fn wrap_angles(eta: &Pose) -> Pose {
    let mut out = *eta;
    for i in 3..6 {
        out[i] = wrap_angle(eta[i]);
    }
    out
}

/// Rotation from body to earth frame, `Rz(psi) * Ry(theta) * Rx(phi)`.
pub fn rotation(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    let (sphi, cphi) = phi.sin_cos();
    let (sth, cth) = theta.sin_cos();
    let (spsi, cpsi) = psi.sin_cos();
    Matrix3::new(
        cpsi * cth,
        -spsi * cphi + cpsi * sth * sphi,
        spsi * sphi + cpsi * cphi * sth,
        spsi * cth,
        cpsi * cphi + sphi * sth * spsi,
        -cpsi * sphi + sth * spsi * cphi,
        -sth,
        cth * sphi,
        cth * cphi,
    )
}

/// Maps body angular rates `[p, q, r]` to Euler angle rates.
pub fn angular_rate_transform(phi: f64, theta: f64) -> Result<Matrix3<f64>> {
    let (sphi, cphi) = phi.sin_cos();
    let cth = theta.cos();
    if cth.abs() < SINGULAR_COS {
        return Err(Error::GimbalSingularity { theta });
    }
    let tth = theta.tan();
    Ok(Matrix3::new(
        1.0,
        sphi * tth,
        cphi * tth,
        0.0,
        cphi,
        -sphi,
        0.0,
        sphi / cth,
        cphi / cth,
    ))
}

/// Full 6x6 transform `J(eta)` such that `eta_dot = J(eta) * nu`.
pub fn transform(eta: &Pose) -> Result<Matrix6<f64>> {
    let (phi, theta, psi) = (eta[3], eta[4], eta[5]);
    let t = angular_rate_transform(phi, theta)?;
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation(phi, theta, psi));
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&t);
    Ok(j)
}

/// `eta_dot = J(eta) * nu` without materializing the 6x6 matrix.
pub fn pose_rate(eta: &Pose, nu: &BodyVelocity) -> Result<Pose> {
    let (phi, theta, psi) = (eta[3], eta[4], eta[5]);
    let lin = rotation(phi, theta, psi) * nu.fixed_rows::<3>(0);
    let ang = angular_rate_transform(phi, theta)? * nu.fixed_rows::<3>(3);
    Ok(Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z))
}

/// `nu_r = nu - nu_c`.
pub fn relative_velocity(nu: &BodyVelocity, current: &CurrentVelocity) -> BodyVelocity {
    nu - current.as_vector6()
}
