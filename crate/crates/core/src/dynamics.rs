//! Rigid-body and hydrodynamic matrices of the 6-DOF equation of motion
//!
//! ```text
//! nu_dot = (M_RB + M_A)^-1 [tau - C_RB(nu) nu - C_A(nu_r) nu_r - D(nu_r) nu_r - g(eta)] . V_const
//! ```
//!
//! The hull is approximated by a homogeneous cylinder for the inertia, a
//! prolate ellipsoid for added mass and a short cylinder for cross-flow drag.
//! Every geometric approximation is scaled by a tunable coefficient `C_*` so
//! identification can correct it.

use std::fmt;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kinematics::{relative_velocity, BodyVelocity, CurrentVelocity, Pose, VehicleState};

/// Seawater density used when a configuration does not give one.
pub const SEAWATER_DENSITY: f64 = 1025.0;

/// Body force-moment vector `[X, Y, Z, K, M, N]`.
pub type ForceMoment = Vector6<f64>;

/// Identification-tunable coefficients. Linear damping terms follow the
/// usual sign convention: negative values dissipate energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub c_ix: f64,
    pub c_iy: f64,
    pub c_xud: f64,
    pub c_yvd: f64,
    pub c_zwd: f64,
    pub c_kpd: f64,
    pub c_mqd: f64,
    pub c_nrd: f64,
    pub x_u: f64,
    pub y_v: f64,
    pub z_w: f64,
    pub k_p: f64,
    pub m_q: f64,
    pub n_r: f64,
    pub c_dx: f64,
    pub c_dy: f64,
    pub c_dz: f64,
    pub c_dp: f64,
    pub c_dq: f64,
    pub c_dr: f64,
}

/// Names every entry of [`Coefficients`] so optimizers can address them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    CIx,
    CIy,
    CXud,
    CYvd,
    CZwd,
    CKpd,
    CMqd,
    CNrd,
    XU,
    YV,
    ZW,
    KP,
    MQ,
    NR,
    CDx,
    CDy,
    CDz,
    CDp,
    CDq,
    CDr,
}

impl Coefficient {
    pub const ALL: [Coefficient; 20] = [
        Coefficient::CIx,
        Coefficient::CIy,
        Coefficient::CXud,
        Coefficient::CYvd,
        Coefficient::CZwd,
        Coefficient::CKpd,
        Coefficient::CMqd,
        Coefficient::CNrd,
        Coefficient::XU,
        Coefficient::YV,
        Coefficient::ZW,
        Coefficient::KP,
        Coefficient::MQ,
        Coefficient::NR,
        Coefficient::CDx,
        Coefficient::CDy,
        Coefficient::CDz,
        Coefficient::CDp,
        Coefficient::CDq,
        Coefficient::CDr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Coefficient::CIx => "c_ix",
            Coefficient::CIy => "c_iy",
            Coefficient::CXud => "c_xud",
            Coefficient::CYvd => "c_yvd",
            Coefficient::CZwd => "c_zwd",
            Coefficient::CKpd => "c_kpd",
            Coefficient::CMqd => "c_mqd",
            Coefficient::CNrd => "c_nrd",
            Coefficient::XU => "x_u",
            Coefficient::YV => "y_v",
            Coefficient::ZW => "z_w",
            Coefficient::KP => "k_p",
            Coefficient::MQ => "m_q",
            Coefficient::NR => "n_r",
            Coefficient::CDx => "c_dx",
            Coefficient::CDy => "c_dy",
            Coefficient::CDz => "c_dz",
            Coefficient::CDp => "c_dp",
            Coefficient::CDq => "c_dq",
            Coefficient::CDr => "c_dr",
        }
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Coefficients {
    pub fn get(&self, c: Coefficient) -> f64 {
        *self.slot(c)
    }

    pub fn set(&mut self, c: Coefficient, value: f64) {
        *self.slot_mut(c) = value;
    }

    fn slot(&self, c: Coefficient) -> &f64 {
        match c {
            Coefficient::CIx => &self.c_ix,
            Coefficient::CIy => &self.c_iy,
            Coefficient::CXud => &self.c_xud,
            Coefficient::CYvd => &self.c_yvd,
            Coefficient::CZwd => &self.c_zwd,
            Coefficient::CKpd => &self.c_kpd,
            Coefficient::CMqd => &self.c_mqd,
            Coefficient::CNrd => &self.c_nrd,
            Coefficient::XU => &self.x_u,
            Coefficient::YV => &self.y_v,
            Coefficient::ZW => &self.z_w,
            Coefficient::KP => &self.k_p,
            Coefficient::MQ => &self.m_q,
            Coefficient::NR => &self.n_r,
            Coefficient::CDx => &self.c_dx,
            Coefficient::CDy => &self.c_dy,
            Coefficient::CDz => &self.c_dz,
            Coefficient::CDp => &self.c_dp,
            Coefficient::CDq => &self.c_dq,
            Coefficient::CDr => &self.c_dr,
        }
    }

    fn slot_mut(&mut self, c: Coefficient) -> &mut f64 {
        match c {
            Coefficient::CIx => &mut self.c_ix,
            Coefficient::CIy => &mut self.c_iy,
            Coefficient::CXud => &mut self.c_xud,
            Coefficient::CYvd => &mut self.c_yvd,
            Coefficient::CZwd => &mut self.c_zwd,
            Coefficient::CKpd => &mut self.c_kpd,
            Coefficient::CMqd => &mut self.c_mqd,
            Coefficient::CNrd => &mut self.c_nrd,
            Coefficient::XU => &mut self.x_u,
            Coefficient::YV => &mut self.y_v,
            Coefficient::ZW => &mut self.z_w,
            Coefficient::KP => &mut self.k_p,
            Coefficient::MQ => &mut self.m_q,
            Coefficient::NR => &mut self.n_r,
            Coefficient::CDx => &mut self.c_dx,
            Coefficient::CDy => &mut self.c_dy,
            Coefficient::CDz => &mut self.c_dz,
            Coefficient::CDp => &mut self.c_dp,
            Coefficient::CDq => &mut self.c_dq,
            Coefficient::CDr => &mut self.c_dr,
        }
    }
}

/// Geometry, mass properties and coefficients of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub mass_kg: f64,
    pub length_m: f64,
    pub radius_m: f64,
    pub material_density_kg_m3: f64,
    #[serde(default = "default_fluid_density")]
    pub fluid_density_kg_m3: f64,
    /// Center of gravity relative to the body origin. Only the restoring
    /// wrench uses it; the inertia matrices assume it sits at the origin.
    pub cog_m: Vector3<f64>,
    pub cob_m: Vector3<f64>,
    pub weight_n: f64,
    pub buoyancy_n: f64,
    /// Reference length of the fins and tower (`r_B`).
    pub fin_ref_length_m: f64,
    /// Reynolds number at nominal cruise, fixed per run.
    pub reynolds: f64,
    pub coefficients: Coefficients,
}

fn default_fluid_density() -> f64 {
    SEAWATER_DENSITY
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass_kg", self.mass_kg),
            ("length_m", self.length_m),
            ("radius_m", self.radius_m),
            ("fluid_density_kg_m3", self.fluid_density_kg_m3),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_n >= 0.0 && self.buoyancy_n >= 0.0) {
            return Err(invalid("weight and buoyancy must be non-negative"));
        }
        if Coefficient::ALL
            .iter()
            .any(|&c| !self.coefficients.get(c).is_finite())
        {
            return Err(invalid("model coefficients must be finite"));
        }
        Ok(())
    }

    /// Volume of the cylinder hull.
    pub fn volume_m3(&self) -> f64 {
        PI * self.radius_m.powi(2) * self.length_m
    }

    /// `C_f` from the ITTC line at the configured Reynolds number.
    pub fn friction_coefficient(&self) -> Result<f64> {
        friction_coefficient(self.reynolds)
    }

    /// Geometric estimate of `C_Dx`, the usual starting value for identification.
    pub fn geometric_axial_drag(&self) -> Result<f64> {
        Ok(axial_drag_coefficient(
            self.radius_m,
            self.length_m,
            self.friction_coefficient()?,
        ))
    }

    /// Projection area of fins and tower, `4 (2 r_B r_B) + 2 r_B r_B`.
    pub fn appendage_area_m2(&self) -> f64 {
        let rb = self.fin_ref_length_m;
        4.0 * (2.0 * rb * rb) + 2.0 * rb * rb
    }
}

/// Principal moments of inertia `(I_x, I_y, I_z)` of the scaled cylinder.
pub fn inertia_moments(p: &ModelParams) -> (f64, f64, f64) {
    let m = p.mass_kg;
    let r = p.radius_m;
    let l = p.length_m;
    let ix = p.coefficients.c_ix * 0.5 * m * r * r;
    let iy = p.coefficients.c_iy * m * (l * l + 3.0 * r * r) / 12.0;
    (ix, iy, iy)
}

/// `M_RB = diag(m, m, m, I_x, I_y, I_z)` with the center of gravity at the origin.
pub fn rigid_body_mass(p: &ModelParams) -> Matrix6<f64> {
    let (ix, iy, iz) = inertia_moments(p);
    let m = p.mass_kg;
    Matrix6::from_diagonal(&Vector6::new(m, m, m, ix, iy, iz))
}

/// Added-mass derivatives `[X_ud, Y_vd, Z_wd, K_pd, M_qd, N_rd]` (negative for positive coefficients).
pub fn added_mass_derivatives(p: &ModelParams) -> Vector6<f64> {
    let c = &p.coefficients;
    let m = p.mass_kg;
    let (_, iy, iz) = inertia_moments(p);
    Vector6::new(
        -c.c_xud * m,
        -c.c_yvd * m,
        -c.c_zwd * m,
        -c.c_kpd * m,
        -c.c_mqd * iy,
        -c.c_nrd * iz,
    )
}

/// `M_A = -diag(X_ud, Y_vd, Z_wd, K_pd, M_qd, N_rd)`.
pub fn added_mass(p: &ModelParams) -> Matrix6<f64> {
    Matrix6::from_diagonal(&(-added_mass_derivatives(p)))
}

fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Rigid-body Coriolis and centripetal matrix with the center of gravity at the origin.
pub fn coriolis_rigid(p: &ModelParams, nu: &BodyVelocity) -> Matrix6<f64> {
    let (ix, iy, iz) = inertia_moments(p);
    let nu1 = nu.fixed_rows::<3>(0).into_owned();
    let nu2 = nu.fixed_rows::<3>(3).into_owned();
    let lin = -p.mass_kg * skew(&nu1);
    let ang = -skew(&Vector3::new(ix * nu2.x, iy * nu2.y, iz * nu2.z));
    let mut c = Matrix6::zeros();
    c.fixed_view_mut::<3, 3>(0, 3).copy_from(&lin);
    c.fixed_view_mut::<3, 3>(3, 0).copy_from(&lin);
    c.fixed_view_mut::<3, 3>(3, 3).copy_from(&ang);
    c
}

fn coriolis_added_from(d: &Vector6<f64>, nu_r: &BodyVelocity) -> Matrix6<f64> {
    let (xud, yvd, zwd, kpd, mqd, nrd) = (d[0], d[1], d[2], d[3], d[4], d[5]);
    let (ur, vr, wr, p, q, r) = (nu_r[0], nu_r[1], nu_r[2], nu_r[3], nu_r[4], nu_r[5]);
    #[rustfmt::skip]
    let c = Matrix6::new(
        0.0,       0.0,       0.0,       0.0,       -zwd * wr, yvd * vr,
        0.0,       0.0,       0.0,       zwd * wr,  0.0,       -xud * ur,
        0.0,       0.0,       0.0,       -yvd * vr, xud * ur,  0.0,
        0.0,       -zwd * wr, yvd * vr,  0.0,       -nrd * r,  mqd * q,
        zwd * wr,  0.0,       -xud * ur, nrd * r,   0.0,       -kpd * p,
        -yvd * vr, xud * ur,  0.0,       -mqd * q,  kpd * p,   0.0,
    );
    c
}

/// Hydrodynamic Coriolis and centripetal matrix `C_A(nu_r)`.
pub fn coriolis_added(p: &ModelParams, nu_r: &BodyVelocity) -> Matrix6<f64> {
    coriolis_added_from(&added_mass_derivatives(p), nu_r)
}

/// ITTC friction line `C_f = 0.075 / (log10(Re) - 2)^2`.
pub fn friction_coefficient(reynolds: f64) -> Result<f64> {
    if !(reynolds > 100.0) {
        return Err(Error::ReynoldsDomain(reynolds));
    }
    Ok(0.075 / (reynolds.log10() - 2.0).powi(2))
}

/// Axial drag coefficient of a slender hull from its friction coefficient.
pub fn axial_drag_coefficient(radius: f64, length: f64, c_f: f64) -> f64 {
    let d_over_l = 2.0 * radius / length;
    0.44 * d_over_l + 4.0 * c_f / d_over_l + 4.0 * c_f * d_over_l.sqrt()
}

/// Quadratic damping derivatives `[X_u|u|, Y_v|v|, Z_w|w|, K_p|p|, M_q|q|, N_r|r|]`.
pub fn quadratic_damping(p: &ModelParams) -> Vector6<f64> {
    let c = &p.coefficients;
    let rho = p.fluid_density_kg_m3;
    let r = p.radius_m;
    let l = p.length_m;
    let lateral_area = 2.0 * r * l;
    let l4 = l.powi(4);
    Vector6::new(
        -0.5 * rho * c.c_dx * PI * r * r,
        -0.5 * rho * c.c_dy * lateral_area,
        -0.5 * rho * c.c_dz * lateral_area,
        -0.5 * rho * c.c_dp * p.appendage_area_m2(),
        -rho * c.c_dz * c.c_dq * r * l4 / 32.0,
        -rho * c.c_dy * c.c_dr * r * l4 / 32.0,
    )
}

fn linear_damping(p: &ModelParams) -> Vector6<f64> {
    let c = &p.coefficients;
    Vector6::new(c.x_u, c.y_v, c.z_w, c.k_p, c.m_q, c.n_r)
}

fn damping_diagonal(linear: &Vector6<f64>, quadratic: &Vector6<f64>, nu_r: &BodyVelocity) -> Vector6<f64> {
    -linear - quadratic.component_mul(&nu_r.abs())
}

/// Diagonal damping matrix `D(nu_r)`.
pub fn damping(p: &ModelParams, nu_r: &BodyVelocity) -> Matrix6<f64> {
    Matrix6::from_diagonal(&damping_diagonal(
        &linear_damping(p),
        &quadratic_damping(p),
        nu_r,
    ))
}

/// Gravity and buoyancy wrench in the closed form used by the vehicle model.
///
/// The leading minus sign and the `+ (y_g W - y_b B) sin(theta)` yaw term are
/// kept as in the published closed form; under it a statically stable
/// configuration needs `z_b > z_g`.
pub fn restoring(p: &ModelParams, eta: &Pose) -> ForceMoment {
    let (sphi, cphi) = eta[3].sin_cos();
    let (sth, cth) = eta[4].sin_cos();
    let w = p.weight_n;
    let b = p.buoyancy_n;
    let (rg, rb) = (&p.cog_m, &p.cob_m);
    let dx = rg.x * w - rb.x * b;
    let dy = rg.y * w - rb.y * b;
    let dz = rg.z * w - rb.z * b;
    let net = w - b;
    -Vector6::new(
        net * sth,
        -net * cth * sphi,
        -net * cth * cphi,
        -dy * cth * cphi + dz * cth * sphi,
        dz * sth + dx * cth * cphi,
        -dx * cth * sphi + dy * sth,
    )
}

/// Per-DOF gate on the acceleration; `false` freezes that velocity component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u8; 6]", into = "[u8; 6]")]
pub struct DofMask(pub [bool; 6]);

impl DofMask {
    pub const ALL: DofMask = DofMask([true; 6]);

    pub fn only(dof: usize) -> Self {
        let mut m = [false; 6];
        m[dof] = true;
        DofMask(m)
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::from_fn(|i, _| if self.0[i] { 1.0 } else { 0.0 })
    }
}

impl Default for DofMask {
    fn default() -> Self {
        DofMask::ALL
    }
}

impl TryFrom<[u8; 6]> for DofMask {
    type Error = String;
    fn try_from(raw: [u8; 6]) -> std::result::Result<Self, String> {
        let mut m = [false; 6];
        for (slot, v) in m.iter_mut().zip(raw) {
            *slot = match v {
                0 => false,
                1 => true,
                other => return Err(format!("mask entries must be 0 or 1, got {other}")),
            };
        }
        Ok(DofMask(m))
    }
}

impl From<DofMask> for [u8; 6] {
    fn from(m: DofMask) -> Self {
        m.0.map(u8::from)
    }
}

/// Parameter-derived quantities cached for repeated acceleration evaluation.
#[derive(Debug, Clone)]
pub struct VehicleModel {
    params: ModelParams,
    added: Vector6<f64>,
    linear: Vector6<f64>,
    quadratic: Vector6<f64>,
    mass_inv: Vector6<f64>,
}

impl VehicleModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let total = (rigid_body_mass(&params) + added_mass(&params)).diagonal();
        if let Some((index, &value)) = total.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::SingularMass { index, value });
        }
        Ok(Self {
            added: added_mass_derivatives(&params),
            linear: linear_damping(&params),
            quadratic: quadratic_damping(&params),
            mass_inv: total.map(|v| 1.0 / v),
            params,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Combined mass matrix `M_RB + M_A`.
    pub fn mass_matrix(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&self.mass_inv.map(|v| 1.0 / v))
    }

    /// Sum of Coriolis, damping and restoring terms, i.e. everything subtracted from `tau`.
    pub fn hydrodynamic_load(&self, state: &VehicleState, current: &CurrentVelocity) -> ForceMoment {
        let nu = &state.nu;
        let nu_r = relative_velocity(nu, current);
        let c_rb = coriolis_rigid(&self.params, nu);
        let c_a = coriolis_added_from(&self.added, &nu_r);
        let d = damping_diagonal(&self.linear, &self.quadratic, &nu_r);
        c_rb * nu + c_a * nu_r + d.component_mul(&nu_r) + restoring(&self.params, &state.eta)
    }

    /// Body acceleration `nu_dot` under the actuator wrench, gated by `mask`.
    pub fn acceleration(
        &self,
        state: &VehicleState,
        current: &CurrentVelocity,
        tau: &ForceMoment,
        mask: &DofMask,
    ) -> Vector6<f64> {
        let rhs = tau - self.hydrodynamic_load(state, current);
        rhs.component_mul(&self.mass_inv)
            .component_mul(&mask.as_vector())
    }

    /// Kinetic energy plus the potential matching [`restoring`] for vehicles
    /// whose centers differ only vertically.
    pub fn mechanical_energy(&self, state: &VehicleState) -> f64 {
        let m = self.mass_inv.map(|v| 1.0 / v);
        let kinetic = 0.5 * state.nu.component_mul(&state.nu).dot(&m);
        let p = &self.params;
        let dz = p.cog_m.z * p.weight_n - p.cob_m.z * p.buoyancy_n;
        let net = p.weight_n - p.buoyancy_n;
        let (phi, theta) = (state.eta[3], state.eta[4]);
        // g = J^T grad(V) for V = dz cos(theta) cos(phi) + net z
        let potential = dz * theta.cos() * phi.cos() + net * state.eta[2];
        kinetic + potential
    }
}

/// Free-function form of [`VehicleModel::acceleration`].
pub fn acceleration(
    p: &ModelParams,
    state: &VehicleState,
    current: &CurrentVelocity,
    tau: &ForceMoment,
    mask: &DofMask,
) -> Result<Vector6<f64>> {
    Ok(VehicleModel::new(*p)?.acceleration(state, current, tau, mask))
}
