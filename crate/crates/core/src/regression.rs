//! Second-order least-squares fits of thruster force against revolution
//! speed from bollard-pull (surge) tests, and conversion to propeller curves.

use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::actuators::{force_directions, ActuatorGeometry, PropellerCurve};
use crate::error::{invalid, Error, Result};

/// Actuator group exercised by a surge test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThrusterGroup {
    Stern,
    Vertical,
}

impl ThrusterGroup {
    pub fn size(self) -> usize {
        match self {
            ThrusterGroup::Stern => 4,
            ThrusterGroup::Vertical => 2,
        }
    }
}

/// One of the four surge-test campaigns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestDirection {
    SternForward,
    SternBackward,
    VerticalDown,
    VerticalUp,
}

impl TestDirection {
    pub const ALL: [TestDirection; 4] = [
        TestDirection::SternForward,
        TestDirection::SternBackward,
        TestDirection::VerticalDown,
        TestDirection::VerticalUp,
    ];

    pub fn group(self) -> ThrusterGroup {
        match self {
            TestDirection::SternForward | TestDirection::SternBackward => ThrusterGroup::Stern,
            _ => ThrusterGroup::Vertical,
        }
    }

    /// Forward and down runs use positive revolution speeds.
    pub fn positive_rpm(self) -> bool {
        matches!(self, TestDirection::SternForward | TestDirection::VerticalDown)
    }

    /// File stem of the campaign's CSV, e.g. `stern_forward`.
    pub fn file_stem(self) -> &'static str {
        match self {
            TestDirection::SternForward => "stern_forward",
            TestDirection::SternBackward => "stern_backward",
            TestDirection::VerticalDown => "vertical_down",
            TestDirection::VerticalUp => "vertical_up",
        }
    }
}

/// Load-cell samples `(n_rpm, force_N)` of one campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct SurgeDataset {
    pub direction: TestDirection,
    pub samples: Vec<(f64, f64)>,
}

impl SurgeDataset {
    pub fn new(direction: TestDirection, samples: Vec<(f64, f64)>) -> Result<Self> {
        let d = Self { direction, samples };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 3 {
            return Err(invalid(format!(
                "{} needs at least 3 samples, got {}",
                self.direction.file_stem(),
                self.samples.len()
            )));
        }
        let positive = self.direction.positive_rpm();
        for &(n, f) in &self.samples {
            if !n.is_finite() || !f.is_finite() {
                return Err(invalid(format!("{}: non-finite sample", self.direction.file_stem())));
            }
            if (positive && n < 0.0) || (!positive && n > 0.0) {
                return Err(invalid(format!(
                    "{}: n = {n} rpm lies on the wrong side of zero",
                    self.direction.file_stem()
                )));
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(direction: TestDirection, input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != ["n_rpm", "force_N"] {
            return Err(invalid("surge-test header must be `n_rpm,force_N`"));
        }
        let mut samples = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| invalid(format!("row {} is short", i + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("row {}: {e}", i + 1)))
            };
            samples.push((parse(0)?, parse(1)?));
        }
        Self::new(direction, samples)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n_rpm", "force_N"])?;
        for (n, f) in &self.samples {
            w.write_record([n.to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Converts load-cell totals into per-actuator axial forces.
    pub fn per_actuator(&self, geometry: &ActuatorGeometry) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|&(n, total)| Ok((n, separate_components(total, geometry, self.direction.group())?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            direction: self.direction,
            samples,
        })
    }
}

/// Fitted `F = a0 + a1 n + a2 n^2` and its quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub direction: TestDirection,
    pub a_hat: [f64; 3],
    /// Coefficient of determination; `None` when the measured force is constant.
    pub b_det: Option<f64>,
    pub origin_constrained: bool,
    pub samples: usize,
}

impl RegressionResult {
    pub fn predict(&self, n: f64) -> f64 {
        self.a_hat[0] + self.a_hat[1] * n + self.a_hat[2] * n * n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    /// Refit through the origin when the free intercept is smaller than this (N).
    #[serde(default)]
    pub origin_threshold_n: Option<f64>,
}

const COLUMNS: [&str; 3] = ["1", "n", "n^2"];

/// Least-squares polynomial fit through a QR factorization of the scaled
/// design matrix. With `through_origin` the intercept column is dropped.
pub fn fit_polynomial(n: &[f64], y: &[f64], through_origin: bool) -> Result<[f64; 3]> {
    if n.len() != y.len() {
        return Err(invalid("regressor and response lengths differ"));
    }
    let first = usize::from(through_origin);
    let cols = 3 - first;
    if n.len() < cols {
        return Err(Error::RankDeficient { column: COLUMNS[n.len()] });
    }
    let scale = n.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let s = if scale > 0.0 { scale } else { 1.0 };
    let u = DMatrix::from_fn(n.len(), cols, |i, j| (n[i] / s).powi((j + first) as i32));
    let qr = u.clone().qr();
    let r = qr.r();
    for j in 0..cols {
        let norm = u.column(j).norm();
        if !(r[(j, j)].abs() > 1e-9 * norm.max(f64::MIN_POSITIVE)) || norm == 0.0 {
            return Err(Error::RankDeficient { column: COLUMNS[j + first] });
        }
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    let b = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { column: COLUMNS[2] })?;
    let mut a = [0.0; 3];
    for j in 0..cols {
        a[j + first] = b[j] / s.powi((j + first) as i32);
    }
    Ok(a)
}

/// Fits one campaign's samples.
pub fn fit(data: &SurgeDataset, opts: &FitOptions) -> Result<RegressionResult> {
    data.validate()?;
    let (n, y): (Vec<f64>, Vec<f64>) = data.samples.iter().copied().unzip();
    let mut a_hat = fit_polynomial(&n, &y, false)?;
    let mut origin_constrained = false;
    if let Some(th) = opts.origin_threshold_n {
        if a_hat[0].abs() < th {
            a_hat = fit_polynomial(&n, &y, true)?;
            origin_constrained = true;
        }
    }
    let y_hat: Vec<f64> = n
        .iter()
        .map(|v| a_hat[0] + a_hat[1] * v + a_hat[2] * v * v)
        .collect();
    let b_det = match determination(&y_hat, &y) {
        Ok(b) => Some(b),
        Err(Error::UndefinedVariance(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(RegressionResult {
        direction: data.direction,
        a_hat,
        b_det,
        origin_constrained,
        samples: n.len(),
    })
}

/// Squared correlation between fitted and measured values.
pub fn determination(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() || y.is_empty() {
        return Err(invalid("fitted and measured series differ in length"));
    }
    let len = y.len() as f64;
    let my = y.iter().sum::<f64>() / len;
    let mh = y_hat.iter().sum::<f64>() / len;
    let (mut cov, mut vy, mut vh) = (0.0, 0.0, 0.0);
    for (a, b) in y_hat.iter().zip(y) {
        cov += (a - mh) * (b - my);
        vy += (b - my) * (b - my);
        vh += (a - mh) * (a - mh);
    }
    // variance at rounding level of the data counts as zero
    let peak = |s: &[f64]| s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tiny = |v: f64, p: f64| v <= (p * 1e-13).powi(2) * len;
    if tiny(vy, peak(y)) {
        return Err(Error::UndefinedVariance("y"));
    }
    if tiny(vh, peak(y_hat)) {
        return Err(Error::UndefinedVariance("y_hat"));
    }
    Ok((cov * cov / (vy * vh)).min(1.0))
}

/// Per-actuator axial force from a load-cell total, assuming the group's
/// identical actuators share the total equally along the test axis.
pub fn separate_components(total: f64, geometry: &ActuatorGeometry, group: ThrusterGroup) -> Result<f64> {
    let dirs = force_directions(geometry);
    let (cosine, label) = match group {
        ThrusterGroup::Stern => (dirs[0].x, "stern propellers along x"),
        ThrusterGroup::Vertical => (dirs[4].z, "vertical thrusters along z"),
    };
    if cosine.abs() < 1e-9 {
        return Err(Error::UnobservableAxis(label.to_string()));
    }
    Ok(total / (group.size() as f64 * cosine))
}

/// Builds a propeller curve from the positive- and negative-rpm fits.
/// Bollard tests carry no advance-velocity information, so `p2` is supplied.
pub fn curve_from_fits(
    positive: &RegressionResult,
    negative: &RegressionResult,
    p2: (f64, f64),
    diameter_m: f64,
) -> PropellerCurve {
    PropellerCurve {
        p1_pos: positive.a_hat[2],
        p1_neg: -negative.a_hat[2],
        p2_pos: p2.0,
        p2_neg: p2.1,
        diameter_m,
    }
}

/// Plain-text summary, one block per fit.
pub fn report(results: &[RegressionResult]) -> String {
    let mut s = String::new();
    for r in results {
        let _ = writeln!(s, "[{}]", r.direction.file_stem());
        let _ = writeln!(s, "samples = {}", r.samples);
        let _ = writeln!(s, "a0 = {}", r.a_hat[0]);
        let _ = writeln!(s, "a1 = {}", r.a_hat[1]);
        let _ = writeln!(s, "a2 = {}", r.a_hat[2]);
        match r.b_det {
            Some(b) => {
                let _ = writeln!(s, "B = {b}");
            }
            None => {
                let _ = writeln!(s, "B = undefined (constant force)");
            }
        }
        let _ = writeln!(s, "origin_constrained = {}", r.origin_constrained);
        s.push('\n');
    }
    s
}

/// Sampled fit curve `n_rpm,force_N` for plotting.
pub fn write_curve_samples<W: Write>(result: &RegressionResult, n_range: (f64, f64), points: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_rpm", "force_N"])?;
    let steps = points.max(2) - 1;
    for i in 0..=steps {
        let n = n_range.0 + (n_range.1 - n_range.0) * i as f64 / steps as f64;
        w.write_record([n.to_string(), result.predict(n).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuators::tests::geometry;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rpm_grid() -> Vec<f64> {
        (1..=20).map(|k| 100.0 * k as f64).collect()
    }

    #[test]
    fn noiseless_quadratic() {
        let samples = rpm_grid().into_iter().map(|n| (n, 2e-5 * n * n)).collect();
        let d = SurgeDataset::new(TestDirection::SternForward, samples).unwrap();
        let r = fit(&d, &FitOptions::default()).unwrap();
        assert!(r.a_hat[0].abs() < 1e-10);
        assert!(r.a_hat[1].abs() < 1e-10 * 2e-5 * 2000.0);
        assert_relative_eq!(r.a_hat[2], 2e-5, max_relative = 1e-10);
        assert!(r.b_det.unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn constant_force() {
        let samples = rpm_grid().into_iter().map(|n| (n, 7.5)).collect();
        let d = SurgeDataset::new(TestDirection::VerticalDown, samples).unwrap();
        let r = fit(&d, &FitOptions::default()).unwrap();
        assert_relative_eq!(r.a_hat[0], 7.5, max_relative = 1e-12);
        assert!(r.a_hat[1].abs() < 1e-12);
        assert!(r.a_hat[2].abs() < 1e-15);
        assert_eq!(r.b_det, None);
    }

    #[test]
    fn two_distinct_speeds_are_rank_deficient() {
        let samples = vec![(500.0, 1.0), (500.0, 1.1), (1000.0, 4.0), (1000.0, 4.1)];
        let d = SurgeDataset::new(TestDirection::SternForward, samples).unwrap();
        match fit(&d, &FitOptions::default()) {
            Err(Error::RankDeficient { column }) => assert_eq!(column, "n^2"),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn determination_cases() {
        let y = [1.0, 2.0, 4.0, 3.0];
        assert_relative_eq!(determination(&y, &y).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(
            determination(&[2.5; 4], &y),
            Err(Error::UndefinedVariance("y_hat"))
        ));
        assert!(matches!(determination(&y, &[1.0; 4]), Err(Error::UndefinedVariance("y"))));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let x: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let yn: Vec<f64> = x.iter().map(|v| 3.0 * v + noise.sample(&mut rng)).collect();
        let yh: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        assert!(determination(&yh, &yn).unwrap() > 0.99);
    }

    #[test]
    fn separation() {
        let g = geometry(0.0, 0.0);
        assert_relative_eq!(separate_components(100.0, &g, ThrusterGroup::Stern).unwrap(), 25.0, epsilon = 1e-12);
        assert_relative_eq!(separate_components(-40.0, &g, ThrusterGroup::Vertical).unwrap(), -20.0, epsilon = 1e-12);
        let tilted = geometry(0.0, 30f64.to_radians());
        let x = (std::f64::consts::FRAC_PI_2 - 30f64.to_radians()).sin();
        assert_relative_eq!(
            separate_components(100.0, &tilted, ThrusterGroup::Stern).unwrap(),
            100.0 / (4.0 * x),
            epsilon = 1e-12
        );
        let edge = geometry(0.0, std::f64::consts::FRAC_PI_2);
        assert!(matches!(
            separate_components(1.0, &edge, ThrusterGroup::Stern),
            Err(Error::UnobservableAxis(_))
        ));
    }

    #[test]
    fn sign_regions_and_curve_conversion() {
        assert!(SurgeDataset::new(TestDirection::SternBackward, vec![(-100.0, 0.0), (200.0, 0.0), (-300.0, 0.0)]).is_err());
        let fwd = SurgeDataset::new(
            TestDirection::SternForward,
            rpm_grid().into_iter().map(|n| (n, 1.5e-5 * n * n)).collect(),
        )
        .unwrap();
        let back = SurgeDataset::new(
            TestDirection::SternBackward,
            rpm_grid().into_iter().map(|n| (-n, -1.0e-5 * n * n)).collect(),
        )
        .unwrap();
        let opts = FitOptions { origin_threshold_n: Some(0.05) };
        let rf = fit(&fwd, &opts).unwrap();
        let rb = fit(&back, &opts).unwrap();
        assert!(rf.origin_constrained && rb.origin_constrained);
        assert_eq!(rf.a_hat[0], 0.0);
        let c = curve_from_fits(&rf, &rb, (-2e-3, -1.5e-3), 0.12);
        assert_relative_eq!(c.p1_pos, 1.5e-5, max_relative = 1e-9);
        assert_relative_eq!(c.p1_neg, 1.0e-5, max_relative = 1e-9);
    }

    #[test]
    fn csv_round_trip_and_report() {
        let d = SurgeDataset::new(TestDirection::VerticalUp, vec![(-100.0, -0.1), (-200.0, -0.4), (-300.0, -0.9)]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = SurgeDataset::read_csv(TestDirection::VerticalUp, buf.as_slice()).unwrap();
        assert_eq!(back, d);
        let r = fit(&d, &FitOptions::default()).unwrap();
        assert!(report(&[r]).contains("[vertical_up]"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn residual_orthogonal_to_columns(
                a0 in -5.0..5.0f64,
                a1 in -0.01..0.01f64,
                a2 in -3e-5..3e-5f64,
                seed in 0u64..1000,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let noise = Normal::new(0.0, 0.5).unwrap();
                let n = rpm_grid();
                let y: Vec<f64> = n.iter().map(|v| a0 + a1 * v + a2 * v * v + noise.sample(&mut rng)).collect();
                let a = fit_polynomial(&n, &y, false).unwrap();
                for p in 0..3 {
                    let (mut dot, mut scale) = (0.0, 0.0);
                    for (v, yi) in n.iter().zip(&y) {
                        let col = (v / 2000.0).powi(p);
                        let r = yi - (a[0] + a[1] * v + a[2] * v * v);
                        dot += col * r;
                        scale += (col * yi).abs();
                    }
                    prop_assert!(dot.abs() <= 1e-8 * scale.max(1.0));
                }
            }

            #[test]
            fn recovers_any_quadratic(
                a0 in -5.0..5.0f64,
                a1 in -0.01..0.01f64,
                a2 in 1e-6..3e-5f64,
            ) {
                let n = rpm_grid();
                let y: Vec<f64> = n.iter().map(|v| a0 + a1 * v + a2 * v * v).collect();
                let a = fit_polynomial(&n, &y, false).unwrap();
                // relative to each term's contribution at the largest speed
                let s = 2000.0;
                let scale = a0.abs() + a1.abs() * s + a2 * s * s;
                prop_assert!((a[0] - a0).abs() <= 1e-9 * scale);
                prop_assert!((a[1] - a1).abs() * s <= 1e-9 * scale);
                prop_assert!((a[2] - a2).abs() <= 1e-9 * a2.abs());
                let y_hat: Vec<f64> = n.iter().map(|v| a[0] + a[1] * v + a[2] * v * v).collect();
                prop_assert!(determination(&y_hat, &y).unwrap() > 1.0 - 1e-12);
            }
        }
    }
}
