//! Geometry distortion metrics and Bjontegaard-delta rate.
//!
//! Distances are in voxel units. PSNR uses the squared voxel-cube diagonal
//! `3 (r - 1)^2` as peak, and zero error maps to `f64::INFINITY`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::geometry::{estimate_normals, GeometryError, KdTree, PointCloud};

/// Neighbourhood size for normals estimated on a reference cloud.
pub const NORMAL_NEIGHBOURS: usize = 9;
/// Samples of the trapezoidal rule over the common PSNR interval.
const BD_SAMPLES: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot measure distortion against an empty cloud")]
    EmptyCloud,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("curve {0:?} has fewer than two finite points")]
    TooFewPoints(String),
    #[error("PSNR ranges of {reference:?} and {test:?} do not overlap")]
    NoOverlap { reference: String, test: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MetricKind {
    /// Point to point.
    D1,
    /// Point to plane.
    D2,
}

fn nearest_all(a: &PointCloud, b: &PointCloud) -> Result<Vec<(usize, f64)>> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let tree = KdTree::new(b.points());
    Ok(a.points()
        .par_iter()
        .map(|p| tree.nearest(p).expect("tree is non-empty"))
        .collect())
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// Mean squared distance from each point of `a` to its nearest point in `b`.
pub fn d1_mse(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let hits = nearest_all(a, b)?;
    Ok(mean(hits.iter().map(|h| h.1), hits.len()))
}

/// Mean squared error from `a` to `b` projected on `b`'s normals.
///
/// Missing normals are estimated from nine neighbours, fewer for tiny
/// clouds. Below four points no plane can be fitted and the error falls
/// back to point-to-point.
pub fn d2_mse(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let estimated;
    let b = match b.normals() {
        Some(_) => b,
        None if b.len() >= 4 => {
            estimated = estimate_normals(b, NORMAL_NEIGHBOURS.min(b.len() - 1))?;
            &estimated
        }
        None => return d1_mse(a, b),
    };
    let normals = b.normals().expect("normals present");
    let hits = nearest_all(a, b)?;
    let projected = a.points().iter().zip(&hits).map(|(p, &(i, _))| {
        let q = b.points()[i];
        let n = normals[i];
        let e = (0..3).map(|k| (p[k] - q[k]) * n[k]).sum::<f64>();
        e * e
    });
    Ok(mean(projected, hits.len()))
}

fn mse(a: &PointCloud, b: &PointCloud, kind: MetricKind) -> Result<f64> {
    match kind {
        MetricKind::D1 => d1_mse(a, b),
        MetricKind::D2 => d2_mse(a, b),
    }
}

/// `10 log10(3 (r - 1)^2 / mse)`, infinite for zero error.
pub fn psnr(mse: f64, resolution: usize) -> f64 {
    let peak = (resolution as f64 - 1.0).powi(2) * 3.0;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak / mse).log10()
    }
}

/// The worse of the two directional PSNRs.
pub fn symmetric_psnr(
    a: &PointCloud,
    b: &PointCloud,
    resolution: usize,
    kind: MetricKind,
) -> Result<f64> {
    if resolution < 2 {
        return Err(MetricsError::Argument(format!(
            "resolution {resolution} below 2"
        )));
    }
    let ab = psnr(mse(a, b, kind)?, resolution);
    let ba = psnr(mse(b, a, kind)?, resolution);
    Ok(ab.min(ba))
}

/// Bits per occupied input voxel.
pub fn bpov(byte_len: usize, occupied: usize) -> f64 {
    8.0 * byte_len as f64 / occupied as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RDPoint {
    pub bpov: f64,
    pub psnr_d1: f64,
    pub psnr_d2: f64,
}

impl RDPoint {
    pub fn psnr(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::D1 => self.psnr_d1,
            MetricKind::D2 => self.psnr_d2,
        }
    }
}

/// Rate-distortion points of one codec setting sweep, by increasing rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RDCurve {
    label: String,
    points: Vec<RDPoint>,
}

impl RDCurve {
    /// Sorts `points` by rate. Rates must be positive, finite and distinct.
    pub fn new(label: impl Into<String>, mut points: Vec<RDPoint>) -> Result<Self> {
        let label = label.into();
        if let Some(p) = points
            .iter()
            .find(|p| !(p.bpov > 0.0 && p.bpov.is_finite()))
        {
            return Err(MetricsError::Argument(format!(
                "{label}: bpov {} is not positive",
                p.bpov
            )));
        }
        points.sort_by(|a, b| a.bpov.total_cmp(&b.bpov));
        if points.windows(2).any(|w| w[0].bpov == w[1].bpov) {
            return Err(MetricsError::Argument(format!("{label}: repeated bpov")));
        }
        Ok(Self { label, points })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn points(&self) -> &[RDPoint] {
        &self.points
    }
}

/// Least-squares polynomial of `log10 bpov` in PSNR. The abscissa is
/// standardized to keep the normal equations well conditioned.
struct LogRateFit {
    coeffs: Vec<f64>,
    center: f64,
    spread: f64,
    lo: f64,
    hi: f64,
}

impl LogRateFit {
    fn new(curve: &RDCurve, kind: MetricKind) -> Result<Self> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = curve
            .points
            .iter()
            .filter(|p| p.psnr(kind).is_finite())
            .map(|p| (p.psnr(kind), p.bpov.log10()))
            .unzip();
        let n = xs.len();
        if n < 2 {
            return Err(MetricsError::TooFewPoints(curve.label.clone()));
        }
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let center = (lo + hi) / 2.0;
        let spread = ((hi - lo) / 2.0).max(f64::MIN_POSITIVE);
        let degree = 3.min(n - 1);
        let a = DMatrix::from_fn(n, degree + 1, |i, j| {
            ((xs[i] - center) / spread).powi(j as i32)
        });
        let coeffs = a
            .svd(true, true)
            .solve(&DVector::from_vec(ys), 1e-12)
            .map_err(|e| MetricsError::Argument(format!("{}: fit failed: {e}", curve.label)))?;
        Ok(Self {
            coeffs: coeffs.iter().copied().collect(),
            center,
            spread,
            lo,
            hi,
        })
    }

    fn eval(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.spread;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

/// Average rate difference of `test` against `reference` at equal
/// quality, in percent. Negative values mean `test` needs fewer bits.
///
/// Infinite PSNR points are left out. Each curve is fitted with a cubic
/// (lower degree below four points) and the gap is integrated over the
/// shared PSNR interval.
pub fn bd_rate(reference: &RDCurve, test: &RDCurve, kind: MetricKind) -> Result<f64> {
    let f_ref = LogRateFit::new(reference, kind)?;
    let f_test = LogRateFit::new(test, kind)?;
    let lo = f_ref.lo.max(f_test.lo);
    let hi = f_ref.hi.min(f_test.hi);
    if !(hi > lo) {
        return Err(MetricsError::NoOverlap {
            reference: reference.label.clone(),
            test: test.label.clone(),
        });
    }
    let step = (hi - lo) / (BD_SAMPLES - 1) as f64;
    let gap: Vec<f64> = (0..BD_SAMPLES)
        .map(|i| {
            let x = lo + step * i as f64;
            f_test.eval(x) - f_ref.eval(x)
        })
        .collect();
    let integral = step * (gap.iter().sum::<f64>() - (gap[0] + gap[BD_SAMPLES - 1]) / 2.0);
    let delta = integral / (hi - lo);
    Ok(100.0 * (10f64.powf(delta) - 1.0))
}
