//! Property-gradation curves parameterised by a controlled stiffness value.

use crate::homogenization::{MaterialSpec, PropertyScaler, StiffnessComponents};

use super::FamilyError;

/// Number of uniform samples used for point-to-curve distances.
pub const CURVE_SAMPLES: usize = 512;

#[derive(Debug, Clone, PartialEq)]
enum CurveKind {
    /// `C22 = C11`, quartic Poisson blend for `C12`, cubic for `C33`.
    Graded { c11_max: f64, nu: f64 },
    /// Piecewise-linear table of `(c, [C11, C12, C22, C33])`, strictly ascending in `c`.
    Tabulated(Vec<(f64, [f64; 4])>),
}

/// Maps a controlled parameter `c ∈ [0, c_max]` to a stiffness tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct GradationCurve {
    kind: CurveKind,
    c_max: f64,
    /// Admission distance in standardized property units.
    pub delta: f64,
}

impl GradationCurve {
    /// The built-in graded curve with `C11` as the controlled value, bounded by
    /// the constituent's `C11`.
    pub fn graded(material: &MaterialSpec, delta: f64) -> Result<Self, FamilyError> {
        material.validate().map_err(|e| FamilyError::InvalidCurve(e.to_string()))?;
        let c11_max = material.constituent().c11;
        Self::check_delta(delta)?;
        Ok(Self { kind: CurveKind::Graded { c11_max, nu: material.poisson_ratio }, c_max: c11_max, delta })
    }

    pub fn tabulated(points: Vec<(f64, [f64; 4])>, delta: f64) -> Result<Self, FamilyError> {
        Self::check_delta(delta)?;
        if points.len() < 2 {
            return Err(FamilyError::InvalidCurve("a tabulated curve needs at least two points".into()));
        }
        if points[0].0 != 0.0 {
            return Err(FamilyError::InvalidCurve("a tabulated curve must start at c = 0".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(FamilyError::InvalidCurve("tabulated abscissae must be strictly ascending".into()));
        }
        let c_max = points.last().unwrap().0;
        Ok(Self { kind: CurveKind::Tabulated(points), c_max, delta })
    }

    fn check_delta(delta: f64) -> Result<(), FamilyError> {
        if delta > 0.0 && delta.is_finite() {
            Ok(())
        } else {
            Err(FamilyError::InvalidCurve(format!("delta must be positive, got {delta}")))
        }
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    /// The controlled value of a stiffness tuple (its abscissa on the curve).
    pub fn controlled_value(&self, c: &StiffnessComponents) -> f64 {
        c.c11
    }

    fn check_range(&self, c: f64) -> Result<(), FamilyError> {
        let tol = 1e-12 * self.c_max.max(1.0);
        if c >= -tol && c <= self.c_max + tol {
            Ok(())
        } else {
            Err(FamilyError::OutOfRange { c, c_max: self.c_max })
        }
    }

    pub fn eval(&self, c: f64) -> Result<StiffnessComponents, FamilyError> {
        self.check_range(c)?;
        let c = c.clamp(0.0, self.c_max);
        Ok(match &self.kind {
            CurveKind::Graded { c11_max, nu } => {
                let r = 1.0 - c / c11_max;
                let c12 = ((1.0 - nu) * r.powi(4) + nu) * c;
                let c33 = 0.25 * c.powi(3) - 0.65 * c.powi(2) + 0.6775 * c;
                StiffnessComponents::new(c, c12, c, c33)
            }
            CurveKind::Tabulated(points) => {
                let (lo, hi, t) = Self::bracket(points, c);
                StiffnessComponents::from_array(std::array::from_fn(|k| lo[k] + t * (hi[k] - lo[k])))
            }
        })
    }

    /// `dC/dc` at `c`; one-sided at the interval ends and at table knots.
    pub fn derivative(&self, c: f64) -> Result<[f64; 4], FamilyError> {
        self.check_range(c)?;
        let c = c.clamp(0.0, self.c_max);
        Ok(match &self.kind {
            CurveKind::Graded { c11_max, nu } => {
                let r = 1.0 - c / c11_max;
                let dc12 = (1.0 - nu) * r.powi(4) + nu - 4.0 * (1.0 - nu) * r.powi(3) * c / c11_max;
                let dc33 = 0.75 * c * c - 1.3 * c + 0.6775;
                [1.0, dc12, 1.0, dc33]
            }
            CurveKind::Tabulated(points) => {
                let i = Self::segment(points, c);
                let (a, b) = (&points[i], &points[i + 1]);
                std::array::from_fn(|k| (b.1[k] - a.1[k]) / (b.0 - a.0))
            }
        })
    }

    fn segment(points: &[(f64, [f64; 4])], c: f64) -> usize {
        let i = points.partition_point(|p| p.0 <= c);
        i.saturating_sub(1).min(points.len() - 2)
    }

    fn bracket(points: &[(f64, [f64; 4])], c: f64) -> ([f64; 4], [f64; 4], f64) {
        let i = Self::segment(points, c);
        let (a, b) = (&points[i], &points[i + 1]);
        (a.1, b.1, (c - a.0) / (b.0 - a.0))
    }

    /// Uniform samples of the curve, endpoints included.
    pub fn samples(&self, n: usize) -> Vec<StiffnessComponents> {
        let n = n.max(2);
        (0..n)
            .map(|i| self.eval(self.c_max * i as f64 / (n - 1) as f64).expect("sample inside the interval"))
            .collect()
    }

    /// Minimum standardized Euclidean distance from `c` to the sampled curve.
    pub fn distance(&self, c: &StiffnessComponents, scaler: &PropertyScaler, samples: &[StiffnessComponents]) -> f64 {
        samples.iter().map(|s| scaler.distance(c, s)).fold(f64::INFINITY, f64::min)
    }
}
