//! Test functions `Phi_l` paired against correlation functions.
//!
//! Arity-`l` functions are tensor products of unary factors, plus the capped
//! mean energy `min(l^-1 sum_j |v_j|^2, r)` which does not factorize.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec3::{self, Vec3};

#[derive(Debug, Error, PartialEq)]
#[error("invalid test function: {0}")]
pub struct TestFunctionError(pub String);

/// One-particle factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Unary {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// `exp(-a |v - c|^2)`
    Gaussian { a: f64, c: Vec3 },
    /// `cos(k . v)`, the real part of `exp(i k . v)`.
    Fourier { k: Vec3 },
    /// 1 inside `|v| <= radius`, 0 beyond `radius + width`, cosine ramp between.
    BallIndicatorSmooth { radius: f64, width: f64 },
    /// `min(|v|^2, r)`
    TruncatedEnergy { r: f64 },
    /// `|v|^2`, unbounded.
    Energy,
    /// One velocity component, unbounded.
    Velocity { axis: usize },
}

fn one() -> f64 {
    1.0
}

fn infinite() -> f64 {
    f64::INFINITY
}

fn is_infinite(x: &f64) -> bool {
    x.is_infinite()
}

impl Unary {
    pub fn one() -> Self {
        Unary::Constant { value: 1.0 }
    }

    #[inline]
    pub fn eval(&self, v: Vec3) -> f64 {
        match *self {
            Unary::Constant { value } => value,
            Unary::Gaussian { a, c } => (-a * vec3::norm_sq(vec3::sub(v, c))).exp(),
            Unary::Fourier { k } => vec3::dot(k, v).cos(),
            Unary::BallIndicatorSmooth { radius, width } => {
                let s = vec3::norm(v);
                if s <= radius {
                    1.0
                } else if s >= radius + width {
                    0.0
                } else {
                    0.5 * (1.0 + (PI * (s - radius) / width).cos())
                }
            }
            Unary::TruncatedEnergy { r } => vec3::norm_sq(v).min(r),
            Unary::Energy => vec3::norm_sq(v),
            Unary::Velocity { axis } => v[axis],
        }
    }

    pub fn sup_norm(&self) -> Option<f64> {
        match *self {
            Unary::Constant { value } => Some(value.abs()),
            Unary::Gaussian { .. } | Unary::Fourier { .. } | Unary::BallIndicatorSmooth { .. } => {
                Some(1.0)
            }
            Unary::TruncatedEnergy { r } => Some(r),
            Unary::Energy | Unary::Velocity { .. } => None,
        }
    }

    fn validate(&self) -> Result<(), TestFunctionError> {
        let fail = |m: String| Err(TestFunctionError(m));
        match *self {
            Unary::Constant { value } if !value.is_finite() => fail(format!("constant {value}")),
            Unary::Gaussian { a, c }
                if !(a > 0.0 && a.is_finite()) || c.iter().any(|x| !x.is_finite()) =>
            {
                fail(format!(
                    "gaussian needs a > 0 and finite centre, got a = {a}"
                ))
            }
            Unary::Fourier { k } if k.iter().any(|x| !x.is_finite()) => {
                fail("non-finite wave vector".into())
            }
            Unary::BallIndicatorSmooth { radius, width } if !(radius >= 0.0 && width > 0.0) => {
                fail(format!(
                    "ball indicator needs radius >= 0, width > 0 (got {radius}, {width})"
                ))
            }
            Unary::TruncatedEnergy { r } if !(r > 0.0) => {
                fail(format!("truncation level {r} must be positive"))
            }
            Unary::Velocity { axis } if axis > 2 => {
                fail(format!("velocity axis {axis} out of range"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    /// `phi_1(v_1) * ... * phi_l(v_l)`
    Tensor(Vec<Unary>),
    /// `min(l^-1 sum_j |v_j|^2, cap)`; the cap defaults to infinity.
    CappedMeanEnergy {
        arity: usize,
        #[serde(default = "infinite", skip_serializing_if = "is_infinite")]
        cap: f64,
    },
}

impl TestFunction {
    pub fn unary(f: Unary) -> Self {
        TestFunction::Tensor(vec![f])
    }

    pub fn constant(arity: usize) -> Self {
        TestFunction::Tensor(vec![Unary::one(); arity])
    }

    pub fn validate(&self) -> Result<(), TestFunctionError> {
        match self {
            TestFunction::Tensor(fs) if fs.is_empty() => {
                Err(TestFunctionError("empty tensor product".into()))
            }
            TestFunction::Tensor(fs) => fs.iter().try_for_each(Unary::validate),
            TestFunction::CappedMeanEnergy { arity, cap } => {
                if *arity == 0 || !(*cap > 0.0) {
                    Err(TestFunctionError(format!(
                        "capped energy needs arity >= 1 and cap > 0 (got {arity}, {cap})"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            TestFunction::Tensor(fs) => fs.len(),
            TestFunction::CappedMeanEnergy { arity, .. } => *arity,
        }
    }

    #[inline]
    pub fn eval(&self, v: &[Vec3]) -> f64 {
        debug_assert_eq!(v.len(), self.arity());
        match self {
            TestFunction::Tensor(fs) => fs.iter().zip(v).map(|(f, &x)| f.eval(x)).product(),
            TestFunction::CappedMeanEnergy { arity, cap } => {
                let e: f64 = v.iter().map(|&x| vec3::norm_sq(x)).sum::<f64>() / *arity as f64;
                e.min(*cap)
            }
        }
    }

    /// `sup |Phi|`, or `None` for unbounded functions.
    pub fn sup_norm(&self) -> Option<f64> {
        match self {
            TestFunction::Tensor(fs) => fs.iter().map(Unary::sup_norm).product(),
            TestFunction::CappedMeanEnergy { cap, .. } => cap.is_finite().then_some(*cap),
        }
    }

    /// The constant value if `Phi` is constant.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            TestFunction::Tensor(fs) => fs
                .iter()
                .map(|f| match f {
                    Unary::Constant { value } => Some(*value),
                    _ => None,
                })
                .product(),
            TestFunction::CappedMeanEnergy { .. } => None,
        }
    }

    pub fn factors(&self) -> Option<&[Unary]> {
        match self {
            TestFunction::Tensor(fs) => Some(fs),
            TestFunction::CappedMeanEnergy { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unary_values() {
        assert_eq!(Unary::one().eval([3.0, 1.0, 2.0]), 1.0);
        let g = Unary::Gaussian {
            a: 0.5,
            c: [1.0, 0.0, 0.0],
        };
        assert!((g.eval([2.0, 0.0, 0.0]) - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(Unary::Fourier { k: [0.0; 3] }.eval([5.0, 1.0, 2.0]), 1.0);
        let b = Unary::BallIndicatorSmooth {
            radius: 1.0,
            width: 2.0,
        };
        assert_eq!(b.eval([0.5, 0.0, 0.0]), 1.0);
        assert!((b.eval([2.0, 0.0, 0.0]) - 0.5).abs() < 1e-15);
        assert_eq!(b.eval([3.5, 0.0, 0.0]), 0.0);
        assert_eq!(Unary::TruncatedEnergy { r: 2.0 }.eval([1.0, 1.0, 1.0]), 2.0);
        assert_eq!(Unary::Energy.eval([1.0, 1.0, 1.0]), 3.0);
        assert_eq!(Unary::Velocity { axis: 2 }.eval([1.0, 4.0, -3.0]), -3.0);
    }

    #[test]
    fn tensor_and_capped_energy() {
        let phi = TestFunction::Tensor(vec![Unary::Energy, Unary::Constant { value: 2.0 }]);
        assert_eq!(phi.eval(&[[1.0, 0.0, 0.0], [9.0, 9.0, 9.0]]), 2.0);
        assert_eq!(phi.sup_norm(), None);
        let cap = TestFunction::CappedMeanEnergy {
            arity: 2,
            cap: 10.0,
        };
        assert_eq!(cap.eval(&[[1.0, 0.0, 0.0], [0.0, 3.0, 0.0]]), 5.0);
        assert_eq!(cap.eval(&[[5.0, 0.0, 0.0], [0.0, 3.0, 0.0]]), 10.0);
        assert_eq!(TestFunction::constant(3).constant_value(), Some(1.0));
        assert_eq!(phi.constant_value(), None);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(TestFunction::unary(Unary::Gaussian {
            a: -1.0,
            c: [0.0; 3]
        })
        .validate()
        .is_err());
        assert!(TestFunction::Tensor(vec![]).validate().is_err());
        assert!(TestFunction::unary(Unary::Velocity { axis: 3 })
            .validate()
            .is_err());
        assert!(TestFunction::constant(2).validate().is_ok());
    }

    #[test]
    fn serde_shape() {
        let phi = TestFunction::unary(Unary::Gaussian {
            a: 0.5,
            c: [0.0; 3],
        });
        let s = serde_json::to_string(&phi).unwrap();
        assert_eq!(
            s,
            r#"{"tensor":[{"kind":"gaussian","a":0.5,"c":[0.0,0.0,0.0]}]}"#
        );
        let back: TestFunction =
            serde_json::from_str(r#"{"tensor":[{"kind":"constant"}]}"#).unwrap();
        assert_eq!(back, TestFunction::constant(1));
        let e: TestFunction =
            serde_json::from_str(r#"{"capped_mean_energy":{"arity":2}}"#).unwrap();
        assert_eq!(
            e,
            TestFunction::CappedMeanEnergy {
                arity: 2,
                cap: f64::INFINITY
            }
        );
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"capped_mean_energy":{"arity":2}}"#
        );
        assert_eq!(e.sup_norm(), None);
    }
}
