//! Named limit families, looked up by name.

use num_rational::BigRational;
use num_traits::One;
use serde::Serialize;

use super::expression::{ratio, OperatorExpression};
use super::OperatorError;

/// Parameters shared by every family; each family reads the ones it needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyParams {
    pub m: u32,
    pub n: u32,
    pub k: i64,
    #[serde(with = "crate::construction::rational_string")]
    pub a: BigRational,
    pub truncation: u32,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams {
            m: 0,
            n: 0,
            k: 0,
            a: ratio(1, 2),
            truncation: 20,
        }
    }
}

pub trait LimitFamily: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, params: &FamilyParams) -> OperatorExpression;
}

struct Identity;
struct Theta;
struct Shift;
struct ModifiedChacon;
struct ChaconGeometric;
struct Stochastic;

impl LimitFamily for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn build(&self, _: &FamilyParams) -> OperatorExpression {
        OperatorExpression::identity()
    }
}

impl LimitFamily for Theta {
    fn name(&self) -> &'static str {
        "theta"
    }
    fn build(&self, _: &FamilyParams) -> OperatorExpression {
        OperatorExpression::theta_only()
    }
}

/// `T^k`.
impl LimitFamily for Shift {
    fn name(&self) -> &'static str {
        "power"
    }
    fn build(&self, p: &FamilyParams) -> OperatorExpression {
        OperatorExpression::power(p.k)
    }
}

/// `(I + T) / 2`.
impl LimitFamily for ModifiedChacon {
    fn name(&self) -> &'static str {
        "modified-chacon-limit"
    }
    fn build(&self, _: &FamilyParams) -> OperatorExpression {
        OperatorExpression::from_terms([(0, ratio(1, 2)), (1, ratio(1, 2))], ratio(0, 1))
    }
}

/// `sum_{i <= M} 2^{-(i+1)} T^i + 2^{-(M+1)} Theta`.
impl LimitFamily for ChaconGeometric {
    fn name(&self) -> &'static str {
        "chacon-geometric"
    }
    fn build(&self, p: &FamilyParams) -> OperatorExpression {
        let mut weight = ratio(1, 2);
        let mut terms = Vec::new();
        for i in 0..=p.truncation as i64 {
            terms.push((i, weight.clone()));
            weight *= ratio(1, 2);
        }
        // The tail 2^{-(M+1)} equals the last kept coefficient.
        let tail = terms.last().map(|t| t.1.clone()).unwrap_or_else(|| ratio(1, 1));
        OperatorExpression::from_terms(terms, tail)
    }
}

/// `P^m (P*)^n T^k` with `P = a I + (1 - a) T^{-1}`.
impl LimitFamily for Stochastic {
    fn name(&self) -> &'static str {
        "stochastic"
    }
    fn build(&self, p: &FamilyParams) -> OperatorExpression {
        let step = stochastic_step(&p.a);
        step.pow(p.m)
            .convolve(&step.adjoint().pow(p.n))
            .shift(p.k)
    }
}

/// `P = a I + (1 - a) T^{-1}`.
pub fn stochastic_step(a: &BigRational) -> OperatorExpression {
    OperatorExpression::from_terms(
        [(0, a.clone()), (-1, BigRational::one() - a)],
        ratio(0, 1),
    )
}

static FAMILIES: &[&dyn LimitFamily] = &[
    &Identity,
    &Theta,
    &Shift,
    &ModifiedChacon,
    &ChaconGeometric,
    &Stochastic,
];

pub fn family_names() -> Vec<&'static str> {
    FAMILIES.iter().map(|f| f.name()).collect()
}

pub fn family(name: &str) -> Result<&'static dyn LimitFamily, OperatorError> {
    FAMILIES
        .iter()
        .copied()
        .find(|f| f.name() == name)
        .ok_or_else(|| OperatorError::UnknownFamily(name.to_string()))
}

pub fn build_family(name: &str, params: &FamilyParams) -> Result<OperatorExpression, OperatorError> {
    Ok(family(name)?.build(params))
}
