use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

/// Formal combination `sum_i c_i T^i + theta * Theta` with exact rational
/// coefficients. `Theta` (projection onto constants) absorbs every product:
/// `Theta T^i = T^i Theta = Theta Theta = Theta`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OperatorExpression {
    coeffs: BTreeMap<i64, BigRational>,
    theta: BigRational,
}

pub fn ratio(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

impl OperatorExpression {
    pub fn zero() -> Self {
        OperatorExpression::default()
    }

    pub fn identity() -> Self {
        Self::power(0)
    }

    /// `T^k`.
    pub fn power(k: i64) -> Self {
        Self::from_terms([(k, BigRational::one())], BigRational::zero())
    }

    /// `Theta`.
    pub fn theta_only() -> Self {
        Self::from_terms([], BigRational::one())
    }

    pub fn from_terms(
        terms: impl IntoIterator<Item = (i64, BigRational)>,
        theta: BigRational,
    ) -> Self {
        let mut coeffs = BTreeMap::new();
        for (i, c) in terms {
            *coeffs.entry(i).or_insert_with(BigRational::zero) += c;
        }
        coeffs.retain(|_, c: &mut BigRational| !c.is_zero());
        OperatorExpression { coeffs, theta }
    }

    pub fn coeff(&self, i: i64) -> BigRational {
        self.coeffs.get(&i).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn theta(&self) -> &BigRational {
        &self.theta
    }

    pub fn terms(&self) -> impl Iterator<Item = (i64, &BigRational)> {
        self.coeffs.iter().map(|(&i, c)| (i, c))
    }

    pub fn support(&self) -> Vec<i64> {
        self.coeffs.keys().copied().collect()
    }

    /// Largest `|i|` in the support (0 when empty).
    pub fn radius(&self) -> u64 {
        self.coeffs.keys().map(|i| i.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn mass(&self) -> BigRational {
        self.coeffs.values().fold(self.theta.clone(), |acc, c| acc + c)
    }

    /// Nonnegative coefficients summing to one.
    pub fn is_markov(&self) -> bool {
        !self.theta.is_negative()
            && self.coeffs.values().all(|c| !c.is_negative())
            && self.mass() == BigRational::one()
    }

    /// Product of two expressions (powers of `T` commute).
    pub fn convolve(&self, other: &OperatorExpression) -> OperatorExpression {
        let mut coeffs: BTreeMap<i64, BigRational> = BTreeMap::new();
        for (&i, a) in &self.coeffs {
            for (&j, b) in &other.coeffs {
                *coeffs.entry(i + j).or_insert_with(BigRational::zero) += a * b;
            }
        }
        let left: BigRational = self.coeffs.values().sum();
        let right: BigRational = other.coeffs.values().sum();
        let theta = &self.theta * &other.theta + &self.theta * &right + &left * &other.theta;
        Self::from_terms(coeffs, theta)
    }

    /// `c_i -> c_{-i}`.
    pub fn adjoint(&self) -> OperatorExpression {
        OperatorExpression {
            coeffs: self.coeffs.iter().map(|(&i, c)| (-i, c.clone())).collect(),
            theta: self.theta.clone(),
        }
    }

    pub fn pow(&self, exponent: u32) -> OperatorExpression {
        (0..exponent).fold(Self::identity(), |acc, _| acc.convolve(self))
    }

    /// `T^k` times this expression.
    pub fn shift(&self, k: i64) -> OperatorExpression {
        self.convolve(&Self::power(k))
    }

    /// `w * self + (1 - w) * other`.
    pub fn mix(&self, w: &BigRational, other: &OperatorExpression) -> OperatorExpression {
        let rest = BigRational::one() - w;
        let terms = self
            .coeffs
            .iter()
            .map(|(&i, c)| (i, c * w))
            .chain(other.coeffs.iter().map(|(&i, c)| (i, c * &rest)));
        Self::from_terms(terms, &self.theta * w + &other.theta * &rest)
    }

    pub fn coeffs_f64(&self) -> Vec<(i64, f64)> {
        self.coeffs
            .iter()
            .map(|(&i, c)| (i, c.to_f64().unwrap_or(f64::NAN)))
            .collect()
    }

    pub fn theta_f64(&self) -> f64 {
        self.theta.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for OperatorExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self
            .coeffs
            .iter()
            .map(|(&i, c)| match i {
                0 => format!("{c} I"),
                1 => format!("{c} T"),
                _ => format!("{c} T^{i}"),
            })
            .collect();
        if !self.theta.is_zero() {
            parts.push(format!("{} Theta", self.theta));
        }
        if parts.is_empty() {
            f.write_str("0")
        } else {
            f.write_str(&parts.join(" + "))
        }
    }
}

impl Serialize for OperatorExpression {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let coeffs: BTreeMap<String, String> = self
            .coeffs
            .iter()
            .map(|(i, c)| (i.to_string(), c.to_string()))
            .collect();
        let mut st = s.serialize_struct("OperatorExpression", 3)?;
        st.serialize_field("display", &self.to_string())?;
        st.serialize_field("coefficients", &coeffs)?;
        st.serialize_field("theta", &self.theta.to_string())?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(a: BigRational) -> OperatorExpression {
        OperatorExpression::from_terms([(0, a.clone()), (-1, BigRational::one() - a)], BigRational::zero())
    }

    fn expr(terms: &[(i64, i64, i64)]) -> OperatorExpression {
        OperatorExpression::from_terms(terms.iter().map(|&(i, n, d)| (i, ratio(n, d))), BigRational::zero())
    }

    #[test]
    fn square_and_adjoint_product() {
        let half = p(ratio(1, 2));
        assert_eq!(half.convolve(&half), expr(&[(-2, 1, 4), (-1, 1, 2), (0, 1, 4)]));
        assert_eq!(half.convolve(&half.adjoint()), expr(&[(-1, 1, 4), (0, 1, 2), (1, 1, 4)]));
    }

    #[test]
    fn theta_absorbs() {
        let e = expr(&[(0, 1, 3), (2, 2, 3)]);
        assert_eq!(e.convolve(&OperatorExpression::theta_only()), OperatorExpression::theta_only());
        assert_eq!(OperatorExpression::theta_only().adjoint(), OperatorExpression::theta_only());
        let partial = OperatorExpression::from_terms([(1, ratio(1, 2))], ratio(1, 2));
        let prod = partial.convolve(&partial);
        assert_eq!(prod, OperatorExpression::from_terms([(2, ratio(1, 4))], ratio(3, 4)));
        assert!(prod.is_markov());
    }

    #[test]
    fn adjoint_of_stochastic_step() {
        let a = ratio(1, 3);
        let step = p(a.clone());
        assert_eq!(step.adjoint(), OperatorExpression::from_terms([(0, a), (1, ratio(2, 3))], BigRational::zero()));
        assert_eq!(step.adjoint().adjoint(), step);
    }

    #[test]
    fn display() {
        let e = OperatorExpression::from_terms([(0, ratio(1, 2)), (1, ratio(1, 4))], ratio(1, 4));
        assert_eq!(e.to_string(), "1/2 I + 1/4 T + 1/4 Theta");
        assert_eq!(OperatorExpression::zero().to_string(), "0");
    }
}
