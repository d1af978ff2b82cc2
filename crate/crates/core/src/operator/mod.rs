//! Operator algebra over `T` and `Theta`, joining matrices and the
//! simplex-constrained classifier of weak limits.
//!
//! An expression `E = sum c_i T^i + theta Theta` maps to the joining matrix
//! `J(E) = sum c_i D(i) + theta Pi`, where `D(i)` comes from the correlation
//! engine and `Pi` is the product matrix of the level measures.

mod expression;
mod families;
mod nnls;
mod probes;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::correlation::{corr_sequence, product_matrix, CorrelationError, PairCounter};
use crate::matrix::Matrix;
use crate::symbolic::Tower;

pub use expression::{ratio, OperatorExpression};
pub use families::{build_family, family, family_names, stochastic_step, FamilyParams, LimitFamily};
pub use nnls::nnls;
pub use probes::{
    cesaro_disjointness_probe, limit_scan, mixing_diagnostics, rigidity_scan, triple_corr_probe,
    CesaroPoint, CesaroReport, FamilyMatch, LagClassification, LimitScanReport, MixingReport,
    PairMixing, RigidityEntry, RigidityReport, ScanConfig, SymbolMixing, TripleEntry, TripleReport,
};

pub const DEFAULT_WINDOW: usize = 8;
pub const DEFAULT_TOLERANCE: f64 = 0.03;
/// Weight of the sum-to-one row appended to the least-squares system.
pub const SIMPLEX_PENALTY: f64 = 1e6;
const DATA_PEAK: f64 = 1e3;
const ENTRY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("unknown operator family {0:?}")]
    UnknownFamily(String),
    #[error("basis has no matrix for power {0}")]
    MissingBasisLag(i64),
    #[error("nonnegative least squares did not converge")]
    SolverDivergence,
    #[error("invalid probe input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
}

/// `D(i)` for `|i| <= radius` together with `Pi`, all at one depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub depth: usize,
    pub word_len: u64,
    pub construction: String,
    pub product: Matrix,
    matrices: BTreeMap<i64, Matrix>,
}

impl Basis {
    pub fn build(
        tower: &Tower,
        radius: usize,
        engine: &dyn PairCounter,
        construction: &str,
    ) -> Result<Basis, OperatorError> {
        let r = radius as i64;
        let lags: Vec<i64> = (-r..=r).collect();
        let seq = corr_sequence(tower, &lags, engine)?;
        Ok(Basis {
            depth: tower.depth(),
            word_len: tower.len(),
            construction: construction.to_string(),
            product: product_matrix(tower),
            matrices: seq.into_iter().map(|c| (c.lag, c.matrix)).collect(),
        })
    }

    pub fn from_matrices(
        matrices: impl IntoIterator<Item = (i64, Matrix)>,
        product: Matrix,
        depth: usize,
        word_len: u64,
    ) -> Basis {
        Basis {
            depth,
            word_len,
            construction: String::new(),
            product,
            matrices: matrices.into_iter().collect(),
        }
    }

    pub fn get(&self, i: i64) -> Result<&Matrix, OperatorError> {
        self.matrices.get(&i).ok_or(OperatorError::MissingBasisLag(i))
    }

    /// Largest `r` with every `D(i)`, `|i| <= r`, present.
    pub fn radius(&self) -> usize {
        (0..)
            .find(|&r: &i64| !self.matrices.contains_key(&r) || !self.matrices.contains_key(&-r))
            .map(|r| (r - 1).max(0) as usize)
            .unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.product.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoiningMatrix {
    pub matrix: Matrix,
    pub depth: usize,
    pub construction: String,
}

/// `J(E) = sum c_i D(i) + theta Pi`.
pub fn joining_matrix(e: &OperatorExpression, basis: &Basis) -> Result<JoiningMatrix, OperatorError> {
    let mut m = basis.product.scale(e.theta_f64());
    for (i, c) in e.coeffs_f64() {
        m.axpy(c, basis.get(i)?);
    }
    Ok(JoiningMatrix {
        matrix: m,
        depth: basis.depth,
        construction: basis.construction.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Identified,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub window: usize,
    /// `(i, c_i)` for `i` in `-K..=K`.
    pub coefficients: Vec<(i64, f64)>,
    pub theta: f64,
    pub residual_max: f64,
    pub residual_frobenius: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl Classification {
    pub fn coeff(&self, i: i64) -> f64 {
        self.coefficients
            .iter()
            .find(|(j, _)| *j == i)
            .map_or(0.0, |&(_, c)| c)
    }

    pub fn is_identified(&self) -> bool {
        self.verdict == Verdict::Identified
    }
}

/// Fits `M` by a convex combination of `D(-K..=K)` and `Pi`.
pub fn classify_limit(
    target: &Matrix,
    basis: &Basis,
    window: usize,
    tol: f64,
) -> Result<Classification, OperatorError> {
    let k = window as i64;
    let mut columns: Vec<&Matrix> = Vec::with_capacity(2 * window + 2);
    for i in -k..=k {
        columns.push(basis.get(i)?);
    }
    columns.push(&basis.product);

    // Data rows are rescaled to a fixed peak so that their gradients stay
    // well above the rounding floor of the penalty row (about
    // `SIMPLEX_PENALTY^2 * eps`); the renormalization below restores the
    // constraint exactly.
    let peak = columns
        .iter()
        .chain(std::iter::once(&target))
        .flat_map(|m| m.as_slice().iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let scale = if peak > 0.0 { DATA_PEAK / peak } else { 1.0 };
    let rows = target.as_slice().len();
    let a = DMatrix::from_fn(rows + 1, columns.len(), |r, c| {
        if r == rows {
            SIMPLEX_PENALTY
        } else {
            columns[c].as_slice()[r] * scale
        }
    });
    let b = DVector::from_fn(rows + 1, |r, _| {
        if r == rows {
            SIMPLEX_PENALTY
        } else {
            target.as_slice()[r] * scale
        }
    });
    let x = nnls(&a, &b, ENTRY_TOLERANCE).ok_or(OperatorError::SolverDivergence)?;
    let mass: f64 = x.iter().sum();
    if mass.is_nan() || mass <= 0.0 {
        return Err(OperatorError::SolverDivergence);
    }
    let x: Vec<f64> = x.iter().map(|v| v / mass).collect();

    let mut fit = Matrix::zeros(target.dim());
    for (c, m) in x.iter().zip(&columns) {
        fit.axpy(*c, m);
    }
    let residual_max = fit.max_abs_diff(target);
    let residual_frobenius = fit.frobenius_diff(target);
    Ok(Classification {
        window,
        coefficients: (-k..=k).zip(x.iter().copied()).collect(),
        theta: x[columns.len() - 1],
        residual_max,
        residual_frobenius,
        tolerance: tol,
        verdict: if residual_max <= tol {
            Verdict::Identified
        } else {
            Verdict::Unresolved
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::catalog;
    use crate::correlation::NaiveCounter;

    fn basis(name: &str, base: usize, depth: usize, radius: usize) -> Basis {
        let s = catalog(name).unwrap().realize(depth).unwrap();
        let t = Tower::new(&s, base, depth).unwrap();
        Basis::build(&t, radius, &NaiveCounter, name).unwrap()
    }

    #[test]
    fn joining_of_trivial_expressions() {
        let b = basis("chacon", 1, 3, 1);
        assert_eq!(joining_matrix(&OperatorExpression::identity(), &b).unwrap().matrix, *b.get(0).unwrap());
        assert_eq!(joining_matrix(&OperatorExpression::theta_only(), &b).unwrap().matrix, b.product);
        let half = build_family("modified-chacon-limit", &FamilyParams::default()).unwrap();
        let j = joining_matrix(&half, &b).unwrap().matrix;
        // D(0) = [[4,0],[0,3]]/7, D(1) = [[2,2],[1,1]]/7
        let want = [3.0 / 7.0, 1.0 / 7.0, 0.5 / 7.0, 2.0 / 7.0];
        for (x, y) in j.as_slice().iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(matches!(
            joining_matrix(&OperatorExpression::power(5), &b),
            Err(OperatorError::MissingBasisLag(5))
        ));
    }

    #[test]
    fn classifies_exact_members() {
        let b = basis("modified-chacon", 2, 6, 10);
        let pi = classify_limit(&b.product.clone(), &b, 8, 0.03).unwrap();
        assert!((pi.theta - 1.0).abs() < 1e-9 && pi.residual_max < 1e-9);
        let d3 = classify_limit(b.get(3).unwrap(), &b, 8, 0.03).unwrap();
        assert!((d3.coeff(3) - 1.0).abs() < 1e-9 && d3.residual_max < 1e-9);
        let mix = OperatorExpression::from_terms([(-2, ratio(1, 5)), (4, ratio(1, 2))], ratio(3, 10));
        let m = joining_matrix(&mix, &b).unwrap().matrix;
        let c = classify_limit(&m, &b, 8, 0.03).unwrap();
        assert!(c.residual_max < 1e-9, "residual {}", c.residual_max);
        let total: f64 = c.coefficients.iter().map(|p| p.1).sum::<f64>() + c.theta;
        assert!((total - 1.0).abs() < 1e-9);
        assert!(c.is_identified());
        assert_eq!(c, classify_limit(&m, &b, 8, 0.03).unwrap());
    }
}
