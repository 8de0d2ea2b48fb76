//! Information-theoretic flow metrics: total system throughput, ascendency,
//! development capacity and robustness.
//!
//! All functions take a square nonnegative flow matrix. Ascendency and
//! development capacity use base-2 logarithms; robustness uses the natural
//! logarithm of their ratio, which is base independent.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("probability {0} outside the admissible range")]
    Probability(f64),
    #[error("scale constant must be positive, got {0}")]
    Scale(f64),
    #[error("negative flow {value} at ({row}, {col})")]
    NegativeFlow { row: usize, col: usize, value: f64 },
    #[error("flow matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("total system throughput is zero")]
    ZeroThroughput,
    #[error("ascendency {asc} exceeds development capacity {dc}")]
    AscExceedsCapacity { asc: f64, dc: f64 },
}

/// Relative slack allowed when ascendency rounds above development capacity.
const ASC_DC_SLACK: f64 = 1e-9;

/// `-k ln p` for `0 < p <= 1`.
pub fn surprisal(p: f64, k: f64) -> Result<f64, MetricsError> {
    if !(k > 0.0) {
        return Err(MetricsError::Scale(k));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(MetricsError::Probability(p));
    }
    Ok(-k * p.ln())
}

/// `-k p ln p` for `0 <= p <= 1`, with the value 0 at both ends.
pub fn indeterminacy(p: f64, k: f64) -> Result<f64, MetricsError> {
    if !(k > 0.0) {
        return Err(MetricsError::Scale(k));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(MetricsError::Probability(p));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-k * p * p.ln())
}

fn check(t: &DMatrix<f64>) -> Result<(), MetricsError> {
    if t.nrows() != t.ncols() {
        return Err(MetricsError::NotSquare(t.nrows(), t.ncols()));
    }
    for j in 0..t.ncols() {
        for i in 0..t.nrows() {
            let v = t[(i, j)];
            if !(v >= 0.0) {
                return Err(MetricsError::NegativeFlow {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Sum of all flows.
pub fn tstp(t: &DMatrix<f64>) -> Result<f64, MetricsError> {
    check(t)?;
    Ok(t.sum())
}

fn throughput(t: &DMatrix<f64>) -> Result<f64, MetricsError> {
    let total = tstp(t)?;
    if total > 0.0 {
        Ok(total)
    } else {
        Err(MetricsError::ZeroThroughput)
    }
}

/// `Σ T_ij log2(T_ij · TSTp / (T_i· T_·j))`, the throughput-scaled mutual
/// information between flow origin and destination.
pub fn ascendency(t: &DMatrix<f64>) -> Result<f64, MetricsError> {
    let total = throughput(t)?;
    let row_sums: Vec<f64> = t.row_iter().map(|r| r.sum()).collect();
    let col_sums: Vec<f64> = t.column_iter().map(|c| c.sum()).collect();
    let mut acc = 0.0;
    for j in 0..t.ncols() {
        for i in 0..t.nrows() {
            let f = t[(i, j)];
            if f > 0.0 {
                acc += f * (f * total / (row_sums[i] * col_sums[j])).log2();
            }
        }
    }
    // Mutual information is nonnegative; clip rounding noise.
    Ok(acc.max(0.0))
}

/// `-Σ T_ij log2(T_ij / TSTp)`, the throughput-scaled flow entropy.
pub fn development_capacity(t: &DMatrix<f64>) -> Result<f64, MetricsError> {
    let total = throughput(t)?;
    let mut acc = 0.0;
    for &f in t.iter() {
        if f > 0.0 {
            acc -= f * (f / total).log2();
        }
    }
    Ok(acc.max(0.0))
}

/// `-a ln a` with `a = asc / dc`; a degenerate `dc = 0` gives `a = 1`.
pub fn robustness(asc: f64, dc: f64) -> Result<f64, MetricsError> {
    efficiency_ratio(asc, dc).map(robustness_of_ratio)
}

/// `-a ln a` on `(0, 1)`; 0 at and beyond both ends.
pub fn robustness_of_ratio(a: f64) -> f64 {
    if a <= 0.0 || a >= 1.0 {
        0.0
    } else {
        -a * a.ln()
    }
}

/// `asc / dc` in `[0, 1]`.
pub fn efficiency_ratio(asc: f64, dc: f64) -> Result<f64, MetricsError> {
    let exceeds = asc < 0.0 || dc < 0.0 || asc > dc * (1.0 + ASC_DC_SLACK);
    if dc == 0.0 {
        return if asc.abs() <= ASC_DC_SLACK {
            Ok(1.0)
        } else {
            Err(MetricsError::AscExceedsCapacity { asc, dc })
        };
    }
    if exceeds {
        return Err(MetricsError::AscExceedsCapacity { asc, dc });
    }
    Ok((asc / dc).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EcoMetrics {
    pub tstp: f64,
    pub asc: f64,
    pub dc: f64,
    pub ratio: f64,
    pub robustness: f64,
}

pub fn metrics(t: &DMatrix<f64>) -> Result<EcoMetrics, MetricsError> {
    let total = throughput(t)?;
    let asc = ascendency(t)?;
    let dc = development_capacity(t)?;
    let ratio = efficiency_ratio(asc, dc)?;
    Ok(EcoMetrics {
        tstp: total,
        asc,
        dc,
        ratio,
        robustness: robustness_of_ratio(ratio),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{E, LN_2};

    /// input -> A -> B -> export, unit flows. Order: A, B, input, export, dissipation.
    fn chain() -> DMatrix<f64> {
        let mut t = DMatrix::zeros(5, 5);
        t[(2, 0)] = 1.0;
        t[(0, 1)] = 1.0;
        t[(1, 3)] = 1.0;
        t
    }

    #[test]
    fn surprisal_values() {
        assert_eq!(surprisal(1.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(surprisal(1.0 / E, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(surprisal(0.5, 1.0).unwrap(), LN_2, epsilon = 1e-15);
        assert!(surprisal(0.0, 1.0).is_err());
        assert!(surprisal(1.5, 1.0).is_err());
        assert!(surprisal(0.5, 0.0).is_err());
    }

    #[test]
    fn indeterminacy_values() {
        assert_eq!(indeterminacy(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(indeterminacy(1.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(
            indeterminacy(1.0 / E, 1.0).unwrap(),
            1.0 / E,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            indeterminacy(0.5, 1.0).unwrap(),
            0.346573590279973,
            epsilon = 1e-14
        );
        assert!(indeterminacy(-0.1, 1.0).is_err());
    }

    #[test]
    fn throughput_cases() {
        assert_eq!(tstp(&DMatrix::zeros(3, 3)).unwrap(), 0.0);
        let mut single = DMatrix::zeros(3, 3);
        single[(0, 1)] = 5.0;
        assert_eq!(tstp(&single).unwrap(), 5.0);
        assert_eq!(tstp(&chain()).unwrap(), 3.0);
        single[(1, 2)] = -1.0;
        assert!(matches!(
            tstp(&single),
            Err(MetricsError::NegativeFlow { .. })
        ));
    }

    #[test]
    fn chain_is_fully_determined() {
        let expected = 3.0 * 3f64.log2();
        let t = chain();
        assert_relative_eq!(ascendency(&t).unwrap(), expected, epsilon = 1e-12);
        assert_relative_eq!(development_capacity(&t).unwrap(), expected, epsilon = 1e-12);
        let m = metrics(&t).unwrap();
        assert_eq!(m.tstp, 3.0);
        assert_relative_eq!(m.ratio, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.robustness, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn parallel_chains_show_redundancy() {
        // input -> A -> export and input -> B -> export, all unit flows.
        let mut t = DMatrix::zeros(5, 5);
        t[(2, 0)] = 1.0;
        t[(2, 1)] = 1.0;
        t[(0, 3)] = 1.0;
        t[(1, 3)] = 1.0;
        let m = metrics(&t).unwrap();
        assert!(m.ratio < 1.0);
        // Hand value: ASC = 4 * 1 * log2(1*4/(2*1)) = 4, DC = 4 * log2 4 = 8.
        assert_relative_eq!(m.asc, 4.0, epsilon = 1e-12);
        assert_relative_eq!(m.dc, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn single_entry_is_degenerate() {
        let mut t = DMatrix::zeros(3, 3);
        t[(0, 1)] = 2.5;
        let m = metrics(&t).unwrap();
        assert_eq!(m.asc, m.dc);
        assert_eq!(m.dc, 0.0);
        assert_eq!(m.ratio, 1.0);
        assert_eq!(m.robustness, 0.0);
    }

    #[test]
    fn uniform_entries_entropy() {
        let n = 6;
        let mut t = DMatrix::zeros(n, n);
        for i in 0..n {
            t[(i, (i + 1) % n)] = 2.0;
        }
        assert_relative_eq!(
            development_capacity(&t).unwrap(),
            12.0 * (n as f64).log2(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn robustness_values() {
        assert_relative_eq!(robustness(1.0, E).unwrap(), 1.0 / E, epsilon = 1e-15);
        assert_eq!(robustness(2.0, 2.0).unwrap(), 0.0);
        assert_relative_eq!(
            robustness(0.5, 1.0).unwrap(),
            0.346573590279973,
            epsilon = 1e-14
        );
        assert_eq!(robustness(0.0, 0.0).unwrap(), 0.0);
        assert!(matches!(
            robustness(1.1, 1.0),
            Err(MetricsError::AscExceedsCapacity { .. })
        ));
    }

    #[test]
    fn zero_matrix_errors() {
        assert_eq!(
            metrics(&DMatrix::zeros(4, 4)).unwrap_err(),
            MetricsError::ZeroThroughput
        );
    }

    #[test]
    fn scaling_preserves_ratio() {
        let mut t = chain();
        t[(2, 1)] = 0.5;
        t[(1, 4)] = 0.5;
        let a = metrics(&t).unwrap();
        let b = metrics(&(&t * 10.0)).unwrap();
        assert_relative_eq!(a.ratio, b.ratio, max_relative = 1e-12);
        assert_relative_eq!(a.robustness, b.robustness, max_relative = 1e-12);
        assert_relative_eq!(b.asc, 10.0 * a.asc, max_relative = 1e-12);
    }
}
