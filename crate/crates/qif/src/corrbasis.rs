//! Basis matrices expanding the inverse working correlation matrix.

use nalgebra::DMatrix;
use std::path::Path;

use crate::error::{QifError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisLabel {
    Identity,
    Exchangeable,
    Ar1,
    Ar2,
    Custom,
}

impl BasisLabel {
    pub fn name(&self) -> &'static str {
        match self {
            BasisLabel::Identity => "identity",
            BasisLabel::Exchangeable => "exchangeable",
            BasisLabel::Ar1 => "ar1",
            BasisLabel::Ar2 => "ar2",
            BasisLabel::Custom => "custom",
        }
    }
}

/// A set of `s` symmetric n x n matrices; the first is always the identity.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub n: usize,
    pub matrices: Vec<DMatrix<f64>>,
    pub label: BasisLabel,
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

fn off_diagonal(n: usize, offset: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(offset) {
        m[(i, i + offset)] = 1.0;
        m[(i + offset, i)] = 1.0;
    }
    m
}

/// Construct one of the standard basis sets.
pub fn make_basis(label: BasisLabel, n: usize) -> Result<BasisSet> {
    if n < 1 {
        return Err(QifError::UnsupportedDimension("n must be at least 1".into()));
    }
    let identity = DMatrix::identity(n, n);
    let matrices = match label {
        BasisLabel::Identity => vec![identity],
        BasisLabel::Exchangeable => vec![identity, DMatrix::from_element(n, n, 1.0)],
        BasisLabel::Ar1 => vec![identity, off_diagonal(n, 1)],
        BasisLabel::Ar2 => {
            if n < 3 {
                return Err(QifError::UnsupportedDimension(format!(
                    "ar2 basis requires n >= 3, got {n}"
                )));
            }
            vec![identity, off_diagonal(n, 1), off_diagonal(n, 2)]
        }
        BasisLabel::Custom => {
            return Err(QifError::DomainError(
                "custom basis sets are loaded from file".into(),
            ))
        }
    };
    Ok(BasisSet { n, matrices, label })
}

/// Read a custom basis file: first line `n s`, then s blocks of n rows of n
/// whitespace-separated reals. The identity is prepended if absent.
pub fn read_custom_basis(path: &Path) -> Result<BasisSet> {
    let text = std::fs::read_to_string(path)?;
    parse_custom_basis(&text)
}

pub fn parse_custom_basis(text: &str) -> Result<BasisSet> {
    let mut values = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(str::split_whitespace);
    let n: usize = values
        .next()
        .ok_or_else(|| QifError::Parse("empty basis file".into()))?
        .parse()
        .map_err(|_| QifError::Parse("bad n in basis file".into()))?;
    let s: usize = values
        .next()
        .ok_or_else(|| QifError::Parse("missing s in basis file".into()))?
        .parse()
        .map_err(|_| QifError::Parse("bad s in basis file".into()))?;
    if n < 1 || s < 1 {
        return Err(QifError::Parse("basis file requires n >= 1 and s >= 1".into()));
    }

    let mut matrices = Vec::with_capacity(s + 1);
    for j in 0..s {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                let tok = values.next().ok_or_else(|| {
                    QifError::Parse(format!("basis file truncated in block {}", j + 1))
                })?;
                m[(i, k)] = tok
                    .parse()
                    .map_err(|_| QifError::Parse(format!("bad entry '{tok}' in block {}", j + 1)))?;
            }
        }
        let asym: f64 = (&m - m.transpose()).abs().max();
        let scale: f64 = m.abs().max().max(1.0);
        if asym > 1e-8 * scale {
            return Err(QifError::Parse(format!("basis block {} is not symmetric", j + 1)));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(QifError::NonFiniteInput(format!("basis block {}", j + 1)));
        }
        matrices.push(m);
    }
    if values.next().is_some() {
        return Err(QifError::Parse("trailing data in basis file".into()));
    }

    let identity = DMatrix::identity(n, n);
    if matrices[0] != identity {
        matrices.insert(0, identity);
    }
    Ok(BasisSet { n, matrices, label: BasisLabel::Custom })
}
