//! Elementwise thresholding operators and support-restricted least squares.

use nalgebra::{DMatrix, DVector};

use crate::dict::{ConvDictionary, DENSE_CAP};
use crate::error::{Error, Result};
use crate::signal::LayeredVector;

/// Condition number above which a support Gram is treated as rank deficient.
const COND_CAP: f64 = 1e12;

/// Keeps entries strictly larger than `beta` in magnitude, zeroes the rest.
pub fn hard(z: f64, beta: f64) -> f64 {
    debug_assert!(beta >= 0.0);
    if z.abs() > beta {
        z
    } else {
        0.0
    }
}

/// Shrinks the magnitude by `beta`, clipping at zero and keeping the sign.
pub fn soft(z: f64, beta: f64) -> f64 {
    debug_assert!(beta >= 0.0);
    z.signum() * (z.abs() - beta).max(0.0)
}

/// One-sided soft threshold: `max(z - beta, 0)`, a shifted rectifier.
pub fn soft_nonneg(z: f64, beta: f64) -> f64 {
    debug_assert!(beta >= 0.0);
    (z - beta).max(0.0)
}

/// Which scalar operator a pursuit applies after each analysis step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdKind {
    Hard,
    Soft,
    SoftNonNeg,
}

impl ThresholdKind {
    pub fn apply(self, z: f64, beta: f64) -> f64 {
        match self {
            ThresholdKind::Hard => hard(z, beta),
            ThresholdKind::Soft => soft(z, beta),
            ThresholdKind::SoftNonNeg => soft_nonneg(z, beta),
        }
    }

    /// Applies the operator in place. The threshold must be finite and
    /// nonnegative.
    pub fn apply_slice(self, v: &mut [f64], beta: f64) -> Result<()> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must be finite and nonnegative, got {beta}"
            )));
        }
        for z in v.iter_mut() {
            *z = self.apply(*z, beta);
        }
        Ok(())
    }
}

/// Threshold level that retains the `k` largest magnitudes, with bookkeeping
/// for ties: `kept` counts the entries a strict hard threshold at `beta`
/// actually keeps, and `tie` flags `kept != k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleThreshold {
    pub beta: f64,
    pub kept: usize,
    pub tie: bool,
}

/// Chooses the hard-threshold level for a target support size `k`: the
/// `(k + 1)`-th largest magnitude, or zero when every entry is to survive.
pub fn oracle_threshold(values: &[f64], k: usize) -> Result<OracleThreshold> {
    if k > values.len() {
        return Err(Error::InvalidParameter(format!(
            "target support {k} exceeds {} entries",
            values.len()
        )));
    }
    let mut mags: Vec<f64> = values.iter().map(|z| z.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let beta = if k == values.len() { 0.0 } else { mags[k] };
    let kept = values.iter().filter(|z| z.abs() > beta).count();
    Ok(OracleThreshold { beta, kept, tie: kept != k })
}

/// Least-squares coefficients of `y` over the atoms listed in `support`
/// (flat coefficient indices), returned as a full vector that is zero off the
/// support. The support Gram is inverted through its eigendecomposition;
/// ill-conditioned or singular supports are rejected.
pub fn debias(d: &ConvDictionary, y: &LayeredVector, support: &[usize]) -> Result<LayeredVector> {
    if y.geom() != d.out_geom() {
        return Err(Error::GeometryMismatch(
            "debias target does not match the dictionary's output geometry".into(),
        ));
    }
    let mut out = LayeredVector::zeros(d.in_geom().clone());
    if support.is_empty() {
        return Ok(out);
    }
    let m_in = d.in_geom().channels;
    let num_atoms = d.num_atoms();
    for &a in support {
        if a >= num_atoms {
            return Err(Error::IndexOutOfRange { index: a, len: num_atoms });
        }
    }
    let ns = support.len();
    if ns * ns > DENSE_CAP {
        return Err(Error::DenseCapExceeded { rows: ns, cols: ns, cap: DENSE_CAP });
    }
    let mut gram = DMatrix::zeros(ns, ns);
    for (i, &a) in support.iter().enumerate() {
        for (j, &b) in support.iter().enumerate() {
            gram[(i, j)] =
                d.atom_dot((a / m_in, a % m_in), (b / m_in, b % m_in))?;
        }
    }
    let dty = d.analyze(y)?;
    let rhs = DVector::from_iterator(ns, support.iter().map(|&a| dty.data()[a]));
    let se = nalgebra::linalg::SymmetricEigen::new(gram);
    let lmax = se.eigenvalues.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l));
    let lmin = se.eigenvalues.iter().fold(f64::INFINITY, |m, &l| m.min(l));
    let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if cond > COND_CAP {
        return Err(Error::RankDeficient { cond });
    }
    let vt_rhs = se.eigenvectors.transpose() * rhs;
    let scaled = DVector::from_iterator(
        ns,
        vt_rhs.iter().zip(se.eigenvalues.iter()).map(|(v, l)| v / l),
    );
    let coef = se.eigenvectors * scaled;
    for (i, &a) in support.iter().enumerate() {
        out.data_mut()[a] = coef[i];
    }
    Ok(out)
}
