//! Layered signal containers and local sparsity measures.
//!
//! A layered vector stores `channels` coefficients per spatial position in one
//! interleaved buffer (position-major): the coefficient of channel `c` at
//! position `j` lives at index `j * channels + c`. All windows are cyclic.
//!
//! Two window families are used throughout: patches (windows of `patch_len`
//! positions, the reach of one dictionary filter in this layer) and stripes
//! (windows of `stripe_len` positions, the set of atoms that can touch one
//! patch of the layer below). The local norms below take a maximum over all
//! cyclic windows of the respective length.

use crate::error::{Error, Result};

/// Entries with magnitude at or below this tolerance count as zero.
pub const ZERO_TOL: f64 = 1e-12;

/// Shape of one layer: spatial extent, channels per position and the local
/// window lengths (in spatial positions) used by the patch and stripe norms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerGeometry {
    pub spatial_len: usize,
    pub channels: usize,
    pub patch_len: usize,
    pub stripe_len: usize,
}

impl LayerGeometry {
    pub fn new(
        spatial_len: usize,
        channels: usize,
        patch_len: usize,
        stripe_len: usize,
    ) -> Result<Self> {
        if spatial_len == 0 || channels == 0 || patch_len == 0 || stripe_len == 0 {
            return Err(Error::InvalidParameter(
                "geometry dimensions must be positive".into(),
            ));
        }
        if patch_len > spatial_len || stripe_len > spatial_len {
            return Err(Error::InvalidParameter(format!(
                "window lengths (patch {patch_len}, stripe {stripe_len}) must not exceed spatial length {spatial_len}"
            )));
        }
        Ok(Self { spatial_len, channels, patch_len, stripe_len })
    }

    /// Total number of coefficients.
    pub fn total_len(&self) -> usize {
        self.spatial_len * self.channels
    }
}

/// A vector over one layer, stored position-major with channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredVector {
    geom: LayerGeometry,
    data: Vec<f64>,
}

impl LayeredVector {
    pub fn new(geom: LayerGeometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geom.total_len() {
            return Err(Error::GeometryMismatch(format!(
                "data length {} does not match geometry total {}",
                data.len(),
                geom.total_len()
            )));
        }
        Ok(Self { geom, data })
    }

    pub fn zeros(geom: LayerGeometry) -> Self {
        let data = vec![0.0; geom.total_len()];
        Self { geom, data }
    }

    pub fn geom(&self) -> &LayerGeometry {
        &self.geom
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Indices of entries with magnitude above `tol`.
    pub fn support(&self, tol: f64) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, x)| x.abs() > tol)
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of entries with magnitude above [`ZERO_TOL`].
    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|x| x.abs() > ZERO_TOL).count()
    }
}

fn check_pos(j: usize, geom: &LayerGeometry) -> Result<()> {
    if j >= geom.spatial_len {
        return Err(Error::IndexOutOfRange { index: j, len: geom.spatial_len });
    }
    Ok(())
}

fn window(v: &LayeredVector, start: usize, len: usize) -> Vec<f64> {
    let g = v.geom();
    let mut out = Vec::with_capacity(len * g.channels);
    for p in 0..len {
        let pos = (start + p) % g.spatial_len;
        out.extend_from_slice(&v.data()[pos * g.channels..(pos + 1) * g.channels]);
    }
    out
}

/// The cyclic window of `patch_len` positions starting at position `j`,
/// channels interleaved.
pub fn extract_patch(v: &LayeredVector, j: usize) -> Result<Vec<f64>> {
    check_pos(j, v.geom())?;
    Ok(window(v, j, v.geom().patch_len))
}

/// The cyclic window of `stripe_len` positions centered on position `j`: the
/// window starts `(stripe_len - 1) / 2` positions before `j`.
pub fn extract_stripe(v: &LayeredVector, j: usize) -> Result<Vec<f64>> {
    let g = v.geom();
    check_pos(j, g)?;
    let half = (g.stripe_len - 1) / 2;
    let start = (j + g.spatial_len - half) % g.spatial_len;
    Ok(window(v, start, g.stripe_len))
}

fn max_window_count(v: &LayeredVector, len: usize, tol: f64) -> usize {
    let g = v.geom();
    let d = v.data();
    let mut best = 0;
    for start in 0..g.spatial_len {
        let mut count = 0;
        for p in 0..len {
            let pos = (start + p) % g.spatial_len;
            for c in 0..g.channels {
                if d[pos * g.channels + c].abs() > tol {
                    count += 1;
                }
            }
        }
        best = best.max(count);
    }
    best
}

/// Maximum number of nonzeros over all cyclic stripe windows, zero tolerance
/// [`ZERO_TOL`].
pub fn norm_l0inf_stripe(v: &LayeredVector) -> usize {
    norm_l0inf_stripe_tol(v, ZERO_TOL)
}

pub fn norm_l0inf_stripe_tol(v: &LayeredVector, tol: f64) -> usize {
    max_window_count(v, v.geom().stripe_len, tol)
}

/// Maximum number of nonzeros over all cyclic patch windows, zero tolerance
/// [`ZERO_TOL`].
pub fn norm_l0inf_patch(v: &LayeredVector) -> usize {
    norm_l0inf_patch_tol(v, ZERO_TOL)
}

pub fn norm_l0inf_patch_tol(v: &LayeredVector, tol: f64) -> usize {
    max_window_count(v, v.geom().patch_len, tol)
}

/// Maximum Euclidean norm over all cyclic patch windows.
pub fn norm_l2inf_patch(v: &LayeredVector) -> f64 {
    let g = v.geom();
    let d = v.data();
    let mut best = 0.0f64;
    for start in 0..g.spatial_len {
        let mut sq = 0.0;
        for p in 0..g.patch_len {
            let pos = (start + p) % g.spatial_len;
            for c in 0..g.channels {
                let x = d[pos * g.channels + c];
                sq += x * x;
            }
        }
        best = best.max(sq);
    }
    best.sqrt()
}

/// Ratio of the largest patch of `truth` to the largest patch of the error
/// `truth - est`, in dB. Returns positive infinity for an exact match.
pub fn local_snr(truth: &LayeredVector, est: &LayeredVector) -> Result<f64> {
    if truth.geom() != est.geom() {
        return Err(Error::GeometryMismatch(
            "local_snr requires matching geometries".into(),
        ));
    }
    let mut diff = truth.clone();
    for (dst, src) in diff.data_mut().iter_mut().zip(est.data()) {
        *dst -= src;
    }
    let num = norm_l2inf_patch(truth);
    let den = norm_l2inf_patch(&diff);
    if den == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (num / den).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn vecf(spatial: usize, m: usize, patch: usize, stripe: usize, data: &[f64]) -> LayeredVector {
        let g = LayerGeometry::new(spatial, m, patch, stripe).unwrap();
        LayeredVector::new(g, data.to_vec()).unwrap()
    }

    #[test]
    fn geometry_rejects_degenerate_shapes() {
        assert!(LayerGeometry::new(0, 1, 1, 1).is_err());
        assert!(LayerGeometry::new(4, 0, 1, 1).is_err());
        assert!(LayerGeometry::new(4, 1, 5, 1).is_err());
        assert!(LayerGeometry::new(4, 1, 1, 5).is_err());
        assert!(LayerGeometry::new(4, 1, 4, 3).is_ok());
    }

    #[test]
    fn vector_length_must_match_geometry() {
        let g = LayerGeometry::new(3, 2, 2, 1).unwrap();
        assert!(LayeredVector::new(g.clone(), vec![0.0; 5]).is_err());
        assert!(LayeredVector::new(g, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn patch_extraction_wraps_cyclically() {
        let v = vecf(4, 1, 2, 1, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(extract_patch(&v, 0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(extract_patch(&v, 3).unwrap(), vec![4.0, 1.0]);
        assert!(extract_patch(&v, 4).is_err());
    }

    #[test]
    fn patch_extraction_interleaves_channels() {
        let v = vecf(3, 2, 2, 1, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
        assert_eq!(extract_patch(&v, 2).unwrap(), vec![3.0, 30.0, 1.0, 10.0]);
    }

    #[test]
    fn stripe_extraction_is_centered() {
        let v = vecf(5, 1, 1, 3, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(extract_stripe(&v, 2).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(extract_stripe(&v, 0).unwrap(), vec![4.0, 0.0, 1.0]);
    }

    #[test]
    fn stripe_norm_counts_worst_cyclic_window() {
        let v = vecf(4, 1, 1, 3, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(norm_l0inf_stripe(&v), 2);
    }

    #[test]
    fn patch_norm_counts_worst_cyclic_window() {
        let v = vecf(4, 1, 2, 1, &[3.0, 0.0, 0.0, 5.0]);
        assert_eq!(norm_l0inf_patch(&v), 2);
        let z = vecf(4, 1, 2, 1, &[0.0; 4]);
        assert_eq!(norm_l0inf_patch(&z), 0);
    }

    #[test]
    fn patch_norm_respects_tolerance() {
        let v = vecf(4, 1, 2, 1, &[1e-13, 0.0, 0.0, 5.0]);
        assert_eq!(norm_l0inf_patch(&v), 1);
        assert_eq!(norm_l0inf_patch_tol(&v, 0.0), 2);
    }

    #[test]
    fn l2_patch_norm_matches_hand_value() {
        let v = vecf(4, 1, 2, 1, &[3.0, 4.0, 0.0, 0.0]);
        assert_abs_diff_eq!(norm_l2inf_patch(&v), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn local_snr_matches_hand_value() {
        let truth = vecf(4, 1, 1, 1, &[1.0, 0.0, 0.0, 0.0]);
        let est = vecf(4, 1, 1, 1, &[0.5, 0.0, 0.0, 0.0]);
        // single-entry patches: 20 log10(1 / 0.5)
        assert_abs_diff_eq!(
            local_snr(&truth, &est).unwrap(),
            20.0 * 2.0f64.log10(),
            epsilon = 1e-12
        );
        assert_eq!(local_snr(&truth, &truth).unwrap(), f64::INFINITY);
    }

    #[test]
    fn local_snr_rejects_mismatched_geometry() {
        let a = vecf(4, 1, 1, 1, &[0.0; 4]);
        let b = vecf(5, 1, 1, 1, &[0.0; 5]);
        assert!(local_snr(&a, &b).is_err());
    }

    // Brute-force window enumeration over an explicitly materialized cyclic
    // extension, used as an independent oracle for the sliding-window norms.
    fn oracle_l0(data: &[f64], spatial: usize, m: usize, len: usize, tol: f64) -> usize {
        let mut best = 0;
        for start in 0..spatial {
            let mut cnt = 0;
            for p in 0..len {
                for c in 0..m {
                    if data[((start + p) % spatial) * m + c].abs() > tol {
                        cnt += 1;
                    }
                }
            }
            best = best.max(cnt);
        }
        best
    }

    proptest! {
        #[test]
        fn stripe_norm_agrees_with_enumeration(
            data in proptest::collection::vec(-1.0f64..1.0, 6..48),
            len in 1usize..6,
            m in 1usize..3,
        ) {
            let spatial = data.len() / m;
            prop_assume!(spatial >= len);
            let data = &data[..spatial * m];
            let g = LayerGeometry::new(spatial, m, 1, len).unwrap();
            let mut v = LayeredVector::new(g, data.to_vec()).unwrap();
            // sparsify so counts vary
            for (i, x) in v.data_mut().iter_mut().enumerate() {
                if i % 3 == 0 {
                    *x = 0.0;
                }
            }
            let expect = oracle_l0(v.data(), spatial, m, len, ZERO_TOL);
            prop_assert_eq!(norm_l0inf_stripe(&v), expect);
        }

        #[test]
        fn patch_window_concatenation_covers_vector(
            data in proptest::collection::vec(-1.0f64..1.0, 4..32),
            patch in 1usize..5,
        ) {
            let spatial = data.len();
            prop_assume!(spatial >= patch);
            let g = LayerGeometry::new(spatial, 1, patch, 1).unwrap();
            let v = LayeredVector::new(g, data.clone()).unwrap();
            for j in 0..spatial {
                let w = extract_patch(&v, j).unwrap();
                for (p, x) in w.iter().enumerate() {
                    prop_assert_eq!(*x, data[(j + p) % spatial]);
                }
            }
        }
    }
}
