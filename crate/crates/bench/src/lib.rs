//! Shared fixtures for the criterion benchmarks: a representative wavelet
//! dictionary and deterministic signals at experiment-scale lengths.

use mlcsc::dict::{ConvDictionary, LocalFilterBank};
use mlcsc::generate::meyer29;
use mlcsc::{LayerGeometry, LayeredVector};

/// Stride used by the bundled experiment families.
pub const BENCH_STRIDE: usize = 6;

/// Single-channel wavelet dictionary mapping `in_spatial_len` coefficients
/// to a signal six times as long.
pub fn wavelet_dictionary(in_spatial_len: usize) -> ConvDictionary {
    let bank = LocalFilterBank::new(vec![meyer29()]).expect("valid filter");
    ConvDictionary::new(bank, in_spatial_len, BENCH_STRIDE, 1).expect("valid dictionary")
}

/// Deterministic dense fill over a geometry; cheap to regenerate and free of
/// RNG state.
pub fn ramp_signal(geom: LayerGeometry, scale: f64) -> LayeredVector {
    let data = (0..geom.total_len()).map(|i| scale * (i as f64 * 0.37).sin()).collect();
    LayeredVector::new(geom, data).expect("data matches geometry")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_the_expected_shapes() {
        let d = wavelet_dictionary(600);
        assert_eq!(d.out_geom().total_len(), 3600);
        let g = ramp_signal(d.in_geom().clone(), 2.0);
        assert_eq!(g.data().len(), 600);
        assert!(g.data().iter().all(|x| x.abs() <= 2.0));
    }
}
