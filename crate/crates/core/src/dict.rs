//! Banded circulant convolutional dictionaries.
//!
//! A dictionary maps a representation over `in_len` spatial positions with
//! `m_in` channels to an output over `in_len * stride` positions with `m_out`
//! channels. Atom `(j, f)` places filter `f` at output position `j * stride`;
//! the filter covers `extent` consecutive output positions (cyclically), with
//! `m_out` interleaved channel weights per position. Filters are rescaled to
//! unit Euclidean norm on construction, so every atom is a unit vector.
//!
//! A [`ModelStack`] chains dictionaries into a multi-layer model: the signal
//! is layer 0 and dictionary `i` (1-based) synthesizes layer `i - 1` from
//! layer `i`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::signal::{LayerGeometry, LayeredVector, ZERO_TOL};

/// Largest number of entries the dense materializations will allocate.
pub const DENSE_CAP: usize = 10_000_000;

const POWER_MAX_ITERS: usize = 20_000;
const POWER_SEED: u64 = 0x9E3779B97F4A7C15;

/// A bank of local filters stored as flat tap vectors. All filters share one
/// tap count; the split of taps into spatial positions and output channels is
/// fixed by the dictionary using the bank. Filters are rescaled to unit
/// Euclidean norm.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFilterBank {
    filters: Vec<Vec<f64>>,
    taps: usize,
}

impl LocalFilterBank {
    pub fn new(filters: Vec<Vec<f64>>) -> Result<Self> {
        let taps = match filters.first() {
            Some(f) => f.len(),
            None => return Err(Error::InvalidParameter("filter bank is empty".into())),
        };
        if taps == 0 {
            return Err(Error::InvalidParameter(
                "filters must have at least one tap".into(),
            ));
        }
        let mut filters = filters;
        for (i, f) in filters.iter_mut().enumerate() {
            if f.len() != taps {
                return Err(Error::InvalidParameter(format!(
                    "filter {i} has {} taps, expected {taps}",
                    f.len()
                )));
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "filter {i} has non-finite taps"
                )));
            }
            let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= ZERO_TOL {
                return Err(Error::InvalidParameter(format!(
                    "filter {i} is numerically zero"
                )));
            }
            for x in f.iter_mut() {
                *x /= norm;
            }
        }
        Ok(Self { filters, taps })
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    /// Taps of filter `f`. Panics if `f` is out of range.
    pub fn filter(&self, f: usize) -> &[f64] {
        &self.filters[f]
    }
}

/// One convolutional layer operator.
#[derive(Clone, Debug)]
pub struct ConvDictionary {
    bank: LocalFilterBank,
    stride: usize,
    extent: usize,
    in_geom: LayerGeometry,
    out_geom: LayerGeometry,
}

fn div_ceil_i64(a: i64, b: i64) -> i64 {
    a.div_euclid(b) + (a.rem_euclid(b) != 0) as i64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ConvDictionary {
    /// Builds the operator for a representation of `in_spatial_len` positions.
    /// The bank supplies one filter per input channel; each filter's taps are
    /// read as `taps / out_channels` spatial positions with `out_channels`
    /// interleaved weights each, so `out_channels` must divide the tap count.
    pub fn new(
        bank: LocalFilterBank,
        in_spatial_len: usize,
        spatial_stride: usize,
        out_channels: usize,
    ) -> Result<Self> {
        if in_spatial_len == 0 || spatial_stride == 0 || out_channels == 0 {
            return Err(Error::InvalidParameter(
                "length, stride and channel parameters must be positive".into(),
            ));
        }
        if !bank.taps().is_multiple_of(out_channels) {
            return Err(Error::InvalidParameter(format!(
                "tap count {} is not a multiple of {out_channels} output channels",
                bank.taps()
            )));
        }
        let extent = bank.taps() / out_channels;
        let out_len = in_spatial_len
            .checked_mul(spatial_stride)
            .ok_or_else(|| Error::InvalidParameter("output length overflows".into()))?;
        let stripe_len = 2 * extent.div_ceil(spatial_stride) - 1;
        // Window lengths that depend on neighboring layers default to this
        // dictionary's own: ModelStack::new overwrites them where a neighbor
        // exists.
        let in_geom = LayerGeometry::new(in_spatial_len, bank.num_filters(), stripe_len, stripe_len)?;
        let out_geom = LayerGeometry::new(out_len, out_channels, extent, extent)?;
        Ok(Self { bank, stride: spatial_stride, extent, in_geom, out_geom })
    }

    pub fn bank(&self) -> &LocalFilterBank {
        &self.bank
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Number of output positions covered by one filter.
    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn in_geom(&self) -> &LayerGeometry {
        &self.in_geom
    }

    pub fn out_geom(&self) -> &LayerGeometry {
        &self.out_geom
    }

    pub fn num_atoms(&self) -> usize {
        self.in_geom.total_len()
    }

    /// The nonzero window of flat atom `a`: its filter. Placing it at the
    /// atom's strided offset reproduces the dense column.
    pub fn atom_filter(&self, a: usize) -> Result<&[f64]> {
        if a >= self.num_atoms() {
            return Err(Error::IndexOutOfRange { index: a, len: self.num_atoms() });
        }
        Ok(self.bank.filter(a % self.in_geom.channels))
    }

    /// Applies the dictionary: output position `p` gathers every atom whose
    /// span contains it.
    pub fn synthesize(&self, gamma: &LayeredVector) -> Result<LayeredVector> {
        if gamma.geom() != &self.in_geom {
            return Err(Error::GeometryMismatch(
                "synthesize input does not match the dictionary's input geometry".into(),
            ));
        }
        let (in_len, m_in) = (self.in_geom.spatial_len, self.in_geom.channels);
        let (out_len, m_out) = (self.out_geom.spatial_len, self.out_geom.channels);
        let (n, s) = (self.extent as i64, self.stride as i64);
        let gd = gamma.data();
        let mut out = LayeredVector::zeros(self.out_geom.clone());
        let od = out.data_mut();
        for p in 0..out_len {
            // Unwrapped placements whose span [j s, j s + n) contains p; each
            // wrapped atom appears at most once because the stripe length
            // (which bounds the placement count) fits in the spatial length.
            let lo = div_ceil_i64(p as i64 - n + 1, s);
            let hi = (p as i64).div_euclid(s);
            for j in lo..=hi {
                let r = (p as i64 - j * s) as usize;
                let jw = j.rem_euclid(in_len as i64) as usize;
                for f in 0..m_in {
                    let gv = gd[jw * m_in + f];
                    if gv == 0.0 {
                        continue;
                    }
                    let filt = self.bank.filter(f);
                    for c in 0..m_out {
                        od[p * m_out + c] += gv * filt[r * m_out + c];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Applies the adjoint: coefficient `(j, f)` is the inner product of atom
    /// `(j, f)` with `x`.
    pub fn analyze(&self, x: &LayeredVector) -> Result<LayeredVector> {
        if x.geom() != &self.out_geom {
            return Err(Error::GeometryMismatch(
                "analyze input does not match the dictionary's output geometry".into(),
            ));
        }
        let (in_len, m_in) = (self.in_geom.spatial_len, self.in_geom.channels);
        let (out_len, m_out) = (self.out_geom.spatial_len, self.out_geom.channels);
        let xd = x.data();
        let mut out = LayeredVector::zeros(self.in_geom.clone());
        let od = out.data_mut();
        for j in 0..in_len {
            let base = j * self.stride;
            let head = (out_len - base).min(self.extent);
            for f in 0..m_in {
                let filt = self.bank.filter(f);
                let mut acc = dot(&filt[..head * m_out], &xd[base * m_out..(base + head) * m_out]);
                if head < self.extent {
                    acc += dot(&filt[head * m_out..], &xd[..(self.extent - head) * m_out]);
                }
                od[j * m_in + f] = acc;
            }
        }
        Ok(out)
    }

    /// Inner product of two atoms, each given as `(position, channel)`.
    pub fn atom_dot(&self, a: (usize, usize), b: (usize, usize)) -> Result<f64> {
        for (j, f) in [a, b] {
            if j >= self.in_geom.spatial_len {
                return Err(Error::IndexOutOfRange { index: j, len: self.in_geom.spatial_len });
            }
            if f >= self.in_geom.channels {
                return Err(Error::IndexOutOfRange { index: f, len: self.in_geom.channels });
            }
        }
        let (out_len, m_out) = (self.out_geom.spatial_len, self.out_geom.channels);
        let fa = self.bank.filter(a.1);
        let fb = self.bank.filter(b.1);
        let shift = (b.0 as i64 - a.0 as i64).rem_euclid(self.in_geom.spatial_len as i64) as usize;
        let delta = shift * self.stride;
        let mut acc = 0.0;
        for ra in 0..self.extent {
            let rb = (ra + out_len - delta) % out_len;
            if rb < self.extent {
                acc += dot(&fa[ra * m_out..(ra + 1) * m_out], &fb[rb * m_out..(rb + 1) * m_out]);
            }
        }
        Ok(acc)
    }

    /// Largest absolute inner product over distinct atom pairs. Shift
    /// invariance reduces the search to one reference position against every
    /// relative shift.
    pub fn mutual_coherence(&self) -> Result<f64> {
        if self.num_atoms() < 2 {
            return Err(Error::SingleAtom);
        }
        let m_in = self.in_geom.channels;
        let mut best = 0.0f64;
        for d in 0..self.in_geom.spatial_len {
            for fa in 0..m_in {
                for fb in 0..m_in {
                    if d == 0 && fa == fb {
                        continue;
                    }
                    let v = self.atom_dot((0, fa), (d, fb))?.abs();
                    if v > best {
                        best = v;
                    }
                }
            }
        }
        Ok(best.min(1.0))
    }

    /// Largest number of nonzero taps over the bank's filters: one
    /// coefficient creates at most this many nonzeros in the layer below.
    pub fn induced_l0(&self) -> usize {
        self.bank
            .filters
            .iter()
            .map(|f| f.iter().filter(|x| x.abs() > ZERO_TOL).count())
            .max()
            .unwrap_or(0)
    }

    /// The operator as a dense matrix (output rows by coefficient columns).
    pub fn densify(&self) -> Result<DMatrix<f64>> {
        let rows = self.out_geom.total_len();
        let cols = self.in_geom.total_len();
        let entries = rows.saturating_mul(cols);
        if entries > DENSE_CAP {
            return Err(Error::DenseCapExceeded { rows, cols, cap: DENSE_CAP });
        }
        let (m_in, m_out) = (self.in_geom.channels, self.out_geom.channels);
        let out_len = self.out_geom.spatial_len;
        let mut mat = DMatrix::zeros(rows, cols);
        for j in 0..self.in_geom.spatial_len {
            for f in 0..m_in {
                let filt = self.bank.filter(f);
                let col = j * m_in + f;
                for r in 0..self.extent {
                    let p = (j * self.stride + r) % out_len;
                    for c in 0..m_out {
                        mat[(p * m_out + c, col)] += filt[r * m_out + c];
                    }
                }
            }
        }
        Ok(mat)
    }

    /// Upper estimate of the largest Gram eigenvalue by power iteration from
    /// a fixed random start vector. Iteration stops once successive Rayleigh
    /// quotients agree to a relative `tol`; the estimate is inflated by
    /// `1 + 10 tol` to absorb the remaining gap.
    pub fn gram_spectral_bound(&self, tol: f64) -> Result<f64> {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::InvalidParameter(
                "power iteration tolerance must be positive and finite".into(),
            ));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(POWER_SEED);
        let mut v: Vec<f64> =
            (0..self.in_geom.total_len()).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        for x in v.iter_mut() {
            *x /= norm;
        }
        let mut last = f64::INFINITY;
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let gamma = LayeredVector::new(self.in_geom.clone(), v.clone())?;
            let w = self.analyze(&self.synthesize(&gamma)?)?.into_data();
            lambda = dot(&v, &w);
            let wn = dot(&w, &w).sqrt();
            if wn <= ZERO_TOL {
                return Err(Error::Numerical(
                    "power iteration start vector lies in the null space".into(),
                ));
            }
            if (lambda - last).abs() <= tol * lambda.abs().max(1.0) {
                return Ok(lambda * (1.0 + 10.0 * tol));
            }
            last = lambda;
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / wn;
            }
        }
        Err(Error::PowerIterationDiverged { iters: POWER_MAX_ITERS, last: lambda })
    }

    /// Dense local dictionary relating one stripe of coefficients to one
    /// output patch: column `(b, f)` holds filter `f` placed at patch offset
    /// `(b - (stripe_len - 1) / 2) * stride`, clipped to the patch. When the
    /// output length is at least `2 * extent - 1`, the output patch at
    /// position `j * stride` equals this matrix times the stripe centered on
    /// `j`.
    pub fn stripe_dictionary(&self) -> Result<DMatrix<f64>> {
        let (m_in, m_out) = (self.in_geom.channels, self.out_geom.channels);
        let stripe_len = self.in_geom.stripe_len;
        let rows = self.extent * m_out;
        let cols = stripe_len * m_in;
        let entries = rows.saturating_mul(cols);
        if entries > DENSE_CAP {
            return Err(Error::DenseCapExceeded { rows, cols, cap: DENSE_CAP });
        }
        let half = (stripe_len - 1) / 2;
        let mut omega = DMatrix::zeros(rows, cols);
        for b in 0..stripe_len {
            let off = (b as i64 - half as i64) * self.stride as i64;
            for f in 0..m_in {
                let filt = self.bank.filter(f);
                let col = b * m_in + f;
                for r in 0..self.extent {
                    let q = off + r as i64;
                    if q >= 0 && q < self.extent as i64 {
                        for c in 0..m_out {
                            omega[(q as usize * m_out + c, col)] = filt[r * m_out + c];
                        }
                    }
                }
            }
        }
        Ok(omega)
    }

    /// The dictionary with each filter duplicated under a sign flip, so every
    /// synthesis can be rewritten with nonnegative coefficients: channel `2f`
    /// carries the positive part and channel `2f + 1` the negative part of
    /// original channel `f`.
    pub fn nonnegative_expand(&self) -> ConvDictionary {
        let mut filters = Vec::with_capacity(2 * self.bank.num_filters());
        for f in 0..self.bank.num_filters() {
            let filt = self.bank.filter(f);
            filters.push(filt.to_vec());
            filters.push(filt.iter().map(|x| -x).collect());
        }
        // Sign flips preserve the unit norm exactly; bypass renormalization
        // so the expanded operator reproduces the original bit for bit.
        let bank = LocalFilterBank { filters, taps: self.bank.taps };
        let mut in_geom = self.in_geom.clone();
        in_geom.channels *= 2;
        ConvDictionary {
            bank,
            stride: self.stride,
            extent: self.extent,
            in_geom,
            out_geom: self.out_geom.clone(),
        }
    }
}

/// Rewrites coefficients for [`ConvDictionary::nonnegative_expand`]: each
/// channel splits into its positive and negative parts, both nonnegative.
pub fn split_nonnegative(gamma: &LayeredVector) -> LayeredVector {
    let g = gamma.geom().clone();
    let m = g.channels;
    let geom = LayerGeometry { channels: 2 * m, ..g };
    let mut out = LayeredVector::zeros(geom);
    let od = out.data_mut();
    for (i, &v) in gamma.data().iter().enumerate() {
        let (j, f) = (i / m, i % m);
        let base = (j * m + f) * 2;
        if v >= 0.0 {
            od[base] = v;
        } else {
            od[base + 1] = -v;
        }
    }
    out
}

/// Undoes [`split_nonnegative`]: channel pairs `(2f, 2f + 1)` recombine as
/// their difference.
pub fn merge_nonnegative(gamma: &LayeredVector) -> Result<LayeredVector> {
    let g = gamma.geom().clone();
    if !g.channels.is_multiple_of(2) {
        return Err(Error::GeometryMismatch(
            "channel count must be even to merge sign pairs".into(),
        ));
    }
    let m = g.channels / 2;
    let geom = LayerGeometry { channels: m, ..g };
    let mut out = LayeredVector::zeros(geom);
    let od = out.data_mut();
    let gd = gamma.data();
    for i in 0..od.len() {
        od[i] = gd[2 * i] - gd[2 * i + 1];
    }
    Ok(out)
}

/// A chain of dictionaries `[D1, ..., DK]` where dictionary `i` (1-based)
/// synthesizes layer `i - 1` from layer `i`; layer 0 is the signal.
///
/// Construction checks that shared layers agree in size and channel count,
/// then fills in the window lengths that couple neighboring layers: a layer's
/// patch length is the filter extent of the dictionary synthesizing into it,
/// and its stripe length comes from the dictionary reading it. The deepest
/// layer keeps its stripe length as its patch length unless overridden, and
/// the signal keeps its patch length as its stripe length.
#[derive(Clone, Debug)]
pub struct ModelStack {
    dicts: Vec<ConvDictionary>,
}

impl ModelStack {
    pub fn new(dicts: Vec<ConvDictionary>) -> Result<Self> {
        if dicts.is_empty() {
            return Err(Error::InvalidParameter(
                "a model needs at least one dictionary".into(),
            ));
        }
        for i in 0..dicts.len() - 1 {
            let above = &dicts[i].in_geom;
            let below = &dicts[i + 1].out_geom;
            if above.spatial_len != below.spatial_len || above.channels != below.channels {
                return Err(Error::GeometryMismatch(format!(
                    "layer {} is {}x{} for the dictionary above it but {}x{} for the one below",
                    i + 1,
                    above.spatial_len,
                    above.channels,
                    below.spatial_len,
                    below.channels
                )));
            }
        }
        let mut dicts = dicts;
        for i in 0..dicts.len() - 1 {
            let patch = dicts[i + 1].out_geom.patch_len;
            dicts[i].in_geom.patch_len = patch;
            let stripe = dicts[i].in_geom.stripe_len;
            dicts[i + 1].out_geom.stripe_len = stripe;
        }
        Ok(Self { dicts })
    }

    /// Same as [`ModelStack::new`] but with the deepest layer's patch length
    /// set to `patch_len` instead of defaulting to its stripe length.
    pub fn with_deepest_patch_len(dicts: Vec<ConvDictionary>, patch_len: usize) -> Result<Self> {
        let mut stack = Self::new(dicts)?;
        let deepest = stack.dicts.last_mut().expect("checked nonempty");
        if patch_len == 0 || patch_len > deepest.in_geom.spatial_len {
            return Err(Error::InvalidParameter(format!(
                "deepest patch length {patch_len} out of range for spatial length {}",
                deepest.in_geom.spatial_len
            )));
        }
        deepest.in_geom.patch_len = patch_len;
        Ok(stack)
    }

    /// Number of layers.
    pub fn depth(&self) -> usize {
        self.dicts.len()
    }

    pub fn dicts(&self) -> &[ConvDictionary] {
        &self.dicts
    }

    /// Geometry of one level: 0 is the signal, `1..=depth()` the layers.
    pub fn geometry(&self, level: usize) -> Result<&LayerGeometry> {
        if level > self.dicts.len() {
            return Err(Error::IndexOutOfRange { index: level, len: self.dicts.len() + 1 });
        }
        Ok(if level == 0 {
            &self.dicts[0].out_geom
        } else {
            &self.dicts[level - 1].in_geom
        })
    }

    /// Synthesizes every level from the deepest representation. Element `i`
    /// of the result is level `i`, so element 0 is the signal.
    pub fn synthesize_chain(&self, deepest: &LayeredVector) -> Result<Vec<LayeredVector>> {
        let k = self.dicts.len();
        if deepest.geom() != &self.dicts[k - 1].in_geom {
            return Err(Error::GeometryMismatch(
                "deepest representation does not match the model's deepest geometry".into(),
            ));
        }
        let mut levels = vec![deepest.clone()];
        for d in self.dicts.iter().rev() {
            let next = d.synthesize(levels.last().expect("nonempty"))?;
            levels.push(next);
        }
        levels.reverse();
        Ok(levels)
    }
}
