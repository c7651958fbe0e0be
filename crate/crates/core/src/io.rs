//! Plain-text serialization for vectors, filters, layer statistics and
//! experiment manifests.
//!
//! All floats are written with Rust's shortest round-tripping decimal
//! format, so a write followed by a read reproduces every value bit for
//! bit. Files are line-oriented: `#` starts a comment, vector files carry
//! their geometry in `# key=value` header lines, and manifests are flat
//! `key=value` listings.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::dict::{ConvDictionary, LocalFilterBank, ModelStack};
use crate::error::{Error, Result};
use crate::generate::SampleParams;
use crate::signal::{LayerGeometry, LayeredVector};
use crate::theory::LayerStats;

const STATS_HEADER: &str = "layer,l0inf_stripe,l0inf_patch,gamma_min_abs,gamma_max_abs,mu";

fn parse_err(path: &Path, lineno: usize, what: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}:{}: {}", path.display(), lineno + 1, what))
}

/// Writes a vector with its geometry as `# key=value` headers followed by
/// one value per line. Non-finite values are rejected.
pub fn write_vector(path: impl AsRef<Path>, v: &LayeredVector) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    let g = v.geom();
    writeln!(w, "# spatial_len={}", g.spatial_len)?;
    writeln!(w, "# channels={}", g.channels)?;
    writeln!(w, "# patch_len={}", g.patch_len)?;
    writeln!(w, "# stripe_len={}", g.stripe_len)?;
    for &x in v.data() {
        if !x.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "refusing to write non-finite value {x} to {}",
                path.display()
            )));
        }
        writeln!(w, "{x}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a vector written by [`write_vector`]. Header lines may appear in
/// any order; unrecognized comments are ignored.
pub fn read_vector(path: impl AsRef<Path>) -> Result<LayeredVector> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut spatial_len = None;
    let mut channels = None;
    let mut patch_len = None;
    let mut stripe_len = None;
    let mut data = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                let slot = match k.trim() {
                    "spatial_len" => &mut spatial_len,
                    "channels" => &mut channels,
                    "patch_len" => &mut patch_len,
                    "stripe_len" => &mut stripe_len,
                    _ => continue,
                };
                if slot.is_some() {
                    return Err(parse_err(path, lineno, format_args!("duplicate header {}", k.trim())));
                }
                let v = v.trim();
                *slot = Some(v.parse::<usize>().map_err(|_| {
                    parse_err(path, lineno, format_args!("bad header value {v:?}"))
                })?);
            }
            continue;
        }
        data.push(
            t.parse::<f64>()
                .map_err(|_| parse_err(path, lineno, format_args!("not a number: {t:?}")))?,
        );
    }
    let header = |name: &str, v: Option<usize>| {
        v.ok_or_else(|| Error::Parse(format!("{}: missing header {name}", path.display())))
    };
    let geom = LayerGeometry::new(
        header("spatial_len", spatial_len)?,
        header("channels", channels)?,
        header("patch_len", patch_len)?,
        header("stripe_len", stripe_len)?,
    )?;
    LayeredVector::new(geom, data)
}

/// Writes filter taps, one per line. Non-finite values are rejected.
pub fn write_filter(path: impl AsRef<Path>, taps: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    for &x in taps {
        if !x.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "refusing to write non-finite tap {x} to {}",
                path.display()
            )));
        }
        writeln!(w, "{x}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads filter taps, one per line, skipping blank and `#` comment lines.
pub fn read_filter(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut taps = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        taps.push(
            t.parse::<f64>()
                .map_err(|_| parse_err(path, lineno, format_args!("not a number: {t:?}")))?,
        );
    }
    if taps.is_empty() {
        return Err(Error::Parse(format!("{}: no taps found", path.display())));
    }
    Ok(taps)
}

/// Writes per-layer statistics as CSV, layers numbered from 1.
pub fn write_stats_csv(path: impl AsRef<Path>, stats: &[LayerStats]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "{STATS_HEADER}")?;
    for (i, s) in stats.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            i + 1,
            s.l0inf_stripe,
            s.l0inf_patch,
            s.gamma_min_abs,
            s.gamma_max_abs,
            s.mu
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads statistics written by [`write_stats_csv`].
pub fn read_stats_csv(path: impl AsRef<Path>) -> Result<Vec<LayerStats>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut stats = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if lineno == 0 {
            if t != STATS_HEADER {
                return Err(parse_err(path, lineno, format_args!("unexpected header {t:?}")));
            }
            continue;
        }
        let fields: Vec<&str> = t.split(',').collect();
        if fields.len() != 6 {
            return Err(parse_err(path, lineno, format_args!("expected 6 fields, got {}", fields.len())));
        }
        let layer: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format_args!("bad layer index {:?}", fields[0])))?;
        if layer != stats.len() + 1 {
            return Err(parse_err(path, lineno, format_args!("layer {layer} out of order")));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| parse_err(path, lineno, format_args!("not a number: {s:?}")))
        };
        let count = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, lineno, format_args!("not a count: {s:?}")))
        };
        stats.push(LayerStats {
            l0inf_stripe: count(fields[1])?,
            l0inf_patch: count(fields[2])?,
            gamma_min_abs: num(fields[3])?,
            gamma_max_abs: num(fields[4])?,
            mu: num(fields[5])?,
        });
    }
    Ok(stats)
}

/// Generation parameters recorded in a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestGen {
    /// Number of layers.
    pub depth: usize,
    /// Spatial length of the deepest representation.
    pub deepest_len: usize,
    /// Inclusive sparsity range for the deepest representation.
    pub l0_lo: usize,
    pub l0_hi: usize,
    /// Target signal-to-noise ratio in dB; absent for clean signals.
    pub snr_db: Option<f64>,
    /// Master seed.
    pub seed: u64,
}

/// One layer's dictionary as recorded in a manifest: filter file paths
/// relative to the manifest, taps per filter, filter count and stride.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestLayer {
    pub filters: Vec<String>,
    pub taps: usize,
    pub num_filters: usize,
    pub stride: usize,
}

/// On-disk description of a generated experiment: enough to rebuild the
/// exact model from saved filter files and to re-draw every realization
/// from the recorded seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub gen: ManifestGen,
    pub layers: Vec<ManifestLayer>,
}

impl Manifest {
    fn validate(&self) -> Result<()> {
        if self.gen.depth == 0 || self.gen.depth != self.layers.len() {
            return Err(Error::InvalidParameter(format!(
                "manifest depth {} does not match {} layer entries",
                self.gen.depth,
                self.layers.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.filters.len() != layer.num_filters || layer.num_filters == 0 {
                return Err(Error::InvalidParameter(format!(
                    "layer {}: {} filter paths for m={}",
                    i + 1,
                    layer.filters.len(),
                    layer.num_filters
                )));
            }
            for p in &layer.filters {
                if p.is_empty() || p.contains(',') {
                    return Err(Error::InvalidParameter(format!(
                        "layer {}: filter path {p:?} must be non-empty and comma-free",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        writeln!(w, "gen.K={}", self.gen.depth)?;
        writeln!(w, "gen.deepest_len={}", self.gen.deepest_len)?;
        writeln!(w, "gen.l0_lo={}", self.gen.l0_lo)?;
        writeln!(w, "gen.l0_hi={}", self.gen.l0_hi)?;
        if let Some(snr) = self.gen.snr_db {
            writeln!(w, "gen.snr_db={snr}")?;
        }
        writeln!(w, "gen.seed={}", self.gen.seed)?;
        for (i, layer) in self.layers.iter().enumerate() {
            writeln!(w, "layer.{}.filters={}", i + 1, layer.filters.join(","))?;
            writeln!(w, "layer.{}.n={}", i + 1, layer.taps)?;
            writeln!(w, "layer.{}.m={}", i + 1, layer.num_filters)?;
            writeln!(w, "layer.{}.s={}", i + 1, layer.stride)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| parse_err(path, lineno, format_args!("expected key=value, got {t:?}")))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(parse_err(path, lineno, format_args!("duplicate key {}", k.trim())));
            }
        }
        fn take<T: FromStr>(map: &mut BTreeMap<String, String>, path: &Path, key: &str) -> Result<T> {
            let v = map
                .remove(key)
                .ok_or_else(|| Error::Parse(format!("{}: missing key {key}", path.display())))?;
            v.parse().map_err(|_| {
                Error::Parse(format!("{}: bad value {v:?} for key {key}", path.display()))
            })
        }
        let depth: usize = take(&mut map, path, "gen.K")?;
        let gen = ManifestGen {
            depth,
            deepest_len: take(&mut map, path, "gen.deepest_len")?,
            l0_lo: take(&mut map, path, "gen.l0_lo")?,
            l0_hi: take(&mut map, path, "gen.l0_hi")?,
            snr_db: match map.remove("gen.snr_db") {
                None => None,
                Some(v) => Some(v.parse().map_err(|_| {
                    Error::Parse(format!("{}: bad value {v:?} for key gen.snr_db", path.display()))
                })?),
            },
            seed: take(&mut map, path, "gen.seed")?,
        };
        let mut layers = Vec::with_capacity(depth);
        for i in 1..=depth {
            let filters: String = take(&mut map, path, &format!("layer.{i}.filters"))?;
            let filters: Vec<String> =
                filters.split(',').map(|s| s.trim().to_string()).collect();
            layers.push(ManifestLayer {
                filters,
                taps: take(&mut map, path, &format!("layer.{i}.n"))?,
                num_filters: take(&mut map, path, &format!("layer.{i}.m"))?,
                stride: take(&mut map, path, &format!("layer.{i}.s"))?,
            });
        }
        if let Some(k) = map.keys().next() {
            return Err(Error::Parse(format!("{}: unknown key {k}", path.display())));
        }
        let manifest = Manifest { gen, layers };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Rebuilds the model from the filter files this manifest points to,
    /// resolving paths against `base` (normally the manifest's directory).
    pub fn load_model(&self, base: &Path) -> Result<ModelStack> {
        self.validate()?;
        let depth = self.layers.len();
        let mut level_len = vec![0usize; depth + 1];
        level_len[depth] = self.gen.deepest_len;
        for i in (0..depth).rev() {
            level_len[i] = level_len[i + 1].checked_mul(self.layers[i].stride).ok_or_else(|| {
                Error::InvalidParameter("signal length overflows usize".into())
            })?;
        }
        let mut dicts = Vec::with_capacity(depth);
        let mut out_channels = 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut filters = Vec::with_capacity(layer.filters.len());
            for rel in &layer.filters {
                let taps = read_filter(base.join(rel))?;
                if taps.len() != layer.taps {
                    return Err(Error::Parse(format!(
                        "{rel}: {} taps but manifest says {}",
                        taps.len(),
                        layer.taps
                    )));
                }
                filters.push(taps);
            }
            let bank = LocalFilterBank::new(filters)?;
            dicts.push(ConvDictionary::new(bank, level_len[i + 1], layer.stride, out_channels)?);
            out_channels = layer.num_filters;
        }
        ModelStack::new(dicts)
    }

    /// Sampling parameters recorded in this manifest.
    pub fn sample_params(&self) -> SampleParams {
        SampleParams {
            l0_range: (self.gen.l0_lo, self.gen.l0_hi),
            snr_db: self.gen.snr_db,
            seed: self.gen.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{build_model, FilterSpec, GenConfig, LayerGenSpec};
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn demo_vector() -> LayeredVector {
        let geom = LayerGeometry::new(6, 2, 3, 5).unwrap();
        let data = vec![
            1.5, -0.25, 0.0, 1e-300, -1e300, 5e-324, 0.1, -0.0, 3.0, 2.0, -7.125, 0.75,
        ];
        LayeredVector::new(geom, data).unwrap()
    }

    #[test]
    fn vector_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.txt");
        let v = demo_vector();
        write_vector(&path, &v).unwrap();
        let r = read_vector(&path).unwrap();
        assert_eq!(r.geom(), v.geom());
        for (a, b) in r.data().iter().zip(v.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn vector_write_rejects_non_finite() {
        let dir = tempdir().unwrap();
        let geom = LayerGeometry::new(2, 1, 1, 1).unwrap();
        let v = LayeredVector::new(geom, vec![1.0, f64::NAN]).unwrap();
        assert!(write_vector(dir.path().join("bad.txt"), &v).is_err());
    }

    #[test]
    fn vector_read_reports_line_numbers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.txt");
        std::fs::write(
            &path,
            "# spatial_len=2\n# channels=1\n# patch_len=1\n# stripe_len=1\n1.0\noops\n",
        )
        .unwrap();
        let err = read_vector(&path).unwrap_err();
        assert!(err.to_string().contains(":6:"), "{err}");
    }

    #[test]
    fn vector_read_requires_all_headers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.txt");
        std::fs::write(&path, "# spatial_len=2\n# channels=1\n# patch_len=1\n1.0\n2.0\n").unwrap();
        let err = read_vector(&path).unwrap_err();
        assert!(err.to_string().contains("stripe_len"), "{err}");
    }

    #[test]
    fn vector_read_rejects_duplicate_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.txt");
        std::fs::write(
            &path,
            "# spatial_len=2\n# spatial_len=2\n# channels=1\n# patch_len=1\n# stripe_len=1\n1\n2\n",
        )
        .unwrap();
        assert!(read_vector(&path).is_err());
    }

    #[test]
    fn filter_round_trip_skips_comments() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.txt");
        std::fs::write(&path, "# a filter\n0.5\n\n-0.25\n# trailing note\n1e-9\n").unwrap();
        assert_eq!(read_filter(&path).unwrap(), vec![0.5, -0.25, 1e-9]);
        let taps = vec![0.1, -0.2, 0.3];
        write_filter(&path, &taps).unwrap();
        assert_eq!(read_filter(&path).unwrap(), taps);
    }

    #[test]
    fn stats_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("stats.csv");
        let stats = vec![
            LayerStats {
                l0inf_stripe: 3,
                l0inf_patch: 5,
                gamma_min_abs: 0.125,
                gamma_max_abs: 2.5,
                mu: 2.4370523132954345e-4,
            },
            LayerStats {
                l0inf_stripe: 1,
                l0inf_patch: 1,
                gamma_min_abs: 1.0,
                gamma_max_abs: 1.0,
                mu: 0.005,
            },
        ];
        write_stats_csv(&path, &stats).unwrap();
        let r = read_stats_csv(&path).unwrap();
        assert_eq!(r.len(), 2);
        for (a, b) in r.iter().zip(&stats) {
            assert_eq!(a.l0inf_stripe, b.l0inf_stripe);
            assert_eq!(a.l0inf_patch, b.l0inf_patch);
            assert_eq!(a.gamma_min_abs.to_bits(), b.gamma_min_abs.to_bits());
            assert_eq!(a.gamma_max_abs.to_bits(), b.gamma_max_abs.to_bits());
            assert_eq!(a.mu.to_bits(), b.mu.to_bits());
        }
    }

    fn demo_manifest() -> Manifest {
        Manifest {
            gen: ManifestGen {
                depth: 2,
                deepest_len: 40,
                l0_lo: 5,
                l0_hi: 12,
                snr_db: Some(68.53),
                seed: 7,
            },
            layers: vec![
                ManifestLayer {
                    filters: vec!["filters/layer1_f1.txt".into()],
                    taps: 29,
                    num_filters: 1,
                    stride: 6,
                },
                ManifestLayer {
                    filters: vec!["filters/layer2_f1.txt".into()],
                    taps: 20,
                    num_filters: 1,
                    stride: 6,
                },
            ],
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        let m = demo_manifest();
        m.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
        let mut clean = m.clone();
        clean.gen.snr_db = None;
        clean.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), clean);
    }

    #[test]
    fn manifest_read_rejects_malformed_input() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        let m = demo_manifest();
        m.write(&path).unwrap();
        let good = std::fs::read_to_string(&path).unwrap();

        std::fs::write(&path, format!("{good}gen.seed=9\n")).unwrap();
        assert!(Manifest::read(&path).unwrap_err().to_string().contains("duplicate"));

        std::fs::write(&path, format!("{good}mystery=1\n")).unwrap();
        assert!(Manifest::read(&path).unwrap_err().to_string().contains("unknown key"));

        std::fs::write(&path, good.replace("gen.seed=7\n", "")).unwrap();
        assert!(Manifest::read(&path).unwrap_err().to_string().contains("gen.seed"));

        std::fs::write(&path, good.replace("layer.2.s=6\n", "")).unwrap();
        assert!(Manifest::read(&path).unwrap_err().to_string().contains("layer.2.s"));

        std::fs::write(&path, good.replace("gen.K=2", "gen.K=two")).unwrap();
        assert!(Manifest::read(&path).is_err());
    }

    #[test]
    fn manifest_restores_model_and_sampling() {
        use crate::generate::{meyer29, sample_realization};
        let cfg = GenConfig {
            layers: vec![
                LayerGenSpec { filter: FilterSpec::Fixed(meyer29()), stride: 6 },
                LayerGenSpec {
                    filter: FilterSpec::RandomDiscrete {
                        len: 20,
                        nnz: 7,
                        value_lo: -8,
                        value_hi: 8,
                        candidates: 10,
                    },
                    stride: 6,
                },
            ],
            deepest_len: 40,
            l0_range: (5, 12),
            snr_db: Some(30.0),
            seed: 7,
        };
        let model = build_model(&cfg).unwrap();

        let dir = tempdir().unwrap();
        std::fs::create_dir(dir.path().join("filters")).unwrap();
        let mut layers = Vec::new();
        for (i, d) in model.dicts().iter().enumerate() {
            let rel = format!("filters/layer{}_f1.txt", i + 1);
            write_filter(dir.path().join(&rel), d.bank().filter(0)).unwrap();
            layers.push(ManifestLayer {
                filters: vec![rel],
                taps: d.bank().taps(),
                num_filters: 1,
                stride: d.stride(),
            });
        }
        let m = Manifest {
            gen: ManifestGen {
                depth: 2,
                deepest_len: 40,
                l0_lo: 5,
                l0_hi: 12,
                snr_db: Some(30.0),
                seed: 7,
            },
            layers,
        };
        let path = dir.path().join("manifest.txt");
        m.write(&path).unwrap();

        let m2 = Manifest::read(&path).unwrap();
        let restored = m2.load_model(dir.path()).unwrap();
        assert_eq!(restored.depth(), model.depth());
        for level in 0..=model.depth() {
            assert_eq!(restored.geometry(level).unwrap(), model.geometry(level).unwrap());
        }
        for (a, b) in restored.dicts().iter().zip(model.dicts()) {
            let (fa, fb) = (a.bank().filter(0), b.bank().filter(0));
            for (x, y) in fa.iter().zip(fb) {
                assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
        assert_eq!(m2.sample_params(), cfg.sample_params());
        let r1 = sample_realization(&model, &cfg.sample_params(), 0).unwrap();
        let r2 = sample_realization(&restored, &m2.sample_params(), 0).unwrap();
        assert_eq!(
            r1.reps.last().unwrap().support(1e-12),
            r2.reps.last().unwrap().support(1e-12)
        );
    }

    proptest! {
        #[test]
        fn vector_round_trip_random(
            spatial in 1usize..12,
            channels in 1usize..3,
            patch_raw in 0usize..12,
            stripe_raw in 0usize..12,
            seed_vals in prop::collection::vec(-1e12f64..1e12, 0..36),
        ) {
            let patch = 1 + patch_raw % spatial;
            let stripe = 1 + stripe_raw % spatial;
            let geom = LayerGeometry::new(spatial, channels, patch, stripe).unwrap();
            let mut data = vec![0.0; geom.total_len()];
            for (slot, v) in data.iter_mut().zip(&seed_vals) {
                *slot = *v;
            }
            let v = LayeredVector::new(geom, data).unwrap();
            let dir = tempdir().unwrap();
            let path = dir.path().join("v.txt");
            write_vector(&path, &v).unwrap();
            let r = read_vector(&path).unwrap();
            prop_assert_eq!(r.geom(), v.geom());
            for (a, b) in r.data().iter().zip(v.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
