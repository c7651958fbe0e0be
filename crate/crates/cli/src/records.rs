//! Per-layer result records, their CSV table, and plot-ready series.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mlcsc::pursuit::relative_support;
use mlcsc::signal::{local_snr, norm_l2inf_patch, LayeredVector, ZERO_TOL};

use crate::algorithm::{layer_err, Algorithm};

/// Column order of the records table.
pub const CSV_HEADER: &str = "realization,layer,algorithm,support_exact,support_contained,\
                              err_l2inf,bound_eps,empirical_snr_db,bound_snr_db";

/// One algorithm's outcome on one layer of one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub realization: usize,
    /// 1-based layer index, shallowest first.
    pub layer: usize,
    pub algorithm: Algorithm,
    /// The estimate's support equals the true support.
    pub support_exact: bool,
    /// The estimate's support is a subset of the true support.
    pub support_contained: bool,
    /// Largest windowed l2 norm of the estimation error.
    pub err_l2inf: f64,
    /// Worst-case error promised by the algorithm's guarantee, NaN without
    /// one.
    pub bound_eps: f64,
    /// Windowed SNR of the estimate against the truth, in dB.
    pub empirical_snr_db: f64,
    /// SNR implied by `bound_eps`: infinite for an exact-recovery promise,
    /// NaN without one.
    pub bound_snr_db: f64,
}

impl RunRecord {
    /// Measures an estimate against the true layer.
    pub fn from_estimate(
        realization: usize,
        layer: usize,
        algorithm: Algorithm,
        truth: &LayeredVector,
        est: &LayeredVector,
        bound_eps: f64,
    ) -> Result<RunRecord> {
        let true_support = truth.support(ZERO_TOL);
        let est_support = relative_support(est);
        let support_exact = est_support == true_support;
        let support_contained =
            est_support.iter().all(|i| true_support.binary_search(i).is_ok());
        let err_l2inf = layer_err(truth, est)?;
        let empirical_snr_db = local_snr(truth, est)?;
        let bound_snr_db = if bound_eps.is_nan() {
            f64::NAN
        } else if bound_eps == 0.0 {
            f64::INFINITY
        } else {
            20.0 * (norm_l2inf_patch(truth) / bound_eps).log10()
        };
        Ok(RunRecord {
            realization,
            layer,
            algorithm,
            support_exact,
            support_contained,
            err_l2inf,
            bound_eps,
            empirical_snr_db,
            bound_snr_db,
        })
    }

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.realization,
            self.layer,
            self.algorithm,
            self.support_exact,
            self.support_contained,
            fmt_float(self.err_l2inf),
            fmt_float(self.bound_eps),
            fmt_float(self.empirical_snr_db),
            fmt_float(self.bound_snr_db),
        )
    }
}

fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

/// Orders by layer, then algorithm, then theoretical SNR, then realization.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        a.layer
            .cmp(&b.layer)
            .then(a.algorithm.cmp(&b.algorithm))
            .then(a.bound_snr_db.total_cmp(&b.bound_snr_db))
            .then(a.realization.cmp(&b.realization))
    });
}

/// Renders the sorted table, header first.
pub fn render_csv(records: &[RunRecord]) -> String {
    let mut sorted: Vec<RunRecord> = records.to_vec();
    sort_records(&mut sorted);
    let mut out = String::with_capacity(64 * (sorted.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &sorted {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Writes the sorted table to `path`.
pub fn emit_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    fs::write(path, render_csv(records))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn parse_line(path: &Path, lineno: usize, line: &str) -> Result<RunRecord> {
    let at = |what: &str| format!("{}:{}: {what}", path.display(), lineno + 1);
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 9 {
        bail!(at(&format!("expected 9 fields, found {}", fields.len())));
    }
    let uint = |i: usize, name: &str| -> Result<usize> {
        fields[i].parse().with_context(|| at(&format!("bad {name} {:?}", fields[i])))
    };
    let boolean = |i: usize, name: &str| -> Result<bool> {
        match fields[i] {
            "true" => Ok(true),
            "false" => Ok(false),
            other => bail!(at(&format!("bad {name} {other:?}"))),
        }
    };
    let float = |i: usize, name: &str| -> Result<f64> {
        fields[i].parse().with_context(|| at(&format!("bad {name} {:?}", fields[i])))
    };
    Ok(RunRecord {
        realization: uint(0, "realization")?,
        layer: uint(1, "layer")?,
        algorithm: fields[2]
            .parse()
            .map_err(|e: String| anyhow::anyhow!(at(&e)))?,
        support_exact: boolean(3, "support_exact")?,
        support_contained: boolean(4, "support_contained")?,
        err_l2inf: float(5, "err_l2inf")?,
        bound_eps: float(6, "bound_eps")?,
        empirical_snr_db: float(7, "empirical_snr_db")?,
        bound_snr_db: float(8, "bound_snr_db")?,
    })
}

/// Reads a records table written by [`emit_csv`].
pub fn parse_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        Some((_, h)) => bail!("{}:1: unexpected header {h:?}", path.display()),
        None => bail!("{}: empty table", path.display()),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| parse_line(path, i, l))
        .collect()
}

fn companion(alg: Algorithm) -> Option<Algorithm> {
    match alg {
        Algorithm::LayeredSoft => Some(Algorithm::LayeredSoftOracle),
        Algorithm::LayeredBp => Some(Algorithm::LayeredBpHandpicked),
        _ => None,
    }
}

/// Writes one whitespace-separated series per layer and guaranteed
/// algorithm, rows ordered by the theoretical SNR, ready for plotting.
///
/// Columns are rank, realization, empirical SNR and theoretical SNR; soft
/// and shrinkage series gain a fifth column with their oracle or hand-picked
/// counterpart's empirical SNR on the same realization when those records
/// exist. Returns the files written.
pub fn emit_plotdata(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let layers: BTreeSet<usize> = records.iter().map(|r| r.layer).collect();
    let mut written = Vec::new();
    for &layer in &layers {
        for alg in Algorithm::ALL.into_iter().filter(|a| a.has_bound()) {
            let mut rows: Vec<&RunRecord> =
                records.iter().filter(|r| r.layer == layer && r.algorithm == alg).collect();
            if rows.is_empty() {
                continue;
            }
            rows.sort_by(|a, b| {
                a.bound_snr_db
                    .total_cmp(&b.bound_snr_db)
                    .then(a.realization.cmp(&b.realization))
            });
            let extra: Option<(Algorithm, HashMap<usize, f64>)> =
                companion(alg).and_then(|c| {
                    let m: HashMap<usize, f64> = records
                        .iter()
                        .filter(|r| r.layer == layer && r.algorithm == c)
                        .map(|r| (r.realization, r.empirical_snr_db))
                        .collect();
                    (!m.is_empty()).then_some((c, m))
                });
            let mut out = String::new();
            let _ = write!(out, "# layer {layer} {alg}\n# rank realization empirical_snr_db bound_snr_db");
            if let Some((c, _)) = &extra {
                let _ = write!(out, " {c}_empirical_snr_db");
            }
            out.push('\n');
            for (rank, r) in rows.iter().enumerate() {
                let _ = write!(
                    out,
                    "{rank} {} {} {}",
                    r.realization,
                    fmt_float(r.empirical_snr_db),
                    fmt_float(r.bound_snr_db)
                );
                if let Some((_, m)) = &extra {
                    let v = m.get(&r.realization).copied().unwrap_or(f64::NAN);
                    let _ = write!(out, " {}", fmt_float(v));
                }
                out.push('\n');
            }
            let path = dir.join(format!("layer{layer}_{alg}.txt"));
            fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// One line per layer and algorithm: support recovery counts and worst
/// errors, for console output.
pub fn summarize(records: &[RunRecord]) -> String {
    let mut keys: Vec<(usize, Algorithm)> =
        records.iter().map(|r| (r.layer, r.algorithm)).collect();
    keys.sort();
    keys.dedup();
    let mut out = String::new();
    for (layer, alg) in keys {
        let group: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.layer == layer && r.algorithm == alg)
            .collect();
        let n = group.len();
        let exact = group.iter().filter(|r| r.support_exact).count();
        let contained = group.iter().filter(|r| r.support_contained).count();
        let worst = group.iter().map(|r| r.err_l2inf).fold(0.0f64, f64::max);
        let _ = writeln!(
            out,
            "layer {layer} {alg}: exact {exact}/{n}, contained {contained}/{n}, worst err {worst:.3e}"
        );
    }
    out
}
