//! On-disk experiment directories: generation, pursuit runs, verification
//! and plot-data emission.
//!
//! A directory holds a manifest, the filter files it points to, one
//! `real_NNN` subdirectory per realization with the signal pair, true
//! layers and their measured statistics, and after a run the estimate
//! files plus a `records.csv` table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mlcsc::generate::{
    build_model, measure_stats, model_coherences, sample_realization, GenConfig,
};
use mlcsc::io::{
    read_stats_csv, read_vector, write_filter, write_stats_csv, write_vector, Manifest,
    ManifestGen, ManifestLayer,
};
use mlcsc::dict::ModelStack;
use mlcsc::signal::LayeredVector;
use mlcsc::theory::LayerStats;
use rayon::prelude::*;

use crate::algorithm::{
    algorithm_bounds, algorithm_conditions, layer_err, run_algorithm, spectral_bounds, Algorithm,
    Overrides,
};
use crate::records::{emit_csv, emit_plotdata, parse_csv, render_csv, sort_records, RunRecord};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const RECORDS_FILE: &str = "records.csv";
pub const PLOT_DIR: &str = "plot";
const FILTERS_DIR: &str = "filters";

/// Relative reconstruction slack allowed when re-synthesizing stored layers
/// with a reloaded model.
const CHAIN_REL_TOL: f64 = 1e-10;
/// Stored coherences may differ from recomputed ones by the renormalization
/// of reloaded filters.
const STATS_MU_REL_TOL: f64 = 1e-12;
/// An exact-recovery promise is checked as a relative windowed error below
/// this.
const EXACT_RECOVERY_REL_TOL: f64 = 1e-6;

/// Caps the global worker pool from the `MLCSC_THREADS` variable. Without
/// the variable the default pool is kept; a pool already built elsewhere is
/// left alone.
pub fn init_thread_pool() -> Result<()> {
    let Ok(v) = std::env::var("MLCSC_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .with_context(|| format!("MLCSC_THREADS={v:?} is not a thread count"))?;
    if n == 0 {
        bail!("MLCSC_THREADS must be positive");
    }
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn real_dir_name(i: usize) -> String {
    format!("real_{i:03}")
}

/// File holding one algorithm's estimate of one layer.
pub fn est_file_name(alg: Algorithm, layer: usize) -> String {
    format!("est_{alg}_layer{layer}.txt")
}

/// Draws a fresh model from the config and writes a full experiment
/// directory under `out`.
pub fn generate_workspace(gen: &GenConfig, realizations: usize, out: &Path) -> Result<()> {
    let model = build_model(gen).context("building the model")?;
    let mgen = ManifestGen {
        depth: gen.layers.len(),
        deepest_len: gen.deepest_len,
        l0_lo: gen.l0_range.0,
        l0_hi: gen.l0_range.1,
        snr_db: gen.snr_db,
        seed: gen.seed,
    };
    write_workspace(&model, &mgen, out, realizations)
}

/// Rebuilds the model recorded in an existing manifest and writes a new
/// experiment directory under `out`, optionally under a different seed.
pub fn generate_from_config(
    config: &Path,
    out: &Path,
    realizations: usize,
    seed: Option<u64>,
) -> Result<()> {
    let manifest =
        Manifest::read(config).with_context(|| format!("reading {}", config.display()))?;
    let base = config.parent().unwrap_or_else(|| Path::new("."));
    let model = manifest.load_model(base).context("loading the configured model")?;
    let mut gen = manifest.gen.clone();
    if let Some(s) = seed {
        gen.seed = s;
    }
    write_workspace(&model, &gen, out, realizations)
}

fn write_workspace(
    model: &ModelStack,
    gen: &ManifestGen,
    out: &Path,
    realizations: usize,
) -> Result<()> {
    if realizations == 0 {
        bail!("realization count must be positive");
    }
    if out.join(MANIFEST_FILE).exists() {
        bail!("{} already contains an experiment", out.display());
    }
    fs::create_dir_all(out.join(FILTERS_DIR))
        .with_context(|| format!("creating {}", out.display()))?;
    let mut layers = Vec::with_capacity(model.depth());
    for (i, d) in model.dicts().iter().enumerate() {
        let mut filters = Vec::with_capacity(d.bank().num_filters());
        for f in 0..d.bank().num_filters() {
            let rel = format!("{FILTERS_DIR}/layer{}_f{}.txt", i + 1, f + 1);
            write_filter(out.join(&rel), d.bank().filter(f))?;
            filters.push(rel);
        }
        layers.push(ManifestLayer {
            filters,
            taps: d.bank().taps(),
            num_filters: d.bank().num_filters(),
            stride: d.stride(),
        });
    }
    let manifest = Manifest { gen: gen.clone(), layers };
    manifest.write(out.join(MANIFEST_FILE))?;
    let params = manifest.sample_params();
    let mus = model_coherences(model)?;
    (0..realizations).into_par_iter().try_for_each(|i| -> Result<()> {
        let r = sample_realization(model, &params, i)?;
        let dir = out.join(real_dir_name(i));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_vector(dir.join("x.txt"), &r.x)?;
        write_vector(dir.join("y.txt"), &r.y)?;
        for (l, g) in r.reps.iter().enumerate() {
            write_vector(dir.join(format!("gamma_{}.txt", l + 1)), g)?;
        }
        let stats = measure_stats(&r.reps, &mus)?;
        write_stats_csv(dir.join("stats.csv"), &stats)?;
        Ok(())
    })
}

/// An experiment directory reopened for running or checking.
pub struct LoadedWorkspace {
    pub manifest: Manifest,
    pub model: ModelStack,
    /// Per-layer mutual coherences of the reloaded model.
    pub mus: Vec<f64>,
    /// Realization directories found, sorted by index.
    pub realizations: Vec<(usize, PathBuf)>,
}

/// Reopens an experiment directory.
pub fn load_workspace(dir: &Path) -> Result<LoadedWorkspace> {
    let path = dir.join(MANIFEST_FILE);
    let manifest = Manifest::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let model = manifest.load_model(dir).context("restoring the model")?;
    let mus = model_coherences(&model)?;
    let mut realizations = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(suffix) = name.strip_prefix("real_") {
            if entry.file_type()?.is_dir() {
                let i: usize = suffix
                    .parse()
                    .with_context(|| format!("realization directory {name:?}"))?;
                realizations.push((i, entry.path()));
            }
        }
    }
    realizations.sort();
    if realizations.is_empty() {
        bail!("{} holds no realizations", dir.display());
    }
    Ok(LoadedWorkspace { manifest, model, mus, realizations })
}

/// One realization reloaded from disk, with statistics recomputed from the
/// stored layers.
pub struct RealizationData {
    pub index: usize,
    pub x: LayeredVector,
    pub y: LayeredVector,
    /// True layers, shallowest first.
    pub truth: Vec<LayeredVector>,
    pub stats: Vec<LayerStats>,
    /// Largest windowed l2 norm of the additive noise.
    pub eps0: f64,
}

/// Reads one `real_NNN` directory back.
pub fn load_realization(
    depth: usize,
    mus: &[f64],
    index: usize,
    dir: &Path,
) -> Result<RealizationData> {
    let x = read_vector(dir.join("x.txt"))?;
    let y = read_vector(dir.join("y.txt"))?;
    let truth: Vec<LayeredVector> = (1..=depth)
        .map(|l| Ok(read_vector(dir.join(format!("gamma_{l}.txt")))?))
        .collect::<Result<_>>()?;
    let stats = measure_stats(&truth, mus)?;
    let eps0 = layer_err(&x, &y)?;
    Ok(RealizationData { index, x, y, truth, stats, eps0 })
}

/// Runs the selected algorithms over every realization, writes the estimate
/// files and the records table, and returns the sorted records.
pub fn run_workspace(
    dir: &Path,
    algorithms: &[Algorithm],
    overrides: &Overrides,
) -> Result<Vec<RunRecord>> {
    if algorithms.is_empty() {
        bail!("no algorithms selected");
    }
    let ws = load_workspace(dir)?;
    let cs: Option<Vec<f64>> = algorithms
        .iter()
        .any(|a| a.needs_spectral())
        .then(|| spectral_bounds(&ws.model))
        .transpose()?;
    let depth = ws.model.depth();
    let per: Vec<Vec<RunRecord>> = ws
        .realizations
        .par_iter()
        .map(|(idx, rdir)| -> Result<Vec<RunRecord>> {
            let data = load_realization(depth, &ws.mus, *idx, rdir)?;
            let mut recs = Vec::new();
            for &alg in algorithms {
                let ests = run_algorithm(
                    &ws.model,
                    &data.y,
                    &data.truth,
                    &data.stats,
                    data.eps0,
                    cs.as_deref(),
                    overrides,
                    alg,
                )
                .with_context(|| format!("{alg} on realization {idx}"))?;
                let bounds = algorithm_bounds(alg, &data.stats, data.eps0, overrides)?;
                for (l, est) in ests.iter().enumerate() {
                    write_vector(rdir.join(est_file_name(alg, l + 1)), est)?;
                    recs.push(RunRecord::from_estimate(
                        *idx,
                        l + 1,
                        alg,
                        &data.truth[l],
                        est,
                        bounds[l],
                    )?);
                }
            }
            Ok(recs)
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<RunRecord> = per.into_iter().flatten().collect();
    sort_records(&mut records);
    emit_csv(&dir.join(RECORDS_FILE), &records)?;
    Ok(records)
}

/// Outcome of checking an experiment directory.
#[derive(Debug)]
pub struct VerifyReport {
    pub realizations: usize,
    pub records: usize,
    /// Human-readable inconsistencies; empty means the directory checks out.
    pub violations: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn l2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_chain_layer(
    model: &ModelStack,
    input: &LayeredVector,
    rep: &LayeredVector,
    level: usize,
) -> Result<Option<String>> {
    let synth = model.dicts()[level].synthesize(rep)?;
    let diff: Vec<f64> =
        input.data().iter().zip(synth.data()).map(|(a, b)| a - b).collect();
    let rel = l2(&diff) / l2(input.data()).max(1.0);
    Ok((rel > CHAIN_REL_TOL).then(|| {
        format!("layer {} does not synthesize its input (relative error {rel:.3e})", level + 1)
    }))
}

fn stats_match(stored: &LayerStats, fresh: &LayerStats) -> bool {
    stored.l0inf_stripe == fresh.l0inf_stripe
        && stored.l0inf_patch == fresh.l0inf_patch
        && stored.gamma_min_abs.to_bits() == fresh.gamma_min_abs.to_bits()
        && stored.gamma_max_abs.to_bits() == fresh.gamma_max_abs.to_bits()
        && (stored.mu - fresh.mu).abs() <= STATS_MU_REL_TOL * fresh.mu.abs()
}

fn float_field_match(stored: f64, fresh: f64) -> bool {
    stored.to_bits() == fresh.to_bits() || (stored.is_nan() && fresh.is_nan())
}

fn verify_realization(
    ws: &LoadedWorkspace,
    idx: usize,
    rdir: &Path,
    stored: &[&RunRecord],
    overrides: &Overrides,
) -> Result<Vec<String>> {
    let mut violations = Vec::new();
    let depth = ws.model.depth();
    let data = load_realization(depth, &ws.mus, idx, rdir)?;
    let at = |msg: String| format!("realization {idx}: {msg}");

    for i in 0..depth {
        let input = if i == 0 { &data.x } else { &data.truth[i - 1] };
        if let Some(v) = check_chain_layer(&ws.model, input, &data.truth[i], i)? {
            violations.push(at(v));
        }
    }

    let stored_stats = read_stats_csv(rdir.join("stats.csv"))?;
    if stored_stats.len() != depth {
        violations.push(at(format!("stats.csv lists {} layers", stored_stats.len())));
    } else {
        for (l, (s, f)) in stored_stats.iter().zip(&data.stats).enumerate() {
            if !stats_match(s, f) {
                violations.push(at(format!("stats.csv layer {} does not match the stored layers", l + 1)));
            }
        }
    }

    let mut bounds_cache: BTreeMap<Algorithm, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for rec in stored {
        if rec.layer == 0 || rec.layer > depth {
            violations.push(at(format!("record cites layer {}", rec.layer)));
            continue;
        }
        let (bounds, conds) = match bounds_cache.entry(rec.algorithm) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert((
                algorithm_bounds(rec.algorithm, &data.stats, data.eps0, overrides)?,
                algorithm_conditions(rec.algorithm, &data.stats, data.eps0, overrides)?,
            )),
        };
        let path = rdir.join(est_file_name(rec.algorithm, rec.layer));
        if !path.exists() {
            violations.push(at(format!("missing estimate file {}", path.display())));
            continue;
        }
        let est = read_vector(&path)?;
        let truth = &data.truth[rec.layer - 1];
        let fresh = RunRecord::from_estimate(
            idx,
            rec.layer,
            rec.algorithm,
            truth,
            &est,
            bounds[rec.layer - 1],
        )?;
        let matches = fresh.support_exact == rec.support_exact
            && fresh.support_contained == rec.support_contained
            && float_field_match(rec.err_l2inf, fresh.err_l2inf)
            && float_field_match(rec.bound_eps, fresh.bound_eps)
            && float_field_match(rec.empirical_snr_db, fresh.empirical_snr_db)
            && float_field_match(rec.bound_snr_db, fresh.bound_snr_db);
        if !matches {
            violations.push(at(format!(
                "{} layer {} record does not match its estimate file",
                rec.algorithm, rec.layer
            )));
        }
        if conds[rec.layer - 1] {
            let bound = bounds[rec.layer - 1];
            if bound > 0.0 && fresh.err_l2inf > bound {
                violations.push(at(format!(
                    "{} layer {} breaks its error guarantee ({:.3e} > {:.3e})",
                    rec.algorithm, rec.layer, fresh.err_l2inf, bound
                )));
            }
            if bound == 0.0 {
                let scale = mlcsc::signal::norm_l2inf_patch(truth);
                if fresh.err_l2inf > EXACT_RECOVERY_REL_TOL * scale {
                    violations.push(at(format!(
                        "{} layer {} misses its exact-recovery guarantee (relative error {:.3e})",
                        rec.algorithm,
                        rec.layer,
                        fresh.err_l2inf / scale
                    )));
                }
            }
        }
    }
    Ok(violations)
}

/// Recomputes everything an experiment directory claims: layer chains,
/// stored statistics, every record against its estimate file, the table's
/// canonical order, and each applicable error guarantee. Inconsistencies
/// are collected as violations; unreadable or malformed files are errors.
///
/// A run made with level overrides must be verified with the same
/// overrides, since they change which guarantees apply.
pub fn verify_workspace(dir: &Path, overrides: &Overrides) -> Result<VerifyReport> {
    let ws = load_workspace(dir)?;
    let records_path = dir.join(RECORDS_FILE);
    let stored = parse_csv(&records_path)?;
    let text = fs::read_to_string(&records_path)?;
    let mut violations = Vec::new();
    if render_csv(&stored) != text {
        violations.push("records table is not in canonical form".into());
    }
    let mut by_real: BTreeMap<usize, Vec<&RunRecord>> = BTreeMap::new();
    for r in &stored {
        by_real.entry(r.realization).or_default().push(r);
    }
    let known: BTreeMap<usize, &PathBuf> =
        ws.realizations.iter().map(|(i, p)| (*i, p)).collect();
    for idx in by_real.keys() {
        if !known.contains_key(idx) {
            violations.push(format!("records cite missing realization {idx}"));
        }
    }
    let empty: Vec<&RunRecord> = Vec::new();
    let per: Vec<Vec<String>> = ws
        .realizations
        .par_iter()
        .map(|(idx, rdir)| {
            verify_realization(&ws, *idx, rdir, by_real.get(idx).unwrap_or(&empty), overrides)
        })
        .collect::<Result<_>>()?;
    violations.extend(per.into_iter().flatten());
    Ok(VerifyReport {
        realizations: ws.realizations.len(),
        records: stored.len(),
        violations,
    })
}

/// Writes plot-ready series from an existing records table into `out`
/// (default: a `plot` subdirectory). Returns the files written.
pub fn emit_workspace(dir: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let records = parse_csv(&dir.join(RECORDS_FILE))?;
    let target = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join(PLOT_DIR));
    emit_plotdata(&records, &target)
}
