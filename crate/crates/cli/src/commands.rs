use std::fs;
use std::path::Path;

use ensdiv_core::conditional::{
    conditional_grid, joint_samples, kde_joint, padded_grid, permutation_test, scott_bandwidth, DMode, JointSample,
    KdeGrid, PermutationConfig, Source, DEFAULT_GRID_POINTS, DEFAULT_RIDGE, GRID_QUANTILES,
};
use ensdiv_core::data::{enumerate_homogeneous_ensembles, form_heterogeneous_ensembles, EnsembleDef};
use ensdiv_core::decomposition::{
    brier_jensen_gap, decompose_entropy, decompose_quadratic, nll_jensen_gap, Family, UncertaintyFamily,
};
use ensdiv_core::gp::{self, default_experiment};
use ensdiv_core::improvement::{improvement_similarity_test, pearson_r, per_point_improvement, ImprovementPair};
use ensdiv_core::io::{save_synthetic, MANIFEST_FILE};
use ensdiv_core::simulate::SyntheticSpec;
use ensdiv_core::trends::{
    collect_points, diversity_ratio_for, effective_robustness, trend_table, ClassGroup, ModelClass, TrendConfig,
    TrendMetric,
};
use ensdiv_core::{MetricKind, PredictionStore, ProbMatrix, IDENTITY_TOL, LIKELIHOOD_EPS};
use serde_json::{json, Value};

use crate::args::*;
use crate::output::{display_path, envelope, num, OutputDir};
use crate::svg::{Plot, PALETTE};
use crate::{check_datasets, default_ensembles, load, model_groups, parse_pair, resolve_ensemble, CliError, RunSummary};

const PLOT_POINTS: usize = 10_000;

fn finish(out: OutputDir) -> RunSummary {
    RunSummary { dir: out.path.clone(), files: out.written().to_vec() }
}

fn strided<T: Clone>(v: &[T], cap: usize) -> Vec<T> {
    if v.len() <= cap {
        return v.to_vec();
    }
    let step = v.len().div_ceil(cap);
    v.iter().step_by(step).cloned().collect()
}

fn bits_factor(on: bool) -> f64 {
    if on { 1.0 / std::f64::consts::LN_2 } else { 1.0 }
}

pub fn simulate(a: &SimulateArgs) -> Result<RunSummary, CliError> {
    let spec = SyntheticSpec {
        n_points: a.points,
        n_classes: a.classes,
        n_models: a.models,
        member_noise_scale: a.noise,
        shift_strength: a.shift,
        seed: a.seed,
        n_groups: a.groups,
        latent_noise_scale: a.latent_noise,
    };
    spec.validate()?;
    let mut out = OutputDir::prepare(&a.output)?;
    let data = ensdiv_core::simulate::simulate(&spec)?;
    save_synthetic(&data, &out.path)?;
    let record = envelope(
        "simulate",
        Some(a.seed),
        json!({ "spec": spec }),
        json!({
            "teacher": "linear logits over a 2-D standard-normal latent input",
            "members": "teacher logits times exp(noise * g_m), g_m ~ N(0, 1), plus latent_noise * (A_m x + c_m)",
            "group_noise_factor": "1 + g / 2 for group g",
            "ood_inputs": "latent inputs translated by shift * (1, 1) / sqrt(2)",
            "stored_precision": "f32 logits",
        }),
        json!({
            "manifest": MANIFEST_FILE,
            "datasets": data.dataset_ids(),
            "models": data.models,
        }),
    );
    out.json("simulate.json", &record)?;
    let mut summary = finish(out);
    summary.files.insert(0, MANIFEST_FILE.to_owned());
    Ok(summary)
}

pub fn decompose(a: &DecomposeArgs) -> Result<RunSummary, CliError> {
    let store = load(&a.manifest)?;
    let datasets = check_datasets(&store, &a.datasets)?;
    let defs = if a.ensembles.is_empty() {
        default_ensembles(&store)?
    } else {
        a.ensembles.iter().map(|e| resolve_ensemble(&store, e)).collect::<Result<_, _>>()?
    };
    let mut out = OutputDir::prepare(&a.output)?;
    let bits = bits_factor(a.base_2);
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    let mut plot = Plot::new("Diversity vs average member uncertainty (quadratic)", "average member uncertainty", "diversity");
    for def in &defs {
        for (di, ds) in datasets.iter().enumerate() {
            let members = store.member_predictions(def, ds)?;
            let labels = store.labels(ds)?;
            let records = [
                decompose_quadratic(&members)?,
                decompose_entropy(&members)?,
                brier_jensen_gap(&members, labels)?,
                nll_jensen_gap(&members, labels)?,
            ];
            for rec in &records {
                let k = if matches!(rec.family, Family::EntropyJsd | Family::NllGap) { bits } else { 1.0 };
                let (t, d, m) = rec.means();
                let min_div = rec.diversity.iter().copied().fold(f64::INFINITY, f64::min);
                summaries.push(json!({
                    "ensemble": def.ensemble_id,
                    "dataset": ds,
                    "family": rec.family,
                    "n": rec.len(),
                    "mean_total": t * k,
                    "mean_diversity": d * k,
                    "mean_avg_member": m * k,
                    "min_diversity": min_div * k,
                    "max_abs_residual": rec.max_abs_residual() * k,
                    "jensen_ordering_holds": rec.family.is_additive() || min_div >= -IDENTITY_TOL,
                }));
                for i in 0..rec.len() {
                    rows.push(vec![
                        def.ensemble_id.clone(),
                        ds.clone(),
                        i.to_string(),
                        rec.family.name().to_owned(),
                        num(rec.total[i] * k),
                        num(rec.diversity[i] * k),
                        num(rec.avg_member[i] * k),
                    ]);
                }
            }
            if std::ptr::eq(def, &defs[0]) {
                let q = &records[0];
                let pts: Vec<(f64, f64)> = q.avg_member.iter().copied().zip(q.diversity.iter().copied()).collect();
                plot.points(strided(&pts, PLOT_POINTS), PALETTE[di % PALETTE.len()], Some(ds));
            }
        }
    }
    let record = envelope(
        "decompose",
        None,
        json!({
            "manifest": display_path(&a.manifest),
            "datasets": datasets,
            "ensembles": defs,
        }),
        json!({
            "ensemble_prediction": "arithmetic mean of member probabilities",
            "likelihood_eps": LIKELIHOOD_EPS,
            "identity_tolerance": IDENTITY_TOL,
            "units": if a.base_2 { "bits" } else { "nats" },
            "gap_families": "avg_member = total + diversity (Brier and NLL gaps); total = diversity + avg_member otherwise",
        }),
        json!({ "summaries": summaries }),
    );
    out.json("decompose.json", &record)?;
    out.csv(
        "decompose_points.csv",
        &["ensemble", "dataset", "index", "family", "total", "diversity", "avg_member"],
        rows,
    )?;
    out.svg("decompose.svg", &plot)?;
    Ok(finish(out))
}

fn family(f: FamilyArg) -> UncertaintyFamily {
    match f {
        FamilyArg::Quadratic => UncertaintyFamily::Quadratic,
        FamilyArg::Entropy => UncertaintyFamily::Entropy,
    }
}

fn scaled(s: JointSample, k: f64) -> Result<JointSample, CliError> {
    if k == 1.0 {
        return Ok(s);
    }
    Ok(JointSample::new(
        s.avg.iter().map(|v| v * k).collect(),
        s.div.iter().map(|v| v * k).collect(),
        s.source,
    )?)
}

fn kde_rows(label: &str, joint: &KdeGrid, cond: &KdeGrid, rows: &mut Vec<Vec<String>>) {
    for (ix, x) in joint.x_grid.iter().enumerate() {
        for (iy, y) in joint.y_grid.iter().enumerate() {
            rows.push(vec![label.to_owned(), num(*x), num(*y), num(joint.at(ix, iy)), num(cond.at(ix, iy))]);
        }
    }
}

pub fn conditional(a: &ConditionalArgs) -> Result<RunSummary, CliError> {
    if a.bins < 2 {
        return Err(CliError::Validation("--bins must be at least 2".into()));
    }
    let store = load(&a.manifest)?;
    let (ind, ood) = parse_pair(&store, a.pair.as_deref())?;
    let def = match &a.ensemble {
        Some(e) => resolve_ensemble(&store, e)?,
        None => default_ensembles(&store)?.remove(0),
    };
    let fam = family(a.family);
    let k = bits_factor(a.base_2 && fam == UncertaintyFamily::Entropy);
    let si = scaled(joint_samples(&store.member_predictions(&def, &ind)?, fam, Source::InD)?, k)?;
    let so = scaled(joint_samples(&store.member_predictions(&def, &ood)?, fam, Source::OOD)?, k)?;
    let mut out = OutputDir::prepare(&a.output)?;

    let d_mode = if a.integral_d { DMode::Integral } else { DMode::RatioOfSums };
    let cfg = PermutationConfig { n_surrogates: a.surrogates, seed: a.seed, d_mode, ..Default::default() };
    let r = permutation_test(&si, &so, &cfg)?;

    let (hi, ho) = (scott_bandwidth(&si)?, scott_bandwidth(&so)?);
    let pooled_x: Vec<f64> = si.avg.iter().chain(&so.avg).copied().collect();
    let pooled_y: Vec<f64> = si.div.iter().chain(&so.div).copied().collect();
    let xg = padded_grid(&pooled_x, hi.0.max(ho.0), 3.0, a.bins);
    let yg = padded_grid(&pooled_y, hi.1.max(ho.1), 3.0, a.bins);
    let (ki, ko) = (kde_joint(&si, &xg, &yg, hi)?, kde_joint(&so, &xg, &yg, ho)?);
    let (ci, co) = (conditional_grid(&ki), conditional_grid(&ko));
    let mut kde = Vec::new();
    kde_rows("ind", &ki, &ci, &mut kde);
    kde_rows("ood", &ko, &co, &mut kde);

    let curve_rows = r
        .curve_ind
        .x_grid
        .iter()
        .zip(r.curve_ind.y_hat.iter().zip(&r.curve_ood.y_hat))
        .map(|(x, (yi, yo))| vec![num(*x), num(*yi), num(*yo)]);

    let mut plot = Plot::new(
        &format!("Conditional diversity, {} ({ind} vs {ood})", def.ensemble_id),
        "average member uncertainty",
        "diversity",
    );
    for (s, color, seed) in [(&si, PALETTE[0], a.seed), (&so, PALETTE[1], a.seed.wrapping_add(1))] {
        let sub = s.subsample(a.subsample, seed);
        plot.points(sub.avg.iter().copied().zip(sub.div.iter().copied()).collect(), color, None);
    }
    let xs = &r.curve_ind.x_grid;
    plot.line(xs.iter().copied().zip(r.curve_ind.y_hat.iter().copied()).collect(), PALETTE[0], false, Some(&ind));
    plot.line(xs.iter().copied().zip(r.curve_ood.y_hat.iter().copied()).collect(), PALETTE[1], false, Some(&ood));

    let record = envelope(
        "conditional",
        Some(a.seed),
        json!({
            "manifest": display_path(&a.manifest),
            "pair": [ind, ood],
            "ensemble": def,
            "family": fam,
            "n_ind": si.len(),
            "n_ood": so.len(),
        }),
        json!({
            "krr_bandwidth_rule": "Scott's rule on the pooled average-uncertainty values",
            "krr_bandwidth": r.bandwidth,
            "krr_ridge": r.ridge,
            "krr_ridge_default": DEFAULT_RIDGE,
            "krr_form": "raw ridge solution of (K + ridge*n*I) alpha = y; no weight normalization",
            "krr_ridge_escalation": "x10 up to 3 times on factorization failure",
            "grid_points": DEFAULT_GRID_POINTS,
            "grid_quantiles": [GRID_QUANTILES.0, GRID_QUANTILES.1],
            "d_mode": d_mode,
            "p_value_rule": "(#{surrogate d >= observed d} + 1) / (surrogates + 1), one-sided",
            "surrogate_rng": "ChaCha8 seeded with --seed, stream s + 1 for surrogate s",
            "kde_bandwidth_rule": "Scott's rule per sample, n^(-1/6) * sample std",
            "kde_bandwidth_ind": [hi.0, hi.1],
            "kde_bandwidth_ood": [ho.0, ho.1],
            "kde_grid": { "points_per_axis": a.bins, "padding_bandwidths": 3.0 },
            "kde_zero_columns": { "ind": ci.zero_columns, "ood": co.zero_columns },
            "plot_subsample_cap": a.subsample,
            "units": if k != 1.0 { "bits" } else { "nats" },
        }),
        json!({
            "d": r.d,
            "p_value": r.p_value,
            "n_surrogates": r.n_surrogates,
            "n_exceeding": r.n_exceeding,
        }),
    );
    out.json("conditional.json", &record)?;
    out.csv("conditional_curves.csv", &["x", "ind", "ood"], curve_rows)?;
    out.csv("conditional_kde.csv", &["source", "x", "y", "density", "conditional_density"], kde)?;
    out.svg("conditional.svg", &plot)?;
    Ok(finish(out))
}

fn trend_metric(m: MetricArg) -> TrendMetric {
    match m {
        MetricArg::ZeroOne => TrendMetric::ZeroOne,
        MetricArg::Nll => TrendMetric::Nll,
        MetricArg::Brier => TrendMetric::Brier,
        MetricArg::Ece => TrendMetric::Ece,
        MetricArg::Resce => TrendMetric::Resce,
    }
}

fn homogeneous(store: &PredictionStore, size: usize) -> Result<Vec<EnsembleDef>, CliError> {
    if size == 0 {
        return Ok(store.ensembles().to_vec());
    }
    let mut defs = Vec::new();
    for (_, ids) in model_groups(store) {
        if ids.len() >= size {
            defs.extend(enumerate_homogeneous_ensembles(&ids, size)?);
        }
    }
    if defs.is_empty() {
        return Err(CliError::Validation(format!("no group has at least {size} models")));
    }
    Ok(defs)
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn trends(a: &TrendsArgs) -> Result<RunSummary, CliError> {
    if a.bins == 0 {
        return Err(CliError::Validation("--bins must be positive".into()));
    }
    let store = load(&a.manifest)?;
    let pairs: Vec<(String, String)> = if a.pairs.is_empty() {
        if store.pairs().is_empty() {
            return Err(CliError::Validation("manifest lists no dataset pairs; pass --pair".into()));
        }
        store.pairs().to_vec()
    } else {
        a.pairs.iter().map(|p| parse_pair(&store, Some(p))).collect::<Result<_, _>>()?
    };
    let metrics: Vec<TrendMetric> =
        if a.metrics.is_empty() { TrendMetric::ALL.to_vec() } else { a.metrics.iter().map(|&m| trend_metric(m)).collect() };
    let ensembles = homogeneous(&store, a.ensemble_size)?;
    let cfg = TrendConfig { calibration_bins: a.bins, logit_scale: a.logit_scale };
    let mut out = OutputDir::prepare(&a.output)?;

    let mut results = Vec::new();
    let mut table_rows = Vec::new();
    let mut point_rows = Vec::new();
    let mut plots = Vec::new();
    for (pi, (ind, ood)) in pairs.iter().enumerate() {
        let hetero = if a.hetero_bins > 0 {
            Some(form_heterogeneous_ensembles(&store, ind, a.hetero_bins, a.hetero_members, a.seed)?)
        } else {
            None
        };
        let hetero_defs = hetero.as_ref().map(|h| h.ensembles.clone()).unwrap_or_default();
        let points = collect_points(&store, &ensembles, &hetero_defs, &metrics, (ind, ood), &cfg)?;
        let table = trend_table(&points, &metrics);
        for row in &table {
            let f = row.fit;
            table_rows.push(vec![
                ind.clone(),
                ood.clone(),
                row.metric.name().to_owned(),
                row.class.label().to_owned(),
                opt(f.map(|f| f.coefficient)),
                opt(f.map(|f| f.intercept)),
                opt(f.map(|f| f.std_error)),
                opt(f.map(|f| f.t_statistic)),
                opt(f.map(|f| f.p_value)),
                opt(f.map(|f| f.r2)),
                row.n_points.to_string(),
                row.note.clone().unwrap_or_default(),
            ]);
        }
        for p in &points {
            let baseline = table
                .iter()
                .find(|r| r.metric == p.metric && r.class == ClassGroup::SingleModel)
                .and_then(|r| r.fit);
            point_rows.push(vec![
                ind.clone(),
                ood.clone(),
                p.metric.name().to_owned(),
                p.model_id.clone(),
                serde_json::to_value(p.model_class).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
                num(p.ind_value),
                num(p.ood_value),
                opt(baseline.map(|b| effective_robustness(p, &b))),
            ]);
        }
        let ratios: Vec<Value> = ensembles
            .iter()
            .map(|def| match diversity_ratio_for(&store, def, (ind, ood)) {
                Ok(r) => json!({ "ensemble": def.ensemble_id, "check": r }),
                Err(e) => json!({ "ensemble": def.ensemble_id, "error": e.to_string() }),
            })
            .collect();
        for &metric in &metrics {
            let mut plot = Plot::new(
                &format!("{ind} vs {ood}: {}", metric.name()),
                &format!("{ind} {}", metric.name()),
                &format!("{ood} {}", metric.name()),
            );
            let sel = |class: ModelClass| -> Vec<(f64, f64)> {
                points
                    .iter()
                    .filter(|p| p.metric == metric && p.model_class == class)
                    .map(|p| (p.ind_value, p.ood_value))
                    .collect()
            };
            let all: Vec<(f64, f64)> =
                points.iter().filter(|p| p.metric == metric).map(|p| (p.ind_value, p.ood_value)).collect();
            for (i, (class, label)) in [
                (ModelClass::Single, "single model"),
                (ModelClass::Ensemble, "ensemble"),
                (ModelClass::Heterogeneous, "heterogeneous ensemble"),
            ]
            .into_iter()
            .enumerate()
            {
                let pts = sel(class);
                if !pts.is_empty() {
                    plot.points(pts, PALETTE[i], Some(label));
                }
            }
            let lo = all.iter().map(|p| p.0.min(p.1)).fold(f64::INFINITY, f64::min);
            let hi = all.iter().map(|p| p.0.max(p.1)).fold(f64::NEG_INFINITY, f64::max);
            if lo.is_finite() && hi.is_finite() {
                plot.line(vec![(lo, lo), (hi, hi)], "#000000", true, Some("y = x"));
                if let Some(f) = table.iter().find(|r| r.metric == metric && r.class == ClassGroup::All).and_then(|r| r.fit) {
                    let xmin = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                    let xmax = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
                    plot.line(vec![(xmin, f.predict(xmin)), (xmax, f.predict(xmax))], PALETTE[3], false, Some("All fit"));
                }
            }
            plots.push((format!("trends_{pi}_{}.svg", metric.name()), plot));
        }
        results.push(json!({
            "pair": [ind, ood],
            "table": table,
            "heterogeneous": hetero,
            "diversity_ratio": ratios,
        }));
    }
    let record = envelope(
        "trends",
        Some(a.seed),
        json!({
            "manifest": display_path(&a.manifest),
            "pairs": pairs,
            "metrics": metrics,
            "homogeneous_ensembles": ensembles.len(),
            "ensemble_size": a.ensemble_size,
        }),
        json!({
            "calibration_bins": a.bins,
            "calibration_bin_rule": "bin = ceil(confidence * B), confidence 0 goes to bin 1",
            "logit_scale": a.logit_scale,
            "fit": "ordinary least squares, ood = coefficient * ind + intercept",
            "p_value": "two-sided Student t on the slope, n - 2 degrees of freedom, classical standard errors",
            "all_row": "single models plus homogeneous ensembles",
            "effective_robustness": "single-model fit prediction minus observed OOD value (positive = more robust)",
            "heterogeneous_bins": if a.hetero_bins > 0 { json!({
                "n_bins": a.hetero_bins,
                "members_per_ensemble": a.hetero_members,
                "rule": "equal-width over [min acc, max acc] of InD accuracy",
            }) } else { Value::Null },
            "diversity_ratio_c0": "slope of member OOD Brier on member InD Brier",
        }),
        json!({ "pairs": results }),
    );
    out.json("trends.json", &record)?;
    out.csv(
        "trend_table.csv",
        &["ind", "ood", "metric", "class", "coefficient", "intercept", "std_error", "t_statistic", "p_value", "r2", "n", "note"],
        table_rows,
    )?;
    out.csv(
        "trend_points.csv",
        &["ind", "ood", "metric", "model_id", "class", "ind_value", "ood_value", "effective_robustness"],
        point_rows,
    )?;
    for (name, plot) in &plots {
        out.svg(name, plot)?;
    }
    Ok(finish(out))
}

fn score_kind(m: ScoreArg) -> MetricKind {
    match m {
        ScoreArg::ZeroOne => MetricKind::ZeroOne,
        ScoreArg::Nll => MetricKind::Nll,
        ScoreArg::Brier => MetricKind::Brier,
    }
}

/// A single model's prediction, or an ensemble's.
fn prediction_of(store: &PredictionStore, name: &str, dataset: &str) -> Result<ProbMatrix, CliError> {
    if store.model_ids().iter().any(|m| m == name) {
        return Ok(store.prediction(name, dataset)?.clone());
    }
    let def = resolve_ensemble(store, name)?;
    Ok(store.ensemble_prediction(&def, dataset)?)
}

fn strided_pair(p: &ImprovementPair, cap: Option<usize>) -> ImprovementPair {
    match cap {
        Some(c) => ImprovementPair { delta: strided(&p.delta, c), ..p.clone() },
        None => p.clone(),
    }
}

pub fn improve(a: &ImproveArgs) -> Result<RunSummary, CliError> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Validation("--alpha must lie in (0, 1)".into()));
    }
    if a.subsample == Some(0) {
        return Err(CliError::Validation("--subsample must be positive".into()));
    }
    let store = load(&a.manifest)?;
    if !store.model_ids().contains(&a.base) {
        return Err(CliError::Validation(format!("base model {:?} is not in the manifest", a.base)));
    }
    let datasets = check_datasets(&store, &a.datasets)?;
    let metric = score_kind(a.metric);
    let mut out = OutputDir::prepare(&a.output)?;
    let mut results = Vec::new();
    let mut rows = Vec::new();
    let mut plots = Vec::new();
    for ds in &datasets {
        let labels = store.labels(ds)?;
        let base = store.prediction(&a.base, ds)?;
        let delta = |alt: &str| -> Result<ImprovementPair, CliError> {
            Ok(per_point_improvement(&a.base, base, alt, &prediction_of(&store, alt, ds)?, labels, metric)?)
        };
        let (da, db) = (delta(&a.alt_a)?, delta(&a.alt_b)?);
        let dc = a.control.as_deref().map(delta).transpose()?;
        let base_scores = metric.evaluate(base, labels)?.values;
        let r = pearson_r(&da.delta, &db.delta);
        let mmd = match &dc {
            Some(c) => {
                let res = improvement_similarity_test(
                    &strided_pair(&da, a.subsample),
                    &strided_pair(&db, a.subsample),
                    &strided_pair(c, a.subsample),
                    a.alpha,
                )?;
                json!({ "test": res, "formatted": res.to_string() })
            }
            None => Value::Null,
        };
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        results.push(json!({
            "dataset": ds,
            "n": da.delta.len(),
            "mean_delta_a": mean(&da.delta),
            "mean_delta_b": mean(&db.delta),
            "mean_delta_control": dc.as_ref().map(|c| mean(&c.delta)),
            "pearson_r": r.as_ref().ok(),
            "pearson_note": r.as_ref().err().map(|e| e.to_string()),
            "mmd": mmd,
        }));
        for (i, (score, (x, y))) in base_scores.iter().zip(da.delta.iter().zip(&db.delta)).enumerate() {
            rows.push(vec![
                ds.clone(),
                i.to_string(),
                num(*score),
                num(*x),
                num(*y),
                dc.as_ref().map(|c| num(c.delta[i])).unwrap_or_default(),
            ]);
        }
        let mut plot = Plot::new(
            &format!("Per-point {} improvement over {} on {ds}", metric.name(), a.base),
            &format!("improvement of {}", a.alt_a),
            &format!("improvement of {}", a.alt_b),
        );
        let mut sorted = base_scores.clone();
        sorted.sort_by(f64::total_cmp);
        let cuts: Vec<f64> = (1..4).map(|q| sorted[q * (sorted.len() - 1) / 4]).collect();
        let mut buckets: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 4];
        for (score, (x, y)) in base_scores.iter().zip(da.delta.iter().zip(&db.delta)) {
            let b = cuts.iter().filter(|&&c| *score > c).count();
            buckets[b].push((*x, *y));
        }
        for (b, pts) in buckets.into_iter().enumerate() {
            if !pts.is_empty() {
                let label = format!("base {} quartile {}", metric.name(), b + 1);
                plot.points(strided(&pts, PLOT_POINTS / 4), PALETTE[b], Some(&label));
            }
        }
        plots.push((format!("improve_{ds}.svg"), plot));
    }
    let record = envelope(
        "improve",
        None,
        json!({
            "manifest": display_path(&a.manifest),
            "datasets": datasets,
            "base": a.base,
            "alt_a": a.alt_a,
            "alt_b": a.alt_b,
            "control": a.control,
            "metric": metric,
        }),
        json!({
            "improvement": "metric(base) - metric(alternative), positive = improvement",
            "likelihood_eps": LIKELIHOOD_EPS,
            "mmd_samples": "{(delta_a_i, delta_b_i)} versus {(delta_a_i, control_i)}",
            "mmd_statistic": "unbiased MMD_u^2 with a Gaussian kernel",
            "mmd_bandwidth": "median pairwise distance over a strided subsample of at most 1000 pooled points",
            "mmd_threshold": "(4K / sqrt(m)) * sqrt(ln(1 / alpha)), K = 1",
            "alpha": a.alpha,
            "subsample": a.subsample.map(|c| json!({ "cap": c, "rule": "evenly strided" })),
        }),
        json!({ "datasets": results }),
    );
    out.json("improve.json", &record)?;
    out.csv("improve_points.csv", &["dataset", "index", "base_score", "delta_a", "delta_b", "delta_control"], rows)?;
    for (name, plot) in &plots {
        out.svg(name, plot)?;
    }
    Ok(finish(out))
}

pub fn gp_demo(a: &GpDemoArgs) -> Result<RunSummary, CliError> {
    if a.bins == 0 {
        return Err(CliError::Validation("--bins must be positive".into()));
    }
    let mut out = OutputDir::prepare(&a.output)?;
    let exp = default_experiment(a.seed, a.bins)?;
    let shared = exp.conditional.shared_bins();
    let ood_exceeds = shared.iter().all(|(i, o)| o.mean_posterior_variance > i.mean_posterior_variance);
    let record = envelope(
        "gp-demo",
        Some(a.seed),
        json!({
            "train_points": gp::DEFAULT_TRAIN_POINTS,
            "train_domain": [gp::TRAIN_DOMAIN.0, gp::TRAIN_DOMAIN.1],
            "eval_domain": [gp::EVAL_DOMAIN.0, gp::EVAL_DOMAIN.1],
            "eval_points": gp::EVAL_POINTS,
        }),
        json!({
            "kernel": "RBF, lengthscale 1, signal variance 1",
            "noise_variance": "sin(x)^2 + 0.01",
            "ood_region": "x < 0",
            "likelihood_variance_bins": { "n": a.bins, "range": [gp::LIKELIHOOD_VARIANCE_RANGE.0, gp::LIKELIHOOD_VARIANCE_RANGE.1] },
            "jitter_schedule": [0.0, 1e-8, 1e-7, 1e-6, 1e-5],
        }),
        json!({
            "train_x": exp.train_x,
            "train_y": exp.train_y,
            "mean_posterior_variance_ind": exp.mean_posterior_variance(|x| x >= 0.0),
            "mean_posterior_variance_ood": exp.mean_posterior_variance(|x| x < 0.0),
            "conditional": exp.conditional,
            "shared_bins": shared.len(),
            "ood_exceeds_ind_in_every_shared_bin": ood_exceeds,
        }),
    );
    out.json("gp.json", &record)?;
    out.csv(
        "gp_predictions.csv",
        &["x", "split", "mean", "posterior_variance", "likelihood_variance"],
        exp.predictions.iter().map(|p| {
            vec![
                num(p.x),
                if p.x < 0.0 { "ood" } else { "ind" }.to_owned(),
                num(p.mean),
                num(p.posterior_variance),
                num(p.likelihood_variance),
            ]
        }),
    )?;
    let table = |split: &str, bins: &[gp::VarianceBin]| -> Vec<Vec<String>> {
        bins.iter()
            .map(|b| {
                vec![
                    split.to_owned(),
                    b.bin.to_string(),
                    num(b.lo),
                    num(b.hi),
                    b.count.to_string(),
                    num(b.mean_posterior_variance),
                ]
            })
            .collect()
    };
    let mut rows = table("ind", &exp.conditional.ind);
    rows.extend(table("ood", &exp.conditional.ood));
    out.csv("gp_conditional.csv", &["split", "bin", "lo", "hi", "count", "mean_posterior_variance"], rows)?;
    let mut plot = Plot::new("GP posterior variance by likelihood variance", "likelihood variance", "posterior variance");
    for (i, (name, bins)) in [("InD (x >= 0)", &exp.conditional.ind), ("OOD (x < 0)", &exp.conditional.ood)].into_iter().enumerate() {
        let pts: Vec<(f64, f64)> = bins.iter().map(|b| (0.5 * (b.lo + b.hi), b.mean_posterior_variance)).collect();
        plot.line(pts.clone(), PALETTE[i], false, Some(name));
        plot.points(pts, PALETTE[i], None);
    }
    out.svg("gp.svg", &plot)?;
    Ok(finish(out))
}

fn walk(dir: &Path, root: &Path, files: &mut Vec<String>) -> Result<(), CliError> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            walk(&path, root, files)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            files.push(rel.join("/"));
        }
    }
    Ok(())
}

pub const INDEX_FILE: &str = "index.json";

pub fn report(a: &ReportArgs) -> Result<RunSummary, CliError> {
    if !a.dir.is_dir() {
        return Err(CliError::Validation(format!("{} is not a directory", a.dir.display())));
    }
    let index = a.dir.join(INDEX_FILE);
    if index.exists() && !a.force {
        return Err(CliError::Validation(format!("{} already exists (use --force)", index.display())));
    }
    let mut files = Vec::new();
    walk(&a.dir, &a.dir, &mut files)?;
    let mut results = Vec::new();
    let mut other = Vec::new();
    for f in files.iter().filter(|f| f.as_str() != INDEX_FILE) {
        let parsed: Option<Value> = if f.ends_with(".json") {
            let path = a.dir.join(f);
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            serde_json::from_str::<Value>(&text).ok().filter(|v| v.get("tool") == Some(&json!("ensdiv")))
        } else {
            None
        };
        match parsed {
            Some(v) => results.push(json!({
                "path": f,
                "command": v.get("command").cloned().unwrap_or(Value::Null),
                "seed": v.get("seed").cloned().unwrap_or(Value::Null),
                "content": v,
            })),
            None => other.push(f.clone()),
        }
    }
    let record = json!({
        "tool": "ensdiv",
        "version": env!("CARGO_PKG_VERSION"),
        "command": "report",
        "n_results": results.len(),
        "results": results,
        "other_files": other,
    });
    ensdiv_core::io::save_record(&index, &record)?;
    Ok(RunSummary { dir: a.dir.clone(), files: vec![INDEX_FILE.to_owned()] })
}
