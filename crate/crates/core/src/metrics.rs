//! Scoring attributions against the injected perturbations.
//!
//! The ideal gradient of an example is `perturbed - ideal`. Three metrics
//! compare an attribution `A` with it:
//!
//! * reconstruction MSE, `mean(((perturbed - A) - ideal)²)`;
//! * norm Pearson, the correlation of the per-time-step Euclidean norms
//!   (blind to sign, so it also applies to Grad×Input and IntGrad);
//! * signed Pearson, the per-dimension correlation averaged over the two
//!   dimensions.
//!
//! Single-model methods are scored per (example, model), averaged over
//! models, then over examples. Ensemble methods produce one attribution per
//! example. Examples are aggregated in ascending id order, so the input
//! order of examples never changes a report.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{self, Attribution, GradConfig, Method, MethodSpec};
use crate::error::{Error, Result};
use crate::netcore::ModelParams;
use crate::rng;
use crate::signal::{Signal, SignalMean, DIMS};
use crate::signalgen::Example;

pub fn ideal_gradient(example: &Example) -> Result<Signal> {
    example.perturbed.sub(&example.ideal)
}

/// MSE between the reconstruction `perturbed - attr` and the ideal signal.
///
/// Evaluated as `mean(((perturbed - ideal) - attr)²)`, the same quantity
/// rearranged so that the ideal gradient itself scores exactly zero.
pub fn reconstruction_mse(attr: &Signal, example: &Example) -> Result<f64> {
    attr.check_same_shape(&example.perturbed, "reconstruction")?;
    ideal_gradient(example)?.mse(attr)
}

/// Per-time-step Euclidean norm across the dimensions.
pub fn norm_sequence(m: &Signal) -> Vec<f64> {
    (0..m.len())
        .map(|t| (0..DIMS).map(|d| m[(d, t)] * m[(d, t)]).sum::<f64>().sqrt())
        .collect()
}

/// Sample Pearson correlation. Zero variance in either input is an
/// [`Error::UndefinedCorrelation`].
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::shape("pearson inputs", format!("equal lengths >= 2 ({})", a.len()), b.len()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    if !r.is_finite() {
        return Err(Error::UndefinedCorrelation);
    }
    Ok(r.clamp(-1.0, 1.0))
}

pub fn metric_norm_pearson(attr: &Signal, example: &Example) -> Result<f64> {
    let ideal = ideal_gradient(example)?;
    attr.check_same_shape(&ideal, "norm pearson")?;
    pearson(&norm_sequence(attr), &norm_sequence(&ideal))
}

/// Mean over dimensions of the per-dimension Pearson; degenerate
/// dimensions are left out, and if both are degenerate the correlation is
/// undefined.
pub fn metric_signed_pearson(attr: &Signal, example: &Example) -> Result<f64> {
    let ideal = ideal_gradient(example)?;
    attr.check_same_shape(&ideal, "signed pearson")?;
    let mut sum = 0.0;
    let mut used = 0;
    for d in 0..DIMS {
        match pearson(attr.row(d), ideal.row(d)) {
            Ok(r) => {
                sum += r;
                used += 1;
            }
            Err(Error::UndefinedCorrelation) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok(sum / used as f64)
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedCorrelation) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub id: usize,
    pub mse: Option<f64>,
    pub norm_pearson: Option<f64>,
    pub signed_pearson: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub n_models: usize,
    /// `None` where the metric does not apply to the method.
    pub reconstruction_mse: Option<f64>,
    pub norm_pearson: Option<f64>,
    pub signed_pearson: Option<f64>,
    pub n_examples: usize,
    pub n_skipped_norm: usize,
    pub n_skipped_signed: usize,
    pub per_example: Vec<ExampleMetrics>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores each example's attributions. `per_example` maps an example to
/// one attribution per model; metrics are averaged over those first.
fn aggregate(method: &str, n_models: usize, keeps_sign: bool, rows: &[(&Example, Vec<&Signal>)]) -> Result<MetricsReport> {
    let mut ordered: Vec<&(&Example, Vec<&Signal>)> = rows.iter().collect();
    ordered.sort_by_key(|(e, _)| e.id);
    let mut per_example = Vec::with_capacity(ordered.len());
    for (ex, attrs) in ordered {
        let mut mses = Vec::new();
        let mut norms = Vec::new();
        let mut signed = Vec::new();
        for a in attrs {
            if keeps_sign {
                mses.push(reconstruction_mse(a, ex)?);
                signed.extend(defined(metric_signed_pearson(a, ex))?);
            }
            norms.extend(defined(metric_norm_pearson(a, ex))?);
        }
        per_example.push(ExampleMetrics {
            id: ex.id,
            mse: mean_of(mses.into_iter()),
            norm_pearson: mean_of(norms.into_iter()),
            signed_pearson: mean_of(signed.into_iter()),
        });
    }
    let n = per_example.len();
    Ok(MetricsReport {
        method: method.to_string(),
        n_models,
        reconstruction_mse: mean_of(per_example.iter().filter_map(|e| e.mse)),
        norm_pearson: mean_of(per_example.iter().filter_map(|e| e.norm_pearson)),
        signed_pearson: mean_of(per_example.iter().filter_map(|e| e.signed_pearson)),
        n_examples: n,
        n_skipped_norm: per_example.iter().filter(|e| e.norm_pearson.is_none()).count(),
        n_skipped_signed: if keeps_sign {
            per_example.iter().filter(|e| e.signed_pearson.is_none()).count()
        } else {
            0
        },
        per_example,
    })
}

/// Scores precomputed attributions, one per example.
pub fn score_attributions(spec: MethodSpec, n_models: usize, pairs: &[(&Example, &Signal)]) -> Result<MetricsReport> {
    let rows: Vec<(&Example, Vec<&Signal>)> = pairs.iter().map(|(e, a)| (*e, vec![*a])).collect();
    aggregate(&spec.tag(), n_models, spec.base.keeps_sign(), &rows)
}

/// Seed for the attribution of one example.
pub fn example_seed(seed: u64, example_id: usize) -> u64 {
    rng::derive_seed(seed, example_id as u64)
}

/// Single-model attributions of every example under every model.
#[derive(Clone, Debug)]
pub struct AttributionTable {
    pub method: Method,
    pub n_models: usize,
    /// `per_example[e][m]`, examples in input order.
    pub per_example: Vec<Vec<Attribution>>,
}

impl AttributionTable {
    /// Runs `method` for each (example, model) pair. Examples are processed
    /// in parallel on the current rayon pool; the result does not depend on
    /// scheduling.
    pub fn compute(examples: &[&Example], models: &[ModelParams], method: Method, config: &GradConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if models.is_empty() {
            return Err(Error::InvalidConfig("no models".into()));
        }
        let per_example = examples
            .par_iter()
            .map(|ex| {
                let s = example_seed(seed, ex.id);
                models
                    .iter()
                    .enumerate()
                    .map(|(i, m)| attribution::attribute(m, i, &ex.perturbed, method, config, s).map_err(|e| e.for_model(i)))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.for_sample(ex.id))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AttributionTable {
            method,
            n_models: models.len(),
            per_example,
        })
    }

    /// Ensemble attribution of example `e` from the first `n` models.
    pub fn ensemble(&self, e: usize, n: usize) -> Result<Attribution> {
        attribution::average(&self.per_example[e][..n], MethodSpec::ensemble(self.method))
    }

    pub fn report_single(&self, examples: &[&Example]) -> Result<MetricsReport> {
        let rows: Vec<(&Example, Vec<&Signal>)> = examples
            .iter()
            .zip(&self.per_example)
            .map(|(e, attrs)| (*e, attrs.iter().map(|a| &a.values).collect()))
            .collect();
        let spec = MethodSpec::single(self.method);
        aggregate(&spec.tag(), self.n_models, self.method.keeps_sign(), &rows)
    }

    pub fn report_ensemble(&self, examples: &[&Example], n: usize) -> Result<MetricsReport> {
        let n = n.clamp(1, self.n_models);
        let means = (0..examples.len()).map(|e| self.ensemble(e, n).map(|a| a.values)).collect::<Result<Vec<_>>>()?;
        let rows: Vec<(&Example, Vec<&Signal>)> = examples.iter().zip(&means).map(|(e, a)| (*e, vec![a])).collect();
        let spec = MethodSpec::ensemble(self.method);
        aggregate(&spec.tag(), n, self.method.keeps_sign(), &rows)
    }

    /// Reconstruction MSE and norm Pearson of ensembles of the first `n`
    /// models, `n = 1..=max_n`. Prefix sums are accumulated in model order
    /// so each point equals [`AttributionTable::report_ensemble`] exactly.
    pub fn evolution(&self, examples: &[&Example], max_n: usize) -> Result<Vec<CurvePoint>> {
        let max_n = max_n.clamp(1, self.n_models);
        (1..=max_n)
            .map(|n| {
                let r = self.report_ensemble(examples, n)?;
                Ok(CurvePoint {
                    n,
                    mse: r.reconstruction_mse,
                    norm_pearson: r.norm_pearson,
                })
            })
            .collect()
    }
}

/// Scores one method over `examples` (typically the test split).
pub fn evaluate_method(
    examples: &[&Example],
    models: &[ModelParams],
    spec: MethodSpec,
    config: &GradConfig,
    seed: u64,
) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let table = AttributionTable::compute(examples, models, spec.base, config, seed)?;
    if spec.ensemble {
        table.report_ensemble(examples, models.len())
    } else {
        table.report_single(examples)
    }
}

/// Single-model and ensemble reports for each method, sharing one table
/// per method.
pub fn evaluate_suite(
    examples: &[&Example],
    models: &[ModelParams],
    methods: &[Method],
    config: &GradConfig,
    seed: u64,
) -> Result<Vec<(MetricsReport, MetricsReport)>> {
    if examples.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    methods
        .iter()
        .map(|&m| {
            let table = AttributionTable::compute(examples, models, m, config, seed)?;
            Ok((table.report_single(examples)?, table.report_ensemble(examples, models.len())?))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub mse: Option<f64>,
    pub norm_pearson: Option<f64>,
}

/// AGRA metrics as a function of the number of averaged models.
pub fn evolution_curve(examples: &[&Example], models: &[ModelParams], config: &GradConfig, max_n: usize) -> Result<Vec<CurvePoint>> {
    if examples.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let table = AttributionTable::compute(examples, &models[..max_n.clamp(1, models.len())], Method::Grad, config, 0)?;
    table.evolution(examples, max_n)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `method,n_models,mse,norm_pearson,signed_pearson,n_skipped`; metrics that
/// do not apply are written as `NA`.
pub fn write_reports_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "n_models", "mse", "norm_pearson", "signed_pearson", "n_skipped"])?;
    for r in reports {
        w.write_record([
            r.method.clone(),
            r.n_models.to_string(),
            cell(r.reconstruction_mse),
            cell(r.norm_pearson),
            cell(r.signed_pearson),
            r.n_skipped_norm.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "mse", "norm_pearson"])?;
    for p in points {
        w.write_record([p.n.to_string(), cell(p.mse), cell(p.norm_pearson)])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_reports_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_reports_csv(reports, f)
}

pub fn save_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_curve_csv(points, f)
}

/// Groups reports by base method, single-model row first.
pub fn by_method(reports: &[MetricsReport]) -> BTreeMap<String, Vec<&MetricsReport>> {
    let mut map: BTreeMap<String, Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        let base = r.method.trim_end_matches("+agra").replace("agra", "grad");
        map.entry(base).or_default().push(r);
    }
    map
}

/// Mean attribution of a list of signals (helper for stub methods).
pub fn mean_signal(signals: &[Signal]) -> Result<Signal> {
    let first = signals.first().ok_or_else(|| Error::InvalidConfig("no signals".into()))?;
    let mut m = SignalMean::new(first.len());
    for s in signals {
        m.push(s)?;
    }
    Ok(m.finish())
}
