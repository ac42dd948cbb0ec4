use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Serialize;

use agra::attribution::{self, AttributionBatch, BatchEntry, Method, MethodSpec};
use agra::metrics::{self, MetricsReport};
use agra::signalgen::{self, Corpus, Example, Split};
use agra::trainer::{self, Ensemble};
use agra::Error;

use crate::config::Resolved;
use crate::manifest::{self, Recorder};
use crate::{CurveArgs, EvalArgs, ExplainArgs, GenArgs, NumericalError, TrainArgs, UsageError};

const CORPUS_FILE: &str = "corpus.json";

fn corpus_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CORPUS_FILE)
    } else {
        p.to_path_buf()
    }
}

fn is_json(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "json")
}

fn create_parent(p: &Path) -> anyhow::Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn load_corpus(p: &Path, rec: &mut Recorder) -> anyhow::Result<(Corpus, String)> {
    let path = corpus_path(p);
    let (corpus, checksum) = signalgen::load_corpus(&path)?;
    rec.input("corpus", &path, &checksum)?;
    Ok((corpus, checksum))
}

/// Loads an ensemble and checks that it was trained on `corpus_checksum`.
fn load_models(dir: &Path, corpus_checksum: &str, limit: Option<usize>, rec: &mut Recorder) -> anyhow::Result<Ensemble> {
    let ens = trainer::load_ensemble(dir, limit)?;
    if ens.manifest.corpus_checksum != corpus_checksum {
        return Err(anyhow::Error::new(Error::Checksum {
            expected: ens.manifest.corpus_checksum.clone(),
            actual: corpus_checksum.to_string(),
        })
        .context(format!("models in {} were trained on a different corpus", dir.display())));
    }
    rec.input("ensemble", &dir.join(trainer::ENSEMBLE_FILE), &ens.manifest_checksum)?;
    Ok(ens)
}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    s.parse::<Split>().map_err(|_| UsageError(format!("unknown split `{s}` (train or test)")).into())
}

fn parse_method(s: &str) -> anyhow::Result<Method> {
    s.parse::<Method>()
        .map_err(|_| UsageError(format!("unknown method `{s}` (grad, gradxinput, smoothgrad or intgrad)")).into())
}

fn split_examples(corpus: &Corpus, split: Split) -> anyhow::Result<Vec<&Example>> {
    let v: Vec<&Example> = corpus.split(split).collect();
    if v.is_empty() {
        bail!(Error::EmptySplit(split.name()));
    }
    Ok(v)
}

pub fn gen(a: &GenArgs, cfg: Resolved) -> anyhow::Result<()> {
    let mut c = cfg.corpus;
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(n) = a.n {
        c.n_examples = n;
    }
    if let Some(f) = a.train_frac {
        c.train_fraction = f;
    }
    c.validate()?;
    let mut rec = Recorder::start(&c)?;
    let corpus = signalgen::build_corpus(&c)?;
    let path = if is_json(&a.out) { a.out.clone() } else { a.out.join(CORPUS_FILE) };
    create_parent(&path)?;
    let checksum = signalgen::save_corpus(&corpus, &path)?;
    rec.output("corpus", &path, &checksum);
    rec.finish(&manifest::path_for(&path))?;

    let scores: Vec<f64> = corpus.examples.iter().map(|e| e.score).collect();
    let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| (l.min(s), h.max(s)));
    let mut hist = [0usize; 10];
    for s in &scores {
        hist[(*s as usize).min(9)] += 1;
    }
    println!("wrote {} ({} examples: {} train, {} test)", path.display(), corpus.examples.len(), corpus.train().len(), corpus.test().len());
    println!("scores in [{lo:.3}, {hi:.3}]; per unit bin: {hist:?}");
    println!("checksum {checksum}");
    Ok(())
}

pub fn train(a: &TrainArgs, cfg: Resolved) -> anyhow::Result<()> {
    let mut t = cfg.train;
    if let Some(n) = a.models {
        t.n_models = n;
    }
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(lr) = a.lr {
        t.learning_rate = lr;
    }
    if let Some(b) = a.batch {
        t.batch_size = b;
    }
    if let Some(s) = a.seed {
        t.base_seed = s;
    }
    t.validate()?;
    let mut rec = Recorder::start(&t)?;
    let (corpus, corpus_checksum) = load_corpus(&a.corpus, &mut rec)?;
    eprintln!("training {} models for {} epochs on {} examples", t.n_models, t.epochs, corpus.train().len());
    let trained = (0..t.n_models)
        .into_par_iter()
        .map(|i| {
            let r = trainer::train_model(&corpus, &t, i).map_err(|e| e_for_model(e, i))?;
            eprintln!("model {i}: train mse {:.4} ({:.1}s)", r.1.final_train_mse, r.1.wall_time_secs);
            Ok(r)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let checksum = trainer::save_ensemble(&a.out, &t, &corpus_checksum, &trained)?;
    rec.output("ensemble", &a.out.join(trainer::ENSEMBLE_FILE), &checksum);
    rec.finish(&manifest::path_for(&a.out))?;

    let test: Vec<f64> = trained.iter().filter_map(|(_, h)| h.final_test_mse).collect();
    for (m, h) in &trained {
        let idx = m.provenance.model_index.unwrap_or(0);
        match h.final_test_mse {
            Some(v) => println!("model {idx:3}  test mse {v:.4}"),
            None => println!("model {idx:3}  test mse n/a (empty test split)"),
        }
    }
    if !test.is_empty() {
        let (mean, std) = trainer::mean_std(&test);
        println!("ensemble test mse {mean:.4} ± {std:.4} over {} models", test.len());
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn e_for_model(e: Error, i: usize) -> anyhow::Error {
    anyhow::Error::new(e).context(format!("training model {i}"))
}

pub fn explain(a: &ExplainArgs, cfg: Resolved) -> anyhow::Result<()> {
    let method = parse_method(&a.method)?;
    let split = parse_split(&a.split)?;
    let seed = a.seed.or(cfg.explain_seed).unwrap_or(0);
    let gc = cfg.attribution;
    gc.validate()?;
    #[derive(Serialize)]
    struct Snapshot<'a> {
        method: MethodSpec,
        split: Split,
        seed: u64,
        attribution: &'a attribution::GradConfig,
    }
    let spec = if a.agra { MethodSpec::ensemble(method) } else { MethodSpec::single(method) };
    let mut rec = Recorder::start(&Snapshot {
        method: spec,
        split,
        seed,
        attribution: &gc,
    })?;
    let (corpus, corpus_checksum) = load_corpus(&a.corpus, &mut rec)?;
    let ens = load_models(&a.models, &corpus_checksum, if a.agra { None } else { Some(1) }, &mut rec)?;
    let examples = split_examples(&corpus, split)?;
    eprintln!("explaining {} {} examples with {} ({} models)", examples.len(), split.name(), spec, ens.models.len());

    let entries = examples
        .par_iter()
        .map(|ex| {
            let s = metrics::example_seed(seed, ex.id);
            let attr = if a.agra {
                attribution::agra_combined(&ens.models, &ex.perturbed, method, &gc, s)
            } else {
                attribution::attribute(&ens.models[0], 0, &ex.perturbed, method, &gc, s)
            };
            attr.map(|at| BatchEntry::from_attribution(ex.id, at))
                .with_context(|| format!("example {}", ex.id))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let batch = AttributionBatch {
        method: spec.tag(),
        config: gc,
        seed,
        split,
        n_models: ens.models.len(),
        corpus_checksum,
        models_checksum: ens.manifest_checksum.clone(),
        examples: entries,
    };
    create_parent(&a.out)?;
    let checksum = attribution::save_batch(&batch, &a.out)?;
    rec.output("attributions", &a.out, &checksum);
    rec.finish(&manifest::path_for(&a.out))?;

    let failed = batch.n_unconverged();
    println!("wrote {} ({} attributions, {} not converged)", a.out.display(), batch.examples.len(), failed);
    if failed == batch.examples.len() && method != Method::IntGrad {
        bail!(NumericalError(format!("no attribution converged within {} iterations", batch.config.max_iters)));
    }
    Ok(())
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

fn print_reports(reports: &[MetricsReport]) {
    println!("{:<18} {:>4} {:>10} {:>12} {:>14} {:>8}", "method", "n", "mse", "norm_pearson", "signed_pearson", "skipped");
    for r in reports {
        println!(
            "{:<18} {:>4} {:>10} {:>12} {:>14} {:>8}",
            r.method,
            r.n_models,
            fmt_cell(r.reconstruction_mse),
            fmt_cell(r.norm_pearson),
            fmt_cell(r.signed_pearson),
            r.n_skipped_norm
        );
    }
}

fn write_csv(rec: &mut Recorder, path: &Path, role: &str, reports: &[&MetricsReport]) -> anyhow::Result<()> {
    let owned: Vec<MetricsReport> = reports.iter().map(|r| (*r).clone()).collect();
    metrics::save_reports_csv(&owned, path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    rec.output(role, path, &agra::envelope::sha256_hex(&bytes));
    Ok(())
}

pub const REPORT_KIND: &str = "report";

pub fn eval(a: &EvalArgs, cfg: Resolved) -> anyhow::Result<()> {
    let seed = cfg.eval_seed.unwrap_or(0);
    let gc = cfg.attribution;
    gc.validate()?;
    let mut rec = Recorder::start(&(&gc, seed))?;
    let (corpus, corpus_checksum) = load_corpus(&a.corpus, &mut rec)?;

    let reports: Vec<MetricsReport> = if let Some(path) = &a.attributions {
        let (batch, checksum) = attribution::load_batch(path)?;
        rec.input("attributions", path, &checksum)?;
        if batch.corpus_checksum != corpus_checksum {
            return Err(anyhow::Error::new(Error::Checksum {
                expected: batch.corpus_checksum.clone(),
                actual: corpus_checksum,
            })
            .context(format!("{} was computed on a different corpus", path.display())));
        }
        let by_id: std::collections::HashMap<usize, &Example> = corpus.examples.iter().map(|e| (e.id, e)).collect();
        let pairs = batch
            .examples
            .iter()
            .map(|entry| {
                let ex = by_id
                    .get(&entry.id)
                    .ok_or_else(|| Error::InvalidConfig(format!("example {} is not in the corpus", entry.id)))?;
                Ok((*ex, &entry.values))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        if pairs.is_empty() {
            bail!(Error::EmptySplit("attributions"));
        }
        vec![metrics::score_attributions(batch.spec()?, batch.n_models, &pairs)?]
    } else {
        let dir = a.models.as_ref().expect("clap requires --models without --attributions");
        let ens = load_models(dir, &corpus_checksum, None, &mut rec)?;
        let test = split_examples(&corpus, Split::Test)?;
        let method = a.method.as_deref().unwrap_or("all");
        eprintln!("evaluating {method} on {} test examples with {} models", test.len(), ens.models.len());
        if method == "all" {
            let pairs = metrics::evaluate_suite(&test, &ens.models, &Method::ALL, &gc, seed)?;
            let (single, averaged): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            single.into_iter().chain(averaged).collect()
        } else {
            let base = parse_method(method)?;
            let spec = if a.agra { MethodSpec::ensemble(base) } else { MethodSpec::single(base) };
            vec![metrics::evaluate_method(&test, &ens.models, spec, &gc, seed)?]
        }
    };

    std::fs::create_dir_all(&a.report).map_err(|e| Error::io(&a.report, e))?;
    let all: Vec<&MetricsReport> = reports.iter().collect();
    write_csv(&mut rec, &a.report.join("report.csv"), "report", &all)?;
    let find = |tag: &str| reports.iter().find(|r| r.method == tag);
    let methods: Vec<&MetricsReport> = ["grad", "gradxinput", "smoothgrad", "intgrad", "agra"].iter().filter_map(|t| find(t)).collect();
    if methods.len() == 5 {
        write_csv(&mut rec, &a.report.join("methods.csv"), "methods", &methods)?;
        let combined: Vec<&MetricsReport> = ["gradxinput", "gradxinput+agra", "smoothgrad", "smoothgrad+agra", "intgrad", "intgrad+agra"]
            .iter()
            .filter_map(|t| find(t))
            .collect();
        write_csv(&mut rec, &a.report.join("combined.csv"), "combined", &combined)?;
    }
    let json = a.report.join("report.json");
    let checksum = agra::envelope::write(&json, REPORT_KIND, 1, &reports)?;
    rec.output("report", &json, &checksum);
    rec.finish(&manifest::path_for(&a.report))?;
    print_reports(&reports);
    Ok(())
}

pub fn curve(a: &CurveArgs, cfg: Resolved) -> anyhow::Result<()> {
    let gc = cfg.attribution;
    gc.validate()?;
    if a.max_n == Some(0) {
        bail!(UsageError("--max-n must be at least 1".into()));
    }
    let mut rec = Recorder::start(&(&gc, a.max_n))?;
    let (corpus, corpus_checksum) = load_corpus(&a.corpus, &mut rec)?;
    let ens = load_models(&a.models, &corpus_checksum, a.max_n, &mut rec)?;
    let max_n = a.max_n.unwrap_or(ens.models.len());
    if max_n > ens.models.len() {
        bail!(UsageError(format!("--max-n {max_n} exceeds the {} available models", ens.models.len())));
    }
    let test = split_examples(&corpus, Split::Test)?;
    eprintln!("evolution curve over {max_n} models on {} test examples", test.len());
    let points = metrics::evolution_curve(&test, &ens.models, &gc, max_n)?;

    create_parent(&a.out)?;
    metrics::save_curve_csv(&points, &a.out)?;
    let bytes = std::fs::read(&a.out).map_err(|e| Error::io(&a.out, e))?;
    rec.output("curve", &a.out, &agra::envelope::sha256_hex(&bytes));
    let svg = a.out.with_extension("svg");
    let plot = crate::plot::evolution_svg(&points);
    std::fs::write(&svg, &plot).map_err(|e| Error::io(&svg, e))?;
    rec.output("plot", &svg, &agra::envelope::sha256_hex(plot.as_bytes()));
    rec.finish(&manifest::path_for(&a.out))?;

    println!("{:>4} {:>10} {:>12}", "n", "mse", "norm_pearson");
    for p in &points {
        println!("{:>4} {:>10} {:>12}", p.n, fmt_cell(p.mse), fmt_cell(p.norm_pearson));
    }
    println!("wrote {} and {}", a.out.display(), svg.display());
    Ok(())
}
