//! Subcommand implementations and artifact plumbing.
//!
//! Every artifact written here embeds the tool version, the seed in play,
//! and SHA-256 hashes of its inputs; reruns with identical inputs produce
//! byte-identical corpus, encoder, model, report, and prediction files.
//! (The per-epoch stats CSV records wall-clock times and is the one
//! deliberately non-reproducible output.)

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use qppnet::encode::{sha256_hex, EncoderFile, FeatureEncoder};
use qppnet::eval::{evaluate_pairs, fit_baseline, CalibratedCostModel, EvalReport};
use qppnet::net::{evaluate_plan, predict_latency, Hyperparams, ModelFile, QppModel};
use qppnet::plan::corpus::{read_corpus, write_corpus, CORPUS_FORMAT};
use qppnet::plan::{
    parse_explain_json, synth_generate, Corpus, CorpusHeader, ExplainOptions, PlanSchema,
    PlanTree, SynthConfig,
};
use qppnet::train::{holdout_split, train, HoldoutSpec, TrainConfig};

use crate::config::{require_path, resolve_holdout, FileConfig};
use crate::{
    EvaluateArgs, FeaturizeArgs, InspectArgs, PredictArgs, SynthArgs, TrainArgs, TOOL_VERSION,
};

pub const REPORT_FORMAT: &str = "qppnet-report";
pub const REPORT_VERSION: u32 = 1;

/// Evaluation report artifact: the model's scores plus, when requested,
/// the calibrated-cost baseline scored on the identical plan set.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub model_sha256: String,
    pub corpus_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<HoldoutSpec>,
    pub model: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSection>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BaselineSection {
    pub cost_model: CalibratedCostModel,
    pub report: EvalReport,
}

pub fn cmd_synth(args: SynthArgs, file: &FileConfig) -> Result<()> {
    let out = require_path(args.corpus, file.corpus.clone(), "corpus")?;
    let mut cfg = SynthConfig::default();
    if let Some(v) = args.plans.or(file.plans) {
        cfg.plan_count = v;
    }
    if let Some(v) = args.templates.or(file.templates) {
        cfg.template_count = v;
    }
    if let Some(v) = args.noise_sigma.or(file.noise_sigma) {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.depth_min.or(file.depth_min) {
        cfg.depth_range.0 = v;
    }
    if let Some(v) = args.depth_max.or(file.depth_max) {
        cfg.depth_range.1 = v;
    }
    if let Some(v) = args.fanout_min.or(file.fanout_min) {
        cfg.fanout_range.0 = v;
    }
    if let Some(v) = args.fanout_max.or(file.fanout_max) {
        cfg.fanout_range.1 = v;
    }
    if let Some(v) = args.rows_min.or(file.rows_min) {
        cfg.rows_range.0 = v;
    }
    if let Some(v) = args.rows_max.or(file.rows_max) {
        cfg.rows_range.1 = v;
    }
    cfg.seed = args.seed.or(file.seed).unwrap_or(cfg.seed);

    let schema = PlanSchema::default();
    let mut corpus = synth_generate(&cfg, &schema)?;
    corpus.header.tool_version = Some(TOOL_VERSION.into());
    let bytes = corpus_bytes(&corpus)?;
    fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "wrote {} synthetic plans (seed {}) to {}",
        corpus.trees.len(),
        cfg.seed,
        out.display()
    );
    Ok(())
}

pub fn cmd_featurize(args: FeaturizeArgs, file: &FileConfig) -> Result<()> {
    let out_corpus = require_path(args.corpus, file.corpus.clone(), "corpus")?;
    let out_encoder = require_path(args.encoder, file.encoder.clone(), "encoder")?;
    let strict = args.strict || file.strict.unwrap_or(false);
    let schema = PlanSchema::default();

    let mut trees: Vec<PlanTree> = Vec::new();
    let mut hashes = Vec::with_capacity(args.inputs.len());
    let mut failures: Vec<String> = Vec::new();
    for input in &args.inputs {
        let bytes =
            fs::read(input).with_context(|| format!("reading {}", input.display()))?;
        hashes.push(sha256_hex(&bytes));
        let text = String::from_utf8(bytes)
            .map_err(|_| anyhow::anyhow!("{} is not valid UTF-8", input.display()))?;
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("explain");
        let options = ExplainOptions {
            strict,
            id_prefix: stem.to_string(),
        };
        match parse_explain_json(&text, &schema, &options) {
            Ok(mut parsed) => trees.append(&mut parsed),
            Err(e) => failures.push(format!("{}: {e}", input.display())),
        }
    }
    for f in &failures {
        eprintln!("parse failure: {f}");
    }
    if !failures.is_empty() && (strict || trees.is_empty()) {
        bail!(
            "{} of {} input files failed to parse",
            failures.len(),
            args.inputs.len()
        );
    }

    let mut header = CorpusHeader::new("explain");
    header.tool_version = Some(TOOL_VERSION.into());
    header.seed = args.seed.or(file.seed);
    header.input_sha256 = hashes;
    let corpus = Corpus::new(header, trees);
    let bytes = corpus_bytes(&corpus)?;
    fs::write(&out_corpus, &bytes)
        .with_context(|| format!("writing {}", out_corpus.display()))?;

    let encoder = FeatureEncoder::fit(&corpus.trees, &schema)?;
    let mut ef = EncoderFile::new(encoder);
    ef.tool_version = Some(TOOL_VERSION.into());
    ef.corpus_sha256 = Some(sha256_hex(&bytes));
    fs::write(&out_encoder, ef.to_json_string())
        .with_context(|| format!("writing {}", out_encoder.display()))?;

    eprintln!(
        "ingested {} plans from {} files -> {}, encoder -> {}",
        corpus.trees.len(),
        args.inputs.len(),
        out_corpus.display(),
        out_encoder.display()
    );
    if !corpus.header.labeled {
        eprintln!("note: corpus is not fully labeled; training will refuse it");
    }
    Ok(())
}

pub fn cmd_train(args: TrainArgs, file: &FileConfig) -> Result<()> {
    let corpus_path = require_path(args.corpus, file.corpus.clone(), "corpus")?;
    let encoder_path = require_path(args.encoder, file.encoder.clone(), "encoder")?;
    let model_path = require_path(args.model, file.model.clone(), "model")?;
    let stats_path = args
        .stats
        .or(file.stats.clone())
        .unwrap_or_else(|| model_path.with_extension("stats.csv"));
    let quiet = args.quiet || file.quiet.unwrap_or(false);

    let corpus_raw =
        fs::read(&corpus_path).with_context(|| format!("reading {}", corpus_path.display()))?;
    let corpus = read_corpus(corpus_raw.as_slice())?;
    let corpus_hash = sha256_hex(&corpus_raw);

    let mut tc = TrainConfig::default();
    tc.lr = args.lr.or(file.lr).unwrap_or(tc.lr);
    tc.momentum = args.momentum.or(file.momentum).unwrap_or(tc.momentum);
    tc.epochs = args.epochs.or(file.epochs).unwrap_or(tc.epochs);
    tc.batch_size = args.batch_size.or(file.batch_size).unwrap_or(tc.batch_size);
    tc.seed = args.seed.or(file.seed).unwrap_or(tc.seed);
    if let Some(spec) = resolve_holdout(
        (
            args.holdout_fraction,
            args.holdout_template_fraction,
            args.holdout_templates,
        ),
        file,
    )? {
        tc.holdout = spec;
    }
    if let Some(w) = args.weighting.map(Into::into).or(file.weighting) {
        tc.weighting = w;
    }

    let mut hyper = Hyperparams::default();
    hyper.hidden_layers = args
        .hidden_layers
        .or(file.hidden_layers)
        .unwrap_or(hyper.hidden_layers);
    hyper.hidden_width = args
        .hidden_width
        .or(file.hidden_width)
        .unwrap_or(hyper.hidden_width);
    hyper.data_width = args.data_width.or(file.data_width).unwrap_or(hyper.data_width);
    hyper.seed = tc.seed;

    let schema = PlanSchema::default();
    let encoder_file = if encoder_path.exists() {
        let text = fs::read_to_string(&encoder_path)
            .with_context(|| format!("reading {}", encoder_path.display()))?;
        EncoderFile::from_json_str(&text)?
    } else {
        // whitening statistics come from the training split only, so the
        // held-out plans stay untouched
        let (train_split, _) = holdout_split(&corpus.trees, &tc.holdout, tc.seed)?;
        let owned: Vec<PlanTree> = train_split.into_iter().cloned().collect();
        let mut ef = EncoderFile::new(FeatureEncoder::fit(&owned, &schema)?);
        ef.tool_version = Some(TOOL_VERSION.into());
        ef.corpus_sha256 = Some(corpus_hash.clone());
        fs::write(&encoder_path, ef.to_json_string())
            .with_context(|| format!("writing {}", encoder_path.display()))?;
        eprintln!("fitted encoder -> {}", encoder_path.display());
        ef
    };
    let encoder_hash = encoder_file.sha256_hex();

    let mut model = QppModel::init(encoder_file.encoder.clone(), hyper)?;
    let report = train(&mut model, &corpus, &tc, |stats| {
        if !quiet {
            match stats.test_mae {
                Some(mae) => eprintln!(
                    "epoch {:>4}  train rmse {:.6}  test mae {:.6}  ({:.2}s)",
                    stats.epoch, stats.train_rmse, mae, stats.wall_seconds
                ),
                None => eprintln!(
                    "epoch {:>4}  train rmse {:.6}  ({:.2}s)",
                    stats.epoch, stats.train_rmse, stats.wall_seconds
                ),
            }
        }
    })?;

    let mut mf = model.to_file(encoder_hash);
    mf.tool_version = Some(TOOL_VERSION.into());
    mf.corpus_sha256 = Some(corpus_hash.clone());
    fs::write(&model_path, mf.to_json_string())
        .with_context(|| format!("writing {}", model_path.display()))?;

    let mut stats_text = String::new();
    let _ = writeln!(stats_text, "# qppnet-stats v1");
    let _ = writeln!(stats_text, "# tool_version: {TOOL_VERSION}");
    let _ = writeln!(stats_text, "# seed: {}", tc.seed);
    let _ = writeln!(stats_text, "# corpus_sha256: {corpus_hash}");
    let _ = writeln!(stats_text, "epoch,train_rmse,test_mae,wall_seconds");
    for e in &report.epochs {
        let mae = e.test_mae.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            stats_text,
            "{},{},{},{:.3}",
            e.epoch, e.train_rmse, mae, e.wall_seconds
        );
    }
    fs::write(&stats_path, stats_text)
        .with_context(|| format!("writing {}", stats_path.display()))?;

    eprintln!(
        "trained on {} plans ({} held out, {} epochs); model -> {}",
        report.train_count,
        report.test_count,
        report.epochs.len(),
        model_path.display()
    );
    Ok(())
}

fn load_model(model_path: &Path, encoder_path: &Path) -> Result<(QppModel, ModelFile, String)> {
    let encoder_text = fs::read_to_string(encoder_path)
        .with_context(|| format!("reading {}", encoder_path.display()))?;
    let encoder_file = EncoderFile::from_json_str(&encoder_text)?;
    let model_text = fs::read_to_string(model_path)
        .with_context(|| format!("reading {}", model_path.display()))?;
    let model_file = ModelFile::from_json_str(&model_text)?;
    let model = QppModel::from_file(&model_file, &encoder_file)?;
    Ok((model, model_file, sha256_hex(model_text.as_bytes())))
}

pub fn cmd_predict(args: PredictArgs, file: &FileConfig) -> Result<()> {
    let model_path = require_path(args.model, file.model.clone(), "model")?;
    let encoder_path = require_path(args.encoder, file.encoder.clone(), "encoder")?;
    let corpus_path = require_path(args.corpus, file.corpus.clone(), "corpus")?;
    let out_path = require_path(args.out, file.out.clone(), "out")?;
    let per_node = args.per_node || file.per_node.unwrap_or(false);

    let (model, model_file, model_hash) = load_model(&model_path, &encoder_path)?;
    let corpus_raw =
        fs::read(&corpus_path).with_context(|| format!("reading {}", corpus_path.display()))?;
    let corpus = read_corpus(corpus_raw.as_slice())?;

    let mut text = String::new();
    let _ = writeln!(text, "# qppnet-predictions v1");
    let _ = writeln!(text, "# tool_version: {TOOL_VERSION}");
    let _ = writeln!(text, "# seed: {}", model_file.seed);
    let _ = writeln!(text, "# model_sha256: {model_hash}");
    let _ = writeln!(text, "# corpus_sha256: {}", sha256_hex(&corpus_raw));
    if per_node {
        let _ = writeln!(text, "plan_id,node_path,kind,predicted_s");
        for tree in &corpus.trees {
            let outputs = evaluate_plan(&model, &tree.root)
                .with_context(|| format!("predicting plan {:?}", tree.id))?;
            for ((path, node), out) in tree.root.preorder_paths().iter().zip(&outputs) {
                let _ = writeln!(text, "{},{},{},{}", tree.id, path, node.kind, out.latency);
            }
        }
    } else {
        let _ = writeln!(text, "plan_id,predicted_s");
        for tree in &corpus.trees {
            let latency = predict_latency(&model, &tree.root)
                .with_context(|| format!("predicting plan {:?}", tree.id))?;
            let _ = writeln!(text, "{},{}", tree.id, latency);
        }
    }
    fs::write(&out_path, text).with_context(|| format!("writing {}", out_path.display()))?;
    eprintln!(
        "wrote predictions for {} plans to {}",
        corpus.trees.len(),
        out_path.display()
    );
    Ok(())
}

pub fn cmd_evaluate(args: EvaluateArgs, file: &FileConfig) -> Result<()> {
    let model_path = require_path(args.model, file.model.clone(), "model")?;
    let encoder_path = require_path(args.encoder, file.encoder.clone(), "encoder")?;
    let corpus_path = require_path(args.corpus, file.corpus.clone(), "corpus")?;
    let report_path = require_path(args.report, file.report.clone(), "report")?;
    let cdf_path = args
        .cdf
        .or(file.cdf.clone())
        .unwrap_or_else(|| report_path.with_extension("cdf.csv"));
    let baseline = args.baseline || file.baseline.unwrap_or(false);
    let seed = args.seed.or(file.seed).unwrap_or(0);

    let (model, _, model_hash) = load_model(&model_path, &encoder_path)?;
    let corpus_raw =
        fs::read(&corpus_path).with_context(|| format!("reading {}", corpus_path.display()))?;
    let corpus = read_corpus(corpus_raw.as_slice())?;
    let corpus_hash = sha256_hex(&corpus_raw);

    let mut holdout = resolve_holdout(
        (
            args.holdout_fraction,
            args.holdout_template_fraction,
            args.holdout_templates,
        ),
        file,
    )?;
    if baseline && holdout.is_none() {
        // the baseline needs plans it was not fitted on
        holdout = Some(HoldoutSpec::default());
    }
    let (fit_set, eval_set): (Vec<&PlanTree>, Vec<&PlanTree>) = match &holdout {
        Some(spec) => holdout_split(&corpus.trees, spec, seed)?,
        None => (Vec::new(), corpus.trees.iter().collect()),
    };
    if eval_set.is_empty() {
        bail!("holdout split left no plans to evaluate");
    }

    // one shared plan set for model and baseline alike
    let mut usable: Vec<&PlanTree> = Vec::with_capacity(eval_set.len());
    let mut rejected = 0usize;
    for t in &eval_set {
        match t.root_latency() {
            Some(a) if a > 0.0 => usable.push(t),
            _ => rejected += 1,
        }
    }
    if rejected > 0 {
        eprintln!("rejected {rejected} plans without a positive observed latency");
    }
    if usable.is_empty() {
        bail!("no plans with positive observed latencies to evaluate ({rejected} rejected)");
    }

    let mut pairs = Vec::with_capacity(usable.len());
    let mut tags: Vec<&str> = Vec::with_capacity(usable.len());
    let mut any_template = false;
    for t in &usable {
        let actual = t.root_latency().expect("filtered above");
        let predicted = predict_latency(&model, &t.root)
            .with_context(|| format!("predicting plan {:?}", t.id))?;
        pairs.push((actual, predicted));
        let tag = t.template.as_deref().unwrap_or("");
        any_template |= !tag.is_empty();
        tags.push(tag);
    }
    let template_tags = any_template.then_some(tags.as_slice());
    let model_report = evaluate_pairs(&pairs, template_tags, rejected)?;

    let baseline_section = if baseline {
        let cost_model = fit_baseline(&fit_set)?;
        let bl_pairs: Vec<(f64, f64)> = usable
            .iter()
            .map(|t| {
                (
                    t.root_latency().expect("filtered above"),
                    cost_model.predict(&t.root),
                )
            })
            .collect();
        let report = evaluate_pairs(&bl_pairs, template_tags, rejected)?;
        Some(BaselineSection { cost_model, report })
    } else {
        None
    };

    let report_file = ReportFile {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        tool_version: TOOL_VERSION.into(),
        seed,
        model_sha256: model_hash.clone(),
        corpus_sha256: corpus_hash.clone(),
        holdout,
        model: model_report,
        baseline: baseline_section,
    };
    let mut report_json =
        serde_json::to_string_pretty(&report_file).context("serializing report")?;
    report_json.push('\n');
    fs::write(&report_path, report_json)
        .with_context(|| format!("writing {}", report_path.display()))?;

    let mut cdf_text = String::new();
    let _ = writeln!(cdf_text, "# qppnet-cdf v1");
    let _ = writeln!(cdf_text, "# tool_version: {TOOL_VERSION}");
    let _ = writeln!(cdf_text, "# seed: {seed}");
    let _ = writeln!(cdf_text, "# model_sha256: {model_hash}");
    let _ = writeln!(cdf_text, "# corpus_sha256: {corpus_hash}");
    let _ = writeln!(cdf_text, "fraction,r");
    for p in &report_file.model.cdf {
        let _ = writeln!(cdf_text, "{},{}", p.fraction, p.r);
    }
    fs::write(&cdf_path, cdf_text).with_context(|| format!("writing {}", cdf_path.display()))?;

    print_eval_summary("model", &report_file.model);
    if let Some(b) = &report_file.baseline {
        print_eval_summary("baseline", &b.report);
    }
    eprintln!("report -> {}", report_path.display());
    Ok(())
}

fn print_eval_summary(label: &str, report: &EvalReport) {
    println!(
        "{label}: {} plans, relative error {:.4}, MAE {:.6} s, R<=1.5 {:.1}%, R>=2 {:.1}%",
        report.count,
        report.relative_error,
        report.mean_absolute_error,
        100.0 * report.buckets.within_1_5,
        100.0 * report.buckets.beyond_2,
    );
}

pub fn cmd_inspect(args: InspectArgs) -> Result<()> {
    for path in &args.paths {
        inspect_one(path).with_context(|| format!("inspecting {}", path.display()))?;
    }
    Ok(())
}

fn inspect_one(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or("");
    println!("{}:", path.display());

    if first.starts_with("# qppnet-") {
        let rows = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .count()
            .saturating_sub(1);
        println!("  {} ({rows} data rows)", first.trim_start_matches("# "));
        for line in text.lines().take_while(|l| l.starts_with('#')).skip(1) {
            println!("  {}", line.trim_start_matches("# "));
        }
        return Ok(());
    }

    if let Ok(header) = serde_json::from_str::<CorpusHeader>(first) {
        if header.format == CORPUS_FORMAT {
            return inspect_corpus(&text);
        }
    }

    let value: serde_json::Value =
        serde_json::from_str(&text).context("unrecognized artifact")?;
    match value.get("format").and_then(serde_json::Value::as_str) {
        Some(qppnet::encode::ENCODER_FORMAT) => inspect_encoder(&text),
        Some(qppnet::net::MODEL_FORMAT) => inspect_model(&text),
        Some(REPORT_FORMAT) => inspect_report(&text),
        other => bail!("unrecognized artifact format {other:?}"),
    }
}

fn inspect_corpus(text: &str) -> Result<()> {
    let corpus = read_corpus(text.as_bytes())?;
    let h = &corpus.header;
    println!(
        "  corpus v{}: {} plans, labeled: {}, source: {}",
        h.version, h.count, h.labeled, h.source
    );
    if let Some(seed) = h.seed {
        println!("  seed: {seed}");
    }
    let mut nodes = 0usize;
    let mut kinds: std::collections::BTreeMap<&str, usize> = Default::default();
    let mut templates: std::collections::BTreeSet<&str> = Default::default();
    for t in &corpus.trees {
        for n in t.root.preorder() {
            nodes += 1;
            *kinds.entry(n.kind.as_str()).or_default() += 1;
        }
        if let Some(tpl) = &t.template {
            templates.insert(tpl);
        }
    }
    println!("  {} operators, {} templates", nodes, templates.len());
    for (kind, count) in kinds {
        println!("    {kind}: {count}");
    }
    Ok(())
}

fn inspect_encoder(text: &str) -> Result<()> {
    let file = EncoderFile::from_json_str(text)?;
    println!("  encoder v{}: {} kinds", file.version, file.encoder.kinds.len());
    for k in &file.encoder.kinds {
        println!("    {}: feature width {}, max arity {}", k.kind, k.width, k.max_arity);
    }
    if let Some(hash) = &file.corpus_sha256 {
        println!("  fit on corpus {hash}");
    }
    Ok(())
}

fn inspect_model(text: &str) -> Result<()> {
    let file = ModelFile::from_json_str(text)?;
    let params: usize = file
        .units
        .iter()
        .flat_map(|u| u.layers.iter())
        .map(|l| l.w.len() + l.b.len())
        .sum();
    println!(
        "  model v{}: {} units, {} hidden layers x {} wide, data width {}, {} parameters",
        file.version,
        file.units.len(),
        file.hyper.hidden_layers,
        file.hyper.hidden_width,
        file.hyper.data_width,
        params
    );
    println!("  seed: {}", file.seed);
    println!("  encoder: {}", file.encoder_sha256);
    for u in &file.units {
        println!("    {}: input width {}, max arity {}", u.kind, u.input_width, u.max_arity);
    }
    Ok(())
}

fn inspect_report(text: &str) -> Result<()> {
    let file: ReportFile = serde_json::from_str(text).context("bad report file")?;
    println!(
        "  report v{}: {} plans ({} rejected)",
        file.version, file.model.count, file.model.rejected
    );
    print_eval_summary("  model", &file.model);
    if let Some(b) = &file.baseline {
        print_eval_summary("  baseline", &b.report);
    }
    Ok(())
}

fn corpus_bytes(corpus: &Corpus) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_corpus(&mut buf, corpus)?;
    Ok(buf)
}
