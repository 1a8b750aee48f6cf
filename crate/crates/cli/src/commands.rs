//! The five subcommands, each writing a self-contained output directory:
//! the merged config, the primary artifacts, and the audit files needed to
//! re-render explanations later.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use repmarket::data::{apply_normalizer, fit_normalizer, load_dataset, split_folds};
use repmarket::eval::{compute_metrics, cross_validate, score_claims, ClaimScore};
use repmarket::evolution::{train, LabeledPoint};
use repmarket::explain::{explain, render, RenderFormat};
use repmarket::market::{read_ledger, write_ledger, MarketResult};
use repmarket::{
    ClaimRecord, FeatureSchema, Label, MetricsReport, Prediction, TrainedModel,
};
use serde::Serialize;

use crate::config::RunConfig;

/// One row of `scores.json`.
#[derive(Debug, Serialize)]
struct ScoreRow<'a> {
    claim_id: &'a str,
    score: Option<f64>,
    prediction: Prediction,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correct: Option<bool>,
}

fn score_rows<'a>(
    scores: &'a [ClaimScore],
    labels: &BTreeMap<String, Label>,
) -> Vec<ScoreRow<'a>> {
    scores
        .iter()
        .map(|s| {
            let label = labels.get(&s.claim_id).copied();
            let correct = match (s.prediction, label) {
                (Prediction::Abstain, _) | (_, None) => None,
                (Prediction::Replicable, Some(l)) => Some(l == Label::Replicable),
                (Prediction::NotReplicable, Some(l)) => Some(l == Label::NotReplicable),
            };
            ScoreRow {
                claim_id: &s.claim_id,
                score: s.score,
                prediction: s.prediction,
                label,
                correct,
            }
        })
        .collect()
}

fn load_schema(config: &RunConfig) -> Result<FeatureSchema> {
    match &config.schema {
        Some(path) => FeatureSchema::load(path)
            .with_context(|| format!("loading schema {}", path.display())),
        None => Ok(FeatureSchema::generic(
            repmarket::data::DEFAULT_FEATURE_DIMENSION,
        )),
    }
}

fn load_claims(config: &RunConfig, schema: &FeatureSchema) -> Result<Vec<ClaimRecord>> {
    let path = config.require_data()?;
    load_dataset(path, schema).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    let file = fs::File::open(path)
        .with_context(|| format!("cannot open model file {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("cannot parse model file {}", path.display()))
}

fn prepare_out_dir(config: &RunConfig) -> Result<PathBuf> {
    let out = config.require_out()?.to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), config.to_flat_text())?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Claim ids become file names; anything outside [A-Za-z0-9._-] is mapped
/// to '_'.
fn safe_file_stem(claim_id: &str) -> String {
    claim_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn labeled_points(
    schema: &FeatureSchema,
    records: &[ClaimRecord],
) -> Result<(repmarket::NormalizationParams, Vec<LabeledPoint>)> {
    for r in records {
        if r.label.is_none() {
            bail!("claim `{}` is unlabeled; training requires ground truth", r.id);
        }
    }
    let normalizer = fit_normalizer(schema, records)?;
    let points = records
        .iter()
        .map(|r| {
            Ok(LabeledPoint {
                id: r.id.clone(),
                point: apply_normalizer(&normalizer, r)?,
                label: r.label.expect("checked above"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((normalizer, points))
}

fn label_map(records: &[ClaimRecord]) -> BTreeMap<String, Label> {
    records
        .iter()
        .filter_map(|r| r.label.map(|l| (r.id.clone(), l)))
        .collect()
}

fn format_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

fn print_report(name: &str, report: &MetricsReport) {
    println!(
        "{name:>10}  n={:<4} scored={:<4} coverage={:.4}  accuracy={}  macro_p={}  macro_r={}  macro_f1={}  rmse={:.4}",
        report.n_total,
        report.n_scored,
        report.coverage,
        format_opt(report.accuracy),
        format_opt(report.macro_precision),
        format_opt(report.macro_recall),
        format_opt(report.macro_f1),
        report.rmse,
    );
}

/// `train`: fit the normalizer, evolve a population, write the model and
/// the per-generation log.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let schema = load_schema(config)?;
    let records = load_claims(config, &schema)?;
    let out = prepare_out_dir(config)?;

    let (normalizer, points) = labeled_points(&schema, &records)?;
    let output = train(&points, normalizer, &config.evolution_config())?;

    write_json(&out.join("model.json"), &output.model)?;
    let mut log = String::new();
    for stats in &output.history {
        log.push_str(&serde_json::to_string(stats)?);
        log.push('\n');
    }
    fs::write(out.join("training_log.jsonl"), log)?;

    println!(
        "trained {} generations on {} claims; best rmse {:.4} at generation {}",
        config.generations,
        points.len(),
        output.model.best_rmse,
        output.model.best_generation,
    );
    println!("model written to {}", out.join("model.json").display());
    Ok(())
}

/// `score`: run one market per claim with a trained model; write scores,
/// per-claim ledgers, and explanations.
pub fn cmd_score(config: &RunConfig) -> Result<()> {
    let schema = load_schema(config)?;
    let model = load_model(config.require_model()?)?;
    if model.normalizer.dimension() != schema.dimension() {
        bail!(
            "model was trained on {} features but the schema has {}",
            model.normalizer.dimension(),
            schema.dimension()
        );
    }
    let records = load_claims(config, &schema)?;
    let out = prepare_out_dir(config)?;

    let scores = score_claims(&model, &records, config.seed)?;
    let labels = label_map(&records);
    write_json(&out.join("scores.json"), &score_rows(&scores, &labels))?;

    let ledger_dir = out.join("ledgers");
    let explain_dir = out.join("explanations");
    fs::create_dir_all(&ledger_dir)?;
    fs::create_dir_all(&explain_dir)?;
    for (record, score) in records.iter().zip(&scores) {
        let stem = safe_file_stem(&record.id);
        if score.market.scored {
            let mut buf = Vec::new();
            write_ledger(&mut buf, &score.market.ledger)?;
            fs::write(ledger_dir.join(format!("{stem}.jsonl")), buf)?;
        }
        let point = apply_normalizer(&model.normalizer, record)?;
        let report = explain(&score.market, &model.genomes, &record.id, &point, &schema)?;
        fs::write(
            explain_dir.join(format!("{stem}.explain.md")),
            render(&report, RenderFormat::Markdown)?,
        )?;
        fs::write(
            explain_dir.join(format!("{stem}.explain.json")),
            render(&report, RenderFormat::Json)?,
        )?;
    }

    if !labels.is_empty() {
        let report = compute_metrics(&scores, &labels)?;
        write_json(&out.join("metrics.json"), &report)?;
        print_report("scored", &report);
    }
    let scored = scores.iter().filter(|s| s.score.is_some()).count();
    println!("scored {scored} of {} claims; outputs in {}", scores.len(), out.display());
    Ok(())
}

/// `cv`: k-fold cross-validation with per-fold and pooled reports, plus
/// the fold plan, pooled score rows, models, logs and test ledgers.
pub fn cmd_cv(config: &RunConfig) -> Result<()> {
    let schema = load_schema(config)?;
    let records = load_claims(config, &schema)?;
    let out = prepare_out_dir(config)?;

    let plan = split_folds(&records, config.folds, config.seed)?;
    write_json(&out.join("fold_plan.json"), &plan.assignments)?;

    let outcome = cross_validate(&schema, &records, &plan, &config.evolution_config())?;

    let labels = label_map(&records);
    let mut pooled_scores: Vec<&ClaimScore> =
        outcome.folds.iter().flat_map(|f| f.scores.iter()).collect();
    pooled_scores.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
    let owned: Vec<ClaimScore> = pooled_scores.iter().map(|s| (*s).clone()).collect();
    write_json(&out.join("scores.json"), &score_rows(&owned, &labels))?;

    let ledger_dir = out.join("ledgers");
    fs::create_dir_all(&ledger_dir)?;
    for score in &owned {
        if score.market.scored {
            let mut buf = Vec::new();
            write_ledger(&mut buf, &score.market.ledger)?;
            fs::write(ledger_dir.join(format!("{}.jsonl", safe_file_stem(&score.claim_id))), buf)?;
        }
    }

    for fold in &outcome.folds {
        write_json(&out.join(format!("fold_{}.report.json", fold.fold)), &fold.report)?;
        write_json(&out.join(format!("fold_{}.model.json", fold.fold)), &fold.model)?;
        let mut log = String::new();
        for stats in &fold.history {
            log.push_str(&serde_json::to_string(stats)?);
            log.push('\n');
        }
        fs::write(out.join(format!("fold_{}.training_log.jsonl", fold.fold)), log)?;
        print_report(&format!("fold {}", fold.fold), &fold.report);
    }
    write_json(&out.join("pooled.report.json"), &outcome.pooled)?;
    print_report("pooled", &outcome.pooled);
    println!("reports written to {}", out.display());
    Ok(())
}

/// `explain`: re-render explanation documents from stored ledgers, a model
/// file, and the dataset the ledgers were produced from.
pub fn cmd_explain(config: &RunConfig, ledgers: &Path) -> Result<()> {
    let schema = load_schema(config)?;
    let model = load_model(config.require_model()?)?;
    let records = load_claims(config, &schema)?;
    let out = prepare_out_dir(config)?;

    let market_config = model.config.market_config();
    let mut rendered = 0;
    for record in &records {
        let stem = safe_file_stem(&record.id);
        let ledger_path = ledgers.join(format!("{stem}.jsonl"));
        let ledger = if ledger_path.exists() {
            let file = fs::File::open(&ledger_path)
                .with_context(|| format!("cannot open {}", ledger_path.display()))?;
            read_ledger(BufReader::new(file))?
        } else {
            Vec::new() // never traded: an abstention explanation
        };
        let result = MarketResult::replay(&ledger, &market_config)?;
        let point = apply_normalizer(&model.normalizer, record)?;
        let report = explain(&result, &model.genomes, &record.id, &point, &schema)?;
        fs::write(
            out.join(format!("{stem}.explain.md")),
            render(&report, RenderFormat::Markdown)?,
        )?;
        fs::write(
            out.join(format!("{stem}.explain.json")),
            render(&report, RenderFormat::Json)?,
        )?;
        rendered += 1;
    }
    println!("re-rendered {rendered} explanations into {}", out.display());
    Ok(())
}

/// `simulate`: run one market verbosely for debugging.
pub fn cmd_simulate(config: &RunConfig, claim_id: Option<&str>) -> Result<()> {
    let schema = load_schema(config)?;
    let model = load_model(config.require_model()?)?;
    let records = load_claims(config, &schema)?;

    let record = match claim_id {
        Some(id) => records
            .iter()
            .find(|r| r.id == id)
            .with_context(|| format!("claim `{id}` not found in the dataset"))?,
        None => records.first().context("dataset is empty")?,
    };

    let scores = score_claims(&model, std::slice::from_ref(record), config.seed)?;
    let score = &scores[0];
    println!("claim {}", record.id);
    println!(
        "market: {} rounds, {} trades, close price {:.6}",
        score.market.rounds_run,
        score.market.ledger.len(),
        score.market.close_price_yes,
    );
    let mut round = 0;
    for trade in &score.market.ledger {
        if trade.round != round {
            round = trade.round;
            println!("round {round}:");
        }
        println!(
            "  agent {} buys {:.4} {:?} for {:.4} ({:.4} -> {:.4})",
            trade.agent_id, trade.shares, trade.asset, trade.cost,
            trade.price_before, trade.price_after,
        );
    }

    let point = apply_normalizer(&model.normalizer, record)?;
    let report = explain(&score.market, &model.genomes, &record.id, &point, &schema)?;
    println!();
    println!("{}", render(&report, RenderFormat::Markdown)?);
    Ok(())
}
