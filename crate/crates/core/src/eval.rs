//! Scoring claims with a trained model and the evaluation protocol:
//! coverage, accuracy, macro precision/recall/F1, RMSE, and k-fold
//! cross-validation.
//!
//! Classification metrics are computed on the scored subset only; coverage
//! and RMSE span the full set, with abstentions contributing a fixed 0.5
//! residual so RMSE stays comparable across coverage levels.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    apply_normalizer, fit_normalizer, ClaimRecord, DataError, FeatureSchema, FoldPlan, Label,
};
use crate::evolution::{train, EvolutionConfig, EvolutionError, GenerationStats, LabeledPoint, TrainedModel};
use crate::market::{run_market, MarketError, MarketResult};
use crate::seed::{hash_str, stream_rng, STREAM_SCORE_MARKET};

/// A traded market closing within this band of 0.5 carries no direction
/// and is reported as an abstention.
pub const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error("scored claim `{0}` has no label")]
    MissingLabel(String),
    #[error("fold {fold} is empty")]
    EmptyFold { fold: usize },
    #[error("fold plan does not cover claim `{0}`")]
    UncoveredClaim(String),
}

/// Direction read off the close price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prediction {
    Replicable,
    NotReplicable,
    Abstain,
}

/// Score for one claim: the close price of the will-replicate asset, or an
/// abstention when the market saw no trades (or closed dead even).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimScore {
    pub claim_id: String,
    /// Close price in (0,1); `None` when the claim is unscored.
    pub score: Option<f64>,
    pub prediction: Prediction,
    /// Full market outcome, kept inline so ledgers and explanations can be
    /// written without re-running the market.
    pub market: MarketResult,
}

impl ClaimScore {
    fn from_market(claim_id: String, market: MarketResult) -> Self {
        let close = market.close_price_yes;
        let (score, prediction) = if !market.scored || (close - 0.5).abs() <= TIE_EPSILON {
            (None, Prediction::Abstain)
        } else if close > 0.5 {
            (Some(close), Prediction::Replicable)
        } else {
            (Some(close), Prediction::NotReplicable)
        };
        ClaimScore {
            claim_id,
            score,
            prediction,
            market,
        }
    }
}

/// Counts over the scored subset; `Replicable` is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.true_negatives += other.true_negatives;
        self.false_negatives += other.false_negatives;
    }
}

/// Precision/recall/F1 for one class. A zero denominator leaves the
/// component at 0, as flagged in the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn class_metrics(tp: usize, fp: usize, fn_: usize) -> ClassMetrics {
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics { precision, recall, f1 }
}

/// Evaluation summary. Classification fields are `None` when no claim was
/// scored (undefined, not zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_total: usize,
    pub n_scored: usize,
    pub coverage: f64,
    pub accuracy: Option<f64>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub rmse: f64,
    pub confusion: ConfusionMatrix,
    pub replicable: Option<ClassMetrics>,
    pub not_replicable: Option<ClassMetrics>,
}

/// Scores every claim with one market run using the model's genomes and
/// normalizer. Per-claim rng streams derive from (seed, claim id), so the
/// result is independent of ordering and thread count.
pub fn score_claims(
    model: &TrainedModel,
    claims: &[ClaimRecord],
    seed: u64,
) -> Result<Vec<ClaimScore>, EvalError> {
    let market_config = model.config.market_config();
    claims
        .par_iter()
        .map(|claim| {
            let point = apply_normalizer(&model.normalizer, claim)?;
            let agents = model
                .genomes
                .iter()
                .map(|a| crate::agents::AgentState::fresh(a.id, a.genome.clone(), model.config.initial_cash))
                .collect();
            let mut rng = stream_rng(seed, &[STREAM_SCORE_MARKET, hash_str(&claim.id)]);
            let market = run_market(agents, &point, &market_config, &mut rng)?;
            Ok(ClaimScore::from_market(claim.id.clone(), market))
        })
        .collect()
}

/// Computes the metrics report for a set of scores against ground truth.
///
/// Every scored claim must be labeled; abstained claims may be unlabeled
/// (they contribute only to coverage and the fixed RMSE residual).
pub fn compute_metrics(
    scores: &[ClaimScore],
    labels: &BTreeMap<String, Label>,
) -> Result<MetricsReport, EvalError> {
    let n_total = scores.len();
    let mut confusion = ConfusionMatrix::default();
    let mut sq_sum = 0.0;
    for score in scores {
        match (score.prediction, score.score) {
            (Prediction::Abstain, _) => {
                sq_sum += 0.25; // residual 0.5, squared
            }
            (prediction, Some(price)) => {
                let label = labels
                    .get(&score.claim_id)
                    .ok_or_else(|| EvalError::MissingLabel(score.claim_id.clone()))?;
                let residual = price - label.target();
                sq_sum += residual * residual;
                match (prediction, label) {
                    (Prediction::Replicable, Label::Replicable) => confusion.true_positives += 1,
                    (Prediction::Replicable, Label::NotReplicable) => confusion.false_positives += 1,
                    (Prediction::NotReplicable, Label::NotReplicable) => confusion.true_negatives += 1,
                    (Prediction::NotReplicable, Label::Replicable) => confusion.false_negatives += 1,
                    (Prediction::Abstain, _) => unreachable!("abstain handled above"),
                }
            }
            (_, None) => unreachable!("non-abstain prediction always carries a score"),
        }
    }

    let n_scored = confusion.total();
    let coverage = if n_total > 0 { n_scored as f64 / n_total as f64 } else { 0.0 };
    let rmse = if n_total > 0 { (sq_sum / n_total as f64).sqrt() } else { 0.0 };

    if n_scored == 0 {
        return Ok(MetricsReport {
            n_total,
            n_scored,
            coverage,
            accuracy: None,
            macro_precision: None,
            macro_recall: None,
            macro_f1: None,
            rmse,
            confusion,
            replicable: None,
            not_replicable: None,
        });
    }

    let pos = class_metrics(
        confusion.true_positives,
        confusion.false_positives,
        confusion.false_negatives,
    );
    // For the negative class the roles of the counts mirror.
    let neg = class_metrics(
        confusion.true_negatives,
        confusion.false_negatives,
        confusion.false_positives,
    );
    let accuracy =
        (confusion.true_positives + confusion.true_negatives) as f64 / n_scored as f64;
    Ok(MetricsReport {
        n_total,
        n_scored,
        coverage,
        accuracy: Some(accuracy),
        macro_precision: Some(0.5 * (pos.precision + neg.precision)),
        macro_recall: Some(0.5 * (pos.recall + neg.recall)),
        macro_f1: Some(0.5 * (pos.f1 + neg.f1)),
        rmse,
        confusion,
        replicable: Some(pos),
        not_replicable: Some(neg),
    })
}

/// Everything produced by one cross-validation fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub report: MetricsReport,
    pub scores: Vec<ClaimScore>,
    pub model: TrainedModel,
    pub history: Vec<GenerationStats>,
}

/// Per-fold reports plus the pooled report over every test score.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub folds: Vec<FoldOutcome>,
    pub pooled: MetricsReport,
}

/// Runs the full cross-validation protocol: per fold, fit the normalizer
/// on the training split only, train a population, score the held-out
/// claims, and compute metrics; then pool all test scores into one report.
/// The same `config` (seed included) applies to every fold.
pub fn cross_validate(
    schema: &FeatureSchema,
    dataset: &[ClaimRecord],
    fold_plan: &FoldPlan,
    config: &EvolutionConfig,
) -> Result<CvOutcome, EvalError> {
    for record in dataset {
        if !fold_plan.assignments.contains_key(&record.id) {
            return Err(EvalError::UncoveredClaim(record.id.clone()));
        }
    }
    let labels: BTreeMap<String, Label> = dataset
        .iter()
        .filter_map(|r| r.label.map(|l| (r.id.clone(), l)))
        .collect();

    let folds: Vec<FoldOutcome> = (0..fold_plan.fold_count)
        .into_par_iter()
        .map(|fold| run_fold(schema, dataset, fold_plan, config, fold, &labels))
        .collect::<Result<_, EvalError>>()?;

    let mut pooled_scores: Vec<ClaimScore> = folds
        .iter()
        .flat_map(|f| f.scores.iter().cloned())
        .collect();
    pooled_scores.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
    let pooled = compute_metrics(&pooled_scores, &labels)?;
    Ok(CvOutcome { folds, pooled })
}

fn run_fold(
    schema: &FeatureSchema,
    dataset: &[ClaimRecord],
    fold_plan: &FoldPlan,
    config: &EvolutionConfig,
    fold: usize,
    labels: &BTreeMap<String, Label>,
) -> Result<FoldOutcome, EvalError> {
    let (test, train_records): (Vec<&ClaimRecord>, Vec<&ClaimRecord>) = dataset
        .iter()
        .partition(|r| fold_plan.assignments[&r.id] == fold);
    if test.is_empty() {
        return Err(EvalError::EmptyFold { fold });
    }

    let train_owned: Vec<ClaimRecord> = train_records.iter().map(|r| (*r).clone()).collect();
    let normalizer = fit_normalizer(schema, &train_owned)?;
    let train_claims: Vec<LabeledPoint> = train_owned
        .iter()
        .map(|r| {
            let point = apply_normalizer(&normalizer, r)?;
            Ok(LabeledPoint {
                id: r.id.clone(),
                point,
                label: r.label.expect("fold plans only cover labeled data"),
            })
        })
        .collect::<Result<_, DataError>>()?;

    let output = train(&train_claims, normalizer, config)?;
    let test_owned: Vec<ClaimRecord> = test.iter().map(|r| (*r).clone()).collect();
    let scores = score_claims(&output.model, &test_owned, config.master_seed)?;
    let report = compute_metrics(&scores, labels)?;
    Ok(FoldOutcome {
        fold,
        report,
        scores,
        model: output.model,
        history: output.history,
    })
}
