//! A fully synthetic prediction market for scoring the replicability of
//! scholarly claims.
//!
//! Trader agents hold ball-shaped purchase regions in a normalized feature
//! space and buy binary outcome assets priced by a logarithmic market
//! scoring rule. An evolutionary algorithm trains the population on labeled
//! replication outcomes; the close price of the *will replicate* asset is
//! the confidence score, and a claim no agent trades on is reported
//! unscored rather than guessed at.
//!
//! Module map:
//! - [`data`] — datasets, normalization, cross-validation folds
//! - [`market`] — LMSR pricing and the round-based trading protocol
//! - [`agents`] — purchase-region genomes and the decision rule
//! - [`evolution`] — profit selection, crossover/mutation, RMSE tracking
//! - [`eval`] — scoring, metrics with abstention, cross-validation
//! - [`explain`] — trade-ledger explanations with feature attribution

pub mod agents;
pub mod data;
pub mod eval;
pub mod evolution;
pub mod explain;
pub mod market;
pub mod seed;

pub use agents::{Agent, AgentState, Decision, Genome};
pub use data::{ClaimRecord, FeatureSchema, FoldPlan, Label, NormalizationParams};
pub use eval::{ClaimScore, CvOutcome, MetricsReport, Prediction};
pub use evolution::{EvolutionConfig, GenerationStats, TrainedModel};
pub use explain::{ExplanationReport, RenderFormat};
pub use market::{Asset, MarketConfig, MarketResult, MarketState, TradeRecord};
