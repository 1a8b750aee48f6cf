//! Evolutionary training of the agent population.
//!
//! Each generation runs one market per training claim, credits every agent
//! with payout minus spend, deletes agents that failed to profit, and
//! refills the population with mutated crossover offspring of the
//! survivors. Profit drives selection; the root mean square error of close
//! prices against the labels drives which population snapshot is kept as
//! the trained model.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{init_population, Agent, AgentState, AgentsError};
use crate::data::{Label, NormalizationParams};
use crate::market::{run_market, Asset, MarketConfig, MarketError, MarketResult};
use crate::seed::{hash_str, stream_rng, STREAM_INIT, STREAM_REPRODUCE, STREAM_TRAIN_MARKET};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("training requires at least {need} labeled claims, got {got}")]
    TooFewClaims { need: usize, got: usize },
    #[error("training set contains only {0} claims; both outcomes must be present")]
    SingleClass(Label),
    #[error("population size must be at least 1")]
    EmptyPopulation,
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Agents(#[from] AgentsError),
}

/// All knobs of a training run. Defaults follow the reference experiment:
/// 5 agents with 5 units of cash each, markets opened at 0.5, 50
/// generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub generations: u32,
    pub population_size: usize,
    pub initial_cash: f64,
    pub liquidity_b: f64,
    pub initial_price: f64,
    pub max_rounds: u32,
    pub unit_shares: f64,
    pub min_buy_shares: f64,
    pub margin: f64,
    pub mutation_sigma_center: f64,
    pub mutation_log_sigma: f64,
    pub asset_flip_probability: f64,
    pub master_seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            generations: 50,
            population_size: 5,
            initial_cash: 5.0,
            liquidity_b: 1.0,
            initial_price: 0.5,
            max_rounds: 100,
            unit_shares: 1.0,
            min_buy_shares: 0.01,
            margin: 0.0,
            mutation_sigma_center: 0.05,
            mutation_log_sigma: 0.1,
            asset_flip_probability: 0.02,
            master_seed: 42,
        }
    }
}

impl EvolutionConfig {
    pub fn market_config(&self) -> MarketConfig {
        MarketConfig {
            liquidity_b: self.liquidity_b,
            initial_price: self.initial_price,
            max_rounds: self.max_rounds,
            unit_shares: self.unit_shares,
            min_buy_shares: self.min_buy_shares,
            margin: self.margin,
        }
    }
}

/// A normalized, labeled training claim.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub id: String,
    pub point: Vec<f64>,
    pub label: Label,
}

/// Outcome of evaluating one population on the training claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u32,
    /// Total profit per agent id, summed over all training markets.
    pub agent_profit: BTreeMap<u64, f64>,
    /// Root mean square error of close prices against labels, with
    /// untraded markets standing at the initial price.
    pub rmse: f64,
    /// Fraction of training claims that received at least one trade.
    pub coverage: f64,
    pub survivor_count: usize,
}

/// Best-RMSE population snapshot with everything needed to score new
/// claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub genomes: Vec<Agent>,
    pub normalizer: NormalizationParams,
    pub config: EvolutionConfig,
    pub best_generation: u32,
    pub best_rmse: f64,
}

/// A trained model plus the per-generation log of the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: TrainedModel,
    pub history: Vec<GenerationStats>,
}

/// Runs one market per training claim and aggregates profit, RMSE and
/// coverage. Markets are independent; they run in parallel and reduce in
/// claim order, so the stats are identical for any thread count.
pub fn evaluate_generation(
    population: &[Agent],
    train_claims: &[LabeledPoint],
    config: &EvolutionConfig,
    generation_index: u32,
) -> Result<GenerationStats, EvolutionError> {
    let market_config = config.market_config();
    let outcomes: Vec<(MarketResult, &LabeledPoint)> = train_claims
        .par_iter()
        .map(|claim| {
            let agents: Vec<AgentState> = population
                .iter()
                .map(|a| AgentState::fresh(a.id, a.genome.clone(), config.initial_cash))
                .collect();
            let mut rng = stream_rng(
                config.master_seed,
                &[STREAM_TRAIN_MARKET, u64::from(generation_index), hash_str(&claim.id)],
            );
            run_market(agents, &claim.point, &market_config, &mut rng).map(|r| (r, claim))
        })
        .collect::<Result<_, MarketError>>()?;

    let mut agent_profit: BTreeMap<u64, f64> =
        population.iter().map(|a| (a.id, 0.0)).collect();
    let mut sq_sum = 0.0;
    let mut scored = 0usize;
    for (result, claim) in &outcomes {
        let winning = match claim.label {
            Label::Replicable => Asset::Yes,
            Label::NotReplicable => Asset::No,
        };
        for (id, holding) in &result.holdings {
            let payout = if holding.asset == winning { holding.shares } else { 0.0 };
            *agent_profit.entry(*id).or_insert(0.0) += payout - holding.spend;
        }
        let residual = result.close_price_yes - claim.label.target();
        sq_sum += residual * residual;
        if result.scored {
            scored += 1;
        }
    }

    let n = train_claims.len().max(1) as f64;
    let survivor_count = agent_profit.values().filter(|p| **p > 0.0).count();
    Ok(GenerationStats {
        generation: generation_index,
        agent_profit,
        rmse: (sq_sum / n).sqrt(),
        coverage: scored as f64 / n,
        survivor_count,
    })
}

/// Retains profitable agents unchanged, deletes the rest, and refills the
/// population with crossover-plus-mutation offspring of the survivors.
/// When no agent made a profit the population is re-seeded from training
/// anchors. Offspring always receive fresh ids from `next_id`.
///
/// When every agent is profitable the weakest survivor gives up its slot
/// to one offspring; otherwise a fully profitable population would never
/// see another mutation and the search would freeze.
pub fn select_and_reproduce<R: Rng>(
    population: &[Agent],
    stats: &GenerationStats,
    train_claims: &[LabeledPoint],
    config: &EvolutionConfig,
    next_id: &mut u64,
    rng: &mut R,
) -> Result<Vec<Agent>, EvolutionError> {
    let parents: Vec<&Agent> = population
        .iter()
        .filter(|a| stats.agent_profit.get(&a.id).copied().unwrap_or(0.0) > 0.0)
        .collect();

    if parents.is_empty() {
        let anchors: Vec<(Vec<f64>, Label)> = train_claims
            .iter()
            .map(|c| (c.point.clone(), c.label))
            .collect();
        let genomes = init_population(&anchors, config.population_size, rng)?;
        return Ok(genomes
            .into_iter()
            .map(|genome| {
                let id = *next_id;
                *next_id += 1;
                Agent { id, genome }
            })
            .collect());
    }

    let mut retained = parents.clone();
    if retained.len() >= config.population_size {
        let weakest = retained
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let pa = stats.agent_profit[&a.id];
                let pb = stats.agent_profit[&b.id];
                pa.partial_cmp(&pb)
                    .expect("finite profits")
                    .then_with(|| a.id.cmp(&b.id))
            })
            .map(|(i, _)| i)
            .expect("non-empty retained list");
        retained.remove(weakest);
    }

    let weights: Vec<f64> = parents
        .iter()
        .map(|a| stats.agent_profit[&a.id])
        .collect();
    let mut next = Vec::with_capacity(config.population_size);
    next.extend(retained.iter().map(|a| (*a).clone()));
    while next.len() < config.population_size {
        let p1 = parents[weighted_pick(&weights, rng)];
        let p2 = parents[weighted_pick(&weights, rng)];
        let mut genome = crossover(&p1.genome, &p2.genome, rng);
        mutate(&mut genome, config, rng);
        let id = *next_id;
        *next_id += 1;
        next.push(Agent { id, genome });
    }
    next.truncate(config.population_size);
    Ok(next)
}

fn weighted_pick<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        target -= w;
        if target <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Uniform crossover: centers blend coordinatewise with a single alpha,
/// the scalar parameters and the asset class come from a uniformly chosen
/// parent each.
fn crossover<R: Rng>(
    a: &crate::agents::Genome,
    b: &crate::agents::Genome,
    rng: &mut R,
) -> crate::agents::Genome {
    let alpha: f64 = rng.gen();
    let center = a
        .center
        .iter()
        .zip(&b.center)
        .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
        .collect();
    let radius = if rng.gen::<bool>() { a.radius } else { b.radius };
    let steepness = if rng.gen::<bool>() { a.steepness } else { b.steepness };
    let asset_class = if rng.gen::<bool>() { a.asset_class } else { b.asset_class };
    crate::agents::Genome {
        asset_class,
        center,
        radius,
        steepness,
    }
}

/// Gaussian jitter on the center, log-normal scaling on radius and
/// steepness, rare asset flips; everything clamped back into the genome
/// bounds.
fn mutate<R: Rng>(genome: &mut crate::agents::Genome, config: &EvolutionConfig, rng: &mut R) {
    let center_noise = Normal::new(0.0, config.mutation_sigma_center).expect("valid sigma");
    for c in &mut genome.center {
        *c += center_noise.sample(rng);
    }
    let log_noise = Normal::new(0.0, config.mutation_log_sigma).expect("valid sigma");
    genome.radius *= log_noise.sample(rng).exp();
    genome.steepness *= log_noise.sample(rng).exp();
    if rng.gen::<f64>() < config.asset_flip_probability {
        genome.asset_class = genome.asset_class.other();
    }
    genome.clamp_to_bounds();
}

/// Trains a population on normalized labeled claims.
///
/// Generation 0 is the freshly initialized population; each subsequent
/// generation is evaluated after one round of selection and reproduction.
/// The returned model is the population whose training RMSE was lowest
/// across all evaluated generations.
pub fn train(
    train_claims: &[LabeledPoint],
    normalizer: NormalizationParams,
    config: &EvolutionConfig,
) -> Result<TrainOutput, EvolutionError> {
    if config.population_size < 1 {
        return Err(EvolutionError::EmptyPopulation);
    }
    if train_claims.len() < 2 {
        return Err(EvolutionError::TooFewClaims {
            need: 2,
            got: train_claims.len(),
        });
    }
    let has_yes = train_claims.iter().any(|c| c.label == Label::Replicable);
    let has_no = train_claims.iter().any(|c| c.label == Label::NotReplicable);
    if !has_no {
        return Err(EvolutionError::SingleClass(Label::Replicable));
    }
    if !has_yes {
        return Err(EvolutionError::SingleClass(Label::NotReplicable));
    }

    let anchors: Vec<(Vec<f64>, Label)> = train_claims
        .iter()
        .map(|c| (c.point.clone(), c.label))
        .collect();
    let mut init_rng = stream_rng(config.master_seed, &[STREAM_INIT]);
    let mut population: Vec<Agent> = init_population(&anchors, config.population_size, &mut init_rng)?
        .into_iter()
        .enumerate()
        .map(|(i, genome)| Agent { id: i as u64, genome })
        .collect();
    let mut next_id = population.len() as u64;

    let mut history = Vec::with_capacity(config.generations as usize + 1);
    let mut best: Option<(Vec<Agent>, u32, f64)> = None;

    let mut stats = evaluate_generation(&population, train_claims, config, 0)?;
    checkpoint(&mut best, &population, &stats);
    history.push(stats.clone());

    for generation in 1..=config.generations {
        let mut rng = stream_rng(
            config.master_seed,
            &[STREAM_REPRODUCE, u64::from(generation)],
        );
        population = select_and_reproduce(
            &population,
            &stats,
            train_claims,
            config,
            &mut next_id,
            &mut rng,
        )?;
        stats = evaluate_generation(&population, train_claims, config, generation)?;
        checkpoint(&mut best, &population, &stats);
        history.push(stats.clone());
    }

    let (genomes, best_generation, best_rmse) = best.expect("at least one generation evaluated");
    Ok(TrainOutput {
        model: TrainedModel {
            genomes,
            normalizer,
            config: config.clone(),
            best_generation,
            best_rmse,
        },
        history,
    })
}

fn checkpoint(best: &mut Option<(Vec<Agent>, u32, f64)>, population: &[Agent], stats: &GenerationStats) {
    let improved = match best {
        Some((_, _, rmse)) => stats.rmse < *rmse,
        None => true,
    };
    if improved {
        *best = Some((population.to_vec(), stats.generation, stats.rmse));
    }
}
