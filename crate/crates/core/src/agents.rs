//! Trader agents whose participation and purchase decisions come from a
//! sigmoid transformation of a ball-shaped region in normalized feature
//! space.
//!
//! An agent's region is the closed ball {x : g(x) >= 0} with
//! g(x) = radius^2 - ||x - center||^2. Its belief that the outcome matches
//! its asset class is sigma(steepness * g(x)). The region acts as a hard
//! participation gate: a claim outside every agent's ball is never traded
//! and therefore never scored. The module treats the region abstractly
//! through `membership`, so richer polynomial families could replace the
//! ball without touching the market or evolution code.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Label;
use crate::market::{sigmoid, Asset, MarketConfig};

/// Bounds on the heritable radius, in normalized feature-space units.
/// The upper bound sqrt(d) is the hypercube diagonal.
pub const RADIUS_MIN: f64 = 0.01;
/// Bounds on the sigmoid gain.
pub const STEEPNESS_MIN: f64 = 0.1;
pub const STEEPNESS_MAX: f64 = 1000.0;
/// Radius used when a nearest-neighbor distance is undefined (single
/// training point).
pub const RADIUS_FALLBACK: f64 = 0.1;
/// Default sigmoid gain for freshly initialized genomes.
pub const STEEPNESS_DEFAULT: f64 = 50.0;
/// Standard deviation of the Gaussian jitter applied to initial centers.
pub const INIT_CENTER_JITTER: f64 = 0.02;

pub fn radius_max(dimension: usize) -> f64 {
    (dimension as f64).sqrt()
}

#[derive(Debug, Error)]
pub enum AgentsError {
    #[error("point dimension {got} does not match genome dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("population count must be at least 1")]
    EmptyPopulation,
    #[error("cannot initialize agents without training points")]
    NoTrainingPoints,
}

/// Heritable parameters of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub asset_class: Asset,
    pub center: Vec<f64>,
    pub radius: f64,
    pub steepness: f64,
}

impl Genome {
    pub fn dimension(&self) -> usize {
        self.center.len()
    }

    pub fn check_dimension(&self, got: usize) -> Result<(), AgentsError> {
        if got != self.center.len() {
            return Err(AgentsError::DimensionMismatch {
                expected: self.center.len(),
                got,
            });
        }
        Ok(())
    }

    /// Region membership g(x) = radius^2 - ||x - center||^2: positive
    /// inside, zero on the boundary, negative outside.
    pub fn membership(&self, point: &[f64]) -> Result<f64, AgentsError> {
        self.check_dimension(point.len())?;
        let dist_sq: f64 = self
            .center
            .iter()
            .zip(point)
            .map(|(c, x)| (x - c) * (x - c))
            .sum();
        Ok(self.radius * self.radius - dist_sq)
    }

    /// The agent's probability that the outcome matches its asset class:
    /// sigma(steepness * g(x)). Equals 0.5 exactly on the region boundary.
    pub fn belief(&self, point: &[f64]) -> Result<f64, AgentsError> {
        Ok(sigmoid(self.steepness * self.membership(point)?))
    }

    /// Clamps radius and steepness into their legal ranges and the center
    /// into the unit hypercube.
    pub fn clamp_to_bounds(&mut self) {
        let d = self.center.len();
        for c in &mut self.center {
            *c = c.clamp(0.0, 1.0);
        }
        self.radius = self.radius.clamp(RADIUS_MIN, radius_max(d));
        self.steepness = self.steepness.clamp(STEEPNESS_MIN, STEEPNESS_MAX);
    }

    /// True when all genome invariants hold.
    pub fn is_within_bounds(&self) -> bool {
        let d = self.center.len();
        self.center.iter().all(|c| (0.0..=1.0).contains(c))
            && (RADIUS_MIN..=radius_max(d)).contains(&self.radius)
            && (STEEPNESS_MIN..=STEEPNESS_MAX).contains(&self.steepness)
    }
}

/// An identified genome; ids are stable across a training run and fresh ids
/// are assigned to every offspring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u64,
    #[serde(flatten)]
    pub genome: Genome,
}

/// Per-market mutable state of one trading agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: u64,
    pub genome: Genome,
    pub cash: f64,
    pub shares_held: f64,
    pub spend: f64,
}

impl AgentState {
    /// A fresh state holding `cash` and no shares.
    pub fn fresh(id: u64, genome: Genome, cash: f64) -> Self {
        Self {
            id,
            genome,
            cash,
            shares_held: 0.0,
            spend: 0.0,
        }
    }

    /// Books an executed purchase against the agent's budget.
    pub fn apply_purchase(&mut self, shares: f64, cost: f64) {
        self.shares_held += shares;
        self.spend += cost;
        self.cash = (self.cash - cost).max(0.0);
    }
}

/// A purchase decision for the current round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Buy { shares: f64 },
    Abstain,
}

/// Cost of buying `shares` of an asset currently priced at `price`, for
/// liquidity `b`. Derived from the LMSR cost difference, which for a binary
/// market depends only on the standing price of the purchased asset.
pub fn buy_cost_at_price(price: f64, shares: f64, b: f64) -> f64 {
    b * ((1.0 - price) + price * (shares / b).exp()).ln()
}

/// Largest share amount purchasable with `cash` at the standing `price`,
/// inverting [`buy_cost_at_price`].
pub fn affordable_shares(price: f64, cash: f64, b: f64) -> f64 {
    b * (((cash / b).exp() - 1.0 + price) / price).ln()
}

/// The round decision rule.
///
/// Buys one unit (or the largest affordable fraction at least
/// `min_buy_shares`) iff all three hold:
///   (i) the point lies in the agent's region, g(x) >= 0;
///  (ii) belief exceeds the own-asset price plus margin;
/// (iii) the purchase is affordable.
///
/// Because the own-asset price rises with every purchase, the effective
/// region {x : belief(x) > price} shrinks as the market moves toward the
/// agent's view, which is what eventually stops a lone bull.
pub fn decide(
    agent: &AgentState,
    point: &[f64],
    market_price_yes: f64,
    config: &MarketConfig,
) -> Result<Decision, AgentsError> {
    let g = agent.genome.membership(point)?;
    if g < 0.0 {
        return Ok(Decision::Abstain);
    }
    let own_price = match agent.genome.asset_class {
        Asset::Yes => market_price_yes,
        Asset::No => 1.0 - market_price_yes,
    };
    if !(own_price > 0.0 && own_price < 1.0) {
        return Ok(Decision::Abstain);
    }
    let belief = sigmoid(agent.genome.steepness * g);
    if belief <= own_price + config.margin {
        return Ok(Decision::Abstain);
    }
    let unit_cost = buy_cost_at_price(own_price, config.unit_shares, config.liquidity_b);
    if agent.cash >= unit_cost {
        return Ok(Decision::Buy {
            shares: config.unit_shares,
        });
    }
    let partial = affordable_shares(own_price, agent.cash, config.liquidity_b).min(config.unit_shares);
    if partial >= config.min_buy_shares {
        return Ok(Decision::Buy { shares: partial });
    }
    Ok(Decision::Abstain)
}

/// Seeds `count` genomes at jittered training anchors.
///
/// Each genome copies a uniformly drawn training point (plus Gaussian jitter
/// clipped to the hypercube) as its center, specializes in the asset
/// matching that point's label, and starts with a radius equal to the
/// median nearest-neighbor distance among the training points.
pub fn init_population<R: Rng>(
    train_points: &[(Vec<f64>, Label)],
    count: usize,
    rng: &mut R,
) -> Result<Vec<Genome>, AgentsError> {
    if count < 1 {
        return Err(AgentsError::EmptyPopulation);
    }
    if train_points.is_empty() {
        return Err(AgentsError::NoTrainingPoints);
    }
    let dimension = train_points[0].0.len();
    let radius = median_nn_distance(train_points)
        .unwrap_or(RADIUS_FALLBACK)
        .clamp(RADIUS_MIN, radius_max(dimension));
    let jitter = Normal::new(0.0, INIT_CENTER_JITTER).expect("valid sigma");

    let mut genomes = Vec::with_capacity(count);
    for _ in 0..count {
        let (anchor, label) = &train_points[rng.gen_range(0..train_points.len())];
        let center: Vec<f64> = anchor
            .iter()
            .map(|c| (c + jitter.sample(rng)).clamp(0.0, 1.0))
            .collect();
        genomes.push(Genome {
            asset_class: match label {
                Label::Replicable => Asset::Yes,
                Label::NotReplicable => Asset::No,
            },
            center,
            radius,
            steepness: STEEPNESS_DEFAULT,
        });
    }
    Ok(genomes)
}

/// Median distance from each training point to its nearest neighbor;
/// `None` when fewer than two points exist.
fn median_nn_distance(points: &[(Vec<f64>, Label)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let mut nearest = Vec::with_capacity(points.len());
    for (i, (a, _)) in points.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, (b, _)) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.min(d);
        }
        nearest.push(best.sqrt());
    }
    nearest.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = nearest.len();
    Some(if n % 2 == 1 {
        nearest[n / 2]
    } else {
        0.5 * (nearest[n / 2 - 1] + nearest[n / 2])
    })
}
