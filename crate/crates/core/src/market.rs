//! Binary-outcome market maker priced by a logarithmic market scoring rule,
//! plus the round-based trading protocol that produces a close price or an
//! abstention.
//!
//! The cost function is C(q) = b * ln(e^{q_yes/b} + e^{q_no/b}); buying
//! `delta` shares costs C(q') - C(q) and the instantaneous Yes price is the
//! softmax of the outstanding quantities. All evaluations use a log-sum-exp
//! formulation so extreme quantities neither overflow nor lose the price
//! normalization.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{decide, AgentState, AgentsError, Decision};

/// The two outcome securities. `Yes` pays 1 if the notional replication
/// study succeeds, `No` pays 1 if it fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Asset {
    Yes,
    No,
}

impl Asset {
    pub fn other(self) -> Asset {
        match self {
            Asset::Yes => Asset::No,
            Asset::No => Asset::Yes,
        }
    }
}

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("initial price must lie strictly in (0,1), got {0}")]
    InitialPriceOutOfRange(f64),
    #[error("liquidity parameter must be positive, got {0}")]
    NonPositiveLiquidity(f64),
    #[error("share amount must be positive, got {0}")]
    NonPositiveShares(f64),
    #[error(transparent)]
    Agents(#[from] AgentsError),
}

/// Protocol parameters for a single market run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    /// LMSR liquidity parameter b.
    pub liquidity_b: f64,
    /// Opening price of the Yes asset.
    pub initial_price: f64,
    /// Safety bound on the number of trading rounds.
    pub max_rounds: u32,
    /// Shares bought per affirmative decision.
    pub unit_shares: f64,
    /// Smallest partial purchase an agent will make when it cannot afford
    /// a full unit.
    pub min_buy_shares: f64,
    /// Required edge of belief over own-asset price before buying.
    pub margin: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            liquidity_b: 1.0,
            initial_price: 0.5,
            max_rounds: 100,
            unit_shares: 1.0,
            min_buy_shares: 0.01,
            margin: 0.0,
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// LMSR state: outstanding shares per asset plus the cumulative cost
/// collected since open.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    q_yes: f64,
    q_no: f64,
    liquidity_b: f64,
    revenue: f64,
    q_yes_open: f64,
    q_no_open: f64,
}

/// C(q) = b * ln(e^{q_yes/b} + e^{q_no/b}), evaluated as
/// max + b * ln(1 + e^{-|q_yes - q_no|/b}) so large quantities stay finite.
fn lmsr_cost(q_yes: f64, q_no: f64, b: f64) -> f64 {
    let m = q_yes.max(q_no);
    m + b * (((q_yes - m) / b).exp() + ((q_no - m) / b).exp()).ln()
}

impl MarketState {
    /// Opens a market at the given Yes price by solving
    /// q_yes = b * ln(p / (1 - p)), q_no = 0.
    pub fn new(liquidity_b: f64, initial_price_yes: f64) -> Result<Self, MarketError> {
        if liquidity_b <= 0.0 || !liquidity_b.is_finite() {
            return Err(MarketError::NonPositiveLiquidity(liquidity_b));
        }
        if !(initial_price_yes > 0.0 && initial_price_yes < 1.0) {
            return Err(MarketError::InitialPriceOutOfRange(initial_price_yes));
        }
        let q_yes = liquidity_b * (initial_price_yes / (1.0 - initial_price_yes)).ln();
        Ok(Self {
            q_yes,
            q_no: 0.0,
            liquidity_b,
            revenue: 0.0,
            q_yes_open: q_yes,
            q_no_open: 0.0,
        })
    }

    /// Resumes a market at known outstanding quantities (no revenue
    /// history). Lets audits and tests evaluate pricing at any state.
    pub fn with_quantities(q_yes: f64, q_no: f64, liquidity_b: f64) -> Result<Self, MarketError> {
        if liquidity_b <= 0.0 || !liquidity_b.is_finite() {
            return Err(MarketError::NonPositiveLiquidity(liquidity_b));
        }
        Ok(Self {
            q_yes,
            q_no,
            liquidity_b,
            revenue: 0.0,
            q_yes_open: q_yes,
            q_no_open: q_no,
        })
    }

    pub fn quantities(&self) -> (f64, f64) {
        (self.q_yes, self.q_no)
    }

    pub fn open_quantities(&self) -> (f64, f64) {
        (self.q_yes_open, self.q_no_open)
    }

    pub fn liquidity(&self) -> f64 {
        self.liquidity_b
    }

    /// Cumulative cost collected from all executed buys.
    pub fn revenue(&self) -> f64 {
        self.revenue
    }

    /// Instantaneous price of the Yes asset.
    pub fn price_yes(&self) -> f64 {
        sigmoid((self.q_yes - self.q_no) / self.liquidity_b)
    }

    /// Instantaneous price of the No asset, evaluated on its own rather
    /// than as 1 - price_yes so the normalization check is meaningful.
    pub fn price_no(&self) -> f64 {
        sigmoid((self.q_no - self.q_yes) / self.liquidity_b)
    }

    pub fn price_of(&self, asset: Asset) -> f64 {
        match asset {
            Asset::Yes => self.price_yes(),
            Asset::No => self.price_no(),
        }
    }

    /// Cost function value at the current quantities.
    pub fn cost_value(&self) -> f64 {
        lmsr_cost(self.q_yes, self.q_no, self.liquidity_b)
    }

    /// C(q') - C(q) for buying `shares` of `asset`.
    pub fn cost_to_buy(&self, asset: Asset, shares: f64) -> Result<f64, MarketError> {
        if shares <= 0.0 || !shares.is_finite() {
            return Err(MarketError::NonPositiveShares(shares));
        }
        let before = self.cost_value();
        let after = match asset {
            Asset::Yes => lmsr_cost(self.q_yes + shares, self.q_no, self.liquidity_b),
            Asset::No => lmsr_cost(self.q_yes, self.q_no + shares, self.liquidity_b),
        };
        Ok(after - before)
    }

    /// Executes a purchase, updating quantities and revenue, and returns the
    /// ledger record with before/after Yes prices.
    pub fn execute_buy(
        &mut self,
        agent_id: u64,
        asset: Asset,
        shares: f64,
        round: u32,
    ) -> Result<TradeRecord, MarketError> {
        let cost = self.cost_to_buy(asset, shares)?;
        let price_before = self.price_yes();
        match asset {
            Asset::Yes => self.q_yes += shares,
            Asset::No => self.q_no += shares,
        }
        self.revenue += cost;
        Ok(TradeRecord {
            agent_id,
            round,
            asset,
            shares,
            cost,
            price_before,
            price_after: self.price_yes(),
        })
    }
}

/// One executed purchase. Prices are quoted for the Yes asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub agent_id: u64,
    pub round: u32,
    pub asset: Asset,
    pub shares: f64,
    pub cost: f64,
    pub price_before: f64,
    pub price_after: f64,
}

/// Per-agent position at market close.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holding {
    pub asset: Asset,
    pub shares: f64,
    pub spend: f64,
}

/// Outcome of one market run. `scored` is true iff at least one trade
/// executed; an untraded market closes at its initial price and carries no
/// information about the claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketResult {
    pub close_price_yes: f64,
    pub ledger: Vec<TradeRecord>,
    pub scored: bool,
    /// Last round in which a trade executed; 0 for an untraded market.
    /// The closing all-quiet round is not counted, so a result rebuilt
    /// from its ledger matches the live run exactly.
    pub rounds_run: u32,
    pub holdings: BTreeMap<u64, Holding>,
}

impl MarketResult {
    /// Opening Yes price of the run that produced this result.
    pub fn open_price_yes(&self) -> f64 {
        self.ledger
            .first()
            .map(|t| t.price_before)
            .unwrap_or(self.close_price_yes)
    }

    /// Rebuilds a result from a stored ledger, replaying each trade through
    /// a fresh market. Used when re-rendering explanations from audit files.
    pub fn replay(
        ledger: &[TradeRecord],
        config: &MarketConfig,
    ) -> Result<MarketResult, MarketError> {
        let mut market = MarketState::new(config.liquidity_b, config.initial_price)?;
        let mut holdings: BTreeMap<u64, Holding> = BTreeMap::new();
        let mut rounds_run = 0;
        for trade in ledger {
            market.execute_buy(trade.agent_id, trade.asset, trade.shares, trade.round)?;
            let h = holdings.entry(trade.agent_id).or_insert(Holding {
                asset: trade.asset,
                shares: 0.0,
                spend: 0.0,
            });
            h.shares += trade.shares;
            h.spend += trade.cost;
            rounds_run = rounds_run.max(trade.round);
        }
        Ok(MarketResult {
            close_price_yes: market.price_yes(),
            ledger: ledger.to_vec(),
            scored: !ledger.is_empty(),
            rounds_run,
            holdings,
        })
    }
}

/// Runs the trading protocol on one claim.
///
/// Rounds are numbered from 1. Each round visits the agents in an order
/// shuffled from `rng`; an affirmative decision executes immediately, so the
/// price every later agent sees already reflects the trade. The market
/// closes after the first round with zero trades, or at `max_rounds`.
pub fn run_market<R: rand::Rng>(
    mut agents: Vec<AgentState>,
    point: &[f64],
    config: &MarketConfig,
    rng: &mut R,
) -> Result<MarketResult, MarketError> {
    for agent in &agents {
        agent.genome.check_dimension(point.len())?;
    }
    let mut market = MarketState::new(config.liquidity_b, config.initial_price)?;
    let mut ledger = Vec::new();
    let mut rounds_run = 0;

    let mut order: Vec<usize> = (0..agents.len()).collect();
    for round in 1..=config.max_rounds {
        shuffle(&mut order, rng);
        let mut trades_this_round = 0;
        for &idx in &order {
            let agent = &mut agents[idx];
            let decision = decide(agent, point, market.price_yes(), config)?;
            if let Decision::Buy { shares } = decision {
                let record = market.execute_buy(agent.id, agent.genome.asset_class, shares, round)?;
                agent.apply_purchase(shares, record.cost);
                ledger.push(record);
                trades_this_round += 1;
            }
        }
        if trades_this_round == 0 {
            break;
        }
        rounds_run = round;
    }

    let holdings = agents
        .iter()
        .filter(|a| a.shares_held > 0.0)
        .map(|a| {
            (
                a.id,
                Holding {
                    asset: a.genome.asset_class,
                    shares: a.shares_held,
                    spend: a.spend,
                },
            )
        })
        .collect();

    Ok(MarketResult {
        close_price_yes: market.price_yes(),
        scored: !ledger.is_empty(),
        ledger,
        rounds_run,
        holdings,
    })
}

/// Fisher-Yates with draws taken in a fixed order, so a given rng stream
/// always yields the same visit sequence.
fn shuffle<R: rand::Rng>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Writes a ledger as JSON lines, one trade per line, in execution order.
pub fn write_ledger<W: Write>(mut w: W, ledger: &[TradeRecord]) -> std::io::Result<()> {
    for trade in ledger {
        serde_json::to_writer(&mut w, trade)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a ledger previously written by [`write_ledger`].
pub fn read_ledger<R: BufRead>(r: R) -> std::io::Result<Vec<TradeRecord>> {
    let mut ledger = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        ledger.push(serde_json::from_str(&line)?);
    }
    Ok(ledger)
}
