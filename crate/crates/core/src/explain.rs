//! Turns a claim's trade ledger and the participating agents' geometry
//! into a human-readable explanation: who traded, why (position and
//! purchase region), and which features drove proximity.
//!
//! Feature attribution is the per-coordinate squared deviation
//! (x_i - c_i)^2 from the agent's center — the decomposition that exactly
//! reconstructs the membership value, with no surrogate model involved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, AgentsError};
use crate::data::FeatureSchema;
use crate::market::{Asset, MarketResult};

/// Number of feature attributions shown per agent in rendered output.
pub const TOP_ATTRIBUTIONS: usize = 10;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("ledger references agent {0} which is not in the population")]
    UnknownAgent(u64),
    #[error("ledger trade by agent {agent} is for {traded:?} but the agent specializes in {specialty:?}")]
    AssetMismatch { agent: u64, traded: Asset, specialty: Asset },
    #[error("schema dimension {schema} does not match point dimension {point}")]
    SchemaMismatch { schema: usize, point: usize },
    #[error(transparent)]
    Agents(#[from] AgentsError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One feature's share of the squared distance between claim and center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub feature: String,
    pub contribution: f64,
}

/// Summary of one participating agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentParticipation {
    pub agent_id: u64,
    pub asset_class: Asset,
    pub shares: f64,
    pub spend: f64,
    /// Membership value g(x); positive means the claim sat inside the
    /// agent's region.
    pub membership: f64,
    pub belief: f64,
    pub own_price_open: f64,
    pub own_price_close: f64,
    /// All features ranked by contribution, largest first.
    pub attributions: Vec<FeatureAttribution>,
}

/// Why a non-trading agent stayed out: how far the claim fell outside its
/// region (negative values mean inside but without a price edge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDeficit {
    pub agent_id: u64,
    pub asset_class: Asset,
    pub membership_deficit: f64,
}

/// The explanation artifact for one claim's market run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub claim_id: String,
    /// Close price when the market traded; `None` for an unscored claim.
    pub score: Option<f64>,
    pub rounds_run: u32,
    pub trade_count: usize,
    /// Fraction of the population that traded.
    pub participation_extent: f64,
    pub participation: Vec<AgentParticipation>,
    /// Present for unscored claims: every agent's deficit, closest first.
    pub abstention: Vec<AgentDeficit>,
    pub ledger: Vec<crate::market::TradeRecord>,
    pub narrative: String,
}

/// Builds the explanation for one market result.
pub fn explain(
    result: &MarketResult,
    agents: &[Agent],
    claim_id: &str,
    point: &[f64],
    schema: &FeatureSchema,
) -> Result<ExplanationReport, ExplainError> {
    if schema.dimension() != point.len() {
        return Err(ExplainError::SchemaMismatch {
            schema: schema.dimension(),
            point: point.len(),
        });
    }
    for trade in &result.ledger {
        let agent = agents
            .iter()
            .find(|a| a.id == trade.agent_id)
            .ok_or(ExplainError::UnknownAgent(trade.agent_id))?;
        if agent.genome.asset_class != trade.asset {
            return Err(ExplainError::AssetMismatch {
                agent: trade.agent_id,
                traded: trade.asset,
                specialty: agent.genome.asset_class,
            });
        }
    }

    let open = result.open_price_yes();
    let close = result.close_price_yes;
    let mut participation = Vec::new();
    for agent in agents {
        let Some(holding) = result.holdings.get(&agent.id) else {
            continue;
        };
        let membership = agent.genome.membership(point)?;
        let belief = agent.genome.belief(point)?;
        let mut attributions: Vec<FeatureAttribution> = schema
            .names()
            .iter()
            .zip(agent.genome.center.iter().zip(point))
            .map(|(name, (c, x))| FeatureAttribution {
                feature: name.clone(),
                contribution: (x - c) * (x - c),
            })
            .collect();
        attributions.sort_by(|a, b| {
            b.contribution
                .partial_cmp(&a.contribution)
                .expect("finite contributions")
                .then_with(|| a.feature.cmp(&b.feature))
        });
        let (own_open, own_close) = match agent.genome.asset_class {
            Asset::Yes => (open, close),
            Asset::No => (1.0 - open, 1.0 - close),
        };
        participation.push(AgentParticipation {
            agent_id: agent.id,
            asset_class: agent.genome.asset_class,
            shares: holding.shares,
            spend: holding.spend,
            membership,
            belief,
            own_price_open: own_open,
            own_price_close: own_close,
            attributions,
        });
    }
    participation.sort_by_key(|p| p.agent_id);

    let mut abstention = Vec::new();
    if !result.scored {
        for agent in agents {
            let membership = agent.genome.membership(point)?;
            abstention.push(AgentDeficit {
                agent_id: agent.id,
                asset_class: agent.genome.asset_class,
                membership_deficit: -membership,
            });
        }
        abstention.sort_by(|a, b| {
            a.membership_deficit
                .partial_cmp(&b.membership_deficit)
                .expect("finite deficits")
                .then_with(|| a.agent_id.cmp(&b.agent_id))
        });
    }

    let extent = if agents.is_empty() {
        0.0
    } else {
        participation.len() as f64 / agents.len() as f64
    };
    let narrative = narrate(claim_id, result, &participation, &abstention, agents.len());

    Ok(ExplanationReport {
        claim_id: claim_id.to_string(),
        score: result.scored.then_some(close),
        rounds_run: result.rounds_run,
        trade_count: result.ledger.len(),
        participation_extent: extent,
        participation,
        abstention,
        ledger: result.ledger.clone(),
        narrative,
    })
}

fn narrate(
    claim_id: &str,
    result: &MarketResult,
    participation: &[AgentParticipation],
    abstention: &[AgentDeficit],
    population: usize,
) -> String {
    if !result.scored {
        let nearest = abstention
            .first()
            .map(|d| {
                format!(
                    "The nearest agent was {} ({:?}), with a membership deficit of {:.6}.",
                    d.agent_id, d.asset_class, d.membership_deficit
                )
            })
            .unwrap_or_else(|| "The population is empty.".to_string());
        return format!(
            "Claim {claim_id} is UNSCORED: no agent's purchase region contained it, \
             so the market closed untraded at {:.6}. {nearest}",
            result.close_price_yes
        );
    }
    let sides: Vec<String> = participation
        .iter()
        .map(|p| {
            format!(
                "agent {} bought {:.4} {:?} shares for {:.4}",
                p.agent_id, p.shares, p.asset_class, p.spend
            )
        })
        .collect();
    format!(
        "Claim {claim_id} closed at {:.6} after {} rounds and {} trades. \
         {} of {population} agents participated: {}.",
        result.close_price_yes,
        result.rounds_run,
        result.ledger.len(),
        participation.len(),
        sides.join("; ")
    )
}

/// Output formats for [`render`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Json,
    Markdown,
}

/// Renders a report deterministically.
pub fn render(report: &ExplanationReport, format: RenderFormat) -> Result<String, ExplainError> {
    match format {
        RenderFormat::Json => Ok(serde_json::to_string_pretty(report)?),
        RenderFormat::Markdown => Ok(render_markdown(report)),
    }
}

fn render_markdown(report: &ExplanationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# Claim {}\n\n", report.claim_id));
    match report.score {
        Some(score) => out.push_str(&format!(
            "**Score**: {score:.6} (close price of the will-replicate asset)\n\n"
        )),
        None => out.push_str("**UNSCORED** — no agent traded on this claim.\n\n"),
    }
    out.push_str(&format!(
        "Rounds: {} | Trades: {} | Participation: {} of {} agents ({:.0}%)\n\n",
        report.rounds_run,
        report.trade_count,
        report.participation.len(),
        if report.participation_extent > 0.0 {
            (report.participation.len() as f64 / report.participation_extent).round() as usize
        } else {
            report.abstention.len()
        },
        report.participation_extent * 100.0,
    ));

    if !report.participation.is_empty() {
        out.push_str("## Participation\n\n");
        out.push_str("| agent | asset | shares | spend | membership g(x) | belief | own price open -> close |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for p in &report.participation {
            out.push_str(&format!(
                "| {} | {:?} | {:.4} | {:.4} | {:.6} | {:.6} | {:.4} -> {:.4} |\n",
                p.agent_id, p.asset_class, p.shares, p.spend, p.membership, p.belief,
                p.own_price_open, p.own_price_close,
            ));
        }
        out.push('\n');

        out.push_str("## Trades\n\n");
        out.push_str("| round | agent | asset | shares | cost | price before -> after |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        for t in &report.ledger {
            out.push_str(&format!(
                "| {} | {} | {:?} | {:.4} | {:.4} | {:.4} -> {:.4} |\n",
                t.round, t.agent_id, t.asset, t.shares, t.cost, t.price_before, t.price_after,
            ));
        }
        out.push('\n');

        out.push_str("## Feature attributions\n\n");
        for p in &report.participation {
            let total: f64 = p.attributions.iter().map(|a| a.contribution).sum();
            out.push_str(&format!(
                "### Agent {} ({:?}), squared distance {:.6}\n\n",
                p.agent_id, p.asset_class, total
            ));
            for a in p.attributions.iter().take(TOP_ATTRIBUTIONS) {
                let share = if total > 0.0 { a.contribution / total * 100.0 } else { 0.0 };
                out.push_str(&format!(
                    "- {}: {:.6} ({share:.1}% of squared distance)\n",
                    a.feature, a.contribution
                ));
            }
            out.push('\n');
        }
    }

    if !report.abstention.is_empty() {
        out.push_str("## Abstention analysis\n\n");
        out.push_str("| agent | asset | membership deficit |\n");
        out.push_str("|---|---|---|\n");
        for d in &report.abstention {
            out.push_str(&format!(
                "| {} | {:?} | {:.6} |\n",
                d.agent_id, d.asset_class, d.membership_deficit
            ));
        }
        out.push('\n');
    }

    out.push_str(&format!("{}\n", report.narrative));
    out
}
