//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Oracles here are written independently of the library code paths
//! they check (bisection for affordable shares, brute-force confusion
//! recounts, finite differences for marginal prices).
//!
//! Run with: cargo test -p repmarket-cli --test acceptance

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{synthetic_claims, write_csv, SyntheticSpec};
use repmarket::agents::{decide, AgentState, Decision, Genome};
use repmarket::data::split_folds;
use repmarket::eval::{compute_metrics, cross_validate, ClaimScore, Prediction};
use repmarket::evolution::{select_and_reproduce, EvolutionConfig, GenerationStats, LabeledPoint};
use repmarket::market::{run_market, Asset, MarketConfig, MarketResult, MarketState};
use repmarket::{Agent, FeatureSchema, Label};

fn verdict(criterion: &str, pass: bool) {
    println!(
        "acceptance {criterion}: {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance {criterion} failed");
}

// ---------------------------------------------------------------------
// Criterion 1: LMSR correctness over 1e5 randomized states.
// ---------------------------------------------------------------------
#[test]
fn criterion_1_lmsr_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC01);
    let mut ok = true;
    for _ in 0..100_000 {
        let q_yes = rng.gen_range(-50.0..50.0);
        let q_no = rng.gen_range(-50.0..50.0);
        let b = rng.gen_range(0.1..10.0);
        let state = MarketState::with_quantities(q_yes, q_no, b).unwrap();

        // Normalization.
        let sum = state.price_yes() + state.price_no();
        ok &= (sum - 1.0).abs() <= 1e-12;

        // Path independence: a random split of a random aggregate buy.
        let total = rng.gen_range(0.01..10.0);
        let cut = rng.gen_range(0.01..0.99);
        let asset = if rng.gen::<bool>() { Asset::Yes } else { Asset::No };
        let single = state.cost_to_buy(asset, total).unwrap();
        let mut stepped = MarketState::with_quantities(q_yes, q_no, b).unwrap();
        stepped.execute_buy(0, asset, total * cut, 1).unwrap();
        stepped.execute_buy(0, asset, total * (1.0 - cut), 1).unwrap();
        ok &= (stepped.revenue() - single).abs() <= 1e-9;

        // Marginal price equals the cost derivative (finite differences).
        let h = 1e-5;
        let up = MarketState::with_quantities(q_yes + h, q_no, b).unwrap();
        let down = MarketState::with_quantities(q_yes - h, q_no, b).unwrap();
        let fd = (up.cost_value() - down.cost_value()) / (2.0 * h);
        ok &= (fd - state.price_yes()).abs() <= 1e-6;

        if !ok {
            eprintln!("failed at q=({q_yes},{q_no}), b={b}");
            break;
        }
    }
    verdict("criterion 1 (LMSR correctness, 1e5 states)", ok);
}

// ---------------------------------------------------------------------
// Criterion 2: conservation and bounded maker loss over 1e3 scenarios.
// ---------------------------------------------------------------------
#[test]
fn criterion_2_conservation_and_bounded_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC02);
    let mut ok = true;
    for scenario in 0..1_000 {
        let b = rng.gen_range(0.1..10.0);
        let dim = rng.gen_range(2..5usize);
        let n_agents = rng.gen_range(1..6usize);
        let cash = rng.gen_range(0.5..8.0);
        let point: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
        let agents: Vec<AgentState> = (0..n_agents)
            .map(|i| {
                let genome = Genome {
                    asset_class: if rng.gen::<bool>() { Asset::Yes } else { Asset::No },
                    center: (0..dim).map(|_| rng.gen()).collect(),
                    radius: rng.gen_range(0.05..1.0),
                    steepness: rng.gen_range(1.0..200.0),
                };
                AgentState::fresh(i as u64, genome, cash)
            })
            .collect();
        let config = MarketConfig {
            liquidity_b: b,
            ..MarketConfig::default()
        };
        let mut market_rng = ChaCha8Rng::seed_from_u64(scenario);
        let result = run_market(agents, &point, &config, &mut market_rng).unwrap();

        // Conservation: revenue = C(q_close) - C(q_open).
        let mut replay = MarketState::new(b, 0.5).unwrap();
        let open_cost = replay.cost_value();
        let mut sold_yes = 0.0;
        let mut sold_no = 0.0;
        let mut revenue = 0.0;
        for t in &result.ledger {
            revenue += replay.execute_buy(t.agent_id, t.asset, t.shares, t.round).unwrap().cost;
            match t.asset {
                Asset::Yes => sold_yes += t.shares,
                Asset::No => sold_no += t.shares,
            }
        }
        ok &= (revenue - (replay.cost_value() - open_cost)).abs() <= 1e-9;

        // Bounded loss: payout - revenue <= b ln 2 from a 0.5 open.
        let worst_payout = sold_yes.max(sold_no);
        ok &= worst_payout - revenue <= b * 2f64.ln() + 1e-9;

        if !ok {
            eprintln!("failed at scenario {scenario} (b={b})");
            break;
        }
    }
    verdict("criterion 2 (conservation + bounded loss, 1e3 scenarios)", ok);
}

// ---------------------------------------------------------------------
// Criterion 3: decision-rule oracle equivalence on 1e4 random triples.
//
// The oracle below evaluates conditions (i)-(iii) from scratch: explicit
// distance loop, logistic belief, LMSR cost difference for affordability,
// and bisection (not algebra) for the largest affordable fraction.
// ---------------------------------------------------------------------
fn oracle_cost(price_own: f64, shares: f64, b: f64) -> f64 {
    // Reconstruct a state with this own-asset price and difference-cost it.
    let q = b * (price_own / (1.0 - price_own)).ln();
    let c = |qa: f64| -> f64 {
        let m = qa.max(0.0);
        m + b * (((qa - m) / b).exp() + ((0.0 - m) / b).exp()).ln()
    };
    c(q + shares) - c(q)
}

fn oracle_decide(agent: &AgentState, point: &[f64], price_yes: f64, config: &MarketConfig) -> Decision {
    // (i) participation gate
    let mut dist_sq = 0.0;
    for (c, x) in agent.genome.center.iter().zip(point) {
        dist_sq += (x - c) * (x - c);
    }
    let g = agent.genome.radius * agent.genome.radius - dist_sq;
    if g < 0.0 {
        return Decision::Abstain;
    }
    // (ii) belief edge over own-asset price
    let own = match agent.genome.asset_class {
        Asset::Yes => price_yes,
        Asset::No => 1.0 - price_yes,
    };
    let belief = 1.0 / (1.0 + (-agent.genome.steepness * g).exp());
    if belief <= own + config.margin {
        return Decision::Abstain;
    }
    // (iii) affordability, with the partial-fill amount found by bisection
    if agent.cash >= oracle_cost(own, config.unit_shares, config.liquidity_b) {
        return Decision::Buy { shares: config.unit_shares };
    }
    let (mut lo, mut hi) = (0.0, config.unit_shares);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if oracle_cost(own, mid, config.liquidity_b) <= agent.cash {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo >= config.min_buy_shares {
        Decision::Buy { shares: lo }
    } else {
        Decision::Abstain
    }
}

#[test]
fn criterion_3_decision_rule_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC03);
    let config = MarketConfig::default();
    let mut ok = true;
    for case in 0..10_000 {
        let dim = rng.gen_range(1..6usize);
        let genome = Genome {
            asset_class: if rng.gen::<bool>() { Asset::Yes } else { Asset::No },
            center: (0..dim).map(|_| rng.gen()).collect(),
            radius: rng.gen_range(0.01..(dim as f64).sqrt()),
            steepness: rng.gen_range(0.1..1000.0),
        };
        let point: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
        let price_yes = rng.gen_range(0.01..0.99);
        let cash = rng.gen_range(0.0..3.0);
        let agent = AgentState {
            id: 0,
            genome,
            cash,
            shares_held: 0.0,
            spend: 0.0,
        };

        let expected = oracle_decide(&agent, &point, price_yes, &config);
        let actual = decide(&agent, &point, price_yes, &config).unwrap();
        let agree = match (expected, actual) {
            (Decision::Abstain, Decision::Abstain) => true,
            (Decision::Buy { shares: a }, Decision::Buy { shares: b }) => (a - b).abs() <= 1e-9,
            _ => false,
        };
        if !agree {
            eprintln!("case {case}: oracle {expected:?} vs decide {actual:?}");
            ok = false;
            break;
        }
    }
    verdict("criterion 3 (decision oracle, 1e4 triples)", ok);
}

// ---------------------------------------------------------------------
// Criterion 4: deterministic abstention on an uncovered point.
// ---------------------------------------------------------------------
#[test]
fn criterion_4_abstention_fixture() {
    let agents: Vec<AgentState> = vec![
        (Asset::Yes, vec![0.15, 0.15, 0.15]),
        (Asset::No, vec![0.85, 0.85, 0.85]),
        (Asset::Yes, vec![0.15, 0.85, 0.5]),
        (Asset::No, vec![0.85, 0.15, 0.5]),
        (Asset::Yes, vec![0.5, 0.5, 0.9]),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (asset, center))| {
        AgentState::fresh(
            i as u64,
            Genome {
                asset_class: asset,
                center,
                radius: 0.1,
                steepness: 50.0,
            },
            5.0,
        )
    })
    .collect();

    // The probe point is at least 0.3 away from every center; every ball
    // has radius 0.1.
    let point = vec![0.5, 0.5, 0.2];
    let config = MarketConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let result = run_market(agents, &point, &config, &mut rng).unwrap();

    let ok = !result.scored
        && result.ledger.is_empty()
        && result.close_price_yes == 0.5
        && result.holdings.is_empty();
    verdict("criterion 4 (deterministic abstention)", ok);
}

// ---------------------------------------------------------------------
// Criterion 5: GA selection property over 100 randomized generations.
// ---------------------------------------------------------------------
#[test]
fn criterion_5_selection_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC05);
    let claims: Vec<LabeledPoint> = (0..10)
        .map(|i| LabeledPoint {
            id: format!("t{i}"),
            point: vec![0.1 * (i % 5) as f64 + 0.1, if i < 5 { 0.2 } else { 0.8 }],
            label: if i < 5 { Label::Replicable } else { Label::NotReplicable },
        })
        .collect();
    let config = EvolutionConfig::default();
    let mut ok = true;

    for generation in 0..100u64 {
        let population: Vec<Agent> = (0..config.population_size)
            .map(|i| Agent {
                id: i as u64,
                genome: Genome {
                    asset_class: if rng.gen::<bool>() { Asset::Yes } else { Asset::No },
                    center: vec![rng.gen(), rng.gen()],
                    radius: rng.gen_range(0.01..1.4),
                    steepness: rng.gen_range(0.1..1000.0),
                },
            })
            .collect();
        let profits: BTreeMap<u64, f64> = population
            .iter()
            .map(|a| (a.id, rng.gen_range(-2.0..2.0)))
            .collect();
        let stats = GenerationStats {
            generation: generation as u32,
            survivor_count: profits.values().filter(|p| **p > 0.0).count(),
            agent_profit: profits.clone(),
            rmse: 0.5,
            coverage: 0.5,
        };
        let mut next_id = config.population_size as u64;
        let mut stream = ChaCha8Rng::seed_from_u64(generation.wrapping_mul(31) ^ 0xAC05);
        let next =
            select_and_reproduce(&population, &stats, &claims, &config, &mut next_id, &mut stream)
                .unwrap();

        ok &= next.len() == config.population_size;
        for agent in &next {
            ok &= agent.genome.is_within_bounds();
            if (agent.id as usize) < config.population_size {
                // A carried-over id must have been profitable and unchanged.
                ok &= profits[&agent.id] > 0.0;
                ok &= population[agent.id as usize].genome == agent.genome;
            }
        }
        if !ok {
            eprintln!("failed at randomized generation {generation}");
            break;
        }
    }
    verdict("criterion 5 (GA selection, 100 generations)", ok);
}

// ---------------------------------------------------------------------
// Criterion 6: metrics oracle on 1e3 randomized score/label sets.
// ---------------------------------------------------------------------
fn make_score(id: &str, close: Option<f64>) -> ClaimScore {
    let market = MarketResult {
        close_price_yes: close.unwrap_or(0.5),
        ledger: Vec::new(),
        scored: close.is_some(),
        rounds_run: 1,
        holdings: BTreeMap::new(),
    };
    // Route through the library constructor used everywhere else.
    let score = close;
    let prediction = match score {
        None => Prediction::Abstain,
        Some(p) if p > 0.5 + 1e-9 => Prediction::Replicable,
        Some(p) if p < 0.5 - 1e-9 => Prediction::NotReplicable,
        Some(_) => Prediction::Abstain,
    };
    ClaimScore {
        claim_id: id.to_string(),
        score: if prediction == Prediction::Abstain { None } else { score },
        prediction,
        market,
    }
}

#[test]
fn criterion_6_metrics_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC06);
    let mut ok = true;

    for case in 0..1_000 {
        let n = rng.gen_range(1..60usize);
        let mut scores = Vec::with_capacity(n);
        let mut labels = BTreeMap::new();
        for i in 0..n {
            let id = format!("c{i}");
            let close = if rng.gen::<f64>() < 0.3 {
                None
            } else {
                Some(rng.gen_range(0.001..0.999))
            };
            scores.push(make_score(&id, close));
            labels.insert(
                id,
                if rng.gen::<bool>() { Label::Replicable } else { Label::NotReplicable },
            );
        }
        let report = compute_metrics(&scores, &labels).unwrap();

        // Brute-force recount, written from the definitions.
        let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
        let mut scored = 0usize;
        for s in &scores {
            let Some(price) = s.score else { continue };
            scored += 1;
            let predicted_yes = price > 0.5;
            match (predicted_yes, labels[&s.claim_id]) {
                (true, Label::Replicable) => tp += 1,
                (true, Label::NotReplicable) => fp += 1,
                (false, Label::NotReplicable) => tn += 1,
                (false, Label::Replicable) => fn_ += 1,
            }
        }
        ok &= report.confusion.true_positives == tp
            && report.confusion.false_positives == fp
            && report.confusion.true_negatives == tn
            && report.confusion.false_negatives == fn_
            && report.n_scored == scored;

        if scored > 0 {
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
            let acc = (tp + tn) as f64 / scored as f64;
            let prec_pos = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
            let rec_pos = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
            let prec_neg = if tn + fn_ > 0 { tn as f64 / (tn + fn_) as f64 } else { 0.0 };
            let rec_neg = if tn + fp > 0 { tn as f64 / (tn + fp) as f64 } else { 0.0 };
            let f1 = |p: f64, r: f64| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            ok &= close(report.accuracy.unwrap(), acc);
            ok &= close(report.macro_precision.unwrap(), 0.5 * (prec_pos + prec_neg));
            ok &= close(report.macro_recall.unwrap(), 0.5 * (rec_pos + rec_neg));
            ok &= close(
                report.macro_f1.unwrap(),
                0.5 * (f1(prec_pos, rec_pos) + f1(prec_neg, rec_neg)),
            );
        } else {
            ok &= report.accuracy.is_none() && report.macro_f1.is_none();
        }

        if !ok {
            eprintln!("failed at randomized case {case}");
            break;
        }
    }

    // Frozen hand example: TP=3, FN=1, TN=4, FP=0 -> macro F1 0.8730.
    let mut scores = Vec::new();
    let mut labels = BTreeMap::new();
    for (i, (close, label)) in [
        (0.9, Label::Replicable),
        (0.8, Label::Replicable),
        (0.7, Label::Replicable),
        (0.2, Label::Replicable),
        (0.1, Label::NotReplicable),
        (0.2, Label::NotReplicable),
        (0.3, Label::NotReplicable),
        (0.4, Label::NotReplicable),
    ]
    .iter()
    .enumerate()
    {
        let id = format!("h{i}");
        scores.push(make_score(&id, Some(*close)));
        labels.insert(id, *label);
    }
    let report = compute_metrics(&scores, &labels).unwrap();
    ok &= (report.macro_f1.unwrap() - 0.8730).abs() < 5e-5;
    ok &= (report.accuracy.unwrap() - 0.875).abs() < 1e-12;
    ok &= (report.macro_precision.unwrap() - 0.9).abs() < 1e-12;
    ok &= (report.macro_recall.unwrap() - 0.875).abs() < 1e-12;

    verdict("criterion 6 (metrics oracle, 1e3 sets)", ok);
}

// ---------------------------------------------------------------------
// Criterion 7: cmd_cv determinism, including across thread counts.
// ---------------------------------------------------------------------
fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn criterion_7_cv_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let schema = FeatureSchema::generic(41);
    let records = synthetic_claims(&SyntheticSpec::default());
    let data = tmp.path().join("claims.csv");
    write_csv(&data, &schema, &records);

    let run = |out: &Path, jobs: usize| {
        let status = Command::new(env!("CARGO_BIN_EXE_repmarket"))
            .args([
                "cv",
                "--data",
                data.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "42",
                "--generations",
                "8",
                "--folds",
                "5",
                "--jobs",
                &jobs.to_string(),
            ])
            .status()
            .expect("failed to launch repmarket");
        assert!(status.success(), "cv run failed");
    };

    let out_a = tmp.path().join("run_a");
    let out_b = tmp.path().join("run_b");
    let out_c = tmp.path().join("run_c");
    run(&out_a, 1);
    run(&out_b, 1);
    run(&out_c, 4);

    // The config copy records the invocation itself (output path, thread
    // count); every report, ledger, score, model and log must be
    // byte-identical across reruns and thread counts.
    let strip_config = |mut snap: BTreeMap<String, Vec<u8>>| {
        let had_config = snap.remove("config.txt").is_some();
        assert!(had_config, "run is missing its config copy");
        snap
    };
    let snap_a = strip_config(snapshot_dir(&out_a));
    let snap_b = strip_config(snapshot_dir(&out_b));
    let snap_c = strip_config(snapshot_dir(&out_c));
    let ok_serial = snap_a == snap_b;
    let ok_parallel = snap_a == snap_c;
    let ok_files = snap_a.keys().any(|k| k.ends_with("pooled.report.json"))
        && snap_a.keys().filter(|k| k.contains("fold_") && k.ends_with(".report.json")).count() == 5
        && snap_a.keys().any(|k| k.starts_with("ledgers/"));

    verdict(
        "criterion 7 (cv determinism incl. jobs > 1)",
        ok_serial && ok_parallel && ok_files,
    );
}

// ---------------------------------------------------------------------
// Criterion 8: synthetic end-to-end experiment with reference settings.
// ---------------------------------------------------------------------
#[test]
fn criterion_8_synthetic_end_to_end() {
    let spec = SyntheticSpec::default();
    let schema = FeatureSchema::generic(spec.dimension);
    let records = synthetic_claims(&spec);
    assert_eq!(records.len(), 192);

    let config = EvolutionConfig {
        generations: 50,
        population_size: 5,
        initial_cash: 5.0,
        liquidity_b: 1.0,
        initial_price: 0.5,
        master_seed: 42,
        ..EvolutionConfig::default()
    };
    let plan = split_folds(&records, 5, config.master_seed).unwrap();
    let outcome = cross_validate(&schema, &records, &plan, &config).unwrap();

    let coverage = outcome.pooled.coverage;
    let accuracy = outcome.pooled.accuracy.unwrap_or(0.0);
    let macro_f1 = outcome.pooled.macro_f1.unwrap_or(0.0);
    println!(
        "criterion 8 observables: coverage={coverage:.4} accuracy={accuracy:.4} macro_f1={macro_f1:.4}"
    );
    for fold in &outcome.folds {
        println!(
            "  fold {}: scored {}/{} accuracy={} f1={} best_rmse={:.4} (gen {})",
            fold.fold,
            fold.report.n_scored,
            fold.report.n_total,
            fold.report.accuracy.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
            fold.report.macro_f1.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
            fold.model.best_rmse,
            fold.model.best_generation,
        );
    }

    // The running best training RMSE never increases, and the stored model
    // is the minimum over all evaluated generations.
    let mut rmse_ok = true;
    for fold in &outcome.folds {
        let mut running = f64::INFINITY;
        let mut prev_running = f64::INFINITY;
        for stats in &fold.history {
            running = running.min(stats.rmse);
            rmse_ok &= running <= prev_running;
            prev_running = running;
        }
        rmse_ok &= (fold.model.best_rmse - running).abs() < 1e-15;
    }

    let ok = (0.3..=0.9).contains(&coverage) && accuracy >= 0.85 && macro_f1 >= 0.80 && rmse_ok;
    verdict("criterion 8 (synthetic end-to-end, reference settings)", ok);
}
