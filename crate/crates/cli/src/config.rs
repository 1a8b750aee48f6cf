//! Experiment configuration: a flat `key = value` file mirroring the
//! command-line flags, with flags winning over file entries. The merged
//! configuration is copied into every output directory so a run can be
//! reproduced from its own artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use repmarket::EvolutionConfig;

/// Fully resolved configuration of one command invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub generations: u32,
    pub population: usize,
    pub cash: f64,
    pub liquidity: f64,
    pub initial_price: f64,
    pub folds: usize,
    pub jobs: usize,
    pub max_rounds: u32,
    pub unit_shares: f64,
    pub min_buy_shares: f64,
    pub margin: f64,
    pub mutation_sigma_center: f64,
    pub mutation_log_sigma: f64,
    pub asset_flip_probability: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let evo = EvolutionConfig::default();
        Self {
            data: None,
            schema: None,
            model: None,
            out: None,
            seed: evo.master_seed,
            generations: evo.generations,
            population: evo.population_size,
            cash: evo.initial_cash,
            liquidity: evo.liquidity_b,
            initial_price: evo.initial_price,
            folds: 5,
            jobs: 0,
            max_rounds: evo.max_rounds,
            unit_shares: evo.unit_shares,
            min_buy_shares: evo.min_buy_shares,
            margin: evo.margin,
            mutation_sigma_center: evo.mutation_sigma_center,
            mutation_log_sigma: evo.mutation_log_sigma,
            asset_flip_probability: evo.asset_flip_probability,
        }
    }
}

impl RunConfig {
    /// Applies one `key = value` entry.
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| anyhow::anyhow!("config key `{key}`: cannot parse `{value}`: {e}"))
        }
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "schema" => self.schema = Some(PathBuf::from(value)),
            "model" => self.model = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "seed" => self.seed = parse(key, value)?,
            "generations" => self.generations = parse(key, value)?,
            "population" => self.population = parse(key, value)?,
            "cash" => self.cash = parse(key, value)?,
            "liquidity" => self.liquidity = parse(key, value)?,
            "initial_price" => self.initial_price = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            "max_rounds" => self.max_rounds = parse(key, value)?,
            "unit_shares" => self.unit_shares = parse(key, value)?,
            "min_buy_shares" => self.min_buy_shares = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "mutation_sigma_center" => self.mutation_sigma_center = parse(key, value)?,
            "mutation_log_sigma" => self.mutation_log_sigma = parse(key, value)?,
            "asset_flip_probability" => self.asset_flip_probability = parse(key, value)?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    /// Loads entries from a flat key-value file into an existing config.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`", path.display(), lineno + 1);
            };
            self.set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        Ok(())
    }

    /// Serializes the config in the same flat format `apply_file` reads.
    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        if let Some(p) = &self.data {
            writeln!(out, "data = {}", p.display()).unwrap();
        }
        if let Some(p) = &self.schema {
            writeln!(out, "schema = {}", p.display()).unwrap();
        }
        if let Some(p) = &self.model {
            writeln!(out, "model = {}", p.display()).unwrap();
        }
        if let Some(p) = &self.out {
            writeln!(out, "out = {}", p.display()).unwrap();
        }
        writeln!(out, "seed = {}", self.seed).unwrap();
        writeln!(out, "generations = {}", self.generations).unwrap();
        writeln!(out, "population = {}", self.population).unwrap();
        writeln!(out, "cash = {}", self.cash).unwrap();
        writeln!(out, "liquidity = {}", self.liquidity).unwrap();
        writeln!(out, "initial_price = {}", self.initial_price).unwrap();
        writeln!(out, "folds = {}", self.folds).unwrap();
        writeln!(out, "jobs = {}", self.jobs).unwrap();
        writeln!(out, "max_rounds = {}", self.max_rounds).unwrap();
        writeln!(out, "unit_shares = {}", self.unit_shares).unwrap();
        writeln!(out, "min_buy_shares = {}", self.min_buy_shares).unwrap();
        writeln!(out, "margin = {}", self.margin).unwrap();
        writeln!(out, "mutation_sigma_center = {}", self.mutation_sigma_center).unwrap();
        writeln!(out, "mutation_log_sigma = {}", self.mutation_log_sigma).unwrap();
        writeln!(out, "asset_flip_probability = {}", self.asset_flip_probability).unwrap();
        out
    }

    /// The evolution/market parameters of this run.
    pub fn evolution_config(&self) -> EvolutionConfig {
        EvolutionConfig {
            generations: self.generations,
            population_size: self.population,
            initial_cash: self.cash,
            liquidity_b: self.liquidity,
            initial_price: self.initial_price,
            max_rounds: self.max_rounds,
            unit_shares: self.unit_shares,
            min_buy_shares: self.min_buy_shares,
            margin: self.margin,
            mutation_sigma_center: self.mutation_sigma_center,
            mutation_log_sigma: self.mutation_log_sigma,
            asset_flip_probability: self.asset_flip_probability,
            master_seed: self.seed,
        }
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data.as_deref().context("no dataset path: pass --data or set `data` in the config file")
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out.as_deref().context("no output directory: pass --out or set `out` in the config file")
    }

    pub fn require_model(&self) -> Result<&Path> {
        self.model.as_deref().context("no model file: pass --model or set `model` in the config file")
    }
}
