//! Per-command parameter sets.
//!
//! The same structs back the clap flags and the JSON config file, so every
//! field is optional; `merge` fills gaps from a lower-precedence source and
//! `resolve` applies defaults and validates.

use std::path::{Path, PathBuf};

use clap::Args;
use coalition_core::cfp::{AcceptorRule, CoalitionRepresentation, ProposerRule, ProtocolConfig};
use coalition_core::chain::VisibilityModel;
use coalition_core::netsim::PlacementConfig;
use coalition_core::rate::SignalingCost;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Contents of a `--config` file: one flat section per command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub chain: ChainArgs,
    pub optimize: OptimizeArgs,
    pub simulate: SimulateArgs,
    pub validate: ValidateArgs,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    #[cfg(test)]
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

macro_rules! merge_fields {
    ($dst:ident, $src:ident; $($field:ident),* $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field.clone(); } )*
    };
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ChainKind {
    Fcn,
    Pcn,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainArgs {
    /// Visibility model.
    #[arg(long, value_enum)]
    pub model: Option<ChainKind>,
    /// Total number of links (PCN only).
    #[arg(long)]
    pub m: Option<u32>,
    /// Cluster size.
    #[arg(long)]
    pub n: Option<u32>,
    /// Round duration.
    #[arg(long)]
    pub t: Option<f64>,
    /// Output CSV path (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct ChainSettings {
    pub model: VisibilityModel,
    pub n: u32,
    pub t: f64,
    pub out: Option<PathBuf>,
}

impl ChainArgs {
    pub fn merge(mut self, other: &ChainArgs) -> Self {
        merge_fields!(self, other; model, m, n, t, out);
        self
    }

    pub fn resolve(self) -> Result<ChainSettings, CliError> {
        let n = self.n.unwrap_or(5);
        let model = match self.model.unwrap_or(ChainKind::Fcn) {
            ChainKind::Fcn => VisibilityModel::Fcn,
            ChainKind::Pcn => VisibilityModel::Pcn {
                total_links: self.m.ok_or_else(|| config_err("--m is required for the pcn model"))?,
            },
        };
        model.check_cluster(n).map_err(|e| config_err(e.to_string()))?;
        let t = self.t.unwrap_or(1.0);
        if !(t.is_finite() && t > 0.0) {
            return Err(config_err("--t must be positive"));
        }
        Ok(ChainSettings {
            model,
            n,
            t,
            out: self.out,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    Fixed,
    Proportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizeMode {
    /// Evaluate (y, y_bar) tied by `--ybar-ratio`.
    Deterministic,
    /// Derive (y, y_bar) from placed networks and average over placements.
    Placement,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeArgs {
    #[arg(long, value_enum)]
    pub mode: Option<OptimizeMode>,
    /// SNR grid in dB, comma separated and strictly increasing.
    #[arg(long, value_delimiter = ',')]
    pub snr_db: Option<Vec<f64>>,
    /// Interference level as a fraction of the direct SNR.
    #[arg(long)]
    pub ybar_ratio: Option<f64>,
    /// Total number of links.
    #[arg(long)]
    pub m: Option<u32>,
    #[arg(long, value_enum)]
    pub cost_mode: Option<CostMode>,
    /// R_c for the fixed mode, alpha for the proportional mode.
    #[arg(long)]
    pub cost: Option<f64>,
    /// Placements per grid point in placement mode.
    #[arg(long)]
    pub networks: Option<u32>,
    #[command(flatten)]
    #[serde(flatten)]
    pub placement: PlacementArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct OptimizeSettings {
    pub mode: OptimizeMode,
    pub snr_db: Vec<f64>,
    pub ybar_ratio: f64,
    pub m: u32,
    pub cost: SignalingCost,
    pub networks: u32,
    pub placement: PlacementConfig,
    pub out: Option<PathBuf>,
}

impl OptimizeArgs {
    pub fn merge(mut self, other: &OptimizeArgs) -> Self {
        merge_fields!(self, other; mode, snr_db, ybar_ratio, m, cost_mode, cost, networks, seed, out);
        self.placement = self.placement.merge(&other.placement);
        self
    }

    pub fn resolve(self) -> Result<OptimizeSettings, CliError> {
        let snr_db = self
            .snr_db
            .unwrap_or_else(|| (0..=6).map(|k| f64::from(k) * 5.0).collect());
        if snr_db.is_empty() || snr_db.iter().any(|s| !s.is_finite()) {
            return Err(config_err("--snr-db must be a nonempty list of finite values"));
        }
        if snr_db.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("--snr-db must be strictly increasing"));
        }
        let ybar_ratio = self.ybar_ratio.unwrap_or(0.1);
        if !(ybar_ratio.is_finite() && ybar_ratio >= 0.0) {
            return Err(config_err("--ybar-ratio must be nonnegative"));
        }
        let m = self.m.unwrap_or(10);
        if m == 0 {
            return Err(config_err("--m must be at least 1"));
        }
        let value = self.cost.unwrap_or(0.01);
        if !(value.is_finite() && value >= 0.0) {
            return Err(config_err("--cost must be nonnegative"));
        }
        let cost = match self.cost_mode.unwrap_or(CostMode::Fixed) {
            CostMode::Fixed => SignalingCost::Fixed(value),
            CostMode::Proportional => SignalingCost::Proportional(value),
        };
        let networks = self.networks.unwrap_or(200);
        if networks == 0 {
            return Err(config_err("--networks must be at least 1"));
        }
        Ok(OptimizeSettings {
            mode: self.mode.unwrap_or(OptimizeMode::Deterministic),
            snr_db,
            ybar_ratio,
            m,
            cost,
            networks,
            placement: self.placement.resolve(self.seed)?,
            out: self.out,
        })
    }
}

/// Geometry of randomly placed networks.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementArgs {
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long)]
    pub height: Option<f64>,
    /// Maximum transmitter to receiver distance.
    #[arg(long)]
    pub max_link_distance: Option<f64>,
    #[arg(long)]
    pub path_loss_exponent: Option<f64>,
    #[arg(long)]
    pub noise_power: Option<f64>,
}

impl PlacementArgs {
    fn merge(mut self, other: &PlacementArgs) -> Self {
        merge_fields!(self, other; width, height, max_link_distance, path_loss_exponent, noise_power);
        self
    }

    fn resolve(&self, seed: Option<u64>) -> Result<PlacementConfig, CliError> {
        let d = PlacementConfig::default();
        let width = self.width.unwrap_or(d.width);
        let config = PlacementConfig {
            width,
            height: self.height.unwrap_or(d.height),
            max_link_distance: self.max_link_distance.unwrap_or(width / 10.0),
            path_loss_exponent: self.path_loss_exponent.unwrap_or(d.path_loss_exponent),
            tx_power: d.tx_power,
            noise_power: self.noise_power.unwrap_or(d.noise_power),
            seed: seed.unwrap_or(0),
        };
        config.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    Fcn,
    Pcn,
    Geometric,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: Option<SimKind>,
    /// Total number of links.
    #[arg(long)]
    pub m: Option<u32>,
    /// Cluster size.
    #[arg(long)]
    pub n: Option<u32>,
    /// Round duration used for the analytical comparison.
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub runs: Option<u32>,
    #[arg(long)]
    pub max_rounds: Option<u64>,
    /// above | max | delta:<k> | random
    #[arg(long)]
    pub proposer: Option<String>,
    /// above | max | delta:<k> | experiential
    #[arg(long)]
    pub acceptor: Option<String>,
    /// head | sum
    #[arg(long)]
    pub repr: Option<String>,
    /// Signaling rate charged by the experiential rule.
    #[arg(long)]
    pub signaling_rate: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub placement: PlacementArgs,
    /// Write the step trace of the first run to this CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct SimulateSettings {
    pub kind: SimKind,
    pub m: u32,
    pub n: u32,
    pub t: f64,
    pub runs: u32,
    pub max_rounds: u64,
    pub protocol: ProtocolConfig,
    pub placement: PlacementConfig,
    pub trace: Option<PathBuf>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl SimulateSettings {
    /// Chain model the simulation is compared against.
    pub fn analytical_model(&self) -> VisibilityModel {
        match self.kind {
            SimKind::Fcn => VisibilityModel::Fcn,
            SimKind::Pcn | SimKind::Geometric if self.m > self.n => VisibilityModel::Pcn { total_links: self.m },
            _ => VisibilityModel::Fcn,
        }
    }
}

impl SimulateArgs {
    pub fn merge(mut self, other: &SimulateArgs) -> Self {
        merge_fields!(self, other; model, m, n, t, runs, max_rounds, proposer, acceptor, repr,
            signaling_rate, trace, seed, out);
        self.placement = self.placement.merge(&other.placement);
        self
    }

    pub fn resolve(self) -> Result<SimulateSettings, CliError> {
        let kind = self.model.unwrap_or(SimKind::Fcn);
        let n = self.n.unwrap_or(5);
        let m = self.m.unwrap_or(n);
        if n == 0 {
            return Err(config_err("--n must be at least 1"));
        }
        if n > m {
            return Err(config_err(format!("N exceeds M: N = {n}, M = {m}")));
        }
        let runs = self.runs.unwrap_or(20_000);
        if runs == 0 {
            return Err(config_err("--runs must be at least 1"));
        }
        let t = self.t.unwrap_or(1.0);
        if !(t.is_finite() && t > 0.0) {
            return Err(config_err("--t must be positive"));
        }
        let acceptor = parse_acceptor(self.acceptor.as_deref().unwrap_or("above"))?;
        if acceptor == AcceptorRule::Experiential && kind != SimKind::Geometric {
            return Err(config_err("the experiential acceptor needs --model geometric"));
        }
        let signaling_rate = self.signaling_rate.unwrap_or(0.0);
        if !(signaling_rate.is_finite() && signaling_rate >= 0.0) {
            return Err(config_err("--signaling-rate must be nonnegative"));
        }
        let protocol = ProtocolConfig {
            proposer: parse_proposer(self.proposer.as_deref().unwrap_or("above"))?,
            acceptor,
            representation: parse_repr(self.repr.as_deref().unwrap_or("head"))?,
            signaling_rate,
        };
        let seed = self.seed.unwrap_or(0);
        Ok(SimulateSettings {
            kind,
            m,
            n,
            t,
            runs,
            max_rounds: self.max_rounds.unwrap_or(1_000_000),
            protocol,
            placement: self.placement.resolve(Some(seed))?,
            trace: self.trace,
            seed,
            out: self.out,
        })
    }
}

fn parse_delta(s: &str) -> Result<Option<u32>, CliError> {
    let Some(k) = s.strip_prefix("delta:") else { return Ok(None) };
    match k.parse::<u32>() {
        Ok(d) if d >= 1 => Ok(Some(d)),
        _ => Err(config_err(format!("invalid delta in {s:?}: expected an integer >= 1"))),
    }
}

pub fn parse_proposer(s: &str) -> Result<ProposerRule, CliError> {
    if let Some(d) = parse_delta(s)? {
        return Ok(ProposerRule::WithinDelta(d));
    }
    match s {
        "above" | "a" => Ok(ProposerRule::AboveOwnLevel),
        "max" | "b" => Ok(ProposerRule::MaxInterferer),
        "random" | "d" => Ok(ProposerRule::RandomTarget),
        _ => Err(config_err(format!("unknown proposer rule {s:?}; expected above, max, delta:<k> or random"))),
    }
}

pub fn parse_acceptor(s: &str) -> Result<AcceptorRule, CliError> {
    if let Some(d) = parse_delta(s)? {
        return Ok(AcceptorRule::WithinDelta(d));
    }
    match s {
        "above" | "e" => Ok(AcceptorRule::AboveOwnLevel),
        "max" | "f" => Ok(AcceptorRule::MaxInterferer),
        "experiential" | "h" => Ok(AcceptorRule::Experiential),
        _ => Err(config_err(format!(
            "unknown acceptor rule {s:?}; expected above, max, delta:<k> or experiential"
        ))),
    }
}

fn parse_repr(s: &str) -> Result<CoalitionRepresentation, CliError> {
    match s {
        "head" => Ok(CoalitionRepresentation::HeadLevel),
        "sum" => Ok(CoalitionRepresentation::SumLevel),
        _ => Err(config_err(format!("unknown representation {s:?}; expected head or sum"))),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateArgs {
    /// Suites to run (chain, rate, netsim, cfp); all if absent.
    #[arg(long, value_delimiter = ',')]
    pub suite: Option<Vec<String>>,
    /// Runs per Monte Carlo check.
    #[arg(long)]
    pub runs: Option<u32>,
    /// Offset added to the closed-form PCN acceptance probability.
    #[arg(long, hide = true)]
    #[serde(skip)]
    pub inject_fault: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ValidateArgs {
    pub fn merge(mut self, other: &ValidateArgs) -> Self {
        merge_fields!(self, other; suite, runs, seed, out);
        self
    }
}
