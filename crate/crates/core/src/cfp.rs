//! Executable coalition formation protocol (CFP).
//!
//! A negotiation cluster of coalition heads runs one proposal per round. The
//! initiator ranks the cluster on its ordered interference list, picks a
//! target with a [`ProposerRule`], and the target answers with an
//! [`AcceptorRule`]. Accepted proposals merge the two coalitions and lower
//! the level by one; rejected ones may swap the rejecting coalition for a
//! standby one.
//!
//! Two network models drive the lists:
//!
//! * `Abstract` draws every list as an independent uniform permutation. In a
//!   partially correlated network each entry of the target's list is visible
//!   with probability `(m - k)/(M - k)`, where `m` is the level, `M` the
//!   number of links in the system and `k` the number of entries the
//!   initiator ranks below its own signal.
//! * `Geometric` reads received levels off a [`Network`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::VisibilityModel;
use crate::error::{domain, Error, Result};
use crate::netsim::{coalition_benefit_check, generate_network, Network, PlacementConfig};

/// How an initiator chooses whom to propose to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposerRule {
    /// Any link received above the initiator's useful signal.
    AboveOwnLevel,
    /// The strongest interferer.
    MaxInterferer,
    /// Any link at most `delta` positions below the useful signal.
    WithinDelta(u32),
    /// A uniformly chosen peer, for when only aggregate interference is known.
    RandomTarget,
}

/// How a target decides on a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcceptorRule {
    /// Accept if the proposer is received above the target's useful signal.
    AboveOwnLevel,
    /// Accept if the proposer is the target's strongest interferer.
    MaxInterferer,
    /// Accept if the proposer is at most `delta` positions below the useful signal.
    WithinDelta(u32),
    /// Merge tentatively and keep the coalition only if every member gains
    /// over transmitting with all links active. Geometric model only.
    Experiential,
}

/// Level at which a merged coalition appears on other links' lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoalitionRepresentation {
    HeadLevel,
    SumLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub proposer: ProposerRule,
    pub acceptor: AcceptorRule,
    pub representation: CoalitionRepresentation,
    /// Rate charged per member when the experiential rule evaluates a merge.
    pub signaling_rate: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            proposer: ProposerRule::AboveOwnLevel,
            acceptor: AcceptorRule::AboveOwnLevel,
            representation: CoalitionRepresentation::HeadLevel,
            signaling_rate: 0.0,
        }
    }
}

impl ProtocolConfig {
    fn validate(&self) -> Result<()> {
        if matches!(self.proposer, ProposerRule::WithinDelta(0)) || matches!(self.acceptor, AcceptorRule::WithinDelta(0)) {
            return Err(Error::Config("delta must be at least 1".into()));
        }
        if !(self.signaling_rate.is_finite() && self.signaling_rate >= 0.0) {
            return Err(Error::Config("signaling rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum NetworkModel {
    Abstract(VisibilityModel),
    Geometric(Arc<Network>),
}

/// A group of links negotiating through its head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coalition {
    head: usize,
    /// Sorted member ids, head included.
    members: Vec<usize>,
}

impl Coalition {
    fn singleton(id: usize) -> Self {
        Coalition {
            head: id,
            members: vec![id],
        }
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepEvent {
    /// Two coalitions merged; `level` is the new number of negotiators.
    Merged { level: usize },
    /// The target declined; `replaced` if it was swapped for a standby coalition.
    Rejected { replaced: bool },
    /// The proposer rule found no admissible target.
    Stalled,
}

impl StepEvent {
    pub fn label(&self) -> &'static str {
        match self {
            StepEvent::Merged { .. } => "merged",
            StepEvent::Rejected { replaced: false } => "rejected",
            StepEvent::Rejected { replaced: true } => "rejected_replaced",
            StepEvent::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub round: u64,
    pub level_before: usize,
    pub event: StepEvent,
    /// Head of the initiating coalition.
    pub initiator: usize,
    /// One-based rank of the initiator's useful signal on its own list.
    pub initiator_rank: usize,
    /// Head of the target coalition, if a proposal was made.
    pub target: Option<usize>,
    pub level_after: usize,
}

/// One negotiator's ranking of the cluster. `entries` holds
/// `(cluster index, level)` sorted ascending.
struct RankedCluster {
    entries: Vec<(usize, f64)>,
    own_position: usize,
}

impl RankedCluster {
    fn position_of(&self, cluster_idx: usize) -> usize {
        self.entries
            .iter()
            .position(|e| e.0 == cluster_idx)
            .expect("every negotiator appears on every list")
    }
}

/// Live protocol state.
#[derive(Debug, Clone)]
pub struct CfpState {
    model: NetworkModel,
    protocol: ProtocolConfig,
    cluster: Vec<Coalition>,
    standby: Vec<Coalition>,
    active: BTreeSet<usize>,
    next_id: usize,
    round: u64,
    rng: ChaCha8Rng,
}

impl CfpState {
    /// Starts `n` singleton negotiators; remaining links go to the standby pool.
    pub fn new(model: NetworkModel, n: usize, protocol: ProtocolConfig, seed: u64) -> Result<Self> {
        protocol.validate()?;
        if n == 0 {
            return Err(domain("cluster size N must be at least 1"));
        }
        let total = match &model {
            NetworkModel::Abstract(VisibilityModel::Fcn) => n,
            NetworkModel::Abstract(VisibilityModel::Pcn { total_links }) => *total_links as usize,
            NetworkModel::Geometric(net) => net.len(),
        };
        if n > total {
            return Err(domain(format!("N exceeds M (N = {n}, M = {total})")));
        }
        if matches!(model, NetworkModel::Abstract(_)) && protocol.acceptor == AcceptorRule::Experiential {
            return Err(Error::Config(
                "the experiential acceptor needs channel gains; use the geometric model".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids: Vec<usize> = (0..total).collect();
        ids.shuffle(&mut rng);
        let standby = ids.split_off(n).into_iter().map(Coalition::singleton).collect();
        let cluster = ids.into_iter().map(Coalition::singleton).collect();
        Ok(CfpState {
            model,
            protocol,
            cluster,
            standby,
            active: (0..total).collect(),
            next_id: total,
            round: 0,
            rng,
        })
    }

    /// Number of negotiators.
    pub fn level(&self) -> usize {
        self.cluster.len()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn negotiators(&self) -> &[Coalition] {
        &self.cluster
    }

    pub fn standby(&self) -> &[Coalition] {
        &self.standby
    }

    pub fn active_links(&self) -> &BTreeSet<usize> {
        &self.active
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    /// Coalitions in the cluster and the standby pool partition the active
    /// links, every head is a member, and the cluster is not empty.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.cluster.is_empty() {
            return Err("negotiation cluster is empty".into());
        }
        let mut seen = BTreeSet::new();
        for c in self.cluster.iter().chain(&self.standby) {
            if !c.members.contains(&c.head) {
                return Err(format!("head {} is not a member of its coalition", c.head));
            }
            for &m in &c.members {
                if !seen.insert(m) {
                    return Err(format!("link {m} belongs to two coalitions"));
                }
            }
        }
        if seen != self.active {
            return Err("coalitions do not cover the active links exactly".into());
        }
        Ok(())
    }

    fn total_links(&self) -> usize {
        self.active.len()
    }

    fn abstract_ranking(&mut self) -> RankedCluster {
        let mut order: Vec<usize> = (0..self.cluster.len()).collect();
        order.shuffle(&mut self.rng);
        let entries: Vec<(usize, f64)> = order.into_iter().enumerate().map(|(pos, idx)| (idx, pos as f64)).collect();
        RankedCluster { entries, own_position: 0 }
    }

    fn geometric_ranking(&self, net: &Network, viewer: usize) -> RankedCluster {
        let head = self.cluster[viewer].head;
        let mut entries: Vec<(usize, f64)> = self
            .cluster
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                let level = if idx == viewer {
                    net.received(head, head)
                } else {
                    match self.protocol.representation {
                        CoalitionRepresentation::HeadLevel => net.received(head, c.head),
                        CoalitionRepresentation::SumLevel => c.members.iter().map(|&j| net.received(head, j)).sum(),
                    }
                };
                (idx, level)
            })
            .collect();
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(self.cluster[a.0].head.cmp(&self.cluster[b.0].head)));
        let own_position = entries.iter().position(|e| e.0 == viewer).unwrap_or(0);
        RankedCluster { entries, own_position }
    }

    fn ranking(&mut self, viewer: usize) -> RankedCluster {
        match &self.model {
            NetworkModel::Abstract(_) => {
                let mut r = self.abstract_ranking();
                r.own_position = r.position_of(viewer);
                r
            }
            NetworkModel::Geometric(net) => {
                let net = Arc::clone(net);
                self.geometric_ranking(&net, viewer)
            }
        }
    }

    fn choose_target(&mut self, list: &RankedCluster) -> Option<usize> {
        let own = list.own_position;
        let own_level = list.entries[own].1;
        let candidates: Vec<usize> = match self.protocol.proposer {
            ProposerRule::AboveOwnLevel => (0..list.entries.len()).filter(|&p| list.entries[p].1 > own_level).collect(),
            ProposerRule::MaxInterferer => {
                let top = list.entries.len() - 1;
                vec![if own == top { top - 1 } else { top }]
            }
            ProposerRule::WithinDelta(delta) => (0..list.entries.len())
                .filter(|&p| p != own && p + delta as usize >= own)
                .collect(),
            ProposerRule::RandomTarget => (0..list.entries.len()).filter(|&p| p != own).collect(),
        };
        candidates.choose(&mut self.rng).map(|&p| list.entries[p].0)
    }

    /// Visibility of each entry on the target's list. Always visible in the
    /// geometric and FCN models.
    fn visibility_mask(&mut self, len: usize, weaker_than_initiator: usize) -> Vec<bool> {
        let q = match self.model {
            NetworkModel::Abstract(VisibilityModel::Pcn { .. }) => {
                let k = weaker_than_initiator as f64;
                (len as f64 - k) / (self.total_links() as f64 - k)
            }
            _ => 1.0,
        };
        if q >= 1.0 {
            return vec![true; len];
        }
        (0..len).map(|_| self.rng.gen_bool(q)).collect()
    }

    fn accepts(&mut self, initiator: usize, target: usize, initiator_list: &RankedCluster) -> bool {
        if self.protocol.acceptor == AcceptorRule::Experiential {
            let NetworkModel::Geometric(net) = &self.model else {
                return false;
            };
            let mut members = self.cluster[initiator].members.clone();
            members.extend_from_slice(&self.cluster[target].members);
            return coalition_benefit_check(net, &members, self.protocol.signaling_rate).unwrap_or(false);
        }

        let list = self.ranking(target);
        let visible = self.visibility_mask(list.entries.len(), initiator_list.own_position);
        let prop = list.position_of(initiator);
        let own = list.own_position;
        match self.protocol.acceptor {
            AcceptorRule::AboveOwnLevel => visible[prop] && visible[own] && list.entries[prop].1 > list.entries[own].1,
            AcceptorRule::MaxInterferer => {
                let strongest = (0..list.entries.len()).rev().find(|&p| p != own && visible[p]);
                strongest == Some(prop)
            }
            AcceptorRule::WithinDelta(delta) => visible[prop] && visible[own] && prop + delta as usize >= own,
            AcceptorRule::Experiential => unreachable!(),
        }
    }

    /// Runs one negotiation round.
    pub fn step(&mut self) -> Result<StepRecord> {
        let level_before = self.level();
        if level_before < 2 {
            return Err(Error::AlreadyAbsorbed);
        }
        let round = self.round;
        self.round += 1;

        let initiator = self.rng.gen_range(0..level_before);
        let initiator_head = self.cluster[initiator].head;
        let list = self.ranking(initiator);
        let Some(target) = self.choose_target(&list) else {
            return Ok(StepRecord {
                round,
                level_before,
                event: StepEvent::Stalled,
                initiator: initiator_head,
                initiator_rank: list.own_position + 1,
                target: None,
                level_after: level_before,
            });
        };
        let target_head = self.cluster[target].head;

        let event = if self.accepts(initiator, target, &list) {
            let absorbed = self.cluster.remove(target);
            let host = if target < initiator { initiator - 1 } else { initiator };
            let merged = &mut self.cluster[host];
            merged.members.extend(absorbed.members);
            merged.members.sort_unstable();
            StepEvent::Merged { level: self.level() }
        } else if self.standby.is_empty() {
            StepEvent::Rejected { replaced: false }
        } else {
            let pick = self.rng.gen_range(0..self.standby.len());
            std::mem::swap(&mut self.cluster[target], &mut self.standby[pick]);
            StepEvent::Rejected { replaced: true }
        };

        Ok(StepRecord {
            round,
            level_before,
            event,
            initiator: initiator_head,
            initiator_rank: list.own_position + 1,
            target: Some(target_head),
            level_after: self.level(),
        })
    }

    /// A new link joins the negotiation as a singleton. Abstract models mint a
    /// fresh link; the geometric model activates a uniformly drawn standby
    /// coalition. Returns the new level.
    pub fn apply_arrival(&mut self) -> Result<usize> {
        match self.model {
            NetworkModel::Abstract(_) => {
                let id = self.next_id;
                self.next_id += 1;
                self.active.insert(id);
                self.cluster.push(Coalition::singleton(id));
            }
            NetworkModel::Geometric(_) => {
                if self.standby.is_empty() {
                    return Err(domain("no standby link available to arrive"));
                }
                let pick = self.rng.gen_range(0..self.standby.len());
                let c = self.standby.swap_remove(pick);
                self.cluster.push(c);
            }
        }
        Ok(self.level())
    }

    /// A uniformly chosen negotiator leaves. A multi-member coalition survives
    /// under its smallest remaining member; a singleton disappears and the
    /// level drops by one. Returns the new level.
    pub fn apply_departure(&mut self) -> Result<usize> {
        if self.level() < 2 {
            return Err(domain("departure needs at least two negotiators"));
        }
        let idx = self.rng.gen_range(0..self.level());
        self.depart_negotiator(idx);
        Ok(self.level())
    }

    fn depart_negotiator(&mut self, idx: usize) {
        let coalition = &mut self.cluster[idx];
        let leaving = coalition.head;
        coalition.members.retain(|&m| m != leaving);
        self.active.remove(&leaving);
        match coalition.members.first() {
            Some(&next) => coalition.head = next,
            None => {
                self.cluster.remove(idx);
            }
        }
    }

    #[cfg(test)]
    fn depart_head(&mut self, head: usize) {
        let idx = self.cluster.iter().position(|c| c.head == head).unwrap();
        self.depart_negotiator(idx);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// Grand coalition reached after `rounds` rounds.
    Absorbed { rounds: u64 },
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub outcome: Outcome,
    pub records: Vec<StepRecord>,
}

impl Trace {
    /// Writes `round,level_before,event,initiator,target,level_after`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["round", "level_before", "event", "initiator", "target", "level_after"])?;
        for r in &self.records {
            w.write_record([
                r.round.to_string(),
                r.level_before.to_string(),
                r.event.label().to_string(),
                r.initiator.to_string(),
                r.target.map(|t| t.to_string()).unwrap_or_default(),
                r.level_after.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Steps until the grand coalition forms or `max_rounds` rounds have run.
pub fn run(state: &mut CfpState, max_rounds: u64) -> Result<Trace> {
    let mut records = Vec::new();
    let outcome = drive(state, max_rounds, |r| records.push(*r))?;
    Ok(Trace { outcome, records })
}

fn drive(state: &mut CfpState, max_rounds: u64, mut on_step: impl FnMut(&StepRecord)) -> Result<Outcome> {
    let mut rounds = 0;
    while state.level() > 1 {
        if rounds == max_rounds {
            return Ok(Outcome::Timeout);
        }
        let record = state.step()?;
        debug_assert!(state.check_invariants().is_ok());
        on_step(&record);
        rounds += 1;
    }
    Ok(Outcome::Absorbed { rounds })
}

/// Where each Monte Carlo run gets its network from.
#[derive(Debug, Clone)]
pub enum SimModel {
    Abstract(VisibilityModel),
    /// Every run negotiates on the same placed network.
    Network(Arc<Network>),
    /// Every run places a fresh network of `links` links.
    RandomNetworks { links: usize, placement: PlacementConfig },
}

#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub model: SimModel,
    pub cluster_size: usize,
    pub protocol: ProtocolConfig,
    pub runs: u32,
    pub max_rounds: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub stay: u64,
    pub advance: u64,
}

impl LevelCounts {
    pub fn visits(&self) -> u64 {
        self.stay + self.advance
    }

    pub fn advance_frequency(&self) -> f64 {
        self.advance as f64 / self.visits() as f64
    }

    /// Binomial standard error of the empirical advance frequency.
    pub fn standard_error(&self) -> f64 {
        let p = self.advance_frequency();
        (p * (1.0 - p) / self.visits() as f64).sqrt()
    }

    fn add(&mut self, other: &LevelCounts) {
        self.stay += other.stay;
        self.advance += other.advance;
    }
}

/// Aggregates over independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    /// Rounds to the grand coalition per run, `None` on timeout.
    pub samples: Vec<Option<u64>>,
    /// Stay/advance counts per level.
    pub transitions: BTreeMap<usize, LevelCounts>,
    /// Mean over completed runs.
    pub mean_rounds: f64,
    /// Unbiased sample variance over completed runs.
    pub var_rounds: f64,
    /// Standard error of `mean_rounds`.
    pub se_mean: f64,
}

impl RunStats {
    fn from_runs(runs: Vec<(Option<u64>, BTreeMap<usize, LevelCounts>)>) -> Self {
        let mut transitions: BTreeMap<usize, LevelCounts> = BTreeMap::new();
        let mut samples = Vec::with_capacity(runs.len());
        for (sample, counts) in runs {
            samples.push(sample);
            for (level, c) in counts {
                transitions.entry(level).or_default().add(&c);
            }
        }
        let done: Vec<f64> = samples.iter().flatten().map(|&r| r as f64).collect();
        let n = done.len() as f64;
        let mean_rounds = if done.is_empty() { f64::NAN } else { done.iter().sum::<f64>() / n };
        let var_rounds = if done.len() < 2 {
            0.0
        } else {
            done.iter().map(|x| (x - mean_rounds).powi(2)).sum::<f64>() / (n - 1.0)
        };
        RunStats {
            samples,
            transitions,
            mean_rounds,
            var_rounds,
            se_mean: (var_rounds / n).sqrt(),
        }
    }

    pub fn completed(&self) -> usize {
        self.samples.iter().flatten().count()
    }

    pub fn timeouts(&self) -> usize {
        self.samples.len() - self.completed()
    }
}

/// Per-run seed derived from the master seed and the run index.
pub fn derive_seed(master: u64, run: u64) -> u64 {
    let mut z = master ^ run.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn single_run(config: &MonteCarloConfig, run: u64) -> Result<(Option<u64>, BTreeMap<usize, LevelCounts>)> {
    let seed = derive_seed(config.seed, run);
    let model = match &config.model {
        SimModel::Abstract(v) => NetworkModel::Abstract(*v),
        SimModel::Network(net) => NetworkModel::Geometric(Arc::clone(net)),
        SimModel::RandomNetworks { links, placement } => {
            let placement = PlacementConfig { seed, ..*placement };
            NetworkModel::Geometric(Arc::new(generate_network(*links, &placement)?))
        }
    };
    let mut state = CfpState::new(model, config.cluster_size, config.protocol, seed)?;
    let mut counts: BTreeMap<usize, LevelCounts> = BTreeMap::new();
    let outcome = drive(&mut state, config.max_rounds, |r| {
        let c = counts.entry(r.level_before).or_default();
        if matches!(r.event, StepEvent::Merged { .. }) {
            c.advance += 1;
        } else {
            c.stay += 1;
        }
    })?;
    let sample = match outcome {
        Outcome::Absorbed { rounds } => Some(rounds),
        Outcome::Timeout => None,
    };
    Ok((sample, counts))
}

/// Runs `config.runs` independent protocol runs in parallel. The result
/// depends only on the configuration and seed.
pub fn monte_carlo(config: &MonteCarloConfig) -> Result<RunStats> {
    if config.runs == 0 {
        return Err(domain("at least one run is required"));
    }
    let runs = (0..u64::from(config.runs))
        .into_par_iter()
        .map(|i| single_run(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunStats::from_runs(runs))
}
