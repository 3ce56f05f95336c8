//! Closed-form model of the coalition formation process.
//!
//! A cluster of `N` negotiators in singleton status evolves round by round.
//! In every round either a proposal is accepted, merging two coalitions and
//! dropping the number of negotiators by one, or the cluster stays at its
//! current level. The process is therefore an absorbing death chain over the
//! levels `N, N-1, ..., 1`, with level 1 (the grand coalition) absorbing.
//!
//! Two visibility models are supported. In a fully correlated network (FCN)
//! every receiver observes the same set of interferers. In a partially
//! correlated network (PCN) of `M` links a transmitter is unobservable to a
//! binomially distributed number `a` of the receivers in its cluster.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Mutual-visibility model of the interference cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VisibilityModel {
    /// Fully correlated network: every receiver sees every interferer.
    Fcn,
    /// Partially correlated network drawn from `total_links` links.
    Pcn { total_links: u32 },
}

impl VisibilityModel {
    /// Checks that a cluster of `cluster_size` negotiators fits the model.
    pub fn check_cluster(&self, cluster_size: u32) -> Result<()> {
        if cluster_size == 0 {
            return Err(domain("cluster size N must be at least 1"));
        }
        if let VisibilityModel::Pcn { total_links } = *self {
            if cluster_size > total_links {
                return Err(domain(format!(
                    "N exceeds M (N = {cluster_size}, M = {total_links})"
                )));
            }
        }
        Ok(())
    }
}

/// One-round transition probabilities out of a chain level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelTransition {
    /// Number of negotiators at this level.
    pub level: u32,
    pub stay_prob: f64,
    pub advance_prob: f64,
}

impl LevelTransition {
    fn from_advance(level: u32, advance_prob: f64) -> Self {
        LevelTransition {
            level,
            stay_prob: 1.0 - advance_prob,
            advance_prob,
        }
    }

    fn absorbing() -> Self {
        LevelTransition {
            level: 1,
            stay_prob: 1.0,
            advance_prob: 0.0,
        }
    }
}

/// The absorbing death chain `G(N) -> G(N-1) -> ... -> G(1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterChain {
    transitions: Vec<LevelTransition>,
    round_duration: f64,
}

impl ClusterChain {
    /// Builds a chain from explicit transitions, ordered from level `N` down to 2.
    pub fn from_transitions(transitions: Vec<LevelTransition>, round_duration: f64) -> Result<Self> {
        check_round_duration(round_duration)?;
        for pair in transitions.windows(2) {
            if pair[1].level + 1 != pair[0].level {
                return Err(domain("chain levels must be contiguous and strictly decreasing"));
            }
        }
        if let Some(last) = transitions.last() {
            if last.level != 2 {
                return Err(domain("the last transient level of a chain must be 2"));
            }
        }
        for t in &transitions {
            let valid = (0.0..=1.0).contains(&t.stay_prob)
                && (0.0..=1.0).contains(&t.advance_prob)
                && (t.stay_prob + t.advance_prob - 1.0).abs() <= 1e-12;
            if !valid {
                return Err(domain(format!("invalid probabilities at level {}", t.level)));
            }
        }
        Ok(ClusterChain {
            transitions,
            round_duration,
        })
    }

    /// Transient levels, ordered from the initial level down to 2.
    pub fn transitions(&self) -> &[LevelTransition] {
        &self.transitions
    }

    pub fn round_duration(&self) -> f64 {
        self.round_duration
    }

    /// Initial number of negotiators.
    pub fn initial_level(&self) -> u32 {
        self.transitions.first().map_or(1, |t| t.level)
    }

    /// Transition out of `level`; level 1 is the absorbing grand coalition.
    pub fn transition(&self, level: u32) -> Option<LevelTransition> {
        if level == 1 {
            return Some(LevelTransition::absorbing());
        }
        let first = self.initial_level();
        if level > first || level < 2 {
            return None;
        }
        Some(self.transitions[(first - level) as usize])
    }
}

/// Mean and variance of the time to reach the grand coalition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionStats {
    pub mean_rounds: f64,
    pub var_rounds: f64,
    /// Mean absorption time `tau = T * mean_rounds`.
    pub mean_time: f64,
    /// Variance `sigma_tau^2 = T^2 * var_rounds`.
    pub var_time: f64,
}

/// Distribution of the number of rounds until absorption, truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionPmf {
    /// `pmf[k]` is the probability of absorbing at exactly round `k`.
    pub pmf: Vec<f64>,
    /// Probability that absorption happens after the last tabulated round.
    pub tail: f64,
}

impl AbsorptionPmf {
    /// Mean of the tabulated part, `sum k * pmf[k]`.
    pub fn truncated_mean(&self) -> f64 {
        self.pmf
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.pmf.iter().sum::<f64>() + self.tail
    }
}

fn check_round_duration(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("round duration T must be positive and finite, got {t}")))
    }
}

/// Spatial correlation `rho = 1 - a/N` of a link that `a` of its `N` cluster
/// peers cannot observe.
pub fn correlation(a: u32, n: u32) -> Result<f64> {
    if n == 0 {
        return Err(domain("cluster size N must be at least 1"));
    }
    if a > n {
        return Err(domain(format!("visibility gap a = {a} exceeds N = {n}")));
    }
    Ok(1.0 - f64::from(a) / f64::from(n))
}

/// Probability that a link is seen by a peer it sees, `p = 1 - N/M`
/// complemented: this returns the *invisibility* probability `p`.
pub fn invisibility_prob(m: u32, n: u32) -> Result<f64> {
    if n == 0 || n > m {
        return Err(domain(format!("need 1 <= N <= M (N = {n}, M = {m})")));
    }
    Ok(1.0 - f64::from(n) / f64::from(m))
}

fn binomial_pmf(n: u32, p: f64) -> Vec<f64> {
    let q = 1.0 - p;
    let mut coeff = 1.0_f64;
    (0..=n)
        .map(|a| {
            if a > 0 {
                coeff *= f64::from(n - a + 1) / f64::from(a);
            }
            coeff * p.powi(a as i32) * q.powi((n - a) as i32)
        })
        .collect()
}

/// Distribution of the visibility gap `a` over `{0, ..., N}`: binomial with
/// `p = 1 - N/M`.
pub fn visibility_gap_pmf(m: u32, n: u32) -> Result<Vec<f64>> {
    let p = invisibility_prob(m, n)?;
    Ok(binomial_pmf(n, p))
}

/// Acceptance probability in a fully correlated network: 1/2 for `N >= 2`,
/// 0 for a lone negotiator.
pub fn acceptance_prob_fcn(n: u32) -> Result<f64> {
    match n {
        0 => Err(domain("cluster size N must be at least 1")),
        1 => Ok(0.0),
        _ => Ok(0.5),
    }
}

/// Exact acceptance probability with `a` unobservable interferers,
/// `(N-a)(N-a-1) / (2N(N-1))`.
pub fn acceptance_prob_pcn_fixed_a_exact(n: u32, a: u32) -> Result<Ratio<u64>> {
    if n == 0 {
        return Err(domain("cluster size N must be at least 1"));
    }
    if a > n {
        return Err(domain(format!("visibility gap a = {a} exceeds N = {n}")));
    }
    if n == 1 || n <= a {
        return Ok(Ratio::from_integer(0));
    }
    let (n, a) = (u64::from(n), u64::from(a));
    Ok(Ratio::new((n - a) * (n - a - 1), 2 * n * (n - 1)))
}

/// Floating-point form of [`acceptance_prob_pcn_fixed_a_exact`].
pub fn acceptance_prob_pcn_fixed_a(n: u32, a: u32) -> Result<f64> {
    let r = acceptance_prob_pcn_fixed_a_exact(n, a)?;
    Ok(*r.numer() as f64 / *r.denom() as f64)
}

/// PCN acceptance probability averaged over the visibility gap:
/// `sum_a p(a) (N-a)(N-a-1) / (2N(N-1))`.
pub fn acceptance_prob_pcn_binomial(m: u32, n: u32) -> Result<f64> {
    let pmf = visibility_gap_pmf(m, n)?;
    if n == 1 {
        return Ok(0.0);
    }
    pmf.iter()
        .enumerate()
        .map(|(a, w)| acceptance_prob_pcn_fixed_a(n, a as u32).map(|c| w * c))
        .sum()
}

/// Closed form of the averaged PCN acceptance probability, `(N/M)^2 / 2`.
pub fn acceptance_prob_pcn_closed(m: u32, n: u32) -> Result<f64> {
    invisibility_prob(m, n)?;
    if n == 1 {
        return Ok(0.0);
    }
    let ratio = f64::from(n) / f64::from(m);
    Ok(0.5 * ratio * ratio)
}

/// Tolerance for the agreement between the binomial average and the closed form.
pub const PCN_IDENTITY_TOL: f64 = 1e-12;

/// PCN acceptance probability. Both the binomial average and the closed form
/// are evaluated; disagreement beyond [`PCN_IDENTITY_TOL`] is an error.
pub fn acceptance_prob_pcn(m: u32, n: u32) -> Result<f64> {
    let averaged = acceptance_prob_pcn_binomial(m, n)?;
    let closed = acceptance_prob_pcn_closed(m, n)?;
    if (averaged - closed).abs() > PCN_IDENTITY_TOL {
        return Err(domain(format!(
            "binomial average {averaged} disagrees with closed form {closed} (M = {m}, N = {n})"
        )));
    }
    Ok(closed)
}

/// FCN level transition: stay `(N+1)/(2N)`, advance `(N-1)/(2N)`.
pub fn transition_fcn(n: u32) -> Result<LevelTransition> {
    if n == 0 {
        return Err(domain("cluster size N must be at least 1"));
    }
    let n_f = f64::from(n);
    Ok(LevelTransition {
        level: n,
        stay_prob: (n_f + 1.0) / (2.0 * n_f),
        advance_prob: (n_f - 1.0) / (2.0 * n_f),
    })
}

/// PCN level transition:
/// advance `(1/(2N)) sum_{k=0}^{N-2} ((N-k)/(M-k))^2`.
pub fn transition_pcn(m: u32, n: u32) -> Result<LevelTransition> {
    invisibility_prob(m, n)?;
    if n == 1 {
        return Ok(LevelTransition::absorbing());
    }
    let advance = (0..=n - 2)
        .map(|k| {
            let r = f64::from(n - k) / f64::from(m - k);
            r * r
        })
        .sum::<f64>()
        / (2.0 * f64::from(n));
    Ok(LevelTransition::from_advance(n, advance))
}

/// Lower and upper bounds on the PCN stay probability,
/// `1 - N(N-1)/(2M^2)` and `1 - N^2/(4M^2)`. Both coincide at `N = 2`.
pub fn pcn_stay_bounds(m: u32, n: u32) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(domain("stay bounds need N >= 2"));
    }
    if n > m {
        return Err(domain(format!("N exceeds M (N = {n}, M = {m})")));
    }
    let (n, m2) = (f64::from(n), f64::from(m) * f64::from(m));
    Ok((1.0 - n * (n - 1.0) / (2.0 * m2), 1.0 - n * n / (4.0 * m2)))
}

/// Assembles the chain for a cluster of `n` negotiators. In PCN mode the
/// network size is held fixed across levels.
pub fn build_chain(model: VisibilityModel, n: u32, round_duration: f64) -> Result<ClusterChain> {
    model.check_cluster(n)?;
    check_round_duration(round_duration)?;
    let transitions = (2..=n)
        .rev()
        .map(|level| match model {
            VisibilityModel::Fcn => transition_fcn(level),
            VisibilityModel::Pcn { total_links } => transition_pcn(total_links, level),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterChain {
        transitions,
        round_duration,
    })
}

/// Mean and variance of the absorption time.
///
/// The sojourn at each transient level is geometric with success probability
/// `q_m` and the sojourns are independent, so
/// `E = sum 1/q_m` and `Var = sum (1 - q_m)/q_m^2`.
pub fn absorption_stats(chain: &ClusterChain) -> Result<AbsorptionStats> {
    let mut mean_rounds = 0.0;
    let mut var_rounds = 0.0;
    for t in chain.transitions() {
        let q = t.advance_prob;
        if q <= 0.0 {
            return Err(Error::NonAbsorbing { level: t.level });
        }
        mean_rounds += 1.0 / q;
        var_rounds += (1.0 - q) / (q * q);
    }
    let tt = chain.round_duration();
    Ok(AbsorptionStats {
        mean_rounds,
        var_rounds,
        mean_time: tt * mean_rounds,
        var_time: tt * tt * var_rounds,
    })
}

/// Distribution of the rounds to absorption over `0..=max_rounds`, obtained by
/// propagating the level distribution one round at a time.
pub fn absorption_pmf(chain: &ClusterChain, max_rounds: u32) -> Result<AbsorptionPmf> {
    let transitions = chain.transitions();
    if let Some(t) = transitions.iter().find(|t| t.advance_prob <= 0.0) {
        return Err(Error::NonAbsorbing { level: t.level });
    }
    let mut pmf = vec![0.0; max_rounds as usize + 1];
    if transitions.is_empty() {
        pmf[0] = 1.0;
        return Ok(AbsorptionPmf { pmf, tail: 0.0 });
    }

    // dist[i] is the probability of sitting at transitions[i].level.
    let mut dist = vec![0.0; transitions.len()];
    dist[0] = 1.0;
    for slot in pmf.iter_mut().skip(1) {
        let mut next = vec![0.0; dist.len()];
        for (i, t) in transitions.iter().enumerate() {
            next[i] += dist[i] * t.stay_prob;
            let moved = dist[i] * t.advance_prob;
            match next.get_mut(i + 1) {
                Some(v) => *v += moved,
                None => *slot = moved,
            }
        }
        dist = next;
    }
    let tail = dist.iter().sum();
    Ok(AbsorptionPmf { pmf, tail })
}
