//! Oracle suite run by `coalsim validate`.
//!
//! Every check pairs a library route with an independent one (exact
//! enumeration, rational arithmetic, the fundamental matrix of the absorbing
//! chain, finite differences or Monte Carlo). Checks report `Pass` or `Fail`;
//! `Info` lines carry measurements that are reported but not gated.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cfp::{
    monte_carlo, AcceptorRule, CfpState, MonteCarloConfig, NetworkModel, ProposerRule, ProtocolConfig, SimModel,
    StepEvent,
};
use crate::chain::{self, ClusterChain, VisibilityModel};
use crate::netsim::{self, generate_network, Network, PlacementConfig};
use crate::rate::{self, RateParams, SignalingCost};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Chain,
    Rate,
    Netsim,
    Cfp,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Chain, Suite::Rate, Suite::Netsim, Suite::Cfp];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Chain => "chain",
            Suite::Rate => "rate",
            Suite::Netsim => "netsim",
            Suite::Cfp => "cfp",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Info,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub suite: Suite,
    pub id: &'static str,
    pub status: Status,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "INFO",
        };
        write!(f, "{tag} {}.{}: {}", self.suite.name(), self.id, self.detail)
    }
}

/// Deliberate perturbations used to check that the harness catches faults.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Faults {
    /// Added to the closed-form PCN acceptance probability.
    pub pcn_closed_form_offset: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    /// Runs per Monte Carlo check.
    pub runs: u32,
    pub seed: u64,
    pub faults: Faults,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            runs: 20_000,
            seed: 2010,
            faults: Faults::default(),
        }
    }
}

struct Collector {
    suite: Suite,
    results: Vec<CheckResult>,
}

impl Collector {
    fn check(&mut self, id: &'static str, outcome: std::result::Result<String, String>) {
        let (status, detail) = match outcome {
            Ok(d) => (Status::Pass, d),
            Err(d) => (Status::Fail, d),
        };
        self.results.push(CheckResult {
            suite: self.suite,
            id,
            status,
            detail,
        });
    }

    fn info(&mut self, id: &'static str, detail: String) {
        self.results.push(CheckResult {
            suite: self.suite,
            id,
            status: Status::Info,
            detail,
        });
    }
}

/// Runs the selected suites in order.
pub fn run_suites(suites: &[Suite], options: &ValidationOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for &suite in suites {
        let mut c = Collector {
            suite,
            results: Vec::new(),
        };
        match suite {
            Suite::Chain => chain_suite(&mut c, options),
            Suite::Rate => rate_suite(&mut c),
            Suite::Netsim => netsim_suite(&mut c),
            Suite::Cfp => cfp_suite(&mut c, options),
        }
        out.extend(c.results);
    }
    out
}

fn err_str(e: crate::Error) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- oracles

/// Counts ordered pairs `(i, n)` of distinct list slots with both slots among
/// the `N - a` visible ones and `i` ranked above `n`, over all `N (N-1)` pairs.
pub fn enumerate_acceptance(n: u32, a: u32) -> Ratio<u64> {
    if n < 2 {
        return Ratio::zero();
    }
    let visible = n - a;
    let mut hits = 0u64;
    let mut total = 0u64;
    for i in 0..n {
        for k in 0..n {
            if i == k {
                continue;
            }
            total += 1;
            if i < visible && k < visible && i > k {
                hits += 1;
            }
        }
    }
    Ratio::new(hits, total)
}

/// `sum_a C(N,a) p^a (1-p)^(N-a) (N-a)(N-a-1)/(2N(N-1))` with `p = 1 - N/M`
/// in exact arithmetic.
pub fn exact_pcn_average(m: u32, n: u32) -> BigRational {
    if n < 2 {
        return BigRational::zero();
    }
    let big = |v: u64| BigRational::from_integer(BigInt::from(v));
    let q = big(u64::from(n)) / big(u64::from(m));
    let p = BigRational::one() - q.clone();
    let mut total = BigRational::zero();
    let mut binom = BigInt::one();
    for a in 0..=n {
        if a > 0 {
            binom = binom * BigInt::from(n - a + 1) / BigInt::from(a);
        }
        let b = u64::from(n - a);
        let weight = BigRational::from_integer(binom.clone()) * pow(&p, a) * pow(&q, n - a);
        let accept = if b < 2 {
            BigRational::zero()
        } else {
            big(b * (b - 1)) / big(2 * u64::from(n) * u64::from(n - 1))
        };
        total += weight * accept;
    }
    total
}

fn pow(x: &BigRational, e: u32) -> BigRational {
    (0..e).fold(BigRational::one(), |acc, _| acc * x)
}

/// Mean and variance of the absorption time from the fundamental matrix
/// `F = (I - Q)^-1` of the transient block: `t = F 1`, `v = (2F - I) t - t^2`.
pub fn fundamental_matrix_moments(chain: &ClusterChain) -> Option<(f64, f64)> {
    let ts = chain.transitions();
    let k = ts.len();
    if k == 0 {
        return Some((0.0, 0.0));
    }
    let mut q = DMatrix::<f64>::zeros(k, k);
    for (i, t) in ts.iter().enumerate() {
        q[(i, i)] = t.stay_prob;
        if i + 1 < k {
            q[(i, i + 1)] = t.advance_prob;
        }
    }
    let eye = DMatrix::<f64>::identity(k, k);
    let f = (&eye - q).try_inverse()?;
    let t = &f * DVector::<f64>::from_element(k, 1.0);
    let v = (&f * 2.0 - &eye) * &t - t.component_mul(&t);
    Some((t[0], v[0]))
}

// ---------------------------------------------------------------- suites

fn chain_suite(c: &mut Collector, options: &ValidationOptions) {
    let offset = options.faults.pcn_closed_form_offset;
    c.check("binomial_equals_closed_form", {
        let mut worst = 0.0f64;
        let mut failure = None;
        'outer: for m in 2..=64 {
            for n in 2..=m {
                let (avg, closed) = match (chain::acceptance_prob_pcn_binomial(m, n), chain::acceptance_prob_pcn_closed(m, n)) {
                    (Ok(a), Ok(b)) => (a, b + offset),
                    (Err(e), _) | (_, Err(e)) => {
                        failure = Some(err_str(e));
                        break 'outer;
                    }
                };
                let diff = (avg - closed).abs();
                worst = worst.max(diff);
                if diff > 1e-12 {
                    failure = Some(format!("M = {m}, N = {n}: binomial {avg} vs closed {closed}"));
                    break 'outer;
                }
            }
        }
        match failure {
            None => Ok(format!("2 <= N <= M <= 64, max deviation {worst:.2e}")),
            Some(f) => Err(f),
        }
    });

    c.check("binomial_closed_form_exact", {
        let mut bad = None;
        for m in (2..=64).step_by(7) {
            for n in 2..=m {
                let half = BigRational::new(BigInt::from(1), BigInt::from(2));
                let closed = half * BigRational::new(BigInt::from(n * n), BigInt::from(m * m));
                if exact_pcn_average(m, n) != closed {
                    bad = Some(format!("M = {m}, N = {n}"));
                }
            }
        }
        bad.map_or(Ok("rational identity holds on the sampled grid".into()), Err)
    });

    c.check("fcn_acceptance_half", {
        match (2..=64).find(|&n| chain::acceptance_prob_fcn(n).ok() != Some(0.5)) {
            None => Ok("p_c = 1/2 for 2 <= N <= 64".into()),
            Some(n) => Err(format!("N = {n}")),
        }
    });

    c.check("pair_enumeration", {
        let mut bad = None;
        for n in 1..=10 {
            for a in 0..=n {
                match chain::acceptance_prob_pcn_fixed_a_exact(n, a) {
                    Ok(v) if v == enumerate_acceptance(n, a) => {}
                    Ok(v) => bad = Some(format!("N = {n}, a = {a}: {v} vs {}", enumerate_acceptance(n, a))),
                    Err(e) => bad = Some(err_str(e)),
                }
            }
        }
        bad.map_or(Ok("exact for N <= 10, a <= N".into()), Err)
    });

    c.check("fixed_a_average", {
        let mut bad = None;
        for m in 2..=64 {
            for n in 2..=m {
                let pmf = chain::visibility_gap_pmf(m, n).unwrap_or_default();
                let avg: f64 = pmf
                    .iter()
                    .enumerate()
                    .map(|(a, w)| w * chain::acceptance_prob_pcn_fixed_a(n, a as u32).unwrap_or(f64::NAN))
                    .sum();
                let direct = chain::acceptance_prob_pcn(m, n).unwrap_or(f64::NAN);
                if (avg - direct).abs().is_nan() || (avg - direct).abs() > 1e-12 {
                    bad = Some(format!("M = {m}, N = {n}: {avg} vs {direct}"));
                }
            }
        }
        bad.map_or(Ok("pmf-weighted fixed-a acceptance matches for M <= 64".into()), Err)
    });

    c.check("fcn_stay_range", {
        let bad = (1..=256).find(|&n| {
            let t = chain::transition_fcn(n).unwrap();
            let in_range = t.stay_prob > 0.5 && t.stay_prob <= 1.0;
            !in_range || (n == 1 && t.stay_prob != 1.0)
        });
        bad.map_or(Ok("1/2 < stay <= 1, stay(1) = 1".into()), |n| Err(format!("N = {n}")))
    });

    c.check("pcn_fcn_consistency", {
        let bad = (1..=64).find(|&m| {
            let a = chain::transition_fcn(m).unwrap();
            let b = chain::transition_pcn(m, m).unwrap();
            (a.stay_prob - b.stay_prob).abs() > 1e-14
        });
        bad.map_or(Ok("transition_pcn(m, m) = transition_fcn(m), m <= 64".into()), |m| Err(format!("m = {m}")))
    });

    c.check("pcn_monotone", {
        let stay = |m, n| chain::transition_pcn(m, n).unwrap().stay_prob;
        let mut bad = None;
        for m in 2..=64 {
            for n in 2..=m {
                if n > 2 && stay(m, n) > stay(m, n - 1) + 1e-15 {
                    bad = Some(format!("stay increases in N at M = {m}, N = {n}"));
                }
                if m > n && stay(m, n) < stay(m - 1, n) - 1e-15 {
                    bad = Some(format!("stay decreases in M at M = {m}, N = {n}"));
                }
            }
        }
        bad.map_or(Ok("stay nonincreasing in N, nondecreasing in M (M <= 64)".into()), Err)
    });

    {
        let mut outside = 0;
        let mut total = 0;
        let mut first = None;
        for m in 2..=64 {
            for n in 2..=m {
                let (lo, hi) = chain::pcn_stay_bounds(m, n).unwrap();
                let s = chain::transition_pcn(m, n).unwrap().stay_prob;
                total += 1;
                if s < lo || s > hi {
                    outside += 1;
                    first.get_or_insert((m, n));
                }
            }
        }
        c.info(
            "stay_bounds",
            format!(
                "{outside} of {total} (N, M) pairs fall outside [1 - N(N-1)/(2M^2), 1 - N^2/(4M^2)]; first at (M, N) = {:?}",
                first
            ),
        );
    }

    c.check("absorption_fundamental_matrix", {
        let mut worst = 0.0f64;
        let mut bad = None;
        for n in 1..=12u32 {
            let mut models = vec![VisibilityModel::Fcn];
            models.extend((n.max(2)..=40).map(|m| VisibilityModel::Pcn { total_links: m }));
            for model in models {
                let chain = chain::build_chain(model, n, 1.0).unwrap();
                let stats = chain::absorption_stats(&chain).unwrap();
                let Some((mean, var)) = fundamental_matrix_moments(&chain) else {
                    bad = Some(format!("singular fundamental matrix for {model:?}, N = {n}"));
                    continue;
                };
                let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
                worst = worst.max(rel(stats.mean_rounds, mean)).max(rel(stats.var_rounds, var));
                if rel(stats.mean_rounds, mean) > 1e-9 || rel(stats.var_rounds, var) > 1e-9 {
                    bad = Some(format!("{model:?}, N = {n}: ({}, {}) vs ({mean}, {var})", stats.mean_rounds, stats.var_rounds));
                }
            }
        }
        bad.map_or(Ok(format!("N <= 12, M <= 40, max relative deviation {worst:.2e}")), Err)
    });

    c.check("pmf_mass", {
        let mut bad = None;
        for n in 1..=8 {
            for model in [VisibilityModel::Fcn, VisibilityModel::Pcn { total_links: 12 }] {
                let chain = chain::build_chain(model, n, 1.0).unwrap();
                let d = chain::absorption_pmf(&chain, 500).unwrap();
                if (d.total_mass() - 1.0).abs() > 1e-12 {
                    bad = Some(format!("{model:?}, N = {n}: mass {}", d.total_mass()));
                }
            }
        }
        bad.map_or(Ok("pmf + tail = 1".into()), Err)
    });
}

fn random_params(rng: &mut ChaCha8Rng) -> RateParams {
    let y = 10f64.powf(rng.gen_range(0.0..30.0) / 10.0);
    let y_bar = y * rng.gen_range(0.1..1.5);
    let m = rng.gen_range(5..=40);
    let cost = if rng.gen_bool(0.5) {
        SignalingCost::Fixed(rng.gen_range(0.0..0.05))
    } else {
        SignalingCost::Proportional(rng.gen_range(0.0..0.05))
    };
    RateParams { y, y_bar, total_links: m, cost }
}

/// Outcome of the stationarity cross-check on one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityCase {
    pub params: RateParams,
    pub argmax: u32,
    pub roots: Vec<rate::StationaryPoint>,
}

impl StationarityCase {
    /// Every bracketed root rounds to within one of the integer argmax.
    pub fn all_roots_agree(&self) -> bool {
        self.roots
            .iter()
            .all(|r| (r.size.round() - f64::from(self.argmax)).abs() <= 1.0)
    }
}

/// Brackets the sign changes of the stationarity residual on `[1, N_max]`
/// for `points` random parameter sets.
pub fn stationarity_cases(points: usize, seed: u64) -> Vec<StationarityCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(points);
    while cases.len() < points {
        let params = random_params(&mut rng);
        let (Ok(n_max), Ok(opt)) = (rate::feasible_range(&params), rate::optimal_cluster_size(&params)) else {
            continue;
        };
        let roots = rate::stationary_points(&params, f64::from(n_max), 400).unwrap_or_default();
        cases.push(StationarityCase {
            params,
            argmax: opt.size,
            roots,
        });
    }
    cases
}

fn rate_suite(c: &mut Collector) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let samples: Vec<RateParams> = (0..200).map(|_| random_params(&mut rng)).collect();

    c.check("zero_costs_coincide", {
        let bad = samples.iter().find_map(|p| {
            let n_max = rate::feasible_range(p).ok()?;
            let f = RateParams { cost: SignalingCost::Fixed(0.0), ..*p };
            let a = RateParams { cost: SignalingCost::Proportional(0.0), ..*p };
            (1..=n_max).find(|&n| {
                let x = rate::rate_per_member(&f, n).unwrap().unwrap();
                let y = rate::rate_per_member(&a, n).unwrap().unwrap();
                (x - y).abs() > 1e-14 * x.abs().max(1.0)
            })
        });
        bad.map_or(Ok("Fixed(0) and Proportional(0) rate curves identical".into()), |n| Err(format!("N = {n}")))
    });

    c.check("strictly_decreasing_in_cost", {
        let bad = samples.iter().find_map(|p| {
            let n_max = rate::feasible_range(p).ok()?;
            (2..=n_max).find(|&n| {
                let r = |cost| rate::rate_per_member(&RateParams { cost, ..*p }, n).unwrap().unwrap();
                let fixed = r(SignalingCost::Fixed(0.01)) > r(SignalingCost::Fixed(0.02));
                let prop = r(SignalingCost::Proportional(0.01)) > r(SignalingCost::Proportional(0.02));
                !(fixed && prop)
            })
        });
        bad.map_or(Ok("rate decreases in R_c and alpha for N >= 2".into()), |n| Err(format!("N = {n}")))
    });

    c.check("proportional_equals_fixed_alpha_r", {
        let mut worst = 0.0f64;
        for p in &samples {
            let Ok(n_max) = rate::feasible_range(p) else { continue };
            let alpha = 0.03;
            for n in 1..=n_max {
                let channel = p.channel_rate(f64::from(n)).unwrap();
                let fixed = RateParams { cost: SignalingCost::Fixed(alpha * channel), ..*p };
                let prop = RateParams { cost: SignalingCost::Proportional(alpha), ..*p };
                let a = rate::rate_per_member(&fixed, n).unwrap().unwrap();
                let b = rate::rate_per_member(&prop, n).unwrap().unwrap();
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
        if worst <= 1e-12 {
            Ok(format!("max relative deviation {worst:.2e}"))
        } else {
            Err(format!("max relative deviation {worst:.2e}"))
        }
    });

    c.check("optimizer_exhaustive", {
        let bad = samples.iter().find(|p| {
            let Ok(opt) = rate::optimal_cluster_size(p) else { return false };
            let n_max = rate::feasible_range(p).unwrap();
            (1..=n_max).any(|n| rate::rate_per_member(p, n).unwrap().unwrap() > opt.rate)
        });
        bad.map_or(Ok("argmax dominates every feasible N".into()), |p| Err(format!("{p:?}")))
    });

    c.check("residual_sign_vs_finite_difference", {
        let h = 1e-4;
        let mut checked = 0;
        let mut bad = None;
        for p in &samples {
            let Ok(n_max) = rate::feasible_range(p) else { continue };
            let mut n = 1.0 + h;
            while n + h < f64::from(n_max) {
                let fd = (p.rate_continuous(n + h).unwrap() - p.rate_continuous(n - h).unwrap()) / (2.0 * h);
                let r = rate::stationarity_residual(p, n).unwrap();
                if fd.abs() > 1e-7 {
                    checked += 1;
                    if (r > 0.0) != (fd > 0.0) {
                        bad = Some(format!("{p:?} at N = {n}"));
                    }
                }
                n += 0.1;
            }
        }
        bad.map_or(Ok(format!("{checked} grid points agree in sign")), Err)
    });

    {
        let cases = stationarity_cases(100, 9);
        let with_roots: Vec<_> = cases.iter().filter(|c| !c.roots.is_empty()).collect();
        let agree = with_roots.iter().filter(|c| c.all_roots_agree()).count();
        let maxima = with_roots.iter().flat_map(|c| &c.roots).filter(|r| r.is_maximum).count();
        c.info(
            "stationarity_roots",
            format!(
                "{} of 100 points have a residual sign change, {agree} round within 1 of the argmax; {maxima} roots are local maxima",
                with_roots.len()
            ),
        );
    }

    c.check("spot_values", {
        let p = RateParams::new(10.0, 1.0, 25, SignalingCost::Fixed(0.01)).unwrap();
        let q = RateParams::new(1.0, 1.0, 10, SignalingCost::Fixed(0.0)).unwrap();
        match (rate::optimal_cluster_size(&p), rate::optimal_cluster_size(&q)) {
            (Ok(a), Ok(b)) if a.size == 2 && (a.rate - 0.38624).abs() < 1e-4 && b.size == 1 && (b.rate - 0.06875).abs() < 1e-4 => {
                Ok("(2, 0.38624) and (1, 0.06875)".into())
            }
            (a, b) => Err(format!("{a:?}, {b:?}")),
        }
    });
}

fn netsim_suite(c: &mut Collector) {
    let placement = |seed| PlacementConfig {
        width: 400.0,
        height: 400.0,
        max_link_distance: 60.0,
        noise_power: 1e-8,
        seed,
        ..Default::default()
    };
    let nets: Vec<Network> = (0..20).map(|s| generate_network(8, &placement(s)).unwrap()).collect();

    c.check("sinr_decreases_with_interferer_power", {
        let mut bad = None;
        for net in &nets {
            let geometry = net.geometry().unwrap().to_vec();
            for boosted in 1..net.len() {
                let mut links = geometry.clone();
                links[boosted].power *= 2.0;
                let louder = Network::from_geometry(links, 3.5, net.noise()).unwrap();
                let before = netsim::sinr_all_active(net, 0).unwrap();
                let after = netsim::sinr_all_active(&louder, 0).unwrap();
                if after >= before {
                    bad = Some(format!("boosting link {boosted} did not lower SINR"));
                }
            }
        }
        bad.map_or(Ok("20 networks".into()), Err)
    });

    c.check("singleton_rate_identity", {
        let bad = nets.iter().flat_map(|net| (0..net.len()).map(move |r| (net, r))).find(|&(net, r)| {
            let a = netsim::coalition_rate(net, r, &[r], 0.0).unwrap();
            let b = netsim::rate_spread(netsim::sinr_all_active(net, r).unwrap()).unwrap();
            a != b
        });
        bad.map_or(Ok("coalition_rate({r}) = rate_spread(SINR)".into()), |(_, r)| Err(format!("link {r}")))
    });

    c.check("enlarging_coalition", {
        let mut bad = None;
        for net in &nets {
            let mut members = vec![0];
            let mut prev_sinr = netsim::coalition_sinr(net, 0, &members).unwrap();
            for j in 1..net.len() {
                members.push(j);
                let sinr = netsim::coalition_sinr(net, 0, &members).unwrap();
                if sinr < prev_sinr {
                    bad = Some("SINR dropped when a member joined".to_string());
                }
                prev_sinr = sinr;
            }
            let prelog = |s: usize| 1.0 / (2.0 * s as f64);
            if (1..net.len()).any(|s| prelog(s + 1) >= prelog(s)) {
                bad = Some("prelog did not shrink".into());
            }
        }
        bad.map_or(Ok("SINR nondecreasing, prelog decreasing".into()), Err)
    });

    c.check("interference_list_permutation", {
        let mut bad = None;
        for net in &nets {
            let cluster: Vec<usize> = (0..net.len()).collect();
            let mut reversed = cluster.clone();
            reversed.reverse();
            let a = netsim::interference_list(net, 3, &cluster).unwrap();
            let b = netsim::interference_list(net, 3, &reversed).unwrap();
            let mut ids: Vec<usize> = a.entries.iter().map(|e| e.0).collect();
            let sorted = a.entries.windows(2).all(|w| w[0].1 <= w[1].1);
            ids.sort_unstable();
            if a != b || ids != cluster || !sorted {
                bad = Some("list is not a sorted, order-independent permutation".to_string());
            }
        }
        bad.map_or(Ok("sorted permutation of the cluster".into()), Err)
    });

    c.check("reproducible_generation", {
        let a = generate_network(25, &placement(1234)).unwrap();
        let b = generate_network(25, &placement(1234)).unwrap();
        if a == b {
            Ok("identical networks for identical seeds".into())
        } else {
            Err("networks differ".into())
        }
    });

    {
        let (m, n, nets) = (10, 5, 2000);
        let mut hist = vec![0u64; n + 1];
        for s in 0..nets {
            let net = generate_network(m, &PlacementConfig { seed: s, ..Default::default() }).unwrap();
            let report = netsim::empirical_visibility_gap(&net, n).unwrap();
            for (h, v) in hist.iter_mut().zip(report.histogram) {
                *h += v;
            }
        }
        let total: u64 = hist.iter().sum();
        let model = chain::visibility_gap_pmf(m as u32, n as u32).unwrap();
        let tv: f64 = hist
            .iter()
            .zip(&model)
            .map(|(&h, p)| (h as f64 / total as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        c.info(
            "visibility_gap_vs_binomial",
            format!("M = {m}, N = {n}, {nets} networks: total variation distance {tv:.3} from Binomial(N, 1 - N/M)"),
        );
    }
}

fn z_score(observed: f64, expected: f64, se: f64) -> f64 {
    (observed - expected) / se
}

fn cfp_suite(c: &mut Collector, options: &ValidationOptions) {
    let runs = options.runs;
    let fcn = MonteCarloConfig {
        model: SimModel::Abstract(VisibilityModel::Fcn),
        cluster_size: 5,
        protocol: ProtocolConfig::default(),
        runs,
        max_rounds: 1_000_000,
        seed: options.seed,
    };
    c.check("fcn_monte_carlo", {
        monte_carlo(&fcn).map_err(err_str).and_then(|stats| {
            let model = chain::absorption_stats(&chain::build_chain(VisibilityModel::Fcn, 5, 1.0).unwrap()).unwrap();
            let z_mean = z_score(stats.mean_rounds, model.mean_rounds, stats.se_mean);
            let mut worst = z_mean.abs();
            for (&level, counts) in &stats.transitions {
                let p = chain::transition_fcn(level as u32).unwrap().advance_prob;
                let se = (p * (1.0 - p) / counts.visits() as f64).sqrt();
                worst = worst.max(z_score(counts.advance_frequency(), p, se).abs());
            }
            let msg = format!("mean {:.4} vs {:.4}, max |z| = {worst:.2}", stats.mean_rounds, model.mean_rounds);
            if worst < 3.0 { Ok(msg) } else { Err(msg) }
        })
    });

    let pcn = MonteCarloConfig {
        model: SimModel::Abstract(VisibilityModel::Pcn { total_links: 10 }),
        cluster_size: 3,
        ..fcn.clone()
    };
    c.check("pcn_monte_carlo", {
        monte_carlo(&pcn).map_err(err_str).and_then(|stats| {
            let chain = chain::build_chain(VisibilityModel::Pcn { total_links: 10 }, 3, 1.0).unwrap();
            let model = chain::absorption_stats(&chain).unwrap();
            let z = z_score(stats.mean_rounds, model.mean_rounds, stats.se_mean);
            let msg = format!("mean {:.3} vs {:.3}, z = {z:.2}", stats.mean_rounds, model.mean_rounds);
            if z.abs() < 3.0 { Ok(msg) } else { Err(msg) }
        })
    });

    c.check("pcn_fresh_acceptance", {
        let (m, n) = (10u32, 5usize);
        let mut proposals = 0u64;
        let mut accepted = 0u64;
        let mut seed = options.seed;
        while proposals < u64::from(runs) {
            seed = seed.wrapping_add(1);
            let model = NetworkModel::Abstract(VisibilityModel::Pcn { total_links: m });
            let mut state = CfpState::new(model, n, ProtocolConfig::default(), seed).unwrap();
            let r = state.step().unwrap();
            if r.initiator_rank == 1 {
                proposals += 1;
                accepted += u64::from(matches!(r.event, StepEvent::Merged { .. }));
            }
        }
        let p = chain::acceptance_prob_pcn(m, n as u32).unwrap();
        let freq = accepted as f64 / proposals as f64;
        let z = z_score(freq, p, (p * (1.0 - p) / proposals as f64).sqrt());
        let msg = format!("acceptance {freq:.4} vs {p:.4} over {proposals} proposals, z = {z:.2}");
        if z.abs() < 3.0 { Ok(msg) } else { Err(msg) }
    });

    c.check("reproducible_runs", {
        let small = MonteCarloConfig { runs: 200, ..pcn.clone() };
        match (monte_carlo(&small), monte_carlo(&small)) {
            (Ok(a), Ok(b)) if a == b => Ok("identical RunStats for identical seeds".into()),
            _ => Err("RunStats differ".into()),
        }
    });

    c.check("partition_invariant", {
        let sequences = 2000;
        random_sequences(sequences, options.seed).map(|n| format!("{n} operations over {sequences} sequences"))
    });

    c.check("experiential_merges_benefit", experiential_merges(options.seed));
}

/// Drives random step/arrival/departure sequences and checks the partition
/// invariant and the one-level-per-operation rule after every operation.
/// Returns the number of operations performed.
pub fn random_sequences(sequences: usize, seed: u64) -> std::result::Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let placement = PlacementConfig {
        width: 300.0,
        height: 300.0,
        max_link_distance: 50.0,
        ..Default::default()
    };
    let mut operations = 0;
    for i in 0..sequences {
        let m = rng.gen_range(2..=12usize);
        let n = rng.gen_range(1..=m);
        let model = match i % 3 {
            0 => NetworkModel::Abstract(VisibilityModel::Fcn),
            1 => NetworkModel::Abstract(VisibilityModel::Pcn { total_links: m as u32 }),
            _ => {
                let net = generate_network(m, &PlacementConfig { seed: rng.gen(), ..placement }).map_err(err_str)?;
                NetworkModel::Geometric(Arc::new(net))
            }
        };
        let proposer = [
            ProposerRule::AboveOwnLevel,
            ProposerRule::MaxInterferer,
            ProposerRule::WithinDelta(rng.gen_range(1..=3)),
            ProposerRule::RandomTarget,
        ][rng.gen_range(0..4)];
        let acceptor = match (&model, rng.gen_range(0..4)) {
            (_, 0) => AcceptorRule::AboveOwnLevel,
            (_, 1) => AcceptorRule::MaxInterferer,
            (_, 2) => AcceptorRule::WithinDelta(rng.gen_range(1..=3)),
            (NetworkModel::Geometric(_), _) => AcceptorRule::Experiential,
            _ => AcceptorRule::AboveOwnLevel,
        };
        let protocol = ProtocolConfig {
            proposer,
            acceptor,
            representation: if rng.gen_bool(0.5) {
                crate::cfp::CoalitionRepresentation::HeadLevel
            } else {
                crate::cfp::CoalitionRepresentation::SumLevel
            },
            signaling_rate: 0.0,
        };
        let mut state = CfpState::new(model, n, protocol, rng.gen()).map_err(err_str)?;
        for _ in 0..rng.gen_range(1..=40) {
            let before = state.level();
            let outcome = match rng.gen_range(0..10) {
                0..=5 if before >= 2 => state.step().map(|_| ()),
                6..=7 => state.apply_arrival().map(|_| ()),
                8..=9 if before >= 2 => state.apply_departure().map(|_| ()),
                _ => continue,
            };
            match outcome {
                Ok(()) => {}
                // Geometric arrivals legitimately fail once the pool is empty.
                Err(crate::Error::Domain(_)) if state.standby().is_empty() => {}
                Err(e) => return Err(err_str(e)),
            }
            operations += 1;
            state.check_invariants()?;
            if state.level().abs_diff(before) > 1 {
                return Err(format!("level jumped from {before} to {}", state.level()));
            }
        }
    }
    Ok(operations)
}

fn experiential_merges(seed: u64) -> std::result::Result<String, String> {
    let protocol = ProtocolConfig {
        proposer: ProposerRule::RandomTarget,
        acceptor: AcceptorRule::Experiential,
        ..Default::default()
    };
    let mut merges = 0;
    for s in 0..100u64 {
        let placement = PlacementConfig {
            width: 300.0,
            height: 300.0,
            max_link_distance: 60.0,
            noise_power: 1e-8,
            seed: seed.wrapping_add(s),
            ..Default::default()
        };
        let net = Arc::new(generate_network(10, &placement).map_err(err_str)?);
        let mut state = CfpState::new(NetworkModel::Geometric(Arc::clone(&net)), 6, protocol, s).map_err(err_str)?;
        for _ in 0..100 {
            if state.level() < 2 {
                break;
            }
            let r = state.step().map_err(err_str)?;
            if let StepEvent::Merged { .. } = r.event {
                merges += 1;
                let merged = state
                    .negotiators()
                    .iter()
                    .find(|c| c.head() == r.initiator)
                    .ok_or("merged coalition lost its head")?;
                if !netsim::coalition_benefit_check(&net, merged.members(), 0.0).map_err(err_str)? {
                    return Err(format!("merge of {:?} violates the benefit condition", merged.members()));
                }
            }
        }
    }
    Ok(format!("{merges} merges, all beneficial"))
}
