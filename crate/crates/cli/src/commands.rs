use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use coalition_core::cfp::{self, derive_seed, CfpState, MonteCarloConfig, NetworkModel, SimModel};
use coalition_core::chain::{self, VisibilityModel};
use coalition_core::netsim::{generate_network, Network, PlacementConfig};
use coalition_core::rate::{self, RateParams};
use coalition_core::validation::{self, Faults, Status, Suite, ValidationOptions};
use serde::Serialize;

use crate::config::{
    ChainSettings, OptimizeMode, OptimizeSettings, SimKind, SimulateSettings, ValidateArgs,
};
use crate::CliError;

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| CliError::Config(format!("cannot create {}: {e}", p.display())))?;
            Ok(Box::new(io::BufWriter::new(file)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn write_rows<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(open_output(path)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ChainRow {
    kind: &'static str,
    level: Option<u32>,
    stay: Option<f64>,
    advance: Option<f64>,
    bound_lower: Option<f64>,
    bound_upper: Option<f64>,
    mean_rounds: Option<f64>,
    var_rounds: Option<f64>,
    mean_time: Option<f64>,
    var_time: Option<f64>,
}

pub fn chain(s: ChainSettings) -> Result<(), CliError> {
    let chain = chain::build_chain(s.model, s.n, s.t)?;
    let stats = chain::absorption_stats(&chain)?;
    let mut rows = Vec::new();
    for t in chain.transitions() {
        let bounds = match s.model {
            VisibilityModel::Pcn { total_links } => Some(chain::pcn_stay_bounds(total_links, t.level)?),
            VisibilityModel::Fcn => None,
        };
        rows.push(ChainRow {
            kind: "level",
            level: Some(t.level),
            stay: Some(t.stay_prob),
            advance: Some(t.advance_prob),
            bound_lower: bounds.map(|b| b.0),
            bound_upper: bounds.map(|b| b.1),
            mean_rounds: None,
            var_rounds: None,
            mean_time: None,
            var_time: None,
        });
    }
    rows.push(ChainRow {
        kind: "summary",
        level: None,
        stay: None,
        advance: None,
        bound_lower: None,
        bound_upper: None,
        mean_rounds: Some(stats.mean_rounds),
        var_rounds: Some(stats.var_rounds),
        mean_time: Some(stats.mean_time),
        var_time: Some(stats.var_time),
    });
    write_rows(s.out.as_deref(), &rows)
}

#[derive(Debug, Serialize)]
struct OptimizeRow {
    snr_db: f64,
    n_opt: u32,
    rate_opt: f64,
    rate_singleton: f64,
    infeasible: bool,
}

#[derive(Debug, Serialize)]
struct PlacementRow {
    snr_db: f64,
    n_opt_mean: f64,
    rate_opt_mean: f64,
    rate_singleton_mean: f64,
    infeasible_fraction: f64,
}

/// Optimum and singleton rate, or `None` when no cluster size is feasible.
fn optimize_point(params: &RateParams) -> Result<Option<(u32, f64, f64)>, CliError> {
    match rate::optimal_cluster_size(params) {
        Ok(opt) => {
            let single = rate::rate_per_member(params, 1)?.expect("N = 1 is feasible whenever any N is");
            Ok(Some((opt.size, opt.rate, single)))
        }
        Err(coalition_core::Error::InfeasibleNetwork) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        (v[k - 1] + v[k]) / 2.0
    }
}

/// `(y, y_bar)` for a placed network: the noise is scaled so that the median
/// direct SNR equals `y`, and `y_bar` is the median per-interferer INR.
/// Medians because path-loss gains are heavy tailed.
pub fn network_levels(net: &Network, y: f64) -> (f64, f64) {
    let m = net.len();
    if m < 2 {
        return (y, 0.0);
    }
    let noise = median((0..m).map(|i| net.received(i, i)).collect()) / y;
    let cross = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| net.received(i, j))
        .collect();
    (y, median(cross) / noise)
}

pub fn optimize(s: OptimizeSettings) -> Result<(), CliError> {
    match s.mode {
        OptimizeMode::Deterministic => {
            let mut rows = Vec::with_capacity(s.snr_db.len());
            for &snr_db in &s.snr_db {
                let y = 10f64.powf(snr_db / 10.0);
                let params = RateParams::new(y, s.ybar_ratio * y, s.m, s.cost)?;
                rows.push(match optimize_point(&params)? {
                    Some((n_opt, rate_opt, rate_singleton)) => OptimizeRow {
                        snr_db,
                        n_opt,
                        rate_opt,
                        rate_singleton,
                        infeasible: false,
                    },
                    None => OptimizeRow {
                        snr_db,
                        n_opt: 1,
                        rate_opt: 0.0,
                        rate_singleton: 0.0,
                        infeasible: true,
                    },
                });
            }
            write_rows(s.out.as_deref(), &rows)
        }
        OptimizeMode::Placement => {
            // The same placements are reused at every grid point.
            let nets = (0..u64::from(s.networks))
                .map(|k| {
                    let placement = PlacementConfig {
                        seed: derive_seed(s.placement.seed, k),
                        ..s.placement
                    };
                    generate_network(s.m as usize, &placement)
                })
                .collect::<coalition_core::Result<Vec<_>>>()?;
            let mut rows = Vec::with_capacity(s.snr_db.len());
            for &snr_db in &s.snr_db {
                let y = 10f64.powf(snr_db / 10.0);
                let (mut n_sum, mut opt_sum, mut single_sum, mut feasible) = (0.0, 0.0, 0.0, 0u32);
                for net in &nets {
                    let (y, y_bar) = network_levels(net, y);
                    if let Some((n, r, r1)) = optimize_point(&RateParams::new(y, y_bar, s.m, s.cost)?)? {
                        n_sum += f64::from(n);
                        opt_sum += r;
                        single_sum += r1;
                        feasible += 1;
                    }
                }
                let k = f64::from(feasible.max(1));
                rows.push(PlacementRow {
                    snr_db,
                    n_opt_mean: if feasible == 0 { 1.0 } else { n_sum / k },
                    rate_opt_mean: opt_sum / k,
                    rate_singleton_mean: single_sum / k,
                    infeasible_fraction: 1.0 - f64::from(feasible) / f64::from(s.networks),
                });
            }
            write_rows(s.out.as_deref(), &rows)
        }
    }
}

#[derive(Debug, Serialize)]
struct SimulateRow {
    kind: &'static str,
    level: Option<usize>,
    count: u64,
    empirical: f64,
    model: f64,
    std_error: f64,
    z: f64,
}

fn z(empirical: f64, model: f64, se: f64) -> f64 {
    if se > 0.0 {
        (empirical - model) / se
    } else if empirical == model {
        0.0
    } else {
        f64::INFINITY.copysign(empirical - model)
    }
}

pub fn simulate(s: SimulateSettings) -> Result<(), CliError> {
    let sim_model = match s.kind {
        SimKind::Fcn => SimModel::Abstract(VisibilityModel::Fcn),
        SimKind::Pcn => SimModel::Abstract(VisibilityModel::Pcn { total_links: s.m }),
        SimKind::Geometric => SimModel::RandomNetworks {
            links: s.m as usize,
            placement: s.placement,
        },
    };
    let config = MonteCarloConfig {
        model: sim_model.clone(),
        cluster_size: s.n as usize,
        protocol: s.protocol,
        runs: s.runs,
        max_rounds: s.max_rounds,
        seed: s.seed,
    };
    let stats = cfp::monte_carlo(&config)?;
    let analytical = s.analytical_model();
    let chain = chain::build_chain(analytical, s.n, s.t)?;
    let expected = chain::absorption_stats(&chain)?;

    let mut rows = Vec::new();
    for (&level, counts) in stats.transitions.iter().rev() {
        if level < 2 {
            continue;
        }
        let p = chain.transition(level as u32).map_or(f64::NAN, |t| t.advance_prob);
        let se = (p * (1.0 - p) / counts.visits() as f64).sqrt();
        rows.push(SimulateRow {
            kind: "advance",
            level: Some(level),
            count: counts.visits(),
            empirical: counts.advance_frequency(),
            model: p,
            std_error: se,
            z: z(counts.advance_frequency(), p, se),
        });
    }
    let completed = stats.completed() as u64;
    rows.push(SimulateRow {
        kind: "mean_rounds",
        level: None,
        count: completed,
        empirical: stats.mean_rounds,
        model: expected.mean_rounds,
        std_error: stats.se_mean,
        z: z(stats.mean_rounds, expected.mean_rounds, stats.se_mean),
    });
    let var_se = expected.var_rounds * (2.0 / (completed.max(2) - 1) as f64).sqrt();
    rows.push(SimulateRow {
        kind: "var_rounds",
        level: None,
        count: completed,
        empirical: stats.var_rounds,
        model: expected.var_rounds,
        std_error: var_se,
        z: z(stats.var_rounds, expected.var_rounds, var_se),
    });
    rows.push(SimulateRow {
        kind: "timeouts",
        level: None,
        count: stats.timeouts() as u64,
        empirical: stats.timeouts() as f64 / f64::from(s.runs),
        model: 0.0,
        std_error: 0.0,
        z: 0.0,
    });
    write_rows(s.out.as_deref(), &rows)?;

    if let Some(path) = &s.trace {
        let seed = derive_seed(s.seed, 0);
        let model = match sim_model {
            SimModel::Abstract(v) => NetworkModel::Abstract(v),
            SimModel::Network(net) => NetworkModel::Geometric(net),
            SimModel::RandomNetworks { links, placement } => {
                let placement = PlacementConfig { seed, ..placement };
                NetworkModel::Geometric(Arc::new(generate_network(links, &placement)?))
            }
        };
        let mut state = CfpState::new(model, s.n as usize, s.protocol, seed)?;
        let trace = cfp::run(&mut state, s.max_rounds)?;
        trace.write_csv(open_output(Some(path))?)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ValidateRow<'a> {
    suite: &'static str,
    check: &'static str,
    status: &'static str,
    detail: &'a str,
}

/// Returns the number of failed checks.
pub fn validate(args: ValidateArgs) -> Result<usize, CliError> {
    let suites = match &args.suite {
        None => Suite::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| {
                Suite::parse(n).ok_or_else(|| {
                    CliError::Config(format!("unknown suite {n:?}; expected chain, rate, netsim or cfp"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    let defaults = ValidationOptions::default();
    let runs = args.runs.unwrap_or(defaults.runs);
    if runs == 0 {
        return Err(CliError::Config("--runs must be at least 1".into()));
    }
    let options = ValidationOptions {
        runs,
        seed: args.seed.unwrap_or(defaults.seed),
        faults: Faults {
            pcn_closed_form_offset: args.inject_fault.unwrap_or(0.0),
        },
    };
    let results = validation::run_suites(&suites, &options);
    for r in &results {
        eprintln!("{r}");
    }
    let rows: Vec<ValidateRow> = results
        .iter()
        .map(|r| ValidateRow {
            suite: r.suite.name(),
            check: r.id,
            status: match r.status {
                Status::Pass => "pass",
                Status::Fail => "fail",
                Status::Info => "info",
            },
            detail: &r.detail,
        })
        .collect();
    write_rows(args.out.as_deref(), &rows)?;
    Ok(results.iter().filter(|r| r.status == Status::Fail).count())
}
