//! Rate per member of a coalition cluster and the cluster-size optimizer.
//!
//! The coalition head sees its useful signal at SNR `y` and `M` interferers of
//! mean SNR `y_bar`. Forming a coalition of `N` links removes the `N - 1`
//! strongest interferers, estimated as `N y + (N - 1) y_bar` of in-cluster
//! power, at the price of a `1/N` spectrum share and the signaling overhead.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::error::{domain, Error, Result};

/// Rate spent on coalition negotiation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SignalingCost {
    /// A fixed rate `R_c` reserved per coalition peer.
    Fixed(f64),
    /// `R_c = alpha * R`, proportional to the available data rate.
    Proportional(f64),
}

impl SignalingCost {
    fn value(&self) -> f64 {
        match *self {
            SignalingCost::Fixed(v) | SignalingCost::Proportional(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    /// Linear SNR of the coalition head's useful signal.
    pub y: f64,
    /// Mean linear SNR of an interferer.
    pub y_bar: f64,
    /// Network size `M`.
    pub total_links: u32,
    pub cost: SignalingCost,
}

impl RateParams {
    pub fn new(y: f64, y_bar: f64, total_links: u32, cost: SignalingCost) -> Result<Self> {
        let params = RateParams {
            y,
            y_bar,
            total_links,
            cost,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.y.is_finite() && self.y > 0.0) {
            return Err(domain(format!("head SNR y must be positive, got {}", self.y)));
        }
        if !(self.y_bar.is_finite() && self.y_bar > 0.0) {
            return Err(domain(format!("mean SNR y_bar must be positive, got {}", self.y_bar)));
        }
        if self.total_links == 0 {
            return Err(domain("network size M must be at least 1"));
        }
        let c = self.cost.value();
        if !(c.is_finite() && c >= 0.0) {
            return Err(domain(format!("signaling cost must be non-negative, got {c}")));
        }
        Ok(())
    }

    fn check_size(&self, n: u32) -> Result<()> {
        if n == 0 || n > self.total_links {
            return Err(domain(format!(
                "cluster size must satisfy 1 <= N <= M (N = {n}, M = {})",
                self.total_links
            )));
        }
        Ok(())
    }

    /// `1 + (M - N + 1) y_bar - N y` for a real-valued cluster size.
    fn denominator(&self, n: f64) -> f64 {
        1.0 + (f64::from(self.total_links) - n + 1.0) * self.y_bar - n * self.y
    }

    /// Data rate `R = (1/2) log2(1 + y / D)` of the undivided channel seen by
    /// a cluster of size `n`, or `None` if the denominator is not positive.
    pub fn channel_rate(&self, n: f64) -> Option<f64> {
        let d = self.denominator(n);
        (d > 0.0).then(|| 0.5 * (1.0 + self.y / d).log2())
    }

    /// Rate per member for a real-valued cluster size (the smooth relaxation
    /// used by the stationarity analysis).
    pub fn rate_continuous(&self, n: f64) -> Option<f64> {
        let log_term = 2.0 * self.channel_rate(n)?;
        Some(match self.cost {
            SignalingCost::Fixed(rc) => log_term / (2.0 * n) - (n - 1.0) * rc,
            SignalingCost::Proportional(alpha) => {
                (1.0 - alpha * n * (n - 1.0)) / (2.0 * n) * log_term
            }
        })
    }
}

/// Estimated interference from outside the coalition, `(M - N + 1) y_bar - N y`.
/// May be negative, in which case the size is infeasible.
pub fn estimated_external_interference(params: &RateParams, n: u32) -> Result<f64> {
    params.check_size(n)?;
    Ok(params.denominator(f64::from(n)) - 1.0)
}

/// Rate per member of a cluster of `n` links; `None` when the interference
/// denominator is not positive. Negative rates are returned as they are.
pub fn rate_per_member(params: &RateParams, n: u32) -> Result<Option<f64>> {
    params.check_size(n)?;
    Ok(params.rate_continuous(f64::from(n)))
}

/// Largest cluster size with a positive interference denominator.
pub fn feasible_range(params: &RateParams) -> Result<u32> {
    params.validate()?;
    // The denominator is decreasing in N, so the feasible set is a prefix.
    let mut best = 0;
    for n in 1..=params.total_links {
        if params.denominator(f64::from(n)) > 0.0 {
            best = n;
        } else {
            break;
        }
    }
    if best == 0 {
        Err(Error::InfeasibleNetwork)
    } else {
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptimum {
    pub size: u32,
    pub rate: f64,
}

/// Integer argmax of the rate per member over the feasible sizes. Ties go to
/// the smaller cluster.
pub fn optimal_cluster_size(params: &RateParams) -> Result<ClusterOptimum> {
    let n_max = feasible_range(params)?;
    let mut best: Option<ClusterOptimum> = None;
    for n in 1..=n_max {
        let Some(rate) = params.rate_continuous(f64::from(n)) else {
            continue;
        };
        if best.is_none_or(|b| rate > b.rate) {
            best = Some(ClusterOptimum { size: n, rate });
        }
    }
    best.ok_or(Error::InfeasibleNetwork)
}

/// Stationarity condition of the relaxed rate in `N`.
///
/// With `D = 1 + (M - N + 1) y_bar - N y`, `E = D + y` and
/// `L = ln(1 + y/D)`, the returned value is
///
/// * fixed cost: `y (y + y_bar) / (2N D E) - L / (2N^2) - R_c ln 2`
/// * proportional cost: `N (1 - alpha N (N-1)) y (y + y_bar) / ((1 + alpha N^2) D E) - L`
///
/// Each is a positive multiple of `dR_N/dN`, so the sign tells the direction
/// of improvement and roots are the stationary points of the relaxation.
pub fn stationarity_residual(params: &RateParams, n: f64) -> Result<f64> {
    params.validate()?;
    if !(n.is_finite() && n >= 1.0 && n <= f64::from(params.total_links)) {
        return Err(domain(format!("N = {n} outside [1, M]")));
    }
    let d = params.denominator(n);
    if d <= 0.0 {
        return Err(domain(format!("interference denominator not positive at N = {n}")));
    }
    let (y, y_bar) = (params.y, params.y_bar);
    let e = d + y;
    let log_term = (1.0 + y / d).ln();
    let gain = y * (y + y_bar) / (d * e);
    Ok(match params.cost {
        SignalingCost::Fixed(rc) => gain / (2.0 * n) - log_term / (2.0 * n * n) - rc * LN_2,
        SignalingCost::Proportional(alpha) => {
            n * (1.0 - alpha * n * (n - 1.0)) * gain / (1.0 + alpha * n * n) - log_term
        }
    })
}

/// A stationary point of the relaxed rate, bracketed on a uniform grid and
/// refined by bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryPoint {
    pub size: f64,
    /// True when the residual goes from positive to negative (a local maximum).
    pub is_maximum: bool,
}

/// Brackets every sign change of [`stationarity_residual`] on `[1, upper]`
/// using `cells` grid cells and refines each root by bisection.
pub fn stationary_points(params: &RateParams, upper: f64, cells: usize) -> Result<Vec<StationaryPoint>> {
    if upper <= 1.0 || cells == 0 {
        return Ok(Vec::new());
    }
    let step = (upper - 1.0) / cells as f64;
    let at = |i: usize| if i == cells { upper } else { 1.0 + step * i as f64 };
    let mut points = Vec::new();
    let mut prev = stationarity_residual(params, 1.0)?;
    for i in 1..=cells {
        let x = at(i);
        let cur = stationarity_residual(params, x)?;
        if (prev > 0.0) != (cur > 0.0) {
            let (mut lo, mut hi) = (at(i - 1), x);
            let lo_positive = prev > 0.0;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if (stationarity_residual(params, mid)? > 0.0) == lo_positive {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            points.push(StationaryPoint {
                size: 0.5 * (lo + hi),
                is_maximum: lo_positive,
            });
        }
        prev = cur;
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(y: f64, y_bar: f64, m: u32, cost: SignalingCost) -> RateParams {
        RateParams::new(y, y_bar, m, cost).unwrap()
    }

    #[test]
    fn interference_estimate() {
        let p = params(10.0, 1.0, 25, SignalingCost::Fixed(0.0));
        assert_abs_diff_eq!(estimated_external_interference(&p, 2).unwrap(), 4.0);
        let p = params(1.0, 1.0, 10, SignalingCost::Fixed(0.0));
        assert_abs_diff_eq!(estimated_external_interference(&p, 1).unwrap(), 9.0);
        let p = params(10.0, 1.0, 10, SignalingCost::Fixed(0.0));
        assert_abs_diff_eq!(estimated_external_interference(&p, 2).unwrap(), -11.0);
        assert!(estimated_external_interference(&p, 11).is_err());
        assert!(estimated_external_interference(&p, 0).is_err());
    }

    #[test]
    fn rate_examples() {
        let p = params(10.0, 1.0, 25, SignalingCost::Fixed(0.01));
        assert_abs_diff_eq!(rate_per_member(&p, 2).unwrap().unwrap(), 0.38624, epsilon = 1e-5);
        assert_abs_diff_eq!(rate_per_member(&p, 1).unwrap().unwrap(), 0.35022, epsilon = 1e-5);
        assert_eq!(rate_per_member(&p, 3).unwrap(), None);
        let p = params(10.0, 1.0, 25, SignalingCost::Proportional(0.01));
        assert_abs_diff_eq!(rate_per_member(&p, 2).unwrap().unwrap(), 0.38831, epsilon = 1e-5);
    }

    #[test]
    fn feasible_range_examples() {
        assert_eq!(feasible_range(&params(10.0, 1.0, 25, SignalingCost::Fixed(0.0))).unwrap(), 2);
        assert_eq!(feasible_range(&params(1.0, 1.0, 10, SignalingCost::Fixed(0.0))).unwrap(), 5);
        assert!(matches!(
            feasible_range(&params(1000.0, 1.0, 10, SignalingCost::Fixed(0.0))),
            Err(Error::InfeasibleNetwork)
        ));
    }

    #[test]
    fn optimizer_examples() {
        let opt = optimal_cluster_size(&params(10.0, 1.0, 25, SignalingCost::Fixed(0.01))).unwrap();
        assert_eq!(opt.size, 2);
        assert_abs_diff_eq!(opt.rate, 0.38624, epsilon = 1e-5);

        let opt = optimal_cluster_size(&params(1.0, 1.0, 10, SignalingCost::Fixed(0.0))).unwrap();
        assert_eq!(opt.size, 1);
        assert_abs_diff_eq!(opt.rate, 0.06875, epsilon = 1e-5);

        let opt = optimal_cluster_size(&params(1.0, 1.0, 10, SignalingCost::Fixed(10.0))).unwrap();
        assert_eq!(opt.size, 1);
        let opt = optimal_cluster_size(&params(100.0, 100.0, 10, SignalingCost::Fixed(10.0))).unwrap();
        assert_eq!(opt.size, 1);
    }

    #[test]
    fn invalid_params() {
        assert!(RateParams::new(0.0, 1.0, 5, SignalingCost::Fixed(0.0)).is_err());
        assert!(RateParams::new(1.0, -1.0, 5, SignalingCost::Fixed(0.0)).is_err());
        assert!(RateParams::new(1.0, 1.0, 0, SignalingCost::Fixed(0.0)).is_err());
        assert!(RateParams::new(1.0, 1.0, 5, SignalingCost::Proportional(-0.1)).is_err());
    }

    #[test]
    fn residual_domain() {
        let p = params(10.0, 1.0, 25, SignalingCost::Fixed(0.01));
        assert!(stationarity_residual(&p, 1.5).is_ok());
        assert!(stationarity_residual(&p, 3.0).is_err());
        assert!(stationarity_residual(&p, 0.5).is_err());
    }

    #[test]
    fn residual_sign_matches_finite_difference() {
        let h = 1e-4;
        for &(y, y_bar, m) in &[(10.0, 1.0, 25), (1.0, 1.0, 10), (0.3, 0.5, 30), (5.0, 4.0, 12)] {
            for cost in [SignalingCost::Fixed(0.01), SignalingCost::Proportional(0.02)] {
                let p = params(y, y_bar, m, cost);
                let n_max = feasible_range(&p).unwrap();
                let mut n = 1.0 + h;
                while n + h < f64::from(n_max) {
                    let fd = (p.rate_continuous(n + h).unwrap() - p.rate_continuous(n - h).unwrap())
                        / (2.0 * h);
                    let r = stationarity_residual(&p, n).unwrap();
                    if fd.abs() > 1e-6 {
                        assert_eq!(r > 0.0, fd > 0.0, "params {p:?} at N = {n}");
                    }
                    n += 0.05;
                }
            }
        }
    }

    #[test]
    fn zero_costs_share_roots() {
        let a = params(2.0, 1.5, 20, SignalingCost::Fixed(0.0));
        let b = params(2.0, 1.5, 20, SignalingCost::Proportional(0.0));
        let upper = f64::from(feasible_range(&a).unwrap());
        let ra = stationary_points(&a, upper, 400).unwrap();
        let rb = stationary_points(&b, upper, 400).unwrap();
        assert_eq!(ra.len(), rb.len());
        for (x, z) in ra.iter().zip(&rb) {
            assert_abs_diff_eq!(x.size, z.size, epsilon = 1e-9);
        }
    }
}
