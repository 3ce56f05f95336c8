//! Geometric interference networks.
//!
//! Links are transmitter/receiver pairs placed in a rectangle. Channel gains
//! follow pure path loss, `g[i][j] = d(tx_j, rx_i)^-eta`, where row `i` is the
//! receiver and column `j` the transmitter.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub tx: Point,
    pub rx: Point,
    /// Transmit power in watts.
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementConfig {
    pub width: f64,
    pub height: f64,
    /// Maximum transmitter to receiver separation.
    pub max_link_distance: f64,
    pub path_loss_exponent: f64,
    pub tx_power: f64,
    pub noise_power: f64,
    pub seed: u64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            width: 1000.0,
            height: 1000.0,
            max_link_distance: 100.0,
            path_loss_exponent: 3.5,
            tx_power: 1.0,
            noise_power: 1e-9,
            seed: 0,
        }
    }
}

impl PlacementConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.width) || !positive(self.height) {
            return Err(Error::Config("area width and height must be positive".into()));
        }
        if !positive(self.max_link_distance) {
            return Err(Error::Config("max link distance must be positive".into()));
        }
        if self.max_link_distance >= self.width.min(self.height) {
            return Err(Error::Config(format!(
                "max link distance {} does not fit a {} x {} area",
                self.max_link_distance, self.width, self.height
            )));
        }
        if !positive(self.path_loss_exponent) {
            return Err(Error::Config("path-loss exponent must be positive".into()));
        }
        if !positive(self.tx_power) || !positive(self.noise_power) {
            return Err(Error::Config("transmit and noise power must be positive".into()));
        }
        Ok(())
    }
}

/// `M` links with their `M x M` gain matrix and receiver noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    powers: Vec<f64>,
    /// Row-major; `gains[i * M + j]` is the gain from tx `j` to rx `i`.
    gains: Vec<f64>,
    noise: f64,
    geometry: Option<Vec<LinkGeometry>>,
}

impl Network {
    /// Builds a network from placed links with path-loss gains.
    pub fn from_geometry(links: Vec<LinkGeometry>, path_loss_exponent: f64, noise: f64) -> Result<Self> {
        if links.is_empty() {
            return Err(domain("a network needs at least one link"));
        }
        let m = links.len();
        let mut gains = Vec::with_capacity(m * m);
        for rx in &links {
            for tx in &links {
                let d = tx.tx.distance(&rx.rx);
                if d <= 0.0 {
                    return Err(domain("a transmitter coincides with a receiver"));
                }
                gains.push(d.powf(-path_loss_exponent));
            }
        }
        let powers = links.iter().map(|l| l.power).collect();
        Self::checked(powers, gains, noise, Some(links))
    }

    /// Builds a network from an explicit gain matrix (`gains[rx][tx]`).
    pub fn from_gains(gains: Vec<Vec<f64>>, powers: Vec<f64>, noise: f64) -> Result<Self> {
        let m = powers.len();
        if m == 0 || gains.len() != m || gains.iter().any(|row| row.len() != m) {
            return Err(domain("gain matrix must be M x M with M = number of powers"));
        }
        Self::checked(powers, gains.into_iter().flatten().collect(), noise, None)
    }

    fn checked(powers: Vec<f64>, gains: Vec<f64>, noise: f64, geometry: Option<Vec<LinkGeometry>>) -> Result<Self> {
        if !(noise.is_finite() && noise > 0.0) {
            return Err(domain("noise power must be positive"));
        }
        if powers.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(domain("transmit powers must be positive"));
        }
        if gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(domain("channel gains must be positive"));
        }
        Ok(Network {
            powers,
            gains,
            noise,
            geometry,
        })
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    /// Gain from the transmitter of link `tx` to the receiver of link `rx`.
    pub fn gain(&self, rx: usize, tx: usize) -> f64 {
        self.gains[rx * self.len() + tx]
    }

    pub fn power(&self, link: usize) -> f64 {
        self.powers[link]
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn geometry(&self) -> Option<&[LinkGeometry]> {
        self.geometry.as_deref()
    }

    /// Level of `tx`'s signal at `rx`'s receiver, `g[rx][tx] * P_tx`.
    pub fn received(&self, rx: usize, tx: usize) -> f64 {
        self.gain(rx, tx) * self.powers[tx]
    }

    /// Same network with a different noise floor.
    pub fn with_noise(mut self, noise: f64) -> Result<Self> {
        if !(noise.is_finite() && noise > 0.0) {
            return Err(domain("noise power must be positive"));
        }
        self.noise = noise;
        Ok(self)
    }

    /// Mean direct-link SNR, `mean_i g[i][i] P_i / N0`.
    pub fn mean_direct_snr(&self) -> f64 {
        let m = self.len();
        (0..m).map(|i| self.received(i, i)).sum::<f64>() / (m as f64 * self.noise)
    }

    fn check_link(&self, r: usize) -> Result<()> {
        if r < self.len() {
            Ok(())
        } else {
            Err(domain(format!("link {r} out of range for {} links", self.len())))
        }
    }

    /// Writes one row per link: `id,tx_x,tx_y,rx_x,rx_y,power`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let geometry = self
            .geometry
            .as_ref()
            .ok_or_else(|| domain("network has no placement to dump"))?;
        let mut w = csv::Writer::from_writer(writer);
        for (id, link) in geometry.iter().enumerate() {
            w.serialize(LinkRow {
                id,
                tx_x: link.tx.x,
                tx_y: link.tx.y,
                rx_x: link.rx.x,
                rx_y: link.rx.y,
                power: link.power,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads links written by [`Network::write_csv`].
    pub fn read_csv<R: Read>(reader: R, path_loss_exponent: f64, noise: f64) -> Result<Self> {
        let mut rows = csv::Reader::from_reader(reader)
            .deserialize::<LinkRow>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        rows.sort_by_key(|r| r.id);
        if rows.iter().enumerate().any(|(i, r)| r.id != i) {
            return Err(domain("link ids must be 0..M without gaps"));
        }
        let links = rows
            .into_iter()
            .map(|r| LinkGeometry {
                tx: Point::new(r.tx_x, r.tx_y),
                rx: Point::new(r.rx_x, r.rx_y),
                power: r.power,
            })
            .collect();
        Self::from_geometry(links, path_loss_exponent, noise)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LinkRow {
    id: usize,
    tx_x: f64,
    tx_y: f64,
    rx_x: f64,
    rx_y: f64,
    #[serde(rename = "P")]
    power: f64,
}

/// Places `m` links uniformly in the rectangle. Each receiver is uniform in the
/// disk of radius `max_link_distance` around its transmitter, resampled until
/// it lands inside the area.
pub fn generate_network(m: usize, placement: &PlacementConfig) -> Result<Network> {
    if m == 0 {
        return Err(domain("a network needs at least one link"));
    }
    placement.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(placement.seed);
    let links = (0..m)
        .map(|_| {
            let tx = Point::new(
                rng.gen::<f64>() * placement.width,
                rng.gen::<f64>() * placement.height,
            );
            let rx = loop {
                let r = placement.max_link_distance * rng.gen::<f64>().sqrt();
                let theta = rng.gen::<f64>() * std::f64::consts::TAU;
                let p = Point::new(tx.x + r * theta.cos(), tx.y + r * theta.sin());
                let inside = (0.0..=placement.width).contains(&p.x) && (0.0..=placement.height).contains(&p.y);
                if inside && p.distance(&tx) > 0.0 {
                    break p;
                }
            };
            LinkGeometry {
                tx,
                rx,
                power: placement.tx_power,
            }
        })
        .collect();
    Network::from_geometry(links, placement.path_loss_exponent, placement.noise_power)
}

/// SINR of link `r` with every link transmitting.
pub fn sinr_all_active(net: &Network, r: usize) -> Result<f64> {
    net.check_link(r)?;
    let interference: f64 = (0..net.len()).filter(|&i| i != r).map(|i| net.received(r, i)).sum();
    Ok(net.received(r, r) / (interference + net.noise()))
}

/// Rate of a link spreading over the whole band, `(1/2) log2(1 + sinr)`.
pub fn rate_spread(sinr: f64) -> Result<f64> {
    if sinr.is_nan() || sinr < 0.0 {
        return Err(domain(format!("SINR must be non-negative, got {sinr}")));
    }
    Ok(0.5 * (1.0 + sinr).log2())
}

/// SINR of `r` when the members of its coalition time-share and only links
/// outside the coalition interfere.
pub fn coalition_sinr(net: &Network, r: usize, members: &[usize]) -> Result<f64> {
    net.check_link(r)?;
    if !members.contains(&r) {
        return Err(domain(format!("link {r} is not a member of the coalition")));
    }
    for &j in members {
        net.check_link(j)?;
    }
    let interference: f64 = (0..net.len())
        .filter(|i| !members.contains(i))
        .map(|i| net.received(r, i))
        .sum();
    Ok(net.received(r, r) / (interference + net.noise()))
}

/// Rate of `r` inside coalition `members` with an equal `1/|S|` share:
/// `(1/(2|S|)) log2(1 + SINR_S) - R_S`.
pub fn coalition_rate(net: &Network, r: usize, members: &[usize], signaling_rate: f64) -> Result<f64> {
    if signaling_rate.is_nan() || signaling_rate < 0.0 {
        return Err(domain("signaling rate must be non-negative"));
    }
    let sinr = coalition_sinr(net, r, members)?;
    let share = distinct_count(members) as f64;
    Ok((1.0 + sinr).log2() / (2.0 * share) - signaling_rate)
}

fn distinct_count(members: &[usize]) -> usize {
    let mut v = members.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// True iff every member gains from the coalition relative to spreading with
/// all links active.
pub fn coalition_benefit_check(net: &Network, members: &[usize], signaling_rate: f64) -> Result<bool> {
    if distinct_count(members) < 2 {
        return Err(domain("a coalition benefit check needs at least two members"));
    }
    for &r in members {
        let inside = coalition_rate(net, r, members, signaling_rate)?;
        let alone = rate_spread(sinr_all_active(net, r)?)?;
        if inside < alone {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Received levels at one receiver, weakest first.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedInterferenceList {
    pub owner: usize,
    /// `(link id, received level)` sorted ascending by level, ties by id.
    pub entries: Vec<(usize, f64)>,
    /// Zero-based position of the owner's useful signal in `entries`.
    pub own_position: usize,
}

impl OrderedInterferenceList {
    /// Sorts `(id, level)` pairs, `owner` must appear exactly once.
    pub fn from_levels(owner: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut owners = entries.iter().enumerate().filter(|(_, e)| e.0 == owner);
        let own_position = match (owners.next(), owners.next()) {
            (Some((pos, _)), None) => pos,
            _ => return Err(domain(format!("owner {owner} must appear exactly once"))),
        };
        Ok(OrderedInterferenceList {
            owner,
            entries,
            own_position,
        })
    }

    /// One-based rank of the useful signal; 1 is the weakest entry.
    pub fn own_rank(&self) -> usize {
        self.own_position + 1
    }

    pub fn position_of(&self, id: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.0 == id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Ordered list of the levels of `cluster` at link `i`'s receiver, own signal
/// included.
pub fn interference_list(net: &Network, i: usize, cluster: &[usize]) -> Result<OrderedInterferenceList> {
    net.check_link(i)?;
    if !cluster.contains(&i) {
        return Err(domain(format!("link {i} is not in the cluster")));
    }
    let mut ids = cluster.to_vec();
    ids.sort_unstable();
    ids.dedup();
    for &j in &ids {
        net.check_link(j)?;
    }
    let entries = ids.into_iter().map(|j| (j, net.received(i, j))).collect();
    OrderedInterferenceList::from_levels(i, entries)
}

/// Per-link visibility gaps measured on a placed network.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityGapReport {
    pub cluster_size: usize,
    /// `a_i`: how many of link `i`'s strongest interferers do not list `i` back.
    pub per_link: Vec<usize>,
    /// `histogram[a]` counts links with gap `a`, for `a` in `0..=N`.
    pub histogram: Vec<u64>,
}

/// Each link lists its `min(N, M-1)` strongest interferers; `a_i` counts the
/// listed links whose own list omits `i`.
pub fn empirical_visibility_gap(net: &Network, n: usize) -> Result<VisibilityGapReport> {
    let m = net.len();
    if n == 0 || n > m {
        return Err(domain(format!("need 1 <= N <= M (N = {n}, M = {m})")));
    }
    let keep = n.min(m - 1);
    let lists: Vec<Vec<usize>> = (0..m)
        .map(|i| {
            let mut others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| net.received(i, b).total_cmp(&net.received(i, a)).then(a.cmp(&b)));
            others.truncate(keep);
            others
        })
        .collect();
    let per_link: Vec<usize> = (0..m)
        .map(|i| lists[i].iter().filter(|&&j| !lists[j].contains(&i)).count())
        .collect();
    let mut histogram = vec![0u64; n + 1];
    for &a in &per_link {
        histogram[a] += 1;
    }
    Ok(VisibilityGapReport {
        cluster_size: n,
        per_link,
        histogram,
    })
}
