//! Random geometric network topologies and the wireless link-rate model.
//!
//! Nodes are placed uniformly at random in a square deployment area and the
//! geometrically closest client pairs become edges until the requested edge
//! density is met. Each link carries a Shannon-capacity rate derived from a
//! free-space path-loss channel, and a weight equal to the reciprocal rate in
//! seconds per bit.

use crate::dsu::DisjointSet;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

/// Propagation constant of the free-space gain model, fixed to the speed of
/// light in m/s so that `propagation_const / f_c` is the carrier wavelength.
pub const SPEED_OF_LIGHT_M_PER_S: f64 = 3.0e8;

/// Radio-layer parameters shared by every client.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    /// Carrier frequency in Hz.
    pub carrier_freq_hz: f64,
    /// Channel bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Transmit power in dBm.
    pub tx_power_dbm: f64,
    /// Noise power spectral density in dBm/Hz.
    pub noise_psd_dbm_per_hz: f64,
    /// Numerator constant of the squared-gain formula (see
    /// [`SPEED_OF_LIGHT_M_PER_S`]).
    pub propagation_const: f64,
}

impl RadioParams {
    pub fn new(
        carrier_freq_hz: f64,
        bandwidth_hz: f64,
        tx_power_dbm: f64,
        noise_psd_dbm_per_hz: f64,
        propagation_const: f64,
    ) -> Result<Self> {
        let p = Self {
            carrier_freq_hz,
            bandwidth_hz,
            tx_power_dbm,
            noise_psd_dbm_per_hz,
            propagation_const,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.carrier_freq_hz > 0.0) {
            return Err(Error::InvalidRadio("carrier frequency must be > 0".into()));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidRadio("bandwidth must be > 0".into()));
        }
        if !(self.propagation_const > 0.0) {
            return Err(Error::InvalidRadio("propagation constant must be > 0".into()));
        }
        if !(self.tx_power_watts() > 0.0) {
            return Err(Error::InvalidRadio("transmit power must be positive in linear scale".into()));
        }
        if !(self.noise_power_watts() > 0.0) {
            return Err(Error::InvalidRadio("noise power must be positive in linear scale".into()));
        }
        Ok(())
    }

    /// Transmit power in watts: `10^((P_dbm - 30) / 10)`.
    pub fn tx_power_watts(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    /// In-band noise power in watts: `10^((N0_dbm - 30) / 10) * B`.
    pub fn noise_power_watts(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_per_hz) * self.bandwidth_hz
    }
}

impl Default for RadioParams {
    /// 2500 MHz carrier, 30 MHz bandwidth, 20 dBm transmit power and
    /// -174 dBm/Hz noise density.
    fn default() -> Self {
        Self {
            carrier_freq_hz: 2.5e9,
            bandwidth_hz: 30.0e6,
            tx_power_dbm: 20.0,
            noise_psd_dbm_per_hz: -174.0,
            propagation_const: SPEED_OF_LIGHT_M_PER_S,
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Squared channel gain of a link at the given distance:
/// `(propagation_const / (4 pi d_m f_c))^2` with the distance in meters.
///
/// Strictly decreasing in both distance and carrier frequency.
pub fn channel_gain_sq(distance_km: f64, radio: &RadioParams) -> Result<f64> {
    if !(distance_km > 0.0) {
        return Err(Error::ZeroDistance);
    }
    let d_m = distance_km * 1000.0;
    let ratio = radio.propagation_const / (4.0 * std::f64::consts::PI * d_m * radio.carrier_freq_hz);
    Ok(ratio * ratio)
}

/// Shannon capacity `B log2(1 + snr)` in bits/s.
pub fn shannon_rate(bandwidth_hz: f64, snr: f64) -> f64 {
    bandwidth_hz * (1.0 + snr).log2()
}

/// Link rate in bits/s at the given distance, via the Shannon capacity of the
/// free-space channel: snr = `h^2 P / (N0 B)`.
pub fn link_rate(distance_km: f64, radio: &RadioParams) -> Result<f64> {
    let gain_sq = channel_gain_sq(distance_km, radio)?;
    let snr = gain_sq * radio.tx_power_watts() / radio.noise_power_watts();
    Ok(shannon_rate(radio.bandwidth_hz, snr))
}

/// One undirected link with its transmission rate and weight.
///
/// Invariant: `a < b` and `weight == 1.0 / rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkEdge {
    pub a: usize,
    pub b: usize,
    /// Rate in bits/s.
    pub rate: f64,
    /// Weight in s/bit.
    pub weight: f64,
}

/// Undirected weighted client graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    area_km: f64,
    seed: u64,
    positions: Vec<[f64; 2]>,
    edges: Vec<LinkEdge>,
    repaired: bool,
    /// Per node: (neighbor, index into `edges`), sorted by neighbor id.
    adj: Vec<Vec<(usize, usize)>>,
}

impl Topology {
    /// Assembles a topology from explicit links; positions are metadata only
    /// (zeroed for synthetic graphs built directly from rates).
    pub fn from_rates(n: usize, links: &[(usize, usize, f64)]) -> Result<Self> {
        let positions = vec![[0.0, 0.0]; n];
        let edges = links
            .iter()
            .map(|&(i, j, rate)| {
                (i.min(j), i.max(j), rate, 1.0 / rate)
            })
            .collect::<Vec<_>>();
        Self::from_parts(n, 0.0, 0, positions, edges, false)
    }

    /// Full constructor; validates every structural invariant.
    pub fn from_parts(
        n: usize,
        area_km: f64,
        seed: u64,
        positions: Vec<[f64; 2]>,
        raw_edges: Vec<(usize, usize, f64, f64)>,
        repaired: bool,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("need at least one node".into()));
        }
        if positions.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: positions.len() });
        }
        let mut edges = Vec::with_capacity(raw_edges.len());
        let mut seen = std::collections::HashSet::new();
        for (i, j, rate, weight) in raw_edges {
            if i == j {
                return Err(Error::InvalidTopology(format!("self-loop at node {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::InvalidTopology(format!("edge ({i},{j}) out of range")));
            }
            if !(rate > 0.0) || !(weight > 0.0) {
                return Err(Error::InvalidTopology(format!("edge ({i},{j}) has non-positive rate or weight")));
            }
            if (weight * rate - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidTopology(format!("edge ({i},{j}) violates weight = 1/rate")));
            }
            let (a, b) = (i.min(j), i.max(j));
            if !seen.insert((a, b)) {
                return Err(Error::InvalidTopology(format!("duplicate edge ({a},{b})")));
            }
            edges.push(LinkEdge { a, b, rate, weight });
        }
        edges.sort_by(|x, y| (x.a, x.b).cmp(&(y.a, y.b)));

        let mut adj = vec![Vec::new(); n];
        for (idx, e) in edges.iter().enumerate() {
            adj[e.a].push((e.b, idx));
            adj[e.b].push((e.a, idx));
        }
        for list in &mut adj {
            list.sort_unstable();
        }

        let topo = Self { n, area_km, seed, positions, edges, repaired, adj };
        if !topo.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn area_km(&self) -> f64 {
        self.area_km
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn repaired(&self) -> bool {
        self.repaired
    }

    pub fn edges(&self) -> &[LinkEdge] {
        &self.edges
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        self.positions[i]
    }

    /// Neighbors of `i` in ascending id order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[i].iter().map(|&(j, _)| j)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edge_between(i, j).is_some()
    }

    pub fn edge_between(&self, i: usize, j: usize) -> Option<&LinkEdge> {
        self.adj[i]
            .iter()
            .find(|&&(nb, _)| nb == j)
            .map(|&(_, idx)| &self.edges[idx])
    }

    /// Link weight in s/bit; panics if (i, j) is not an edge.
    pub fn chi(&self, i: usize, j: usize) -> f64 {
        self.edge_between(i, j)
            .unwrap_or_else(|| panic!("({i},{j}) is not an edge"))
            .weight
    }

    /// Link rate in bits/s; panics if (i, j) is not an edge.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.edge_between(i, j)
            .unwrap_or_else(|| panic!("({i},{j}) is not an edge"))
            .rate
    }

    pub fn is_connected(&self) -> bool {
        let mut dsu = DisjointSet::new(self.n);
        for e in &self.edges {
            dsu.union(e.a, e.b);
        }
        dsu.components() == 1
    }

    pub fn distance_km(&self, i: usize, j: usize) -> f64 {
        let [xi, yi] = self.positions[i];
        let [xj, yj] = self.positions[j];
        ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt()
    }

    /// Serializes to the canonical JSON document. Floating-point values are
    /// written with 17 significant digits so parsing recovers them exactly.
    pub fn to_json_string(&self) -> String {
        let mut s = String::new();
        s.push_str("{\"schema\":\"dflsim/topology-v1\"");
        s.push_str(&format!(",\"n\":{}", self.n));
        s.push_str(&format!(",\"area_km\":{}", fmt_f64(self.area_km)));
        s.push_str(&format!(",\"seed\":{}", self.seed));
        s.push_str(",\"positions\":[");
        for (i, p) in self.positions.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&format!("[{},{}]", fmt_f64(p[0]), fmt_f64(p[1])));
        }
        s.push_str("],\"edges\":[");
        for (i, e) in self.edges.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&format!(
                "[{},{},{},{}]",
                e.a,
                e.b,
                fmt_f64(e.rate),
                fmt_f64(e.weight)
            ));
        }
        s.push_str(&format!("],\"repaired\":{}}}", self.repaired));
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            schema: String,
            n: usize,
            area_km: f64,
            seed: u64,
            positions: Vec<[f64; 2]>,
            edges: Vec<(usize, usize, f64, f64)>,
            repaired: bool,
        }
        let doc: Doc = serde_json::from_str(text)?;
        if doc.schema != "dflsim/topology-v1" {
            return Err(Error::InvalidTopology(format!("unknown schema tag {:?}", doc.schema)));
        }
        Self::from_parts(doc.n, doc.area_km, doc.seed, doc.positions, doc.edges, doc.repaired)
    }
}

/// 17 significant digits, enough to round-trip any f64 exactly.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Generates a random geometric topology: `n` nodes placed uniformly in an
/// `area_km` x `area_km` square, connected by the `floor(density * n(n-1)/2)`
/// closest pairs. If the selection is disconnected, the closest
/// cross-component pairs are added until it connects and the repair is
/// flagged.
pub fn generate_rgg(
    n: usize,
    density: f64,
    area_km: f64,
    radio: &RadioParams,
    seed: u64,
) -> Result<Topology> {
    if n < 2 {
        return Err(Error::InvalidTopology("need at least two nodes".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidTopology(format!("density {density} outside (0, 1]")));
    }
    if !(area_km > 0.0) {
        return Err(Error::InvalidTopology("area must be > 0".into()));
    }
    let max_pairs = n * (n - 1) / 2;
    let target = (density * max_pairs as f64).floor() as usize;
    if target < n - 1 {
        return Err(Error::DensityTooLow { nodes: n, density });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let x: f64 = rng.gen::<f64>() * area_km;
            let y: f64 = rng.gen::<f64>() * area_km;
            [x, y]
        })
        .collect();

    // All pairs ordered by distance, ties by (i, j).
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(max_pairs);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = ((positions[i][0] - positions[j][0]).powi(2)
                + (positions[i][1] - positions[j][1]).powi(2))
            .sqrt();
            pairs.push((d, i, j));
        }
    }
    pairs.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .expect("distances are finite")
            .then_with(|| (x.1, x.2).cmp(&(y.1, y.2)))
    });

    let mut selected: Vec<(f64, usize, usize)> = pairs[..target].to_vec();
    let mut dsu = DisjointSet::new(n);
    for &(_, i, j) in &selected {
        dsu.union(i, j);
    }
    let mut repaired = false;
    if dsu.components() > 1 {
        for &(d, i, j) in &pairs[target..] {
            if dsu.union(i, j) {
                selected.push((d, i, j));
                repaired = true;
                if dsu.components() == 1 {
                    break;
                }
            }
        }
    }

    let mut raw = Vec::with_capacity(selected.len());
    for (d, i, j) in selected {
        let rate = link_rate(d, radio)?;
        raw.push((i, j, rate, 1.0 / rate));
    }
    Topology::from_parts(n, area_km, seed, positions, raw, repaired)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgg_default_edge_count() {
        let topo = generate_rgg(20, 0.6, 1.0, &RadioParams::default(), 7).unwrap();
        assert_eq!(topo.edges().len(), 114);
        assert!(!topo.repaired());
        assert!(topo.is_connected());
    }

    #[test]
    fn rgg_two_nodes_single_edge() {
        let topo = generate_rgg(2, 1.0, 1.0, &RadioParams::default(), 3).unwrap();
        assert_eq!(topo.edges().len(), 1);
        assert_eq!((topo.edges()[0].a, topo.edges()[0].b), (0, 1));
    }

    #[test]
    fn rgg_density_one_is_complete() {
        for seed in [0, 5, 99] {
            let topo = generate_rgg(5, 1.0, 1.0, &RadioParams::default(), seed).unwrap();
            assert_eq!(topo.edges().len(), 10);
        }
    }

    #[test]
    fn rgg_density_too_low_rejected() {
        let err = generate_rgg(5, 0.1, 1.0, &RadioParams::default(), 0).unwrap_err();
        assert!(matches!(err, Error::DensityTooLow { .. }));
    }

    #[test]
    fn rgg_is_deterministic() {
        let radio = RadioParams::default();
        let a = generate_rgg(15, 0.5, 2.0, &radio, 42).unwrap();
        let b = generate_rgg(15, 0.5, 2.0, &radio, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json_string(), b.to_json_string());
        let c = generate_rgg(15, 0.5, 2.0, &radio, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn weight_is_reciprocal_rate() {
        let topo = generate_rgg(20, 0.6, 1.0, &RadioParams::default(), 11).unwrap();
        for e in topo.edges() {
            assert!((e.weight * e.rate - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn shorter_edges_are_never_slower() {
        let topo = generate_rgg(20, 0.6, 1.0, &RadioParams::default(), 13).unwrap();
        let mut by_dist: Vec<(f64, f64)> = topo
            .edges()
            .iter()
            .map(|e| (topo.distance_km(e.a, e.b), e.rate))
            .collect();
        by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in by_dist.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }

    #[test]
    fn gain_inverse_square_in_distance() {
        let radio = RadioParams::default();
        let g1 = channel_gain_sq(0.2, &radio).unwrap();
        let g2 = channel_gain_sq(0.4, &radio).unwrap();
        assert!((g1 / g2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gain_closed_form_value() {
        // (3e8 / (4 pi * 100 m * 2.5e9))^2
        let radio = RadioParams::default();
        let g = channel_gain_sq(0.1, &radio).unwrap();
        assert!((g - 9.118906527810397e-9).abs() / g < 1e-12);
    }

    #[test]
    fn gain_quarters_when_frequency_doubles() {
        let base = RadioParams::default();
        let double = RadioParams { carrier_freq_hz: 2.0 * base.carrier_freq_hz, ..base.clone() };
        let g1 = channel_gain_sq(0.3, &base).unwrap();
        let g2 = channel_gain_sq(0.3, &double).unwrap();
        assert!((g1 / g2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gain_rejects_zero_distance() {
        assert!(matches!(
            channel_gain_sq(0.0, &RadioParams::default()),
            Err(Error::ZeroDistance)
        ));
    }

    #[test]
    fn shannon_rate_examples() {
        assert!((shannon_rate(5.0e6, 1.0) - 5.0e6).abs() < 1e-3);
        assert!((shannon_rate(5.0e6, 3.0) - 1.0e7).abs() < 1e-3);
        let v = shannon_rate(30.0e6, 10.0);
        assert!((v - 1.0378294855911893e8).abs() / v < 1e-12);
    }

    #[test]
    fn link_rate_decreases_with_distance() {
        let radio = RadioParams::default();
        let mut prev = f64::INFINITY;
        for d in [0.05, 0.1, 0.2, 0.5, 1.0, 2.0] {
            let v = link_rate(d, &radio).unwrap();
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let topo = generate_rgg(12, 0.7, 1.5, &RadioParams::default(), 21).unwrap();
        let text = topo.to_json_string();
        let back = Topology::from_json_str(&text).unwrap();
        assert_eq!(topo, back);
        assert_eq!(text, back.to_json_string());
    }

    #[test]
    fn from_rates_rejects_disconnected() {
        let err = Topology::from_rates(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::Disconnected));
    }

    #[test]
    fn single_node_topology_is_valid() {
        let topo = Topology::from_rates(1, &[]).unwrap();
        assert_eq!(topo.node_count(), 1);
        assert!(topo.is_connected());
    }
}
