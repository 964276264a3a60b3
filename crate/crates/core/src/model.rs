//! Network, flow and result types shared by the window models and solvers.
//!
//! A [`NetworkSpec`] is a set of capacitated links plus a set of long-lived
//! TCP flows. Each flow names the links its data packets cross and the links
//! its ACKs cross; these two route lists are the columns of the data and ACK
//! incidence matrices used by both network solvers.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest receiver window cap handed out by [`default_w_max`].
pub const MIN_DEFAULT_W_MAX: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: String,
    /// Capacity in bits per second.
    pub capacity_bps: f64,
}

/// CUBIC growth constant and multiplicative decrease fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicParams {
    pub c: f64,
    /// Fraction of the window removed on loss (window becomes `(1 - beta) W`).
    pub beta: f64,
}

impl Default for CubicParams {
    fn default() -> Self {
        Self { c: 0.4, beta: 0.3 }
    }
}

/// Compound TCP delay-component parameters.
///
/// The defaults are the values published with the original Compound TCP
/// design (`alpha = 1/8`, `k = 3/4`, `zeta = 1`, `gamma = 30` packets).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundParams {
    pub alpha: f64,
    pub k: f64,
    pub zeta: f64,
    /// Queueing threshold in packets above which the delay component shrinks.
    pub gamma_pkts: f64,
}

impl Default for CompoundParams {
    fn default() -> Self {
        Self {
            alpha: 0.125,
            k: 0.75,
            zeta: 1.0,
            gamma_pkts: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TcpVariant {
    Cubic(CubicParams),
    Compound(CompoundParams),
    NewReno,
}

impl TcpVariant {
    pub fn name(&self) -> &'static str {
        match self {
            TcpVariant::Cubic(_) => "cubic",
            TcpVariant::Compound(_) => "compound",
            TcpVariant::NewReno => "newreno",
        }
    }

    pub fn cubic() -> Self {
        TcpVariant::Cubic(CubicParams::default())
    }

    pub fn compound() -> Self {
        TcpVariant::Compound(CompoundParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: String,
    pub variant: TcpVariant,
    /// Per-packet loss probability.
    pub loss_prob: f64,
    /// Constant round-trip delay (propagation plus transmission), seconds.
    pub prop_delay_s: f64,
    pub pkt_mean_bits: f64,
    pub pkt_second_moment_bits2: f64,
    pub data_route: Vec<String>,
    pub ack_route: Vec<String>,
    /// Receiver window cap in packets.
    pub w_max: u32,
}

impl FlowSpec {
    /// A flow with constant packet size and the given routes; `w_max` is left
    /// at [`MIN_DEFAULT_W_MAX`].
    pub fn new(
        id: impl Into<String>,
        variant: TcpVariant,
        loss_prob: f64,
        prop_delay_s: f64,
        pkt_bytes: f64,
        data_route: &[&str],
        ack_route: &[&str],
    ) -> Self {
        let bits = pkt_bytes * 8.0;
        Self {
            id: id.into(),
            variant,
            loss_prob,
            prop_delay_s,
            pkt_mean_bits: bits,
            pkt_second_moment_bits2: bits * bits,
            data_route: data_route.iter().map(|s| s.to_string()).collect(),
            ack_route: ack_route.iter().map(|s| s.to_string()).collect(),
            w_max: MIN_DEFAULT_W_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub links: Vec<LinkSpec>,
    pub flows: Vec<FlowSpec>,
}

/// One failed invariant; `field` is a path such as `flows[2].loss_prob`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: String, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl NetworkSpec {
    /// Checks every invariant and returns the list of violations (empty when
    /// the spec is well formed).
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut link_ids = HashSet::new();
        for (i, link) in self.links.iter().enumerate() {
            if !link_ids.insert(link.id.as_str()) {
                out.push(Violation::new(format!("links[{i}].id"), format!("duplicate link id `{}`", link.id)));
            }
            if !positive(link.capacity_bps) {
                out.push(Violation::new(format!("links[{i}].capacity_bps"), "must be finite and > 0"));
            }
        }

        let mut flow_ids = HashSet::new();
        for (i, f) in self.flows.iter().enumerate() {
            let at = |field: &str| format!("flows[{i}].{field}");
            if !flow_ids.insert(f.id.as_str()) {
                out.push(Violation::new(at("id"), format!("duplicate flow id `{}`", f.id)));
            }
            if !(f.loss_prob.is_finite() && (0.0..1.0).contains(&f.loss_prob)) {
                out.push(Violation::new(at("loss_prob"), "must lie in [0, 1)"));
            }
            if !positive(f.prop_delay_s) {
                out.push(Violation::new(at("prop_delay_s"), "must be finite and > 0"));
            }
            if !positive(f.pkt_mean_bits) {
                out.push(Violation::new(at("pkt_mean_bits"), "must be finite and > 0"));
            }
            if !positive(f.pkt_second_moment_bits2) {
                out.push(Violation::new(at("pkt_second_moment_bits2"), "must be finite and > 0"));
            } else if f.pkt_second_moment_bits2 < f.pkt_mean_bits * f.pkt_mean_bits * (1.0 - 1e-12) {
                out.push(Violation::new(
                    at("pkt_second_moment_bits2"),
                    "second moment is smaller than the squared mean",
                ));
            }
            if f.w_max < 1 {
                out.push(Violation::new(at("w_max"), "must be >= 1"));
            }
            if f.data_route.is_empty() {
                out.push(Violation::new(at("data_route"), "route is empty"));
            }
            for (name, route) in [("data_route", &f.data_route), ("ack_route", &f.ack_route)] {
                for id in route {
                    if !link_ids.contains(id.as_str()) && !self.links.iter().any(|l| &l.id == id) {
                        out.push(Violation::new(at(name), format!("unknown link `{id}`")));
                    }
                }
            }
            match f.variant {
                TcpVariant::Cubic(p) => {
                    if !positive(p.c) {
                        out.push(Violation::new(at("variant.c"), "must be > 0"));
                    }
                    if !(positive(p.beta) && p.beta < 1.0) {
                        out.push(Violation::new(at("variant.beta"), "must lie in (0, 1)"));
                    }
                }
                TcpVariant::Compound(p) => {
                    for (name, v) in [
                        ("alpha", p.alpha),
                        ("k", p.k),
                        ("zeta", p.zeta),
                        ("gamma_pkts", p.gamma_pkts),
                    ] {
                        if !positive(v) {
                            out.push(Violation::new(at(&format!("variant.{name}")), "must be > 0"));
                        }
                    }
                }
                TcpVariant::NewReno => {}
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(v))
        }
    }

    pub fn link_index(&self) -> HashMap<&str, usize> {
        self.links.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect()
    }

    /// Data (`A`) and ACK (`B`) incidence matrices.
    pub fn incidence(&self) -> Result<Incidence> {
        self.ensure_valid()?;
        let index = self.link_index();
        let mut inc = Incidence {
            n_links: self.links.len(),
            n_flows: self.flows.len(),
            data: vec![false; self.links.len() * self.flows.len()],
            ack: vec![false; self.links.len() * self.flows.len()],
        };
        for (r, flow) in self.flows.iter().enumerate() {
            for id in &flow.data_route {
                let l = index[id.as_str()];
                inc.data[l * inc.n_flows + r] = true;
            }
            for id in &flow.ack_route {
                let l = index[id.as_str()];
                inc.ack[l * inc.n_flows + r] = true;
            }
        }
        Ok(inc)
    }
}

/// Dense 0/1 link-by-flow matrices, row-major by link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incidence {
    n_links: usize,
    n_flows: usize,
    data: Vec<bool>,
    ack: Vec<bool>,
}

impl Incidence {
    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn n_flows(&self) -> usize {
        self.n_flows
    }

    /// `A(l, r)`: flow `r` sends data packets over link `l`.
    pub fn data(&self, link: usize, flow: usize) -> bool {
        self.data[link * self.n_flows + flow]
    }

    /// `B(l, r)`: flow `r`'s ACKs cross link `l`.
    pub fn ack(&self, link: usize, flow: usize) -> bool {
        self.ack[link * self.n_flows + flow]
    }

    pub fn data_column(&self, flow: usize) -> Vec<u8> {
        (0..self.n_links).map(|l| self.data(l, flow) as u8).collect()
    }

    pub fn ack_column(&self, flow: usize) -> Vec<u8> {
        (0..self.n_links).map(|l| self.ack(l, flow) as u8).collect()
    }

    pub fn data_links(&self, flow: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_links).filter(move |&l| self.data(l, flow))
    }

    pub fn ack_links(&self, flow: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_links).filter(move |&l| self.ack(l, flow))
    }

    pub fn data_flows(&self, link: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_flows).filter(move |&r| self.data(link, r))
    }
}

/// Default receiver window cap: twice the largest bandwidth-delay product in
/// the network measured in this flow's packets, never below 4096.
pub fn default_w_max(max_capacity_bps: f64, max_delay_s: f64, pkt_mean_bits: f64) -> u32 {
    let bdp = (max_capacity_bps * max_delay_s / pkt_mean_bits).ceil();
    let w = (2.0 * bdp).min(u32::MAX as f64 / 2.0) as u32;
    w.max(MIN_DEFAULT_W_MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Mg1,
    Opt,
}

impl SolverMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SolverMethod::Mg1 => "mg1",
            SolverMethod::Opt => "opt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub id: String,
    pub variant: String,
    pub throughput_pkts_s: f64,
    pub mean_window: f64,
    pub mean_rtt_s: f64,
    /// Throughput in bits per second (`throughput_pkts_s * E[s]`).
    pub throughput_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub id: String,
    pub mean_queue_pkts: f64,
    pub utilization: f64,
    /// Mean sojourn (queueing) time at the link, seconds.
    pub sojourn_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub method: SolverMethod,
    pub per_flow: Vec<FlowResult>,
    pub per_link: Vec<LinkResult>,
    pub diagnostics: Diagnostics,
}

impl SolverResult {
    pub fn flow(&self, id: &str) -> Option<&FlowResult> {
        self.per_flow.iter().find(|f| f.id == id)
    }

    pub fn link(&self, id: &str) -> Option<&LinkResult> {
        self.per_link.iter().find(|l| l.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_link_one_flow() -> NetworkSpec {
        NetworkSpec {
            links: vec![LinkSpec {
                id: "L1".into(),
                capacity_bps: 1e9,
            }],
            flows: vec![FlowSpec::new("f1", TcpVariant::NewReno, 1e-4, 0.1, 1050.0, &["L1"], &[])],
        }
    }

    #[test]
    fn well_formed_spec_has_no_violations() {
        assert!(one_link_one_flow().validate().is_empty());
    }

    #[test]
    fn certain_loss_is_rejected() {
        let mut spec = one_link_one_flow();
        spec.flows[0].loss_prob = 1.0;
        let v = spec.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "flows[0].loss_prob");
    }

    #[test]
    fn unknown_link_is_reported_on_data_route() {
        let mut spec = one_link_one_flow();
        spec.flows[0].data_route.push("L9".into());
        let v = spec.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "flows[0].data_route");
        assert!(v[0].message.contains("L9"));
    }

    #[test]
    fn bad_second_moment_and_params() {
        let mut spec = one_link_one_flow();
        spec.flows[0].pkt_second_moment_bits2 = 1.0;
        spec.flows[0].variant = TcpVariant::Cubic(CubicParams { c: 0.4, beta: 1.2 });
        let fields: Vec<_> = spec.validate().into_iter().map(|v| v.field).collect();
        assert_eq!(fields, vec!["flows[0].pkt_second_moment_bits2", "flows[0].variant.beta"]);
    }

    #[test]
    fn incidence_marks_data_and_ack_links() {
        let spec = NetworkSpec {
            links: ["L1", "L2", "L3"]
                .iter()
                .map(|id| LinkSpec {
                    id: id.to_string(),
                    capacity_bps: 1e8,
                })
                .collect(),
            flows: vec![
                FlowSpec::new("f1", TcpVariant::NewReno, 0.01, 0.1, 1000.0, &["L1", "L2"], &["L3"]),
                FlowSpec::new("f2", TcpVariant::NewReno, 0.01, 0.1, 1000.0, &["L2"], &[]),
            ],
        };
        let inc = spec.incidence().unwrap();
        assert_eq!(inc.data_column(0), vec![1, 1, 0]);
        assert_eq!(inc.ack_column(0), vec![0, 0, 1]);
        assert_eq!(inc.ack_column(1), vec![0, 0, 0]);
        assert_eq!(inc.data_flows(1).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn incidence_rejects_invalid_spec() {
        let mut spec = one_link_one_flow();
        spec.flows[0].data_route = vec!["nope".into()];
        assert!(matches!(spec.incidence(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn default_w_max_rule() {
        // 1 Gbps, 0.2 s, 1050-byte packets: BDP = 23810 packets.
        assert_eq!(default_w_max(1e9, 0.2, 8400.0), 47620);
        assert_eq!(default_w_max(1e6, 0.2, 8400.0), MIN_DEFAULT_W_MAX);
    }
}
