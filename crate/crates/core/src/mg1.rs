//! Network fixed point with every link modelled as an M/G/1 queue.
//!
//! Given flow rates, link queues follow from the Pollaczek-Khinchine formula,
//! round-trip times from the queueing delays along data and ACK routes, and
//! windows from the per-flow models. The rates are then found by solving
//! `lambda_r = (1 - p_r) E[W_r] / E[R_r]` with Broyden's method.

use std::cell::RefCell;

use crate::broyden::{broyden, BroydenOptions};
use crate::error::{Error, Result};
use crate::model::{Diagnostics, FlowResult, LinkResult, NetworkSpec, SolverMethod, SolverResult};
use crate::network::{window_of, Routes, SolveOptions};
use crate::window::WindowModel;

/// Utilization margin below one at which the queue formula is frozen.
pub const RHO_EPS: f64 = 1e-3;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 200;

/// Initial rates are scaled so that no link starts above this utilization.
const INIT_RHO: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkLoad {
    pub arrival_pkts_s: f64,
    pub second_moment_bits2: f64,
    pub utilization: f64,
    pub mean_queue_pkts: f64,
    /// The queue was computed with `1 - rho` replaced by [`RHO_EPS`].
    pub saturated: bool,
}

impl LinkLoad {
    /// Mean waiting time `E[Q] / lambda`, zero on an idle link.
    pub fn sojourn_s(&self) -> f64 {
        if self.arrival_pkts_s > 0.0 {
            self.mean_queue_pkts / self.arrival_pkts_s
        } else {
            0.0
        }
    }
}

/// Mean number of waiting packets in an M/G/1 queue.
pub fn pk_queue(arrival_pkts_s: f64, second_moment_bits2: f64, capacity_bps: f64, utilization: f64) -> (f64, bool) {
    let saturated = utilization >= 1.0 - RHO_EPS;
    let idle = if saturated { RHO_EPS } else { 1.0 - utilization };
    let q = arrival_pkts_s * arrival_pkts_s * second_moment_bits2 / (2.0 * capacity_bps * capacity_bps * idle);
    (q, saturated)
}

pub fn link_loads(lambda: &[f64], spec: &NetworkSpec) -> Result<Vec<LinkLoad>> {
    let routes = Routes::prepare(spec)?;
    Ok(loads_with(lambda, spec, &routes))
}

pub(crate) fn loads_with(lambda: &[f64], spec: &NetworkSpec, routes: &Routes) -> Vec<LinkLoad> {
    spec.links
        .iter()
        .zip(&routes.link_flows)
        .map(|(link, flows)| {
            let mut rate = 0.0;
            let mut bits = 0.0;
            let mut moment = 0.0;
            for &r in flows {
                let f = &spec.flows[r];
                rate += lambda[r];
                bits += lambda[r] * f.pkt_mean_bits;
                moment += lambda[r] * f.pkt_second_moment_bits2;
            }
            let utilization = bits / link.capacity_bps;
            if rate <= 0.0 {
                return LinkLoad {
                    arrival_pkts_s: 0.0,
                    second_moment_bits2: 0.0,
                    utilization: 0.0,
                    mean_queue_pkts: 0.0,
                    saturated: false,
                };
            }
            let second_moment_bits2 = moment / rate;
            let (mean_queue_pkts, saturated) = pk_queue(rate, second_moment_bits2, link.capacity_bps, utilization);
            LinkLoad {
                arrival_pkts_s: rate,
                second_moment_bits2,
                utilization,
                mean_queue_pkts,
                saturated,
            }
        })
        .collect()
}

/// Mean round-trip time of every flow: propagation delay plus the waiting
/// time on each link of the data route and of the ACK route. Waiting time on a
/// link is its queue divided by the data arrival rate there.
pub fn flow_rtt(loads: &[LinkLoad], spec: &NetworkSpec) -> Result<Vec<f64>> {
    let routes = Routes::prepare(spec)?;
    Ok(rtt_with(loads, spec, &routes))
}

pub(crate) fn rtt_with(loads: &[LinkLoad], spec: &NetworkSpec, routes: &Routes) -> Vec<f64> {
    spec.flows
        .iter()
        .enumerate()
        .map(|(r, f)| {
            let data: f64 = routes.data[r].iter().map(|&l| loads[l].sojourn_s()).sum();
            let ack: f64 = routes.ack[r].iter().map(|&l| loads[l].sojourn_s()).sum();
            f.prop_delay_s + data + ack
        })
        .collect()
}

/// Everything implied by a rate vector.
struct State {
    loads: Vec<LinkLoad>,
    rtt: Vec<f64>,
    windows: Vec<f64>,
}

fn evaluate(
    lambda: &[f64],
    spec: &NetworkSpec,
    routes: &Routes,
    model: &WindowModel,
    notes: &mut Vec<String>,
) -> Result<State> {
    let lambda: Vec<f64> = lambda.iter().map(|x| x.max(0.0)).collect();
    let loads = loads_with(&lambda, spec, routes);
    let rtt = rtt_with(&loads, spec, routes);
    let mut windows = Vec::with_capacity(spec.flows.len());
    for (r, f) in spec.flows.iter().enumerate() {
        // The flow's own backlog, by Little's law along its data route.
        let wait: f64 = routes.data[r].iter().map(|&l| loads[l].sojourn_s()).sum();
        windows.push(window_of(model, f, rtt[r], lambda[r] * wait, notes)?);
    }
    Ok(State { loads, rtt, windows })
}

fn initial_rates(spec: &NetworkSpec, routes: &Routes, model: &WindowModel, notes: &mut Vec<String>) -> Result<Vec<f64>> {
    let mut lambda = Vec::with_capacity(spec.flows.len());
    for f in &spec.flows {
        let w = window_of(model, f, f.prop_delay_s, 0.0, notes)?;
        lambda.push((1.0 - f.loss_prob) * w / f.prop_delay_s);
    }
    let loads = loads_with(&lambda, spec, routes);
    let scale: Vec<f64> = (0..spec.flows.len())
        .map(|r| {
            routes.data[r]
                .iter()
                .map(|&l| (INIT_RHO / loads[l].utilization).min(1.0))
                .fold(1.0, f64::min)
        })
        .collect();
    Ok(lambda.iter().zip(scale).map(|(x, s)| x * s).collect())
}

fn assemble(lambda: &[f64], st: &State, spec: &NetworkSpec, diagnostics: Diagnostics) -> SolverResult {
    let per_flow = spec
        .flows
        .iter()
        .enumerate()
        .map(|(r, f)| {
            let x = lambda[r].max(0.0);
            FlowResult {
                id: f.id.clone(),
                variant: f.variant.name().to_string(),
                throughput_pkts_s: x,
                mean_window: st.windows[r],
                mean_rtt_s: st.rtt[r],
                throughput_bps: x * f.pkt_mean_bits,
            }
        })
        .collect();
    let per_link = spec
        .links
        .iter()
        .zip(&st.loads)
        .map(|(link, load)| LinkResult {
            id: link.id.clone(),
            mean_queue_pkts: load.mean_queue_pkts,
            utilization: load.utilization,
            sojourn_s: load.sojourn_s(),
        })
        .collect();
    SolverResult {
        method: SolverMethod::Mg1,
        per_flow,
        per_link,
        diagnostics,
    }
}

pub fn mg1_solve(spec: &NetworkSpec, opts: &SolveOptions, model: &WindowModel) -> Result<SolverResult> {
    let routes = Routes::prepare(spec)?;
    let bopts = BroydenOptions {
        tol: opts.tol.unwrap_or(DEFAULT_TOL),
        max_iters: opts.max_iters.unwrap_or(DEFAULT_MAX_ITERS),
        ..Default::default()
    };
    let mut notes = Vec::new();
    let x0 = initial_rates(spec, &routes, model, &mut notes)?;

    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let residual = |lambda: &[f64]| -> Vec<f64> {
        let mut scratch = Vec::new();
        match evaluate(lambda, spec, &routes, model, &mut scratch) {
            Ok(st) => spec
                .flows
                .iter()
                .enumerate()
                .map(|(r, f)| lambda[r] - (1.0 - f.loss_prob) * st.windows[r] / st.rtt[r])
                .collect(),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                vec![f64::NAN; lambda.len()]
            }
        }
    };
    let report = broyden(residual, &x0, &bopts);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }

    let st = evaluate(&report.x, spec, &routes, model, &mut notes)?;
    for (link, load) in spec.links.iter().zip(&st.loads) {
        if load.saturated {
            notes.push(format!(
                "link {}: utilization {:.6} within {RHO_EPS} of one, queue formula frozen",
                link.id, load.utilization
            ));
        }
    }
    log::info!(
        "mg1: {} iterations, residual {:e}, {} Jacobian resets",
        report.iterations,
        report.residual_norm,
        report.jacobian_resets
    );
    let diagnostics = Diagnostics {
        iterations: report.iterations,
        residual_norm: report.residual_norm,
        converged: report.converged,
        notes,
    };
    let result = assemble(&report.x, &st, spec, diagnostics);

    let worst = st
        .loads
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.utilization.total_cmp(&b.1.utilization));
    if let Some((l, load)) = worst {
        let overloaded = load.utilization >= 1.0 || (!report.converged && load.saturated);
        if overloaded {
            return Err(Error::Infeasible {
                link: spec.links[l].id.clone(),
                utilization: load.utilization,
                best: Box::new(result),
            });
        }
    }
    if !report.converged {
        return Err(Error::NotConverged(Box::new(result)));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FlowSpec, LinkSpec, TcpVariant};

    fn link(id: &str, mbps: f64) -> LinkSpec {
        LinkSpec {
            id: id.into(),
            capacity_bps: mbps * 1e6,
        }
    }

    #[test]
    fn idle_link_has_no_queue() {
        let spec = NetworkSpec {
            links: vec![link("L1", 100.0)],
            flows: vec![FlowSpec::new("f", TcpVariant::NewReno, 1e-3, 0.1, 1050.0, &["L1"], &[])],
        };
        let l = &link_loads(&[0.0], &spec).unwrap()[0];
        assert_eq!(l.mean_queue_pkts, 0.0);
        assert_eq!(l.utilization, 0.0);
    }

    #[test]
    fn deterministic_service_at_half_load() {
        let (q, sat) = pk_queue(0.5, 1.0, 1.0, 0.5);
        assert!((q - 0.25).abs() < 1e-15);
        assert!(!sat);
    }

    #[test]
    fn utilization_of_two_flows() {
        let spec = NetworkSpec {
            links: vec![link("L1", 100.0)],
            flows: vec![
                FlowSpec::new("a", TcpVariant::NewReno, 1e-3, 0.1, 1050.0, &["L1"], &[]),
                FlowSpec::new("b", TcpVariant::NewReno, 1e-3, 0.1, 1050.0, &["L1"], &[]),
            ],
        };
        let l = &link_loads(&[1000.0, 500.0], &spec).unwrap()[0];
        assert!((l.utilization - 0.126).abs() < 1e-12);
        assert_eq!(l.arrival_pkts_s, 1500.0);
    }

    #[test]
    fn saturation_keeps_queue_finite() {
        let (q, sat) = pk_queue(1.0, 1.0, 1.0, 1.2);
        assert!(sat);
        assert!(q.is_finite() && q > 0.0);
    }

    #[test]
    fn rtt_adds_waiting_time_and_ack_path() {
        let loads = vec![
            LinkLoad {
                arrival_pkts_s: 1000.0,
                second_moment_bits2: 0.0,
                utilization: 0.5,
                mean_queue_pkts: 10.0,
                saturated: false,
            },
            LinkLoad {
                arrival_pkts_s: 500.0,
                second_moment_bits2: 0.0,
                utilization: 0.5,
                mean_queue_pkts: 5.0,
                saturated: false,
            },
        ];
        let spec = NetworkSpec {
            links: vec![link("L1", 10.0), link("L2", 10.0)],
            flows: vec![
                FlowSpec::new("a", TcpVariant::NewReno, 1e-3, 0.1, 1050.0, &["L1"], &[]),
                FlowSpec::new("b", TcpVariant::NewReno, 1e-3, 0.1, 1050.0, &["L1"], &["L2"]),
            ],
        };
        let r = flow_rtt(&loads, &spec).unwrap();
        assert!((r[0] - 0.11).abs() < 1e-12);
        assert!((r[1] - 0.12).abs() < 1e-12);
    }

    #[test]
    fn lone_reno_flow_on_fast_link() {
        let spec = NetworkSpec {
            links: vec![link("L1", 1000.0)],
            flows: vec![FlowSpec::new("f", TcpVariant::NewReno, 1e-4, 0.1, 1050.0, &["L1"], &[])],
        };
        let res = mg1_solve(&spec, &SolveOptions::default(), &WindowModel::default()).unwrap();
        let f = &res.per_flow[0];
        assert!((f.throughput_pkts_s - 1309.87).abs() < 0.1, "{}", f.throughput_pkts_s);
        assert!(res.per_link[0].mean_queue_pkts < 1e-3);
        assert!(res.diagnostics.converged);
    }

    #[test]
    fn empty_network_converges_trivially() {
        let spec = NetworkSpec {
            links: vec![link("L1", 10.0)],
            flows: vec![],
        };
        let res = mg1_solve(&spec, &SolveOptions::default(), &WindowModel::default()).unwrap();
        assert!(res.per_flow.is_empty());
        assert_eq!(res.per_link[0].utilization, 0.0);
    }
}
