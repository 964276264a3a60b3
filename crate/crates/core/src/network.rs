//! Route lookups and window evaluation shared by the network solvers.

use crate::error::Result;
use crate::model::{FlowSpec, Incidence, NetworkSpec, TcpVariant};
use crate::window::{WindowModel, WindowQuery};

/// Iteration limits for a network solve. Unset fields take the solver's own
/// defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveOptions {
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
}

pub(crate) struct Routes {
    pub data: Vec<Vec<usize>>,
    pub ack: Vec<Vec<usize>>,
    pub link_flows: Vec<Vec<usize>>,
}

impl Routes {
    pub fn new(inc: &Incidence) -> Self {
        Self {
            data: (0..inc.n_flows()).map(|r| inc.data_links(r).collect()).collect(),
            ack: (0..inc.n_flows()).map(|r| inc.ack_links(r).collect()).collect(),
            link_flows: (0..inc.n_links()).map(|l| inc.data_flows(l).collect()).collect(),
        }
    }

    pub fn prepare(spec: &NetworkSpec) -> Result<Self> {
        spec.ensure_valid()?;
        Ok(Self::new(&spec.incidence()?))
    }
}

pub(crate) fn window_of(
    model: &WindowModel,
    flow: &FlowSpec,
    mean_rtt_s: f64,
    mean_queue_pkts: f64,
    notes: &mut Vec<String>,
) -> Result<f64> {
    let est = model.evaluate(&WindowQuery {
        variant: flow.variant,
        loss_prob: flow.loss_prob,
        mean_rtt_s: mean_rtt_s.max(flow.prop_delay_s),
        mean_queue_pkts: mean_queue_pkts.max(0.0),
        w_max: flow.w_max,
    })?;
    if let Some(n) = est.note {
        let n = format!("flow {}: {n}", flow.id);
        if !notes.contains(&n) {
            notes.push(n);
        }
    }
    Ok(est.mean_window)
}

pub(crate) fn is_fixed_window(variant: &TcpVariant) -> bool {
    matches!(variant, TcpVariant::NewReno)
}
