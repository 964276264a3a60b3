//! One entry point for the mean window of any supported variant, with caches
//! for the chain-based models.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::compound::{g_p_table_with, GpTable};
use crate::cubic::{solve_cubic, ChainOptions};
use crate::error::Result;
use crate::model::{CompoundParams, CubicParams, TcpVariant};

/// Spacing of the round-trip time nodes at which CUBIC chains are solved.
pub const RTT_NODE_S: f64 = 1e-3;

/// Square-root law constant for New Reno.
pub const RENO_CONSTANT: f64 = 1.31;

/// Any positive rate works here: the table only depends on `mu * delta`.
const TABLE_RATE_PKTS_S: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowQuery {
    pub variant: TcpVariant,
    pub loss_prob: f64,
    pub mean_rtt_s: f64,
    pub mean_queue_pkts: f64,
    pub w_max: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowEstimate {
    pub mean_window: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CubicKey {
    p: u64,
    c: u64,
    beta: u64,
    w_max: u32,
    node: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CompoundKey {
    p: u64,
    alpha: u64,
    k: u64,
    zeta: u64,
    gamma: u64,
    w_max: u32,
}

/// Mean-window oracle shared by the network solvers. Safe to share between
/// threads; concurrent lookups only take a read lock.
#[derive(Debug, Default)]
pub struct WindowModel {
    opts: ChainOptions,
    cubic: RwLock<HashMap<CubicKey, f64>>,
    compound: RwLock<HashMap<CompoundKey, Arc<GpTable>>>,
}

pub fn reno_mean_window(p: f64, w_max: u32) -> f64 {
    (RENO_CONSTANT / p.sqrt()).clamp(1.0, w_max as f64)
}

fn rtt_nodes(rtt_s: f64) -> (u64, f64) {
    let x = rtt_s.max(RTT_NODE_S) / RTT_NODE_S;
    let k = x.floor();
    (k as u64, x - k)
}

fn node_rtt(node: u64) -> f64 {
    node as f64 * RTT_NODE_S
}

fn interpolate(lo: f64, hi: f64, frac: f64) -> f64 {
    lo + (hi - lo) * frac
}

impl WindowModel {
    pub fn new(opts: ChainOptions) -> Self {
        Self {
            opts,
            ..Default::default()
        }
    }

    pub fn mean_window(&self, q: &WindowQuery) -> Result<f64> {
        Ok(self.evaluate(q)?.mean_window)
    }

    pub fn evaluate(&self, q: &WindowQuery) -> Result<WindowEstimate> {
        self.evaluate_inner(q, true)
    }

    /// Same as [`WindowModel::evaluate`] but solves every chain afresh.
    pub fn evaluate_uncached(&self, q: &WindowQuery) -> Result<WindowEstimate> {
        self.evaluate_inner(q, false)
    }

    fn evaluate_inner(&self, q: &WindowQuery, cached: bool) -> Result<WindowEstimate> {
        let w_max = q.w_max.max(1);
        if q.loss_prob <= 0.0 {
            return Ok(WindowEstimate {
                mean_window: w_max as f64,
                note: Some(format!(
                    "{} flow without losses: mean window set to w_max = {w_max}",
                    q.variant.name()
                )),
            });
        }
        let mean_window = match &q.variant {
            TcpVariant::NewReno => reno_mean_window(q.loss_prob, w_max),
            TcpVariant::Cubic(params) => {
                let (k, frac) = rtt_nodes(q.mean_rtt_s);
                let lo = self.cubic_node(q.loss_prob, k, w_max, params, cached)?;
                if frac == 0.0 {
                    lo
                } else {
                    let hi = self.cubic_node(q.loss_prob, k + 1, w_max, params, cached)?;
                    interpolate(lo, hi, frac)
                }
            }
            TcpVariant::Compound(params) => {
                let table = self.compound_table_inner(q.loss_prob, w_max, params, cached)?;
                table.eval(q.mean_queue_pkts.max(0.0))
            }
        };
        Ok(WindowEstimate {
            mean_window: mean_window.clamp(1.0, w_max as f64),
            note: None,
        })
    }

    fn cubic_node(&self, p: f64, node: u64, w_max: u32, params: &CubicParams, cached: bool) -> Result<f64> {
        let key = CubicKey {
            p: p.to_bits(),
            c: params.c.to_bits(),
            beta: params.beta.to_bits(),
            w_max,
            node,
        };
        if cached {
            if let Some(v) = self.cubic.read().expect("cache lock").get(&key) {
                return Ok(*v);
            }
        }
        let v = solve_cubic(p, node_rtt(node), w_max, params, &self.opts)?.mean_window;
        if cached {
            log::debug!("cubic chain p={p} R={} -> {v}", node_rtt(node));
            self.cubic.write().expect("cache lock").insert(key, v);
        }
        Ok(v)
    }

    /// The `E[Q] -> E[W]` table used for Compound flows.
    pub fn compound_table(&self, p: f64, w_max: u32, params: &CompoundParams) -> Result<Arc<GpTable>> {
        self.compound_table_inner(p, w_max, params, true)
    }

    fn compound_table_inner(&self, p: f64, w_max: u32, params: &CompoundParams, cached: bool) -> Result<Arc<GpTable>> {
        let key = CompoundKey {
            p: p.to_bits(),
            alpha: params.alpha.to_bits(),
            k: params.k.to_bits(),
            zeta: params.zeta.to_bits(),
            gamma: params.gamma_pkts.to_bits(),
            w_max,
        };
        if cached {
            if let Some(t) = self.compound.read().expect("cache lock").get(&key) {
                return Ok(Arc::clone(t));
            }
        }
        let table = Arc::new(g_p_table_with(p, TABLE_RATE_PKTS_S, w_max, params, &self.opts)?);
        if cached {
            log::debug!("compound table p={p}: {} points", table.points().len());
            self.compound.write().expect("cache lock").insert(key, Arc::clone(&table));
        }
        Ok(table)
    }

    /// Number of cached CUBIC nodes and Compound tables.
    pub fn cache_sizes(&self) -> (usize, usize) {
        (
            self.cubic.read().expect("cache lock").len(),
            self.compound.read().expect("cache lock").len(),
        )
    }
}
