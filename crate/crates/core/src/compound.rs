//! Window chains of a single Compound TCP flow.
//!
//! Without queueing the window follows a one-dimensional chain. With a
//! bottleneck of `mu` packets/s and propagation delay `delta`, the delay-based
//! part `D` and the loss-based part `L` are tracked separately and the queue
//! is estimated as `(W - mu * delta)+`.

use crate::chain::{explore, ExploreOptions, LabelledChain, StationaryDistribution, WindowDynamics};
use crate::cubic::ChainOptions;
use crate::error::{Error, Result};
use crate::model::CompoundParams;

/// Snap a real window component onto the integer grid.
fn snap(x: f64) -> u32 {
    x.round_ties_even().max(0.0) as u32
}

/// Delay-based increment `(alpha * w^k - 1)+`.
pub fn delay_increment(w: f64, params: &CompoundParams) -> f64 {
    (params.alpha * w.powf(params.k) - 1.0).max(0.0)
}

/// One round trip of the queue-free window law.
pub fn compound_step_noqueue(w: f64, loss: bool, params: &CompoundParams, w_max: u32) -> f64 {
    if loss {
        (w / 2.0).max(1.0)
    } else {
        (w + 1.0 + delay_increment(w, params)).min(w_max as f64)
    }
}

fn check_params(p: f64, w_max: u32, params: &CompoundParams) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument {
            name: "p",
            reason: format!("loss probability {p} is not in (0, 1)"),
        });
    }
    if w_max < 1 {
        return Err(Error::InvalidArgument {
            name: "w_max",
            reason: "must be at least 1".into(),
        });
    }
    let CompoundParams {
        alpha,
        k,
        zeta,
        gamma_pkts,
    } = *params;
    if !(alpha > 0.0 && k > 0.0 && zeta > 0.0 && gamma_pkts > 0.0) {
        return Err(Error::InvalidArgument {
            name: "params",
            reason: "alpha, k, zeta and gamma must be positive".into(),
        });
    }
    Ok(())
}

struct NoQueue {
    params: CompoundParams,
    w_max: u32,
}

impl WindowDynamics for NoQueue {
    type State = u32;

    fn initial(&self) -> u32 {
        1
    }

    fn window(&self, s: &u32) -> f64 {
        *s as f64
    }

    fn after_loss(&self, s: &u32) -> u32 {
        snap(compound_step_noqueue(*s as f64, true, &self.params, self.w_max)).max(1)
    }

    fn after_success(&self, s: &u32) -> u32 {
        snap(compound_step_noqueue(*s as f64, false, &self.params, self.w_max)).clamp(1, self.w_max)
    }
}

#[derive(Debug, Clone)]
pub struct NoQueueSolution {
    pub labelled: LabelledChain<u32>,
    pub stationary: StationaryDistribution,
    pub mean_window: f64,
}

pub fn solve_compound_noqueue(p: f64, w_max: u32, params: &CompoundParams, opts: &ChainOptions) -> Result<NoQueueSolution> {
    check_params(p, w_max, params)?;
    let dynamics = NoQueue { params: *params, w_max };
    // The chain is one-dimensional, so it is never cut.
    let explore_opts = ExploreOptions {
        path_floor: 0.0,
        ..opts.explore
    };
    let labelled = explore(&dynamics, p, &explore_opts)?;
    let stationary = labelled.chain.stationary(&opts.stationary)?;
    let mean_window = stationary
        .expect(labelled.chain.windows().iter().copied())
        .clamp(1.0, w_max as f64);
    Ok(NoQueueSolution {
        labelled,
        stationary,
        mean_window,
    })
}

/// Stationary mean window when queueing is negligible. With `p = 0` the window
/// sits at `w_max`.
pub fn compound_mean_window_noqueue(p: f64, w_max: u32, params: &CompoundParams) -> Result<f64> {
    if p == 0.0 && w_max >= 1 {
        return Ok(w_max as f64);
    }
    Ok(solve_compound_noqueue(p, w_max, params, &ChainOptions::default())?.mean_window)
}

/// `(L, D)` on the integer grid; ordered so that `L` grows along loss-free runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CompoundState {
    pub l: u32,
    pub d: u32,
}

impl CompoundState {
    pub fn window(&self) -> f64 {
        (self.d + self.l) as f64
    }
}

/// Queue estimate `(W - mu * delta)+` in packets.
pub fn queue_estimate(w: f64, bdp_pkts: f64) -> f64 {
    (w - bdp_pkts).max(0.0)
}

/// One round trip of the `(D, L)` law. `bdp_pkts` is `mu * delta`.
pub fn compound_step_queue(
    s: CompoundState,
    loss: bool,
    bdp_pkts: f64,
    params: &CompoundParams,
    w_max: u32,
) -> CompoundState {
    let w = s.window();
    let (d, l) = if loss {
        (s.d as f64 / 2.0, s.l as f64 / 2.0)
    } else {
        let q = queue_estimate(w, bdp_pkts);
        let d = if q < params.gamma_pkts {
            s.d as f64 + delay_increment(w, params)
        } else {
            (s.d as f64 - params.zeta * q).max(0.0)
        };
        (d, s.l as f64 + 1.0)
    };
    let l = snap(l).clamp(1, w_max);
    let d = snap(d).min(w_max - l);
    CompoundState { l, d }
}

struct WithQueue {
    bdp_pkts: f64,
    params: CompoundParams,
    w_max: u32,
}

impl WindowDynamics for WithQueue {
    type State = CompoundState;

    fn initial(&self) -> CompoundState {
        CompoundState { l: 1, d: 0 }
    }

    fn window(&self, s: &CompoundState) -> f64 {
        s.window()
    }

    fn after_loss(&self, s: &CompoundState) -> CompoundState {
        compound_step_queue(*s, true, self.bdp_pkts, &self.params, self.w_max)
    }

    fn after_success(&self, s: &CompoundState) -> CompoundState {
        compound_step_queue(*s, false, self.bdp_pkts, &self.params, self.w_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundQueueResult {
    /// Time-average window `E[WR]/E[R]`.
    pub mean_window_palm: f64,
    /// Packet-average round-trip time `E[WR]/E[W]`.
    pub mean_rtt_palm_s: f64,
    pub mean_window_slot: f64,
    pub mean_rtt_slot_s: f64,
    /// `E[WR]` over round-trip slots.
    pub mean_window_rtt: f64,
    pub mean_queue_pkts: f64,
    /// Delivered packets per second over link capacity, `(1-p) E[W] / (E[R] mu)`
    /// with time-averaged window.
    pub utilization: f64,
    pub states: usize,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct QueueSolution {
    pub labelled: LabelledChain<CompoundState>,
    pub stationary: StationaryDistribution,
    pub result: CompoundQueueResult,
}

pub fn solve_compound_queue(
    p: f64,
    delta_s: f64,
    mu_pkts_s: f64,
    w_max: u32,
    params: &CompoundParams,
    opts: &ChainOptions,
) -> Result<QueueSolution> {
    check_params(p, w_max, params)?;
    if !(delta_s > 0.0 && delta_s.is_finite()) {
        return Err(Error::InvalidArgument {
            name: "delta_s",
            reason: format!("propagation delay {delta_s} must be positive"),
        });
    }
    if !(mu_pkts_s > 0.0 && mu_pkts_s.is_finite()) {
        return Err(Error::InvalidArgument {
            name: "mu_pkts_s",
            reason: format!("bottleneck rate {mu_pkts_s} must be positive"),
        });
    }
    let bdp_pkts = mu_pkts_s * delta_s;
    let dynamics = WithQueue {
        bdp_pkts,
        params: *params,
        w_max,
    };
    let labelled = explore(&dynamics, p, &opts.explore)?;
    let stationary = labelled.chain.stationary(&opts.stationary)?;

    let (mut ew, mut er, mut ewr, mut eq) = (0.0, 0.0, 0.0, 0.0);
    for (s, &pi) in labelled.states.iter().zip(&stationary.probs) {
        let w = s.window();
        let r = delta_s.max(w / mu_pkts_s);
        ew += pi * w;
        er += pi * r;
        ewr += pi * w * r;
        eq += pi * queue_estimate(w, bdp_pkts);
    }
    let mean_window_palm = ewr / er;
    let result = CompoundQueueResult {
        mean_window_palm,
        mean_rtt_palm_s: ewr / ew,
        mean_window_slot: ew,
        mean_rtt_slot_s: er,
        mean_window_rtt: ewr,
        mean_queue_pkts: eq,
        utilization: (1.0 - p) * ew / er / mu_pkts_s,
        states: labelled.states.len(),
        iterations: stationary.iterations,
        residual: stationary.residual,
    };
    Ok(QueueSolution {
        labelled,
        stationary,
        result,
    })
}

pub fn compound_chain_queue(
    p: f64,
    delta_s: f64,
    mu_pkts_s: f64,
    w_max: u32,
    params: &CompoundParams,
) -> Result<CompoundQueueResult> {
    Ok(solve_compound_queue(p, delta_s, mu_pkts_s, w_max, params, &ChainOptions::default())?.result)
}

/// Piecewise-linear, non-increasing map from mean queue to mean window.
#[derive(Debug, Clone, PartialEq)]
pub struct GpTable {
    /// `(E[Q], E[W])` sorted by queue; the first point is at zero queue.
    points: Vec<(f64, f64)>,
}

impl GpTable {
    pub fn from_points(mut raw: Vec<(f64, f64)>) -> Result<Self> {
        raw.retain(|(q, w)| q.is_finite() && w.is_finite() && *q >= 0.0);
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (q, w) in raw {
            match points.last_mut() {
                Some(last) if q - last.0 <= 1e-9 * q.max(1.0) => last.1 = last.1.min(w),
                Some(last) => {
                    let w = w.min(last.1);
                    points.push((q, w));
                }
                None => points.push((q, w)),
            }
        }
        if points.len() < 2 {
            return Err(Error::TableTooSmall);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Mean window at mean queue `q`; flat outside the sampled range.
    pub fn eval(&self, q: f64) -> f64 {
        let pts = &self.points;
        if !(q > pts[0].0) {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if q >= last.0 {
            return last.1;
        }
        let i = pts.partition_point(|(x, _)| *x <= q);
        let (x0, y0) = pts[i - 1];
        let (x1, y1) = pts[i];
        y0 + (y1 - y0) * (q - x0) / (x1 - x0)
    }
}

/// Number of bandwidth-delay products swept when building a [`GpTable`].
pub const GP_GRID_POINTS: usize = 24;

/// Samples `E[Q] -> E[W]` by sweeping the bandwidth-delay product `mu * delta`
/// over a log grid from 1 to `2 * w_max` packets, anchored at the queue-free
/// mean window.
pub fn g_p_table(p: f64, mu_pkts_s: f64, w_max: u32, params: &CompoundParams) -> Result<GpTable> {
    g_p_table_with(p, mu_pkts_s, w_max, params, &ChainOptions::default())
}

pub fn g_p_table_with(
    p: f64,
    mu_pkts_s: f64,
    w_max: u32,
    params: &CompoundParams,
    opts: &ChainOptions,
) -> Result<GpTable> {
    let anchor = solve_compound_noqueue(p, w_max, params, opts)?.mean_window;
    let top = (2.0 * w_max as f64).ln();
    let mut points = vec![(0.0, anchor)];
    for i in 0..GP_GRID_POINTS {
        let bdp = (top * i as f64 / (GP_GRID_POINTS - 1) as f64).exp();
        let r = solve_compound_queue(p, bdp / mu_pkts_s, mu_pkts_s, w_max, params, opts)?.result;
        if r.mean_queue_pkts > 1e-9 {
            points.push((r.mean_queue_pkts, r.mean_window_palm));
        }
    }
    GpTable::from_points(points)
}
