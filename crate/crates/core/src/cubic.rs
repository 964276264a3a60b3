//! Window chain of a single CUBIC flow with a fixed round-trip time.
//!
//! The state `(w', t)` holds the window at the last loss and the number of
//! round trips since then. The window in a state is the larger of the cubic
//! and the TCP-friendly growth curves, capped at `w_max`.

use crate::chain::{explore, ExploreOptions, LabelledChain, StationaryDistribution, StationaryOptions, WindowDynamics};
use crate::error::{Error, Result};
use crate::model::CubicParams;

/// Unclamped CUBIC window `d` round trips after a loss at window `w`.
pub fn cubic_window(w: f64, d: u32, rtt_s: f64, params: &CubicParams) -> f64 {
    let reno = w * (1.0 - params.beta) + 3.0 * params.beta / (2.0 - params.beta) * d as f64;
    if d == 0 {
        return reno;
    }
    let k = (w * params.beta / params.c).cbrt();
    let cubic = params.c * (rtt_s * d as f64 - k).powi(3) + w;
    cubic.max(reno)
}

pub fn cubic_window_clamped(w: f64, d: u32, rtt_s: f64, params: &CubicParams, w_max: u32) -> f64 {
    cubic_window(w, d, rtt_s, params).clamp(1.0, w_max as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CubicState {
    pub w_prime: u32,
    pub t: u32,
}

struct CubicDynamics {
    rtt_s: f64,
    params: CubicParams,
    w_max: u32,
}

impl WindowDynamics for CubicDynamics {
    type State = CubicState;

    fn initial(&self) -> CubicState {
        CubicState { w_prime: 1, t: 0 }
    }

    fn window(&self, s: &CubicState) -> f64 {
        cubic_window_clamped(s.w_prime as f64, s.t, self.rtt_s, &self.params, self.w_max)
    }

    fn after_loss(&self, s: &CubicState) -> CubicState {
        let w = self.window(s).round_ties_even().max(1.0) as u32;
        CubicState { w_prime: w, t: 0 }
    }

    fn after_success(&self, s: &CubicState) -> CubicState {
        if self.window(s) >= self.w_max as f64 {
            *s
        } else {
            CubicState {
                w_prime: s.w_prime,
                t: s.t + 1,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CubicChain {
    pub labelled: LabelledChain<CubicState>,
    /// Largest `t` present in the chain.
    pub t_max: u32,
    pub w_max: u32,
}

impl CubicChain {
    pub fn len(&self) -> usize {
        self.labelled.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labelled.states.is_empty()
    }
}

/// Chain construction and stationary-solve settings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChainOptions {
    pub explore: ExploreOptions,
    pub stationary: StationaryOptions,
}

fn check_args(p: f64, rtt_s: f64, w_max: u32, params: &CubicParams) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument {
            name: "p",
            reason: format!("loss probability {p} is not in (0, 1)"),
        });
    }
    if !(rtt_s > 0.0 && rtt_s.is_finite()) {
        return Err(Error::InvalidArgument {
            name: "rtt_s",
            reason: format!("round-trip time {rtt_s} must be positive"),
        });
    }
    if w_max < 1 {
        return Err(Error::InvalidArgument {
            name: "w_max",
            reason: "must be at least 1".into(),
        });
    }
    if !(params.c > 0.0 && params.beta > 0.0 && params.beta < 1.0) {
        return Err(Error::InvalidArgument {
            name: "params",
            reason: format!("need c > 0 and 0 < beta < 1, got c={} beta={}", params.c, params.beta),
        });
    }
    Ok(())
}

pub fn build_cubic_chain(p: f64, rtt_s: f64, w_max: u32, params: &CubicParams) -> Result<CubicChain> {
    build_cubic_chain_with(p, rtt_s, w_max, params, &ExploreOptions::default())
}

pub fn build_cubic_chain_with(
    p: f64,
    rtt_s: f64,
    w_max: u32,
    params: &CubicParams,
    opts: &ExploreOptions,
) -> Result<CubicChain> {
    check_args(p, rtt_s, w_max, params)?;
    let dynamics = CubicDynamics {
        rtt_s,
        params: *params,
        w_max,
    };
    let labelled = explore(&dynamics, p, opts)?;
    let t_max = labelled.states.iter().map(|s| s.t).max().unwrap_or(0);
    Ok(CubicChain { labelled, t_max, w_max })
}

#[derive(Debug, Clone)]
pub struct CubicSolution {
    pub chain: CubicChain,
    pub stationary: StationaryDistribution,
    pub mean_window: f64,
}

pub fn solve_cubic(p: f64, rtt_s: f64, w_max: u32, params: &CubicParams, opts: &ChainOptions) -> Result<CubicSolution> {
    let chain = build_cubic_chain_with(p, rtt_s, w_max, params, &opts.explore)?;
    let stationary = chain.labelled.chain.stationary(&opts.stationary)?;
    let mean_window = stationary
        .expect(chain.labelled.chain.windows().iter().copied())
        .clamp(1.0, w_max as f64);
    Ok(CubicSolution {
        chain,
        stationary,
        mean_window,
    })
}

/// Stationary mean window `f_p(R)`. With `p = 0` the window sits at `w_max`.
pub fn cubic_mean_window(p: f64, rtt_s: f64, w_max: u32, params: &CubicParams) -> Result<f64> {
    if p == 0.0 && w_max >= 1 {
        return Ok(w_max as f64);
    }
    Ok(solve_cubic(p, rtt_s, w_max, params, &ChainOptions::default())?.mean_window)
}
