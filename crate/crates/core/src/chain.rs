//! Finite Markov chains in which every state has exactly two successors: one
//! taken when the round trip sees at least one packet loss and one taken when
//! it does not.
//!
//! All window models in this crate are chains of this shape. Because each
//! state stores two outgoing edges, one application of the transition
//! operator costs `O(N)` regardless of how the states are labelled.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt::Debug;
use std::hash::Hash;

use rustc_hash::FxHashMap as HashMap;

use crate::error::{Error, Result};

/// Probability that a round trip carrying `window` packets loses at least one
/// of them when each packet is dropped independently with probability `p`.
pub fn round_loss_prob(p: f64, window: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else if p >= 1.0 {
        1.0
    } else {
        -(window * (-p).ln_1p()).exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoSuccessorChain {
    loss_succ: Vec<u32>,
    noloss_succ: Vec<u32>,
    loss_prob: Vec<f64>,
    window: Vec<f64>,
}

impl TwoSuccessorChain {
    pub fn new(
        loss_succ: Vec<u32>,
        noloss_succ: Vec<u32>,
        loss_prob: Vec<f64>,
        window: Vec<f64>,
    ) -> Result<Self> {
        let n = loss_succ.len();
        if noloss_succ.len() != n || loss_prob.len() != n || window.len() != n {
            return Err(Error::InvalidArgument {
                name: "chain",
                reason: "successor, probability and window arrays differ in length".into(),
            });
        }
        if n == 0 {
            return Err(Error::InvalidArgument {
                name: "chain",
                reason: "chain has no states".into(),
            });
        }
        if loss_succ.iter().chain(&noloss_succ).any(|&s| s as usize >= n) {
            return Err(Error::InvalidArgument {
                name: "chain",
                reason: "successor index out of range".into(),
            });
        }
        if loss_prob.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::InvalidArgument {
                name: "chain",
                reason: "loss probability outside [0, 1]".into(),
            });
        }
        Ok(Self {
            loss_succ,
            noloss_succ,
            loss_prob,
            window,
        })
    }

    pub fn len(&self) -> usize {
        self.loss_succ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss_succ.is_empty()
    }

    pub fn loss_successor(&self, state: usize) -> usize {
        self.loss_succ[state] as usize
    }

    pub fn noloss_successor(&self, state: usize) -> usize {
        self.noloss_succ[state] as usize
    }

    pub fn loss_prob(&self, state: usize) -> f64 {
        self.loss_prob[state]
    }

    pub fn window(&self, state: usize) -> f64 {
        self.window[state]
    }

    pub fn windows(&self) -> &[f64] {
        &self.window
    }

    /// Number of stored transitions: two per state.
    pub fn transition_count(&self) -> usize {
        self.loss_succ.len() + self.noloss_succ.len()
    }

    /// `out = pi * P`.
    pub fn apply(&self, pi: &[f64], out: &mut [f64], work: &mut SweepWork) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..self.len() {
            let q = self.loss_prob[i];
            out[self.loss_succ[i] as usize] += pi[i] * q;
            out[self.noloss_succ[i] as usize] += pi[i] * (1.0 - q);
        }
        work.state_visits += self.len() as u64;
        work.edge_visits += self.transition_count() as u64;
        work.sweeps += 1;
    }

    /// `|| pi P - pi ||_1`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut out = vec![0.0; self.len()];
        self.apply(pi, &mut out, &mut SweepWork::default());
        out.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn stationary(&self, opts: &StationaryOptions) -> Result<StationaryDistribution> {
        match opts.method {
            SweepMethod::Power => self.stationary_power(opts),
            SweepMethod::GaussSeidel => self.stationary_gauss_seidel(opts),
        }
    }

    fn stationary_power(&self, opts: &StationaryOptions) -> Result<StationaryDistribution> {
        let n = self.len();
        let mut pi = vec![1.0 / n as f64; n];
        let mut next = vec![0.0; n];
        let mut work = SweepWork::default();
        let mut residual = f64::INFINITY;
        for iter in 1..=opts.max_iters {
            self.apply(&pi, &mut next, &mut work);
            let mass: f64 = next.iter().sum();
            residual = 0.0;
            for (a, b) in next.iter_mut().zip(&pi) {
                *a /= mass;
                residual += (*a - b).abs();
            }
            std::mem::swap(&mut pi, &mut next);
            if residual <= opts.tol {
                return Ok(StationaryDistribution {
                    probs: pi,
                    residual,
                    iterations: iter,
                    work,
                });
            }
        }
        Err(Error::StationaryNotConverged {
            iterations: opts.max_iters,
            residual,
        })
    }

    /// In-place sweep of `pi = pi P` in state order. Builders order states so
    /// that no-loss successors never precede their source, which lets mass
    /// travel along a whole loss-free run within one sweep.
    fn stationary_gauss_seidel(&self, opts: &StationaryOptions) -> Result<StationaryDistribution> {
        let n = self.len();
        let preds = Predecessors::build(self);
        let mut pi = vec![1.0 / n as f64; n];
        let mut scratch = vec![0.0; n];
        let mut work = SweepWork::default();
        let mut residual = f64::INFINITY;
        for iter in 1..=opts.max_iters {
            for j in 0..n {
                let (inflow, self_p) = preds.inflow(j, &pi);
                pi[j] = if self_p < 1.0 - 1e-15 {
                    inflow / (1.0 - self_p)
                } else {
                    pi[j] + inflow
                };
            }
            work.state_visits += n as u64;
            work.edge_visits += preds.edges() as u64;
            work.sweeps += 1;

            let mass: f64 = pi.iter().sum();
            if !(mass.is_finite() && mass > 0.0) {
                return Err(Error::StationaryNotConverged {
                    iterations: iter,
                    residual: f64::NAN,
                });
            }
            pi.iter_mut().for_each(|x| *x /= mass);

            self.apply(&pi, &mut scratch, &mut work);
            residual = scratch.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            if residual <= opts.tol {
                return Ok(StationaryDistribution {
                    probs: pi,
                    residual,
                    iterations: iter,
                    work,
                });
            }
        }
        Err(Error::StationaryNotConverged {
            iterations: opts.max_iters,
            residual,
        })
    }
}

/// Incoming edges of every state in compressed-row form.
struct Predecessors {
    offsets: Vec<u32>,
    sources: Vec<u32>,
    probs: Vec<f64>,
}

impl Predecessors {
    fn build(chain: &TwoSuccessorChain) -> Self {
        let n = chain.len();
        let mut counts = vec![0u32; n + 1];
        for i in 0..n {
            counts[chain.loss_succ[i] as usize + 1] += 1;
            counts[chain.noloss_succ[i] as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let total = offsets[n] as usize;
        let mut sources = vec![0u32; total];
        let mut probs = vec![0.0; total];
        for i in 0..n {
            let q = chain.loss_prob[i];
            for (to, w) in [(chain.loss_succ[i], q), (chain.noloss_succ[i], 1.0 - q)] {
                let slot = fill[to as usize] as usize;
                sources[slot] = i as u32;
                probs[slot] = w;
                fill[to as usize] += 1;
            }
        }
        Self {
            offsets,
            sources,
            probs,
        }
    }

    fn edges(&self) -> usize {
        self.sources.len()
    }

    /// Inflow from other states and total self-loop probability of `j`.
    #[inline]
    fn inflow(&self, j: usize, pi: &[f64]) -> (f64, f64) {
        let (lo, hi) = (self.offsets[j] as usize, self.offsets[j + 1] as usize);
        let mut inflow = 0.0;
        let mut self_p = 0.0;
        for k in lo..hi {
            let src = self.sources[k] as usize;
            if src == j {
                self_p += self.probs[k];
            } else {
                inflow += pi[src] * self.probs[k];
            }
        }
        (inflow, self_p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMethod {
    /// Plain `pi <- pi P`.
    Power,
    /// In-place forward sweep of `pi <- pi P`.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub method: SweepMethod,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 1_000_000,
            method: SweepMethod::GaussSeidel,
        }
    }
}

/// Operation counters accumulated while solving for a stationary distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepWork {
    pub sweeps: usize,
    pub state_visits: u64,
    pub edge_visits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub probs: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub work: SweepWork,
}

impl StationaryDistribution {
    pub fn expect(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        self.probs.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

/// Per-round-trip window dynamics with one successor per loss outcome.
pub trait WindowDynamics {
    type State: Copy + Eq + Hash + Ord + Debug;

    fn initial(&self) -> Self::State;
    fn window(&self, state: &Self::State) -> f64;
    fn after_loss(&self, state: &Self::State) -> Self::State;
    fn after_success(&self, state: &Self::State) -> Self::State;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExploreOptions {
    /// States whose most likely path from the initial state has probability
    /// below this floor are not expanded along their loss-free successor;
    /// from such a state both outcomes lead to the loss successor.
    pub path_floor: f64,
    pub max_states: usize,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        Self {
            path_floor: 1e-14,
            max_states: 20_000_000,
        }
    }
}

/// A chain together with the label of each state. States are sorted by their
/// `Ord` so that a builder can make loss-free successors point forward.
#[derive(Debug, Clone)]
pub struct LabelledChain<S> {
    pub chain: TwoSuccessorChain,
    pub states: Vec<S>,
}

impl<S: Copy + Eq + Hash + Ord> LabelledChain<S> {
    pub fn index_of(&self, state: &S) -> Option<usize> {
        self.states.binary_search(state).ok()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Enumerates the states reachable from `dynamics.initial()` and wires up
/// their two successors.
///
/// States are visited in order of decreasing path probability. The set is
/// always closed under loss successors, so only loss-free runs get cut.
pub fn explore<D: WindowDynamics>(
    dynamics: &D,
    p: f64,
    opts: &ExploreOptions,
) -> Result<LabelledChain<D::State>> {
    let budget = -opts.path_floor.ln();
    let log_keep = if p > 0.0 { (-p).ln_1p() } else { 0.0 };
    let mut cost: HashMap<D::State, f64> = HashMap::default();
    let mut heap = BinaryHeap::new();
    let init = dynamics.initial();
    cost.insert(init, 0.0);
    heap.push(Reverse((Cost(0.0), init)));

    while let Some(Reverse((Cost(c), s))) = heap.pop() {
        if c > cost[&s] {
            continue;
        }
        let w = dynamics.window(&s);
        let q = round_loss_prob(p, w);
        let mut relax = |next: D::State, nc: f64| -> Result<()> {
            match cost.get(&next) {
                Some(&old) if old <= nc => {}
                _ => {
                    cost.insert(next, nc);
                    if cost.len() > opts.max_states {
                        return Err(Error::ChainTooLarge {
                            limit: opts.max_states,
                        });
                    }
                    heap.push(Reverse((Cost(nc), next)));
                }
            }
            Ok(())
        };
        if q > 0.0 {
            relax(dynamics.after_loss(&s), c - q.ln())?;
        }
        if c <= budget && q < 1.0 {
            let next = dynamics.after_success(&s);
            let nc = c - w * log_keep;
            if next != s && nc <= budget {
                relax(next, nc)?;
            }
        }
    }

    let mut states: Vec<D::State> = cost.into_keys().collect();
    states.sort_unstable();
    let index: HashMap<D::State, u32> = states.iter().enumerate().map(|(i, s)| (*s, i as u32)).collect();

    let n = states.len();
    let mut loss_succ = Vec::with_capacity(n);
    let mut noloss_succ = Vec::with_capacity(n);
    let mut loss_prob = Vec::with_capacity(n);
    let mut window = Vec::with_capacity(n);
    for (i, s) in states.iter().enumerate() {
        let w = dynamics.window(s);
        let q = round_loss_prob(p, w);
        let on_loss = if q > 0.0 {
            index[&dynamics.after_loss(s)]
        } else {
            i as u32
        };
        let next = dynamics.after_success(s);
        let on_success = if next == *s {
            i as u32
        } else {
            // a cut run ends as if the round had seen a loss
            index.get(&next).copied().unwrap_or(on_loss)
        };
        loss_succ.push(on_loss);
        noloss_succ.push(on_success);
        loss_prob.push(q);
        window.push(w);
    }
    Ok(LabelledChain {
        chain: TwoSuccessorChain::new(loss_succ, noloss_succ, loss_prob, window)?,
        states,
    })
}
