//! Monte-Carlo simulation of the per-round-trip window laws.
//!
//! Each round trip sees at least one loss with probability `1 - (1-p)^W`.
//! Every flow draws from its own ChaCha8 stream: the generator is seeded with
//! the run seed and flow `i` uses stream `i`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{CompoundParams, CubicParams, TcpVariant};

/// Batches used for the batch-means standard errors.
pub const BATCHES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bottleneck {
    Infinite,
    /// Service rate in packets/s.
    Finite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub variant: TcpVariant,
    pub loss_prob: f64,
    pub prop_delay_s: f64,
    pub bottleneck: Bottleneck,
    pub w_max: u32,
    pub horizon_rtts: u64,
    pub seed: u64,
    pub warmup_rtts: u64,
    /// Record how often each window state is visited.
    pub record_visits: bool,
}

impl SimConfig {
    pub fn new(variant: TcpVariant, loss_prob: f64, prop_delay_s: f64) -> Self {
        Self {
            variant,
            loss_prob,
            prop_delay_s,
            bottleneck: Bottleneck::Infinite,
            w_max: 4096,
            horizon_rtts: 1_000_000,
            seed: 42,
            warmup_rtts: 10_000,
            record_visits: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidArgument { name, reason });
        if !(0.0..1.0).contains(&self.loss_prob) {
            return bad("loss_prob", format!("{} is not in [0, 1)", self.loss_prob));
        }
        if !(self.prop_delay_s > 0.0 && self.prop_delay_s.is_finite()) {
            return bad("prop_delay_s", format!("{} must be positive", self.prop_delay_s));
        }
        if self.w_max < 1 {
            return bad("w_max", "must be at least 1".into());
        }
        if self.horizon_rtts <= self.warmup_rtts {
            return bad(
                "horizon_rtts",
                format!("horizon {} must exceed warmup {}", self.horizon_rtts, self.warmup_rtts),
            );
        }
        if let Bottleneck::Finite(mu) = self.bottleneck {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad("bottleneck", format!("rate {mu} must be positive"));
            }
        }
        Ok(())
    }
}

/// Window state as seen by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SimState {
    Reno(u32),
    /// Window at the last loss and round trips since.
    Cubic { w_prime: u32, t: u32 },
    Compound(u32),
    CompoundSplit { l: u32, d: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StdErrors {
    pub mean_window: f64,
    pub mean_rtt_s: f64,
    pub throughput_pkts_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    /// Time-average window `sum W R / sum R`.
    pub mean_window: f64,
    /// Average window per round trip.
    pub mean_window_slot: f64,
    /// Packet-average round-trip time `sum W R / sum W`.
    pub mean_rtt_s: f64,
    pub mean_rtt_slot_s: f64,
    /// `(1-p) sum W / sum R`.
    pub throughput_pkts_s: f64,
    /// Average per round trip of the flow's own backlog.
    pub mean_queue_pkts: f64,
    pub rtts: u64,
    pub loss_events: u64,
    pub std_err: StdErrors,
    pub visit_freq: Option<BTreeMap<SimState, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckStats {
    pub flows: Vec<SimStats>,
    /// Delivered packets over capacity.
    pub utilization: f64,
    /// Time-average shared backlog.
    pub mean_backlog_pkts: f64,
    pub mean_queue_delay_s: f64,
    pub elapsed_s: f64,
}

fn loss_in_round(p: f64, w: f64) -> f64 {
    -(w * (-p).ln_1p()).exp_m1()
}

fn snap(x: f64) -> u32 {
    x.round_ties_even().max(0.0) as u32
}

#[derive(Debug, Clone, Copy)]
enum Window {
    Reno(u32),
    Cubic { w_prime: u32, t: u32, elapsed_s: f64 },
    Compound(u32),
    CompoundSplit { l: u32, d: u32 },
}

struct Flow {
    cfg: SimConfig,
    state: Window,
    rng: ChaCha8Rng,
    acc: Acc,
}

impl Flow {
    fn new(cfg: SimConfig, seed: u64, stream: u64, finite: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let state = match cfg.variant {
            TcpVariant::NewReno => Window::Reno(1),
            TcpVariant::Cubic(_) => Window::Cubic {
                w_prime: 1,
                t: 0,
                elapsed_s: 0.0,
            },
            TcpVariant::Compound(_) if finite => Window::CompoundSplit { l: 1, d: 0 },
            TcpVariant::Compound(_) => Window::Compound(1),
        };
        Self {
            cfg,
            state,
            rng,
            acc: Acc::new(cfg.horizon_rtts - cfg.warmup_rtts, cfg.record_visits),
        }
    }

    fn window(&self) -> f64 {
        let cap = self.cfg.w_max as f64;
        match self.state {
            Window::Reno(w) | Window::Compound(w) => w as f64,
            Window::CompoundSplit { l, d } => (l + d) as f64,
            Window::Cubic { w_prime, t, elapsed_s } => {
                let TcpVariant::Cubic(CubicParams { c, beta }) = self.cfg.variant else {
                    unreachable!()
                };
                let w = w_prime as f64;
                let friendly = w * (1.0 - beta) + 3.0 * beta / (2.0 - beta) * t as f64;
                let target = if t == 0 {
                    friendly
                } else {
                    let origin = (w * beta / c).cbrt();
                    (c * (elapsed_s - origin).powi(3) + w).max(friendly)
                };
                target.clamp(1.0, cap)
            }
        }
    }

    fn label(&self) -> SimState {
        match self.state {
            Window::Reno(w) => SimState::Reno(w),
            Window::Cubic { w_prime, t, .. } => SimState::Cubic { w_prime, t },
            Window::Compound(w) => SimState::Compound(w),
            Window::CompoundSplit { l, d } => SimState::CompoundSplit { l, d },
        }
    }

    /// Advances one round trip of length `rtt` in which the flow holds `own_queue`
    /// packets in the bottleneck.
    fn advance(&mut self, w: f64, rtt: f64, own_queue: f64, loss: bool) {
        let cap = self.cfg.w_max;
        self.state = match self.state {
            Window::Reno(x) => {
                if loss {
                    Window::Reno(snap(x as f64 / 2.0).max(1))
                } else {
                    Window::Reno((x + 1).min(cap))
                }
            }
            Window::Cubic { w_prime, t, elapsed_s } => {
                if loss {
                    Window::Cubic {
                        w_prime: snap(w).max(1),
                        t: 0,
                        elapsed_s: 0.0,
                    }
                } else {
                    Window::Cubic {
                        w_prime,
                        t: t + 1,
                        elapsed_s: elapsed_s + rtt,
                    }
                }
            }
            Window::Compound(x) => {
                let params = compound_params(&self.cfg.variant);
                let x = x as f64;
                let next = if loss {
                    (x / 2.0).max(1.0)
                } else {
                    (x + 1.0 + (params.alpha * x.powf(params.k) - 1.0).max(0.0)).min(cap as f64)
                };
                Window::Compound(snap(next).clamp(1, cap))
            }
            Window::CompoundSplit { l, d } => {
                let params = compound_params(&self.cfg.variant);
                let (l, d) = (l as f64, d as f64);
                let (l, d) = if loss {
                    (l / 2.0, d / 2.0)
                } else if own_queue < params.gamma_pkts {
                    (l + 1.0, d + (params.alpha * w.powf(params.k) - 1.0).max(0.0))
                } else {
                    (l + 1.0, (d - params.zeta * own_queue).max(0.0))
                };
                let l = snap(l).clamp(1, cap);
                Window::CompoundSplit {
                    l,
                    d: snap(d).min(cap - l),
                }
            }
        };
    }
}

fn compound_params(v: &TcpVariant) -> CompoundParams {
    match v {
        TcpVariant::Compound(p) => *p,
        _ => unreachable!(),
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    n: f64,
    w: f64,
    r: f64,
    wr: f64,
    q: f64,
}

impl Sums {
    fn add(&mut self, w: f64, r: f64, q: f64) {
        self.n += 1.0;
        self.w += w;
        self.r += r;
        self.wr += w * r;
        self.q += q;
    }
}

struct Acc {
    slots: u64,
    measured: u64,
    batch_len: u64,
    total: Sums,
    batches: Vec<Sums>,
    losses: u64,
    visits: Option<BTreeMap<SimState, f64>>,
}

impl Acc {
    fn new(measured_slots: u64, visits: bool) -> Self {
        Self {
            slots: 0,
            measured: 0,
            batch_len: (measured_slots / BATCHES as u64).max(1),
            total: Sums::default(),
            batches: Vec::new(),
            losses: 0,
            visits: visits.then(BTreeMap::new),
        }
    }
}

fn batch_stderr(batches: &[Sums], f: impl Fn(&Sums) -> f64) -> f64 {
    let full: Vec<f64> = batches.iter().map(f).filter(|v| v.is_finite()).collect();
    let n = full.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = full.iter().sum::<f64>() / n as f64;
    let var = full.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

fn finish(flow: Flow) -> SimStats {
    let p = flow.cfg.loss_prob;
    let acc = flow.acc;
    let t = acc.total;
    let batches: Vec<Sums> = acc.batches.into_iter().filter(|b| b.n as u64 == acc.batch_len).collect();
    let visit_freq = acc.visits.map(|mut v| {
        for x in v.values_mut() {
            *x /= t.n;
        }
        v
    });
    SimStats {
        mean_window: t.wr / t.r,
        mean_window_slot: t.w / t.n,
        mean_rtt_s: t.wr / t.w,
        mean_rtt_slot_s: t.r / t.n,
        throughput_pkts_s: (1.0 - p) * t.w / t.r,
        mean_queue_pkts: t.q / t.n,
        rtts: acc.measured,
        loss_events: acc.losses,
        std_err: StdErrors {
            mean_window: batch_stderr(&batches, |b| b.wr / b.r),
            mean_rtt_s: batch_stderr(&batches, |b| b.wr / b.w),
            throughput_pkts_s: batch_stderr(&batches, |b| (1.0 - p) * b.w / b.r),
        },
        visit_freq,
    }
}

/// Queueing delay `q >= 0` with `sum_j w_j / (delta_j + q) = mu`.
fn shared_delay(windows: &[f64], delays: &[f64], mu: f64) -> f64 {
    let rate = |q: f64| -> f64 { windows.iter().zip(delays).map(|(w, d)| w / (d + q)).sum() };
    if rate(0.0) <= mu {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = windows.iter().sum::<f64>() / mu;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rate(mid) > mu {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Debug, PartialEq)]
struct Event {
    time: f64,
    flow: usize,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.flow.cmp(&self.flow))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn run(mut flows: Vec<Flow>, capacity: Option<f64>) -> BottleneckStats {
    let n = flows.len();
    let delays: Vec<f64> = flows.iter().map(|f| f.cfg.prop_delay_s).collect();
    let mut windows: Vec<f64> = flows.iter().map(Flow::window).collect();
    let mut queue = BinaryHeap::new();
    for flow in 0..n {
        queue.push(Event { time: 0.0, flow });
    }
    let mut warm = 0;
    let (mut backlog_area, mut delay_area, mut measured_time) = (0.0, 0.0, 0.0);
    let mut last_time = 0.0;
    let mut last_backlog = 0.0;
    let mut last_delay = 0.0;
    let mut now = 0.0;

    while let Some(Event { time, flow: r }) = queue.pop() {
        now = time;
        if warm == n {
            let dt = time - last_time;
            backlog_area += last_backlog * dt;
            delay_area += last_delay * dt;
            measured_time += dt;
        }
        last_time = time;

        let f = &mut flows[r];
        let w = f.window();
        windows[r] = w;
        let (rtt, own_queue, shared) = match capacity {
            None => (f.cfg.prop_delay_s, 0.0, 0.0),
            Some(mu) if n == 1 => {
                let rtt = f.cfg.prop_delay_s.max(w / mu);
                (rtt, (w - mu * f.cfg.prop_delay_s).max(0.0), rtt - f.cfg.prop_delay_s)
            }
            Some(mu) => {
                let q = shared_delay(&windows, &delays, mu);
                let rtt = f.cfg.prop_delay_s + q;
                (rtt, w * q / rtt, q)
            }
        };
        last_backlog = capacity.map_or(0.0, |mu| mu * shared);
        last_delay = shared;

        let loss = f.rng.random::<f64>() < loss_in_round(f.cfg.loss_prob, w);
        let label = f.label();
        let acc = &mut f.acc;
        acc.slots += 1;
        if acc.slots > f.cfg.warmup_rtts {
            if acc.measured == 0 {
                warm += 1;
            }
            acc.measured += 1;
            acc.total.add(w, rtt, own_queue);
            let b = ((acc.measured - 1) / acc.batch_len) as usize;
            if b == acc.batches.len() {
                acc.batches.push(Sums::default());
            }
            acc.batches[b].add(w, rtt, own_queue);
            acc.losses += loss as u64;
            if let Some(v) = acc.visits.as_mut() {
                *v.entry(label).or_insert(0.0) += 1.0;
            }
        }
        f.advance(w, rtt, own_queue, loss);
        if f.acc.slots >= f.cfg.horizon_rtts {
            break;
        }
        queue.push(Event { time: time + rtt, flow: r });
    }

    let flows: Vec<SimStats> = flows.into_iter().map(finish).collect();
    let utilization = match capacity {
        Some(mu) => flows.iter().map(|s| s.throughput_pkts_s).sum::<f64>() / mu,
        None => f64::NAN,
    };
    let avg = |area: f64| if measured_time > 0.0 { area / measured_time } else { 0.0 };
    BottleneckStats {
        flows,
        utilization,
        mean_backlog_pkts: avg(backlog_area),
        mean_queue_delay_s: avg(delay_area),
        elapsed_s: now,
    }
}

/// Simulates one flow for `cfg.horizon_rtts` round trips and averages over the
/// ones after the warmup.
pub fn simulate_single_flow(cfg: &SimConfig) -> Result<SimStats> {
    cfg.validate()?;
    let capacity = match cfg.bottleneck {
        Bottleneck::Infinite => None,
        Bottleneck::Finite(mu) => Some(mu),
    };
    let flow = Flow::new(*cfg, cfg.seed, 0, capacity.is_some());
    Ok(run(vec![flow], capacity).flows.remove(0))
}

/// Simulates flows sharing one FIFO bottleneck of `capacity_pkts_s`. Each round
/// trip lasts the flow's propagation delay plus the queueing delay at which the
/// current windows exactly fill the link. The run stops when the first flow
/// completes `horizon_rtts` round trips. The per-flow `bottleneck`,
/// `horizon_rtts` and `seed` fields are ignored.
pub fn simulate_bottleneck(
    flows: &[SimConfig],
    capacity_pkts_s: f64,
    horizon_rtts: u64,
    seed: u64,
) -> Result<BottleneckStats> {
    if flows.is_empty() {
        return Err(Error::InvalidArgument {
            name: "flows",
            reason: "need at least one flow".into(),
        });
    }
    let flows = flows
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let cfg = SimConfig {
                bottleneck: Bottleneck::Finite(capacity_pkts_s),
                horizon_rtts,
                seed,
                ..*cfg
            };
            cfg.validate()?;
            Ok(Flow::new(cfg, seed, i as u64, true))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(run(flows, Some(capacity_pkts_s)))
}
