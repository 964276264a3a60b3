//! Network steady state as the solution of a concave throughput-maximization
//! problem.
//!
//! With windows held fixed, rates maximize
//! `sum_r E[s_r] ((1-p_r) E[W_r] ln x_r - x_r delta_r)` subject to link
//! capacities. The dual variable of each capacity constraint is the link's
//! mean queueing delay `M_l`, and the optimal rates are
//! `x_r = (1-p_r) E[W_r] / (delta_r + sum_l M_l)`. An outer Broyden loop makes
//! the windows consistent with the delays they induce.

use std::cell::RefCell;

use crate::broyden::{broyden, BroydenOptions};
use crate::error::{Error, Result};
use crate::model::{Diagnostics, FlowResult, LinkResult, NetworkSpec, SolverMethod, SolverResult, TcpVariant};
use crate::network::{is_fixed_window, window_of, Routes, SolveOptions};
use crate::window::WindowModel;

pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_DUAL_EPS: f64 = 1e-7;

/// Delay tolerance of the inner dual solve inside [`opt_solve`].
const INNER_EPS: f64 = 1e-13;
const ACK_PASSES: usize = 100;
/// Outer iterations stop once the unknowns reproduce themselves to this
/// accuracy (milliseconds or packets).
const FIXED_POINT_TOL: f64 = 1e-9;

/// Delay `M >= 0` at which `sum_r rate_bits_r / (delay_r + M) = capacity`, or
/// zero when the flows fit without queueing.
pub fn single_bottleneck_delay(rate_bits: &[f64], delays_s: &[f64], capacity_bps: f64) -> f64 {
    let load = |m: f64| -> f64 { rate_bits.iter().zip(delays_s).map(|(a, d)| a / (d + m)).sum() };
    if load(0.0) <= capacity_bps {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = rate_bits.iter().sum::<f64>() / capacity_bps;
    while load(hi) > capacity_bps {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if load(mid) > capacity_bps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fixed-window rate allocation problem on a network.
#[derive(Debug, Clone)]
struct Problem {
    /// `(1 - p_r) E[W_r]` in packets.
    a: Vec<f64>,
    s: Vec<f64>,
    delta: Vec<f64>,
    cap: Vec<f64>,
    data: Vec<Vec<usize>>,
    link_flows: Vec<Vec<usize>>,
}

impl Problem {
    fn new(spec: &NetworkSpec, routes: &Routes, windows: &[f64], delta: Vec<f64>) -> Self {
        Self {
            a: spec.flows.iter().zip(windows).map(|(f, w)| (1.0 - f.loss_prob) * w).collect(),
            s: spec.flows.iter().map(|f| f.pkt_mean_bits).collect(),
            delta,
            cap: spec.links.iter().map(|l| l.capacity_bps).collect(),
            data: routes.data.clone(),
            link_flows: routes.link_flows.clone(),
        }
    }

    fn path_delay(&self, m: &[f64]) -> Vec<f64> {
        self.data
            .iter()
            .zip(&self.delta)
            .map(|(route, d)| d + route.iter().map(|&l| m[l]).sum::<f64>())
            .collect()
    }

    fn rates(&self, m: &[f64]) -> Vec<f64> {
        self.path_delay(m).iter().zip(&self.a).map(|(t, a)| a / t).collect()
    }

    fn loads(&self, lambda: &[f64]) -> Vec<f64> {
        self.link_flows
            .iter()
            .map(|fl| fl.iter().map(|&r| lambda[r] * self.s[r]).sum())
            .collect()
    }

    /// Dual function up to a constant.
    fn dual_value(&self, m: &[f64]) -> f64 {
        let paths = self.path_delay(m);
        let flows: f64 = paths.iter().zip(&self.a).zip(&self.s).map(|((t, a), s)| s * a * t.ln()).sum();
        let links: f64 = m.iter().zip(&self.cap).map(|(m, c)| m * c).sum();
        links - flows
    }

    /// Diagonal curvature bound of the dual at `m`.
    fn curvature(&self, m: &[f64]) -> Vec<f64> {
        let paths = self.path_delay(m);
        self.link_flows
            .iter()
            .map(|fl| {
                fl.iter()
                    .map(|&r| self.s[r] * self.a[r] * self.data[r].len() as f64 / (paths[r] * paths[r]))
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualOptions {
    /// Multiplier on the curvature-scaled gradient step; defaults to 1.
    pub step: Option<f64>,
    pub eps: f64,
    pub max_iters: usize,
    pub max_restarts: usize,
    pub warm_start: Option<Vec<f64>>,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            step: None,
            eps: DEFAULT_DUAL_EPS,
            max_iters: 100_000,
            max_restarts: 8,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// Mean queueing delay of every link, seconds.
    pub m: Vec<f64>,
    /// Rate of every flow, packets/s.
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub restarts: usize,
    pub step: f64,
}

fn solve_problem(problem: &Problem, opts: &DualOptions) -> Result<DualSolution> {
    let n_links = problem.cap.len();
    let start = match &opts.warm_start {
        Some(m) if m.len() == n_links => m.iter().map(|x| x.max(0.0)).collect(),
        _ => vec![0.0; n_links],
    };
    let mut step = opts.step.unwrap_or(1.0);
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument {
            name: "step",
            reason: format!("{step} is not a positive step size"),
        });
    }
    let mut total_iters = 0;
    let mut last_change = f64::INFINITY;

    for restart in 0..=opts.max_restarts {
        let mut m: Vec<f64> = start.clone();
        let mut value = problem.dual_value(&m);
        for _ in 0..opts.max_iters {
            total_iters += 1;
            let lambda = problem.rates(&m);
            let load = problem.loads(&lambda);
            let h = problem.curvature(&m);
            let grad: Vec<f64> = problem.cap.iter().zip(&load).map(|(c, l)| c - l).collect();

            let project = |t: f64, out: &mut Vec<f64>| {
                for l in 0..n_links {
                    out[l] = if h[l] > 0.0 {
                        (m[l] - t * grad[l] / h[l]).max(0.0)
                    } else {
                        0.0
                    };
                }
            };
            let mut next = m.clone();
            project(step, &mut next);
            last_change = next.iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if !last_change.is_finite() {
                break;
            }
            if last_change <= opts.eps {
                m = next;
                let lambda = problem.rates(&m);
                return Ok(DualSolution {
                    m,
                    lambda,
                    iterations: total_iters,
                    restarts: restart,
                    step,
                });
            }
            let mut t = step;
            let mut next_value = problem.dual_value(&next);
            for _ in 0..60 {
                let decrease: f64 = grad.iter().zip(&next).zip(&m).map(|((g, a), b)| g * (a - b)).sum();
                let roundoff = 1e-14 * value.abs().max(1.0);
                if next_value <= value + 1e-4 * decrease || (next_value - value).abs() <= roundoff {
                    break;
                }
                t *= 0.5;
                project(t, &mut next);
                next_value = problem.dual_value(&next);
            }
            m = next;
            value = next_value;
        }
        log::debug!("dual iteration stalled (change {last_change:e}); halving step {step}");
        step *= 0.5;
    }
    Err(Error::DualNotConverged {
        restarts: opts.max_restarts,
        last_change,
    })
}

/// Rates and link delays for fixed mean windows.
pub fn dual_solve(windows: &[f64], spec: &NetworkSpec, opts: &DualOptions) -> Result<DualSolution> {
    let routes = Routes::prepare(spec)?;
    check_windows(windows, spec)?;
    let delta = spec.flows.iter().map(|f| f.prop_delay_s).collect();
    solve_problem(&Problem::new(spec, &routes, windows, delta), opts)
}

fn check_windows(windows: &[f64], spec: &NetworkSpec) -> Result<()> {
    if windows.len() != spec.flows.len() || windows.iter().any(|w| !(*w >= 1.0 && w.is_finite())) {
        return Err(Error::InvalidArgument {
            name: "windows",
            reason: "need one finite window >= 1 per flow".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktCertificate {
    /// Largest `|(1-p)E[W] - x (delta + sum M)|`, relative to `(1-p)E[W]`.
    pub stationarity_residual: f64,
    /// Largest `M_l (C_l - load_l) / C_l`, in seconds.
    pub slackness_residual: f64,
    /// Largest relative capacity excess.
    pub feasibility_residual: f64,
    pub dual_queue_delays_s: Vec<f64>,
    pub dual_nonneg: Vec<f64>,
    pub tol: f64,
}

impl KktCertificate {
    pub fn passes(&self) -> bool {
        self.stationarity_residual <= self.tol
            && self.slackness_residual <= self.tol
            && self.feasibility_residual <= self.tol
            && self.dual_queue_delays_s.iter().all(|m| *m >= 0.0)
    }
}

fn certify(problem: &Problem, lambda: &[f64], m: &[f64], tol: f64) -> KktCertificate {
    let paths = problem.path_delay(m);
    let stationarity_residual = problem
        .a
        .iter()
        .zip(lambda)
        .zip(&paths)
        .map(|((a, x), t)| (a - x * t).abs() / a)
        .fold(0.0, f64::max);
    let load = problem.loads(lambda);
    let mut slackness_residual: f64 = 0.0;
    let mut feasibility_residual: f64 = 0.0;
    for ((c, l), mu) in problem.cap.iter().zip(&load).zip(m) {
        slackness_residual = slackness_residual.max((mu * (c - l) / c).abs());
        feasibility_residual = feasibility_residual.max(((l - c) / c).max(0.0));
    }
    // gamma_r = 0 because every rate is positive
    let dual_nonneg = vec![0.0; lambda.len()];
    let negative_rate = lambda.iter().any(|x| !(*x > 0.0));
    KktCertificate {
        stationarity_residual: if negative_rate { f64::INFINITY } else { stationarity_residual },
        slackness_residual,
        feasibility_residual,
        dual_queue_delays_s: m.to_vec(),
        dual_nonneg,
        tol,
    }
}

/// Residuals of the optimality conditions for rates `lambda` and link delays
/// `m` under fixed windows, using each flow's propagation delay.
pub fn kkt_check(lambda: &[f64], m: &[f64], windows: &[f64], spec: &NetworkSpec, tol: f64) -> Result<KktCertificate> {
    let routes = Routes::prepare(spec)?;
    check_windows(windows, spec)?;
    if lambda.len() != spec.flows.len() || m.len() != spec.links.len() {
        return Err(Error::InvalidArgument {
            name: "lambda",
            reason: "rate and delay vectors do not match the network".into(),
        });
    }
    let delta = spec.flows.iter().map(|f| f.prop_delay_s).collect();
    Ok(certify(&Problem::new(spec, &routes, windows, delta), lambda, m, tol))
}

/// Rate allocation objective `sum_r E[s_r] ((1-p_r) E[W_r] ln x_r - x_r delta_r)`.
pub fn objective(lambda: &[f64], windows: &[f64], spec: &NetworkSpec) -> f64 {
    spec.flows
        .iter()
        .zip(lambda)
        .zip(windows)
        .map(|((f, x), w)| f.pkt_mean_bits * ((1.0 - f.loss_prob) * w * x.ln() - x * f.prop_delay_s))
        .sum()
}

/// Which window argument a flow contributes to the outer unknowns.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Unknown {
    Rtt(usize),
    Queue(usize),
}

impl Unknown {
    fn flow(&self) -> usize {
        match *self {
            Unknown::Rtt(r) | Unknown::Queue(r) => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptSolution {
    pub result: SolverResult,
    pub certificate: KktCertificate,
    pub m: Vec<f64>,
    /// Propagation plus ACK-path delay used by the final dual solve.
    pub effective_delay_s: Vec<f64>,
}

struct Inner {
    dual: DualSolution,
    delta: Vec<f64>,
    rtt: Vec<f64>,
    own_queue: Vec<f64>,
    problem: Problem,
}

struct Ctx<'a> {
    spec: &'a NetworkSpec,
    routes: Routes,
    model: &'a WindowModel,
    unknowns: Vec<Unknown>,
}

impl Ctx<'_> {
    fn windows_at(&self, rtt: &[f64], queue: &[f64], notes: &mut Vec<String>) -> Result<Vec<f64>> {
        self.spec
            .flows
            .iter()
            .enumerate()
            .map(|(r, f)| window_of(self.model, f, rtt[r], queue[r], notes))
            .collect()
    }

    /// Windows at the outer unknowns `x`; flows not in `x` use zero queue and
    /// propagation delay, which their model ignores anyway.
    fn windows_from_x(&self, x: &[f64], notes: &mut Vec<String>) -> Result<Vec<f64>> {
        let mut rtt: Vec<f64> = self.spec.flows.iter().map(|f| f.prop_delay_s).collect();
        let mut queue = vec![0.0; self.spec.flows.len()];
        for (u, v) in self.unknowns.iter().zip(x) {
            match *u {
                Unknown::Rtt(r) => rtt[r] = *v,
                Unknown::Queue(r) => queue[r] = *v,
            }
        }
        self.windows_at(&rtt, &queue, notes)
    }

    /// Difference between the unknowns and the delays or queues they induce,
    /// in milliseconds for round-trip times and packets for queues.
    fn fixed_point_gap(&self, x: &[f64], inner: &Inner) -> Vec<f64> {
        self.unknowns
            .iter()
            .zip(x)
            .map(|(u, v)| match *u {
                Unknown::Rtt(r) => (v - inner.rtt[r]) * 1e3,
                Unknown::Queue(r) => v - inner.own_queue[r],
            })
            .collect()
    }

    fn inner(&self, windows: Vec<f64>, warm: Option<Vec<f64>>) -> Result<Inner> {
        let base: Vec<f64> = self.spec.flows.iter().map(|f| f.prop_delay_s).collect();
        let mut m = warm.unwrap_or_else(|| vec![0.0; self.spec.links.len()]);
        let ack_delay = |m: &[f64]| -> Vec<f64> {
            base.iter()
                .zip(&self.routes.ack)
                .map(|(d, route)| d + route.iter().map(|&l| m[l]).sum::<f64>())
                .collect()
        };
        let mut delta = ack_delay(&m);
        let mut pass = 0;
        loop {
            pass += 1;
            let problem = Problem::new(self.spec, &self.routes, &windows, delta.clone());
            let dual = solve_problem(
                &problem,
                &DualOptions {
                    eps: INNER_EPS,
                    warm_start: Some(m.clone()),
                    ..Default::default()
                },
            )?;
            let next = ack_delay(&dual.m);
            let shift = next.iter().zip(&delta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            m = dual.m.clone();
            if shift <= INNER_EPS || pass >= ACK_PASSES {
                let paths = problem.path_delay(&dual.m);
                let own_queue = (0..self.spec.flows.len())
                    .map(|r| dual.lambda[r] * (paths[r] - delta[r]))
                    .collect();
                return Ok(Inner {
                    rtt: paths,
                    own_queue,
                    delta,
                    dual,
                    problem,
                });
            }
            delta = next;
        }
    }
}

pub fn opt_solve(spec: &NetworkSpec, opts: &SolveOptions, model: &WindowModel) -> Result<SolverResult> {
    Ok(opt_solve_detailed(spec, opts, model)?.result)
}

pub fn opt_solve_detailed(spec: &NetworkSpec, opts: &SolveOptions, model: &WindowModel) -> Result<OptSolution> {
    let routes = Routes::prepare(spec)?;
    let unknowns: Vec<Unknown> = spec
        .flows
        .iter()
        .enumerate()
        .filter(|(_, f)| !is_fixed_window(&f.variant))
        .map(|(r, f)| match f.variant {
            TcpVariant::Cubic(_) => Unknown::Rtt(r),
            _ => Unknown::Queue(r),
        })
        .collect();
    let ctx = Ctx {
        spec,
        routes,
        model,
        unknowns,
    };
    let tol = opts.tol.unwrap_or(DEFAULT_TOL);
    let bopts = BroydenOptions {
        tol: FIXED_POINT_TOL,
        max_iters: opts.max_iters.unwrap_or(DEFAULT_MAX_ITERS),
        ..Default::default()
    };
    let x0: Vec<f64> = ctx
        .unknowns
        .iter()
        .map(|u| match *u {
            Unknown::Rtt(r) => spec.flows[r].prop_delay_s,
            Unknown::Queue(_) => 0.0,
        })
        .collect();

    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let warm: RefCell<Option<Vec<f64>>> = RefCell::new(None);
    let residual = |x: &[f64]| -> Vec<f64> {
        let run = || -> Result<Vec<f64>> {
            let mut scratch = Vec::new();
            let windows = ctx.windows_from_x(x, &mut scratch)?;
            let inner = ctx.inner(windows, warm.borrow().clone())?;
            *warm.borrow_mut() = Some(inner.dual.m.clone());
            Ok(ctx.fixed_point_gap(x, &inner))
        };
        match run() {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                vec![f64::NAN; x.len()]
            }
        }
    };
    let report = broyden(residual, &x0, &bopts);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }

    let mut notes = Vec::new();
    let windows = ctx.windows_from_x(&report.x, &mut notes)?;
    let inner = ctx.inner(windows, warm.into_inner())?;
    // Report windows at the delays and queues the solution implies.
    let implied = ctx.windows_at(&inner.rtt, &inner.own_queue, &mut notes)?;
    let residual_norm = ctx
        .unknowns
        .iter()
        .map(|u| {
            let r = u.flow();
            let g = inner.dual.lambda[r] - (1.0 - spec.flows[r].loss_prob) * implied[r] / inner.rtt[r];
            g * g
        })
        .sum::<f64>()
        .sqrt();
    let converged = residual_norm <= tol;
    let certificate = certify(&inner.problem, &inner.dual.lambda, &inner.dual.m, tol.max(1e-4));
    log::info!(
        "opt: {} outer iterations, residual {:e}, dual {} iterations",
        report.iterations,
        residual_norm,
        inner.dual.iterations
    );

    let per_flow = spec
        .flows
        .iter()
        .enumerate()
        .map(|(r, f)| FlowResult {
            id: f.id.clone(),
            variant: f.variant.name().to_string(),
            throughput_pkts_s: inner.dual.lambda[r],
            mean_window: implied[r],
            mean_rtt_s: inner.rtt[r],
            throughput_bps: inner.dual.lambda[r] * f.pkt_mean_bits,
        })
        .collect();
    let loads = inner.problem.loads(&inner.dual.lambda);
    let per_link = spec
        .links
        .iter()
        .enumerate()
        .map(|(l, link)| {
            let arrivals: f64 = ctx.routes.link_flows[l].iter().map(|&r| inner.dual.lambda[r]).sum();
            LinkResult {
                id: link.id.clone(),
                mean_queue_pkts: inner.dual.m[l] * arrivals,
                utilization: loads[l] / link.capacity_bps,
                sojourn_s: inner.dual.m[l],
            }
        })
        .collect();
    let result = SolverResult {
        method: SolverMethod::Opt,
        per_flow,
        per_link,
        diagnostics: Diagnostics {
            iterations: report.iterations,
            residual_norm,
            converged,
            notes,
        },
    };
    if !converged {
        return Err(Error::NotConverged(Box::new(result)));
    }
    Ok(OptSolution {
        result,
        certificate,
        m: inner.dual.m,
        effective_delay_s: inner.delta,
    })
}
