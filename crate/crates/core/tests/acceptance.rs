//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tcpflow::chain::SweepWork;
use tcpflow::compound::{solve_compound_noqueue, solve_compound_queue};
use tcpflow::config::ConfigDocument;
use tcpflow::cubic::{cubic_mean_window, solve_cubic, ChainOptions};
use tcpflow::mg1::mg1_solve;
use tcpflow::model::{CompoundParams, CubicParams, FlowSpec, LinkSpec, NetworkSpec, SolverResult, TcpVariant};
use tcpflow::network::SolveOptions;
use tcpflow::opt::{dual_solve, kkt_check, opt_solve, single_bottleneck_delay, DualOptions};
use tcpflow::sim::{simulate_single_flow, Bottleneck, SimConfig};
use tcpflow::window::{WindowModel, WindowQuery};

struct Outcome {
    pass: bool,
    detail: String,
}

fn config(name: &str) -> NetworkSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ConfigDocument::load(path).unwrap().network().unwrap()
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b
}

/// Size and solver work of one solved chain.
struct ChainAudit {
    label: String,
    states: usize,
    transitions: usize,
    work: SweepWork,
}

struct TableRun {
    mbps: u32,
    mg1: SolverResult,
    opt: SolverResult,
    elapsed: Duration,
}

fn table_one() -> Vec<TableRun> {
    [(50, "bottleneck_12f_50mbps.toml"), (100, "bottleneck_12f_100mbps.toml"), (1000, "bottleneck_12f_1gbps.toml")]
        .into_iter()
        .map(|(mbps, file)| {
            let spec = config(file);
            let t0 = Instant::now();
            let mg1 = mg1_solve(&spec, &SolveOptions::default(), &WindowModel::default()).unwrap();
            let opt = opt_solve(&spec, &SolveOptions::default(), &WindowModel::default()).unwrap();
            TableRun {
                mbps,
                mg1,
                opt,
                elapsed: t0.elapsed(),
            }
        })
        .collect()
}

fn criterion_1(runs: &[TableRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        let (m, o) = (&run.mg1.per_link[0], &run.opt.per_link[0]);
        let ok = match run.mbps {
            50 => within(m.mean_queue_pkts, 217.4, 0.1) && within(o.mean_queue_pkts, 220.2, 0.1),
            100 => within(m.mean_queue_pkts, 87.3, 0.1) && within(o.mean_queue_pkts, 94.0, 0.1),
            _ => (m.utilization - 0.166).abs() <= 0.01 && (o.utilization - 0.166).abs() <= 0.01,
        };
        let fast = run.elapsed < Duration::from_secs(300);
        pass &= ok && fast;
        parts.push(format!(
            "{} Mbps: mg1 Q={:.1} rho={:.4}, opt Q={:.1} rho={:.4}, {:.1}s",
            run.mbps,
            m.mean_queue_pkts,
            m.utilization,
            o.mean_queue_pkts,
            o.utilization,
            run.elapsed.as_secs_f64()
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_2(audit: &mut Vec<ChainAudit>) -> Outcome {
    let params = CubicParams::default();
    let ps = [1e-5, 1e-4, 1e-3, 1e-2];
    let rs = [0.02, 0.2];
    let mut worst: f64 = 0.0;
    let mut grid = vec![[0.0; 2]; ps.len()];
    for (i, &p) in ps.iter().enumerate() {
        for (j, &r) in rs.iter().enumerate() {
            let sol = solve_cubic(p, r, 4096, &params, &ChainOptions::default()).unwrap();
            audit.push(ChainAudit {
                label: format!("cubic p={p} R={r}"),
                states: sol.chain.len(),
                transitions: sol.chain.labelled.chain.transition_count(),
                work: sol.stationary.work,
            });
            let cfg = SimConfig {
                horizon_rtts: 10_000_000,
                warmup_rtts: 100_000,
                ..SimConfig::new(TcpVariant::cubic(), p, r)
            };
            let sim = simulate_single_flow(&cfg).unwrap();
            worst = worst.max(rel(sol.mean_window, sim.mean_window));
            grid[i][j] = sol.mean_window;
        }
    }
    let in_r = grid.iter().all(|row| row[1] >= row[0]);
    let in_p = (0..rs.len()).all(|j| grid.windows(2).all(|w| w[1][j] <= w[0][j]));
    let mut sat: f64 = 0.0;
    let mut sat_at = (0.0, 0.0);
    for &p in &ps {
        for &r in &rs {
            let a = cubic_mean_window(p, r, 4096, &params).unwrap();
            let b = cubic_mean_window(p, r, 8192, &params).unwrap();
            if rel(b, a) > sat {
                sat = rel(b, a);
                sat_at = (p, r);
            }
        }
    }
    Outcome {
        pass: worst <= 0.02 && in_r && in_p && sat < 0.01,
        detail: format!(
            "max |chain-sim|/sim {:.3}%, monotone in R {in_r}, in p {in_p}, w_max 4096 -> 8192 moves E[W] by {:.3}% at p={} R={}",
            100.0 * worst,
            100.0 * sat,
            sat_at.0,
            sat_at.1
        ),
    }
}

fn criterion_3(audit: &mut Vec<ChainAudit>) -> Outcome {
    let params = CompoundParams::default();
    let mut worst: f64 = 0.0;
    for p in [1e-5, 1e-4, 1e-3, 1e-2] {
        let sol = solve_compound_noqueue(p, 4096, &params, &ChainOptions::default()).unwrap();
        audit.push(ChainAudit {
            label: format!("compound p={p}"),
            states: sol.labelled.states.len(),
            transitions: sol.labelled.chain.transition_count(),
            work: sol.stationary.work,
        });
        let cfg = SimConfig {
            horizon_rtts: 10_000_000,
            warmup_rtts: 100_000,
            ..SimConfig::new(TcpVariant::compound(), p, 0.1)
        };
        let sim = simulate_single_flow(&cfg).unwrap();
        worst = worst.max(rel(sol.mean_window, sim.mean_window));
    }
    // The zero-queue window must not move with the round-trip time.
    let model = WindowModel::default();
    let at = |rtt| {
        model
            .mean_window(&WindowQuery {
                variant: TcpVariant::compound(),
                loss_prob: 1e-3,
                mean_rtt_s: rtt,
                mean_queue_pkts: 0.0,
                w_max: 4096,
            })
            .unwrap()
    };
    let flat = [0.005, 0.05, 0.5].iter().all(|&r| at(r).to_bits() == at(0.2).to_bits());
    Outcome {
        pass: worst <= 0.02 && flat,
        detail: format!("max |chain-sim|/sim {:.3}%, RTT-independent {flat}", 100.0 * worst),
    }
}

fn criterion_4(audit: &mut Vec<ChainAudit>) -> Outcome {
    let params = CompoundParams::default();
    let mut worst: f64 = 0.0;
    let mut palm: f64 = 0.0;
    let sweeps = [(1.0, [1.0, 5.0, 15.0, 30.0, 60.0]), (10.0, [12.0, 60.0, 150.0, 300.0, 595.0])];
    for (mbps, bdps) in sweeps {
        let mu = mbps * 1e6 / 8400.0;
        for p in [1e-3, 1e-2] {
            for bdp in bdps {
                let delta = bdp / mu;
                let sol = solve_compound_queue(p, delta, mu, 4096, &params, &ChainOptions::default()).unwrap();
                audit.push(ChainAudit {
                    label: format!("compound queue C={mbps}Mbps p={p} bdp={bdp}"),
                    states: sol.labelled.states.len(),
                    transitions: sol.labelled.chain.transition_count(),
                    work: sol.stationary.work,
                });
                let c = sol.result;
                palm = palm.max(rel(c.mean_window_palm * c.mean_rtt_slot_s, c.mean_window_rtt));
                let cfg = SimConfig {
                    horizon_rtts: 2_000_000,
                    warmup_rtts: 10_000,
                    bottleneck: Bottleneck::Finite(mu),
                    ..SimConfig::new(TcpVariant::compound(), p, delta)
                };
                let sim = simulate_single_flow(&cfg).unwrap();
                worst = worst.max(rel(c.mean_window_palm, sim.mean_window));
            }
        }
    }
    Outcome {
        pass: worst <= 0.105 && palm <= 1e-9,
        detail: format!("max |chain-sim|/sim {:.3}%, Palm residual {palm:.1e}", 100.0 * worst),
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (NetworkSpec, Vec<f64>) {
    let nl = rng.random_range(1..=4);
    let nf = rng.random_range(1..=6);
    let links: Vec<LinkSpec> = (0..nl)
        .map(|l| LinkSpec {
            id: format!("L{l}"),
            capacity_bps: rng.random_range(1.0..100.0) * 1e6,
        })
        .collect();
    let flows = (0..nf)
        .map(|r| {
            let forced = rng.random_range(0..nl);
            let route: Vec<&str> = (0..nl)
                .filter(|&l| l == forced || rng.random_bool(0.4))
                .map(|l| links[l].id.as_str())
                .collect();
            let bytes = [500.0, 1050.0, 1500.0][rng.random_range(0..3)];
            let p = 10f64.powf(rng.random_range(-4.0..-2.0));
            let d = rng.random_range(0.005..0.3);
            FlowSpec::new(format!("f{r}"), TcpVariant::NewReno, p, d, bytes, &route, &[])
        })
        .collect();
    let windows = (0..nf).map(|_| rng.random_range(5.0..400.0)).collect();
    (NetworkSpec { links, flows }, windows)
}

/// Maximizes `sum_r s_r (a_r ln x_r - x_r delta_r)` subject to the link
/// capacities with a log-barrier Newton method.
fn primal_oracle(spec: &NetworkSpec, windows: &[f64]) -> Vec<f64> {
    let inc = spec.incidence().unwrap();
    let n = spec.flows.len();
    let s: Vec<f64> = spec.flows.iter().map(|f| f.pkt_mean_bits).collect();
    let a: Vec<f64> = spec.flows.iter().zip(windows).map(|(f, w)| (1.0 - f.loss_prob) * w).collect();
    let d: Vec<f64> = spec.flows.iter().map(|f| f.prop_delay_s).collect();
    let cap: Vec<f64> = spec.links.iter().map(|l| l.capacity_bps).collect();
    let on = |l: usize, r: usize| inc.data(l, r);
    let slack = |x: &[f64]| -> Vec<f64> {
        (0..cap.len())
            .map(|l| cap[l] - (0..n).filter(|&r| on(l, r)).map(|r| s[r] * x[r]).sum::<f64>())
            .collect()
    };
    let value = |x: &[f64], t: f64| -> f64 {
        let sl = slack(x);
        if x.iter().any(|v| *v <= 0.0) || sl.iter().any(|v| *v <= 0.0) {
            return f64::NEG_INFINITY;
        }
        let f: f64 = (0..n).map(|r| s[r] * (a[r] * x[r].ln() - x[r] * d[r])).sum();
        f + sl.iter().map(|v| v.ln()).sum::<f64>() / t
    };
    let mut x: Vec<f64> = (0..n)
        .map(|r| {
            let share = (0..cap.len())
                .filter(|&l| on(l, r))
                .map(|l| cap[l] / (2.0 * s[r] * n as f64))
                .fold(f64::INFINITY, f64::min);
            share.min(a[r] / d[r] / 2.0)
        })
        .collect();
    let mut t = 1e-6;
    while t < 1e12 {
        for _ in 0..200 {
            let sl = slack(&x);
            let mut g = DVector::zeros(n);
            let mut h = DMatrix::zeros(n, n);
            for r in 0..n {
                g[r] = s[r] * (a[r] / x[r] - d[r]);
                h[(r, r)] += s[r] * a[r] / (x[r] * x[r]);
            }
            for (l, v) in sl.iter().enumerate() {
                for r in (0..n).filter(|&r| on(l, r)) {
                    g[r] -= s[r] / (t * v);
                    for q in (0..n).filter(|&q| on(l, q)) {
                        h[(r, q)] += s[r] * s[q] / (t * v * v);
                    }
                }
            }
            let step = h.clone().cholesky().unwrap().solve(&g);
            let decrement = g.dot(&step);
            if decrement < 1e-14 * value(&x, t).abs().max(1.0) {
                break;
            }
            let f0 = value(&x, t);
            let mut alpha = 1.0;
            loop {
                let y: Vec<f64> = (0..n).map(|r| x[r] + alpha * step[r]).collect();
                if value(&y, t) >= f0 + 0.25 * alpha * decrement {
                    x = y;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-20 {
                    break;
                }
            }
        }
        t *= 10.0;
    }
    x
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut kkt_ok = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (spec, w) = random_instance(&mut rng);
        let sol = dual_solve(&w, &spec, &DualOptions::default()).unwrap();
        if kkt_check(&sol.lambda, &sol.m, &w, &spec, 1e-4).unwrap().passes() {
            kkt_ok += 1;
        }
        let oracle = primal_oracle(&spec, &w);
        for (x, y) in sol.lambda.iter().zip(&oracle) {
            worst = worst.max(rel(*x, *y));
        }
    }
    let mut bisect: f64 = 0.0;
    for _ in 0..20 {
        let nf = rng.random_range(1..=6);
        let cap = rng.random_range(0.5..200.0) * 1e6;
        let flows: Vec<FlowSpec> = (0..nf)
            .map(|r| {
                let d = rng.random_range(0.005..0.3);
                FlowSpec::new(format!("f{r}"), TcpVariant::NewReno, 1e-3, d, 1050.0, &["L"], &[])
            })
            .collect();
        let w: Vec<f64> = (0..nf).map(|_| rng.random_range(5.0..400.0)).collect();
        let spec = NetworkSpec {
            links: vec![LinkSpec {
                id: "L".into(),
                capacity_bps: cap,
            }],
            flows,
        };
        let sol = dual_solve(&w, &spec, &DualOptions::default()).unwrap();
        let rate: Vec<f64> = spec.flows.iter().zip(&w).map(|(f, w)| (1.0 - f.loss_prob) * w * f.pkt_mean_bits).collect();
        let delay: Vec<f64> = spec.flows.iter().map(|f| f.prop_delay_s).collect();
        bisect = bisect.max((sol.m[0] - single_bottleneck_delay(&rate, &delay, cap)).abs());
    }
    Outcome {
        pass: kkt_ok == 20 && worst <= 0.01 && bisect <= 1e-6,
        detail: format!(
            "KKT {kkt_ok}/20, max rate gap to primal oracle {:.2e}, max |M - bisection| {bisect:.1e} s",
            worst
        ),
    }
}

fn criterion_6(runs: &[TableRun]) -> Outcome {
    let mut results: Vec<(String, NetworkSpec, SolverResult)> = runs
        .iter()
        .map(|r| {
            let file = match r.mbps {
                50 => "bottleneck_12f_50mbps.toml",
                100 => "bottleneck_12f_100mbps.toml",
                _ => "bottleneck_12f_1gbps.toml",
            };
            (format!("{} Mbps", r.mbps), config(file), r.mg1.clone())
        })
        .collect();
    let spec = config("net_10r_15f.toml");
    let res = mg1_solve(&spec, &SolveOptions::default(), &WindowModel::default()).unwrap();
    results.push(("10 routers".into(), spec, res));
    let mut little: f64 = 0.0;
    let mut rho: f64 = 0.0;
    for (_, spec, res) in &results {
        for (f, r) in spec.flows.iter().zip(&res.per_flow) {
            let lhs = r.throughput_pkts_s * r.mean_rtt_s;
            little = little.max((lhs - (1.0 - f.loss_prob) * r.mean_window).abs() / lhs);
        }
        rho = res.per_link.iter().map(|l| l.utilization).fold(rho, f64::max);
    }
    Outcome {
        pass: little <= 1e-5 && rho < 1.0,
        detail: format!("{} networks, max Little residual {little:.1e}, max rho {rho:.4}", results.len()),
    }
}

fn criterion_7(audit: &[ChainAudit]) -> Outcome {
    let mut bad = Vec::new();
    let mut max_visits: f64 = 0.0;
    for c in audit {
        let per_sweep = c.work.state_visits as f64 / (c.work.sweeps as f64 * c.states as f64);
        let edges = c.work.edge_visits as f64 / (c.work.sweeps as f64 * c.states as f64);
        max_visits = max_visits.max(per_sweep);
        if c.transitions > 2 * c.states || per_sweep > 1.0 || edges > 2.0 {
            bad.push(c.label.clone());
        }
    }
    Outcome {
        pass: bad.is_empty() && !audit.is_empty(),
        detail: format!(
            "{} chains, transitions <= 2N everywhere {}, max state visits per sweep per state {max_visits:.2}",
            audit.len(),
            bad.is_empty()
        ),
    }
}

fn criterion_8(runs: &[TableRun]) -> Outcome {
    let mut worst: f64 = 0.0;
    for r in runs {
        for (a, b) in r.mg1.per_flow.iter().zip(&r.opt.per_flow) {
            worst = worst.max(rel(b.throughput_pkts_s, a.throughput_pkts_s));
        }
    }
    Outcome {
        pass: worst <= 0.15,
        detail: format!("max per-flow |opt-mg1|/mg1 {:.2}%", 100.0 * worst),
    }
}

fn report(n: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let o = f();
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n} [{verdict}] {name}: {} ({:.1}s)", o.detail, t0.elapsed().as_secs_f64());
    o.pass
}

fn main() -> ExitCode {
    let mut audit = Vec::new();
    let runs = table_one();
    let results = [
        report(1, "12-flow single bottleneck reference values", || criterion_1(&runs)),
        report(2, "CUBIC chain vs simulation", || criterion_2(&mut audit)),
        report(3, "Compound no-queue chain vs simulation", || criterion_3(&mut audit)),
        report(4, "Compound queue chain vs simulation", || criterion_4(&mut audit)),
        report(5, "rate allocation optimality", criterion_5),
        report(6, "M/G/1 fixed point consistency", || criterion_6(&runs)),
        report(7, "chain size and sweep cost", || criterion_7(&audit)),
        report(8, "mg1 vs opt agreement", || criterion_8(&runs)),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
