mod output;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tcpflow::compound::{compound_chain_queue, compound_mean_window_noqueue};
use tcpflow::config::ConfigDocument;
use tcpflow::cubic::cubic_mean_window;
use tcpflow::mg1::mg1_solve;
use tcpflow::model::{NetworkSpec, SolverMethod, SolverResult, TcpVariant};
use tcpflow::network::SolveOptions;
use tcpflow::opt::opt_solve;
use tcpflow::sim::{simulate_bottleneck, simulate_single_flow, Bottleneck, BottleneckStats, SimConfig};
use tcpflow::window::{reno_mean_window, WindowModel};
use tcpflow::Error;

use output::*;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_UNSUPPORTED: u8 = 4;

#[derive(Parser)]
#[command(name = "tcpflow", version, about = "Throughput, window and queue predictions for TCP flows")]
struct Cli {
    /// Convergence tolerance of the network solver.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Iteration limit of the network solver.
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    /// Seed for simulations.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Directory for output tables.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Mean window of one flow; the table goes to stdout.
    SingleFlow(SingleFlowArgs),
    /// Solve a network for per-flow throughput and per-link queues.
    Solve(SolveArgs),
    /// Simulate a single flow or flows sharing one bottleneck.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum VariantArg {
    Cubic,
    Compound,
    Newreno,
}

#[derive(Args)]
struct SingleFlowArgs {
    #[arg(long, value_enum)]
    variant: VariantArg,
    /// Per-packet loss probability.
    #[arg(long)]
    per: f64,
    /// Round-trip time in seconds.
    #[arg(long, conflicts_with_all = ["delta", "capacity_mbps"])]
    rtt: Option<f64>,
    /// Propagation delay in seconds, with a bottleneck of --capacity-mbps.
    #[arg(long, requires = "capacity_mbps")]
    delta: Option<f64>,
    #[arg(long, requires = "delta")]
    capacity_mbps: Option<f64>,
    #[arg(long, default_value_t = 4096)]
    wmax: u32,
    #[arg(long, default_value_t = 1050.0)]
    pkt_bytes: f64,
}

#[derive(Args)]
struct SolveArgs {
    config: PathBuf,
    /// Overrides the method named in the config.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mg1,
    Opt,
}

#[derive(Args)]
struct SimulateArgs {
    config: PathBuf,
    /// Round trips simulated per flow.
    #[arg(long, default_value_t = 1_000_000)]
    horizon: u64,
    /// Round trips discarded at the start; defaults to 1% of the horizon.
    #[arg(long)]
    warmup: Option<u64>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidArgument { .. } => EXIT_USAGE,
            Error::NotConverged(_) | Error::Infeasible { .. } => EXIT_NOT_CONVERGED,
            _ => EXIT_RUNTIME,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::new(EXIT_RUNTIME, e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TCPFLOW_LOG", "warn")).init();
    let cli = Cli::parse();
    let Format::Csv = cli.format;
    let outcome = match &cli.command {
        Command::SingleFlow(args) => single_flow(args),
        Command::Solve(args) => solve(&cli, args),
        Command::Simulate(args) => simulate(&cli, args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure::new(EXIT_USAGE, message)
}

fn single_flow(args: &SingleFlowArgs) -> Result<(), Failure> {
    if !(0.0..1.0).contains(&args.per) {
        return Err(usage(format!("--per {} is not in [0, 1)", args.per)));
    }
    for (name, v) in [("--rtt", args.rtt), ("--delta", args.delta), ("--capacity-mbps", args.capacity_mbps)] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(usage(format!("{name} {v} must be positive")));
            }
        }
    }
    if args.wmax < 1 || !(args.pkt_bytes > 0.0) {
        return Err(usage("--wmax and --pkt-bytes must be positive"));
    }
    let (p, w_max) = (args.per, args.wmax);
    let mut row = vec![
        match args.variant {
            VariantArg::Cubic => "cubic",
            VariantArg::Compound => "compound",
            VariantArg::Newreno => "newreno",
        }
        .to_string(),
        format!("{p}"),
        w_max.to_string(),
    ];
    let blank = String::new;
    let rtt = args.rtt.or(args.delta);

    if args.variant == VariantArg::Cubic && rtt.is_none() {
        return Err(usage("cubic needs --rtt or --delta"));
    }
    if p == 0.0 {
        row.extend([
            num(w_max as f64),
            blank(),
            rtt.map_or_else(blank, num),
            blank(),
            "no losses: mean window is w_max".into(),
        ]);
    } else {
        match (args.variant, args.delta, args.capacity_mbps) {
            (VariantArg::Compound, Some(delta), Some(mbps)) => {
                let mu = mbps * 1e6 / (args.pkt_bytes * 8.0);
                let r = compound_chain_queue(p, delta, mu, w_max, &Default::default())?;
                row.extend([
                    num(r.mean_window_palm),
                    num(r.mean_queue_pkts),
                    num(r.mean_rtt_palm_s),
                    num(r.utilization),
                    blank(),
                ]);
            }
            (VariantArg::Compound, _, _) => {
                let w = compound_mean_window_noqueue(p, w_max, &Default::default())?;
                row.extend([num(w), blank(), rtt.map_or_else(blank, num), blank(), blank()]);
            }
            (VariantArg::Cubic, _, _) => {
                let r = rtt.expect("checked above");
                let w = cubic_mean_window(p, r, w_max, &Default::default())?;
                row.extend([num(w), blank(), num(r), blank(), blank()]);
            }
            (VariantArg::Newreno, _, _) => {
                row.extend([
                    num(reno_mean_window(p, w_max)),
                    blank(),
                    rtt.map_or_else(blank, num),
                    blank(),
                    blank(),
                ]);
            }
        }
    }
    write_csv(io::stdout().lock(), &SINGLE_FLOW_HEADER, &vec![row])?;
    Ok(())
}

fn load(path: &Path) -> Result<(ConfigDocument, NetworkSpec), Failure> {
    let doc = ConfigDocument::load(path)?;
    let spec = doc.network()?;
    Ok((doc, spec))
}

fn write_solution(dir: &Path, res: &SolverResult) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_csv_file(&dir.join("flows.csv"), &FLOWS_HEADER, &flow_rows(res))?;
    write_csv_file(&dir.join("links.csv"), &LINKS_HEADER, &link_rows(res))?;
    let d = &res.diagnostics;
    let diag = vec![vec![
        res.method.name().to_string(),
        d.converged.to_string(),
        d.iterations.to_string(),
        format!("{:e}", d.residual_norm),
        d.notes.join("; "),
    ]];
    write_csv_file(
        &dir.join("diagnostics.csv"),
        &["method", "converged", "iterations", "residual", "notes"],
        &diag,
    )
}

fn solve(cli: &Cli, args: &SolveArgs) -> Result<(), Failure> {
    let (doc, spec) = load(&args.config)?;
    let method = match args.method {
        Some(MethodArg::Mg1) => SolverMethod::Mg1,
        Some(MethodArg::Opt) => SolverMethod::Opt,
        None => doc.solver.method,
    };
    let opts = SolveOptions {
        tol: cli.tol.or(doc.solver.tol),
        max_iters: cli.max_iters.or(doc.solver.max_iters),
    };
    let model = WindowModel::default();
    let outcome = match method {
        SolverMethod::Mg1 => mg1_solve(&spec, &opts, &model),
        SolverMethod::Opt => opt_solve(&spec, &opts, &model),
    };
    match outcome {
        Ok(res) => {
            for n in &res.diagnostics.notes {
                log::warn!("{n}");
            }
            write_solution(&cli.out, &res)?;
            Ok(())
        }
        Err(e) => {
            if let Some(partial) = e.partial_result() {
                write_solution(&cli.out, partial)?;
            }
            Err(e.into())
        }
    }
}

fn unsupported(message: impl Into<String>) -> Failure {
    Failure::new(EXIT_UNSUPPORTED, message)
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), Failure> {
    let (_, spec) = load(&args.config)?;
    let warmup = args.warmup.unwrap_or(args.horizon / 100);
    if args.horizon <= warmup {
        return Err(usage(format!("--horizon {} must exceed the warmup {warmup}", args.horizon)));
    }
    fs::create_dir_all(&cli.out)?;
    let flows_path = cli.out.join("sim_flows.csv");
    let links_path = cli.out.join("sim_links.csv");
    if spec.flows.is_empty() {
        write_csv_file(&flows_path, &SIM_FLOWS_HEADER, &Vec::new())?;
        write_csv_file(&links_path, &LINKS_HEADER, &Vec::new())?;
        return Ok(());
    }

    if spec.flows.iter().any(|f| !f.ack_route.is_empty()) {
        return Err(unsupported("simulation does not model ACK paths; ack_route must be empty"));
    }
    let first = &spec.flows[0];
    if spec.flows.iter().any(|f| f.pkt_mean_bits != first.pkt_mean_bits) {
        return Err(unsupported("simulated flows must share one packet size"));
    }
    let bottleneck = match first.data_route.as_slice() {
        [] if spec.flows.len() == 1 => None,
        [link] if spec.flows.iter().all(|f| f.data_route == [link.clone()]) => {
            Some(spec.links.iter().find(|l| &l.id == link).expect("validated route"))
        }
        _ => return Err(unsupported("simulation needs a single flow or flows sharing exactly one link")),
    };

    let cfg = |variant: TcpVariant, f: &tcpflow::model::FlowSpec| SimConfig {
        variant,
        loss_prob: f.loss_prob,
        prop_delay_s: f.prop_delay_s,
        bottleneck: Bottleneck::Infinite,
        w_max: f.w_max,
        horizon_rtts: args.horizon,
        seed: cli.seed,
        warmup_rtts: warmup,
        record_visits: false,
    };
    let configs: Vec<SimConfig> = spec.flows.iter().map(|f| cfg(f.variant, f)).collect();
    let stats = match bottleneck {
        None => BottleneckStats {
            flows: vec![simulate_single_flow(&configs[0])?],
            utilization: f64::NAN,
            mean_backlog_pkts: 0.0,
            mean_queue_delay_s: 0.0,
            elapsed_s: f64::NAN,
        },
        Some(link) => {
            let mu = link.capacity_bps / first.pkt_mean_bits;
            simulate_bottleneck(&configs, mu, args.horizon, cli.seed)?
        }
    };
    let rows: Vec<SimFlowRow> = spec
        .flows
        .iter()
        .map(|f| SimFlowRow {
            id: &f.id,
            variant: f.variant.name(),
            pkt_bits: f.pkt_mean_bits,
            capacity_bps: bottleneck.map(|l| l.capacity_bps),
        })
        .collect();
    write_csv_file(&flows_path, &SIM_FLOWS_HEADER, &sim_rows(&rows, &stats))?;
    let links = match bottleneck {
        Some(link) => vec![vec![
            link.id.clone(),
            num(stats.utilization),
            num(stats.mean_backlog_pkts),
            num(stats.mean_queue_delay_s),
        ]],
        None => Vec::new(),
    };
    write_csv_file(&links_path, &LINKS_HEADER, &links)?;
    Ok(())
}
