use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tcpflow::compound::compound_chain_queue;

const BIN: &str = env!("CARGO_BIN_EXE_tcpflow");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn table(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    rows
}

fn single_row(o: &Output) -> (Vec<String>, Vec<String>) {
    let text = stdout(o);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let head = r.headers().unwrap().iter().map(String::from).collect();
    let row = r.records().next().unwrap().unwrap().iter().map(String::from).collect();
    (head, row)
}

const SMALL: &str = r#"
schema_version = 1

[[links]]
id = "L1"
capacity_mbps = 10

[[flows]]
id = "a"
variant = "cubic"
per = 0.001
prop_delay_s = 0.05
pkt_bytes = 1050
route = ["L1"]

[[flows]]
id = "b"
variant = "compound"
per = 0.001
prop_delay_s = 0.1
pkt_bytes = 1050
route = ["L1"]
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("net.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn reno_single_flow() {
    let o = run(&["single-flow", "--variant", "newreno", "--per", "1e-4"]);
    assert!(o.status.success());
    let (head, row) = single_row(&o);
    assert_eq!(
        head,
        ["variant", "per", "w_max", "mean_window_pkts", "mean_queue_pkts", "mean_rtt_s", "utilization", "note"]
    );
    let w: f64 = row[3].parse().unwrap();
    assert!((w - 131.0).abs() < 1e-6, "{w}");
}

#[test]
fn lossless_cubic_sits_at_cap() {
    let o = run(&["single-flow", "--variant", "cubic", "--per", "0", "--rtt", "0.1", "--wmax", "2048"]);
    assert!(o.status.success());
    let (_, row) = single_row(&o);
    assert_eq!(row[3].parse::<f64>().unwrap(), 2048.0);
    assert!(!row[7].is_empty());
}

#[test]
fn compound_single_flow_matches_library() {
    let o = run(&[
        "single-flow",
        "--variant",
        "compound",
        "--per",
        "1e-3",
        "--delta",
        "0.05",
        "--capacity-mbps",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, row) = single_row(&o);
    let lib = compound_chain_queue(1e-3, 0.05, 1e6 / 8400.0, 4096, &Default::default()).unwrap();
    assert_eq!(row[3], format!("{:.6}", lib.mean_window_palm));
    assert_eq!(row[4], format!("{:.6}", lib.mean_queue_pkts));
}

#[test]
fn cubic_needs_a_round_trip_time() {
    let o = run(&["single-flow", "--variant", "cubic", "--per", "1e-3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_network_gives_empty_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "schema_version = 1\n");
    let out = dir.path().to_str().unwrap();
    let o = run(&["solve", &cfg, "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let flows = table(&dir.path().join("flows.csv"));
    assert_eq!(
        flows,
        vec![vec!["flow_id", "variant", "throughput_pkts_s", "throughput_mbps", "mean_window_pkts", "mean_rtt_s"]]
    );
    let links = table(&dir.path().join("links.csv"));
    assert_eq!(links, vec![vec!["link_id", "utilization", "mean_queue_pkts", "sojourn_s"]]);
}

#[test]
fn parse_error_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("per = 0.001\nprop_delay_s = 0.1", "per = 0.001\nspeed = 3\nprop_delay_s = 0.1"));
    let o = run(&["solve", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 20, column 1"), "{err}");
}

#[test]
fn solve_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut rates = Vec::new();
    for method in ["mg1", "opt"] {
        let out = dir.path().join(method);
        let o = run(&["solve", &cfg, "--method", method, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let flows = table(&out.join("flows.csv"));
        assert_eq!(flows.len(), 3);
        rates.push(flows[1][2].parse::<f64>().unwrap());
        let diag = table(&out.join("diagnostics.csv"));
        assert_eq!(diag[1][0], method);
        assert_eq!(diag[1][1], "true");
    }
    assert!((rates[0] - rates[1]).abs() / rates[0] < 0.15, "{rates:?}");
}

#[test]
fn non_convergence_keeps_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().to_str().unwrap();
    let o = run(&["solve", &cfg, "--max-iters", "1", "--tol", "1e-14", "--out", out]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(table(&dir.path().join("flows.csv")).len(), 3);
    let diag = table(&dir.path().join("diagnostics.csv"));
    assert_eq!(diag[1][1], "false");
}

#[test]
fn simulate_rejects_multi_link_networks() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("route = [\"L1\"]\n\n[[flows]]", "route = [\"L1\", \"L2\"]\n\n[[flows]]")
        + "\n[[links]]\nid = \"L2\"\ncapacity_mbps = 10\n";
    let cfg = write_config(dir.path(), &text);
    let o = run(&["simulate", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut tables = Vec::new();
    for sub in ["one", "two"] {
        let out = dir.path().join(sub);
        let o = run(&["simulate", &cfg, "--horizon", "50000", "--seed", "42", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        tables.push(fs::read_to_string(out.join("sim_flows.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    let rows = table(&dir.path().join("one/sim_flows.csv"));
    assert_eq!(
        rows[0],
        [
            "flow_id",
            "variant",
            "throughput_pkts_s",
            "throughput_mbps",
            "mean_window_pkts",
            "mean_rtt_s",
            "mean_queue_pkts",
            "utilization",
            "stderr_window_pkts",
            "rtts"
        ]
    );
    assert!(rows[1..].iter().all(|r| !r[7].is_empty()));
    let links = table(&dir.path().join("one/sim_links.csv"));
    let util: f64 = links[1][1].parse().unwrap();
    assert!(util > 0.9 && util <= 1.0 + 1e-9, "{util}");
}

#[test]
fn table_one_config_simulates() {
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/bottleneck_12f_50mbps.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", cfg, "--horizon", "20000", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = table(&dir.path().join("sim_flows.csv"));
    assert_eq!(rows.len(), 13);
    assert_eq!(rows[0][7], "utilization");
}
