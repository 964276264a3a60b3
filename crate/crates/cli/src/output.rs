use std::io::{self, Write};
use std::path::Path;

use tcpflow::model::SolverResult;
use tcpflow::sim::BottleneckStats;

pub const FLOWS_HEADER: [&str; 6] = [
    "flow_id",
    "variant",
    "throughput_pkts_s",
    "throughput_mbps",
    "mean_window_pkts",
    "mean_rtt_s",
];
pub const LINKS_HEADER: [&str; 4] = ["link_id", "utilization", "mean_queue_pkts", "sojourn_s"];
pub const SIM_FLOWS_HEADER: [&str; 10] = [
    "flow_id",
    "variant",
    "throughput_pkts_s",
    "throughput_mbps",
    "mean_window_pkts",
    "mean_rtt_s",
    "mean_queue_pkts",
    "utilization",
    "stderr_window_pkts",
    "rtts",
];
pub const SINGLE_FLOW_HEADER: [&str; 8] = [
    "variant",
    "per",
    "w_max",
    "mean_window_pkts",
    "mean_queue_pkts",
    "mean_rtt_s",
    "utilization",
    "note",
];

pub fn num(x: f64) -> String {
    format!("{x:.6}")
}

pub type Rows = Vec<Vec<String>>;

pub fn write_csv<W: Write>(out: W, header: &[&str], rows: &Rows) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

/// Writes the table next to `path` and renames it into place.
pub fn write_csv_file(path: &Path, header: &[&str], rows: &Rows) -> io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write_csv(&mut tmp, header, rows)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn flow_rows(res: &SolverResult) -> Rows {
    res.per_flow
        .iter()
        .map(|f| {
            vec![
                f.id.clone(),
                f.variant.clone(),
                num(f.throughput_pkts_s),
                num(f.throughput_bps / 1e6),
                num(f.mean_window),
                num(f.mean_rtt_s),
            ]
        })
        .collect()
}

pub fn link_rows(res: &SolverResult) -> Rows {
    res.per_link
        .iter()
        .map(|l| vec![l.id.clone(), num(l.utilization), num(l.mean_queue_pkts), num(l.sojourn_s)])
        .collect()
}

pub struct SimFlowRow<'a> {
    pub id: &'a str,
    pub variant: &'a str,
    pub pkt_bits: f64,
    pub capacity_bps: Option<f64>,
}

pub fn sim_rows(flows: &[SimFlowRow], stats: &BottleneckStats) -> Rows {
    flows
        .iter()
        .zip(&stats.flows)
        .map(|(f, s)| {
            let bps = s.throughput_pkts_s * f.pkt_bits;
            vec![
                f.id.to_string(),
                f.variant.to_string(),
                num(s.throughput_pkts_s),
                num(bps / 1e6),
                num(s.mean_window),
                num(s.mean_rtt_s),
                num(s.mean_queue_pkts),
                f.capacity_bps.map_or(String::new(), |c| num(bps / c)),
                num(s.std_err.mean_window),
                s.rtts.to_string(),
            ]
        })
        .collect()
}
