//! TOML network descriptions.
//!
//! ```toml
//! schema_version = 1
//!
//! [solver]
//! method = "mg1"
//!
//! [[links]]
//! id = "L1"
//! capacity_mbps = 50
//!
//! [[flows]]
//! id = "f1"
//! variant = "cubic"
//! per = 0.001
//! prop_delay_s = 0.02
//! pkt_bytes = 1050
//! route = ["L1"]
//! ack_route = []
//! params = { c = 0.4, beta = 0.3 }
//! ```
//!
//! Capacities are in Mbps, delays in seconds and packet sizes in bytes. A flow
//! without `w_max` gets [`default_w_max`] for the largest capacity and delay
//! in the document.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{default_w_max, CompoundParams, CubicParams, FlowSpec, LinkSpec, NetworkSpec, SolverMethod, TcpVariant};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_method")]
    pub method: SolverMethod,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
}

fn default_method() -> SolverMethod {
    SolverMethod::Mg1
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            method: SolverMethod::Mg1,
            tol: None,
            max_iters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub id: String,
    pub capacity_mbps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Cubic,
    Compound,
    Newreno,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    pub c: Option<f64>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub k: Option<f64>,
    pub zeta: Option<f64>,
    pub gamma_pkts: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowDoc {
    pub id: String,
    pub variant: VariantName,
    #[serde(default)]
    pub params: ParamsDoc,
    pub per: f64,
    pub prop_delay_s: f64,
    pub pkt_bytes: f64,
    /// Second moment of the packet size in bytes squared; defaults to a
    /// constant size.
    pub pkt_bytes_second_moment: Option<f64>,
    pub route: Vec<String>,
    #[serde(default)]
    pub ack_route: Vec<String>,
    pub w_max: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub links: Vec<LinkDoc>,
    #[serde(default)]
    pub flows: Vec<FlowDoc>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

fn variant(flow: &FlowDoc) -> Result<TcpVariant> {
    let p = &flow.params;
    let stray = |names: &[(&str, Option<f64>)]| -> Result<()> {
        match names.iter().find(|(_, v)| v.is_some()) {
            Some((name, _)) => Err(Error::Config(format!(
                "flow {}: parameter `{name}` does not apply to {:?}",
                flow.id, flow.variant
            ))),
            None => Ok(()),
        }
    };
    Ok(match flow.variant {
        VariantName::Newreno => {
            stray(&[
                ("c", p.c),
                ("beta", p.beta),
                ("alpha", p.alpha),
                ("k", p.k),
                ("zeta", p.zeta),
                ("gamma_pkts", p.gamma_pkts),
            ])?;
            TcpVariant::NewReno
        }
        VariantName::Cubic => {
            stray(&[("alpha", p.alpha), ("k", p.k), ("zeta", p.zeta), ("gamma_pkts", p.gamma_pkts)])?;
            let d = CubicParams::default();
            TcpVariant::Cubic(CubicParams {
                c: p.c.unwrap_or(d.c),
                beta: p.beta.unwrap_or(d.beta),
            })
        }
        VariantName::Compound => {
            stray(&[("c", p.c), ("beta", p.beta)])?;
            let d = CompoundParams::default();
            TcpVariant::Compound(CompoundParams {
                alpha: p.alpha.unwrap_or(d.alpha),
                k: p.k.unwrap_or(d.k),
                zeta: p.zeta.unwrap_or(d.zeta),
                gamma_pkts: p.gamma_pkts.unwrap_or(d.gamma_pkts),
            })
        }
    })
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: ConfigDocument = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    Error::Config(format!("line {line}, column {col}: {msg}"))
                }
                None => Error::Config(msg),
            }
        })?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The network described by the document, validated.
    pub fn network(&self) -> Result<NetworkSpec> {
        let links: Vec<LinkSpec> = self
            .links
            .iter()
            .map(|l| LinkSpec {
                id: l.id.clone(),
                capacity_bps: l.capacity_mbps * 1e6,
            })
            .collect();
        let max_cap = links.iter().map(|l| l.capacity_bps).fold(0.0, f64::max);
        let max_delay = self.flows.iter().map(|f| f.prop_delay_s).fold(0.0, f64::max);
        let flows = self
            .flows
            .iter()
            .map(|f| {
                let bits = f.pkt_bytes * 8.0;
                Ok(FlowSpec {
                    id: f.id.clone(),
                    variant: variant(f)?,
                    loss_prob: f.per,
                    prop_delay_s: f.prop_delay_s,
                    pkt_mean_bits: bits,
                    pkt_second_moment_bits2: f.pkt_bytes_second_moment.map_or(bits * bits, |m| m * 64.0),
                    data_route: f.route.clone(),
                    ack_route: f.ack_route.clone(),
                    w_max: f.w_max.unwrap_or_else(|| default_w_max(max_cap, max_delay, bits)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec { links, flows };
        spec.ensure_valid()?;
        Ok(spec)
    }
}
