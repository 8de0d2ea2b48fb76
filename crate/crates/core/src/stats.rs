//! Branch-flow statistics and the per-case comparison report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::Network;
use crate::contingency::DepthSummary;
use crate::eco_matrix::{build_eco_matrix_with, FlowType, MatrixConventions, RedundancyMode};
use crate::metadata::Metadata;
use crate::metrics::EcoMetrics;
use crate::powerflow::{BranchFlow, PowerFlowSolution};
use crate::Error as EcoError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no in-service branches to summarise")]
    NoBranches,
    #[error("branch flow csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowStats {
    pub flow_type: FlowType,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub sample_count: usize,
}

fn from_end_magnitude(f: &BranchFlow, flow: FlowType) -> f64 {
    match flow {
        FlowType::Real => f.p_from.abs(),
        FlowType::Reactive => f.q_from.abs(),
        FlowType::Apparent => f.s_from,
    }
}

/// Mean and population standard deviation of from-end flow magnitudes.
pub fn flow_stats(branches: &[BranchFlow], flow: FlowType) -> Result<FlowStats, StatsError> {
    if branches.is_empty() {
        return Err(StatsError::NoBranches);
    }
    let n = branches.len() as f64;
    let values: Vec<f64> = branches
        .iter()
        .map(|f| from_end_magnitude(f, flow))
        .collect();
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(FlowStats {
        flow_type: flow,
        mean,
        std: var.sqrt(),
        sample_count: branches.len(),
    })
}

/// Real, reactive and apparent statistics, in that order.
pub fn table_stats(branches: &[BranchFlow]) -> Result<[FlowStats; 3], StatsError> {
    Ok([
        flow_stats(branches, FlowType::Real)?,
        flow_stats(branches, FlowType::Reactive)?,
        flow_stats(branches, FlowType::Apparent)?,
    ])
}

pub const STATS_HEADER: [&str; 7] = [
    "case",
    "Mean(pf)",
    "STD(pf)",
    "Mean(rf)",
    "STD(rf)",
    "Mean(MVA)",
    "STD(MVA)",
];

pub fn stats_csv(rows: &[(String, [FlowStats; 3])]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(STATS_HEADER).expect("in-memory csv write");
    for (case, s) in rows {
        let mut rec = vec![case.clone()];
        for st in s {
            rec.push(format!("{}", st.mean));
            rec.push(format!("{}", st.std));
        }
        wtr.write_record(&rec).expect("in-memory csv write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}

#[derive(Debug, Serialize, Deserialize)]
struct FlowRow {
    branch: u32,
    from_bus: u32,
    to_bus: u32,
    p_from: f64,
    q_from: f64,
    p_to: f64,
    q_to: f64,
    s_from: f64,
    s_to: f64,
}

pub fn branch_flows_csv(branches: &[BranchFlow]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for f in branches {
        wtr.serialize(FlowRow {
            branch: f.id,
            from_bus: f.from_bus,
            to_bus: f.to_bus,
            p_from: f.p_from,
            q_from: f.q_from,
            p_to: f.p_to,
            q_to: f.q_to,
            s_from: f.s_from,
            s_to: f.s_to,
        })
        .expect("in-memory csv write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}

pub fn read_branch_flows_csv(text: &str) -> Result<Vec<BranchFlow>, StatsError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize::<FlowRow>()
        .map(|row| {
            let r = row.map_err(|e| StatsError::Csv(e.to_string()))?;
            Ok(BranchFlow {
                id: r.branch,
                from_bus: r.from_bus,
                to_bus: r.to_bus,
                p_from: r.p_from,
                q_from: r.q_from,
                p_to: r.p_to,
                q_to: r.q_to,
                s_from: r.s_from,
                s_to: r.s_to,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoEntry {
    pub flow: FlowType,
    pub mode: RedundancyMode,
    pub actors: usize,
    #[serde(flatten)]
    pub metrics: EcoMetrics,
}

/// All six flow-type × mode combinations, flow type outermost.
pub fn reco_table(
    net: &Network,
    sol: &PowerFlowSolution,
    conventions: &MatrixConventions,
) -> Result<Vec<RecoEntry>, EcoError> {
    let mut out = Vec::with_capacity(6);
    for flow in FlowType::ALL {
        for mode in RedundancyMode::ALL {
            let m = build_eco_matrix_with(net, sol, flow, mode, conventions)?;
            out.push(RecoEntry {
                flow,
                mode,
                actors: m.actors.len(),
                metrics: m.metrics()?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub case: String,
    pub reco: Vec<RecoEntry>,
    pub stats: [FlowStats; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survivability: Option<Vec<DepthSummary>>,
}

impl CaseReport {
    pub fn build(
        case: &str,
        net: &Network,
        sol: &PowerFlowSolution,
        conventions: &MatrixConventions,
    ) -> Result<Self, EcoError> {
        Ok(CaseReport {
            case: case.to_string(),
            reco: reco_table(net, sol, conventions)?,
            stats: table_stats(&sol.branches)?,
            survivability: None,
        })
    }

    pub fn reco(&self, flow: FlowType, mode: RedundancyMode) -> Option<&EcoMetrics> {
        self.reco
            .iter()
            .find(|e| e.flow == flow && e.mode == mode)
            .map(|e| &e.metrics)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub metadata: Metadata,
    pub cases: Vec<CaseReport>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per case: six robustness values, six statistics, then
    /// survivability counters per depth when present.
    pub fn to_csv(&self) -> String {
        let max_depth = self
            .cases
            .iter()
            .filter_map(|c| c.survivability.as_ref().map(Vec::len))
            .max()
            .unwrap_or(0);
        let mut header: Vec<String> = vec!["case".into()];
        for flow in FlowType::ALL {
            for mode in RedundancyMode::ALL {
                header.push(format!("R_{flow}_{mode}"));
            }
        }
        header.extend(STATS_HEADER[1..].iter().map(|s| s.to_string()));
        for d in 1..=max_depth {
            for field in ["total", "violations", "violated", "unsolved"] {
                header.push(format!("n{d}_{field}"));
            }
        }
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(&header).expect("in-memory csv write");
        for c in &self.cases {
            let mut rec = vec![c.case.clone()];
            for flow in FlowType::ALL {
                for mode in RedundancyMode::ALL {
                    rec.push(
                        c.reco(flow, mode)
                            .map_or(String::new(), |m| m.robustness.to_string()),
                    );
                }
            }
            for s in &c.stats {
                rec.push(s.mean.to_string());
                rec.push(s.std.to_string());
            }
            let surv = c.survivability.as_deref().unwrap_or(&[]);
            for d in 0..max_depth {
                match surv.get(d) {
                    Some(s) => rec.extend(
                        [s.total, s.num_violations, s.num_violated, s.num_unsolved]
                            .map(|v| v.to_string()),
                    ),
                    None => rec.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            wtr.write_record(&rec).expect("in-memory csv write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
    }
}
