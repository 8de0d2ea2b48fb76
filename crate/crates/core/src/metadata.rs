//! Provenance block attached to every machine-readable output.

use serde::Serialize;

use crate::eco_matrix::{AbsorbedReactive, MatrixConventions};

pub const TOOL_NAME: &str = "ecogrid";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Conventions that shape the reported numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conventions {
    /// Branch losses leave the network at the receiving bus.
    pub loss_allocation: &'static str,
    /// Injections into a bus are positive: generating units and capacitors
    /// supply reactive power, reactors and inductive loads absorb it.
    pub reactive_sign: &'static str,
    /// Sink for power absorbed by generators.
    pub absorbed_reactive: AbsorbedReactive,
    /// Apparent power is oriented by the real-power direction.
    pub apparent_direction: &'static str,
    pub asc_form: &'static str,
    pub log_base: u32,
    pub std_type: &'static str,
    pub stats_end: &'static str,
    pub slack_redispatch: &'static str,
}

impl Conventions {
    pub fn new(matrix: &MatrixConventions) -> Self {
        Conventions {
            loss_allocation: "receiving_bus",
            reactive_sign: "injection_positive",
            absorbed_reactive: matrix.absorbed_reactive,
            apparent_direction: "real_power",
            asc_form: "mutual_information_row_column_sums",
            log_base: 2,
            std_type: "population",
            stats_end: "from",
            slack_redispatch: "slack_bus_pmax_share",
        }
    }
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions::new(&MatrixConventions::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseInfo {
    pub name: String,
    pub source: String,
    /// SHA-256 of the case file bytes.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub cases: Vec<CaseInfo>,
    pub conventions: Conventions,
}

impl Metadata {
    pub fn new(cases: Vec<CaseInfo>, conventions: Conventions) -> Self {
        Metadata {
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            cases,
            conventions,
        }
    }

    pub fn for_case(case: &crate::cases::LoadedCase, conventions: Conventions) -> Self {
        Metadata::new(
            vec![CaseInfo {
                name: case.network.name.clone(),
                source: case.source.clone(),
                checksum: case.checksum.clone(),
            }],
            conventions,
        )
    }
}
