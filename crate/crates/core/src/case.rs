//! Grid data model, case-file parsing, validation and outage application.
//!
//! The reader accepts the matrix-block case dialect (`mpc.baseMVA`,
//! `mpc.bus`, `mpc.gen`, `mpc.branch`); any other block (cost tables, area
//! data, cell arrays of names) is skipped.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Voltage limits used when a bus row does not carry them.
pub const DEFAULT_V_MIN: f64 = 0.95;
pub const DEFAULT_V_MAX: f64 = 1.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("{element} references bus {bus}, which is not in the bus table")]
    DanglingReference { element: String, bus: u32 },
    #[error("case has no slack (type 3) bus")]
    NoSlack,
    #[error("unknown {kind} id {id}")]
    UnknownElement { kind: &'static str, id: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    #[serde(rename = "PQ")]
    Pq,
    #[serde(rename = "PV")]
    Pv,
    #[serde(rename = "slack")]
    Slack,
}

impl BusKind {
    /// Maps a numeric bus type code. Isolated buses (code 4) are read as PQ;
    /// they never reach the solver because they sit outside the slack island.
    pub fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            1 | 4 if code.fract() == 0.0 => Some(BusKind::Pq),
            2 if code.fract() == 0.0 => Some(BusKind::Pv),
            3 if code.fract() == 0.0 => Some(BusKind::Slack),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Slack => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// Initial magnitude (pu); PV and slack buses take their setpoint from
    /// the attached generators at solve time.
    pub voltage_magnitude_setpoint: f64,
    /// Initial angle in degrees, used only for warm starts.
    pub voltage_angle_deg: f64,
    pub load_p: f64,
    pub load_q: f64,
    /// MW consumed at V = 1 pu.
    pub shunt_g: f64,
    /// Mvar injected at V = 1 pu.
    pub shunt_b: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generator {
    pub id: u32,
    pub bus: u32,
    pub p_out: f64,
    pub q_out: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub in_service: bool,
    pub voltage_setpoint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    pub id: u32,
    pub from_bus: u32,
    pub to_bus: u32,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    /// Thermal limit in MVA, 0 means unlimited.
    pub rate_mva: f64,
    /// Off-nominal ratio as read; 0 is interpreted as 1 by the solver.
    pub tap_ratio: f64,
    pub phase_shift_deg: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn effective_tap(&self) -> f64 {
        if self.tap_ratio == 0.0 {
            1.0
        } else {
            self.tap_ratio
        }
    }
}

/// Static grid description. Out-of-service elements stay in the tables so
/// element ids are stable across contingencies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutageSet {
    pub branch_ids: BTreeSet<u32>,
    pub generator_ids: BTreeSet<u32>,
}

impl OutageSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn branches<I: IntoIterator<Item = u32>>(ids: I) -> Self {
        OutageSet {
            branch_ids: ids.into_iter().collect(),
            generator_ids: BTreeSet::new(),
        }
    }

    pub fn generators<I: IntoIterator<Item = u32>>(ids: I) -> Self {
        OutageSet {
            branch_ids: BTreeSet::new(),
            generator_ids: ids.into_iter().collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.branch_ids.len() + self.generator_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth() == 0
    }

    pub fn union(&self, other: &OutageSet) -> OutageSet {
        OutageSet {
            branch_ids: self.branch_ids.union(&other.branch_ids).copied().collect(),
            generator_ids: self
                .generator_ids
                .union(&other.generator_ids)
                .copied()
                .collect(),
        }
    }
}

impl fmt::Display for OutageSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .branch_ids
            .iter()
            .map(|id| format!("branch:{id}"))
            .chain(self.generator_ids.iter().map(|id| format!("gen:{id}")))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// A single validation finding: which element, which rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    pub element: String,
    pub rule: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.rule)
    }
}

impl Network {
    /// Position of a bus in `buses`.
    pub fn bus_position(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Map from bus id to position in `buses`.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn generator(&self, id: u32) -> Option<&Generator> {
        self.generators.iter().find(|g| g.id == id)
    }

    pub fn branch(&self, id: u32) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn slack_buses(&self) -> Vec<u32> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect()
    }

    pub fn in_service_generators(&self) -> impl Iterator<Item = &Generator> {
        self.generators.iter().filter(|g| g.in_service)
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(|b| b.in_service)
    }

    /// Sum of P_max over in-service generators at a bus.
    pub fn generation_capability(&self, bus: u32) -> f64 {
        self.in_service_generators()
            .filter(|g| g.bus == bus)
            .map(|g| g.p_max)
            .sum()
    }

    pub fn validate(&self) -> Vec<ValidationIssue> {
        validate(self)
    }

    pub fn apply_outage(&self, outage: &OutageSet) -> Result<Network, CaseError> {
        apply_outage(self, outage)
    }

    pub fn connected_components(&self) -> Vec<Vec<u32>> {
        connected_components(self)
    }

    /// Renders the network back into the matrix-block case format.
    pub fn to_case_text(&self) -> String {
        to_case_text(self)
    }
}

/// Hex SHA-256 of raw case-file bytes, recorded in report metadata.
pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------------------
// Parsing

struct Block {
    line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

#[derive(Default)]
struct RawCase {
    name: Option<String>,
    base_mva: Option<(usize, f64)>,
    blocks: HashMap<String, Block>,
}

fn strip_comment(line: &str) -> &str {
    // Quoted strings in case files never contain '%', so a plain split works.
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn syntax(line: usize, message: impl Into<String>) -> CaseError {
    CaseError::Syntax {
        line,
        message: message.into(),
    }
}

/// Splits `lhs = rhs` where lhs is `<ident>.<field>`; returns the field name.
fn assignment_field(lhs: &str) -> Option<&str> {
    let lhs = lhs.trim();
    let (var, field) = lhs.split_once('.')?;
    let is_ident =
        |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    (is_ident(var) && is_ident(field)).then_some(field)
}

fn parse_row(line_no: usize, text: &str) -> Result<Vec<f64>, CaseError> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|tok| match tok {
            "Inf" | "inf" => Ok(f64::INFINITY),
            "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
            _ => tok
                .parse::<f64>()
                .map_err(|_| syntax(line_no, format!("invalid number '{tok}'"))),
        })
        .collect()
}

/// Feeds one line of a numeric block; returns true once the closing bracket is seen.
fn feed_rows(
    line_no: usize,
    body: &str,
    rows: &mut Vec<(usize, Vec<f64>)>,
) -> Result<bool, CaseError> {
    let (inner, closed) = match body.find(']') {
        Some(i) => (&body[..i], true),
        None => (body, false),
    };
    for chunk in inner.split(';') {
        let row = parse_row(line_no, chunk)?;
        if !row.is_empty() {
            rows.push((line_no, row));
        }
    }
    Ok(closed)
}

enum Open {
    Numeric(String, usize, Vec<(usize, Vec<f64>)>),
    Cell(String, usize),
}

fn scan(text: &str) -> Result<RawCase, CaseError> {
    let mut raw = RawCase::default();
    let mut open: Option<Open> = None;

    for (idx, full_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(full_line).trim();

        match open.take() {
            Some(Open::Numeric(field, start, mut rows)) => {
                if feed_rows(line_no, line, &mut rows)? {
                    raw.blocks.insert(field, Block { line: start, rows });
                } else {
                    open = Some(Open::Numeric(field, start, rows));
                }
                continue;
            }
            Some(Open::Cell(field, start)) => {
                if !line.contains('}') {
                    open = Some(Open::Cell(field, start));
                }
                continue;
            }
            None => {}
        }

        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            if let Some((_, name)) = rest.split_once('=') {
                raw.name = Some(name.trim().trim_end_matches(';').to_string());
            }
            continue;
        }
        let Some((lhs, rhs)) = line.split_once('=') else {
            return Err(syntax(line_no, format!("unexpected text '{line}'")));
        };
        let Some(field) = assignment_field(lhs) else {
            return Err(syntax(
                line_no,
                format!("unexpected assignment '{}'", lhs.trim()),
            ));
        };
        let rhs = rhs.trim();
        if let Some(body) = rhs.strip_prefix('[') {
            let mut rows = Vec::new();
            if feed_rows(line_no, body, &mut rows)? {
                raw.blocks.insert(
                    field.to_string(),
                    Block {
                        line: line_no,
                        rows,
                    },
                );
            } else {
                open = Some(Open::Numeric(field.to_string(), line_no, rows));
            }
        } else if rhs.starts_with('{') {
            if !rhs.contains('}') {
                open = Some(Open::Cell(field.to_string(), line_no));
            }
        } else if field == "baseMVA" {
            let value = rhs.trim_end_matches(';').trim();
            let v = value
                .parse::<f64>()
                .map_err(|_| syntax(line_no, format!("invalid baseMVA '{value}'")))?;
            raw.base_mva = Some((line_no, v));
        }
        // Other scalar assignments (version, etc.) are ignored.
    }

    match open {
        Some(Open::Numeric(field, start, _)) | Some(Open::Cell(field, start)) => {
            Err(syntax(start, format!("block '{field}' is never closed")))
        }
        None => Ok(raw),
    }
}

fn require_cols(line: usize, row: &[f64], n: usize, table: &str) -> Result<(), CaseError> {
    if row.len() < n {
        Err(syntax(
            line,
            format!(
                "{table} row has {} columns, at least {n} required",
                row.len()
            ),
        ))
    } else {
        Ok(())
    }
}

fn as_id(line: usize, v: f64, what: &str) -> Result<u32, CaseError> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(syntax(
            line,
            format!("{what} '{v}' is not a positive integer"),
        ))
    }
}

/// Parses a matrix-block case file into a [`Network`].
pub fn parse_case(text: &str) -> Result<Network, CaseError> {
    let mut raw = scan(text)?;
    let last_line = text.lines().count().max(1);

    let (_, base_mva) = raw
        .base_mva
        .ok_or_else(|| syntax(last_line, "missing baseMVA"))?;
    if !(base_mva > 0.0) {
        return Err(syntax(raw.base_mva.unwrap().0, "baseMVA must be positive"));
    }

    let bus_block = raw
        .blocks
        .remove("bus")
        .ok_or_else(|| syntax(last_line, "missing bus table"))?;
    let gen_block = raw
        .blocks
        .remove("gen")
        .ok_or_else(|| syntax(last_line, "missing gen table"))?;
    let branch_block = raw
        .blocks
        .remove("branch")
        .ok_or_else(|| syntax(last_line, "missing branch table"))?;

    let mut buses = Vec::with_capacity(bus_block.rows.len());
    let mut seen = HashSet::new();
    for (line, row) in &bus_block.rows {
        require_cols(*line, row, 10, "bus")?;
        let id = as_id(*line, row[0], "bus id")?;
        if !seen.insert(id) {
            return Err(CaseError::DuplicateBus(id));
        }
        let kind = BusKind::from_code(row[1])
            .ok_or_else(|| syntax(*line, format!("unknown bus type {}", row[1])))?;
        let (v_max, v_min) = match (row.get(11), row.get(12)) {
            (Some(&hi), Some(&lo)) if !(hi == 0.0 && lo == 0.0) => (hi, lo),
            _ => (DEFAULT_V_MAX, DEFAULT_V_MIN),
        };
        buses.push(Bus {
            id,
            kind,
            load_p: row[2],
            load_q: row[3],
            shunt_g: row[4],
            shunt_b: row[5],
            voltage_magnitude_setpoint: row[7],
            voltage_angle_deg: row[8],
            base_kv: row[9],
            v_min,
            v_max,
        });
    }
    if bus_block.rows.is_empty() {
        return Err(syntax(bus_block.line, "bus table is empty"));
    }

    let mut generators = Vec::with_capacity(gen_block.rows.len());
    for (k, (line, row)) in gen_block.rows.iter().enumerate() {
        require_cols(*line, row, 10, "gen")?;
        let bus = as_id(*line, row[0], "generator bus")?;
        let id = k as u32 + 1;
        if !seen.contains(&bus) {
            return Err(CaseError::DanglingReference {
                element: format!("generator {id}"),
                bus,
            });
        }
        generators.push(Generator {
            id,
            bus,
            p_out: row[1],
            q_out: row[2],
            q_max: row[3],
            q_min: row[4],
            voltage_setpoint: row[5],
            in_service: row[7] > 0.0,
            p_max: row[8],
            p_min: row[9],
        });
    }

    let mut branches = Vec::with_capacity(branch_block.rows.len());
    for (k, (line, row)) in branch_block.rows.iter().enumerate() {
        require_cols(*line, row, 11, "branch")?;
        let id = k as u32 + 1;
        let from_bus = as_id(*line, row[0], "from bus")?;
        let to_bus = as_id(*line, row[1], "to bus")?;
        for bus in [from_bus, to_bus] {
            if !seen.contains(&bus) {
                return Err(CaseError::DanglingReference {
                    element: format!("branch {id}"),
                    bus,
                });
            }
        }
        branches.push(Branch {
            id,
            from_bus,
            to_bus,
            r: row[2],
            x: row[3],
            b_charging: row[4],
            rate_mva: row[5],
            tap_ratio: row[8],
            phase_shift_deg: row[9],
            in_service: row[10] > 0.0,
        });
    }

    if !buses.iter().any(|b| b.kind == BusKind::Slack) {
        return Err(CaseError::NoSlack);
    }

    Ok(Network {
        name: raw.name.unwrap_or_else(|| "case".to_string()),
        base_mva,
        buses,
        generators,
        branches,
    })
}

// ---------------------------------------------------------------------------
// Serialization back to case text

fn to_case_text(net: &Network) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {}", net.name);
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", net.base_mva);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin"
    );
    let _ = writeln!(out, "mpc.bus = [");
    for b in &net.buses {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t{}\t1\t{}\t{};",
            b.id,
            b.kind.code(),
            b.load_p,
            b.load_q,
            b.shunt_g,
            b.shunt_b,
            b.voltage_magnitude_setpoint,
            b.voltage_angle_deg,
            b.base_kv,
            b.v_max,
            b.v_min
        );
    }
    let _ = writeln!(out, "];\n");
    let _ = writeln!(
        out,
        "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin"
    );
    let _ = writeln!(out, "mpc.gen = [");
    for g in &net.generators {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{};",
            g.bus,
            g.p_out,
            g.q_out,
            g.q_max,
            g.q_min,
            g.voltage_setpoint,
            net.base_mva,
            u8::from(g.in_service),
            g.p_max,
            g.p_min
        );
    }
    let _ = writeln!(out, "];\n");
    let _ = writeln!(
        out,
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus"
    );
    let _ = writeln!(out, "mpc.branch = [");
    for br in &net.branches {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{};",
            br.from_bus,
            br.to_bus,
            br.r,
            br.x,
            br.b_charging,
            br.rate_mva,
            br.rate_mva,
            br.rate_mva,
            br.tap_ratio,
            br.phase_shift_deg,
            u8::from(br.in_service)
        );
    }
    let _ = writeln!(out, "];");
    out
}

// ---------------------------------------------------------------------------
// Validation

pub fn validate(net: &Network) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    let mut push = |element: String, rule: &str| {
        issues.push(ValidationIssue {
            element,
            rule: rule.to_string(),
        })
    };

    let mut seen = HashSet::new();
    for b in &net.buses {
        if !seen.insert(b.id) {
            push(format!("bus {}", b.id), "bus id must be unique");
        }
        if b.v_min >= b.v_max {
            push(format!("bus {}", b.id), "v_min must be below v_max");
        }
    }

    let slacks = net.slack_buses();
    match slacks.len() {
        0 => push(
            "network".to_string(),
            "exactly one slack bus required, found none",
        ),
        1 => {}
        _ => {
            let ids: Vec<String> = slacks.iter().map(|id| id.to_string()).collect();
            push(
                format!("buses {}", ids.join(", ")),
                "exactly one slack bus required",
            );
        }
    }

    for g in &net.generators {
        if !seen.contains(&g.bus) {
            push(format!("generator {}", g.id), "attached bus does not exist");
        }
    }
    if !net.generators.iter().any(|g| g.in_service) {
        push(
            "network".to_string(),
            "at least one in-service generator required",
        );
    }

    for br in &net.branches {
        let element = format!("branch {}", br.id);
        if !seen.contains(&br.from_bus) || !seen.contains(&br.to_bus) {
            push(element.clone(), "terminal bus does not exist");
        }
        if br.from_bus == br.to_bus {
            push(element.clone(), "from_bus must differ from to_bus");
        }
        if br.r < 0.0 {
            push(element.clone(), "series resistance must be nonnegative");
        }
        if br.in_service && br.x == 0.0 {
            push(element, "in-service branch must have nonzero reactance");
        }
    }
    if !(net.base_mva > 0.0) {
        push("network".to_string(), "base MVA must be positive");
    }
    issues
}

// ---------------------------------------------------------------------------
// Outages and topology

pub fn apply_outage(net: &Network, outage: &OutageSet) -> Result<Network, CaseError> {
    for &id in &outage.branch_ids {
        if net.branch(id).is_none() {
            return Err(CaseError::UnknownElement { kind: "branch", id });
        }
    }
    for &id in &outage.generator_ids {
        if net.generator(id).is_none() {
            return Err(CaseError::UnknownElement {
                kind: "generator",
                id,
            });
        }
    }
    let mut out = net.clone();
    for br in &mut out.branches {
        if outage.branch_ids.contains(&br.id) {
            br.in_service = false;
        }
    }
    for g in &mut out.generators {
        if outage.generator_ids.contains(&g.id) {
            g.in_service = false;
        }
    }
    Ok(out)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Islands formed by in-service branches, each listing bus ids in table
/// order. Islands are ordered by their first bus.
pub fn connected_components(net: &Network) -> Vec<Vec<u32>> {
    let index = net.bus_index();
    let mut parent: Vec<usize> = (0..net.buses.len()).collect();
    for br in net.in_service_branches() {
        let (Some(&a), Some(&b)) = (index.get(&br.from_bus), index.get(&br.to_bus)) else {
            continue;
        };
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<Vec<u32>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..net.buses.len() {
        let root = find(&mut parent, i);
        let k = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[k].push(net.buses[i].id);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_BUS: &str = "\
function mpc = two_bus
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
\t2\t1\t100\t0\t0\t0\t1\t1\t0\t230\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t100\t0\t300\t-300\t1\t100\t1\t250\t0;
];
mpc.branch = [
\t1\t2\t0\t0.1\t0\t0\t0\t0\t0\t0\t1;
];
mpc.gencost = [
\t2\t0\t0\t3\t0.01\t40\t0;
];
";

    #[test]
    fn parses_minimal_case() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(
            (net.buses.len(), net.generators.len(), net.branches.len()),
            (2, 1, 1)
        );
        assert_eq!(net.name, "two_bus");
        assert_eq!(net.buses[0].kind, BusKind::Slack);
        assert_eq!(net.buses[1].kind, BusKind::Pq);
        assert_eq!(net.buses[1].load_p, 100.0);
        assert_eq!(net.branches[0].x, 0.1);
        assert!(net.validate().is_empty());
    }

    #[test]
    fn dangling_branch_reference() {
        let text = TWO_BUS.replace("\t1\t2\t0\t0.1", "\t1\t99\t0\t0.1");
        let err = parse_case(&text).unwrap_err();
        assert_eq!(
            err,
            CaseError::DanglingReference {
                element: "branch 1".into(),
                bus: 99
            }
        );
    }

    #[test]
    fn syntax_error_carries_line_number() {
        let text = TWO_BUS.replace("\t2\t1\t100\t0", "\t2\t1\t1o0\t0");
        match parse_case(&text).unwrap_err() {
            CaseError::Syntax { line, message } => {
                assert_eq!(line, 5);
                assert!(message.contains("1o0"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_bus_and_missing_slack() {
        let dup = TWO_BUS.replace("\t2\t1\t100", "\t1\t1\t100");
        assert_eq!(parse_case(&dup).unwrap_err(), CaseError::DuplicateBus(1));
        let no_slack = TWO_BUS.replace("\t1\t3\t0", "\t1\t2\t0");
        assert_eq!(parse_case(&no_slack).unwrap_err(), CaseError::NoSlack);
    }

    #[test]
    fn unclosed_block() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 230;\n";
        assert!(matches!(
            parse_case(text).unwrap_err(),
            CaseError::Syntax { line: 2, .. }
        ));
    }

    #[test]
    fn single_line_blocks_and_commas() {
        let text = "mpc.baseMVA = 10;\n\
            mpc.bus = [1, 3, 0, 0, 0, 0, 1, 1, 0, 10; 2, 1, 5, 1, 0, 0, 1, 1, 0, 10];\n\
            mpc.gen = [1 5 0 10 -10 1 10 1 10 0];\n\
            mpc.branch = [1 2 0.01 0.1 0 0 0 0 0 0 1];\n\
            mpc.bus_name = {\n'a';\n'b';\n};\n";
        let net = parse_case(text).unwrap();
        assert_eq!(net.buses.len(), 2);
        // limits absent: defaults apply
        assert_eq!(net.buses[1].v_min, DEFAULT_V_MIN);
        assert_eq!(net.buses[1].v_max, DEFAULT_V_MAX);
    }

    #[test]
    fn validate_two_slacks_names_both() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.buses[1].kind = BusKind::Slack;
        let issues = net.validate();
        assert_eq!(issues.len(), 1);
        assert!(issues[0].element.contains('1') && issues[0].element.contains('2'));
    }

    #[test]
    fn validate_negative_resistance() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.branches[0].r = -0.01;
        let issues = net.validate();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].element, "branch 1");
    }

    #[test]
    fn validate_flags_zero_reactance_and_limits() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.branches[0].x = 0.0;
        net.buses[0].v_min = 1.2;
        let issues = net.validate();
        assert_eq!(issues.len(), 2);
    }

    #[test]
    fn outage_identity_and_unknown() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(net.apply_outage(&OutageSet::new()).unwrap(), net);
        assert_eq!(
            net.apply_outage(&OutageSet::branches([5])).unwrap_err(),
            CaseError::UnknownElement {
                kind: "branch",
                id: 5
            }
        );
    }

    #[test]
    fn outage_of_only_generator_zeroes_capability() {
        let net = parse_case(TWO_BUS).unwrap();
        let out = net.apply_outage(&OutageSet::generators([1])).unwrap();
        assert_eq!(out.generation_capability(1), 0.0);
        assert_eq!(net.generation_capability(1), 250.0);
        assert!(net.generators[0].in_service);
    }

    #[test]
    fn islands_after_single_branch_outage() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(net.connected_components(), vec![vec![1, 2]]);
        let out = net.apply_outage(&OutageSet::branches([1])).unwrap();
        assert_eq!(out.connected_components(), vec![vec![1], vec![2]]);
    }

    #[test]
    fn ring_stays_connected() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n\
            1 3 0 0 0 0 1 1 0 10;\n2 1 0 0 0 0 1 1 0 10;\n3 1 0 0 0 0 1 1 0 10;\n4 1 0 0 0 0 1 1 0 10;\n];\n\
            mpc.gen = [1 0 0 10 -10 1 100 1 10 0];\n\
            mpc.branch = [\n1 2 0 0.1 0 0 0 0 0 0 1;\n2 3 0 0.1 0 0 0 0 0 0 1;\n\
            3 4 0 0.1 0 0 0 0 0 0 1;\n4 1 0 0.1 0 0 0 0 0 0 1;\n];\n";
        let net = parse_case(text).unwrap();
        let out = net.apply_outage(&OutageSet::branches([2])).unwrap();
        assert_eq!(out.connected_components(), vec![vec![1, 2, 3, 4]]);
    }

    #[test]
    fn case_text_round_trip() {
        let net = parse_case(TWO_BUS).unwrap();
        let again = parse_case(&net.to_case_text()).unwrap();
        assert_eq!(net, again);
    }
}
