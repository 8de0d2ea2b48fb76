//! Ecological flow matrix of a solved operating point.
//!
//! Actors are generators, bus shunts and buses of the solved island, in that
//! order, followed by three environs: system input, useful export and
//! dissipation. Every device or branch quantity is mapped to nonnegative
//! entries so that each actor's inflow equals its outflow.
//!
//! Sign conventions, for a signed device injection `s` into its bus:
//!
//! * `s > 0`: input → device → bus.
//! * `s < 0`: bus → device → sink, where the sink is dissipation (or useful
//!   export for absorbing generators when [`AbsorbedReactive::Export`] is set).
//!
//! For a branch with signed end injections `a` (from end) and `b` (to end):
//!
//! * `a > 0, b < 0`: from → to carries `a`; the net `a + b` leaves the
//!   receiving bus to dissipation when positive and enters it from the input
//!   environ when negative. Mirror case for `a < 0, b > 0`.
//! * otherwise each end acts alone: a positive end dissipates at its bus, a
//!   negative end is fed from the input environ.
//!
//! Apparent power follows the real-power direction of each element. Since
//! apparent power is not conserved at a bus, a per-bus balancing entry
//! (dissipation or input) closes each bus account.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::Network;
use crate::metrics::{self, EcoMetrics, MetricsError};
use crate::powerflow::PowerFlowSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("power-flow solution is not converged")]
    Unconverged,
    #[error("solved island is empty")]
    EmptyIsland,
    #[error("solution references bus {0} missing from the network")]
    UnknownBus(u32),
    #[error("matrix csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowType {
    Real,
    Reactive,
    Apparent,
}

impl FlowType {
    pub const ALL: [FlowType; 3] = [FlowType::Real, FlowType::Reactive, FlowType::Apparent];

    pub fn units(self) -> &'static str {
        match self {
            FlowType::Real => "MW",
            FlowType::Reactive => "Mvar",
            FlowType::Apparent => "MVA",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowType::Real => "real",
            FlowType::Reactive => "reactive",
            FlowType::Apparent => "apparent",
        }
    }
}

impl fmt::Display for FlowType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlowType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "real" | "p" => Ok(FlowType::Real),
            "reactive" | "q" => Ok(FlowType::Reactive),
            "apparent" | "s" => Ok(FlowType::Apparent),
            other => Err(format!("unknown flow type '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RedundancyMode {
    /// Same-kind devices at one bus merged into one actor.
    Aggregate,
    /// One actor per device.
    Split,
}

impl RedundancyMode {
    pub const ALL: [RedundancyMode; 2] = [RedundancyMode::Aggregate, RedundancyMode::Split];

    pub fn name(self) -> &'static str {
        match self {
            RedundancyMode::Aggregate => "aggregate",
            RedundancyMode::Split => "split",
        }
    }
}

impl fmt::Display for RedundancyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RedundancyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aggregate" => Ok(RedundancyMode::Aggregate),
            "split" => Ok(RedundancyMode::Split),
            other => Err(format!("unknown redundancy mode '{other}'")),
        }
    }
}

/// Where power absorbed by a generator goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbsorbedReactive {
    #[default]
    Dissipation,
    Export,
}

impl FromStr for AbsorbedReactive {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dissipation" => Ok(AbsorbedReactive::Dissipation),
            "export" => Ok(AbsorbedReactive::Export),
            other => Err(format!("unknown absorbed-power convention '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MatrixConventions {
    pub absorbed_reactive: AbsorbedReactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    /// A single generating unit, identified by generator id.
    Generator,
    /// All units at one bus, identified by bus id.
    GeneratorGroup,
    /// Bus shunt, identified by bus id.
    Shunt,
    Bus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Actor {
    pub kind: ActorKind,
    pub id: u32,
}

impl Actor {
    pub fn bus(id: u32) -> Self {
        Actor {
            kind: ActorKind::Bus,
            id,
        }
    }

    pub fn generator(id: u32) -> Self {
        Actor {
            kind: ActorKind::Generator,
            id,
        }
    }

    pub fn generator_group(bus: u32) -> Self {
        Actor {
            kind: ActorKind::GeneratorGroup,
            id: bus,
        }
    }

    pub fn shunt(bus: u32) -> Self {
        Actor {
            kind: ActorKind::Shunt,
            id: bus,
        }
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.kind {
            ActorKind::Generator => "gen",
            ActorKind::GeneratorGroup => "gens",
            ActorKind::Shunt => "shunt",
            ActorKind::Bus => "bus",
        };
        write!(f, "{prefix}:{}", self.id)
    }
}

impl FromStr for Actor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (prefix, id) = s
            .split_once(':')
            .ok_or_else(|| format!("malformed actor label '{s}'"))?;
        let id: u32 = id
            .parse()
            .map_err(|_| format!("malformed actor id in '{s}'"))?;
        let kind = match prefix {
            "gen" => ActorKind::Generator,
            "gens" => ActorKind::GeneratorGroup,
            "shunt" => ActorKind::Shunt,
            "bus" => ActorKind::Bus,
            _ => return Err(format!("unknown actor kind in '{s}'")),
        };
        Ok(Actor { kind, id })
    }
}

/// Row/column addressing for [`EcoFlowMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Actor(usize),
    Input,
    Export,
    Dissipation,
}

pub const INPUT_LABEL: &str = "input";
pub const EXPORT_LABEL: &str = "export";
pub const DISSIPATION_LABEL: &str = "dissipation";

#[derive(Debug, Clone, PartialEq)]
pub struct EcoFlowMatrix {
    pub flow_type: FlowType,
    pub mode: RedundancyMode,
    pub actors: Vec<Actor>,
    /// `(A+3)×(A+3)`; actors first, then input, export, dissipation.
    pub flows: DMatrix<f64>,
}

impl EcoFlowMatrix {
    pub fn zeros(flow_type: FlowType, mode: RedundancyMode, actors: Vec<Actor>) -> Self {
        let n = actors.len() + 3;
        EcoFlowMatrix {
            flow_type,
            mode,
            actors,
            flows: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.actors.len() + 3
    }

    pub fn units(&self) -> &'static str {
        self.flow_type.units()
    }

    pub fn index(&self, node: Node) -> usize {
        let a = self.actors.len();
        match node {
            Node::Actor(i) => i,
            Node::Input => a,
            Node::Export => a + 1,
            Node::Dissipation => a + 2,
        }
    }

    pub fn actor_index(&self, actor: Actor) -> Option<usize> {
        self.actors.iter().position(|&a| a == actor)
    }

    pub fn labels(&self) -> Vec<String> {
        self.actors
            .iter()
            .map(Actor::to_string)
            .chain([INPUT_LABEL, EXPORT_LABEL, DISSIPATION_LABEL].map(String::from))
            .collect()
    }

    pub fn get(&self, from: Node, to: Node) -> f64 {
        self.flows[(self.index(from), self.index(to))]
    }

    /// Entry between two actors, or 0 if either is absent.
    pub fn between(&self, from: Actor, to: Actor) -> f64 {
        match (self.actor_index(from), self.actor_index(to)) {
            (Some(f), Some(t)) => self.flows[(f, t)],
            _ => 0.0,
        }
    }

    fn add(&mut self, from: Node, to: Node, value: f64) {
        debug_assert!(value >= 0.0);
        let (f, t) = (self.index(from), self.index(to));
        self.flows[(f, t)] += value;
    }

    pub fn tstp(&self) -> f64 {
        self.flows.sum()
    }

    pub fn metrics(&self) -> Result<EcoMetrics, MetricsError> {
        metrics::metrics(&self.flows)
    }

    /// Header row and column of labels; the corner cell names flow type and
    /// mode (`real:split`). Values use the shortest exact decimal form.
    pub fn to_csv(&self) -> String {
        let labels = self.labels();
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let corner = format!("{}:{}", self.flow_type, self.mode);
        let header = std::iter::once(corner.as_str()).chain(labels.iter().map(String::as_str));
        wtr.write_record(header).expect("in-memory csv write");
        for (i, label) in labels.iter().enumerate() {
            let row = std::iter::once(label.clone())
                .chain((0..self.dim()).map(|j| format!("{}", self.flows[(i, j)])));
            wtr.write_record(row).expect("in-memory csv write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
    }

    pub fn from_csv(text: &str) -> Result<EcoFlowMatrix, MatrixError> {
        let err = |line: usize, message: String| MatrixError::Csv { line, message };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(text.as_bytes());
        let mut records = rdr.records();
        let header = records
            .next()
            .ok_or_else(|| err(1, "empty input".into()))?
            .map_err(|e| err(1, e.to_string()))?;
        let corner = header.get(0).unwrap_or_default();
        let (flow, mode) = corner
            .split_once(':')
            .ok_or_else(|| err(1, format!("corner cell '{corner}' is not <flow>:<mode>")))?;
        let flow_type: FlowType = flow.parse().map_err(|e| err(1, e))?;
        let mode: RedundancyMode = mode.parse().map_err(|e| err(1, e))?;
        let labels: Vec<&str> = header.iter().skip(1).collect();
        if labels.len() < 3
            || labels[labels.len() - 3..] != [INPUT_LABEL, EXPORT_LABEL, DISSIPATION_LABEL]
        {
            return Err(err(
                1,
                "header must end with input, export, dissipation".into(),
            ));
        }
        let actors = labels[..labels.len() - 3]
            .iter()
            .map(|l| l.parse::<Actor>().map_err(|e| err(1, e)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut m = EcoFlowMatrix::zeros(flow_type, mode, actors);
        let n = m.dim();
        let mut row_count = 0;
        for (i, rec) in records.enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| err(line, e.to_string()))?;
            if i >= n {
                return Err(err(line, "too many rows".into()));
            }
            if rec.get(0) != Some(labels[i]) {
                return Err(err(line, format!("row label must be '{}'", labels[i])));
            }
            if rec.len() != n + 1 {
                return Err(err(
                    line,
                    format!("expected {} cells, got {}", n + 1, rec.len()),
                ));
            }
            for j in 0..n {
                let cell = &rec[j + 1];
                m.flows[(i, j)] = cell
                    .parse()
                    .map_err(|_| err(line, format!("invalid number '{cell}'")))?;
            }
            row_count += 1;
        }
        if row_count != n {
            return Err(err(
                row_count + 2,
                format!("expected {n} rows, got {row_count}"),
            ));
        }
        Ok(m)
    }
}

/// Signed injection of one device into its bus, in matrix units.
fn signed_complex(flow: FlowType, p: f64, q: f64) -> f64 {
    match flow {
        FlowType::Real => p,
        FlowType::Reactive => q,
        FlowType::Apparent => {
            let dir = if p != 0.0 { p } else { q };
            p.hypot(q).copysign(dir)
        }
    }
}

fn place_device(m: &mut EcoFlowMatrix, device: usize, bus: usize, s: f64, sink: Node) {
    if s > 0.0 {
        m.add(Node::Input, Node::Actor(device), s);
        m.add(Node::Actor(device), Node::Actor(bus), s);
    } else if s < 0.0 {
        m.add(Node::Actor(bus), Node::Actor(device), -s);
        m.add(Node::Actor(device), sink, -s);
    }
}

/// Positive amounts leave the bus to `positive`, negative ones arrive from input.
fn place_bus_residual(m: &mut EcoFlowMatrix, bus: usize, amount: f64, positive: Node) {
    if amount > 0.0 {
        m.add(Node::Actor(bus), positive, amount);
    } else if amount < 0.0 {
        m.add(Node::Input, Node::Actor(bus), -amount);
    }
}

fn place_branch(m: &mut EcoFlowMatrix, from: usize, to: usize, a: f64, b: f64) {
    if a > 0.0 && b < 0.0 {
        m.add(Node::Actor(from), Node::Actor(to), a);
        place_bus_residual(m, to, a + b, Node::Dissipation);
    } else if a < 0.0 && b > 0.0 {
        m.add(Node::Actor(to), Node::Actor(from), b);
        place_bus_residual(m, from, a + b, Node::Dissipation);
    } else {
        place_bus_residual(m, from, a, Node::Dissipation);
        place_bus_residual(m, to, b, Node::Dissipation);
    }
}

pub fn build_eco_matrix(
    net: &Network,
    sol: &PowerFlowSolution,
    flow: FlowType,
    mode: RedundancyMode,
) -> Result<EcoFlowMatrix, MatrixError> {
    build_eco_matrix_with(net, sol, flow, mode, &MatrixConventions::default())
}

pub fn build_eco_matrix_with(
    net: &Network,
    sol: &PowerFlowSolution,
    flow: FlowType,
    mode: RedundancyMode,
    conventions: &MatrixConventions,
) -> Result<EcoFlowMatrix, MatrixError> {
    if !sol.converged {
        return Err(MatrixError::Unconverged);
    }
    if sol.buses.is_empty() {
        return Err(MatrixError::EmptyIsland);
    }
    let bus_index = net.bus_index();
    for b in &sol.buses {
        if !bus_index.contains_key(&b.id) {
            return Err(MatrixError::UnknownBus(b.id));
        }
    }

    // Generator actors with their signed (p, q) and bus.
    let mut gen_entries: Vec<(Actor, u32, f64, f64)> = Vec::new();
    match mode {
        RedundancyMode::Split => {
            for g in &sol.generators {
                gen_entries.push((Actor::generator(g.id), g.bus, g.p_out, g.q_out));
            }
        }
        RedundancyMode::Aggregate => {
            let mut by_bus: HashMap<u32, (f64, f64)> = HashMap::new();
            for g in &sol.generators {
                let e = by_bus.entry(g.bus).or_default();
                e.0 += g.p_out;
                e.1 += g.q_out;
            }
            for b in &sol.buses {
                if let Some(&(p, q)) = by_bus.get(&b.id) {
                    gen_entries.push((Actor::generator_group(b.id), b.id, p, q));
                }
            }
        }
    }

    let shunt_buses: Vec<&crate::powerflow::BusSolution> = sol
        .buses
        .iter()
        .filter(|b| {
            let bus = &net.buses[bus_index[&b.id]];
            bus.shunt_g != 0.0 || bus.shunt_b != 0.0
        })
        .collect();

    let mut actors: Vec<Actor> = gen_entries.iter().map(|e| e.0).collect();
    actors.extend(shunt_buses.iter().map(|b| Actor::shunt(b.id)));
    let first_bus = actors.len();
    actors.extend(sol.buses.iter().map(|b| Actor::bus(b.id)));
    let bus_slot: HashMap<u32, usize> = sol
        .buses
        .iter()
        .enumerate()
        .map(|(k, b)| (b.id, first_bus + k))
        .collect();

    let mut m = EcoFlowMatrix::zeros(flow, mode, actors);

    let gen_sink = match conventions.absorbed_reactive {
        AbsorbedReactive::Dissipation => Node::Dissipation,
        AbsorbedReactive::Export => Node::Export,
    };
    for (k, &(_, bus, p, q)) in gen_entries.iter().enumerate() {
        let s = signed_complex(flow, p, q);
        place_device(&mut m, k, bus_slot[&bus], s, gen_sink);
    }

    for (k, b) in shunt_buses.iter().enumerate() {
        let slot = gen_entries.len() + k;
        let bus = bus_slot[&b.id];
        match flow {
            // Shunts are passive for real power: their draw is bus dissipation.
            FlowType::Real => {
                place_bus_residual(&mut m, bus, b.shunt_p_consumed, Node::Dissipation)
            }
            FlowType::Reactive => {
                place_device(&mut m, slot, bus, b.shunt_q_injected, Node::Dissipation)
            }
            FlowType::Apparent => {
                let (p_inj, q_inj) = (-b.shunt_p_consumed, b.shunt_q_injected);
                let dir = if q_inj != 0.0 { q_inj } else { p_inj };
                let s = p_inj.hypot(q_inj).copysign(dir);
                place_device(&mut m, slot, bus, s, Node::Dissipation);
            }
        }
    }

    for b in &sol.buses {
        let bus = &net.buses[bus_index[&b.id]];
        let consumption = match flow {
            FlowType::Real => bus.load_p,
            FlowType::Reactive => bus.load_q,
            FlowType::Apparent => -signed_complex(flow, -bus.load_p, -bus.load_q),
        };
        place_bus_residual(&mut m, bus_slot[&b.id], consumption, Node::Export);
    }

    for f in &sol.branches {
        let (a, b) = match flow {
            FlowType::Real => (f.p_from, f.p_to),
            FlowType::Reactive => (f.q_from, f.q_to),
            FlowType::Apparent => (
                signed_complex(flow, f.p_from, f.q_from),
                signed_complex(flow, f.p_to, f.q_to),
            ),
        };
        place_branch(&mut m, bus_slot[&f.from_bus], bus_slot[&f.to_bus], a, b);
    }

    if flow == FlowType::Apparent {
        for b in &sol.buses {
            let i = bus_slot[&b.id];
            let inflow = m.flows.column(i).sum();
            let outflow = m.flows.row(i).sum();
            place_bus_residual(&mut m, i, inflow - outflow, Node::Dissipation);
        }
    }

    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActorImbalance {
    pub actor: String,
    pub inflow: f64,
    pub outflow: f64,
    pub imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationReport {
    pub tstp: f64,
    pub rel_tol: f64,
    pub actors: Vec<ActorImbalance>,
}

impl ConservationReport {
    pub fn threshold(&self) -> f64 {
        self.rel_tol * self.tstp
    }

    pub fn violations(&self) -> Vec<&ActorImbalance> {
        let limit = self.threshold();
        self.actors.iter().filter(|a| a.imbalance > limit).collect()
    }

    pub fn max_imbalance(&self) -> f64 {
        self.actors.iter().map(|a| a.imbalance).fold(0.0, f64::max)
    }

    pub fn is_balanced(&self) -> bool {
        self.violations().is_empty()
    }
}

pub fn conservation_report(m: &EcoFlowMatrix, rel_tol: f64) -> ConservationReport {
    let actors = m
        .actors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let inflow = m.flows.column(i).sum();
            let outflow = m.flows.row(i).sum();
            ActorImbalance {
                actor: a.to_string(),
                inflow,
                outflow,
                imbalance: (inflow - outflow).abs(),
            }
        })
        .collect();
    ConservationReport {
        tstp: m.tstp(),
        rel_tol,
        actors,
    }
}
