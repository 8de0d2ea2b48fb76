//! N-x contingency enumeration, evaluation and survivability summaries.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::case::{Network, OutageSet};
use crate::powerflow::{slack_island, solve, PowerFlowSolution, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContingencyError {
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("depth {depth} exceeds the {available} eligible elements")]
    DepthTooLarge { depth: usize, available: usize },
    #[error("no element classes selected")]
    NoClasses,
    #[error("combination count for depth {0} is too large to sample")]
    TooManyCombinations(usize),
    #[error("cap must be at least 1")]
    ZeroCap,
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementClass {
    Branch,
    #[serde(rename = "gen")]
    Generator,
}

impl fmt::Display for ElementClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElementClass::Branch => "branch",
            ElementClass::Generator => "gen",
        })
    }
}

impl FromStr for ElementClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "branch" | "branches" => Ok(ElementClass::Branch),
            "gen" | "gens" | "generator" | "generators" => Ok(ElementClass::Generator),
            other => Err(format!("unknown element class '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContingencySpec {
    pub outage: OutageSet,
}

impl ContingencySpec {
    pub fn depth(&self) -> usize {
        self.outage.depth()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Element {
    Branch(u32),
    Generator(u32),
}

fn eligible(net: &Network, classes: &[ElementClass]) -> Vec<Element> {
    let mut out = Vec::new();
    if classes.contains(&ElementClass::Branch) {
        out.extend(
            net.branches
                .iter()
                .filter(|b| b.in_service)
                .map(|b| Element::Branch(b.id)),
        );
    }
    if classes.contains(&ElementClass::Generator) {
        out.extend(
            net.generators
                .iter()
                .filter(|g| g.in_service)
                .map(|g| Element::Generator(g.id)),
        );
    }
    out
}

fn spec_of(elements: &[Element], picks: &[usize]) -> ContingencySpec {
    let mut outage = OutageSet::new();
    for &i in picks {
        match elements[i] {
            Element::Branch(id) => outage.branch_ids.insert(id),
            Element::Generator(id) => outage.generator_ids.insert(id),
        };
    }
    ContingencySpec { outage }
}

/// `C(n, k)`, or `None` on overflow.
pub fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Combination of rank `rank` in lexicographic order.
fn unrank(n: usize, k: usize, mut rank: u128) -> Vec<usize> {
    let mut picks = Vec::with_capacity(k);
    let mut next = 0;
    for slot in 0..k {
        let mut c = next;
        loop {
            let below = binomial(n - c - 1, k - slot - 1).expect("fits: bounded by total");
            if rank < below {
                break;
            }
            rank -= below;
            c += 1;
        }
        picks.push(c);
        next = c + 1;
    }
    picks
}

fn advance(picks: &mut [usize], n: usize) -> bool {
    let k = picks.len();
    for slot in (0..k).rev() {
        if picks[slot] < n - k + slot {
            picks[slot] += 1;
            for later in slot + 1..k {
                picks[later] = picks[later - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// All `depth`-element outages over the chosen classes in lexicographic
/// order (branches by id, then generators by id). With a cap smaller than
/// the combination count, a uniform sample of `cap` combinations is drawn
/// from a generator seeded with `seed` and returned in lexicographic order.
pub fn enumerate(
    net: &Network,
    depth: usize,
    classes: &[ElementClass],
    cap: Option<usize>,
    seed: u64,
) -> Result<Vec<ContingencySpec>, ContingencyError> {
    if depth == 0 {
        return Err(ContingencyError::ZeroDepth);
    }
    if classes.is_empty() {
        return Err(ContingencyError::NoClasses);
    }
    if cap == Some(0) {
        return Err(ContingencyError::ZeroCap);
    }
    let elements = eligible(net, classes);
    let n = elements.len();
    if depth > n {
        return Err(ContingencyError::DepthTooLarge {
            depth,
            available: n,
        });
    }
    let total = binomial(n, depth).ok_or(ContingencyError::TooManyCombinations(depth))?;
    match cap {
        Some(cap) if (cap as u128) < total => {
            let total =
                usize::try_from(total).map_err(|_| ContingencyError::TooManyCombinations(depth))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(depth as u64);
            let mut ranks = rand::seq::index::sample(&mut rng, total, cap).into_vec();
            ranks.sort_unstable();
            Ok(ranks
                .into_iter()
                .map(|r| spec_of(&elements, &unrank(n, depth, r as u128)))
                .collect())
        }
        _ => {
            let mut out = Vec::with_capacity(total as usize);
            let mut picks: Vec<usize> = (0..depth).collect();
            loop {
                out.push(spec_of(&elements, &picks));
                if !advance(&mut picks, n) {
                    break;
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    VoltageLow,
    VoltageHigh,
    BranchOverload,
    IslandLoadShed,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::VoltageLow => "voltage_low",
            ViolationKind::VoltageHigh => "voltage_high",
            ViolationKind::BranchOverload => "branch_overload",
            ViolationKind::IslandLoadShed => "island_load_shed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Bus id, branch id, or the lowest bus id of a shed island.
    pub element: u32,
    /// Excess beyond the limit: pu for voltages, MVA for overloads, MW of
    /// stranded load for islands.
    pub magnitude: f64,
    /// Magnitude relative to the violated limit; 1 for a fully shed island.
    pub severity: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind, self.element, self.magnitude)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ContingencyStatus {
    Solved,
    Unsolved,
}

impl fmt::Display for ContingencyStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContingencyStatus::Solved => "solved",
            ContingencyStatus::Unsolved => "unsolved",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContingencyResult {
    pub spec: ContingencySpec,
    pub status: ContingencyStatus,
    pub violations: Vec<Violation>,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl ContingencyResult {
    fn unsolved(spec: &ContingencySpec, reason: String) -> Self {
        ContingencyResult {
            spec: spec.clone(),
            status: ContingencyStatus::Unsolved,
            violations: Vec::new(),
            iterations: 0,
            reason: Some(reason),
        }
    }

    pub fn worst_violation(&self) -> Option<&Violation> {
        self.violations
            .iter()
            .max_by(|a, b| a.severity.total_cmp(&b.severity))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EvaluationOptions {
    pub solver: SolverOptions,
    /// Overrides the per-bus voltage band when set.
    pub voltage_limits: Option<(f64, f64)>,
}

fn solve_with_retry(net: &Network, opts: &SolverOptions) -> Result<PowerFlowSolution, String> {
    let warm = SolverOptions {
        flat_start: false,
        ..*opts
    };
    solve(net, &warm).or_else(|_| {
        let flat = SolverOptions {
            flat_start: true,
            ..*opts
        };
        solve(net, &flat).map_err(|e| e.to_string())
    })
}

/// Applies one outage and classifies the outcome. Never fails: invalid or
/// infeasible outages come back as `Unsolved` with a reason.
pub fn evaluate(
    net: &Network,
    spec: &ContingencySpec,
    options: &EvaluationOptions,
) -> ContingencyResult {
    let out = match net.apply_outage(&spec.outage) {
        Ok(n) => n,
        Err(e) => return ContingencyResult::unsolved(spec, e.to_string()),
    };
    let island = match slack_island(&out) {
        Ok(i) => i,
        Err(e) => return ContingencyResult::unsolved(spec, e.to_string()),
    };
    let load: f64 = island
        .buses
        .iter()
        .filter_map(|&b| out.bus(b))
        .map(|b| b.load_p)
        .sum();
    let capability: f64 = island
        .buses
        .iter()
        .map(|&b| out.generation_capability(b))
        .sum();
    if capability < load {
        return ContingencyResult::unsolved(
            spec,
            format!("generation capability {capability} MW below island load {load} MW"),
        );
    }
    let sol = match solve_with_retry(&out, &options.solver) {
        Ok(s) => s,
        Err(e) => return ContingencyResult::unsolved(spec, e),
    };

    let mut violations = Vec::new();
    for b in &sol.buses {
        let bus = out.bus(b.id).expect("solved bus exists");
        let (lo, hi) = options.voltage_limits.unwrap_or((bus.v_min, bus.v_max));
        let v = b.voltage_magnitude;
        if v < lo {
            violations.push(Violation {
                kind: ViolationKind::VoltageLow,
                element: b.id,
                magnitude: lo - v,
                severity: (lo - v) / lo,
            });
        } else if v > hi {
            violations.push(Violation {
                kind: ViolationKind::VoltageHigh,
                element: b.id,
                magnitude: v - hi,
                severity: (v - hi) / hi,
            });
        }
    }
    for f in &sol.branches {
        let rate = out.branch(f.id).map_or(0.0, |b| b.rate_mva);
        let loading = f.loading();
        if rate > 0.0 && loading > rate {
            violations.push(Violation {
                kind: ViolationKind::BranchOverload,
                element: f.id,
                magnitude: loading - rate,
                severity: (loading - rate) / rate,
            });
        }
    }
    for isl in out.connected_components() {
        if isl.contains(&island.reference_bus) {
            continue;
        }
        let shed: f64 = isl
            .iter()
            .filter_map(|&b| out.bus(b))
            .map(|b| b.load_p)
            .sum();
        if shed > 0.0 {
            violations.push(Violation {
                kind: ViolationKind::IslandLoadShed,
                element: *isl.iter().min().expect("islands are nonempty"),
                magnitude: shed,
                severity: 1.0,
            });
        }
    }

    ContingencyResult {
        spec: spec.clone(),
        status: ContingencyStatus::Solved,
        violations,
        iterations: sol.iterations,
        reason: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DepthSummary {
    pub depth: usize,
    pub total: usize,
    /// Violations summed over solved contingencies.
    pub num_violations: usize,
    /// Solved contingencies with at least one violation.
    pub num_violated: usize,
    pub num_unsolved: usize,
    /// True when a capped sample replaced full enumeration.
    pub sampled: bool,
}

impl DepthSummary {
    fn from_results(depth: usize, results: &[ContingencyResult], sampled: bool) -> Self {
        let mut s = DepthSummary {
            depth,
            total: results.len(),
            num_violations: 0,
            num_violated: 0,
            num_unsolved: 0,
            sampled,
        };
        for r in results {
            match r.status {
                ContingencyStatus::Unsolved => s.num_unsolved += 1,
                ContingencyStatus::Solved => {
                    s.num_violations += r.violations.len();
                    s.num_violated += usize::from(!r.violations.is_empty());
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivabilitySettings {
    pub max_depth: usize,
    pub classes: Vec<ElementClass>,
    pub cap: Option<usize>,
    pub seed: u64,
    pub voltage_limits: Option<(f64, f64)>,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivabilityReport {
    pub settings: SurvivabilitySettings,
    pub depths: Vec<DepthSummary>,
    #[serde(skip)]
    pub results: Vec<ContingencyResult>,
}

impl SurvivabilityReport {
    pub const CSV_HEADER: [&'static str; 6] = [
        "depth",
        "outage",
        "status",
        "violations",
        "worst_violation",
        "iterations",
    ];

    /// One row per evaluated contingency.
    pub fn results_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(Self::CSV_HEADER)
            .expect("in-memory csv write");
        for r in &self.results {
            wtr.write_record([
                r.spec.depth().to_string(),
                r.spec.outage.to_string(),
                r.status.to_string(),
                r.violations.len().to_string(),
                r.worst_violation()
                    .map_or(String::new(), Violation::to_string),
                r.iterations.to_string(),
            ])
            .expect("in-memory csv write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
    }
}

/// Runs depths `1..=max_depth`. `jobs` sets the worker count (1 runs on the
/// calling thread); results are identical for any value.
pub fn survivability(
    net: &Network,
    max_depth: usize,
    classes: &[ElementClass],
    options: &EvaluationOptions,
    cap: Option<usize>,
    seed: u64,
    jobs: usize,
) -> Result<SurvivabilityReport, ContingencyError> {
    if max_depth == 0 {
        return Err(ContingencyError::ZeroDepth);
    }
    let mut classes = classes.to_vec();
    classes.sort();
    classes.dedup();
    let pool = if jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| ContingencyError::ThreadPool(e.to_string()))?,
        )
    } else {
        None
    };

    let mut depths = Vec::with_capacity(max_depth);
    let mut results = Vec::new();
    for depth in 1..=max_depth {
        let specs = enumerate(net, depth, &classes, cap, seed)?;
        let full = binomial(eligible(net, &classes).len(), depth).unwrap_or(u128::MAX);
        let run = |s: &ContingencySpec| evaluate(net, s, options);
        let batch: Vec<ContingencyResult> = match &pool {
            Some(p) => p.install(|| specs.par_iter().map(run).collect()),
            None => specs.iter().map(run).collect(),
        };
        depths.push(DepthSummary::from_results(
            depth,
            &batch,
            (specs.len() as u128) < full,
        ));
        results.extend(batch);
    }
    Ok(SurvivabilityReport {
        settings: SurvivabilitySettings {
            max_depth,
            classes,
            cap,
            seed,
            voltage_limits: options.voltage_limits,
            solver: options.solver,
        },
        depths,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::parse_case;

    fn radial() -> Network {
        // 1 (slack) - 2 (50 MW) and a dead-end stub 2 - 3 with no load.
        parse_case(
            "mpc.baseMVA = 100;\nmpc.bus = [\n\
             1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n\
             2 1 50 0 0 0 1 1 0 230 1 1.1 0.9;\n\
             3 1 0 0 0 0 1 1 0 230 1 1.1 0.9;\n];\n\
             mpc.gen = [1 50 0 300 -300 1 100 1 200 0];\n\
             mpc.branch = [\n1 2 0.01 0.1 0 0 0 0 0 0 1;\n2 3 0.01 0.1 0 0 0 0 0 0 1;\n];\n",
        )
        .unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(38, 2), Some(703));
        assert_eq!(binomial(5, 0), Some(1));
        assert_eq!(binomial(3, 4), Some(0));
        assert_eq!(binomial(71, 3), Some(57155));
    }

    #[test]
    fn unrank_matches_iteration() {
        let (n, k) = (7, 3);
        let mut picks: Vec<usize> = (0..k).collect();
        let mut rank = 0u128;
        loop {
            assert_eq!(unrank(n, k, rank), picks);
            rank += 1;
            if !advance(&mut picks, n) {
                break;
            }
        }
        assert_eq!(rank, binomial(n, k).unwrap());
    }

    #[test]
    fn enumerate_order_and_errors() {
        let net = radial();
        let all = enumerate(
            &net,
            1,
            &[ElementClass::Branch, ElementClass::Generator],
            None,
            0,
        )
        .unwrap();
        let labels: Vec<String> = all.iter().map(|s| s.outage.to_string()).collect();
        assert_eq!(labels, ["branch:1", "branch:2", "gen:1"]);
        assert_eq!(
            enumerate(
                &net,
                4,
                &[ElementClass::Branch, ElementClass::Generator],
                None,
                0
            ),
            Err(ContingencyError::DepthTooLarge {
                depth: 4,
                available: 3
            })
        );
        assert_eq!(
            enumerate(&net, 0, &[ElementClass::Branch], None, 0),
            Err(ContingencyError::ZeroDepth)
        );
    }

    #[test]
    fn capped_sample_is_seeded() {
        let net = radial();
        let classes = [ElementClass::Branch, ElementClass::Generator];
        let a = enumerate(&net, 2, &classes, Some(2), 5).unwrap();
        let b = enumerate(&net, 2, &classes, Some(2), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_ne!(a[0], a[1]);
        assert_eq!(enumerate(&net, 2, &classes, Some(10), 5).unwrap().len(), 3);
    }

    #[test]
    fn stub_outage_is_clean() {
        let net = radial();
        let r = evaluate(
            &net,
            &ContingencySpec {
                outage: OutageSet::branches([2]),
            },
            &EvaluationOptions::default(),
        );
        assert_eq!(r.status, ContingencyStatus::Solved);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn stranded_load_is_shed() {
        let net = radial();
        let r = evaluate(
            &net,
            &ContingencySpec {
                outage: OutageSet::branches([1]),
            },
            &EvaluationOptions::default(),
        );
        assert_eq!(r.status, ContingencyStatus::Solved);
        assert_eq!(r.violations.len(), 1);
        let v = &r.violations[0];
        assert_eq!(
            (v.kind, v.element, v.magnitude),
            (ViolationKind::IslandLoadShed, 2, 50.0)
        );
    }

    #[test]
    fn losing_the_only_unit_is_unsolved() {
        let net = radial();
        let r = evaluate(
            &net,
            &ContingencySpec {
                outage: OutageSet::generators([1]),
            },
            &EvaluationOptions::default(),
        );
        assert_eq!(r.status, ContingencyStatus::Unsolved);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn voltage_band_override() {
        let net = radial();
        let tight = EvaluationOptions {
            voltage_limits: Some((0.999, 1.001)),
            ..Default::default()
        };
        let r = evaluate(
            &net,
            &ContingencySpec {
                outage: OutageSet::branches([2]),
            },
            &tight,
        );
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::VoltageLow);
        assert_eq!(r.violations[0].element, 2);
    }

    #[test]
    fn survivability_counts() {
        let net = radial();
        let classes = [ElementClass::Branch, ElementClass::Generator];
        let rep =
            survivability(&net, 2, &classes, &EvaluationOptions::default(), None, 0, 1).unwrap();
        let d1 = rep.depths[0];
        assert_eq!(
            (
                d1.total,
                d1.num_unsolved,
                d1.num_violated,
                d1.num_violations
            ),
            (3, 1, 1, 1)
        );
        assert_eq!(rep.depths[1].total, 3);
        let par =
            survivability(&net, 2, &classes, &EvaluationOptions::default(), None, 0, 3).unwrap();
        assert_eq!(rep, par);
        assert_eq!(rep.results_csv(), par.results_csv());
    }
}
