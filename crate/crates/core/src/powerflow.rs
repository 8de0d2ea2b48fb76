//! AC power flow: bus admittance assembly, polar Newton-Raphson and branch
//! flow extraction.
//!
//! Quantities inside the solver are per unit on the network MVA base; the
//! records in [`PowerFlowSolution`] are in MW / Mvar / MVA.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::case::{Branch, BusKind, Network};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("branch {0} is in service with zero series impedance")]
    ZeroImpedance(u32),
    #[error("network has no slack bus")]
    NoSlack,
    #[error("slack buses {0:?} share one island")]
    MultipleSlack(Vec<u32>),
    #[error("slack island has no in-service generator")]
    NoGeneration,
    #[error("Jacobian is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("power flow did not converge after {iterations} iterations (max mismatch {max_mismatch:e} pu)")]
    Diverged {
        iterations: usize,
        max_mismatch: f64,
    },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Bound on the largest nodal mismatch, per unit.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Start from zero angles and unit PQ magnitudes instead of the case values.
    pub flat_start: bool,
    pub enforce_q_limits: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            max_iterations: 30,
            flat_start: true,
            enforce_q_limits: true,
        }
    }
}

impl SolverOptions {
    fn check(&self) -> Result<(), PowerFlowError> {
        if !(self.tolerance > 0.0) {
            return Err(PowerFlowError::InvalidOptions(
                "tolerance must be positive".into(),
            ));
        }
        if self.max_iterations < 1 {
            return Err(PowerFlowError::InvalidOptions(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Sparse bus admittance matrix in per unit, indexed by bus position in
/// `Network::buses`. Each row holds `(column, value)` pairs sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub bus_ids: Vec<u32>,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or_default()
    }

    /// Number of stored (structural) entries.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, y)| y * v[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, y) in row {
                m[(i, j)] = y;
            }
        }
        m
    }
}

/// Two-port admittances of one branch: `[If; It] = [yff yft; ytf ytt] [Vf; Vt]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

pub fn branch_admittance(br: &Branch) -> Result<BranchAdmittance, PowerFlowError> {
    let z = Complex64::new(br.r, br.x);
    if z.norm() == 0.0 {
        return Err(PowerFlowError::ZeroImpedance(br.id));
    }
    let ys = z.inv();
    let tap = Complex64::from_polar(br.effective_tap(), br.phase_shift_deg.to_radians());
    let ytt = ys + Complex64::new(0.0, br.b_charging / 2.0);
    Ok(BranchAdmittance {
        yff: ytt / (tap * tap.conj()),
        yft: -ys / tap.conj(),
        ytf: -ys / tap,
        ytt,
    })
}

pub fn build_admittance(net: &Network) -> Result<AdmittanceMatrix, PowerFlowError> {
    let index = net.bus_index();
    let n = net.buses.len();
    let mut rows: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); n];
    for (i, bus) in net.buses.iter().enumerate() {
        rows[i].insert(i, Complex64::new(bus.shunt_g, bus.shunt_b) / net.base_mva);
    }
    for br in net.in_service_branches() {
        let y = branch_admittance(br)?;
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        *rows[f].entry(f).or_default() += y.yff;
        *rows[f].entry(t).or_default() += y.yft;
        *rows[t].entry(f).or_default() += y.ytf;
        *rows[t].entry(t).or_default() += y.ytt;
    }
    Ok(AdmittanceMatrix {
        bus_ids: net.buses.iter().map(|b| b.id).collect(),
        rows: rows.into_iter().map(|r| r.into_iter().collect()).collect(),
    })
}

/// Bus voltages in polar form, indexed by bus position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoltageState {
    pub magnitude: Vec<f64>,
    /// Radians.
    pub angle: Vec<f64>,
}

impl VoltageState {
    pub fn flat(n: usize) -> Self {
        VoltageState {
            magnitude: vec![1.0; n],
            angle: vec![0.0; n],
        }
    }

    pub fn phasors(&self) -> Vec<Complex64> {
        self.magnitude
            .iter()
            .zip(&self.angle)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }
}

/// Complex power injected into the network at each bus, `V · conj(Y V)`, pu.
pub fn power_injections(ybus: &AdmittanceMatrix, state: &VoltageState) -> Vec<Complex64> {
    let v = state.phasors();
    let i = ybus.mul(&v);
    v.iter().zip(&i).map(|(v, i)| v * i.conj()).collect()
}

/// Derivatives of the calculated injections with respect to bus angles and
/// magnitudes, as dense `(dS/dθ, dS/d|V|)` over all buses of `ybus`.
pub fn injection_derivatives(
    ybus: &AdmittanceMatrix,
    state: &VoltageState,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = ybus.dim();
    let v = state.phasors();
    let vnorm: Vec<Complex64> = state
        .angle
        .iter()
        .map(|&a| Complex64::from_polar(1.0, a))
        .collect();
    let ibus = ybus.mul(&v);
    let j = Complex64::i();
    let mut d_angle = DMatrix::zeros(n, n);
    let mut d_mag = DMatrix::zeros(n, n);
    for i in 0..n {
        for &(k, y) in ybus.row(i) {
            d_angle[(i, k)] += j * v[i] * (-(y * v[k])).conj();
            d_mag[(i, k)] += v[i] * (y * vnorm[k]).conj();
        }
        d_angle[(i, i)] += j * v[i] * ibus[i].conj();
        d_mag[(i, i)] += ibus[i].conj() * vnorm[i];
    }
    (d_angle, d_mag)
}

/// Newton-Raphson Jacobian of the calculated injections, rows `[P(pvpq); Q(pq)]`
/// against columns `[θ(pvpq); |V|(pq)]`.
pub fn jacobian(
    ybus: &AdmittanceMatrix,
    state: &VoltageState,
    pvpq: &[usize],
    pq: &[usize],
) -> DMatrix<f64> {
    let (da, dm) = injection_derivatives(ybus, state);
    let (na, nm) = (pvpq.len(), pq.len());
    let mut jac = DMatrix::zeros(na + nm, na + nm);
    for (r, &i) in pvpq.iter().enumerate() {
        for (c, &k) in pvpq.iter().enumerate() {
            jac[(r, c)] = da[(i, k)].re;
        }
        for (c, &k) in pq.iter().enumerate() {
            jac[(r, na + c)] = dm[(i, k)].re;
        }
    }
    for (r, &i) in pq.iter().enumerate() {
        for (c, &k) in pvpq.iter().enumerate() {
            jac[(na + r, c)] = da[(i, k)].im;
        }
        for (c, &k) in pq.iter().enumerate() {
            jac[(na + r, na + c)] = dm[(i, k)].im;
        }
    }
    jac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BusMismatch {
    pub bus: u32,
    pub p: f64,
    pub q: f64,
}

/// Scheduled minus calculated injection at every bus, per unit, using the
/// dispatched generator outputs stored in the network.
pub fn nodal_mismatch(
    net: &Network,
    state: &VoltageState,
) -> Result<Vec<BusMismatch>, PowerFlowError> {
    let ybus = build_admittance(net)?;
    let calc = power_injections(&ybus, state);
    let sched = scheduled_injections(net);
    Ok(net
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let d = sched[i] - calc[i];
            BusMismatch {
                bus: b.id,
                p: d.re,
                q: d.im,
            }
        })
        .collect())
}

fn scheduled_injections(net: &Network) -> Vec<Complex64> {
    let index = net.bus_index();
    let mut s: Vec<Complex64> = net
        .buses
        .iter()
        .map(|b| -Complex64::new(b.load_p, b.load_q))
        .collect();
    for g in net.in_service_generators() {
        s[index[&g.bus]] += Complex64::new(g.p_out, g.q_out);
    }
    s.iter().map(|x| x / net.base_mva).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchFlow {
    pub id: u32,
    pub from_bus: u32,
    pub to_bus: u32,
    /// Power entering the branch at the from end (MW).
    pub p_from: f64,
    pub q_from: f64,
    /// Power entering the branch at the to end (MW).
    pub p_to: f64,
    pub q_to: f64,
    pub s_from: f64,
    pub s_to: f64,
}

impl BranchFlow {
    pub fn loss_p(&self) -> f64 {
        self.p_from + self.p_to
    }

    pub fn loss_q(&self) -> f64 {
        self.q_from + self.q_to
    }

    pub fn loading(&self) -> f64 {
        self.s_from.max(self.s_to)
    }
}

/// Flows at both ends of every in-service branch for the given voltages.
pub fn branch_flows(
    net: &Network,
    state: &VoltageState,
) -> Result<Vec<BranchFlow>, PowerFlowError> {
    let index = net.bus_index();
    let v = state.phasors();
    net.in_service_branches()
        .map(|br| {
            let y = branch_admittance(br)?;
            let (vf, vt) = (v[index[&br.from_bus]], v[index[&br.to_bus]]);
            let sf = vf * (y.yff * vf + y.yft * vt).conj() * net.base_mva;
            let st = vt * (y.ytf * vf + y.ytt * vt).conj() * net.base_mva;
            Ok(BranchFlow {
                id: br.id,
                from_bus: br.from_bus,
                to_bus: br.to_bus,
                p_from: sf.re,
                q_from: sf.im,
                p_to: st.re,
                q_to: st.im,
                s_from: sf.re.hypot(sf.im),
                s_to: st.re.hypot(st.im),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusSolution {
    pub id: u32,
    pub voltage_magnitude: f64,
    /// Radians.
    pub voltage_angle: f64,
    /// MW drawn by the bus shunt (G·V²).
    pub shunt_p_consumed: f64,
    /// Mvar injected by the bus shunt (B·V²).
    pub shunt_q_injected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorOutput {
    pub id: u32,
    pub bus: u32,
    pub p_out: f64,
    pub q_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFlowSolution {
    pub converged: bool,
    pub iterations: usize,
    /// Largest per-unit mismatch at the final iterate.
    pub max_mismatch: f64,
    pub reference_bus: u32,
    /// Buses switched from PV to PQ by Q-limit enforcement.
    pub pq_switched: Vec<u32>,
    /// Buses outside the slack island; they carry no solution values.
    pub unsolved_buses: Vec<u32>,
    pub buses: Vec<BusSolution>,
    pub generators: Vec<GeneratorOutput>,
    pub branches: Vec<BranchFlow>,
}

impl PowerFlowSolution {
    pub fn bus(&self, id: u32) -> Option<&BusSolution> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn branch(&self, id: u32) -> Option<&BranchFlow> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn generator(&self, id: u32) -> Option<&GeneratorOutput> {
        self.generators.iter().find(|g| g.id == id)
    }

    /// Full voltage state indexed by bus position; unsolved buses get 1∠0.
    pub fn voltage_state(&self, net: &Network) -> VoltageState {
        let mut state = VoltageState::flat(net.buses.len());
        let index = net.bus_index();
        for b in &self.buses {
            let i = index[&b.id];
            state.magnitude[i] = b.voltage_magnitude;
            state.angle[i] = b.voltage_angle;
        }
        state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Reference,
    Pv,
    Pq,
}

/// Island solved by [`solve`]: the component holding the slack bus, with the
/// reference bus actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackIsland {
    pub reference_bus: u32,
    pub buses: Vec<u32>,
}

/// Locates the slack island. When the slack bus has lost all its generators
/// the in-island bus with the largest generation capability becomes the
/// reference.
pub fn slack_island(net: &Network) -> Result<SlackIsland, PowerFlowError> {
    let slacks = net.slack_buses();
    let &slack = slacks.first().ok_or(PowerFlowError::NoSlack)?;
    let islands = net.connected_components();
    let island = islands
        .into_iter()
        .find(|isl| isl.contains(&slack))
        .expect("every bus belongs to an island");
    let in_island: Vec<u32> = slacks
        .iter()
        .copied()
        .filter(|s| island.contains(s))
        .collect();
    if in_island.len() > 1 {
        return Err(PowerFlowError::MultipleSlack(in_island));
    }
    let has_gen = |bus: u32| net.in_service_generators().any(|g| g.bus == bus);
    let reference_bus = if has_gen(slack) {
        slack
    } else {
        let mut best: Option<(u32, f64)> = None;
        for &bus in &island {
            if !has_gen(bus) {
                continue;
            }
            let cap = net.generation_capability(bus);
            if best.is_none_or(|(_, c)| cap > c) {
                best = Some((bus, cap));
            }
        }
        best.ok_or(PowerFlowError::NoGeneration)?.0
    };
    Ok(SlackIsland {
        reference_bus,
        buses: island,
    })
}

struct IslandSystem {
    /// Island bus positions in network order.
    positions: Vec<usize>,
    ybus: AdmittanceMatrix,
    roles: Vec<Role>,
    sched: Vec<Complex64>,
}

impl IslandSystem {
    fn index_sets(&self) -> (Vec<usize>, Vec<usize>) {
        let pvpq = (0..self.roles.len())
            .filter(|&i| self.roles[i] != Role::Reference)
            .collect();
        let pq = (0..self.roles.len())
            .filter(|&i| self.roles[i] == Role::Pq)
            .collect();
        (pvpq, pq)
    }

    fn mismatch(&self, state: &VoltageState, pvpq: &[usize], pq: &[usize]) -> DVector<f64> {
        let calc = power_injections(&self.ybus, state);
        let d: Vec<Complex64> = calc.iter().zip(&self.sched).map(|(c, s)| c - s).collect();
        DVector::from_iterator(
            pvpq.len() + pq.len(),
            pvpq.iter()
                .map(|&i| d[i].re)
                .chain(pq.iter().map(|&i| d[i].im)),
        )
    }
}

fn restrict(full: &AdmittanceMatrix, positions: &[usize]) -> AdmittanceMatrix {
    let local: HashMap<usize, usize> = positions.iter().enumerate().map(|(l, &p)| (p, l)).collect();
    AdmittanceMatrix {
        bus_ids: positions.iter().map(|&p| full.bus_ids[p]).collect(),
        rows: positions
            .iter()
            .map(|&p| {
                full.row(p)
                    .iter()
                    .filter_map(|&(c, y)| local.get(&c).map(|&lc| (lc, y)))
                    .collect()
            })
            .collect(),
    }
}

/// Newton iterations on a fixed bus classification. Returns iterations used.
fn newton(
    sys: &IslandSystem,
    state: &mut VoltageState,
    opts: &SolverOptions,
    iterations_so_far: usize,
) -> Result<(usize, f64), PowerFlowError> {
    let (pvpq, pq) = sys.index_sets();
    let na = pvpq.len();
    let mut f = sys.mismatch(state, &pvpq, &pq);
    let mut norm = f.amax();
    let mut it = 0;
    while !(norm < opts.tolerance) {
        if it >= opts.max_iterations || !norm.is_finite() {
            return Err(PowerFlowError::Diverged {
                iterations: iterations_so_far + it,
                max_mismatch: norm,
            });
        }
        it += 1;
        let jac = jacobian(&sys.ybus, state, &pvpq, &pq);
        let dx = jac
            .lu()
            .solve(&(-&f))
            .ok_or(PowerFlowError::SingularJacobian {
                iteration: iterations_so_far + it,
            })?;
        for (k, &i) in pvpq.iter().enumerate() {
            state.angle[i] += dx[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            state.magnitude[i] += dx[na + k];
        }
        f = sys.mismatch(state, &pvpq, &pq);
        norm = f.amax();
    }
    Ok((it, norm))
}

/// Splits `total` over units in proportion to `weights`; equal shares when the
/// weights are unusable.
fn proportional(total: f64, weights: &[f64]) -> Vec<f64> {
    let sum: f64 = weights.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        weights.iter().map(|w| total * w / sum).collect()
    } else {
        vec![total / weights.len() as f64; weights.len()]
    }
}

pub fn solve(net: &Network, opts: &SolverOptions) -> Result<PowerFlowSolution, PowerFlowError> {
    opts.check()?;
    let island = slack_island(net)?;
    let full = build_admittance(net)?;
    let index = net.bus_index();
    let positions: Vec<usize> = {
        let mut p: Vec<usize> = island.buses.iter().map(|id| index[id]).collect();
        p.sort_unstable();
        p
    };
    let local_of: HashMap<u32, usize> = positions
        .iter()
        .enumerate()
        .map(|(l, &p)| (net.buses[p].id, l))
        .collect();

    let mut gens_at: Vec<Vec<usize>> = vec![Vec::new(); positions.len()];
    for (gi, g) in net.generators.iter().enumerate() {
        if g.in_service {
            if let Some(&l) = local_of.get(&g.bus) {
                gens_at[l].push(gi);
            }
        }
    }

    let roles: Vec<Role> = positions
        .iter()
        .enumerate()
        .map(|(l, &p)| {
            let bus = &net.buses[p];
            if bus.id == island.reference_bus {
                Role::Reference
            } else if matches!(bus.kind, BusKind::Pv | BusKind::Slack) && !gens_at[l].is_empty() {
                Role::Pv
            } else {
                Role::Pq
            }
        })
        .collect();

    let sched_all = scheduled_injections(net);
    let mut sys = IslandSystem {
        ybus: restrict(&full, &positions),
        sched: positions.iter().map(|&p| sched_all[p]).collect(),
        positions,
        roles,
    };

    let n = sys.positions.len();
    let mut state = VoltageState::flat(n);
    for (l, &p) in sys.positions.iter().enumerate() {
        let bus = &net.buses[p];
        if !opts.flat_start {
            state.magnitude[l] = bus.voltage_magnitude_setpoint;
            state.angle[l] = bus.voltage_angle_deg.to_radians();
        }
        if sys.roles[l] != Role::Pq {
            state.magnitude[l] = net.generators[gens_at[l][0]].voltage_setpoint;
        }
    }

    // Q-limit bookkeeping per bus: (sum q_min, sum q_max) in Mvar.
    let q_bounds: Vec<(f64, f64)> = gens_at
        .iter()
        .map(|gs| {
            gs.iter().fold((0.0, 0.0), |(lo, hi), &gi| {
                let g = &net.generators[gi];
                (lo + g.q_min, hi + g.q_max)
            })
        })
        .collect();
    let mut fixed_q: HashMap<usize, f64> = HashMap::new();

    let mut iterations = 0;
    let max_mismatch = loop {
        let (it, norm) = newton(&sys, &mut state, opts, iterations)?;
        iterations += it;
        if !opts.enforce_q_limits {
            break norm;
        }
        let calc = power_injections(&sys.ybus, &state);
        let mut switched = false;
        for l in 0..n {
            if sys.roles[l] != Role::Pv {
                continue;
            }
            let bus = &net.buses[sys.positions[l]];
            let q_gen = calc[l].im * net.base_mva + bus.load_q;
            let (lo, hi) = q_bounds[l];
            let limit = if q_gen > hi + opts.tolerance * net.base_mva {
                hi
            } else if q_gen < lo - opts.tolerance * net.base_mva {
                lo
            } else {
                continue;
            };
            sys.roles[l] = Role::Pq;
            sys.sched[l].im = (limit - bus.load_q) / net.base_mva;
            fixed_q.insert(l, limit);
            switched = true;
        }
        if !switched {
            break norm;
        }
    };

    let calc = power_injections(&sys.ybus, &state);
    let mut generators = Vec::new();
    for (l, gs) in gens_at.iter().enumerate() {
        if gs.is_empty() {
            continue;
        }
        let bus = &net.buses[sys.positions[l]];
        let units: Vec<_> = gs.iter().map(|&gi| &net.generators[gi]).collect();
        let p_outs: Vec<f64> = match sys.roles[l] {
            Role::Reference => {
                let total = calc[l].re * net.base_mva + bus.load_p;
                let dispatched: f64 = units.iter().map(|g| g.p_out).sum();
                let weights: Vec<f64> = units.iter().map(|g| g.p_max.max(0.0)).collect();
                units
                    .iter()
                    .zip(proportional(total - dispatched, &weights))
                    .map(|(g, extra)| g.p_out + extra)
                    .collect()
            }
            _ => units.iter().map(|g| g.p_out).collect(),
        };
        let q_outs: Vec<f64> = if sys.roles[l] == Role::Pq && !fixed_q.contains_key(&l) {
            units.iter().map(|g| g.q_out).collect()
        } else {
            let total = fixed_q
                .get(&l)
                .copied()
                .unwrap_or(calc[l].im * net.base_mva + bus.load_q);
            let lo: f64 = units.iter().map(|g| g.q_min).sum();
            let widths: Vec<f64> = units.iter().map(|g| g.q_max - g.q_min).collect();
            let width_sum: f64 = widths.iter().sum();
            if width_sum > 0.0 && width_sum.is_finite() && lo.is_finite() {
                units
                    .iter()
                    .zip(proportional(total - lo, &widths))
                    .map(|(g, share)| g.q_min + share)
                    .collect()
            } else {
                proportional(total, &vec![1.0; units.len()])
            }
        };
        for ((g, p), q) in units.iter().zip(p_outs).zip(q_outs) {
            generators.push(GeneratorOutput {
                id: g.id,
                bus: g.bus,
                p_out: p,
                q_out: q,
            });
        }
    }
    generators.sort_by_key(|g| g.id);

    let buses: Vec<BusSolution> = sys
        .positions
        .iter()
        .enumerate()
        .map(|(l, &p)| {
            let bus = &net.buses[p];
            let v2 = state.magnitude[l].powi(2);
            BusSolution {
                id: bus.id,
                voltage_magnitude: state.magnitude[l],
                voltage_angle: state.angle[l],
                shunt_p_consumed: bus.shunt_g * v2,
                shunt_q_injected: bus.shunt_b * v2,
            }
        })
        .collect();

    let mut full_state = VoltageState::flat(net.buses.len());
    for (l, &p) in sys.positions.iter().enumerate() {
        full_state.magnitude[p] = state.magnitude[l];
        full_state.angle[p] = state.angle[l];
    }
    let branches: Vec<BranchFlow> = branch_flows(net, &full_state)?
        .into_iter()
        .filter(|f| local_of.contains_key(&f.from_bus))
        .collect();

    let mut pq_switched: Vec<u32> = fixed_q
        .keys()
        .map(|&l| net.buses[sys.positions[l]].id)
        .collect();
    pq_switched.sort_unstable();

    Ok(PowerFlowSolution {
        converged: true,
        iterations,
        max_mismatch,
        reference_bus: island.reference_bus,
        pq_switched,
        unsolved_buses: net
            .buses
            .iter()
            .filter(|b| !local_of.contains_key(&b.id))
            .map(|b| b.id)
            .collect(),
        buses,
        generators,
        branches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::parse_case;
    use approx::assert_relative_eq;

    fn two_bus(r: f64, load: f64) -> Network {
        parse_case(&format!(
            "mpc.baseMVA = 100;\nmpc.bus = [\n\
             1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n\
             2 1 {load} 0 0 0 1 1 0 230 1 1.1 0.9;\n];\n\
             mpc.gen = [1 {load} 0 300 -300 1 100 1 250 0];\n\
             mpc.branch = [1 2 {r} 0.1 0 0 0 0 0 0 1];\n"
        ))
        .unwrap()
    }

    /// Load bus held at 1.0 pu by a zero-output condenser.
    fn two_bus_regulated() -> Network {
        parse_case(
            "mpc.baseMVA = 100;\nmpc.bus = [\n\
             1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n\
             2 2 100 0 0 0 1 1 0 230 1 1.1 0.9;\n];\n\
             mpc.gen = [\n1 100 0 300 -300 1 100 1 250 0;\n2 0 0 300 -300 1 100 1 0 0;\n];\n\
             mpc.branch = [1 2 0 0.1 0 0 0 0 0 0 1];\n",
        )
        .unwrap()
    }

    #[test]
    fn regulated_two_bus_matches_sine_relation() {
        let sol = solve(&two_bus_regulated(), &SolverOptions::default()).unwrap();
        let theta = sol.bus(2).unwrap().voltage_angle;
        assert!((theta + 0.1f64.asin()).abs() < 1e-8);
        let f = sol.branch(1).unwrap();
        assert_relative_eq!(f.p_from, 100.0, epsilon = 1e-6);
        assert_relative_eq!(f.p_to, -100.0, epsilon = 1e-6);
        assert!(f.q_from > 0.0);
    }

    #[test]
    fn single_branch_admittance() {
        let net = two_bus(0.0, 0.0);
        let y = build_admittance(&net).unwrap();
        assert_relative_eq!(y.get(0, 1).im, 10.0, epsilon = 1e-12);
        assert_relative_eq!(y.get(1, 0).im, 10.0, epsilon = 1e-12);
        assert_relative_eq!(y.get(0, 0).im, -10.0, epsilon = 1e-12);
        assert_relative_eq!(y.get(1, 1).im, -10.0, epsilon = 1e-12);
        assert_eq!(y.get(0, 1).re, 0.0);
    }

    #[test]
    fn bus_shunt_adds_to_diagonal() {
        let mut net = two_bus(0.0, 0.0);
        let base = build_admittance(&net).unwrap().get(0, 0);
        net.buses[0].shunt_b = 20.0; // 0.2 pu on 100 MVA
        let with = build_admittance(&net).unwrap().get(0, 0);
        assert_relative_eq!(with.im - base.im, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn zero_impedance_is_rejected() {
        let mut net = two_bus(0.0, 0.0);
        net.branches[0].x = 0.0;
        assert_eq!(
            build_admittance(&net).unwrap_err(),
            PowerFlowError::ZeroImpedance(1)
        );
    }

    #[test]
    fn unloaded_network_is_flat() {
        let sol = solve(&two_bus(0.0, 0.0), &SolverOptions::default()).unwrap();
        assert!(sol.iterations <= 1);
        for b in &sol.buses {
            assert_relative_eq!(b.voltage_magnitude, 1.0, epsilon = 1e-12);
            assert_relative_eq!(b.voltage_angle, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_bus_analytic_angle() {
        let net = two_bus(0.0, 100.0);
        let sol = solve(&net, &SolverOptions::default()).unwrap();
        let theta = sol.bus(2).unwrap().voltage_angle;
        // P = V1 V2 sin(θ)/x with Q balanced by the receiving voltage drop.
        let v2 = sol.bus(2).unwrap().voltage_magnitude;
        assert_relative_eq!(theta, -(0.1f64 / v2).asin(), epsilon = 1e-9);
        let f = sol.branch(1).unwrap();
        assert_relative_eq!(f.p_from, 100.0, epsilon = 1e-6);
        assert_relative_eq!(f.p_from, -f.p_to, epsilon = 1e-9);
        assert!(f.q_from > 0.0);
    }

    #[test]
    fn lossless_and_zero_flow_branches() {
        let net = two_bus(0.0, 0.0);
        let state = VoltageState {
            magnitude: vec![1.0, 1.0],
            angle: vec![0.0, -0.05],
        };
        let f = &branch_flows(&net, &state).unwrap()[0];
        assert_eq!(f.p_from, -f.p_to);
        let flat = &branch_flows(&net, &VoltageState::flat(2)).unwrap()[0];
        assert_eq!(flat.p_from, 0.0);
        assert_eq!(flat.p_to, 0.0);
    }

    #[test]
    fn flat_start_mismatch_is_minus_load() {
        let mut net = two_bus(0.01, 100.0);
        net.generators[0].p_out = 0.0;
        let mm = nodal_mismatch(&net, &VoltageState::flat(2)).unwrap();
        assert_relative_eq!(mm[1].p, -1.0, epsilon = 1e-12);
        assert_relative_eq!(mm[1].q, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn converged_mismatch_below_tolerance() {
        let net = two_bus(0.02, 100.0);
        let sol = solve(&net, &SolverOptions::default()).unwrap();
        let mm = nodal_mismatch(&net, &sol.voltage_state(&net)).unwrap();
        assert!(mm[1].p.abs() < 1e-8 && mm[1].q.abs() < 1e-8);
        assert!(sol.max_mismatch < 1e-8);
    }

    #[test]
    fn q_limit_switches_pv_bus() {
        // Bus 2 holds a PV unit with a tight Q ceiling feeding a reactive load.
        let net = parse_case(
            "mpc.baseMVA = 100;\nmpc.bus = [\n\
             1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n\
             2 2 50 60 0 0 1 1 0 230 1 1.1 0.9;\n];\n\
             mpc.gen = [\n1 0 0 300 -300 1 100 1 250 0;\n2 50 0 10 -10 1.05 100 1 100 0;\n];\n\
             mpc.branch = [1 2 0.01 0.1 0 0 0 0 0 0 1];\n",
        )
        .unwrap();
        let sol = solve(&net, &SolverOptions::default()).unwrap();
        assert_eq!(sol.pq_switched, vec![2]);
        let g = sol.generator(2).unwrap();
        assert_relative_eq!(g.q_out, 10.0, epsilon = 1e-9);
        assert!(sol.bus(2).unwrap().voltage_magnitude < 1.05);

        let no_limits = SolverOptions {
            enforce_q_limits: false,
            ..Default::default()
        };
        let free = solve(&net, &no_limits).unwrap();
        assert!(free.generator(2).unwrap().q_out > 10.0);
    }

    #[test]
    fn divergence_is_reported() {
        // 5 pu across x = 0.1 exceeds the transfer limit of the line.
        let net = two_bus(0.0, 1000.0);
        match solve(&net, &SolverOptions::default()) {
            Err(PowerFlowError::Diverged { .. }) | Err(PowerFlowError::SingularJacobian { .. }) => {
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn options_are_checked() {
        let net = two_bus(0.0, 0.0);
        let bad = SolverOptions {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            solve(&net, &bad),
            Err(PowerFlowError::InvalidOptions(_))
        ));
    }

    #[test]
    fn islanded_buses_are_not_solved() {
        let mut net = two_bus(0.0, 100.0);
        net.branches[0].in_service = false;
        let sol = solve(&net, &SolverOptions::default()).unwrap();
        assert_eq!(sol.unsolved_buses, vec![2]);
        assert_eq!(sol.buses.len(), 1);
        assert!(sol.branches.is_empty());
    }

    #[test]
    fn slack_without_generator_hands_reference_over() {
        let net = parse_case(
            "mpc.baseMVA = 100;\nmpc.bus = [\n\
             1 3 20 0 0 0 1 1 0 230 1 1.1 0.9;\n\
             2 2 50 10 0 0 1 1 0 230 1 1.1 0.9;\n];\n\
             mpc.gen = [\n1 20 0 300 -300 1 100 0 250 0;\n2 30 0 100 -100 1.02 100 1 100 0;\n];\n\
             mpc.branch = [1 2 0.01 0.1 0 0 0 0 0 0 1];\n",
        )
        .unwrap();
        let sol = solve(&net, &SolverOptions::default()).unwrap();
        assert_eq!(sol.reference_bus, 2);
        assert!(sol.generator(2).unwrap().p_out > 70.0);
    }
}
