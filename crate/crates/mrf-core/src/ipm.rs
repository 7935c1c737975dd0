//! Potential-reduction loop for thresholded min-cost circulation.
//!
//! The flow lives partly in a dynamic forest (tree edges) and partly in an
//! explicit vector (off-tree edges). A circulation is applied by adding its
//! off-tree coefficients and pushing each one around its fundamental cycle,
//! which reproduces the tree-edge part exactly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::graph::{Circulation, DynGraph, Edge, EdgeId, Update, VertexId};
use crate::hrg::{hrg_min_ratio, CollectionConfig, HrgParams};
use crate::oracle::{exact_min_ratio, CycleAnswer, OracleError};
use crate::{DynForest, TreeEdge};

#[derive(Debug, Error, PartialEq)]
pub enum IpmError {
    #[error("flow on edge {0} is outside (-δ, u)")]
    InfeasibleFlow(EdgeId),
    #[error("cost already at or below the threshold")]
    ThresholdReached,
    #[error("edge {0} touches its bound")]
    BoundaryContact(EdgeId),
    #[error("oracle failure: {0}")]
    OracleFailure(String),
    #[error("rounding failed: {0}")]
    RoundingFailed(String),
    #[error("step budget of {0} exhausted")]
    StepBudget(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IpmParams {
    /// Total insertion budget.
    pub m: usize,
    pub c_max: f64,
    pub u_max: f64,
    pub threshold: f64,
    pub delta: f64,
    pub alpha: f64,
    pub gamma_approx: f64,
    pub q: f64,
    pub big_gamma: f64,
    pub eps: f64,
}

impl IpmParams {
    pub fn new(m: usize, c_max: f64, u_max: f64, threshold: f64, gamma_approx: f64) -> Self {
        let mf = m.max(1) as f64;
        let c = c_max.max(1.0);
        let u = u_max.max(1.0);
        let alpha = 1.0 / (5000.0 * (mf * c * u).max(4.0).log2());
        let q = alpha / (4.0 * gamma_approx);
        IpmParams {
            m: m.max(1),
            c_max: c,
            u_max: u,
            threshold,
            delta: 1.0 / (20.0 * mf * mf * c),
            alpha,
            gamma_approx,
            q,
            big_gamma: q / 800.0,
            eps: 1.0 / (40.0 * gamma_approx),
        }
    }

    /// ln(mCU), the scale of the potential bounds.
    pub fn log_mcu(&self) -> f64 {
        (self.m as f64 * self.c_max * self.u_max).max(4.0).ln()
    }

    fn barrier(&self, u: f64, f: f64) -> f64 {
        (f + self.delta).powf(-self.alpha) + (u - f).powf(-self.alpha)
    }

    fn length(&self, u: f64, f: f64) -> f64 {
        1.0 / (f + self.delta) + 1.0 / (u - f)
    }

    /// Gradient anchored at residual `r` with current residual `res`.
    fn gradient(&self, u: f64, c: f64, f: f64, r: f64, res: f64) -> f64 {
        let a = self.alpha;
        r / res * (20.0 * self.m as f64 * c / r + a * (u - f).powf(-1.0 - a) - a * (f + self.delta).powf(-1.0 - a))
    }
}

fn check_interior(p: &IpmParams, g: &DynGraph, f: &[f64]) -> Result<(), IpmError> {
    for (e, ed) in g.edges() {
        let x = f[e];
        if !(x > -p.delta && x < ed.capacity) {
            return Err(if x == -p.delta || x == ed.capacity {
                IpmError::BoundaryContact(e)
            } else {
                IpmError::InfeasibleFlow(e)
            });
        }
    }
    Ok(())
}

/// Φ(f) = 20m·ln(cᵀf − F) + Σ (f+δ)^−α + (u−f)^−α.
pub fn potential(p: &IpmParams, g: &DynGraph, f: &[f64]) -> Result<f64, IpmError> {
    check_interior(p, g, f)?;
    let cost: f64 = g.edges().map(|(e, ed)| ed.cost * f[e]).sum();
    if cost <= p.threshold {
        return Err(IpmError::ThresholdReached);
    }
    let bar: f64 = g.edges().map(|(e, ed)| p.barrier(ed.capacity, f[e])).sum();
    Ok(20.0 * p.m as f64 * (cost - p.threshold).ln() + bar)
}

/// Lengths and gradients at `f`, indexed by edge id. With `r = None` the
/// anchor is the current residual cᵀf − F, which gives the exact gradient.
pub fn lengths_gradients(
    p: &IpmParams,
    g: &DynGraph,
    f: &[f64],
    r: Option<f64>,
) -> Result<(Vec<f64>, Vec<f64>), IpmError> {
    check_interior(p, g, f)?;
    let res: f64 = g.edges().map(|(e, ed)| ed.cost * f[e]).sum::<f64>() - p.threshold;
    let r = r.unwrap_or(res);
    let mut len = vec![0.0; g.edge_slots()];
    let mut grad = vec![0.0; g.edge_slots()];
    for (e, ed) in g.edges() {
        len[e] = p.length(ed.capacity, f[e]);
        grad[e] = p.gradient(ed.capacity, ed.cost, f[e], r, res);
    }
    Ok((len, grad))
}

/// A min-ratio cycle source. `target` is the quality the caller needs.
pub trait CycleOracle {
    fn find(&mut self, g: &DynGraph, target: f64) -> Result<Option<CycleAnswer>, OracleError>;
    fn gamma(&self) -> f64 {
        1.0
    }
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Default)]
pub struct ExactOracle;

impl CycleOracle for ExactOracle {
    fn find(&mut self, g: &DynGraph, _target: f64) -> Result<Option<CycleAnswer>, OracleError> {
        match exact_min_ratio(g) {
            Ok(a) => Ok(Some(a)),
            Err(OracleError::NoCycle) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn name(&self) -> &'static str {
        "exact"
    }
}

/// HRG tree-cycle oracle; falls back to the exact oracle when its answer
/// misses the target, so a "none" answer is still a certificate.
#[derive(Debug, Clone, Default)]
pub struct TreeOracle {
    pub params: HrgParams,
    pub cfg: CollectionConfig,
    pub calls: usize,
    pub fallbacks: usize,
}

impl CycleOracle for TreeOracle {
    fn find(&mut self, g: &DynGraph, target: f64) -> Result<Option<CycleAnswer>, OracleError> {
        self.calls += 1;
        if let Ok(a) = hrg_min_ratio(g, self.params, self.cfg) {
            if a.ratio <= target {
                return Ok(Some(a));
            }
        }
        self.fallbacks += 1;
        ExactOracle.find(g, target)
    }

    fn name(&self) -> &'static str {
        "tree"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepMode {
    /// Best Φ along the cycle, never worse than the lemma's step.
    LineSearch,
    /// |g̃ᵀ(ηΔ)| = Γ.
    FixedGamma,
    /// η g̃ᵀΔ = −κ²/50.
    Lemma,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub ratio: f64,
    /// min(|ratio|, 1).
    pub kappa: f64,
    pub eta: f64,
    pub phi_before: f64,
    pub phi_after: f64,
    pub cost: f64,
    pub returned: usize,
    pub rebuild: bool,
    /// Edges of the applied cycle with their coefficients.
    #[serde(skip)]
    pub cycle: Vec<(EdgeId, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepResult {
    Stepped,
    NoGoodCycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RunOutcome {
    /// cᵀf ≤ F + 1/4.
    Feasible,
    /// Exact lengths and gradients, and no cycle of ratio ≤ −q.
    Certified,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IpmStats {
    pub steps: usize,
    pub rebuilds: usize,
    pub returned_edges: usize,
    pub no_good: usize,
    pub insertions: usize,
    pub clipped: usize,
}

/// Termination gap above F; enough for exact rounding with integral costs.
pub const TERMINATION_GAP: f64 = 0.25;

pub struct Ipm<O: CycleOracle> {
    pub params: IpmParams,
    pub mode: StepMode,
    pub oracle: O,
    /// Capacity and cost per edge; length and gradient hold ℓ̃ and g̃.
    g: DynGraph,
    off_flow: Vec<f64>,
    tree: Vec<Option<TreeEdge>>,
    tree_owner: BTreeMap<TreeEdge, EdgeId>,
    forest: DynForest,
    acc: Vec<f64>,
    fbar: Vec<f64>,
    cbar: f64,
    r: f64,
    cost: f64,
    phi: f64,
    /// Upper limit on the flow of any edge a step touches.
    pub flow_cap: Option<f64>,
    pub stats: IpmStats,
    pub trace: Vec<StepReport>,
    pub keep_trace: bool,
    dirty: bool,
}

impl<O: CycleOracle> Ipm<O> {
    pub fn new(params: IpmParams, oracle: O, n: usize) -> Self {
        let mut g = DynGraph::with_vertices(n);
        g.set_journaling(false);
        let mut ipm = Ipm {
            params,
            mode: StepMode::LineSearch,
            oracle,
            g,
            off_flow: Vec::new(),
            tree: Vec::new(),
            tree_owner: BTreeMap::new(),
            forest: DynForest::new(n, params.eps),
            acc: Vec::new(),
            fbar: Vec::new(),
            cbar: 0.0,
            r: -params.threshold,
            cost: 0.0,
            phi: 0.0,
            flow_cap: None,
            stats: IpmStats::default(),
            trace: Vec::new(),
            keep_trace: false,
            dirty: false,
        };
        if !ipm.trivially_feasible() {
            ipm.phi = 20.0 * params.m as f64 * ipm.residual().ln();
        }
        ipm
    }

    /// Starts from a given flow on a copy of `g` (capacity and cost used).
    pub fn with_flow(params: IpmParams, oracle: O, g: &DynGraph, f: &[f64]) -> Result<Self, IpmError> {
        let mut ipm = Ipm::new(params, oracle, g.vertex_count());
        let mut h = g.without_journal();
        h.set_journaling(false);
        ipm.g = h;
        let slots = g.edge_slots();
        ipm.off_flow = (0..slots).map(|e| if g.is_live(e) { f[e] } else { 0.0 }).collect();
        ipm.tree = vec![None; slots];
        ipm.acc = vec![0.0; slots];
        ipm.fbar = ipm.off_flow.clone();
        ipm.full_refresh()?;
        Ok(ipm)
    }

    pub fn graph(&self) -> &DynGraph {
        &self.g
    }

    /// True when the zero flow already meets the threshold.
    pub fn trivially_feasible(&self) -> bool {
        self.params.threshold >= 0.0
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn residual(&self) -> f64 {
        self.cost - self.params.threshold
    }

    /// Residual anchor r.
    pub fn anchor(&self) -> f64 {
        self.r
    }

    /// Common factor r/(cᵀf − F). The graph stores 20m·c/r plus the barrier
    /// term at f̄; g̃ is that times this scale, so its cost term is exact.
    pub fn gradient_scale(&self) -> f64 {
        self.r / self.residual()
    }

    pub fn is_done(&self) -> bool {
        self.cost <= self.params.threshold + TERMINATION_GAP
    }

    /// Maintained potential (exact at refreshes, updated per step).
    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn add_vertex(&mut self) -> Result<VertexId, IpmError> {
        let v = self.g.add_vertex();
        let f = self.flows();
        self.rebuild_forest(&f);
        Ok(v)
    }

    /// Inserts an edge with zero flow; returns its id.
    pub fn insert_edge(&mut self, tail: VertexId, head: VertexId, cap: f64, cost: f64) -> Result<EdgeId, IpmError> {
        let p = self.params;
        let mut edge = Edge::new(tail, head);
        edge.capacity = cap;
        edge.cost = cost;
        edge.length = p.length(cap, 0.0);
        if !self.trivially_feasible() {
            edge.gradient = p.gradient(cap, cost, 0.0, self.r, self.r);
        }
        let e = self.g.add_edge(edge).map_err(|err| IpmError::OracleFailure(err.to_string()))?;
        self.off_flow.push(0.0);
        self.acc.push(0.0);
        self.fbar.push(0.0);
        self.tree.push(None);
        if tail != head && !self.forest.connected(tail, head) {
            let te = self.forest.link(tail, head, 0.0, edge.length).expect("not connected");
            self.tree[e] = Some(te);
            self.tree_owner.insert(te, e);
        }
        self.phi += p.barrier(cap, 0.0);
        self.stats.insertions += 1;
        self.dirty = true;
        Ok(e)
    }

    pub fn flow(&mut self, e: EdgeId) -> f64 {
        match self.tree[e] {
            Some(te) => self.forest.query_flow(te).expect("tree edge"),
            None => self.off_flow[e],
        }
    }

    /// Current flow indexed by edge id.
    pub fn flows(&mut self) -> Vec<f64> {
        (0..self.g.edge_slots()).map(|e| if self.g.is_live(e) { self.flow(e) } else { 0.0 }).collect()
    }

    fn rebuild_forest(&mut self, f: &[f64]) {
        let n = self.g.vertex_count();
        self.forest = DynForest::new(n, self.params.eps);
        self.tree = vec![None; self.g.edge_slots()];
        self.tree_owner.clear();
        for (e, ed) in self.g.edges() {
            self.off_flow[e] = f[e];
            self.acc[e] = 0.0;
            if ed.tail != ed.head && !self.forest.connected(ed.tail, ed.head) {
                let te = self.forest.link(ed.tail, ed.head, ed.gradient, ed.length).expect("not connected");
                self.forest.set_flow(te, f[e]).expect("tree edge");
                self.tree[e] = Some(te);
                self.tree_owner.insert(te, e);
            }
        }
    }

    /// Reads the flow back, re-anchors r and recomputes every ℓ̃ and g̃.
    pub fn full_refresh(&mut self) -> Result<(), IpmError> {
        let p = self.params;
        let f = self.flows();
        check_interior(&p, &self.g, &f)?;
        self.cost = self.g.edges().map(|(e, ed)| ed.cost * f[e]).sum();
        self.stats.rebuilds += 1;
        self.dirty = false;
        if self.cost <= p.threshold {
            return Err(IpmError::ThresholdReached);
        }
        self.r = self.residual();
        self.cbar = self.cost;
        let ids: Vec<EdgeId> = self.g.edges().map(|(e, _)| e).collect();
        for &e in &ids {
            self.fbar[e] = f[e];
            self.sync_edge(e, f[e]);
        }
        self.rebuild_forest(&f);
        self.phi = potential(&p, &self.g, &f)?;
        Ok(())
    }

    fn sync_edge(&mut self, e: EdgeId, fe: f64) {
        let p = self.params;
        let ed = *self.g.edge(e);
        let len = p.length(ed.capacity, fe);
        let grad = p.gradient(ed.capacity, ed.cost, fe, self.r, self.r);
        self.g.apply_update(Update::SetLength { e, length: len }).expect("live edge");
        self.g.apply_update(Update::SetGradient { e, gradient: grad }).expect("live edge");
        if let Some(te) = self.tree[e] {
            self.forest.set_length(te, len).expect("tree edge");
            self.forest.set_gradient(te, grad).expect("tree edge");
        }
    }

    /// Φ change when the flow of the listed edges moves by η·x.
    fn phi_delta(&self, cur: &[(EdgeId, f64, f64)], cd: f64, eta: f64) -> f64 {
        let p = self.params;
        let res = self.residual();
        let new_res = res + eta * cd;
        if new_res <= 0.0 {
            return f64::INFINITY;
        }
        let mut d = 20.0 * p.m as f64 * (new_res / res).ln();
        for &(e, x, fe) in cur {
            let u = self.g.edge(e).capacity;
            let nf = fe + eta * x;
            if !(nf > -p.delta && nf < u) {
                return f64::INFINITY;
            }
            d += p.barrier(u, nf) - p.barrier(u, fe);
        }
        d
    }

    fn choose_eta(&self, cur: &[(EdgeId, f64, f64)], gd: f64, cd: f64, kappa: f64, eta_max: f64) -> f64 {
        let lemma = kappa * kappa / (50.0 * gd.abs());
        let safe = |eta: f64| eta.min(0.5 * eta_max);
        match self.mode {
            StepMode::FixedGamma => safe(self.params.big_gamma / gd.abs()),
            StepMode::Lemma => safe(lemma),
            StepMode::LineSearch => {
                let hi = eta_max * (1.0 - 1e-9);
                let mut cands = vec![safe(lemma)];
                // reaching the threshold ends the run
                if cd < 0.0 {
                    let t = (self.params.threshold + TERMINATION_GAP / 2.0 - self.cost) / cd;
                    if t > 0.0 && t < hi {
                        cands.push(t);
                    }
                }
                let mut x = hi;
                for _ in 0..64 {
                    cands.push(x);
                    x *= 0.5;
                }
                let score = |eta: f64| self.phi_delta(cur, cd, eta);
                let mut best = cands[0];
                let mut best_v = score(best);
                for &c in &cands[1..] {
                    let v = score(c);
                    if v < best_v {
                        best = c;
                        best_v = v;
                    }
                }
                // golden refinement around the best grid point
                let (mut a, mut b) = ((best * 0.5).max(0.0), (best * 2.0).min(hi));
                let phi_g = 0.618_033_988_749_895;
                for _ in 0..40 {
                    let c1 = b - phi_g * (b - a);
                    let c2 = a + phi_g * (b - a);
                    if score(c1) < score(c2) {
                        b = c2;
                    } else {
                        a = c1;
                    }
                }
                let mid = 0.5 * (a + b);
                if score(mid) < best_v {
                    best = mid;
                }
                best
            }
        }
    }

    /// One call to the oracle and, if it is good enough, one step.
    pub fn step(&mut self) -> Result<StepResult, IpmError> {
        let p = self.params;
        let scale = self.gradient_scale();
        let ans = self
            .oracle
            .find(&self.g, -p.q / scale)
            .map_err(|e| IpmError::OracleFailure(e.to_string()))?;
        let Some(mut ans) = ans.filter(|a| a.ratio * scale <= -p.q) else {
            self.stats.no_good += 1;
            return Ok(StepResult::NoGoodCycle);
        };
        ans.ratio *= scale;
        let cycle: Vec<(EdgeId, f64)> = ans.circulation.entries.iter().map(|(&e, &x)| (e, x)).collect();
        let mut cur = Vec::with_capacity(cycle.len());
        let (mut gd, mut cd, mut eta_max) = (0.0, 0.0, f64::INFINITY);
        for &(e, x) in &cycle {
            let fe = self.flow(e);
            let ed = *self.g.edge(e);
            gd += scale * ed.gradient * x;
            cd += ed.cost * x;
            let room = if x > 0.0 {
                let mut r = ed.capacity - fe;
                if let Some(cap) = self.flow_cap {
                    r = r.min(cap - fe);
                }
                r
            } else {
                fe + p.delta
            };
            eta_max = eta_max.min(room / x.abs());
            cur.push((e, x, fe));
        }
        if !(gd < 0.0) || !(eta_max > 0.0) {
            self.stats.no_good += 1;
            return Ok(StepResult::NoGoodCycle);
        }
        let kappa = ans.ratio.abs().min(1.0);
        let eta = self.choose_eta(&cur, gd, cd, kappa, eta_max);
        if eta >= 0.5 * eta_max && self.mode != StepMode::LineSearch {
            self.stats.clipped += 1;
        }
        let dphi = self.phi_delta(&cur, cd, eta);
        if !dphi.is_finite() || dphi >= 0.0 {
            self.stats.no_good += 1;
            return Ok(StepResult::NoGoodCycle);
        }
        let phi_before = self.phi;
        // apply through fundamental cycles of the off-tree edges
        let mut returned: BTreeSet<EdgeId> = BTreeSet::new();
        for &(e, x) in &cycle {
            if self.tree[e].is_some() {
                continue;
            }
            let ed = *self.g.edge(e);
            self.off_flow[e] += eta * x;
            self.forest.add_flow_on_path(ed.head, ed.tail, eta * x).expect("same component");
            self.acc[e] += ed.length * (eta * x).abs();
            if self.acc[e] >= p.eps {
                returned.insert(e);
            }
        }
        for te in self.forest.detect() {
            returned.insert(self.tree_owner[&te]);
        }
        self.cost += eta * cd;
        self.phi += dphi;
        for &(e, _, _) in &cur {
            let fe = self.flow(e);
            if !(fe > -p.delta && fe < self.g.edge(e).capacity) {
                return Err(IpmError::InfeasibleFlow(e));
            }
        }
        let res = self.residual();
        let rebuild = res <= self.r / (1.0 + p.eps) || res >= self.r * (1.0 + p.eps);
        self.stats.steps += 1;
        self.stats.returned_edges += returned.len();
        if rebuild && !self.is_done() {
            self.full_refresh()?;
        } else {
            for &e in &returned {
                let fe = self.flow(e);
                self.cbar += self.g.edge(e).cost * (fe - self.fbar[e]);
                self.fbar[e] = fe;
                self.acc[e] = 0.0;
            }
            for &e in &returned {
                let fe = self.fbar[e];
                self.sync_edge(e, fe);
            }
            self.dirty = true;
        }
        let report = StepReport {
            step: self.stats.steps,
            ratio: ans.ratio,
            kappa,
            eta,
            phi_before,
            phi_after: self.phi,
            cost: self.cost,
            returned: returned.len(),
            rebuild,
            cycle,
        };
        self.trace.push(report);
        if !self.keep_trace && self.trace.len() > 1 {
            self.trace.remove(0);
        }
        Ok(StepResult::Stepped)
    }

    /// Last step's report, if any.
    pub fn last_step(&self) -> Option<&StepReport> {
        self.trace.last()
    }

    /// Steps until the threshold is met or the exact state certifies that no
    /// good cycle exists.
    pub fn run(&mut self, budget: usize) -> Result<RunOutcome, IpmError> {
        if self.trivially_feasible() {
            return Ok(RunOutcome::Feasible);
        }
        let mut used = 0;
        loop {
            if self.is_done() {
                return Ok(RunOutcome::Feasible);
            }
            if used == budget {
                return Err(IpmError::StepBudget(budget));
            }
            used += 1;
            match self.step()? {
                StepResult::Stepped => {}
                StepResult::NoGoodCycle if self.dirty => self.full_refresh()?,
                StepResult::NoGoodCycle => return Ok(RunOutcome::Certified),
            }
        }
    }

    /// Recomputes Φ from the flow.
    pub fn potential_now(&mut self) -> Result<f64, IpmError> {
        let f = self.flows();
        potential(&self.params, &self.g, &f)
    }
}

/// Rounds a near-optimal flow to an integral circulation of no larger cost.
///
/// The flow is moved to fixed point (units of 2⁻³⁰) and its conservation
/// error is pushed along a spanning forest, so everything after that is exact.
/// Negative parts are cancelled along flow paths closing the reversed edge
/// (a cost change of at most m²Cδ), then fractional cycles are pushed in
/// their non-increasing cost direction until one edge becomes integral.
pub fn round_to_exact(g: &DynGraph, f: &[f64], threshold: f64) -> Result<Vec<f64>, IpmError> {
    const SCALE: i64 = 1 << 30;
    let n = g.vertex_count();
    let live: Vec<EdgeId> = g.edges().map(|(e, _)| e).collect();
    let mut x = vec![0i64; g.edge_slots()];
    for &e in &live {
        x[e] = (f[e] * SCALE as f64).round() as i64;
    }
    repair_conservation(g, &live, &mut x);
    // phase A: cancel negative flow
    while let Some(&e) = live.iter().find(|&&e| x[e] < 0) {
        let ed = g.edge(e);
        // arcs carrying flow: positive with orientation, negative against it
        let mut adj: Vec<Vec<(VertexId, EdgeId, f64)>> = vec![Vec::new(); n];
        for &h in &live {
            if h == e || x[h] == 0 {
                continue;
            }
            let hd = g.edge(h);
            if x[h] > 0 {
                adj[hd.tail].push((hd.head, h, 1.0));
            } else {
                adj[hd.head].push((hd.tail, h, -1.0));
            }
        }
        // e carries flow head→tail; close it with a flow path tail→head
        let path = if ed.tail == ed.head {
            Vec::new()
        } else {
            bfs_path(&adj, ed.tail, ed.head)
                .ok_or_else(|| IpmError::RoundingFailed(format!("no flow path closes edge {e}")))?
        };
        let mut theta = -x[e];
        for &(h, _) in &path {
            theta = theta.min(x[h].abs());
        }
        x[e] += theta;
        for &(h, s) in &path {
            x[h] -= s as i64 * theta;
        }
    }
    // phase B: fractional cycles
    loop {
        let frac: Vec<EdgeId> = live.iter().copied().filter(|&e| x[e] % SCALE != 0).collect();
        if frac.is_empty() {
            break;
        }
        let cyc = undirected_cycle(g, &frac)
            .ok_or_else(|| IpmError::RoundingFailed("fractional edges form a forest".into()))?;
        let slope: f64 = cyc.iter().map(|&(e, s)| s * g.edge(e).cost).sum();
        let dir = if slope <= 0.0 { 1 } else { -1 };
        let mut theta = i64::MAX;
        for &(e, s) in &cyc {
            let rem = x[e].rem_euclid(SCALE);
            let room = if dir * s as i64 > 0 { SCALE - rem } else { rem };
            theta = theta.min(room);
        }
        for &(e, s) in &cyc {
            x[e] += dir * s as i64 * theta;
        }
    }
    let out: Vec<f64> = x.iter().map(|&v| (v / SCALE) as f64).collect();
    for (e, ed) in g.edges() {
        if out[e] < 0.0 || out[e] > ed.capacity {
            return Err(IpmError::RoundingFailed(format!("edge {e} out of bounds")));
        }
    }
    let cost: f64 = g.edges().map(|(e, ed)| ed.cost * out[e]).sum();
    if cost > threshold + 1e-9 {
        return Err(IpmError::RoundingFailed(format!("cost {cost} above {threshold}")));
    }
    Ok(out)
}

/// Makes fixed-point flow conserve exactly by routing every vertex's
/// imbalance to the root of its spanning tree. Component totals are always
/// zero, so the roots end balanced.
fn repair_conservation(g: &DynGraph, live: &[EdgeId], x: &mut [i64]) {
    let n = g.vertex_count();
    let mut excess = vec![0i64; n];
    let mut adj: Vec<Vec<(VertexId, EdgeId)>> = vec![Vec::new(); n];
    for &e in live {
        let ed = g.edge(e);
        excess[ed.head] += x[e];
        excess[ed.tail] -= x[e];
        if ed.tail != ed.head {
            adj[ed.tail].push((ed.head, e));
            adj[ed.head].push((ed.tail, e));
        }
    }
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        // BFS order; then settle children before parents
        let mut order = vec![root];
        let mut parent: Vec<Option<(VertexId, EdgeId)>> = vec![None; n];
        let mut i = 0;
        while i < order.len() {
            let v = order[i];
            i += 1;
            for &(w, e) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some((v, e));
                    order.push(w);
                }
            }
        }
        for &v in order.iter().rev() {
            let Some((p, e)) = parent[v] else { continue };
            // send v's excess to p over e
            let d = excess[v];
            if g.edge(e).tail == v {
                x[e] += d;
            } else {
                x[e] -= d;
            }
            excess[p] += d;
            excess[v] = 0;
        }
        debug_assert_eq!(excess[root], 0);
    }
}

fn bfs_path(adj: &[Vec<(VertexId, EdgeId, f64)>], s: VertexId, t: VertexId) -> Option<Vec<(EdgeId, f64)>> {
    let mut prev: Vec<Option<(VertexId, EdgeId, f64)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    seen[s] = true;
    let mut q = VecDeque::from([s]);
    while let Some(v) = q.pop_front() {
        if v == t {
            let mut out = Vec::new();
            let mut z = t;
            while z != s {
                let (p, e, sg) = prev[z].expect("on the tree");
                out.push((e, sg));
                z = p;
            }
            out.reverse();
            return Some(out);
        }
        for &(w, e, sg) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                prev[w] = Some((v, e, sg));
                q.push_back(w);
            }
        }
    }
    None
}

/// Some cycle of the undirected multigraph on `edges`, as signed edges
/// traversed in one direction.
fn undirected_cycle(g: &DynGraph, edges: &[EdgeId]) -> Option<Vec<(EdgeId, f64)>> {
    let n = g.vertex_count();
    let mut adj: Vec<Vec<(VertexId, EdgeId, f64)>> = vec![Vec::new(); n];
    for &e in edges {
        let ed = g.edge(e);
        if ed.tail == ed.head {
            return Some(vec![(e, 1.0)]);
        }
        adj[ed.tail].push((ed.head, e, 1.0));
        adj[ed.head].push((ed.tail, e, -1.0));
    }
    // a spanning forest; the first non-forest edge closes a cycle
    let mut parent: Vec<Option<(VertexId, EdgeId, f64)>> = vec![None; n];
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] || adj[root].is_empty() {
            continue;
        }
        seen[root] = true;
        let mut q = VecDeque::from([root]);
        while let Some(v) = q.pop_front() {
            for &(w, e, s) in &adj[v] {
                if parent[v].is_some_and(|(_, pe, _)| pe == e) {
                    continue;
                }
                if seen[w] {
                    // v→w by e, then back from w to v through the forest
                    let mut cyc = vec![(e, s)];
                    cyc.extend(forest_path(&parent, w, v));
                    return Some(cyc);
                }
                seen[w] = true;
                parent[w] = Some((v, e, s));
                q.push_back(w);
            }
        }
    }
    None
}

/// Signed forest path a→b, given parent links (v's link goes parent→v).
fn forest_path(parent: &[Option<(VertexId, EdgeId, f64)>], a: VertexId, b: VertexId) -> Vec<(EdgeId, f64)> {
    let ancestors = |mut v: VertexId| {
        let mut out = vec![v];
        while let Some((p, _, _)) = parent[v] {
            out.push(p);
            v = p;
        }
        out
    };
    let up_a = ancestors(a);
    let up_b = ancestors(b);
    let on_b: BTreeSet<VertexId> = up_b.iter().copied().collect();
    let lca = *up_a.iter().find(|v| on_b.contains(v)).expect("same tree");
    let mut path = Vec::new();
    let mut v = a;
    while v != lca {
        let (p, e, s) = parent[v].expect("below lca");
        path.push((e, -s));
        v = p;
    }
    let mut down = Vec::new();
    let mut v = b;
    while v != lca {
        let (p, e, s) = parent[v].expect("below lca");
        down.push((e, s));
        v = p;
    }
    down.reverse();
    path.extend(down);
    path
}

/// Cost of a flow vector over live edges.
pub fn flow_cost(g: &DynGraph, f: &[f64]) -> f64 {
    g.edges().map(|(e, ed)| ed.cost * f[e]).sum()
}

/// Conservation and bounds check for an integral witness.
pub fn check_witness(g: &DynGraph, f: &[f64]) -> Result<(), String> {
    let mut c = Circulation::new();
    for (e, ed) in g.edges() {
        if f[e] < 0.0 || f[e] > ed.capacity {
            return Err(format!("edge {e} out of bounds"));
        }
        c.add(e, f[e]);
    }
    match crate::graph::circulation_check(g, &c) {
        Ok(None) => Ok(()),
        Ok(Some(v)) => Err(format!("conservation fails at {v}")),
        Err(e) => Err(e.to_string()),
    }
}
