//! Thresholded min-cost flow and the applications built on it.

use mrf_core::ipm::{
    check_witness, flow_cost, round_to_exact, CycleOracle, ExactOracle, Ipm, IpmError, IpmParams, RunOutcome,
    StepMode, StepResult, TreeOracle,
};
use mrf_core::stream::Record;
use mrf_core::graph::Update;
use mrf_core::spanner::DynamicSpanner;
use mrf_core::{Dsu, DynGraph, Edge};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

use crate::baseline::{CycleCanceling, FlowEdge};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AppError {
    #[error("stream is exhausted and no flow of cost ≤ F exists")]
    NeverFeasible,
    #[error("deletions are not supported by incremental applications")]
    Deletion,
    #[error("record references unknown vertex {0}")]
    UnknownVertex(usize),
    #[error(transparent)]
    Ipm(#[from] IpmError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OracleKind {
    Exact,
    Tree,
}

impl OracleKind {
    /// Exact up to 64 vertices, tree pipeline above.
    pub fn auto(n: usize) -> Self {
        if n <= 64 {
            OracleKind::Exact
        } else {
            OracleKind::Tree
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub oracle: OracleKind,
    pub mode: StepMode,
    /// Steps allowed per insertion before giving up.
    pub budget: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { oracle: OracleKind::Exact, mode: StepMode::LineSearch, budget: 100_000 }
    }
}

/// Where the observer is called from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Right after an edge insertion, with the edge's zero flow in place.
    Inserted { index: usize },
    BeforeStep { index: usize },
    AfterStep { index: usize },
}

/// Boxed oracle so the apps are not generic over it.
pub struct AnyOracle(Box<dyn CycleOracle>);

impl CycleOracle for AnyOracle {
    fn find(
        &mut self,
        g: &DynGraph,
        target: f64,
    ) -> Result<Option<mrf_core::oracle::CycleAnswer>, mrf_core::oracle::OracleError> {
        self.0.find(g, target)
    }

    fn name(&self) -> &'static str {
        self.0.name()
    }
}

impl AnyOracle {
    pub fn new(kind: OracleKind) -> Self {
        match kind {
            OracleKind::Exact => AnyOracle(Box::new(ExactOracle)),
            OracleKind::Tree => AnyOracle(Box::new(TreeOracle::default())),
        }
    }
}

pub type AppIpm = Ipm<AnyOracle>;

/// m, C and U of a stream.
pub fn stream_scale(records: &[Record]) -> (usize, f64, f64) {
    let mut m = 0;
    let (mut c, mut u) = (1.0f64, 1.0f64);
    for r in records {
        if let Record::Edge { cap, cost, .. } = *r {
            m += 1;
            c = c.max(cost.abs());
            u = u.max(cap);
        }
    }
    (m, c, u)
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdOutcome {
    /// Number of edge insertions after which a flow of cost ≤ F first exists.
    pub index: usize,
    /// Integral witness per edge id of the graph at that point.
    pub witness: Vec<f64>,
    pub witness_cost: f64,
    pub steps: usize,
    pub rebuilds: usize,
}

/// Runs the loop over a stream until the threshold becomes feasible.
pub fn thresholded_mincost(records: &[Record], threshold: f64, cfg: RunConfig) -> Result<ThresholdOutcome, AppError> {
    thresholded_mincost_observed(records, threshold, cfg, &mut |_, _| {})
}

pub fn thresholded_mincost_observed(
    records: &[Record],
    threshold: f64,
    cfg: RunConfig,
    obs: &mut dyn FnMut(Phase, &mut AppIpm),
) -> Result<ThresholdOutcome, AppError> {
    // integral costs: cost ≤ F iff cost ≤ ⌊F⌋, and the stopping gap needs integral F
    let threshold = threshold.floor();
    let (m, c, u) = stream_scale(records);
    let params = IpmParams::new(m, c, u, threshold, 1.0);
    let mut ipm = Ipm::new(params, AnyOracle::new(cfg.oracle), 0);
    ipm.mode = cfg.mode;
    if ipm.trivially_feasible() {
        return Ok(finish(&mut ipm, 0, threshold)?);
    }
    if threshold < -(m as f64) * c * u {
        return Err(AppError::NeverFeasible);
    }
    let mut index = 0;
    for r in records {
        match *r {
            Record::Vertex => {
                ipm.add_vertex()?;
            }
            Record::Query => {}
            Record::Delete(_) => return Err(AppError::Deletion),
            Record::Edge { tail, head, cap, cost } => {
                let n = ipm.graph().vertex_count();
                for v in [tail, head] {
                    if v >= n {
                        return Err(AppError::UnknownVertex(v));
                    }
                }
                ipm.insert_edge(tail, head, cap, cost)?;
                index += 1;
                obs(Phase::Inserted { index }, &mut ipm);
                if drive(&mut ipm, index, cfg.budget, obs)? == RunOutcome::Feasible {
                    return finish(&mut ipm, index, threshold);
                }
            }
        }
    }
    Err(AppError::NeverFeasible)
}

/// The run loop of the potential method with an observer around each step.
pub fn drive(
    ipm: &mut AppIpm,
    index: usize,
    budget: usize,
    obs: &mut dyn FnMut(Phase, &mut AppIpm),
) -> Result<RunOutcome, AppError> {
    let mut used = 0;
    let mut refreshed = false;
    loop {
        if ipm.is_done() {
            return Ok(RunOutcome::Feasible);
        }
        if used == budget {
            return Err(IpmError::StepBudget(budget).into());
        }
        used += 1;
        obs(Phase::BeforeStep { index }, ipm);
        match ipm.step()? {
            StepResult::Stepped => {
                refreshed = false;
                obs(Phase::AfterStep { index }, ipm);
            }
            StepResult::NoGoodCycle if refreshed => return Ok(RunOutcome::Certified),
            StepResult::NoGoodCycle => {
                ipm.full_refresh()?;
                refreshed = true;
            }
        }
    }
}

fn finish(ipm: &mut AppIpm, index: usize, threshold: f64) -> Result<ThresholdOutcome, AppError> {
    let f = ipm.flows();
    let g = ipm.graph().clone();
    let witness = round_to_exact(&g, &f, threshold)?;
    check_witness(&g, &witness).map_err(AppError::Invariant)?;
    Ok(ThresholdOutcome {
        index,
        witness_cost: flow_cost(&g, &witness),
        witness,
        steps: ipm.stats.steps,
        rebuilds: ipm.stats.rebuilds,
    })
}

/// First insertion after which the graph has a directed cycle: capacity 1,
/// cost −1 and threshold −1.
pub fn cycle_detect(records: &[Record], cfg: RunConfig) -> Result<Option<usize>, AppError> {
    let unit: Vec<Record> = records
        .iter()
        .map(|r| match *r {
            Record::Edge { tail, head, .. } => Record::Edge { tail, head, cap: 1.0, cost: -1.0 },
            other => other,
        })
        .collect();
    match thresholded_mincost(&unit, -1.0, cfg) {
        Ok(out) => Ok(Some(out.index)),
        Err(AppError::NeverFeasible) => Ok(None),
        Err(e) => Err(e),
    }
}

/// One round of contractions: the original ids of the edges that triggered
/// it, how many edges became self-loops and were dropped, and the rise of Φ.
#[derive(Debug, Clone, Serialize)]
pub struct Contraction {
    pub edges: Vec<usize>,
    pub removed: usize,
    pub phi_increase: f64,
}

/// Strongly connected components of an insertion stream, maintained by running
/// the potential method with cost −1 and threshold −1 and contracting every
/// edge whose flow reaches 1/(10m).
pub struct SccTracker {
    m: usize,
    cfg: RunConfig,
    dsu: Dsu,
    ipm: AppIpm,
    /// Original edge id of each edge in the contracted graph.
    orig: Vec<usize>,
    edges_seen: usize,
    pub contractions: Vec<Contraction>,
    /// Largest flow seen on an uncontracted edge after a step.
    pub max_uncontracted: f64,
}

impl SccTracker {
    /// `m` is the insertion budget; it fixes δ, α and the 1/(10m) trigger.
    pub fn new(m: usize, cfg: RunConfig) -> Self {
        let m = m.max(1);
        SccTracker {
            m,
            cfg,
            dsu: Dsu::new(0),
            ipm: Self::fresh(m, cfg, &DynGraph::new(), &[]),
            orig: Vec::new(),
            edges_seen: 0,
            contractions: Vec::new(),
            max_uncontracted: 0.0,
        }
    }

    fn fresh(m: usize, cfg: RunConfig, g: &DynGraph, f: &[f64]) -> AppIpm {
        let params = IpmParams::new(m, 1.0, 1.0, -1.0, 1.0);
        let mut ipm = Ipm::with_flow(params, AnyOracle::new(cfg.oracle), g, f).expect("flow inside bounds");
        ipm.mode = cfg.mode;
        ipm.flow_cap = Some(1.0 / (5.0 * m as f64));
        ipm
    }

    pub fn ipm(&mut self) -> &mut AppIpm {
        &mut self.ipm
    }

    pub fn vertex_count(&self) -> usize {
        self.ipm.graph().vertex_count()
    }

    pub fn add_vertex(&mut self) -> usize {
        self.dsu.push();
        self.ipm.add_vertex().expect("vertex insertion")
    }

    /// Inserts a→b and runs until no good cycle is left.
    pub fn insert(&mut self, a: usize, b: usize) -> Result<(), AppError> {
        let n = self.vertex_count();
        for v in [a, b] {
            if v >= n {
                return Err(AppError::UnknownVertex(v));
            }
        }
        let id = self.edges_seen;
        self.edges_seen += 1;
        let (ra, rb) = (self.dsu.find(a), self.dsu.find(b));
        if ra == rb {
            return Ok(());
        }
        self.ipm.insert_edge(ra, rb, 1.0, -1.0)?;
        self.orig.push(id);
        let mut refreshed = false;
        for _ in 0..self.cfg.budget {
            match self.ipm.step()? {
                StepResult::Stepped => {
                    refreshed = false;
                    self.contract()?;
                }
                StepResult::NoGoodCycle if refreshed => return Ok(()),
                StepResult::NoGoodCycle => {
                    self.ipm.full_refresh()?;
                    refreshed = true;
                }
            }
        }
        Err(IpmError::StepBudget(self.cfg.budget).into())
    }

    fn contract(&mut self) -> Result<(), AppError> {
        let trigger = 1.0 / (10.0 * self.m as f64);
        let f = self.ipm.flows();
        let g = self.ipm.graph().clone();
        let mut hit = Vec::new();
        for (e, ed) in g.edges() {
            if f[e] >= trigger {
                hit.push(e);
                self.dsu.union(ed.tail, ed.head);
            } else {
                self.max_uncontracted = self.max_uncontracted.max(f[e]);
            }
        }
        if hit.is_empty() {
            return Ok(());
        }
        let phi_before = self.ipm.potential_now()?;
        let mut h = DynGraph::with_vertices(g.vertex_count());
        let (mut hf, mut orig) = (Vec::new(), Vec::new());
        for (e, ed) in g.edges() {
            let (a, b) = (self.dsu.find(ed.tail), self.dsu.find(ed.head));
            if a == b {
                continue;
            }
            let mut ne = ed.clone();
            ne.tail = a;
            ne.head = b;
            h.add_edge(ne).map_err(|err| AppError::Invariant(err.to_string()))?;
            hf.push(f[e]);
            orig.push(self.orig[e]);
        }
        self.ipm = Self::fresh(self.m, self.cfg, &h, &hf);
        let rise = self.ipm.potential_now()? - phi_before;
        self.contractions.push(Contraction {
            edges: hit.iter().map(|&e| self.orig[e]).collect(),
            removed: g.live_edge_count() - h.live_edge_count(),
            phi_increase: rise,
        });
        self.orig = orig;
        Ok(())
    }

    /// Component label per vertex: its smallest member.
    pub fn labels(&mut self) -> Vec<usize> {
        let n = self.vertex_count();
        let mut min = vec![usize::MAX; n];
        for v in 0..n {
            let r = self.dsu.find(v);
            min[r] = min[r].min(v);
        }
        (0..n).map(|v| min[self.dsu.find(v)]).collect()
    }
}

/// Labels after each edge insertion of the stream.
pub fn scc_maintain(records: &[Record], cfg: RunConfig) -> Result<Vec<Vec<usize>>, AppError> {
    let (m, _, _) = stream_scale(records);
    let mut t = SccTracker::new(m, cfg);
    let mut out = Vec::new();
    for r in records {
        match *r {
            Record::Vertex => {
                t.add_vertex();
            }
            Record::Edge { tail, head, .. } => {
                t.insert(tail, head)?;
                out.push(t.labels());
            }
            Record::Delete(_) => return Err(AppError::Deletion),
            Record::Query => {}
        }
    }
    Ok(out)
}

/// Value of an approximate flow after one insertion.
#[derive(Debug, Clone, Serialize)]
pub struct ApproxPoint {
    pub index: usize,
    /// Cost of the integral witness, None while d units do not fit.
    pub cost: Option<f64>,
    /// Threshold level the witness was found at.
    pub level: Option<u32>,
}

/// Maintains a flow of `demand` units s→t whose cost is within 1+ε of optimal
/// over a stream with positive integral costs.
///
/// Thresholds are (1+ε)^i, capped at mCU. A d-flow of cost ≤ T exists iff the
/// graph plus a return edge t→s of capacity d and cost −M, M = mCU + 1, has a
/// circulation of cost ≤ T − M·d. The current level only moves down, and each
/// insertion probes the levels below it until one is certified infeasible.
pub struct ApproxFlow {
    pub s: usize,
    pub t: usize,
    pub demand: f64,
    pub eps: f64,
    cfg: RunConfig,
    prefix: Vec<Record>,
    level: Option<u32>,
    witness_cost: Option<f64>,
    pub runs: usize,
}

impl ApproxFlow {
    pub fn new(s: usize, t: usize, demand: f64, eps: f64, cfg: RunConfig) -> Self {
        ApproxFlow { s, t, demand, eps, cfg, prefix: Vec::new(), level: None, witness_cost: None, runs: 0 }
    }

    fn top(&self) -> f64 {
        let (m, c, u) = stream_scale(&self.prefix);
        m as f64 * c * u.max(self.demand)
    }

    fn threshold(&self, i: u32) -> f64 {
        (1.0 + self.eps).powi(i as i32).min(self.top())
    }

    /// Smallest level whose threshold reaches the top.
    fn top_level(&self) -> u32 {
        let top = self.top().max(1.0);
        let mut i = 0;
        while (1.0 + self.eps).powi(i as i32) < top {
            i += 1;
        }
        i
    }

    /// Witness cost of a d-flow with cost ≤ T, if one exists.
    fn probe(&mut self, t: f64) -> Result<Option<f64>, AppError> {
        self.runs += 1;
        let (m, c, u) = stream_scale(&self.prefix);
        let u = u.max(self.demand);
        let big = m as f64 * c * u + 1.0;
        let mut recs = self.prefix.clone();
        recs.push(Record::Edge { tail: self.t, head: self.s, cap: self.demand, cost: -big });
        let f = t - big * self.demand;
        match thresholded_all(&recs, f, self.cfg) {
            Ok(out) => Ok(Some(out.witness_cost + big * self.demand)),
            Err(AppError::NeverFeasible) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn push(&mut self, r: Record) -> Result<Option<ApproxPoint>, AppError> {
        if let Record::Edge { cost, .. } = r {
            if !(cost >= 1.0) {
                return Err(AppError::Invariant(format!("approximate flow needs positive costs, got {cost}")));
            }
        }
        if matches!(r, Record::Delete(_)) {
            return Err(AppError::Deletion);
        }
        let is_edge = matches!(r, Record::Edge { .. });
        self.prefix.push(r);
        if !is_edge {
            return Ok(None);
        }
        let n = self.prefix.iter().filter(|r| matches!(r, Record::Vertex)).count();
        if self.s >= n || self.t >= n {
            return Err(AppError::UnknownVertex(self.s.max(self.t)));
        }
        if self.level.is_none() {
            let top = self.top_level();
            if let Some(w) = self.probe(self.threshold(top))? {
                self.level = Some(top);
                self.witness_cost = Some(w);
            }
        }
        while let Some(i) = self.level.filter(|&i| i > 0) {
            match self.probe(self.threshold(i - 1))? {
                Some(w) => {
                    self.level = Some(i - 1);
                    self.witness_cost = Some(w);
                }
                None => break,
            }
        }
        let index = self.prefix.iter().filter(|r| matches!(r, Record::Edge { .. })).count();
        Ok(Some(ApproxPoint { index, cost: self.witness_cost, level: self.level }))
    }
}

/// Feasibility of the whole stream at threshold F: all edges are inserted
/// before the loop runs.
fn thresholded_all(records: &[Record], threshold: f64, cfg: RunConfig) -> Result<ThresholdOutcome, AppError> {
    let threshold = threshold.floor();
    let (m, c, u) = stream_scale(records);
    if threshold < -(m as f64) * c * u {
        return Err(AppError::NeverFeasible);
    }
    let params = IpmParams::new(m, c, u, threshold, 1.0);
    let mut ipm = Ipm::new(params, AnyOracle::new(cfg.oracle), 0);
    ipm.mode = cfg.mode;
    let mut index = 0;
    for r in records {
        match *r {
            Record::Vertex => {
                ipm.add_vertex()?;
            }
            Record::Edge { tail, head, cap, cost } => {
                ipm.insert_edge(tail, head, cap, cost)?;
                index += 1;
            }
            _ => {}
        }
    }
    if ipm.trivially_feasible() || drive(&mut ipm, index, cfg.budget, &mut |_, _| {})? == RunOutcome::Feasible {
        finish(&mut ipm, index, threshold)
    } else {
        Err(AppError::NeverFeasible)
    }
}

pub fn approx_mincost(
    records: &[Record],
    s: usize,
    t: usize,
    demand: f64,
    eps: f64,
    cfg: RunConfig,
) -> Result<Vec<ApproxPoint>, AppError> {
    let mut a = ApproxFlow::new(s, t, demand, eps, cfg);
    let mut out = Vec::new();
    for &r in records {
        if let Some(p) = a.push(r)? {
            out.push(p);
        }
    }
    Ok(out)
}

/// (1+ε)-approximate s→t distance after each insertion: one unit of demand
/// over unit capacities, lengths as costs.
pub fn st_shortest_path(
    records: &[Record],
    s: usize,
    t: usize,
    eps: f64,
    cfg: RunConfig,
) -> Result<Vec<ApproxPoint>, AppError> {
    let unit: Vec<Record> = records
        .iter()
        .map(|r| match *r {
            Record::Edge { tail, head, cost, .. } => Record::Edge { tail, head, cap: 1.0, cost },
            other => other,
        })
        .collect();
    approx_mincost(&unit, s, t, 1.0, eps, cfg)
}

/// One line of the spanner replay.
#[derive(Debug, Clone, Serialize)]
pub struct SpannerPoint {
    pub step: usize,
    pub h_size: usize,
    pub recourse: usize,
    /// Largest embedding stretch among edges outside H.
    pub gamma_meas: f64,
    pub max_congestion: usize,
    pub rebuilds: usize,
}

/// Replays a stream into the dynamic spanner. Vertex records must precede the
/// edges using them; Δ defaults to the largest degree the stream reaches.
pub fn spanner_sim(records: &[Record], delta: Option<usize>) -> Result<Vec<SpannerPoint>, AppError> {
    let n = records.iter().filter(|r| matches!(r, Record::Vertex)).count();
    let mut deg = vec![0usize; n];
    let mut peak = 1;
    for r in records {
        if let Record::Edge { tail, head, .. } = *r {
            for v in [tail, head] {
                if v >= n {
                    return Err(AppError::UnknownVertex(v));
                }
                deg[v] += 1;
                peak = peak.max(deg[v]);
            }
        }
    }
    let mut g = DynGraph::with_vertices(n);
    g.set_journaling(false);
    let mut sp = DynamicSpanner::new(n, delta.unwrap_or(peak));
    let mut out = Vec::new();
    let bad = |e: mrf_core::spanner::SpannerError| AppError::Invariant(e.to_string());
    for r in records {
        match *r {
            Record::Vertex | Record::Query => continue,
            Record::Edge { tail, head, .. } => {
                let e = g.add_edge(Edge::new(tail, head)).map_err(|e| AppError::Invariant(e.to_string()))?;
                sp.insert(e, tail, head).map_err(bad)?;
            }
            Record::Delete(e) => {
                g.apply_update(Update::DeleteEdge(e)).map_err(|e| AppError::Invariant(e.to_string()))?;
                sp.delete(e).map_err(bad)?;
            }
        }
        let mut gamma: f64 = 1.0;
        for (e, se) in &sp.inner.edges {
            if let Some(p) = &se.embed {
                let len: f64 = p.iter().map(|&(x, _)| g.edge(x).length).sum();
                gamma = gamma.max(len / g.edge(*e).length);
            }
        }
        out.push(SpannerPoint {
            step: out.len() + 1,
            h_size: sp.inner.h_edges().len(),
            recourse: sp.inner.stats.recourse + sp.rebuild_recourse,
            gamma_meas: gamma,
            max_congestion: sp.inner.vertex_congestion().into_iter().max().unwrap_or(0),
            rebuilds: sp.rebuilds,
        });
    }
    Ok(out)
}

/// Random instance in the shape used by the tests and the bench: n vertices
/// then m edges with capacities in [1,u] and costs in [−c,c].
pub fn random_stream(rng: &mut impl Rng, n: usize, m: usize, u: i64, c: i64) -> Vec<Record> {
    let mut recs = vec![Record::Vertex; n];
    for _ in 0..m {
        recs.push(Record::Edge {
            tail: rng.gen_range(0..n),
            head: rng.gen_range(0..n),
            cap: rng.gen_range(1..=u) as f64,
            cost: rng.gen_range(-c..=c) as f64,
        });
    }
    recs
}

/// First index at which the cancelling baseline reaches cost ≤ F.
pub fn baseline_first_feasible(records: &[Record], threshold: f64) -> Option<usize> {
    if threshold >= 0.0 {
        return Some(0);
    }
    let mut cc = CycleCanceling::new(0);
    let mut index = 0;
    for r in records {
        match *r {
            Record::Vertex => {
                cc.add_vertex();
            }
            Record::Edge { tail, head, cap, cost } => {
                index += 1;
                cc.add_edge(FlowEdge { tail, head, cap: cap as i64, cost: cost as i64 });
                if cc.optimize() as f64 <= threshold {
                    return Some(index);
                }
            }
            _ => {}
        }
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub instance: usize,
    pub n: usize,
    pub m: usize,
    pub threshold: f64,
    pub index: Option<usize>,
    pub baseline: Option<usize>,
    pub steps: usize,
    pub ipm_ms: f64,
    pub baseline_ms: f64,
}

/// Thresholded flow against the cancelling baseline on random instances.
pub fn bench(seed: u64, instances: usize, cfg: RunConfig) -> Result<Vec<BenchRow>, AppError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for k in 0..instances {
        let n = rng.gen_range(2..=30);
        let m = rng.gen_range(1..=80);
        let recs = random_stream(&mut rng, n, m, 8, 8);
        let threshold = -(rng.gen_range(1..=40) as f64);
        let t = Instant::now();
        let (index, steps) = match thresholded_mincost(&recs, threshold, cfg) {
            Ok(o) => (Some(o.index), o.steps),
            Err(AppError::NeverFeasible) => (None, 0),
            Err(e) => return Err(e),
        };
        let ipm_ms = t.elapsed().as_secs_f64() * 1e3;
        let t = Instant::now();
        let baseline = baseline_first_feasible(&recs, threshold);
        let baseline_ms = t.elapsed().as_secs_f64() * 1e3;
        rows.push(BenchRow { instance: k, n, m, threshold, index, baseline, steps, ipm_ms, baseline_ms });
    }
    Ok(rows)
}
