//! Honest-but-curious adversary simulation.
//!
//! The adversary sees, per query, the plaintext values requested from the
//! non-sensitive side, the plaintext rows returned, and the positions (never
//! contents) of the encrypted records returned. From these it maintains a
//! bipartite graph of surviving matches between encrypted records and
//! non-sensitive values, starting complete.
//!
//! What the adversary can infer depends on the protocol, which it is assumed
//! to know:
//! - naive: the sensitive request carries the same keyword as the plaintext
//!   request, so a record is returned iff its value is among the requested
//!   plaintext values. Every edge contradicting that is severed.
//! - query binning: the sensitive request is a hidden bin of values, which
//!   yields no per-edge constraint; the adversary does know that members of
//!   one sensitive bin have their counterparts in distinct non-sensitive bins.
//!   That pairwise constraint is checked by searching for a consistent
//!   value assignment per edge on small square instances.
//!
//! The verdict checks two structural consequences of partitioned data
//! security: every initial edge survives, and every query returns the same
//! number of encrypted records. Full posterior computation under arbitrary
//! auxiliary knowledge is out of scope.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::binning::BinLayout;
use crate::data::{PartitionedDataset, RowId, Value};
use crate::public_exec::{CloudEvents, Deployment, ExecError, Protocol, SelectionQuery};

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// Largest square instance on which per-edge support is searched.
pub const SUPPORT_CHECK_LIMIT: usize = 16;

/// Largest square instance on which consistent assignments are fully enumerated.
pub const ENUMERATION_LIMIT: usize = 9;

/// What the cloud observed for one query.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversarialView {
    /// Logical request time; both halves of one query share it.
    pub session: u64,
    pub requested_plain: Vec<Value>,
    pub token_count: usize,
    pub plain_rows: Vec<RowId>,
    /// Encrypted record positions, ascending.
    pub encrypted: Vec<usize>,
}

/// Groups the cloud's logs into one view per query session.
pub fn record_view(events: &CloudEvents) -> Vec<AdversarialView> {
    let mut views: BTreeMap<u64, AdversarialView> = BTreeMap::new();
    for e in &events.encrypted {
        let v = views.entry(e.session).or_default();
        v.session = e.session;
        v.token_count += e.token_count;
        v.encrypted.extend(&e.positions);
    }
    for e in &events.plaintext {
        let v = views.entry(e.session).or_default();
        v.session = e.session;
        v.requested_plain.extend(e.requested.iter().cloned());
        v.plain_rows.extend(e.returned.iter().cloned());
    }
    views
        .into_values()
        .map(|mut v| {
            v.encrypted.sort_unstable();
            v.plain_rows.sort();
            v
        })
        .collect()
}

/// A full audit input: the protocol, the sizes the adversary knows up front,
/// and the per-query views.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditTrace {
    pub version: u32,
    pub protocol: Protocol,
    pub attribute: String,
    pub encrypted_records: usize,
    /// Distinct values of the attribute in the outsourced plaintext relation.
    pub plaintext_values: Vec<Value>,
    pub views: Vec<AdversarialView>,
}

impl AuditTrace {
    pub fn capture(dep: &Deployment) -> AuditTrace {
        let cloud = dep.cloud();
        let mut plaintext_values = cloud
            .plaintext
            .relation()
            .distinct_values(dep.attribute())
            .expect("deployment attribute is in the plaintext schema");
        plaintext_values.sort();
        AuditTrace {
            version: TRACE_FORMAT_VERSION,
            protocol: dep.protocol(),
            attribute: dep.attribute().to_string(),
            encrypted_records: cloud.encrypted.len(),
            plaintext_values,
            views: record_view(&cloud.events()),
        }
    }

    pub fn initial_graph(&self) -> SurvivingMatchGraph {
        SurvivingMatchGraph::complete(self.encrypted_records, self.plaintext_values.clone())
    }
}

/// Surviving matches between encrypted records (left, by store position) and
/// non-sensitive values (right). Edges are only ever removed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurvivingMatchGraph {
    left: usize,
    right: Vec<Value>,
    edges: Vec<bool>,
}

impl SurvivingMatchGraph {
    pub fn complete(left: usize, right: Vec<Value>) -> Self {
        let edges = vec![true; left * right.len()];
        SurvivingMatchGraph { left, right, edges }
    }

    pub fn left_len(&self) -> usize {
        self.left
    }

    pub fn right(&self) -> &[Value] {
        &self.right
    }

    pub fn right_index(&self, v: &Value) -> Option<usize> {
        self.right.iter().position(|r| r == v)
    }

    pub fn has_edge(&self, l: usize, r: usize) -> bool {
        self.edges[l * self.right.len() + r]
    }

    fn remove(&mut self, l: usize, r: usize) -> bool {
        let slot = &mut self.edges[l * self.right.len() + r];
        std::mem::replace(slot, false)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    pub fn is_complete(&self) -> bool {
        self.edges.iter().all(|&e| e)
    }

    pub fn left_degree(&self, l: usize) -> usize {
        (0..self.right.len()).filter(|&r| self.has_edge(l, r)).count()
    }

    pub fn right_degree(&self, r: usize) -> usize {
        (0..self.left).filter(|&l| self.has_edge(l, r)).count()
    }

    pub fn neighbors(&self, l: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.right.len()).filter(move |&r| self.has_edge(l, r))
    }
}

/// Severs every edge `view` rules out under `protocol`; returns the severed edges.
pub fn prune_matches(graph: &mut SurvivingMatchGraph, view: &AdversarialView, protocol: Protocol) -> Vec<(usize, Value)> {
    let mut severed = Vec::new();
    if protocol != Protocol::Naive {
        return severed;
    }
    let returned: BTreeSet<usize> = view.encrypted.iter().copied().collect();
    let requested: BTreeSet<&Value> = view.requested_plain.iter().collect();
    for l in 0..graph.left {
        for r in 0..graph.right.len() {
            let consistent = returned.contains(&l) == requested.contains(&graph.right[r]);
            if !consistent && graph.remove(l, r) {
                severed.push((l, graph.right[r].clone()));
            }
        }
    }
    severed
}

/// Pairwise knowledge for query binning: records returned together belong to
/// one sensitive bin, values requested together form one non-sensitive bin,
/// and no two members of a sensitive bin match into the same non-sensitive bin.
#[derive(Clone, Debug, Default)]
pub struct SpreadConstraints {
    groups_of: Vec<Vec<usize>>,
    blocks_of: Vec<Vec<usize>>,
    groups: usize,
    blocks: usize,
}

impl SpreadConstraints {
    pub fn from_trace(trace: &AuditTrace) -> Self {
        let mut c = SpreadConstraints {
            groups_of: vec![Vec::new(); trace.encrypted_records],
            blocks_of: vec![Vec::new(); trace.plaintext_values.len()],
            ..Default::default()
        };
        if trace.protocol != Protocol::QueryBinning {
            return c;
        }
        let index: HashMap<&Value, usize> = trace.plaintext_values.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let groups: BTreeSet<&Vec<usize>> = trace.views.iter().map(|v| &v.encrypted).filter(|g| g.len() > 1).collect();
        for g in groups {
            for &l in g {
                if l < c.groups_of.len() {
                    c.groups_of[l].push(c.groups);
                }
            }
            c.groups += 1;
        }
        let blocks: BTreeSet<BTreeSet<usize>> = trace
            .views
            .iter()
            .map(|v| v.requested_plain.iter().filter_map(|x| index.get(x).copied()).collect::<BTreeSet<_>>())
            .filter(|b| b.len() > 1)
            .collect();
        for b in blocks {
            for r in b {
                c.blocks_of[r].push(c.blocks);
            }
            c.blocks += 1;
        }
        c
    }
}

struct Search<'a> {
    graph: &'a SurvivingMatchGraph,
    cons: &'a SpreadConstraints,
    used: Vec<bool>,
    load: Vec<u32>,
    assign: Vec<usize>,
}

impl<'a> Search<'a> {
    fn new(graph: &'a SurvivingMatchGraph, cons: &'a SpreadConstraints) -> Self {
        Search {
            graph,
            cons,
            used: vec![false; graph.right.len()],
            load: vec![0; cons.groups * cons.blocks],
            assign: vec![usize::MAX; graph.left],
        }
    }

    fn fits(&self, l: usize, r: usize) -> bool {
        if self.used[r] || !self.graph.has_edge(l, r) {
            return false;
        }
        self.cons.groups_of[l]
            .iter()
            .all(|&g| self.cons.blocks_of[r].iter().all(|&b| self.load[g * self.cons.blocks + b] == 0))
    }

    fn place(&mut self, l: usize, r: usize, delta: i32) {
        self.used[r] = delta > 0;
        self.assign[l] = if delta > 0 { r } else { usize::MAX };
        for &g in &self.cons.groups_of[l] {
            for &b in &self.cons.blocks_of[r] {
                let cell = &mut self.load[g * self.cons.blocks + b];
                *cell = (*cell as i32 + delta) as u32;
            }
        }
    }

    /// Depth-first over left nodes in order; `visit` returns false to stop.
    fn run(&mut self, l: usize, visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if l == self.graph.left {
            return visit(&self.assign);
        }
        if self.assign[l] != usize::MAX {
            return self.run(l + 1, visit);
        }
        for r in 0..self.graph.right.len() {
            if self.fits(l, r) {
                self.place(l, r, 1);
                let go_on = self.run(l + 1, visit);
                self.place(l, r, -1);
                if !go_on {
                    return false;
                }
            }
        }
        true
    }
}

/// Edges of `graph` that occur in at least one bijection consistent with the
/// graph and `cons`. `None` when the instance is not square or is larger than
/// [`SUPPORT_CHECK_LIMIT`].
pub fn supported_edges(graph: &SurvivingMatchGraph, cons: &SpreadConstraints) -> Option<SurvivingMatchGraph> {
    let n = graph.left;
    if n != graph.right.len() || n > SUPPORT_CHECK_LIMIT {
        return None;
    }
    let mut supported = SurvivingMatchGraph { left: n, right: graph.right.clone(), edges: vec![false; n * n] };
    for l in 0..n {
        for r in 0..n {
            if supported.has_edge(l, r) || !graph.has_edge(l, r) {
                continue;
            }
            let mut search = Search::new(graph, cons);
            if !search.fits(l, r) {
                continue;
            }
            search.place(l, r, 1);
            let mut found = None;
            search.run(0, &mut |assign| {
                found = Some(assign.to_vec());
                false
            });
            if let Some(assign) = found {
                for (ll, &rr) in assign.iter().enumerate() {
                    supported.edges[ll * n + rr] = true;
                }
            }
        }
    }
    Some(supported)
}

/// Number of consistent bijections, in total and per edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationCount {
    pub total: u64,
    /// `per_edge[l][r]`: consistent bijections assigning record `l` to value `r`.
    pub per_edge: Vec<Vec<u64>>,
}

impl AllocationCount {
    pub fn probability(&self, l: usize, r: usize) -> f64 {
        self.per_edge[l][r] as f64 / self.total as f64
    }
}

/// Enumerates every bijection between encrypted records and non-sensitive
/// values consistent with the trace. `None` when not square or larger than
/// [`ENUMERATION_LIMIT`].
pub fn count_allocations(trace: &AuditTrace) -> Option<AllocationCount> {
    let n = trace.encrypted_records;
    if n != trace.plaintext_values.len() || n > ENUMERATION_LIMIT {
        return None;
    }
    let mut graph = trace.initial_graph();
    for v in &trace.views {
        prune_matches(&mut graph, v, trace.protocol);
    }
    let cons = SpreadConstraints::from_trace(trace);
    let mut total = 0u64;
    let mut per_edge = vec![vec![0u64; n]; n];
    Search::new(&graph, &cons).run(0, &mut |assign| {
        total += 1;
        for (l, &r) in assign.iter().enumerate() {
            per_edge[l][r] += 1;
        }
        true
    });
    Some(AllocationCount { total, per_edge })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    /// The query removed surviving matches.
    EdgesSevered { query: usize, edges: Vec<(usize, Value)> },
    /// After the query a record has exactly one surviving match.
    Pinned { query: usize, encrypted: usize, value: Value },
    /// After the query a record matches no non-sensitive value.
    IsolatedRecord { query: usize, encrypted: usize },
    /// After the query a non-sensitive value matches no record.
    IsolatedValue { query: usize, value: Value },
    /// The query returned a different number of encrypted records than the first.
    SizeAnomaly { query: usize, size: usize, expected: usize },
    /// The edge survives locally but no consistent assignment uses it.
    UnsupportedEdge { encrypted: usize, value: Value },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub secure: bool,
    pub protocol: Protocol,
    pub queries: usize,
    pub initial_edges: usize,
    pub surviving_edges: usize,
    /// Whether per-edge support was searched (small square instances only).
    pub support_checked: bool,
    pub findings: Vec<Finding>,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        if self.secure {
            "secure"
        } else {
            "leaks"
        }
    }

    pub fn pinned(&self) -> impl Iterator<Item = (usize, &Value)> {
        self.findings.iter().filter_map(|f| match f {
            Finding::Pinned { encrypted, value, .. } => Some((*encrypted, value)),
            _ => None,
        })
    }
}

/// Replays the trace against a complete graph and reports every leak found.
pub fn check_partitioned_security(trace: &AuditTrace) -> Verdict {
    let mut graph = trace.initial_graph();
    let initial_edges = graph.edge_count();
    let mut findings = Vec::new();

    for (q, view) in trace.views.iter().enumerate() {
        let before: Vec<usize> = (0..graph.left).map(|l| graph.left_degree(l)).collect();
        let severed = prune_matches(&mut graph, view, trace.protocol);
        if severed.is_empty() {
            continue;
        }
        let touched_left: BTreeSet<usize> = severed.iter().map(|(l, _)| *l).collect();
        let touched_right: BTreeSet<&Value> = severed.iter().map(|(_, v)| v).collect();
        for &l in &touched_left {
            match graph.left_degree(l) {
                0 => findings.push(Finding::IsolatedRecord { query: q, encrypted: l }),
                1 if before[l] > 1 => {
                    let r = graph.neighbors(l).next().expect("degree one");
                    findings.push(Finding::Pinned { query: q, encrypted: l, value: graph.right[r].clone() });
                }
                _ => {}
            }
        }
        for v in touched_right {
            let r = graph.right_index(v).expect("severed value is a node");
            if graph.right_degree(r) == 0 {
                findings.push(Finding::IsolatedValue { query: q, value: v.clone() });
            }
        }
        findings.insert(
            findings.len() - findings.iter().rev().take_while(|f| finding_query(f) == Some(q)).count(),
            Finding::EdgesSevered { query: q, edges: severed },
        );
    }

    if let Some(first) = trace.views.first() {
        let expected = first.encrypted.len();
        for (q, view) in trace.views.iter().enumerate() {
            if view.encrypted.len() != expected {
                findings.push(Finding::SizeAnomaly { query: q, size: view.encrypted.len(), expected });
            }
        }
    }

    let cons = SpreadConstraints::from_trace(trace);
    let support = supported_edges(&graph, &cons);
    if let Some(support) = &support {
        for l in 0..graph.left {
            for r in 0..graph.right.len() {
                if graph.has_edge(l, r) && !support.has_edge(l, r) {
                    findings.push(Finding::UnsupportedEdge { encrypted: l, value: graph.right[r].clone() });
                }
            }
        }
    }

    Verdict {
        secure: findings.is_empty(),
        protocol: trace.protocol,
        queries: trace.views.len(),
        initial_edges,
        surviving_edges: support.as_ref().map_or(graph.edge_count(), |s| s.edge_count()),
        support_checked: support.is_some(),
        findings,
    }
}

fn finding_query(f: &Finding) -> Option<usize> {
    match f {
        Finding::EdgesSevered { query, .. }
        | Finding::Pinned { query, .. }
        | Finding::IsolatedRecord { query, .. }
        | Finding::IsolatedValue { query, .. }
        | Finding::SizeAnomaly { query, .. } => Some(*query),
        Finding::UnsupportedEdge { .. } => None,
    }
}

/// Verdicts for the naive and the binned executor after each has answered
/// every keyword of the attribute once.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExhaustiveAudit {
    pub keywords: usize,
    pub naive: Verdict,
    pub query_binning: Verdict,
}

pub fn exhaustive_audit(ds: &PartitionedDataset, attr: &str, layout: BinLayout, key_seed: u64) -> Result<ExhaustiveAudit, ExecError> {
    let naive = Deployment::naive(ds, attr, key_seed)?;
    let binned = Deployment::query_binning(ds, attr, layout, key_seed)?;
    let keywords = binned.keywords();
    for w in &keywords {
        naive.execute(&SelectionQuery::new(attr, w.clone()))?;
        binned.execute(&SelectionQuery::new(attr, w.clone()))?;
    }
    Ok(ExhaustiveAudit {
        keywords: keywords.len(),
        naive: check_partitioned_security(&AuditTrace::capture(&naive)),
        query_binning: check_partitioned_security(&AuditTrace::capture(&binned)),
    })
}
