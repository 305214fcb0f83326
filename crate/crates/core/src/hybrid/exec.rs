//! Split planning and execution.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::paths::simple_paths;
use super::{HybridError, JoinCondition, Materialized};
use crate::data::{Relation, Row, RowId, Value};

/// Selection `relation.attr = value` (optional) with optional projection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectQuery {
    pub relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<(String, Value)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<Vec<String>>,
}

/// Conjunctive equijoin over distinct relations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinQuery {
    /// Relations in output order.
    pub relations: Vec<String>,
    pub conditions: Vec<JoinCondition>,
}

impl JoinQuery {
    /// Relations are taken in order of first appearance.
    pub fn new(conditions: Vec<JoinCondition>) -> Result<Self, HybridError> {
        if conditions.is_empty() {
            return Err(HybridError::EmptyJoin);
        }
        let mut relations: Vec<String> = Vec::new();
        for c in &conditions {
            if c.left == c.right {
                return Err(HybridError::SelfJoin(c.to_string()));
            }
            for r in [&c.left, &c.right] {
                if !relations.contains(r) {
                    relations.push(r.clone());
                }
            }
        }
        Ok(JoinQuery { relations, conditions })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HybridQuery {
    Select(SelectQuery),
    Join(JoinQuery),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Private,
    Public,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Sensitive,
    NonSensitive,
    /// Sensitive rows plus the co-partitioned non-sensitive rows.
    Copartitioned,
    All,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubInput {
    pub relation: String,
    pub partition: Partition,
    pub rows: Vec<RowId>,
}

/// One sub-query: the original query over the given inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuery {
    pub side: Side,
    pub inputs: Vec<SubInput>,
    /// Drop results built only from non-sensitive rows.
    pub guard: bool,
}

impl SubQuery {
    pub fn scan(&self) -> u64 {
        self.inputs.iter().map(|i| i.rows.len() as u64).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeOp {
    Union,
    /// Union, failing if a result arrives from both sides.
    UnionCheckDisjoint,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Pre-filtered private inputs with a guarded join.
    #[default]
    Modified,
    /// One private sub-query per combination of partitions with at least one sensitive input.
    Naive,
    /// Everything on the private side.
    AllPrivate,
}

/// Input tuples read by each side's operators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub private_scan: u64,
    pub public_scan: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub query: HybridQuery,
    pub mode: SplitMode,
    pub columns: Vec<String>,
    pub private: Vec<SubQuery>,
    pub public: Option<SubQuery>,
    pub merge: MergeOp,
    /// Co-partition paths the private inputs were drawn from.
    pub paths: Vec<String>,
    pub predicted: Counters,
}

/// A result tuple: the contributing row ids (one per relation) and the output values.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResultRow {
    pub ids: Vec<RowId>,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferEvent {
    pub from: Side,
    pub to: Side,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub columns: Vec<String>,
    pub rows: Vec<ResultRow>,
    pub private_results: usize,
    pub public_results: usize,
    pub measured: Counters,
    pub transfers: Vec<TransferEvent>,
}

struct Input<'a> {
    relation: &'a Relation,
    rows: Vec<&'a Row>,
}

/// Hash-joins `inputs` under `conds`; each output lists one row per input, in input order.
fn join<'a>(inputs: &[Input<'a>], conds: &[JoinCondition], guard: bool) -> Result<Vec<Vec<&'a Row>>, HybridError> {
    let pos: HashMap<&str, usize> = inputs.iter().enumerate().map(|(i, inp)| (inp.relation.name.as_str(), i)).collect();
    let mut resolved = Vec::new();
    for c in conds {
        let (Some(&l), Some(&r)) = (pos.get(c.left.as_str()), pos.get(c.right.as_str())) else {
            return Err(HybridError::UnknownRelation(if pos.contains_key(c.left.as_str()) { c.right.clone() } else { c.left.clone() }));
        };
        resolved.push((l, inputs[l].relation.attr_index(&c.left_attr)?, r, inputs[r].relation.attr_index(&c.right_attr)?));
    }

    let n = inputs.len();
    let mut joined = vec![false; n];
    joined[0] = true;
    let mut partial: Vec<Vec<Option<&Row>>> = inputs[0]
        .rows
        .iter()
        .map(|&r| {
            let mut t = vec![None; n];
            t[0] = Some(r);
            t
        })
        .collect();
    for _ in 1..n {
        // next relation: any unjoined one connected to the joined set
        let (k, links) = (0..n)
            .filter(|&k| !joined[k])
            .map(|k| {
                let links: Vec<(usize, usize, usize)> = resolved
                    .iter()
                    .filter_map(|&(l, la, r, ra)| match (l == k && joined[r], r == k && joined[l]) {
                        (true, _) => Some((r, ra, la)),
                        (_, true) => Some((l, la, ra)),
                        _ => None,
                    })
                    .collect();
                (k, links)
            })
            .find(|(_, links)| !links.is_empty())
            .ok_or_else(|| {
                let k = joined.iter().position(|j| !j).unwrap_or(0);
                HybridError::Disconnected(inputs[k].relation.name.clone())
            })?;
        let (other, other_attr, own_attr) = links[0];
        let mut table: HashMap<&Value, Vec<&Row>> = HashMap::new();
        for &r in &inputs[k].rows {
            table.entry(&r.values[own_attr]).or_default().push(r);
        }
        let mut next = Vec::new();
        for t in &partial {
            let key = &t[other].expect("joined").values[other_attr];
            for &cand in table.get(key).into_iter().flatten() {
                let ok = links[1..].iter().all(|&(o, oa, ka)| t[o].expect("joined").values[oa] == cand.values[ka]);
                if ok {
                    let mut t2 = t.clone();
                    t2[k] = Some(cand);
                    next.push(t2);
                }
            }
        }
        partial = next;
        joined[k] = true;
    }
    Ok(partial
        .into_iter()
        .map(|t| t.into_iter().map(|r| r.expect("all joined")).collect::<Vec<_>>())
        .filter(|t| !guard || t.iter().any(|r| r.sensitive))
        .collect())
}

fn to_result(rows: &[&Row]) -> ResultRow {
    ResultRow { ids: rows.iter().map(|r| r.id.clone()).collect(), values: rows.iter().flat_map(|r| r.values.iter().cloned()).collect() }
}

/// Equijoin of `left` and `right` on `cond`, minus pairs of two non-sensitive rows.
pub fn guarded_join(left: &Relation, right: &Relation, cond: &JoinCondition) -> Result<Vec<ResultRow>, HybridError> {
    let inputs = [Input { relation: left, rows: left.rows.iter().collect() }, Input { relation: right, rows: right.rows.iter().collect() }];
    let mut out: Vec<ResultRow> = join(&inputs, std::slice::from_ref(cond), true)?.iter().map(|t| to_result(t)).collect();
    out.sort();
    Ok(out)
}

fn rows_of(rel: &Relation, partition: Partition, copart: &BTreeSet<RowId>) -> Vec<RowId> {
    rel.rows
        .iter()
        .filter(|r| match partition {
            Partition::Sensitive => r.sensitive,
            Partition::NonSensitive => !r.sensitive,
            Partition::Copartitioned => r.sensitive || copart.contains(&r.id),
            Partition::All => true,
        })
        .map(|r| r.id.clone())
        .collect()
}

fn input(m: &Materialized, relation: &str, partition: Partition) -> Result<SubInput, HybridError> {
    let rel = m.dataset().relation(relation)?;
    let copart = if partition == Partition::Copartitioned { m.copartitioned_rows(relation) } else { BTreeSet::new() };
    Ok(SubInput { relation: relation.to_string(), partition, rows: rows_of(rel, partition, &copart) })
}

fn predicted(private: &[SubQuery], public: &Option<SubQuery>) -> Counters {
    Counters { private_scan: private.iter().map(SubQuery::scan).sum(), public_scan: public.as_ref().map_or(0, SubQuery::scan) }
}

/// Selection/projection: the query over sensitive rows privately, over non-sensitive rows publicly.
pub fn split_select_project(q: &SelectQuery, m: &Materialized) -> Result<SplitPlan, HybridError> {
    let rel = m.dataset().relation(&q.relation)?;
    if let Some((attr, _)) = &q.predicate {
        rel.attr_index(attr)?;
    }
    let columns = match &q.projection {
        Some(cols) => {
            for c in cols {
                rel.attr_index(c)?;
            }
            cols.clone()
        }
        None => rel.schema.clone(),
    };
    let private = vec![SubQuery { side: Side::Private, inputs: vec![input(m, &q.relation, Partition::Sensitive)?], guard: false }];
    let public = Some(SubQuery { side: Side::Public, inputs: vec![input(m, &q.relation, Partition::NonSensitive)?], guard: false });
    Ok(SplitPlan {
        query: HybridQuery::Select(q.clone()),
        mode: SplitMode::Modified,
        columns,
        predicted: predicted(&private, &public),
        private,
        public,
        merge: MergeOp::Union,
        paths: Vec::new(),
    })
}

fn check_connected(q: &JoinQuery) -> Result<(), HybridError> {
    let mut seen: BTreeSet<&str> = BTreeSet::from([q.relations[0].as_str()]);
    loop {
        let before = seen.len();
        for c in &q.conditions {
            if seen.contains(c.left.as_str()) || seen.contains(c.right.as_str()) {
                seen.insert(&c.left);
                seen.insert(&c.right);
            }
        }
        if seen.len() == before {
            break;
        }
    }
    match q.relations.iter().find(|r| !seen.contains(r.as_str())) {
        Some(r) => Err(HybridError::Disconnected(r.clone())),
        None => Ok(()),
    }
}

pub fn split_equijoin(q: &JoinQuery, m: &Materialized, mode: SplitMode) -> Result<SplitPlan, HybridError> {
    if q.relations.is_empty() || q.conditions.is_empty() {
        return Err(HybridError::EmptyJoin);
    }
    let ds = m.dataset();
    for c in &q.conditions {
        ds.check_condition(c)?;
    }
    check_connected(q)?;
    let columns: Vec<String> = q
        .relations
        .iter()
        .map(|r| ds.relation(r).map(|rel| rel.schema.iter().map(|a| format!("{r}.{a}")).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>, _>>()?
        .concat();
    let all_of = |p: Partition| q.relations.iter().map(|r| input(m, r, p)).collect::<Result<Vec<_>, _>>();
    let public_side = || -> Result<Option<SubQuery>, HybridError> {
        Ok(Some(SubQuery { side: Side::Public, inputs: all_of(Partition::NonSensitive)?, guard: false }))
    };

    let mut paths = Vec::new();
    let (private, public) = match mode {
        SplitMode::AllPrivate => (vec![SubQuery { side: Side::Private, inputs: all_of(Partition::All)?, guard: false }], None),
        SplitMode::Naive => {
            let k = q.relations.len();
            let mut subs = Vec::new();
            for mask in 1u32..(1 << k) {
                let inputs = q
                    .relations
                    .iter()
                    .enumerate()
                    .map(|(i, r)| input(m, r, if mask & (1 << i) != 0 { Partition::Sensitive } else { Partition::NonSensitive }))
                    .collect::<Result<Vec<_>, _>>()?;
                subs.push(SubQuery { side: Side::Private, inputs, guard: false });
            }
            (subs, public_side()?)
        }
        SplitMode::Modified => {
            for p in simple_paths(&q.conditions) {
                let id = p.id();
                if m.copartition(&id).is_none() {
                    return Err(HybridError::MissingCopartition(id));
                }
                paths.push(id);
            }
            let inputs = q
                .relations
                .iter()
                .map(|r| {
                    let rel = ds.relation(r)?;
                    let copart: BTreeSet<RowId> = paths
                        .iter()
                        .filter_map(|id| m.copartition(id))
                        .filter(|cp| cp.path.target() == r)
                        .flat_map(|cp| cp.members.iter().cloned())
                        .collect();
                    Ok(SubInput { relation: r.clone(), partition: Partition::Copartitioned, rows: rows_of(rel, Partition::Copartitioned, &copart) })
                })
                .collect::<Result<Vec<_>, HybridError>>()?;
            (vec![SubQuery { side: Side::Private, inputs, guard: true }], public_side()?)
        }
    };
    paths.sort();
    Ok(SplitPlan {
        query: HybridQuery::Join(q.clone()),
        mode,
        columns,
        predicted: predicted(&private, &public),
        private,
        public,
        merge: MergeOp::UnionCheckDisjoint,
        paths,
    })
}

pub fn split_query(q: &HybridQuery, m: &Materialized, mode: SplitMode) -> Result<SplitPlan, HybridError> {
    match q {
        HybridQuery::Select(s) => split_select_project(s, m),
        HybridQuery::Join(j) => split_equijoin(j, m, mode),
    }
}

/// Rows one cloud holds; reads are counted.
struct Store<'a> {
    side: Side,
    rows: HashMap<(&'a str, &'a RowId), &'a Row>,
    reads: AtomicU64,
}

impl<'a> Store<'a> {
    fn new(side: Side, m: &'a Materialized, keep: impl Fn(&Relation, &Row) -> bool) -> Self {
        let mut rows = HashMap::new();
        for rel in m.dataset().relations() {
            for r in rel.rows.iter().filter(|r| keep(rel, r)) {
                rows.insert((rel.name.as_str(), &r.id), r);
            }
        }
        Store { side, rows, reads: AtomicU64::new(0) }
    }

    fn fetch(&self, inp: &'a SubInput) -> Result<Vec<&'a Row>, HybridError> {
        let out = inp
            .rows
            .iter()
            .map(|id| {
                self.rows.get(&(inp.relation.as_str(), id)).copied().ok_or_else(|| HybridError::MissingRow {
                    side: self.side,
                    relation: inp.relation.clone(),
                    row: id.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.reads.fetch_add(out.len() as u64, Ordering::Relaxed);
        Ok(out)
    }
}

fn run_sub<'a>(sub: &'a SubQuery, query: &HybridQuery, m: &'a Materialized, store: &Store<'a>) -> Result<Vec<ResultRow>, HybridError> {
    let ds = m.dataset();
    match query {
        HybridQuery::Select(q) => {
            let rel = ds.relation(&q.relation)?;
            let pred = q.predicate.as_ref().map(|(a, v)| rel.attr_index(a).map(|i| (i, v))).transpose()?;
            let proj: Vec<usize> = match &q.projection {
                Some(cols) => cols.iter().map(|c| rel.attr_index(c)).collect::<Result<_, _>>()?,
                None => (0..rel.schema.len()).collect(),
            };
            let mut out = Vec::new();
            for inp in &sub.inputs {
                for r in store.fetch(inp)? {
                    if pred.is_none_or(|(i, v)| &r.values[i] == v) {
                        out.push(ResultRow { ids: vec![r.id.clone()], values: proj.iter().map(|&i| r.values[i].clone()).collect() });
                    }
                }
            }
            Ok(out)
        }
        HybridQuery::Join(q) => {
            let inputs = sub
                .inputs
                .iter()
                .map(|inp| Ok(Input { relation: ds.relation(&inp.relation)?, rows: store.fetch(inp)? }))
                .collect::<Result<Vec<_>, HybridError>>()?;
            Ok(join(&inputs, &q.conditions, sub.guard)?.iter().map(|t| to_result(t)).collect())
        }
    }
}

/// Runs both sides concurrently and merges public results into the private ones.
pub fn execute_split_plan(plan: &SplitPlan, m: &Materialized) -> Result<ExecutionReport, HybridError> {
    let public_store = Store::new(Side::Public, m, |_, r| !r.sensitive);
    let private_store = match plan.mode {
        SplitMode::Modified => {
            let copart: BTreeMap<&str, BTreeSet<RowId>> = m.dataset().names().map(|n| (n, m.copartitioned_rows(n))).collect();
            Store::new(Side::Private, m, move |rel, r| r.sensitive || copart[rel.name.as_str()].contains(&r.id))
        }
        SplitMode::Naive | SplitMode::AllPrivate => Store::new(Side::Private, m, |_, _| true),
    };

    let (private, public) = std::thread::scope(|s| {
        let public = s.spawn(|| match &plan.public {
            Some(sub) => run_sub(sub, &plan.query, m, &public_store),
            None => Ok(Vec::new()),
        });
        let private: Result<Vec<ResultRow>, HybridError> =
            plan.private.iter().map(|sub| run_sub(sub, &plan.query, m, &private_store)).collect::<Result<Vec<_>, _>>().map(|v| v.concat());
        (private, public.join().expect("public side panicked"))
    });
    let (private, public) = (private?, public?);

    let transfers = vec![TransferEvent { from: Side::Public, to: Side::Private, rows: public.len() }];
    let mut seen: HashSet<&Vec<RowId>> = HashSet::with_capacity(private.len() + public.len());
    for r in private.iter().chain(&public) {
        if !seen.insert(&r.ids) {
            let ids: Vec<&str> = r.ids.iter().map(RowId::as_str).collect();
            return Err(HybridError::MergeIntegrity(format!("({})", ids.join(","))));
        }
    }
    let (private_results, public_results) = (private.len(), public.len());
    let mut rows = private;
    rows.extend(public);
    rows.sort();
    Ok(ExecutionReport {
        columns: plan.columns.clone(),
        rows,
        private_results,
        public_results,
        measured: Counters {
            private_scan: private_store.reads.load(Ordering::Relaxed),
            public_scan: public_store.reads.load(Ordering::Relaxed),
        },
        transfers,
    })
}
