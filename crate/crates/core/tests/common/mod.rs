//! Generators and oracles shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use partsec::binning::{create_bins, BinOptions};
use partsec::cost::{eta_exact, eta_measured, layout_bin_sizes, CostParams, MeasuredCosts};
use partsec::data::{PartitionedDataset, Relation, Row, Value};
use partsec::hybrid::{enumerate_join_paths, HybridDataset, JoinCondition, JoinQuery, JoinSource, Materialized, ResultRow};
use partsec::public_exec::{Deployment, SelectionQuery};

fn distinct_values<R: Rng>(rng: &mut R, universe: i64, count: usize) -> Vec<i64> {
    let mut all: Vec<i64> = (0..universe).collect();
    all.shuffle(rng);
    all.truncate(count);
    all
}

/// Base-case dataset over attribute `A`: `s` sensitive and `ns` non-sensitive
/// tuples, each value at most once per side, drawn from a universe of
/// `s + ns` values so that the sides overlap only partly.
pub fn base_case_dataset<R: Rng>(rng: &mut R, s: usize, ns: usize) -> PartitionedDataset {
    let universe = (s + ns) as i64;
    let rel = |name: &str, prefix: &str, vals: Vec<i64>, sensitive: bool| {
        let rows = vals
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                let mut r = Row::new(format!("{prefix}{k}"), vec![Value::Int(v), Value::from(format!("{prefix}-payload-{k}").as_str())]);
                r.sensitive = sensitive;
                r
            })
            .collect();
        Relation::new(name, vec!["A".into(), "Payload".into()], rows).expect("generated relation")
    };
    let sensitive = rel("D", "s", distinct_values(rng, universe, s), true);
    let nonsensitive = rel("D", "p", distinct_values(rng, universe, ns), false);
    PartitionedDataset::from_parts(sensitive, nonsensitive, None).expect("generated dataset")
}

pub fn materialize_for(ds: HybridDataset, workload: &[Vec<JoinCondition>]) -> Materialized {
    let paths = enumerate_join_paths(&JoinSource::Workload(workload.to_vec())).expect("acyclic workload");
    Materialized::build(ds, paths).expect("materialization")
}

/// Random chain or star equijoin over two or three relations of at most
/// `max_rows` rows, with a random share of sensitive rows.
pub fn random_join_instance<R: Rng>(rng: &mut R, arity: usize, max_rows: usize) -> (HybridDataset, Vec<JoinCondition>) {
    let names = ["A", "B", "C"];
    let sizes: Vec<usize> = (0..arity).map(|_| rng.gen_range(1..=max_rows)).collect();
    let largest = *sizes.iter().max().expect("non-empty");
    let domain = rng.gen_range((largest / 4).max(1)..=largest.max(2)) as i64;
    let sensitive_share: f64 = rng.gen_range(0.0..0.5);
    let relations = names[..arity]
        .iter()
        .zip(&sizes)
        .map(|(name, &n)| {
            let rows = (0..n)
                .map(|k| {
                    let mut r = Row::new(
                        format!("{}{k}", name.to_lowercase()),
                        vec![Value::Int(rng.gen_range(0..domain)), Value::Int(rng.gen_range(0..domain)), Value::Int(k as i64)],
                    );
                    r.sensitive = rng.gen_bool(sensitive_share);
                    r
                })
                .collect();
            Relation::new(*name, vec!["J1".into(), "J2".into(), "P".into()], rows).expect("generated relation")
        })
        .collect();
    let mut conds = vec![JoinCondition::new("A", "J1", "B", "J1")];
    if arity == 3 {
        let hub = if rng.gen_bool(0.5) { "A" } else { "B" };
        conds.push(JoinCondition::new(hub, "J2", "C", "J2"));
    }
    (HybridDataset::new(relations).expect("generated dataset"), conds)
}

/// Nested-loop evaluation of `q` over the plaintext of every relation,
/// sorted like the executor's output.
pub fn nested_loop_join(ds: &HybridDataset, q: &JoinQuery) -> Vec<ResultRow> {
    let rels: Vec<&Relation> = q.relations.iter().map(|r| ds.relation(r).expect("relation")).collect();
    let pos = |name: &str| q.relations.iter().position(|r| r == name).expect("relation in query");
    let checks: Vec<(usize, usize, usize, usize)> = q
        .conditions
        .iter()
        .map(|c| {
            let (l, r) = (pos(&c.left), pos(&c.right));
            (l, rels[l].attr_index(&c.left_attr).expect("attr"), r, rels[r].attr_index(&c.right_attr).expect("attr"))
        })
        .collect();
    let mut out = Vec::new();
    let mut tuple: Vec<&Row> = Vec::new();
    fn walk<'a>(rels: &[&'a Relation], checks: &[(usize, usize, usize, usize)], tuple: &mut Vec<&'a Row>, out: &mut Vec<ResultRow>) {
        let depth = tuple.len();
        if depth == rels.len() {
            out.push(ResultRow {
                ids: tuple.iter().map(|r| r.id.clone()).collect(),
                values: tuple.iter().flat_map(|r| r.values.iter().cloned()).collect(),
            });
            return;
        }
        for row in &rels[depth].rows {
            tuple.push(row);
            let ok = checks
                .iter()
                .filter(|&&(l, _, r, _)| l.max(r) == depth)
                .all(|&(l, la, r, ra)| tuple[l].values[la] == tuple[r].values[ra]);
            if ok {
                walk(rels, checks, tuple, out);
            }
            tuple.pop();
        }
    }
    walk(&rels, &checks, &mut tuple, &mut out);
    out.sort();
    out
}

/// Runs a batch of binned queries on uniform synthetic data and on a fully
/// encrypted copy, and returns the relative gap between the counter-based
/// ratio and the analytic one.
pub fn measured_eta_gap<R: Rng>(rng: &mut R) -> f64 {
    let (s, ns) = (300usize, 1200usize);
    let values: Vec<i64> = (0..(s + ns) as i64).collect();
    let rows = |prefix: &str, vals: &[i64], sensitive: bool| {
        vals.iter()
            .enumerate()
            .map(|(k, &v)| {
                let mut r = Row::new(format!("{prefix}{k}"), vec![Value::Int(v), Value::Int(k as i64)]);
                r.sensitive = sensitive;
                r
            })
            .collect::<Vec<_>>()
    };
    let schema = vec!["A".to_string(), "P".to_string()];
    let mk = |rows| Relation::new("D", schema.clone(), rows).expect("generated relation");
    let split = PartitionedDataset::from_parts(mk(rows("s", &values[..s], true)), mk(rows("p", &values[s..], false)), None).expect("dataset");
    let full = PartitionedDataset::from_parts(mk(rows("x", &values, true)), mk(Vec::new()), None).expect("dataset");

    let sv = split.sensitive_values("A").expect("attr");
    let nv = split.nonsensitive_values("A").expect("attr");
    let layout = create_bins(&sv, &nv, rng.gen(), BinOptions::default()).expect("layout");
    let (sb, nsb) = layout_bin_sizes(&layout);
    let binned = Deployment::query_binning(&split, "A", layout, 1).expect("deployment");
    let encrypted = Deployment::naive(&full, "A", 1).expect("deployment");

    for _ in 0..50 {
        let w = Value::Int(*values.choose(rng).expect("non-empty"));
        binned.execute(&SelectionQuery::new("A", w.clone())).expect("binned query");
        encrypted.execute(&SelectionQuery::new("A", w)).expect("encrypted query");
    }
    let (bc, ec) = (binned.cloud(), encrypted.cloud());
    let measured = MeasuredCosts {
        enc_scanned: bc.encrypted.scanned(),
        enc_transferred: bc.encrypted.transferred(),
        plain_lookups: bc.plaintext.lookups(),
        plain_transferred: bc.plaintext.transferred(),
        full_scanned: ec.encrypted.scanned(),
        full_transferred: ec.encrypted.transferred(),
    };
    let d = (s + ns) as f64;
    let p = CostParams::from_ratios(s as f64 / d, 10.0, 4.0, 1.0 / d, d).expect("params");
    let analytic = eta_exact(&p, sb as f64, nsb as f64);
    (eta_measured(&p, &measured) - analytic).abs() / analytic
}
