//! Worked-example datasets used by the demos, tests and acceptance suite.

use crate::data::{Comparator, Relation, Row, Rule, SensitivityPolicy, Value};
use crate::hybrid::{HybridDataset, JoinCondition};

fn row(id: &str, values: &[Value]) -> Row {
    Row::new(id, values.to_vec())
}

fn s(v: &str) -> Value {
    Value::from(v)
}

fn i(v: i64) -> Value {
    Value::Int(v)
}

/// The eight-tuple Employee relation.
pub fn employee() -> Relation {
    let schema = ["EId", "FirstName", "LastName", "SSN", "Office#", "Department"]
        .map(String::from)
        .to_vec();
    let rows = vec![
        row("t1", &[s("E101"), s("Adam"), s("Smith"), i(111), i(1), s("Defense")]),
        row("t2", &[s("E259"), s("John"), s("Williams"), i(222), i(2), s("Design")]),
        row("t3", &[s("E199"), s("Eve"), s("Smith"), i(333), i(2), s("Design")]),
        row("t4", &[s("E259"), s("John"), s("Williams"), i(222), i(6), s("Defense")]),
        row("t5", &[s("E152"), s("Clark"), s("Cook"), i(444), i(1), s("Defense")]),
        row("t6", &[s("E254"), s("David"), s("Watts"), i(555), i(4), s("Design")]),
        row("t7", &[s("E159"), s("Lisa"), s("Ross"), i(666), i(2), s("Defense")]),
        row("t8", &[s("E152"), s("Clark"), s("Cook"), i(444), i(3), s("Design")]),
    ];
    Relation::new("Employee", schema, rows).expect("fixture is well-formed")
}

/// Defense rows are sensitive; SSN is sensitive everywhere.
pub fn employee_policy() -> SensitivityPolicy {
    SensitivityPolicy {
        rules: vec![Rule { attribute: "Department".into(), op: Comparator::Eq, value: s("Defense"), relation: None }],
        sensitive_attributes: vec!["SSN".into()],
        key: Some("EId".into()),
    }
}

/// Sensitive EId values in the order that reproduces the reference two-by-two
/// layout: round-robin over two bins gives {E101, E259} and {E152, E159}.
pub fn employee_pinned_order() -> Vec<Value> {
    ["E101", "E152", "E259", "E159"].map(s).to_vec()
}

/// The reference 4x4 arrangement of the values 0..15, row by row.
pub const SIXTEEN_MATRIX: [[i64; 4]; 4] = [[11, 2, 5, 14], [10, 3, 8, 7], [0, 15, 6, 4], [13, 1, 12, 9]];

/// Permutation of 0..15 whose round-robin placement yields [`SIXTEEN_MATRIX`]:
/// element `k` lands in row `k mod 4`, slot `k / 4`, so the order is the matrix read column by column.
pub fn sixteen_pinned_order() -> Vec<Value> {
    (0..4).flat_map(|slot| (0..4).map(move |bin| i(SIXTEEN_MATRIX[bin][slot]))).collect()
}

/// Sixteen values, each with one sensitive and one non-sensitive tuple.
pub fn sixteen() -> Relation {
    let schema = vec!["V".to_string(), "Side".to_string()];
    let mut rows = Vec::new();
    for v in 0..16 {
        let mut r = row(&format!("s{v}"), &[i(v), s("secret")]);
        r.sensitive = true;
        rows.push(r);
        rows.push(row(&format!("p{v}"), &[i(v), s("public")]));
    }
    Relation::new("Sixteen", schema, rows).expect("fixture is well-formed")
}

pub fn sixteen_policy() -> SensitivityPolicy {
    SensitivityPolicy {
        rules: vec![Rule { attribute: "Side".into(), op: Comparator::Eq, value: s("secret"), relation: None }],
        sensitive_attributes: Vec::new(),
        key: None,
    }
}

fn marked(name: &str, attrs: [&str; 2], data: &[(&str, &str, i64, bool)]) -> Relation {
    let rows = data
        .iter()
        .map(|&(id, text, region, sensitive)| {
            let mut r = row(id, &[s(text), i(region)]);
            r.sensitive = sensitive;
            r
        })
        .collect();
    Relation::new(name, attrs.map(String::from).to_vec(), rows).expect("fixture is well-formed")
}

/// Three relations joined on Region.
///
/// Only a subset of the tuples is fixed by the worked example (apple/1 and
/// grape/2 non-sensitive in R, Chris/1 and James/2 non-sensitive in S,
/// Japan/2 sensitive in T, one sensitive tuple in each of R and S on region 1).
/// The remaining values are filled in consistently with every count expected
/// for it: 8 tuples for the naive private plan, 6 for all-private, 4 for the
/// pre-filtered plan.
pub fn rst() -> HybridDataset {
    let r = marked("R", ["Product", "Region"], &[("r1", "banana", 1, true), ("r2", "apple", 1, false), ("r3", "grape", 2, false)]);
    let s_rel = marked("S", ["Name", "Region"], &[("s1", "John", 1, true), ("s2", "Chris", 1, false), ("s3", "James", 2, false)]);
    let t = marked("T", ["Country", "Region"], &[("u1", "Japan", 2, true), ("u2", "USA", 1, false), ("u3", "India", 3, false)]);
    HybridDataset::new(vec![r, s_rel, t]).expect("fixture is well-formed")
}

/// `R.Region = S.Region`
pub fn rst_c() -> JoinCondition {
    JoinCondition::new("R", "Region", "S", "Region")
}

/// `S.Region = T.Region`
pub fn rst_c_prime() -> JoinCondition {
    JoinCondition::new("S", "Region", "T", "Region")
}
