//! Join paths between relations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{HybridError, JoinCondition};

/// One step of a join path, oriented from `from` to `to`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub from: String,
    pub from_attr: String,
    pub to: String,
    pub to_attr: String,
}

/// A simple path from a source relation to a target relation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JoinPath {
    hops: Vec<Hop>,
}

impl JoinPath {
    /// Builds a path from hops; `None` if empty or if consecutive hops do not chain.
    pub fn new(hops: Vec<Hop>) -> Option<Self> {
        if hops.is_empty() || hops.windows(2).any(|w| w[0].to != w[1].from) {
            return None;
        }
        Some(JoinPath { hops })
    }

    pub fn hops(&self) -> &[Hop] {
        &self.hops
    }

    pub fn source(&self) -> &str {
        &self.hops[0].from
    }

    pub fn target(&self) -> &str {
        &self.hops[self.hops.len() - 1].to
    }

    pub fn relations(&self) -> Vec<&str> {
        std::iter::once(self.source()).chain(self.hops.iter().map(|h| h.to.as_str())).collect()
    }

    /// Canonical identifier, e.g. `T⋈S⋈R|T.Region=S.Region,S.Region=R.Region`.
    pub fn id(&self) -> String {
        let conds: Vec<String> = self.hops.iter().map(|h| format!("{}.{}={}.{}", h.from, h.from_attr, h.to, h.to_attr)).collect();
        format!("{}|{}", self.relations().join("⋈"), conds.join(","))
    }

    /// The unoriented conditions this path uses.
    pub fn conditions(&self) -> impl Iterator<Item = JoinCondition> + '_ {
        self.hops.iter().map(|h| JoinCondition::new(&h.from, &h.from_attr, &h.to, &h.to_attr).canonical())
    }
}

impl fmt::Display for JoinPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Paths keyed by identifier.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSet {
    paths: BTreeMap<String, JoinPath>,
}

impl PathSet {
    pub fn insert(&mut self, p: JoinPath) {
        self.paths.insert(p.id(), p);
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&JoinPath> {
        self.paths.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.paths.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &JoinPath> {
        self.paths.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.paths.keys().map(String::as_str)
    }

    /// Paths ending at `relation`.
    pub fn targeting<'a>(&'a self, relation: &'a str) -> impl Iterator<Item = &'a JoinPath> + 'a {
        self.paths.values().filter(move |p| p.target() == relation)
    }
}

/// Where join conditions come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum JoinSource {
    /// Join queries expected at run time; paths stay within one query.
    Workload(Vec<Vec<JoinCondition>>),
    /// Every declared join of a schema; must be acyclic.
    Schema(Vec<JoinCondition>),
}

/// Every simple path over the join graph of one query.
pub(super) fn simple_paths(conditions: &[JoinCondition]) -> Vec<JoinPath> {
    let edges: BTreeSet<JoinCondition> = conditions.iter().map(JoinCondition::canonical).collect();
    let nodes: BTreeSet<&str> = edges.iter().flat_map(|c| [c.left.as_str(), c.right.as_str()]).collect();
    let mut out = Vec::new();
    for start in nodes {
        let mut visited = vec![start.to_string()];
        let mut hops = Vec::new();
        walk(start, &edges, &mut visited, &mut hops, &mut out);
    }
    out
}

fn walk(at: &str, edges: &BTreeSet<JoinCondition>, visited: &mut Vec<String>, hops: &mut Vec<Hop>, out: &mut Vec<JoinPath>) {
    for c in edges {
        let Some((attr, next, next_attr)) = c.from_side(at) else { continue };
        if visited.iter().any(|v| v == next) {
            continue;
        }
        hops.push(Hop { from: at.into(), from_attr: attr.into(), to: next.into(), to_attr: next_attr.into() });
        visited.push(next.to_string());
        out.push(JoinPath { hops: hops.clone() });
        walk(next, edges, visited, hops, out);
        visited.pop();
        hops.pop();
    }
}

fn is_acyclic(conditions: &[JoinCondition]) -> bool {
    let edges: BTreeSet<JoinCondition> = conditions.iter().map(JoinCondition::canonical).collect();
    let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
    fn find<'a>(parent: &mut BTreeMap<&'a str, &'a str>, x: &'a str) -> &'a str {
        let p = *parent.entry(x).or_insert(x);
        if p == x {
            return x;
        }
        let root = find(parent, p);
        parent.insert(x, root);
        root
    }
    for c in &edges {
        let (a, b) = (find(&mut parent, &c.left), find(&mut parent, &c.right));
        if a == b {
            return false;
        }
        parent.insert(a, b);
    }
    true
}

pub fn enumerate_join_paths(source: &JoinSource) -> Result<PathSet, HybridError> {
    let mut set = PathSet::default();
    match source {
        JoinSource::Workload(queries) => {
            for q in queries {
                simple_paths(q).into_iter().for_each(|p| set.insert(p));
            }
        }
        JoinSource::Schema(conds) => {
            if !is_acyclic(conds) {
                return Err(HybridError::CyclicSchema);
            }
            simple_paths(conds).into_iter().for_each(|p| set.insert(p));
        }
    }
    Ok(set)
}
