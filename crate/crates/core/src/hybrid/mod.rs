//! Hybrid-cloud split execution.
//!
//! Sensitive rows live on a private cloud, non-sensitive rows on a public
//! one. A query is rewritten into one public sub-query over non-sensitive
//! data and private sub-queries over sensitive data (plus co-partitioned
//! copies of non-sensitive rows), executed independently and merged once at
//! the private side.

mod copartition;
mod exec;
mod paths;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Relation, SensitivityPolicy};

pub use copartition::{annotate_cpt, compute_copartition, CoPartition, CopartitionStats, Cpt, CptRow, Materialized, RelationStats};
pub use exec::{
    execute_split_plan, guarded_join, split_equijoin, split_query, split_select_project, Counters, ExecutionReport, HybridQuery, JoinQuery,
    MergeOp, Partition, ResultRow, SelectQuery, Side, SplitMode, SplitPlan, SubInput, SubQuery, TransferEvent,
};
pub use paths::{enumerate_join_paths, Hop, JoinPath, JoinSource, PathSet};

#[derive(Debug, Error)]
pub enum HybridError {
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("duplicate relation `{0}`")]
    DuplicateRelation(String),
    #[error("join condition `{0}` joins a relation with itself")]
    SelfJoin(String),
    #[error("malformed join condition `{0}`: expected `R.a=S.b`")]
    MalformedCondition(String),
    #[error("join graph is cyclic; supply an explicit workload to bound path enumeration")]
    CyclicSchema,
    #[error("join query is empty")]
    EmptyJoin,
    #[error("join query is not connected: `{0}` shares no condition with the other relations")]
    Disconnected(String),
    #[error("path `{target}` is not a path ending at `{relation}`")]
    PathTarget { relation: String, target: String },
    #[error("co-partition for path `{0}` is not materialized; materialize co-partitions with a workload covering this query")]
    MissingCopartition(String),
    #[error("{side:?} store has no row `{row}` in `{relation}`")]
    MissingRow { side: Side, relation: String, row: String },
    #[error("merge integrity violated: result {0} produced by both clouds")]
    MergeIntegrity(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// An equijoin condition `left.left_attr = right.right_attr`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JoinCondition {
    pub left: String,
    pub left_attr: String,
    pub right: String,
    pub right_attr: String,
}

impl JoinCondition {
    pub fn new(left: impl Into<String>, left_attr: impl Into<String>, right: impl Into<String>, right_attr: impl Into<String>) -> Self {
        JoinCondition { left: left.into(), left_attr: left_attr.into(), right: right.into(), right_attr: right_attr.into() }
    }

    /// Parses `R.a=S.b`.
    pub fn parse(text: &str) -> Result<Self, HybridError> {
        let bad = || HybridError::MalformedCondition(text.to_string());
        let (l, r) = text.split_once('=').ok_or_else(bad)?;
        let (lr, la) = l.trim().split_once('.').ok_or_else(bad)?;
        let (rr, ra) = r.trim().split_once('.').ok_or_else(bad)?;
        if [lr, la, rr, ra].iter().any(|p| p.is_empty()) {
            return Err(bad());
        }
        let c = JoinCondition::new(lr, la, rr, ra);
        if c.left == c.right {
            return Err(HybridError::SelfJoin(text.to_string()));
        }
        Ok(c)
    }

    pub fn touches(&self, relation: &str) -> bool {
        self.left == relation || self.right == relation
    }

    /// Seen from `relation`: its own attribute, the other relation and that relation's attribute.
    pub fn from_side(&self, relation: &str) -> Option<(&str, &str, &str)> {
        if self.left == relation {
            Some((&self.left_attr, &self.right, &self.right_attr))
        } else if self.right == relation {
            Some((&self.right_attr, &self.left, &self.left_attr))
        } else {
            None
        }
    }

    /// Orientation-independent form, sides ordered by relation name.
    pub fn canonical(&self) -> JoinCondition {
        if (&self.left, &self.left_attr) <= (&self.right, &self.right_attr) {
            self.clone()
        } else {
            JoinCondition::new(&self.right, &self.right_attr, &self.left, &self.left_attr)
        }
    }
}

impl fmt::Display for JoinCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}={}.{}", self.left, self.left_attr, self.right, self.right_attr)
    }
}

/// Named relations whose rows carry sensitivity flags.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridDataset {
    relations: BTreeMap<String, Relation>,
}

impl HybridDataset {
    pub fn new(relations: Vec<Relation>) -> Result<Self, HybridError> {
        let mut map = BTreeMap::new();
        for r in relations {
            let name = r.name.clone();
            if map.insert(name.clone(), r).is_some() {
                return Err(HybridError::DuplicateRelation(name));
            }
        }
        Ok(HybridDataset { relations: map })
    }

    /// Marks every relation's rows with `policy` before building the dataset.
    pub fn with_policy(relations: Vec<Relation>, policy: &SensitivityPolicy) -> Result<Self, HybridError> {
        let marked = relations.iter().map(|r| policy.mark(r)).collect::<Result<Vec<_>, _>>()?;
        Self::new(marked)
    }

    pub fn relation(&self, name: &str) -> Result<&Relation, HybridError> {
        self.relations.get(name).ok_or_else(|| HybridError::UnknownRelation(name.to_string()))
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(String::as_str)
    }

    /// Checks that both sides of `c` name existing relations and attributes.
    pub fn check_condition(&self, c: &JoinCondition) -> Result<(), HybridError> {
        if c.left == c.right {
            return Err(HybridError::SelfJoin(c.to_string()));
        }
        self.relation(&c.left)?.attr_index(&c.left_attr)?;
        self.relation(&c.right)?.attr_index(&c.right_attr)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Row, Value};

    #[test]
    fn parse_condition() {
        let c = JoinCondition::parse("R.Region = S.Region").unwrap();
        assert_eq!(c, JoinCondition::new("R", "Region", "S", "Region"));
        assert_eq!(c.to_string(), "R.Region=S.Region");
        assert!(matches!(JoinCondition::parse("R.a=R.b"), Err(HybridError::SelfJoin(_))));
        assert!(matches!(JoinCondition::parse("Ra=S.b"), Err(HybridError::MalformedCondition(_))));
        assert!(matches!(JoinCondition::parse("R.a"), Err(HybridError::MalformedCondition(_))));
    }

    #[test]
    fn canonical_ignores_orientation() {
        let a = JoinCondition::new("S", "x", "R", "y");
        assert_eq!(a.canonical(), JoinCondition::new("R", "y", "S", "x"));
        assert_eq!(a.canonical(), a.canonical().canonical());
        assert_eq!(a.from_side("R"), Some(("y", "S", "x")));
        assert_eq!(a.from_side("T"), None);
    }

    #[test]
    fn duplicate_relation_rejected() {
        let r = Relation::new("R", vec!["A".into()], vec![Row::new("r1", vec![Value::Int(1)])]).unwrap();
        assert!(matches!(HybridDataset::new(vec![r.clone(), r]), Err(HybridError::DuplicateRelation(_))));
    }

    #[test]
    fn check_condition_validates_attributes() {
        let ds = crate::fixtures::rst();
        assert!(ds.check_condition(&crate::fixtures::rst_c()).is_ok());
        assert!(ds.check_condition(&JoinCondition::new("R", "Nope", "S", "Region")).is_err());
        assert!(ds.check_condition(&JoinCondition::new("Q", "Region", "S", "Region")).is_err());
    }
}
