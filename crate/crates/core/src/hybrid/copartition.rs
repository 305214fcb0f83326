//! Co-partitions and the CPT annotation of private-side rows.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{HybridDataset, HybridError, JoinPath, PathSet};
use crate::data::{Row, RowId, ID_COLUMN};

/// Non-sensitive rows of a path's target that join at least one sensitive
/// row of the path's source along the path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoPartition {
    pub path: JoinPath,
    pub members: BTreeSet<RowId>,
}

pub fn compute_copartition(target: &str, path: &JoinPath, ds: &HybridDataset) -> Result<CoPartition, HybridError> {
    if path.target() != target {
        return Err(HybridError::PathTarget { relation: target.to_string(), target: path.id() });
    }
    let mut frontier: Vec<&Row> = ds.relation(path.source())?.rows.iter().filter(|r| r.sensitive).collect();
    for hop in path.hops() {
        let from = ds.relation(&hop.from)?;
        let to = ds.relation(&hop.to)?;
        let fi = from.attr_index(&hop.from_attr)?;
        let ti = to.attr_index(&hop.to_attr)?;
        let keys: HashSet<_> = frontier.iter().map(|r| &r.values[fi]).collect();
        frontier = to.rows.iter().filter(|r| keys.contains(&r.values[ti])).collect();
    }
    let members = frontier.into_iter().filter(|r| !r.sensitive).map(|r| r.id.clone()).collect();
    Ok(CoPartition { path: path.clone(), members })
}

/// Value of a row's CPT column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cpt {
    Sens,
    Paths(BTreeSet<String>),
}

impl fmt::Display for Cpt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cpt::Sens => f.write_str("sens"),
            Cpt::Paths(ids) => f.write_str(&ids.iter().cloned().collect::<Vec<_>>().join(";")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CptRow {
    pub row: Row,
    pub cpt: Cpt,
}

fn annotate(rows: &[Row], cps: &[&CoPartition]) -> Vec<CptRow> {
    rows.iter()
        .map(|row| {
            let cpt = if row.sensitive {
                Cpt::Sens
            } else {
                Cpt::Paths(cps.iter().filter(|cp| cp.members.contains(&row.id)).map(|cp| cp.path.id()).collect())
            };
            CptRow { row: row.clone(), cpt }
        })
        .collect()
}

/// CPT column for every row of `relation`, over the paths of `paths` ending there.
pub fn annotate_cpt(relation: &str, paths: &PathSet, ds: &HybridDataset) -> Result<Vec<CptRow>, HybridError> {
    let rel = ds.relation(relation)?;
    let cps = paths.targeting(relation).map(|p| compute_copartition(relation, p, ds)).collect::<Result<Vec<_>, _>>()?;
    Ok(annotate(&rel.rows, &cps.iter().collect::<Vec<_>>()))
}

/// A dataset with co-partitions computed once for a path set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Materialized {
    dataset: HybridDataset,
    paths: PathSet,
    copartitions: BTreeMap<String, CoPartition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationStats {
    pub relation: String,
    pub sensitive: usize,
    pub nonsensitive: usize,
    /// Non-sensitive rows stored privately because of some co-partition.
    pub copartitioned: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopartitionStats {
    pub paths: usize,
    pub relations: Vec<RelationStats>,
    pub total_rows: usize,
    pub private_rows: usize,
    /// Co-partitioned rows as a fraction of all rows.
    pub copartitioned_fraction: f64,
}

impl Materialized {
    pub fn build(dataset: HybridDataset, paths: PathSet) -> Result<Self, HybridError> {
        let mut copartitions = BTreeMap::new();
        for p in paths.iter() {
            for hop in p.hops() {
                dataset.check_condition(&super::JoinCondition::new(&hop.from, &hop.from_attr, &hop.to, &hop.to_attr))?;
            }
            copartitions.insert(p.id(), compute_copartition(p.target(), p, &dataset)?);
        }
        Ok(Materialized { dataset, paths, copartitions })
    }

    pub fn dataset(&self) -> &HybridDataset {
        &self.dataset
    }

    pub fn paths(&self) -> &PathSet {
        &self.paths
    }

    pub fn copartition(&self, path_id: &str) -> Option<&CoPartition> {
        self.copartitions.get(path_id)
    }

    pub fn copartitions(&self) -> impl Iterator<Item = &CoPartition> {
        self.copartitions.values()
    }

    /// Non-sensitive rows of `relation` in any co-partition.
    pub fn copartitioned_rows(&self, relation: &str) -> BTreeSet<RowId> {
        self.copartitions.values().filter(|cp| cp.path.target() == relation).flat_map(|cp| cp.members.iter().cloned()).collect()
    }

    pub fn cpt(&self, relation: &str) -> Result<Vec<CptRow>, HybridError> {
        let rel = self.dataset.relation(relation)?;
        let cps: Vec<&CoPartition> = self.copartitions.values().filter(|cp| cp.path.target() == relation).collect();
        Ok(annotate(&rel.rows, &cps))
    }

    /// The private-cloud copy of `relation`: sensitive rows and co-partitioned
    /// rows, with a trailing `cpt` column.
    pub fn private_csv(&self, relation: &str) -> Result<String, HybridError> {
        let rel = self.dataset.relation(relation)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![ID_COLUMN.to_string()];
        header.extend(rel.schema.iter().cloned());
        header.push("cpt".into());
        w.write_record(&header).map_err(crate::data::DataError::from)?;
        for cr in self.cpt(relation)? {
            if matches!(&cr.cpt, Cpt::Paths(p) if p.is_empty()) {
                continue;
            }
            let mut rec = vec![cr.row.id.to_string()];
            rec.extend(cr.row.values.iter().map(ToString::to_string));
            rec.push(cr.cpt.to_string());
            w.write_record(&rec).map_err(crate::data::DataError::from)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::data::DataError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn stats(&self) -> CopartitionStats {
        let relations: Vec<RelationStats> = self
            .dataset
            .relations()
            .map(|r| {
                let sensitive = r.rows.iter().filter(|row| row.sensitive).count();
                RelationStats {
                    relation: r.name.clone(),
                    sensitive,
                    nonsensitive: r.len() - sensitive,
                    copartitioned: self.copartitioned_rows(&r.name).len(),
                }
            })
            .collect();
        let total_rows: usize = relations.iter().map(|s| s.sensitive + s.nonsensitive).sum();
        let copartitioned: usize = relations.iter().map(|s| s.copartitioned).sum();
        let sensitive: usize = relations.iter().map(|s| s.sensitive).sum();
        CopartitionStats {
            paths: self.paths.len(),
            relations,
            total_rows,
            private_rows: sensitive + copartitioned,
            copartitioned_fraction: if total_rows == 0 { 0.0 } else { copartitioned as f64 / total_rows as f64 },
        }
    }
}
