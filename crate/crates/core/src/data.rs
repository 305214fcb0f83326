//! Relational data model, sensitivity classification and the
//! sensitive / non-sensitive split of a relation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the optional leading CSV column that carries row identifiers.
pub const ID_COLUMN: &str = "__id";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown attribute `{attribute}` in relation `{relation}`")]
    UnknownAttribute { relation: String, attribute: String },
    #[error("row `{row}` has {got} values but relation `{relation}` has {expected} attributes")]
    Arity { relation: String, row: String, got: usize, expected: usize },
    #[error("duplicate row id `{0}`")]
    DuplicateRowId(String),
    #[error("duplicate attribute `{0}` in schema")]
    DuplicateAttribute(String),
    #[error("empty value in row `{row}`, attribute `{attribute}`")]
    EmptyValue { row: String, attribute: String },
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A scalar attribute value. Relations are NULL-free.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(String),
}

impl Value {
    /// Parses a textual cell: integers become [`Value::Int`], everything else a string.
    pub fn parse(text: &str) -> Value {
        match text.trim().parse::<i64>() {
            Ok(v) => Value::Int(v),
            Err(_) => Value::Str(text.to_string()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

/// Row identifier (`t1`, `t2`, ...). Ordered naturally so that `t10` sorts after `t9`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowId(pub String);

impl RowId {
    pub fn new(id: impl Into<String>) -> Self {
        RowId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn natural_key(&self) -> (&str, Option<u64>, &str) {
        let digits = self.0.len() - self.0.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        let (prefix, suffix) = self.0.split_at(self.0.len() - digits);
        (prefix, suffix.parse().ok(), suffix)
    }
}

impl Ord for RowId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.natural_key().cmp(&other.natural_key())
    }
}

impl PartialOrd for RowId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A tuple. `values` is positional with respect to the owning relation's schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub id: RowId,
    pub values: Vec<Value>,
    pub sensitive: bool,
}

impl Row {
    pub fn new(id: impl Into<String>, values: Vec<Value>) -> Self {
        Row { id: RowId::new(id), values, sensitive: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub schema: Vec<String>,
    pub rows: Vec<Row>,
}

impl Relation {
    /// Builds a relation, checking arity, row-id uniqueness and the NULL-free rule.
    pub fn new(name: impl Into<String>, schema: Vec<String>, rows: Vec<Row>) -> Result<Self, DataError> {
        let name = name.into();
        let mut seen_attrs = HashSet::new();
        for attr in &schema {
            if !seen_attrs.insert(attr.as_str()) {
                return Err(DataError::DuplicateAttribute(attr.clone()));
            }
        }
        let mut seen = HashSet::new();
        for row in &rows {
            if row.values.len() != schema.len() {
                return Err(DataError::Arity {
                    relation: name,
                    row: row.id.0.clone(),
                    got: row.values.len(),
                    expected: schema.len(),
                });
            }
            if !seen.insert(&row.id) {
                return Err(DataError::DuplicateRowId(row.id.0.clone()));
            }
        }
        Ok(Relation { name, schema, rows })
    }

    pub fn empty(name: impl Into<String>, schema: Vec<String>) -> Self {
        Relation { name: name.into(), schema, rows: Vec::new() }
    }

    pub fn attr_index(&self, attr: &str) -> Result<usize, DataError> {
        self.schema.iter().position(|a| a == attr).ok_or_else(|| DataError::UnknownAttribute {
            relation: self.name.clone(),
            attribute: attr.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, id: &RowId) -> Option<&Row> {
        self.rows.iter().find(|r| &r.id == id)
    }

    pub fn ids(&self) -> BTreeSet<RowId> {
        self.rows.iter().map(|r| r.id.clone()).collect()
    }

    /// Distinct values of `attr` in first-occurrence order.
    pub fn distinct_values(&self, attr: &str) -> Result<Vec<Value>, DataError> {
        let idx = self.attr_index(attr)?;
        let mut seen = HashSet::new();
        Ok(self
            .rows
            .iter()
            .filter(|r| seen.insert(&r.values[idx]))
            .map(|r| r.values[idx].clone())
            .collect())
    }

    pub fn value_counts(&self, attr: &str) -> Result<BTreeMap<Value, usize>, DataError> {
        let idx = self.attr_index(attr)?;
        let mut counts = BTreeMap::new();
        for row in &self.rows {
            *counts.entry(row.values[idx].clone()).or_insert(0) += 1;
        }
        Ok(counts)
    }

    /// Projects every row onto `attrs`, keeping ids and sensitivity flags.
    pub fn project(&self, attrs: &[String]) -> Result<Relation, DataError> {
        let idx: Vec<usize> = attrs.iter().map(|a| self.attr_index(a)).collect::<Result<_, _>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| Row {
                id: r.id.clone(),
                values: idx.iter().map(|&i| r.values[i].clone()).collect(),
                sensitive: r.sensitive,
            })
            .collect();
        Ok(Relation { name: self.name.clone(), schema: attrs.to_vec(), rows })
    }

    /// Reads a relation from CSV. The header names the attributes; an optional
    /// leading `__id` column supplies row ids, otherwise rows are numbered `t1..tn`.
    pub fn from_csv_reader<R: Read>(name: impl Into<String>, reader: R) -> Result<Relation, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let has_id = headers.first().map(|h| h == ID_COLUMN).unwrap_or(false);
        let schema: Vec<String> = headers.iter().skip(usize::from(has_id)).cloned().collect();
        let mut rows = Vec::new();
        for (n, record) in rdr.records().enumerate() {
            let record = record?;
            let mut fields = record.iter();
            let id = if has_id {
                fields.next().unwrap_or_default().trim().to_string()
            } else {
                format!("t{}", n + 1)
            };
            let values: Vec<Value> = fields.map(Value::parse).collect();
            for (attr, v) in schema.iter().zip(&values) {
                if matches!(v, Value::Str(s) if s.is_empty()) {
                    return Err(DataError::EmptyValue { row: id, attribute: attr.clone() });
                }
            }
            rows.push(Row::new(id, values));
        }
        Relation::new(name, schema, rows)
    }

    pub fn from_csv_path(name: impl Into<String>, path: &Path) -> Result<Relation, DataError> {
        Relation::from_csv_reader(name, std::fs::File::open(path)?)
    }

    /// Writes the relation as CSV with a leading `__id` column.
    pub fn to_csv_string(&self) -> Result<String, DataError> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec![ID_COLUMN.to_string()];
        header.extend(self.schema.iter().cloned());
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.id.0.clone()];
            rec.extend(row.values.iter().map(Value::to_string));
            wtr.write_record(&rec)?;
        }
        let bytes = wtr.into_inner().map_err(|e| DataError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=", alias = "<>")]
    Ne,
}

impl Comparator {
    pub fn holds(self, lhs: &Value, rhs: &Value) -> bool {
        match self {
            Comparator::Eq => lhs == rhs,
            Comparator::Ne => lhs != rhs,
        }
    }
}

/// One horizontal sensitivity rule: `attribute <op> literal`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub attribute: String,
    pub op: Comparator,
    #[serde(deserialize_with = "deserialize_literal")]
    pub value: Value,
    /// Restricts the rule to one relation; `None` applies it wherever the attribute exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
}

fn deserialize_literal<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Value, D::Error> {
    Ok(match Value::deserialize(d)? {
        Value::Str(s) => Value::parse(&s),
        v => v,
    })
}

/// Rows matching any rule are sensitive; `sensitive_attributes` are sensitive
/// in every row and are split off into a separate key + attribute relation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitivityPolicy {
    #[serde(default, rename = "rule")]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub sensitive_attributes: Vec<String>,
    /// Key attribute carried into the vertical relation. Defaults to the first
    /// non-sensitive attribute of the schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

impl SensitivityPolicy {
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::Policy(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, DataError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn is_trivial(&self) -> bool {
        self.rules.is_empty() && self.sensitive_attributes.is_empty()
    }

    fn rules_for<'a>(&'a self, relation: &'a str) -> impl Iterator<Item = &'a Rule> + 'a {
        self.rules
            .iter()
            .filter(move |r| r.relation.as_deref().is_none_or(|name| name == relation))
    }

    /// Tags every row of `relation` with its sensitivity flag. Rules naming an
    /// attribute absent from the schema are skipped unless they are bound to
    /// this relation explicitly.
    pub fn mark(&self, relation: &Relation) -> Result<Relation, DataError> {
        let mut compiled = Vec::new();
        for rule in self.rules_for(&relation.name) {
            match relation.attr_index(&rule.attribute) {
                Ok(i) => compiled.push((i, rule)),
                Err(e) if rule.relation.is_some() => return Err(e),
                Err(_) => {}
            }
        }
        let mut out = relation.clone();
        for row in &mut out.rows {
            row.sensitive = compiled.iter().any(|(i, r)| r.op.holds(&row.values[*i], &r.value));
        }
        Ok(out)
    }
}

/// Per-value `(sensitive_count, nonsensitive_count)` for each attribute.
pub type OwnerMetadata = BTreeMap<String, BTreeMap<Value, (usize, usize)>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionedDataset {
    pub sensitive: Relation,
    pub nonsensitive: Relation,
    /// Key + sensitive-attribute projection, present when the policy names sensitive attributes.
    pub vertical: Option<Relation>,
    pub owner_metadata: OwnerMetadata,
}

/// Splits `relation` by `policy`.
///
/// Horizontally sensitive rows go to `sensitive`, the rest to `nonsensitive`;
/// both drop the sensitive attributes. Those attributes are emitted together
/// with the key as an all-sensitive `vertical` relation holding one row per
/// distinct (key, attributes) tuple, labelled with the id of its first occurrence.
pub fn classify_relation(relation: &Relation, policy: &SensitivityPolicy) -> Result<PartitionedDataset, DataError> {
    for rule in &policy.rules {
        if rule.relation.as_deref().is_none_or(|n| n == relation.name) {
            relation.attr_index(&rule.attribute)?;
        }
    }
    for attr in &policy.sensitive_attributes {
        relation.attr_index(attr)?;
    }
    let marked = policy.mark(relation)?;

    let horizontal: Vec<String> = relation
        .schema
        .iter()
        .filter(|a| !policy.sensitive_attributes.contains(a))
        .cloned()
        .collect();

    let vertical = if policy.sensitive_attributes.is_empty() {
        None
    } else {
        let key = match &policy.key {
            Some(k) => {
                relation.attr_index(k)?;
                k.clone()
            }
            None => horizontal
                .first()
                .cloned()
                .ok_or_else(|| DataError::Policy("every attribute is sensitive; no key left".into()))?,
        };
        let mut attrs = vec![key];
        attrs.extend(policy.sensitive_attributes.iter().cloned());
        let projected = relation.project(&attrs)?;
        let mut seen = HashSet::new();
        let rows = projected
            .rows
            .into_iter()
            .filter(|r| seen.insert(r.values.clone()))
            .map(|mut r| {
                r.sensitive = true;
                r
            })
            .collect();
        Some(Relation { name: format!("{}_attrs", relation.name), schema: attrs, rows })
    };

    let horizontal_rel = marked.project(&horizontal)?;
    let (s_rows, ns_rows): (Vec<Row>, Vec<Row>) = horizontal_rel.rows.into_iter().partition(|r| r.sensitive);
    let sensitive = Relation { name: format!("{}_s", relation.name), schema: horizontal.clone(), rows: s_rows };
    let nonsensitive = Relation { name: format!("{}_ns", relation.name), schema: horizontal, rows: ns_rows };
    let owner_metadata = build_metadata(&sensitive, &nonsensitive);
    Ok(PartitionedDataset { sensitive, nonsensitive, vertical, owner_metadata })
}

fn build_metadata(sensitive: &Relation, nonsensitive: &Relation) -> OwnerMetadata {
    let mut meta: OwnerMetadata = BTreeMap::new();
    for (idx, attr) in sensitive.schema.iter().enumerate() {
        let counts = meta.entry(attr.clone()).or_default();
        for row in &sensitive.rows {
            counts.entry(row.values[idx].clone()).or_insert((0, 0)).0 += 1;
        }
        for row in &nonsensitive.rows {
            counts.entry(row.values[idx].clone()).or_insert((0, 0)).1 += 1;
        }
    }
    meta
}

/// Values of one attribute that break the one-sensitive / one-non-sensitive restriction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseCaseReport {
    pub attribute: String,
    pub violations: BTreeMap<Value, (usize, usize)>,
}

impl BaseCaseReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl PartitionedDataset {
    /// Rebuilds a dataset from already-split relations, recomputing metadata.
    pub fn from_parts(sensitive: Relation, nonsensitive: Relation, vertical: Option<Relation>) -> Result<Self, DataError> {
        if sensitive.schema != nonsensitive.schema {
            return Err(DataError::Policy("sensitive and non-sensitive schemas differ".into()));
        }
        let s_ids = sensitive.ids();
        if let Some(dup) = nonsensitive.rows.iter().find(|r| s_ids.contains(&r.id)) {
            return Err(DataError::DuplicateRowId(dup.id.0.clone()));
        }
        let owner_metadata = build_metadata(&sensitive, &nonsensitive);
        Ok(PartitionedDataset { sensitive, nonsensitive, vertical, owner_metadata })
    }

    pub fn validate_base_case(&self, attr: &str) -> Result<BaseCaseReport, DataError> {
        self.sensitive.attr_index(attr)?;
        let violations = self.owner_metadata[attr]
            .iter()
            .filter(|(_, &(s, ns))| s > 1 || ns > 1)
            .map(|(v, &c)| (v.clone(), c))
            .collect();
        Ok(BaseCaseReport { attribute: attr.to_string(), violations })
    }

    /// Distinct `attr` values of the sensitive side, in row order.
    pub fn sensitive_values(&self, attr: &str) -> Result<Vec<Value>, DataError> {
        self.sensitive.distinct_values(attr)
    }

    pub fn nonsensitive_values(&self, attr: &str) -> Result<Vec<Value>, DataError> {
        self.nonsensitive.distinct_values(attr)
    }

    /// All rows of both sides matching `attr = value`, sorted by id (the plaintext oracle).
    pub fn oracle_select(&self, attr: &str, value: &Value) -> Result<Vec<Row>, DataError> {
        let idx = self.sensitive.attr_index(attr)?;
        let mut rows: Vec<Row> = self
            .sensitive
            .rows
            .iter()
            .chain(&self.nonsensitive.rows)
            .filter(|r| &r.values[idx] == value)
            .cloned()
            .collect();
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(rows)
    }

    pub fn knows(&self, attr: &str, value: &Value) -> bool {
        self.owner_metadata.get(attr).is_some_and(|m| m.contains_key(value))
    }
}
