//! Partitioned selection on a public cloud.
//!
//! The owner turns a keyword query into an encrypted request over the
//! sensitive store and a plaintext request over the non-sensitive relation,
//! the cloud answers both independently, and the owner decrypts, filters out
//! bin false positives and merges.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::{BinError, BinLayout, BinPair};
use crate::crypto::{decrypt_row, CryptoError, EncryptedStore, KeyHandle, SearchEvent, SearchToken};
use crate::data::{DataError, PartitionedDataset, Relation, Row, RowId, Value};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("keyword `{0}` is unknown to the owner and was not sent")]
    UnknownKeyword(Value),
    #[error("query attribute `{got}` is not the binned attribute `{expected}`")]
    WrongAttribute { expected: String, got: String },
    #[error(transparent)]
    Bin(#[from] BinError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How the owner maps a keyword onto the two cloud requests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// The keyword itself is sent to both sides.
    Naive,
    /// The keyword is replaced by its sensitive and non-sensitive bins.
    QueryBinning,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionQuery {
    pub attribute: String,
    pub keyword: Value,
    /// Output columns; empty means all.
    #[serde(default)]
    pub projection: Vec<String>,
}

impl SelectionQuery {
    pub fn new(attribute: impl Into<String>, keyword: impl Into<Value>) -> Self {
        SelectionQuery { attribute: attribute.into(), keyword: keyword.into(), projection: Vec::new() }
    }

    pub fn project(mut self, cols: &[&str]) -> Self {
        self.projection = cols.iter().map(|c| c.to_string()).collect();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub enc_fetched: usize,
    pub plain_fetched: usize,
    pub filtered_out: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<(usize, usize)>,
}

impl QueryOutcome {
    pub fn row_ids(&self) -> Vec<RowId> {
        self.rows.iter().map(|r| r.id.clone()).collect()
    }
}

/// The two cloud requests derived from one keyword.
#[derive(Clone, Debug)]
pub struct PartitionedQuery {
    pub tokens: Vec<SearchToken>,
    /// Plaintext values requested from the non-sensitive side, sorted so the
    /// request order does not reveal slot positions.
    pub plain_values: Vec<Value>,
    pub bins: Option<BinPair>,
}

/// Splits a query into the sensitive token set and the non-sensitive value set of its bins.
pub fn partition_query(q: &SelectionQuery, layout: &BinLayout, key: &KeyHandle) -> Result<PartitionedQuery, ExecError> {
    let pair = layout.retrieve_bins(&q.keyword)?;
    let tokens = pair.sensitive.iter().map(|v| key.token(&q.attribute, v)).collect();
    let mut plain_values = pair.nonsensitive.clone();
    plain_values.sort();
    Ok(PartitionedQuery { tokens, plain_values, bins: Some(pair) })
}

/// Exact-match filter on `attr_index`, union by row id, ordered by row id.
pub fn merge_and_filter(enc_rows: Vec<Row>, plain_rows: Vec<Row>, w: &Value, attr_index: usize) -> Vec<Row> {
    let merged: BTreeMap<RowId, Row> = enc_rows
        .into_iter()
        .chain(plain_rows)
        .filter(|r| &r.values[attr_index] == w)
        .map(|r| (r.id.clone(), r))
        .collect();
    merged.into_values().collect()
}

/// Cloud-observable record of one plaintext request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlainEvent {
    pub session: u64,
    pub attribute: String,
    pub requested: Vec<Value>,
    pub returned: Vec<RowId>,
}

/// The non-sensitive relation as held by the cloud.
#[derive(Debug)]
pub struct PlaintextStore {
    relation: Relation,
    scan_counter: AtomicU64,
    transfer_counter: AtomicU64,
    log: Mutex<Vec<PlainEvent>>,
}

impl PlaintextStore {
    pub fn new(relation: Relation) -> Self {
        PlaintextStore { relation, scan_counter: AtomicU64::new(0), transfer_counter: AtomicU64::new(0), log: Mutex::new(Vec::new()) }
    }

    pub fn relation(&self) -> &Relation {
        &self.relation
    }

    /// Rows whose `attribute` is one of `values`, in storage order.
    pub fn search(&self, session: u64, attribute: &str, values: &[Value]) -> Result<Vec<Row>, DataError> {
        let idx = self.relation.attr_index(attribute)?;
        let wanted: BTreeSet<&Value> = values.iter().collect();
        let rows: Vec<Row> = self.relation.rows.iter().filter(|r| wanted.contains(&r.values[idx])).cloned().collect();
        self.scan_counter.fetch_add(values.len() as u64, Ordering::SeqCst);
        self.transfer_counter.fetch_add(rows.len() as u64, Ordering::SeqCst);
        self.log.lock().expect("plaintext log poisoned").push(PlainEvent {
            session,
            attribute: attribute.to_string(),
            requested: values.to_vec(),
            returned: rows.iter().map(|r| r.id.clone()).collect(),
        });
        Ok(rows)
    }

    /// Number of predicate lookups served.
    pub fn lookups(&self) -> u64 {
        self.scan_counter.load(Ordering::SeqCst)
    }

    pub fn transferred(&self) -> u64 {
        self.transfer_counter.load(Ordering::SeqCst)
    }

    pub fn log(&self) -> Vec<PlainEvent> {
        self.log.lock().expect("plaintext log poisoned").clone()
    }
}

/// Everything the cloud has logged, as seen by an observer of the cloud.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudEvents {
    pub encrypted: Vec<SearchEvent>,
    pub plaintext: Vec<PlainEvent>,
}

#[derive(Debug)]
pub struct PublicCloud {
    pub encrypted: EncryptedStore,
    pub plaintext: PlaintextStore,
}

impl PublicCloud {
    pub fn events(&self) -> CloudEvents {
        CloudEvents { encrypted: self.encrypted.audit_log(), plaintext: self.plaintext.log() }
    }
}

/// Adds one dummy row per padding placeholder so placeholder tokens and values
/// fetch a record like any other bin member. Dummy rows carry `-` in every
/// other attribute.
pub fn pad_dataset(ds: &PartitionedDataset, attr: &str, layout: &BinLayout) -> Result<PartitionedDataset, DataError> {
    let idx = ds.sensitive.attr_index(attr)?;
    let width = ds.sensitive.schema.len();
    let dummy = |id: String, v: &Value, sensitive: bool| {
        let mut values = vec![Value::from("-"); width];
        values[idx] = v.clone();
        Row { id: RowId(id), values, sensitive }
    };
    let (ps, pns) = layout.placeholders();
    let mut sensitive = ds.sensitive.clone();
    sensitive.rows.extend(ps.iter().enumerate().map(|(k, v)| dummy(format!("pad_s{k}"), v, true)));
    let mut nonsensitive = ds.nonsensitive.clone();
    nonsensitive.rows.extend(pns.iter().enumerate().map(|(k, v)| dummy(format!("pad_ns{k}"), v, false)));
    PartitionedDataset::from_parts(sensitive, nonsensitive, ds.vertical.clone())
}

/// An owner and the cloud it outsourced one binned attribute to.
#[derive(Debug)]
pub struct Deployment {
    protocol: Protocol,
    attribute: String,
    schema: Vec<String>,
    keywords: BTreeSet<Value>,
    layout: Option<BinLayout>,
    key: KeyHandle,
    cloud: PublicCloud,
    sessions: AtomicU64,
}

impl Deployment {
    /// Query-binning deployment. Padding placeholders in `layout` get dummy rows.
    pub fn query_binning(ds: &PartitionedDataset, attribute: &str, layout: BinLayout, key_seed: u64) -> Result<Self, ExecError> {
        let padded;
        let ds = if layout.placeholders().0.is_empty() && layout.placeholders().1.is_empty() {
            ds
        } else {
            padded = pad_dataset(ds, attribute, &layout)?;
            &padded
        };
        Self::build(Protocol::QueryBinning, ds, attribute, Some(layout), key_seed)
    }

    pub fn naive(ds: &PartitionedDataset, attribute: &str, key_seed: u64) -> Result<Self, ExecError> {
        Self::build(Protocol::Naive, ds, attribute, None, key_seed)
    }

    fn build(protocol: Protocol, ds: &PartitionedDataset, attribute: &str, layout: Option<BinLayout>, key_seed: u64) -> Result<Self, ExecError> {
        let key = KeyHandle::from_seed(key_seed);
        let encrypted = EncryptedStore::build(&ds.sensitive, &key, &[attribute])?;
        let plaintext = PlaintextStore::new(ds.nonsensitive.clone());
        let mut keywords: BTreeSet<Value> = ds
            .owner_metadata
            .get(attribute)
            .ok_or_else(|| DataError::UnknownAttribute { relation: ds.sensitive.name.clone(), attribute: attribute.to_string() })?
            .keys()
            .cloned()
            .collect();
        if let Some(layout) = &layout {
            keywords.extend(layout.domain());
            keywords.retain(|v| !layout.is_placeholder(v));
        }
        Ok(Deployment {
            protocol,
            attribute: attribute.to_string(),
            schema: ds.sensitive.schema.clone(),
            keywords,
            layout,
            key,
            cloud: PublicCloud { encrypted, plaintext },
            sessions: AtomicU64::new(0),
        })
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    pub fn layout(&self) -> Option<&BinLayout> {
        self.layout.as_ref()
    }

    pub fn cloud(&self) -> &PublicCloud {
        &self.cloud
    }

    /// Keywords the owner will accept, in value order: every value of the
    /// attribute in the data plus any further value the layout was built over.
    pub fn keywords(&self) -> Vec<Value> {
        self.keywords.iter().cloned().collect()
    }

    /// Owner-side: the row id behind each encrypted store position.
    pub fn position_labels(&self) -> Result<Vec<RowId>, CryptoError> {
        self.cloud.encrypted.records().iter().map(|c| decrypt_row(c, &self.key).map(|r| r.id)).collect()
    }

    /// Owner-side request planning; nothing is sent.
    pub fn plan(&self, q: &SelectionQuery) -> Result<PartitionedQuery, ExecError> {
        if q.attribute != self.attribute {
            return Err(ExecError::WrongAttribute { expected: self.attribute.clone(), got: q.attribute.clone() });
        }
        if !self.keywords.contains(&q.keyword) {
            return Err(ExecError::UnknownKeyword(q.keyword.clone()));
        }
        match (&self.protocol, &self.layout) {
            (Protocol::QueryBinning, Some(layout)) => partition_query(q, layout, &self.key),
            _ => Ok(PartitionedQuery {
                tokens: vec![self.key.token(&q.attribute, &q.keyword)],
                plain_values: vec![q.keyword.clone()],
                bins: None,
            }),
        }
    }

    /// Runs both sub-queries concurrently and merges at the owner.
    pub fn execute(&self, q: &SelectionQuery) -> Result<QueryOutcome, ExecError> {
        let plan = self.plan(q)?;
        let attr_index = self.schema.iter().position(|a| a == &self.attribute).expect("binned attribute in schema");
        let out_idx: Vec<usize> = if q.projection.is_empty() {
            (0..self.schema.len()).collect()
        } else {
            q.projection
                .iter()
                .map(|c| {
                    self.schema.iter().position(|a| a == c).ok_or_else(|| DataError::UnknownAttribute {
                        relation: self.cloud.plaintext.relation().name.clone(),
                        attribute: c.clone(),
                    })
                })
                .collect::<Result<_, _>>()?
        };

        let session = self.sessions.fetch_add(1, Ordering::SeqCst) + 1;
        let (enc, plain) = std::thread::scope(|scope| {
            let enc = scope.spawn(|| self.cloud.encrypted.search(session, &plan.tokens));
            let plain = self.cloud.plaintext.search(session, &self.attribute, &plan.plain_values);
            (enc.join().expect("encrypted search panicked"), plain)
        });
        let plain = plain?;
        let enc_fetched = enc.len();
        let plain_fetched = plain.len();
        let decrypted = enc.iter().map(|c| decrypt_row(c, &self.key)).collect::<Result<Vec<_>, _>>()?;
        let rows = merge_and_filter(decrypted, plain, &q.keyword, attr_index);
        let filtered_out = enc_fetched + plain_fetched - rows.len();
        let rows = rows
            .into_iter()
            .map(|r| Row { id: r.id, values: out_idx.iter().map(|&i| r.values[i].clone()).collect(), sensitive: r.sensitive })
            .collect();
        Ok(QueryOutcome {
            columns: out_idx.iter().map(|&i| self.schema[i].clone()).collect(),
            rows,
            enc_fetched,
            plain_fetched,
            filtered_out,
            bins: plan.bins.map(|b| (b.sb_index, b.nsb_index)),
        })
    }
}
