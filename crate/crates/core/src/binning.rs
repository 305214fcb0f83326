//! Query binning: the sensitive/non-sensitive bin layout and keyword-to-bin
//! resolution.
//!
//! Sensitive values are shuffled and dealt round-robin into `x` sensitive bins
//! (`SB`), giving each value a slot `(i, j)`. A value's non-sensitive
//! counterpart, when it has one, is placed in non-sensitive bin `NSB[j]` at
//! slot `i`; the remaining non-sensitive values fill the free NSB slots, at
//! most `x` per bin. A keyword at `SB[i][j]` resolves to `(SB[i], NSB[j])` and
//! one at `NSB[i][j]` to `(SB[j], NSB[i])`, so a value present on both sides
//! resolves to the same pair from either side.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Value;

pub const LAYOUT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BinError {
    #[error("value `{value}` occurs {count} times on the {side} side")]
    BaseCase { value: Value, side: &'static str, count: usize },
    #[error("degenerate layout: {0}")]
    Degenerate(String),
    #[error("keyword `{0}` is not in the layout")]
    UnknownKeyword(Value),
    #[error("layout document: {0}")]
    Document(String),
}

/// Factor pair `(x, y)` of `n` with `x >= y`, `x * y = n` and `x - y` minimal.
pub fn approx_sq_factors(n: usize) -> (usize, usize) {
    assert!(n >= 1, "approx_sq_factors needs n >= 1");
    let mut y = (n as f64).sqrt() as usize;
    while y * y > n {
        y -= 1;
    }
    while (y + 1) * (y + 1) <= n {
        y += 1;
    }
    while !n.is_multiple_of(y) {
        y -= 1;
    }
    (n / y, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seed")]
pub enum Permutation {
    /// Seeded Fisher-Yates shuffle of the sensitive values.
    Seeded(u64),
    /// The caller supplied the sensitive values already permuted.
    Pinned,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinOptions {
    /// Fill short sensitive bins and empty non-sensitive slots with placeholder
    /// values so every bin of a side has the same size.
    pub padding: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub value: Value,
    pub bin: usize,
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDiagnostics {
    pub sb_sizes: Vec<usize>,
    pub nsb_sizes: Vec<usize>,
    /// All sensitive bins hold the same number of values.
    pub uniform_sensitive: bool,
    pub uniform_nonsensitive: bool,
    /// Some sensitive bin holds more than `y` values (more sensitive than non-sensitive values).
    pub overflow: bool,
}

/// The output of bin creation. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinLayout {
    x: usize,
    y: usize,
    sb: Vec<Vec<Value>>,
    nsb: Vec<Vec<Option<Value>>>,
    pos_s: BTreeMap<Value, (usize, usize)>,
    pos_ns: BTreeMap<Value, (usize, usize)>,
    permutation: Permutation,
    options: BinOptions,
    placeholders_s: Vec<Value>,
    placeholders_ns: Vec<Value>,
}

/// The bins fetched for one keyword.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinPair {
    pub sb_index: usize,
    pub nsb_index: usize,
    pub sensitive: Vec<Value>,
    pub nonsensitive: Vec<Value>,
}

fn check_distinct(values: &[Value], side: &'static str) -> Result<(), BinError> {
    let mut seen = HashSet::new();
    for v in values {
        if !seen.insert(v) {
            let count = values.iter().filter(|w| *w == v).count();
            return Err(BinError::BaseCase { value: v.clone(), side, count });
        }
    }
    Ok(())
}

/// Builds a layout, shuffling the sensitive values with `seed`.
pub fn create_bins(s_vals: &[Value], ns_vals: &[Value], seed: u64, options: BinOptions) -> Result<BinLayout, BinError> {
    check_distinct(s_vals, "sensitive")?;
    let mut order = s_vals.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    build(order, ns_vals, Permutation::Seeded(seed), options)
}

/// Builds a layout from sensitive values that are already in permuted order.
pub fn create_bins_pinned(s_order: &[Value], ns_vals: &[Value], options: BinOptions) -> Result<BinLayout, BinError> {
    build(s_order.to_vec(), ns_vals, Permutation::Pinned, options)
}

fn build(order: Vec<Value>, ns_vals: &[Value], permutation: Permutation, options: BinOptions) -> Result<BinLayout, BinError> {
    check_distinct(&order, "sensitive")?;
    check_distinct(ns_vals, "non-sensitive")?;
    if ns_vals.is_empty() {
        return Err(BinError::Degenerate("no non-sensitive values to bin against".into()));
    }
    let (x, y) = approx_sq_factors(ns_vals.len());

    let mut sb: Vec<Vec<Value>> = vec![Vec::new(); x];
    for (i, v) in order.into_iter().enumerate() {
        sb[i % x].push(v);
    }
    // x * y = |NS|, so y bins of x slots hold every non-sensitive value; extra
    // bins only appear when a sensitive bin outgrew y.
    let longest = sb.iter().map(Vec::len).max().unwrap_or(0);
    let nsb_count = y.max(longest);
    let mut nsb: Vec<Vec<Option<Value>>> = vec![vec![None; x]; nsb_count];

    let ns_set: HashSet<&Value> = ns_vals.iter().collect();
    let mut placed: HashSet<Value> = HashSet::new();
    for (i, bin) in sb.iter().enumerate() {
        for (j, v) in bin.iter().enumerate() {
            if ns_set.contains(v) {
                nsb[j][i] = Some(v.clone());
                placed.insert(v.clone());
            }
        }
    }
    let mut rest = ns_vals.iter().filter(|v| !placed.contains(*v));
    'fill: for bin in nsb.iter_mut() {
        for slot in bin.iter_mut().filter(|s| s.is_none()) {
            match rest.next() {
                Some(v) => *slot = Some(v.clone()),
                None => break 'fill,
            }
        }
    }

    let mut placeholders_s = Vec::new();
    let mut placeholders_ns = Vec::new();
    if options.padding {
        let width = sb.iter().map(Vec::len).max().unwrap_or(0).max(y);
        for bin in sb.iter_mut() {
            while bin.len() < width {
                let p = Value::Str(format!("__pad_s{}", placeholders_s.len()));
                placeholders_s.push(p.clone());
                bin.push(p);
            }
        }
        for bin in nsb.iter_mut() {
            for slot in bin.iter_mut().filter(|s| s.is_none()) {
                let p = Value::Str(format!("__pad_ns{}", placeholders_ns.len()));
                placeholders_ns.push(p.clone());
                *slot = Some(p);
            }
        }
    }

    BinLayout::assemble(x, y, sb, nsb, permutation, options, placeholders_s, placeholders_ns)
}

impl BinLayout {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        x: usize,
        y: usize,
        sb: Vec<Vec<Value>>,
        nsb: Vec<Vec<Option<Value>>>,
        permutation: Permutation,
        options: BinOptions,
        placeholders_s: Vec<Value>,
        placeholders_ns: Vec<Value>,
    ) -> Result<Self, BinError> {
        let mut pos_s = BTreeMap::new();
        for (i, bin) in sb.iter().enumerate() {
            for (j, v) in bin.iter().enumerate() {
                if pos_s.insert(v.clone(), (i, j)).is_some() {
                    return Err(BinError::Document(format!("sensitive value `{v}` placed twice")));
                }
            }
        }
        let mut pos_ns = BTreeMap::new();
        for (i, bin) in nsb.iter().enumerate() {
            for (j, v) in bin.iter().enumerate() {
                if let Some(v) = v {
                    if pos_ns.insert(v.clone(), (i, j)).is_some() {
                        return Err(BinError::Document(format!("non-sensitive value `{v}` placed twice")));
                    }
                }
            }
        }
        Ok(BinLayout { x, y, sb, nsb, pos_s, pos_ns, permutation, options, placeholders_s, placeholders_ns })
    }

    /// Number of sensitive bins, and the slot count of every non-sensitive bin.
    pub fn x(&self) -> usize {
        self.x
    }

    /// Nominal sensitive bin size, and the number of non-sensitive bins.
    pub fn y(&self) -> usize {
        self.y
    }

    pub fn sensitive_bins(&self) -> &[Vec<Value>] {
        &self.sb
    }

    pub fn nonsensitive_bins(&self) -> &[Vec<Option<Value>>] {
        &self.nsb
    }

    pub fn sensitive_bin(&self, i: usize) -> Vec<Value> {
        self.sb.get(i).cloned().unwrap_or_default()
    }

    pub fn nonsensitive_bin(&self, i: usize) -> Vec<Value> {
        self.nsb.get(i).map(|b| b.iter().flatten().cloned().collect()).unwrap_or_default()
    }

    pub fn position_sensitive(&self, v: &Value) -> Option<(usize, usize)> {
        self.pos_s.get(v).copied()
    }

    pub fn position_nonsensitive(&self, v: &Value) -> Option<(usize, usize)> {
        self.pos_ns.get(v).copied()
    }

    pub fn permutation(&self) -> Permutation {
        self.permutation
    }

    pub fn options(&self) -> BinOptions {
        self.options
    }

    /// Placeholder values added by padding, sensitive side first.
    pub fn placeholders(&self) -> (&[Value], &[Value]) {
        (&self.placeholders_s, &self.placeholders_ns)
    }

    pub fn is_placeholder(&self, v: &Value) -> bool {
        self.placeholders_s.contains(v) || self.placeholders_ns.contains(v)
    }

    pub fn contains(&self, w: &Value) -> bool {
        self.pos_s.contains_key(w) || self.pos_ns.contains_key(w)
    }

    /// Every value known to the layout, sensitive side first, without repeats.
    pub fn domain(&self) -> Vec<Value> {
        let mut seen = HashSet::new();
        self.sb
            .iter()
            .flatten()
            .chain(self.nsb.iter().flatten().flatten())
            .filter(|v| seen.insert(*v))
            .cloned()
            .collect()
    }

    /// Resolves `w` to the sensitive and non-sensitive bin to fetch.
    pub fn retrieve_bins(&self, w: &Value) -> Result<BinPair, BinError> {
        let (sb_index, nsb_index) = if let Some(&(i, j)) = self.pos_s.get(w) {
            (i, j)
        } else if let Some(&(i, j)) = self.pos_ns.get(w) {
            (j, i)
        } else {
            return Err(BinError::UnknownKeyword(w.clone()));
        };
        Ok(BinPair {
            sb_index,
            nsb_index,
            sensitive: self.sensitive_bin(sb_index),
            nonsensitive: self.nonsensitive_bin(nsb_index),
        })
    }

    pub fn diagnostics(&self) -> LayoutDiagnostics {
        let sb_sizes: Vec<usize> = self.sb.iter().map(Vec::len).collect();
        let nsb_sizes: Vec<usize> = self.nsb.iter().map(|b| b.iter().flatten().count()).collect();
        let uniform = |v: &[usize]| v.windows(2).all(|w| w[0] == w[1]);
        LayoutDiagnostics {
            uniform_sensitive: uniform(&sb_sizes),
            uniform_nonsensitive: uniform(&nsb_sizes),
            overflow: sb_sizes.iter().any(|&n| n > self.y),
            sb_sizes,
            nsb_sizes,
        }
    }

    pub fn to_document(&self) -> LayoutDocument {
        let entries = |m: &BTreeMap<Value, (usize, usize)>| {
            m.iter().map(|(v, &(bin, slot))| SlotEntry { value: v.clone(), bin, slot }).collect()
        };
        LayoutDocument {
            version: LAYOUT_FORMAT_VERSION,
            x: self.x,
            y: self.y,
            permutation: self.permutation,
            options: self.options,
            sensitive_bins: self.sb.clone(),
            nonsensitive_bins: self.nsb.clone(),
            positions_sensitive: entries(&self.pos_s),
            positions_nonsensitive: entries(&self.pos_ns),
            placeholders_sensitive: self.placeholders_s.clone(),
            placeholders_nonsensitive: self.placeholders_ns.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BinError> {
        let doc: LayoutDocument = serde_json::from_str(text).map_err(|e| BinError::Document(e.to_string()))?;
        Self::from_document(doc)
    }

    /// Rebuilds a layout from its document, rejecting positions that disagree with the bins.
    pub fn from_document(doc: LayoutDocument) -> Result<Self, BinError> {
        if doc.version != LAYOUT_FORMAT_VERSION {
            return Err(BinError::Document(format!("unsupported layout version {}", doc.version)));
        }
        if doc.sensitive_bins.len() != doc.x || doc.nonsensitive_bins.iter().any(|b| b.len() != doc.x) {
            return Err(BinError::Document("bin dimensions disagree with x".into()));
        }
        let layout = BinLayout::assemble(
            doc.x,
            doc.y,
            doc.sensitive_bins,
            doc.nonsensitive_bins,
            doc.permutation,
            doc.options,
            doc.placeholders_sensitive,
            doc.placeholders_nonsensitive,
        )?;
        let listed = |entries: Vec<SlotEntry>| -> BTreeMap<Value, (usize, usize)> {
            entries.into_iter().map(|e| (e.value, (e.bin, e.slot))).collect()
        };
        if listed(doc.positions_sensitive) != layout.pos_s || listed(doc.positions_nonsensitive) != layout.pos_ns {
            return Err(BinError::Document("positions disagree with bins".into()));
        }
        Ok(layout)
    }
}

/// Versioned JSON form of a [`BinLayout`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub version: u32,
    pub x: usize,
    pub y: usize,
    pub permutation: Permutation,
    pub options: BinOptions,
    pub sensitive_bins: Vec<Vec<Value>>,
    pub nonsensitive_bins: Vec<Vec<Option<Value>>>,
    pub positions_sensitive: Vec<SlotEntry>,
    pub positions_nonsensitive: Vec<SlotEntry>,
    #[serde(default)]
    pub placeholders_sensitive: Vec<Value>,
    #[serde(default)]
    pub placeholders_nonsensitive: Vec<Value>,
}
