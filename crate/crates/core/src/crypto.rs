//! Simulated non-deterministic encryption and an encrypted store with
//! single-scan keyword search.
//!
//! Rows are serialized, padded to a fixed record length and XORed with a
//! SHA-256 keystream derived from the key and a fresh per-record nonce; an
//! HMAC tag detects the wrong key. None of this is meant to be strong
//! cryptography. Matching of search tokens against records happens inside
//! [`TrustedMatcher`], which stands in for whatever searchable scheme a real
//! deployment would use, and only record positions leave it.

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use hmac::{Hmac, Mac};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DataError, Relation, Row, Value};

type HmacSha256 = Hmac<Sha256>;

const NONCE_LEN: usize = 16;
const TAG_LEN: usize = 32;
const LEN_PREFIX: usize = 4;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("decryption failed: wrong key or corrupted record")]
    WrongKey,
    #[error("malformed record")]
    Malformed,
    #[error("serialized row `{id}` is {len} bytes, record length is {max}")]
    RecordTooLong { id: String, len: usize, max: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyId(pub u64);

/// Owner-side key material. Nonces come from a seeded generator so whole runs
/// are reproducible; successive encryptions still never share a nonce.
pub struct KeyHandle {
    id: KeyId,
    enc_key: [u8; 32],
    mac_key: [u8; 32],
    token_key: [u8; 32],
    nonces: Mutex<ChaCha20Rng>,
}

impl fmt::Debug for KeyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyHandle").field("id", &self.id).finish_non_exhaustive()
    }
}

impl KeyHandle {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut key = || {
            let mut k = [0u8; 32];
            rng.fill_bytes(&mut k);
            k
        };
        let enc_key = key();
        let mac_key = key();
        let token_key = key();
        let nonce_seed = key();
        let id = KeyId(u64::from_le_bytes(Sha256::digest(enc_key)[..8].try_into().unwrap()));
        KeyHandle { id, enc_key, mac_key, token_key, nonces: Mutex::new(ChaCha20Rng::from_seed(nonce_seed)) }
    }

    pub fn id(&self) -> KeyId {
        self.id
    }

    /// Deterministic keyed tag for `attribute = value`.
    pub fn token(&self, attribute: &str, value: &Value) -> SearchToken {
        SearchToken { key: self.id, tag: self.tag(attribute, value) }
    }

    fn tag(&self, attribute: &str, value: &Value) -> [u8; 32] {
        let mut mac = HmacSha256::new_from_slice(&self.token_key).expect("hmac accepts any key length");
        mac.update(attribute.as_bytes());
        mac.update(&[0]);
        mac.update(serde_json::to_string(value).expect("values serialize").as_bytes());
        mac.finalize().into_bytes().into()
    }

    fn keystream_xor(&self, nonce: &[u8], data: &mut [u8]) {
        for (block, chunk) in data.chunks_mut(32).enumerate() {
            let pad = Sha256::new()
                .chain_update(self.enc_key)
                .chain_update(nonce)
                .chain_update((block as u64).to_le_bytes())
                .finalize();
            chunk.iter_mut().zip(pad.iter()).for_each(|(b, p)| *b ^= p);
        }
    }

    fn mac(&self, data: &[u8]) -> [u8; 32] {
        let mut mac = HmacSha256::new_from_slice(&self.mac_key).expect("hmac accepts any key length");
        mac.update(data);
        mac.finalize().into_bytes().into()
    }
}

/// An opaque encrypted record and its position in the store.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    pub blob: Vec<u8>,
    pub store_index: usize,
}

/// A search token: an owner-issued keyed tag of (attribute, value).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SearchToken {
    key: KeyId,
    tag: [u8; 32],
}

fn serialize_row(row: &Row) -> Vec<u8> {
    serde_json::to_vec(row).expect("rows serialize")
}

/// Length of `row` once serialized, before padding.
pub fn serialized_len(row: &Row) -> usize {
    serialize_row(row).len()
}

/// Encrypts `row` padded to `record_len` plaintext bytes under a fresh nonce.
pub fn encrypt_row(row: &Row, key: &KeyHandle, record_len: usize) -> Result<Ciphertext, CryptoError> {
    let body = serialize_row(row);
    if body.len() > record_len {
        return Err(CryptoError::RecordTooLong { id: row.id.0.clone(), len: body.len(), max: record_len });
    }
    let mut plain = Vec::with_capacity(LEN_PREFIX + record_len);
    plain.extend_from_slice(&(body.len() as u32).to_le_bytes());
    plain.extend_from_slice(&body);
    plain.resize(LEN_PREFIX + record_len, 0);

    let mut nonce = [0u8; NONCE_LEN];
    key.nonces.lock().expect("nonce generator poisoned").fill(&mut nonce);
    key.keystream_xor(&nonce, &mut plain);

    let mut blob = Vec::with_capacity(NONCE_LEN + plain.len() + TAG_LEN);
    blob.extend_from_slice(&nonce);
    blob.extend_from_slice(&plain);
    let tag = key.mac(&blob);
    blob.extend_from_slice(&tag);
    Ok(Ciphertext { blob, store_index: 0 })
}

pub fn decrypt_row(c: &Ciphertext, key: &KeyHandle) -> Result<Row, CryptoError> {
    if c.blob.len() < NONCE_LEN + LEN_PREFIX + TAG_LEN {
        return Err(CryptoError::Malformed);
    }
    let (body, tag) = c.blob.split_at(c.blob.len() - TAG_LEN);
    let mut verify = HmacSha256::new_from_slice(&key.mac_key).expect("hmac accepts any key length");
    verify.update(body);
    verify.verify_slice(tag).map_err(|_| CryptoError::WrongKey)?;
    let (nonce, sealed) = body.split_at(NONCE_LEN);
    let mut plain = sealed.to_vec();
    key.keystream_xor(nonce, &mut plain);
    let len = u32::from_le_bytes(plain[..LEN_PREFIX].try_into().unwrap()) as usize;
    let json = plain.get(LEN_PREFIX..LEN_PREFIX + len).ok_or(CryptoError::Malformed)?;
    serde_json::from_slice(json).map_err(|_| CryptoError::Malformed)
}

/// Cloud-observable record of one search call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchEvent {
    pub session: u64,
    pub token_count: usize,
    /// Positions of the returned records, ascending.
    pub positions: Vec<usize>,
    pub foreign_tokens: usize,
}

/// Per-record keyed tags for every searchable attribute, built by the owner at
/// outsourcing time. Only positions ever leave the matcher.
struct TrustedMatcher {
    key: KeyId,
    tags: Vec<Vec<[u8; 32]>>,
}

impl TrustedMatcher {
    fn matches(&self, tokens: &[SearchToken]) -> (Vec<usize>, usize) {
        let wanted: HashSet<[u8; 32]> = tokens.iter().filter(|t| t.key == self.key).map(|t| t.tag).collect();
        let foreign = tokens.iter().filter(|t| t.key != self.key).count();
        let positions = self
            .tags
            .iter()
            .enumerate()
            .filter(|(_, tags)| tags.iter().any(|t| wanted.contains(t)))
            .map(|(i, _)| i)
            .collect();
        (positions, foreign)
    }
}

pub struct EncryptedStore {
    records: Vec<Ciphertext>,
    record_len: usize,
    matcher: TrustedMatcher,
    scan_counter: AtomicU64,
    transfer_counter: AtomicU64,
    audit: Mutex<Vec<SearchEvent>>,
}

impl fmt::Debug for EncryptedStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncryptedStore")
            .field("records", &self.records.len())
            .field("record_len", &self.record_len)
            .field("scanned", &self.scanned())
            .field("transferred", &self.transferred())
            .finish()
    }
}

impl EncryptedStore {
    /// Encrypts every row of `relation` in order, making `searchable`
    /// attributes matchable. Record length is the longest serialized row.
    pub fn build(relation: &Relation, key: &KeyHandle, searchable: &[&str]) -> Result<Self, CryptoError> {
        let record_len = relation.rows.iter().map(serialized_len).max().unwrap_or(0);
        Self::build_with_record_len(relation, key, searchable, record_len)
    }

    pub fn build_with_record_len(
        relation: &Relation,
        key: &KeyHandle,
        searchable: &[&str],
        record_len: usize,
    ) -> Result<Self, CryptoError> {
        let cols: Vec<(usize, &str)> =
            searchable.iter().map(|a| relation.attr_index(a).map(|i| (i, *a))).collect::<Result<_, _>>()?;
        let mut records = Vec::with_capacity(relation.len());
        let mut tags = Vec::with_capacity(relation.len());
        for (pos, row) in relation.rows.iter().enumerate() {
            let mut c = encrypt_row(row, key, record_len)?;
            c.store_index = pos;
            records.push(c);
            tags.push(cols.iter().map(|&(i, a)| key.tag(a, &row.values[i])).collect());
        }
        Ok(EncryptedStore {
            records,
            record_len,
            matcher: TrustedMatcher { key: key.id(), tags },
            scan_counter: AtomicU64::new(0),
            transfer_counter: AtomicU64::new(0),
            audit: Mutex::new(Vec::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record_len(&self) -> usize {
        self.record_len
    }

    pub fn records(&self) -> &[Ciphertext] {
        &self.records
    }

    /// One full scan: returns every record whose searchable value matches a
    /// token. The scan is paid once per call regardless of how many tokens it carries.
    pub fn search(&self, session: u64, tokens: &[SearchToken]) -> Vec<Ciphertext> {
        let (positions, foreign_tokens) = self.matcher.matches(tokens);
        self.scan_counter.fetch_add(self.records.len() as u64, Ordering::SeqCst);
        self.transfer_counter.fetch_add(positions.len() as u64, Ordering::SeqCst);
        let out = positions.iter().map(|&p| self.records[p].clone()).collect();
        self.audit.lock().expect("audit log poisoned").push(SearchEvent {
            session,
            token_count: tokens.len(),
            positions,
            foreign_tokens,
        });
        out
    }

    pub fn scanned(&self) -> u64 {
        self.scan_counter.load(Ordering::SeqCst)
    }

    pub fn transferred(&self) -> u64 {
        self.transfer_counter.load(Ordering::SeqCst)
    }

    pub fn audit_log(&self) -> Vec<SearchEvent> {
        self.audit.lock().expect("audit log poisoned").clone()
    }
}

/// Free-function form of [`EncryptedStore::search`] outside any query session.
pub fn encrypted_search(store: &EncryptedStore, tokens: &[SearchToken]) -> Vec<Ciphertext> {
    store.search(0, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::classify_relation;
    use crate::fixtures;

    fn employee2() -> Relation {
        classify_relation(&fixtures::employee(), &fixtures::employee_policy()).unwrap().sensitive
    }

    #[test]
    fn encryption_is_randomized_and_reversible() {
        let key = KeyHandle::from_seed(1);
        let rel = employee2();
        let t5 = rel.rows.iter().find(|r| r.id.as_str() == "t5").unwrap();
        let len = serialized_len(t5);
        let a = encrypt_row(t5, &key, len).unwrap();
        let b = encrypt_row(t5, &key, len).unwrap();
        assert_ne!(a.blob, b.blob);
        assert_eq!(&decrypt_row(&a, &key).unwrap(), t5);
        assert_eq!(&decrypt_row(&b, &key).unwrap(), t5);
    }

    #[test]
    fn hundred_encryptions_pairwise_distinct() {
        let key = KeyHandle::from_seed(2);
        let row = employee2().rows[0].clone();
        let blobs: HashSet<Vec<u8>> =
            (0..100).map(|_| encrypt_row(&row, &key, 256).unwrap().blob).collect();
        assert_eq!(blobs.len(), 100);
    }

    #[test]
    fn padding_hides_arity() {
        let key = KeyHandle::from_seed(3);
        let narrow = Row::new("a", vec![Value::Int(1), Value::Int(2), Value::Int(3)]);
        let wide = Row::new("b", vec!["alpha".into(), "beta".into(), "gamma".into(), Value::Int(4), Value::Int(5)]);
        let record_len = serialized_len(&narrow).max(serialized_len(&wide));
        let a = encrypt_row(&narrow, &key, record_len).unwrap();
        let b = encrypt_row(&wide, &key, record_len).unwrap();
        assert_eq!(a.blob.len(), b.blob.len());
        assert_eq!(decrypt_row(&b, &key).unwrap(), wide);
    }

    #[test]
    fn wrong_key_fails() {
        let row = employee2().rows[0].clone();
        let c = encrypt_row(&row, &KeyHandle::from_seed(4), 200).unwrap();
        assert!(matches!(decrypt_row(&c, &KeyHandle::from_seed(5)), Err(CryptoError::WrongKey)));
        assert!(matches!(encrypt_row(&row, &KeyHandle::from_seed(4), 3), Err(CryptoError::RecordTooLong { .. })));
    }

    #[test]
    fn bin_search_over_employee2() {
        let key = KeyHandle::from_seed(6);
        let rel = employee2();
        let store = EncryptedStore::build(&rel, &key, &["EId"]).unwrap();
        let tokens = [key.token("EId", &"E101".into()), key.token("EId", &"E259".into())];
        let found = encrypted_search(&store, &tokens);
        let mut ids: Vec<String> = found.iter().map(|c| decrypt_row(c, &key).unwrap().id.0).collect();
        ids.sort();
        assert_eq!(ids, vec!["t1", "t4"]);
        assert_eq!(store.scanned(), 4);
        assert_eq!(store.transferred(), 2);
    }

    #[test]
    fn empty_token_set_still_scans() {
        let key = KeyHandle::from_seed(7);
        let store = EncryptedStore::build(&employee2(), &key, &["EId"]).unwrap();
        assert!(store.search(9, &[]).is_empty());
        assert_eq!(store.scanned(), 4);
        assert_eq!(store.transferred(), 0);
        assert_eq!(store.audit_log()[0].session, 9);
    }

    #[test]
    fn all_tokens_return_everything() {
        let key = KeyHandle::from_seed(8);
        let rel = employee2();
        let store = EncryptedStore::build(&rel, &key, &["EId"]).unwrap();
        let tokens: Vec<_> = rel.distinct_values("EId").unwrap().iter().map(|v| key.token("EId", v)).collect();
        assert_eq!(encrypted_search(&store, &tokens).len(), rel.len());
        assert_eq!(store.transferred(), rel.len() as u64);
    }

    #[test]
    fn foreign_tokens_match_nothing() {
        let key = KeyHandle::from_seed(9);
        let other = KeyHandle::from_seed(10);
        let store = EncryptedStore::build(&employee2(), &key, &["EId"]).unwrap();
        let found = encrypted_search(&store, &[other.token("EId", &"E101".into())]);
        assert!(found.is_empty());
        assert_eq!(store.audit_log()[0].foreign_tokens, 1);
    }
}
