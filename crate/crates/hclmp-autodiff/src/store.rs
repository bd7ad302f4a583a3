use crate::tape::{Tape, Var};
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

/// Named parameter tensors held outside any tape. Each training step binds
/// the current values onto a fresh tape as leaves, in insertion order.
#[derive(Clone, Serialize, Deserialize, Debug)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

#[derive(Clone, Serialize, Deserialize, Debug)]
struct ParamEntry {
    name: String,
    value: ArrayD<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> usize {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, value });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].name
    }

    pub fn value(&self, i: usize) -> &ArrayD<f64> {
        &self.entries[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut ArrayD<f64> {
        &mut self.entries[i].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Insert every parameter onto `tape` as a leaf; index i of the result
    /// corresponds to entry i.
    pub fn bind(&self, tape: &Tape) -> Vec<Var> {
        self.entries.iter().map(|e| tape.leaf(e.value.clone())).collect()
    }

    /// Overwrite values from another store with identical layout.
    pub fn assign(&mut self, other: &ParamStore) {
        assert_eq!(self.entries.len(), other.entries.len(), "param store layout mismatch");
        for (a, b) in self.entries.iter_mut().zip(other.entries.iter()) {
            assert_eq!(a.name, b.name, "param store layout mismatch");
            a.value = b.value.clone();
        }
    }

    /// FNV-1a digest over names, shapes, and exact value bits. Stable across
    /// runs; changes iff any parameter changes.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for e in &self.entries {
            eat(e.name.as_bytes());
            for d in e.value.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in e.value.iter() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}
