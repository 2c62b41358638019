//! Episodic external memories.
//!
//! [`DualMemory`] keeps language embeddings as keys and vision embeddings as
//! values; [`FusedMemory`] keeps one latent per step. Both are FIFO stores
//! read by top-k cosine retrieval. The module also holds the selective
//! writing rule and the episodic novelty scorer.

mod ngu;
mod read;
mod selective;

use std::collections::VecDeque;
use std::fmt::Write as _;

pub use ngu::{modality_ngu, ngu_reward, NguConfig, NguStats};
pub use read::{top_k, DcemReader, DncReader};
pub use selective::SelectiveWriter;

use crate::numerics::{Real, RowRef};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MemoryError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("memory capacity must be positive")]
    ZeroCapacity,
    #[error("memory dump: {0}")]
    Dump(String),
}

/// One stored vector, plus where it came from on the current tape so that
/// gradients can flow back into the step that wrote it.
#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub data: Vec<Real>,
    pub source: Option<RowRef>,
}

impl Slot {
    pub fn detached(data: Vec<Real>) -> Self {
        Self { data, source: None }
    }
}

/// Fixed-capacity FIFO column of equal-width slots, oldest first.
#[derive(Clone, Debug, PartialEq)]
struct Column {
    dim: usize,
    slots: VecDeque<Slot>,
}

impl Column {
    fn push(&mut self, slot: Slot, capacity: usize) -> Result<(), MemoryError> {
        if slot.data.len() != self.dim {
            return Err(MemoryError::Dim(format!("slot of width {} for column of width {}", slot.data.len(), self.dim)));
        }
        if self.slots.len() == capacity {
            self.slots.pop_front();
        }
        self.slots.push_back(slot);
        Ok(())
    }
}

/// Dual-coding memory: language keys and vision values written as pairs.
/// Row 0 is the oldest surviving write.
#[derive(Clone, Debug, PartialEq)]
pub struct DualMemory {
    capacity: usize,
    keys: Column,
    values: Column,
    steps: VecDeque<usize>,
}

impl DualMemory {
    pub fn new(capacity: usize, key_dim: usize, value_dim: usize) -> Result<Self, MemoryError> {
        if capacity == 0 {
            return Err(MemoryError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            keys: Column { dim: key_dim, slots: VecDeque::new() },
            values: Column { dim: value_dim, slots: VecDeque::new() },
            steps: VecDeque::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.steps.len()
    }

    pub fn key_dim(&self) -> usize {
        self.keys.dim
    }

    pub fn value_dim(&self) -> usize {
        self.values.dim
    }

    pub fn key(&self, row: usize) -> &Slot {
        &self.keys.slots[row]
    }

    pub fn value(&self, row: usize) -> &Slot {
        &self.values.slots[row]
    }

    pub fn step_written(&self, row: usize) -> usize {
        self.steps[row]
    }

    pub fn keys(&self) -> impl Iterator<Item = &[Real]> + '_ {
        self.keys.slots.iter().map(|s| s.data.as_slice())
    }

    pub fn values(&self) -> impl Iterator<Item = &[Real]> + '_ {
        self.values.slots.iter().map(|s| s.data.as_slice())
    }

    /// Appends `(key, value)`, evicting the oldest pair when full.
    pub fn write(&mut self, key: Slot, value: Slot, step: usize) -> Result<(), MemoryError> {
        if key.data.len() != self.keys.dim || value.data.len() != self.values.dim {
            return Err(MemoryError::Dim(format!(
                "write of ({}, {}) into ({}, {})",
                key.data.len(),
                value.data.len(),
                self.keys.dim,
                self.values.dim
            )));
        }
        self.keys.push(key, self.capacity)?;
        self.values.push(value, self.capacity)?;
        if self.steps.len() == self.capacity {
            self.steps.pop_front();
        }
        self.steps.push_back(step);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.keys.slots.clear();
        self.values.slots.clear();
        self.steps.clear();
    }

    /// Drops tape links, e.g. when the tape that produced them is finished.
    pub fn detach(&mut self) {
        for s in self.keys.slots.iter_mut().chain(self.values.slots.iter_mut()) {
            s.source = None;
        }
    }

    pub fn dump(&self) -> String {
        let rows = (0..self.occupancy()).map(|r| (self.steps[r], vec![self.key(r).data.as_slice(), self.value(r).data.as_slice()]));
        dump_text("dual", self.capacity, &[self.keys.dim, self.values.dim], rows)
    }
}

/// Fused-slot memory holding one latent per write.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedMemory {
    capacity: usize,
    column: Column,
    steps: VecDeque<usize>,
}

impl FusedMemory {
    pub fn new(capacity: usize, dim: usize) -> Result<Self, MemoryError> {
        if capacity == 0 {
            return Err(MemoryError::ZeroCapacity);
        }
        Ok(Self { capacity, column: Column { dim, slots: VecDeque::new() }, steps: VecDeque::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.steps.len()
    }

    pub fn dim(&self) -> usize {
        self.column.dim
    }

    pub fn slot(&self, row: usize) -> &Slot {
        &self.column.slots[row]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Real]> + '_ {
        self.column.slots.iter().map(|s| s.data.as_slice())
    }

    pub fn write(&mut self, latent: Slot, step: usize) -> Result<(), MemoryError> {
        self.column.push(latent, self.capacity)?;
        if self.steps.len() == self.capacity {
            self.steps.pop_front();
        }
        self.steps.push_back(step);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.column.slots.clear();
        self.steps.clear();
    }

    pub fn detach(&mut self) {
        for s in &mut self.column.slots {
            s.source = None;
        }
    }

    pub fn dump(&self) -> String {
        let rows = (0..self.occupancy()).map(|r| (self.steps[r], vec![self.slot(r).data.as_slice()]));
        dump_text("fused", self.capacity, &[self.column.dim], rows)
    }
}

pub const DUMP_VERSION: u32 = 1;

/// Text dump:
///
/// ```text
/// fastmap-memory v1
/// kind dual
/// capacity 1024
/// occupancy 2
/// dims 32 64
/// 5 | <key values> | <value values>
/// 6 | ...
/// ```
///
/// Rows are oldest first; each starts with the step it was written at.
fn dump_text<'a>(kind: &str, capacity: usize, dims: &[usize], rows: impl Iterator<Item = (usize, Vec<&'a [Real]>)>) -> String {
    let rows: Vec<_> = rows.collect();
    let mut s = String::new();
    let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(s, "fastmap-memory v{DUMP_VERSION}\nkind {kind}\ncapacity {capacity}\noccupancy {}\ndims {}", rows.len(), dims.join(" "));
    for (step, cols) in rows {
        let _ = write!(s, "{step}");
        for c in cols {
            let vals: Vec<String> = c.iter().map(|x| format!("{x:e}")).collect();
            let _ = write!(s, " | {}", vals.join(" "));
        }
        s.push('\n');
    }
    s
}

/// Parsed form of a memory dump.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryDump {
    pub kind: String,
    pub capacity: usize,
    pub dims: Vec<usize>,
    pub rows: Vec<(usize, Vec<Vec<Real>>)>,
}

impl MemoryDump {
    pub fn parse(text: &str) -> Result<Self, MemoryError> {
        let bad = |m: &str| MemoryError::Dump(m.to_string());
        let mut lines = text.lines();
        let mut field = |name: &str| -> Result<String, MemoryError> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(name).map(|r| r.trim().to_string()).ok_or_else(|| MemoryError::Dump(format!("expected {name}")))
        };
        let version = field("fastmap-memory")?;
        if version != format!("v{DUMP_VERSION}") {
            return Err(MemoryError::Dump(format!("unsupported version {version}")));
        }
        let kind = field("kind")?;
        let capacity = field("capacity")?.parse().map_err(|_| bad("capacity"))?;
        let occupancy: usize = field("occupancy")?.parse().map_err(|_| bad("occupancy"))?;
        let dims = field("dims")?
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| bad("dims")))
            .collect::<Result<Vec<usize>, _>>()?;
        let mut rows = Vec::with_capacity(occupancy);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split('|');
            let step = parts.next().ok_or_else(|| bad("row"))?.trim().parse().map_err(|_| bad("row step"))?;
            let cols = parts
                .map(|p| p.split_whitespace().map(|x| x.parse().map_err(|_| bad("row value"))).collect::<Result<Vec<Real>, _>>())
                .collect::<Result<Vec<_>, _>>()?;
            if cols.len() != dims.len() || cols.iter().zip(&dims).any(|(c, &d)| c.len() != d) {
                return Err(bad("row width"));
            }
            rows.push((step, cols));
        }
        if rows.len() != occupancy {
            return Err(bad("occupancy does not match row count"));
        }
        Ok(Self { kind, capacity, dims, rows })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn vec_of(x: Real, n: usize) -> Slot {
        Slot::detached(vec![x; n])
    }

    #[test]
    fn first_write() {
        let mut m = DualMemory::new(4, 2, 3).unwrap();
        m.write(vec_of(1.0, 2), vec_of(2.0, 3), 0).unwrap();
        assert_eq!(m.occupancy(), 1);
        assert_eq!(m.key(0).data, [1.0, 1.0]);
        assert_eq!(m.value(0).data, [2.0; 3]);
        assert!(m.write(vec_of(1.0, 3), vec_of(2.0, 3), 1).is_err());
        assert_eq!(m.occupancy(), 1);
    }

    #[test]
    fn fifo_eviction() {
        let mut m = DualMemory::new(3, 1, 1).unwrap();
        for i in 0..4 {
            m.write(vec_of(i as Real, 1), vec_of(i as Real, 1), i).unwrap();
        }
        assert_eq!(m.occupancy(), 3);
        assert_eq!(m.keys().map(|k| k[0]).collect::<Vec<_>>(), [1.0, 2.0, 3.0]);
        assert_eq!(m.step_written(0), 1);
    }

    #[test]
    fn matches_replay_oracle_over_long_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cap = 37;
        let mut m = DualMemory::new(cap, 2, 1).unwrap();
        let mut all: Vec<(Vec<Real>, Vec<Real>)> = Vec::new();
        for t in 0..1000 {
            let k = vec![rng.random(), rng.random()];
            let v = vec![rng.random()];
            m.write(Slot::detached(k.clone()), Slot::detached(v.clone()), t).unwrap();
            all.push((k, v));
            if t % 17 == 0 {
                let start = all.len().saturating_sub(cap);
                let expect: Vec<&[Real]> = all[start..].iter().map(|(k, _)| k.as_slice()).collect();
                assert_eq!(m.keys().collect::<Vec<_>>(), expect);
                let expect: Vec<&[Real]> = all[start..].iter().map(|(_, v)| v.as_slice()).collect();
                assert_eq!(m.values().collect::<Vec<_>>(), expect);
            }
        }
    }

    #[test]
    fn clear_keeps_capacity() {
        let mut m = FusedMemory::new(20, 4).unwrap();
        m.write(vec_of(1.0, 4), 0).unwrap();
        m.clear();
        assert_eq!((m.occupancy(), m.capacity()), (0, 20));
        assert!(matches!(DualMemory::new(0, 1, 1), Err(MemoryError::ZeroCapacity)));
    }

    #[test]
    fn dump_round_trip() {
        let mut m = DualMemory::new(5, 2, 3).unwrap();
        m.write(Slot::detached(vec![0.1, -2.5]), Slot::detached(vec![1.0, 2.0, 3.0]), 7).unwrap();
        m.write(Slot::detached(vec![1e-9, 4.0]), Slot::detached(vec![0.0, 0.5, 1.0 / 3.0]), 8).unwrap();
        let d = MemoryDump::parse(&m.dump()).unwrap();
        assert_eq!((d.kind.as_str(), d.capacity, d.dims.as_slice()), ("dual", 5, &[2, 3][..]));
        assert_eq!(d.rows[1].0, 8);
        assert_eq!(d.rows[1].1[1][2], 1.0 / 3.0);
        let mut f = FusedMemory::new(2, 1).unwrap();
        f.write(Slot::detached(vec![2.0]), 3).unwrap();
        assert_eq!(MemoryDump::parse(&f.dump()).unwrap().rows, vec![(3, vec![vec![2.0]])]);
        assert!(MemoryDump::parse("fastmap-memory v9\n").is_err());
    }
}
