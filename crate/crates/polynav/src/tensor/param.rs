//! Named parameter storage.
//!
//! Parameters live outside any tape in a [`ParamSet`]: an ordered registry
//! mapping a path like `planner.shared.0.attn.w_q` to a shape and a flat
//! float64 buffer. Registration order defines the manifest order used by
//! checkpoints, gradient messages, and the optimizer, so it must be
//! deterministic for a given model configuration.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Index of one parameter within a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// One named parameter buffer.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub path: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Register a parameter with explicit contents. Panics on a duplicate
    /// path or a shape/data length disagreement: both are construction bugs.
    pub fn register(&mut self, path: impl Into<String>, shape: &[usize], data: Vec<f64>) -> ParamId {
        let path = path.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "parameter {path}: shape {shape:?} does not match data length {}",
            data.len()
        );
        assert!(
            self.lookup(&path).is_none(),
            "duplicate parameter path {path}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            path,
            shape: shape.to_vec(),
            data,
        });
        id
    }

    /// Register a matrix with uniform Xavier-style initialization.
    pub fn register_xavier(
        &mut self,
        path: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
        self.register(path, &[rows, cols], data)
    }

    /// Register a vector drawn uniformly from `[-scale, scale]`.
    pub fn register_uniform_vec(
        &mut self,
        path: impl Into<String>,
        len: usize,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let data = (0..len).map(|_| rng.random_range(-scale..scale)).collect();
        self.register(path, &[len], data)
    }

    /// Register a vector of a constant value (layer-norm gains, biases).
    pub fn register_const_vec(&mut self, path: impl Into<String>, len: usize, v: f64) -> ParamId {
        self.register(path, &[len], vec![v; len])
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn lookup(&self, path: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.path == path)
            .map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// `(path, shape)` pairs in manifest order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|e| (e.path.clone(), e.shape.clone()))
            .collect()
    }

    /// True when both sets have identical manifests (paths and shapes).
    pub fn congruent(&self, other: &ParamSet) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|(a, b)| a.path == b.path && a.shape == b.shape)
    }

    /// Flat per-parameter value buffers in manifest order (snapshot payload).
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.data.clone()).collect()
    }

    /// Overwrite all values from a snapshot in manifest order.
    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.entries.len(), "snapshot length mismatch");
        for (e, s) in self.entries.iter_mut().zip(snapshot.iter()) {
            assert_eq!(e.data.len(), s.len(), "snapshot buffer mismatch at {}", e.path);
            e.data.copy_from_slice(s);
        }
    }
}
