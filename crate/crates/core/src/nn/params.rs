//! Named parameter storage, seeded initialisation and per-forward sessions.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Grads, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to one entry of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    /// `false` for running statistics, which are updated outside the optimiser.
    pub trainable: bool,
}

/// Every array of a model, keyed by hierarchical name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(value.shape(), self.get(id).shape(), "shape change for {}", self.entries[id.0].name);
        self.entries[id.0].value = Arc::new(value);
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Trainable scalars among the given ids.
    pub fn count_of(&self, ids: &[ParamId]) -> usize {
        ids.iter().filter(|id| self.entries[id.0].trainable).map(|id| self.entries[id.0].value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), value: Arc::new(e.value.cast()), trainable: e.trainable })
                .collect(),
        }
    }

    pub(crate) fn push(&mut self, name: String, value: Tensor<T>, trainable: bool) -> ParamId {
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.entries.push(ParamEntry { name, value: Arc::new(value), trainable });
        ParamId(self.entries.len() - 1)
    }
}

/// Seeded state shared by all builders of one model.
pub struct BuildState {
    store: ParamStore<f64>,
    rng: ChaCha8Rng,
}

impl BuildState {
    pub fn new(seed: u64) -> Self {
        Self { store: ParamStore::default(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn root(&mut self) -> ParamBuilder<'_> {
        ParamBuilder { state: self, prefix: String::new() }
    }

    pub fn finish(self) -> ParamStore<f64> {
        self.store
    }
}

/// Registers parameters under a name prefix.
pub struct ParamBuilder<'a> {
    state: &'a mut BuildState,
    prefix: String,
}

impl ParamBuilder<'_> {
    pub fn child(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        ParamBuilder { state: self.state, prefix }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<f64>) -> ParamId {
        let name = self.full_name(name);
        self.state.store.push(name, value, true)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<f64>) -> ParamId {
        let name = self.full_name(name);
        self.state.store.push(name, value, false)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut self.state.rng;
        let t = Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-bound..=bound));
        self.tensor(name, t)
    }

    /// He-uniform initialisation for ReLU networks: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
    pub fn kaiming_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        self.uniform(name, shape, bound)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.tensor(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.tensor(name, Tensor::ones(shape.to_vec()))
    }

    /// Ids registered so far, for counting parameters of a sub-block.
    pub fn next_id(&self) -> usize {
        self.state.store.len()
    }
}

/// Ids `[start, end)` registered by one builder scope.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IdRange {
    pub start: usize,
    pub end: usize,
}

impl IdRange {
    pub fn ids(&self) -> Vec<ParamId> {
        (self.start..self.end).map(ParamId).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch-norm; running statistics are collected.
    Train,
    /// Running statistics in batch-norm.
    Eval,
}

/// Parameter access for one forward pass.
///
/// With a tape, trainable parameters become tracked leaves so their gradients
/// can be read with [`Session::param_grads`].
pub struct Session<'a, T> {
    store: &'a ParamStore<T>,
    tape: Option<Rc<Tape<T>>>,
    mode: Mode,
    leaves: RefCell<HashMap<ParamId, Var<T>>>,
    running: RefCell<Vec<(ParamId, Tensor<T>)>>,
    first_pass: Cell<bool>,
}

impl<'a, T: Scalar> Session<'a, T> {
    /// Differentiable forward pass.
    pub fn with_grad(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Self::make(store, Some(Tape::new()), mode)
    }

    /// Forward pass without history.
    pub fn inference(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Self::make(store, None, mode)
    }

    fn make(store: &'a ParamStore<T>, tape: Option<Rc<Tape<T>>>, mode: Mode) -> Self {
        Self { store, tape, mode, leaves: RefCell::new(HashMap::new()), running: RefCell::new(Vec::new()), first_pass: Cell::new(false) }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Whether batch norm should use first-pass running statistics.
    pub fn first_pass(&self) -> bool {
        self.first_pass.get()
    }

    pub fn set_first_pass(&self, on: bool) {
        self.first_pass.set(on);
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var<T> {
        let entry = self.store.entry(id);
        match &self.tape {
            Some(tape) if entry.trainable => self
                .leaves
                .borrow_mut()
                .entry(id)
                .or_insert_with(|| tape.leaf_shared(Arc::clone(&entry.value)))
                .clone(),
            _ => Var::constant_shared(Arc::clone(&entry.value)),
        }
    }

    pub fn buffer(&self, id: ParamId) -> &Tensor<T> {
        self.store.get(id)
    }

    /// Wraps an input; tracked when a tape is present and `track` is set.
    pub fn input(&self, value: Tensor<T>, track: bool) -> Var<T> {
        match &self.tape {
            Some(tape) if track => tape.leaf(value),
            _ => Var::constant(value),
        }
    }

    pub(crate) fn record_running(&self, id: ParamId, value: Tensor<T>) {
        self.running.borrow_mut().push((id, value));
    }

    /// Running-statistic updates collected in training mode, in call order.
    pub fn take_running_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut *self.running.borrow_mut())
    }

    /// Gradients of every trainable parameter touched by the forward pass.
    pub fn param_grads(&self, grads: &Grads<T>) -> Vec<(ParamId, Tensor<T>)> {
        let leaves = self.leaves.borrow();
        let mut out: Vec<_> = leaves.iter().map(|(&id, v)| (id, grads.get_or_zeros(v))).collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
