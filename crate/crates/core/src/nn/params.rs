use std::collections::HashMap;

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD};

use super::Elem;

pub type ParamVisitor<'a, F> = dyn FnMut(&str, ArrayViewD<'a, F>) + 'a;
pub type ParamVisitorMut<'a, F> = dyn FnMut(&str, ArrayViewMutD<'a, F>) + 'a;

/// Anything with named parameter tensors. Visit order is the layer
/// declaration order and must be stable: the optimizer and the
/// checkpoint format both key on it.
pub trait Visitable<F: Elem> {
    fn visit<'a>(&'a self, f: &mut ParamVisitor<'a, F>);
    fn visit_mut<'a>(&'a mut self, f: &mut ParamVisitorMut<'a, F>);

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |name, _| names.push(name.to_string()));
        names
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, v| n += v.len());
        n
    }
}

/// Named gradient accumulator. `add` sums into an existing entry, so a
/// parameter reached through several paths accumulates in call order.
#[derive(Debug, Clone, Default)]
pub struct Grads<F: Elem> {
    entries: Vec<(String, ArrayD<F>)>,
    index: HashMap<String, usize>,
}

impl<F: Elem> Grads<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, grad: ArrayD<F>) {
        if let Some(&i) = self.index.get(name) {
            let slot = &mut self.entries[i].1;
            assert_eq!(slot.shape(), grad.shape(), "gradient shape for {name}");
            *slot += &grad;
        } else {
            self.index.insert(name.to_string(), self.entries.len());
            self.entries.push((name.to_string(), grad));
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<F>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<F>)> {
        self.entries.iter().map(|(n, g)| (n.as_str(), g))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scale every gradient in place.
    pub fn scale(&mut self, s: F) {
        for (_, g) in &mut self.entries {
            g.mapv_inplace(|v| v * s);
        }
    }
}
