use super::{join, Module, Tensor, TrainCtx, Visitor, VisitorMut};
use crate::error::Result;

/// Named layers applied in order.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<(String, Box<dyn Module>)>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Module + 'static) -> &mut Self {
        self.layers.push((name.into(), Box::new(layer)));
        self
    }

    pub fn with(mut self, name: impl Into<String>, layer: impl Module + 'static) -> Self {
        self.push(name, layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Module for Sequential {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (_, l) in &self.layers {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    fn forward_train(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Result<Tensor> {
        let mut h = x.clone();
        for (_, l) in &mut self.layers {
            h = l.forward_train(&h, ctx)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for (_, l) in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        for (name, l) in &self.layers {
            l.visit(&join(path, name), v);
        }
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        for (name, l) in &mut self.layers {
            l.visit_mut(&join(path, name), v);
        }
    }
}
