use super::tensor::Tensor;

/// A learnable tensor together with its gradient and optimizer moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    grad: Option<Tensor>,
    /// AdamW first and second moments, allocated on the first update.
    pub(crate) moments: Option<(Vec<f32>, Vec<f32>)>,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Self {
            value,
            grad: None,
            moments: None,
            trainable: true,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    /// Gradient buffer, zero-initialised on first access.
    pub fn grad_mut(&mut self) -> &mut [f32] {
        let shape = self.value.shape().to_vec();
        self.grad
            .get_or_insert_with(|| Tensor::zeros(&shape))
            .data_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.data_mut().fill(0.0);
        }
    }

    /// Drop gradient and optimizer buffers (frees memory for frozen layers).
    pub fn release_buffers(&mut self) {
        self.grad = None;
        self.moments = None;
    }
}
