use super::Tensor;
use crate::error::{Error, Result};

/// Mean (optionally class-weighted) softmax cross-entropy and its gradient.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    pub grad: Tensor,
}

pub fn cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    class_weights: Option<&[f32]>,
) -> Result<CrossEntropy> {
    let (n, c) = match logits.shape() {
        &[n, c] => (n, c),
        s => return Err(Error::Shape(format!("logits must be [N, C], got {s:?}"))),
    };
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(w) = class_weights {
        if w.len() != c {
            return Err(Error::Shape(format!("{} class weights for {c} classes", w.len())));
        }
    }
    let mut grad = Tensor::zeros(&[n, c]);
    let mut total = 0.0f64;
    let mut norm = 0.0f64;
    let weight_of = |y: usize| class_weights.map_or(1.0, |w| w[y] as f64);
    for (i, (row, &y)) in logits.data().chunks(c).zip(labels).enumerate() {
        if y >= c {
            return Err(Error::Validation(format!("label {y} out of range for {c} classes")));
        }
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_z = max + sum.ln();
        let w = weight_of(y);
        total += w * (log_z - row[y] as f64);
        norm += w;
        let g = &mut grad.data_mut()[i * c..(i + 1) * c];
        for (k, gv) in g.iter_mut().enumerate() {
            let p = (row[k] as f64 - log_z).exp();
            *gv = (w * (p - if k == y { 1.0 } else { 0.0 })) as f32;
        }
    }
    if norm > 0.0 {
        grad.scale((1.0 / norm) as f32);
    }
    Ok(CrossEntropy {
        loss: if norm > 0.0 { total / norm } else { 0.0 },
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let ce = cross_entropy(&Tensor::zeros(&[3, 5]), &[0, 2, 4], None).unwrap();
        assert!((ce.loss - 5f64.ln()).abs() < 1e-12);
        // rows of the gradient sum to zero
        for row in ce.grad.data().chunks(5) {
            assert!(row.iter().sum::<f32>().abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = Tensor::new(&[2, 3], vec![0.3, -1.2, 2.0, 0.5, 0.1, -0.4]).unwrap();
        let labels = [2, 0];
        let w = [1.0, 2.0, 0.5];
        let ce = cross_entropy(&logits, &labels, Some(&w)).unwrap();
        for i in 0..6 {
            let mut p = logits.clone();
            p.data_mut()[i] += 1e-3;
            let mut m = logits.clone();
            m.data_mut()[i] -= 1e-3;
            let fd = (cross_entropy(&p, &labels, Some(&w)).unwrap().loss
                - cross_entropy(&m, &labels, Some(&w)).unwrap().loss)
                / 2e-3;
            assert!((fd - ce.grad.data()[i] as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn bad_label_is_rejected() {
        assert!(cross_entropy(&Tensor::zeros(&[1, 5]), &[5], None).is_err());
    }
}
