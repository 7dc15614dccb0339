use super::{EmbeddingTable, NumericsError, RowGrads};

/// First and second moment buffers shaped like one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Bias-corrected Adam. Call [`Adam::tick`] once per optimisation step, then
/// update every parameter tensor touched by that step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }

    pub fn tick(&mut self) {
        self.step += 1;
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.step.max(1) as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    #[inline]
    fn apply(&self, p: &mut f64, g: f64, m: &mut f64, v: &mut f64, c1: f64, c2: f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
    }

    /// Dense update of `params` in place.
    pub fn update(
        &self,
        what: &str,
        params: &mut [f64],
        grads: &[f64],
        moments: &mut Moments,
    ) -> Result<(), NumericsError> {
        if params.len() != grads.len() || moments.m.len() != params.len() {
            return Err(NumericsError::ShapeMismatch {
                what: "adam update",
                expected: params.len(),
                found: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NumericsError::NonFinite {
                what: format!("gradient of {what}"),
            });
        }
        let (c1, c2) = self.corrections();
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(moments.m.iter_mut())
            .zip(moments.v.iter_mut())
        {
            self.apply(p, g, m, v, c1, c2);
        }
        Ok(())
    }

    /// Lazy update of only the rows present in `grads`.
    pub fn update_rows(
        &self,
        what: &str,
        table: &mut EmbeddingTable,
        grads: &RowGrads,
    ) -> Result<(), NumericsError> {
        let dim = table.dim();
        if grads.dim() != dim {
            return Err(NumericsError::ShapeMismatch {
                what: "adam row update",
                expected: dim,
                found: grads.dim(),
            });
        }
        if grads.iter().any(|(_, g)| g.iter().any(|x| !x.is_finite())) {
            return Err(NumericsError::NonFinite {
                what: format!("gradient of {what}"),
            });
        }
        let (c1, c2) = self.corrections();
        let values = table
            .values
            .as_slice_mut()
            .expect("embedding tables are standard layout");
        for (row, g) in grads.iter() {
            let base = row * dim;
            for (k, &gk) in g.iter().enumerate() {
                let i = base + k;
                let (m, v) = (&mut table.moments.m[i], &mut table.moments.v[i]);
                self.apply(&mut values[i], gk, m, v, c1, c2);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_first_step_is_noop() {
        let mut adam = Adam::new(0.01);
        adam.tick();
        let mut p = vec![1.0, -2.0, 3.0];
        let mut mom = Moments::zeros(3);
        adam.update("p", &mut p, &[0.0; 3], &mut mom).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn constant_gradient_steps_by_learning_rate() {
        // m_hat = g and v_hat = g^2 exactly, so every step is lr * g / (|g| + eps).
        let lr = 0.003;
        let mut adam = Adam::new(lr);
        let mut p = vec![0.0, 0.0];
        let g = [2.5, -0.4];
        let mut mom = Moments::zeros(2);
        let mut prev = p.clone();
        for _ in 0..200 {
            adam.tick();
            adam.update("p", &mut p, &g, &mut mom).unwrap();
            let d0 = prev[0] - p[0];
            let d1 = prev[1] - p[1];
            assert!((d0 - lr).abs() < 1e-9, "{d0}");
            assert!((d1 + lr).abs() < 1e-9, "{d1}");
            prev.clone_from(&p);
        }
    }

    #[test]
    fn non_finite_gradient_is_error() {
        let mut adam = Adam::new(0.1);
        adam.tick();
        let mut p = vec![0.0];
        let mut mom = Moments::zeros(1);
        let err = adam.update("w", &mut p, &[f64::NAN], &mut mom).unwrap_err();
        assert!(matches!(err, NumericsError::NonFinite { .. }));
    }

    #[test]
    fn row_update_touches_only_given_rows() {
        let mut table = EmbeddingTable::zeros(3, 2);
        let mut grads = RowGrads::new(2);
        grads.add(1, &[1.0, -1.0], 1.0);
        let mut adam = Adam::new(0.5);
        adam.tick();
        adam.update_rows("emb", &mut table, &grads).unwrap();
        assert_eq!(table.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(table.row(2).to_vec(), vec![0.0, 0.0]);
        let r = table.row(1);
        assert!((r[0] + 0.5).abs() < 1e-6 && (r[1] - 0.5).abs() < 1e-6);
    }
}
