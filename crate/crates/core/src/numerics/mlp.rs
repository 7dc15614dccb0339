use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{Moments, NumericsError};

/// Fully connected layer; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
    pub weight_moments: Moments,
    pub bias_moments: Moments,
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Option<Array1<f64>>) -> Self {
        let nw = weight.len();
        let nb = bias.as_ref().map_or(0, Array1::len);
        Dense {
            weight,
            bias,
            weight_moments: Moments::zeros(nw),
            bias_moments: Moments::zeros(nb),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// ReLU multilayer perceptron `φ(W_ℓ φ(… φ(W_1 x)))`.
///
/// Biases are optional. `final_activation = false` drops the ReLU after the
/// last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub final_activation: bool,
}

/// Activations saved by a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrad>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| DenseGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: l.bias.as_ref().map(|b| Array1::zeros(b.len())),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            if let (Some(x), Some(y)) = (a.bias.as_mut(), b.bias.as_ref()) {
                *x += y;
            }
        }
    }

    /// Adds `2 * lambda * W` for every tensor (gradient of `lambda * ||W||^2`).
    pub fn add_l2(&mut self, params: &MlpParams, lambda: f64) {
        for (g, l) in self.layers.iter_mut().zip(&params.layers) {
            g.weight.scaled_add(2.0 * lambda, &l.weight);
            if let (Some(gb), Some(b)) = (g.bias.as_mut(), l.bias.as_ref()) {
                gb.scaled_add(2.0 * lambda, b);
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            if let Some(b) = &l.bias {
                out.extend(b.iter());
            }
        }
        out
    }
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases. `sizes` lists layer widths from
    /// input to output, so `sizes.len() - 1` layers are built.
    pub fn glorot<R: Rng + ?Sized>(
        sizes: &[usize],
        bias: bool,
        final_activation: bool,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng));
                Dense::new(weight, bias.then(|| Array1::zeros(fan_out)))
            })
            .collect();
        MlpParams {
            layers,
            final_activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.final_activation
    }

    /// Forward pass over a batch; each row of `input` is one example.
    pub fn forward_batch(
        &self,
        input: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, MlpCache), NumericsError> {
        if input.ncols() != self.input_dim() {
            return Err(NumericsError::ShapeMismatch {
                what: "mlp input",
                expected: self.input_dim(),
                found: input.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            if let Some(b) = &layer.bias {
                z += b;
            }
            let a = if self.activated(i) {
                z.mapv(super::relu)
            } else {
                z.clone()
            };
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Forward pass that starts from the pre-activation of the first layer,
    /// for callers that compute the first affine map themselves.
    pub fn forward_from_first_pre(&self, pre0: Array2<f64>) -> (Array2<f64>, MlpCache) {
        let rows = pre0.nrows();
        let mut inputs = vec![Array2::zeros((rows, 0))];
        let mut h = if self.activated(0) {
            pre0.mapv(super::relu)
        } else {
            pre0.clone()
        };
        let mut pre = vec![pre0];
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let mut z = h.dot(&layer.weight.t());
            if let Some(b) = &layer.bias {
                z += b;
            }
            let a = if self.activated(i) {
                z.mapv(super::relu)
            } else {
                z.clone()
            };
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        (h, MlpCache { inputs, pre })
    }

    fn check_output_grad(&self, cache: &MlpCache, output_grad: &ArrayView2<'_, f64>) -> Result<(), NumericsError> {
        let rows = cache.pre.first().map_or(0, |x| x.nrows());
        if output_grad.nrows() != rows || output_grad.ncols() != self.output_dim() {
            return Err(NumericsError::ShapeMismatch {
                what: "mlp output gradient",
                expected: self.output_dim(),
                found: output_grad.ncols(),
            });
        }
        Ok(())
    }

    fn mask_relu(&self, layer: usize, cache: &MlpCache, g: &mut Array2<f64>) {
        if self.activated(layer) {
            ndarray::Zip::from(g).and(&cache.pre[layer]).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        }
    }

    /// Backpropagates through layers `first..`, returning their gradients in
    /// layer order and the gradient with respect to the input of `first`.
    fn backward_layers(&self, cache: &MlpCache, mut g: Array2<f64>, first: usize) -> (Vec<DenseGrad>, Array2<f64>) {
        let mut layers = Vec::with_capacity(self.layers.len() - first);
        for i in (first..self.layers.len()).rev() {
            let layer = &self.layers[i];
            self.mask_relu(i, cache, &mut g);
            let weight = g.t().dot(&cache.inputs[i]);
            let bias = layer.bias.as_ref().map(|_| g.sum_axis(Axis(0)));
            layers.push(DenseGrad { weight, bias });
            g = g.dot(&layer.weight);
        }
        layers.reverse();
        (layers, g)
    }

    /// Reverse pass for a batch. Returns parameter gradients summed over rows
    /// and the gradient with respect to each input row. The ReLU derivative at
    /// exactly zero is taken as zero.
    pub fn backward_batch(
        &self,
        cache: &MlpCache,
        output_grad: ArrayView2<'_, f64>,
    ) -> Result<(MlpGrads, Array2<f64>), NumericsError> {
        self.check_output_grad(cache, &output_grad)?;
        let (layers, g) = self.backward_layers(cache, output_grad.to_owned(), 0);
        Ok((MlpGrads { layers }, g))
    }

    /// Counterpart of [`MlpParams::forward_from_first_pre`]: gradients of
    /// layers `1..` and the gradient with respect to the first pre-activation.
    pub fn backward_to_first_pre(
        &self,
        cache: &MlpCache,
        output_grad: ArrayView2<'_, f64>,
    ) -> Result<(Vec<DenseGrad>, Array2<f64>), NumericsError> {
        self.check_output_grad(cache, &output_grad)?;
        let (layers, mut g) = self.backward_layers(cache, output_grad.to_owned(), 1);
        self.mask_relu(0, cache, &mut g);
        Ok((layers, g))
    }

    /// Single-example forward.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache), NumericsError> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let (out, cache) = self.forward_batch(x)?;
        Ok((out.into_raw_vec_and_offset().0, cache))
    }

    /// Single-example backward.
    pub fn backward(
        &self,
        cache: &MlpCache,
        output_grad: &[f64],
    ) -> Result<(MlpGrads, Vec<f64>), NumericsError> {
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).map_err(|_| {
            NumericsError::ShapeMismatch {
                what: "mlp output gradient",
                expected: self.output_dim(),
                found: output_grad.len(),
            }
        })?;
        let (grads, input_grad) = self.backward_batch(cache, g)?;
        Ok((grads, input_grad.into_raw_vec_and_offset().0))
    }

    pub fn sum_squares(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weight.iter().map(|x| x * x).sum::<f64>()
                    + l.bias.as_ref().map_or(0.0, |b| b.iter().map(|x| x * x).sum())
            })
            .sum()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.as_ref().map_or(0, Array1::len))
            .sum()
    }

    /// Parameters in a fixed order: per layer, weight (row-major) then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            if let Some(b) = &l.bias {
                out.extend(b.iter());
            }
        }
        out
    }

    /// Inverse of [`MlpParams::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = flat[k];
                k += 1;
            }
            if let Some(b) = &mut l.bias {
                for x in b.iter_mut() {
                    *x = flat[k];
                    k += 1;
                }
            }
        }
        assert_eq!(k, flat.len(), "flat parameter length");
    }

    /// Zeroes every weight and bias.
    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weight.fill(0.0);
            if let Some(b) = &mut l.bias {
                b.fill(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::rng::substream;

    /// Plain-loop forward pass, kept independent of the ndarray path.
    fn reference_forward(params: &MlpParams, input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        let n = params.layers.len();
        for (i, l) in params.layers.iter().enumerate() {
            let mut next = vec![0.0; l.fan_out()];
            for (o, out) in next.iter_mut().enumerate() {
                let mut acc = l.bias.as_ref().map_or(0.0, |b| b[o]);
                for (j, x) in h.iter().enumerate() {
                    acc += l.weight[[o, j]] * x;
                }
                *out = if i + 1 < n || params.final_activation {
                    acc.max(0.0)
                } else {
                    acc
                };
            }
            h = next;
        }
        h
    }

    fn seeded(sizes: &[usize], bias: bool, final_act: bool, seed: u64) -> MlpParams {
        MlpParams::glorot(sizes, bias, final_act, &mut substream(seed, "test-mlp", 0))
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut p = seeded(&[5, 4, 3], true, true, 1);
        p.zero();
        let (out, _) = p.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn single_layer_identity_passes_nonnegative_input() {
        let w = Array2::from_shape_vec((3, 3), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let p = MlpParams {
            layers: vec![Dense::new(w, None)],
            final_activation: true,
        };
        let (out, _) = p.forward(&[0.5, 0.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.5, 0.0, 2.0]);
    }

    #[test]
    fn forward_matches_reference_implementation() {
        for seed in 0..10 {
            for &(bias, fin) in &[(true, true), (false, true), (true, false)] {
                let p = seeded(&[7, 9, 6, 4], bias, fin, seed);
                let mut rng = substream(seed, "input", 0);
                let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
                let (out, _) = p.forward(&x).unwrap();
                let reference = reference_forward(&p, &x);
                for (a, b) in out.iter().zip(&reference) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let p = seeded(&[3, 2], true, true, 0);
        assert!(matches!(
            p.forward(&[1.0, 2.0]),
            Err(NumericsError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let p = seeded(&[4, 5, 3], true, true, 2);
        let (_, cache) = p.forward(&[0.3, -0.1, 0.9, 0.2]).unwrap();
        let (g, gi) = p.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 0.0));
        assert!(gi.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dead_unit_blocks_gradient() {
        // Hidden unit 0 has a strongly negative pre-activation.
        let w1 = Array2::from_shape_vec((2, 2), vec![-1.0, -1.0, 1.0, 1.0]).unwrap();
        let w2 = Array2::from_shape_vec((1, 2), vec![1.0, 1.0]).unwrap();
        let p = MlpParams {
            layers: vec![Dense::new(w1, None), Dense::new(w2, None)],
            final_activation: true,
        };
        let (_, cache) = p.forward(&[1.0, 2.0]).unwrap();
        let (g, _) = p.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.layers[0].weight.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(g.layers[0].weight.row(1).to_vec(), vec![1.0, 2.0]);
        assert_eq!(g.layers[1].weight[[0, 0]], 0.0);
    }

    #[test]
    fn backward_passes_finite_difference_check() {
        for seed in 0..5 {
            let p = seeded(&[6, 8, 5], true, true, seed);
            let mut rng = substream(seed, "fd", 0);
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            // loss = c . mlp(x)
            let (_, cache) = p.forward(&x).unwrap();
            let (grads, input_grad) = p.backward(&cache, &c).unwrap();
            let loss_of = |flat: &[f64]| {
                let mut q = p.clone();
                q.assign_flat(flat);
                let (o, _) = q.forward(&x).unwrap();
                o.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
            };
            let report = grad_check(loss_of, &p.flatten(), &grads.flatten(), 1e-5, 1e-4);
            assert!(report.passed, "seed {seed}: {report:?}");

            let loss_x = |xs: &[f64]| {
                let (o, _) = p.forward(xs).unwrap();
                o.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
            };
            let report = grad_check(loss_x, &x, &input_grad, 1e-5, 1e-4);
            assert!(report.passed, "input grad seed {seed}: {report:?}");
        }
    }

    #[test]
    fn batch_forward_matches_row_by_row() {
        let p = seeded(&[3, 4, 2], true, false, 9);
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let (out, _) = p.forward_batch(x.view()).unwrap();
        for i in 0..5 {
            let (o, _) = p.forward(x.row(i).as_slice().unwrap()).unwrap();
            for k in 0..2 {
                assert!((out[[i, k]] - o[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn first_pre_entry_points_agree_with_full_passes() {
        for final_act in [true, false] {
            let p = seeded(&[3, 4, 2], true, final_act, 5);
            let x = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - 2.5) * 0.4 - j as f64 * 0.2);
            let (out, cache) = p.forward_batch(x.view()).unwrap();
            let first = &p.layers[0];
            let pre0 = x.dot(&first.weight.t()) + first.bias.as_ref().unwrap();
            let (out2, cache2) = p.forward_from_first_pre(pre0);
            assert!((&out - &out2).iter().all(|d| d.abs() < 1e-14));

            let g = Array2::from_shape_fn((6, 2), |(i, k)| 0.3 * i as f64 - 0.5 * k as f64);
            let (full, input_grad) = p.backward_batch(&cache, g.view()).unwrap();
            let (rest, g0) = p.backward_to_first_pre(&cache2, g.view()).unwrap();
            assert_eq!(rest.len(), 1);
            assert!((&full.layers[1].weight - &rest[0].weight).iter().all(|d| d.abs() < 1e-12));
            // Folding the pre-activation gradient through the first layer by
            // hand recovers the full-pass gradients.
            assert!((&full.layers[0].weight - &g0.t().dot(&x)).iter().all(|d| d.abs() < 1e-12));
            let gb = g0.sum_axis(Axis(0));
            assert!((full.layers[0].bias.as_ref().unwrap() - &gb).iter().all(|d| d.abs() < 1e-12));
            assert!((&input_grad - &g0.dot(&first.weight)).iter().all(|d| d.abs() < 1e-12));
        }
    }
}
