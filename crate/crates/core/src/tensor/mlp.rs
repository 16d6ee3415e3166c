use rand::Rng;

use super::{Matrix, NamedTensor, Parameters, TensorError};

/// Affine map `y = x·W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-limit..=limit));
        Self {
            weight,
            bias: vec![0.0; fan_out],
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weight).expect("checked by caller");
        for i in 0..y.rows() {
            for (o, b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        y
    }
}

/// ReLU on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations recorded by [`Mlp::forward_recorded`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activations of each layer.
    pre: Vec<Matrix>,
}

impl MlpTape {
    pub fn output(&self) -> &Matrix {
        self.pre.last().expect("non-empty mlp")
    }
}

fn relu_in_place(m: &mut Matrix) {
    for x in m.data_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

impl Mlp {
    /// `dims = [input, hidden…, output]`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        Self {
            layers: dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn identity(dim: usize, depth: usize) -> Self {
        Self {
            layers: (0..depth)
                .map(|_| Linear {
                    weight: Matrix::identity(dim),
                    bias: vec![0.0; dim],
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.in_dim(), l.out_dim()))
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Linear::out_dim))
            .collect()
    }

    fn check_input(&self, x: &Matrix) -> Result<(), TensorError> {
        if x.cols() != self.in_dim() {
            return Err(TensorError::Shape(format!(
                "layer 0 expects {} inputs, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, TensorError> {
        self.check_input(x)?;
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if k < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    pub fn forward_recorded(&self, x: &Matrix) -> Result<MlpTape, TensorError> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            h = z.clone();
            if k < last {
                relu_in_place(&mut h);
            }
            pre.push(z);
        }
        Ok(MlpTape { inputs, pre })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the recorded input.
    pub fn backward(&self, tape: &MlpTape, d_out: &Matrix, grads: &mut Mlp) -> Matrix {
        let mut delta = d_out.clone();
        for k in (0..self.layers.len()).rev() {
            if k + 1 < self.layers.len() {
                // ReLU derivative on this layer's output.
                for (d, z) in delta.data_mut().iter_mut().zip(tape.pre[k].data()) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &tape.inputs[k];
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            let (n_in, n_out) = (layer.in_dim(), layer.out_dim());
            for r in 0..delta.rows() {
                let d_row = delta.row(r);
                if d_row.iter().all(|&d| d == 0.0) {
                    continue;
                }
                for (b, &d) in g.bias.iter_mut().zip(d_row) {
                    *b += d;
                }
                let x_row = input.row(r);
                for (i, &x) in x_row.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let w_row = &mut g.weight.data_mut()[i * n_out..(i + 1) * n_out];
                    for (w, &d) in w_row.iter_mut().zip(d_row) {
                        *w += x * d;
                    }
                }
            }
            let mut d_in = Matrix::zeros(delta.rows(), n_in);
            for r in 0..delta.rows() {
                let d_row = delta.row(r);
                let out = d_in.row_mut(r);
                for (i, o) in out.iter_mut().enumerate() {
                    let w_row = layer.weight.row(i);
                    *o = w_row.iter().zip(d_row).map(|(w, d)| w * d).sum();
                }
            }
            delta = d_in;
        }
        delta
    }

    /// Element-wise `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn named_tensors_with_prefix(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (k, l) in self.layers.iter().enumerate() {
            out.push(NamedTensor {
                name: format!("{prefix}.{k}.weight"),
                dims: vec![l.in_dim(), l.out_dim()],
                data: l.weight.data().to_vec(),
            });
            out.push(NamedTensor {
                name: format!("{prefix}.{k}.bias"),
                dims: vec![l.out_dim()],
                data: l.bias.clone(),
            });
        }
        out
    }
}

impl Parameters for Mlp {
    fn named_tensors(&self) -> Vec<NamedTensor> {
        self.named_tensors_with_prefix("mlp")
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hand_mlp() -> Mlp {
        // 2 -> 2 -> 1
        Mlp {
            layers: vec![
                Linear {
                    weight: Matrix::from_rows(&[vec![1.0, -1.0], vec![2.0, 1.0]]).unwrap(),
                    bias: vec![0.5, -3.0],
                },
                Linear {
                    weight: Matrix::from_rows(&[vec![2.0], vec![-1.0]]).unwrap(),
                    bias: vec![0.25],
                },
            ],
        }
    }

    #[test]
    fn identity_passes_non_negative_input() {
        let x = Matrix::from_rows(&[vec![0.0, 1.5, 2.0]]).unwrap();
        assert_eq!(Mlp::identity(3, 2).forward(&x).unwrap(), x);
    }

    #[test]
    fn hand_computed_two_layer() {
        // x = (1, 2): pre = (1*1 + 2*2 + .5, 1*-1 + 2*1 - 3) = (5.5, -2)
        // relu -> (5.5, 0); out = 5.5*2 + 0 + .25 = 11.25
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let y = hand_mlp().forward(&x).unwrap();
        assert_eq!(y.data(), &[11.25]);
    }

    #[test]
    fn negative_hidden_preactivation_is_zeroed() {
        let tape = hand_mlp()
            .forward_recorded(&Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap())
            .unwrap();
        assert_eq!(tape.pre[0].data(), &[5.5, -2.0]);
        assert_eq!(tape.inputs[1].data(), &[5.5, 0.0]);
    }

    #[test]
    fn shape_error_names_layer() {
        let err = hand_mlp().forward(&Matrix::zeros(1, 3)).unwrap_err();
        assert!(matches!(err, TensorError::Shape(ref s) if s.contains("layer 0")));
    }

    #[test]
    fn single_linear_squared_loss_closed_form() {
        // L = ||xW - y||^2 summed; dL/dW = 2 x^T (xW - y)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::init(&[3, 2], &mut rng);
        let x = Matrix::from_fn(4, 3, |i, j| (i as f64 - j as f64) * 0.3 + 0.1);
        let y = Matrix::from_fn(4, 2, |i, j| (i + j) as f64 * 0.2);
        let tape = mlp.forward_recorded(&x).unwrap();
        let resid = Matrix::from_fn(4, 2, |i, j| tape.output().get(i, j) - y.get(i, j));
        let d_out = Matrix::from_fn(4, 2, |i, j| 2.0 * resid.get(i, j));
        let mut grads = mlp.zeros_like();
        mlp.backward(&tape, &d_out, &mut grads);
        let closed = x.transpose().matmul(&d_out).unwrap();
        assert!(grads.layers[0].weight.max_abs_diff(&closed) < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::init(&[4, 5, 3], &mut rng);
        let x = Matrix::from_fn(3, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.4 - 0.9);
        // L = sum(out * c) for fixed c.
        let c = Matrix::from_fn(3, 3, |i, j| (i as f64 + 1.0) * 0.5 - j as f64 * 0.3);
        let loss = |m: &Mlp| -> f64 {
            let y = m.forward(&x).unwrap();
            y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
        };
        let tape = mlp.forward_recorded(&x).unwrap();
        let mut grads = mlp.zeros_like();
        let dx = mlp.backward(&tape, &c, &mut grads);
        let h = 1e-6;
        let mut probe = mlp.clone();
        let analytic: Vec<f64> = grads.tensors_mut().into_iter().flat_map(|t| t.to_vec()).collect();
        let set = |m: &mut Mlp, idx: usize, value: f64| {
            let mut i = idx;
            for t in m.tensors_mut() {
                if i < t.len() {
                    t[i] = value;
                    return;
                }
                i -= t.len();
            }
            unreachable!()
        };
        let base: Vec<f64> = probe.tensors_mut().into_iter().flat_map(|t| t.to_vec()).collect();
        for (idx, (&orig, &g)) in base.iter().zip(&analytic).enumerate() {
            set(&mut probe, idx, orig + h);
            let up = loss(&probe);
            set(&mut probe, idx, orig - h);
            let down = loss(&probe);
            set(&mut probe, idx, orig);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g).abs() < 1e-6, "param {idx}: {fd} vs {g}");
        }
        // Input gradient.
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut xp = x.clone();
                xp.set(i, j, x.get(i, j) + h);
                let up: f64 = mlp
                    .forward(&xp)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(c.data())
                    .map(|(a, b)| a * b)
                    .sum();
                xp.set(i, j, x.get(i, j) - h);
                let down: f64 = mlp
                    .forward(&xp)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(c.data())
                    .map(|(a, b)| a * b)
                    .sum();
                assert!(((up - down) / (2.0 * h) - dx.get(i, j)).abs() < 1e-6);
            }
        }
    }
}
