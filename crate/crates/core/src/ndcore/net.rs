//! Feedforward ReLU networks with an explicit per-layer backward pass.

use super::array::{gemm, RealArray};
use super::rng::Rng;
use crate::error::{Result, SiviError};

/// Fully connected network: ReLU on hidden layers, identity on the output.
///
/// Layer `l` maps `layer_dims[l] -> layer_dims[l + 1]` with weights stored
/// row-major as `[out, in]`. Flat parameter order is `W_0, b_0, W_1, b_1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layer_dims: Vec<usize>,
    weights: Vec<RealArray>,
    biases: Vec<RealArray>,
}

/// Values cached by [`DenseNet::forward_traced`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (the network input followed by hidden activations).
    layer_inputs: Vec<RealArray>,
    /// Pre-activations of each hidden layer.
    pre_activations: Vec<RealArray>,
    output: RealArray,
}

impl ForwardTrace {
    pub fn output(&self) -> &RealArray {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.rows()
    }
}

#[derive(Debug, Clone)]
pub struct NetGradients {
    /// Flat gradient in parameter order.
    pub params: Vec<f64>,
    pub input: RealArray,
}

impl DenseNet {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn new(layer_dims: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(layer_dims)?;
        for w in &mut net.weights {
            let fan_in = w.cols() as f64;
            let std = (2.0 / fan_in).sqrt();
            for v in w.data_mut() {
                *v = std * rng.standard_normal();
            }
        }
        Ok(net)
    }

    /// Two hidden layers of equal `width`.
    pub fn two_hidden(input: usize, width: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        Self::new(&[input, width, width, output], rng)
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(SiviError::InvalidConfig(format!(
                "layer dims must have at least two positive entries, got {layer_dims:?}"
            )));
        }
        let weights = layer_dims.windows(2).map(|d| RealArray::zeros(&[d[1], d[0]])).collect();
        let biases = layer_dims[1..].iter().map(|&d| RealArray::zeros(&[d])).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn weights(&self, layer: usize) -> &RealArray {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut RealArray {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &RealArray {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut RealArray {
        &mut self.biases[layer]
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    /// Overwrites all parameters from a flat slice of length `num_params()`.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(SiviError::DimensionMismatch {
                expected: self.num_params(),
                found: params.len(),
            });
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let n = w.len();
            w.data_mut().copy_from_slice(&params[offset..offset + n]);
            offset += n;
            let n = b.len();
            b.data_mut().copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn check_input(&self, input: &RealArray) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(SiviError::ShapeMismatch {
                layer: 0,
                expected: self.input_dim(),
                found: input.cols(),
            });
        }
        Ok(())
    }

    fn affine(&self, layer: usize, input: &RealArray) -> RealArray {
        let w = &self.weights[layer];
        let (out_dim, in_dim) = (w.rows(), w.cols());
        let batch = input.rows();
        let mut data = Vec::with_capacity(batch * out_dim);
        for _ in 0..batch {
            data.extend_from_slice(self.biases[layer].data());
        }
        // y[b, o] += sum_i x[b, i] * W[o, i]
        gemm(
            batch,
            in_dim,
            out_dim,
            input.data(),
            (in_dim as isize, 1),
            w.data(),
            (1, in_dim as isize),
            1.0,
            &mut data,
        );
        RealArray::matrix(batch, out_dim, data).expect("affine output shape")
    }

    /// Batched forward pass; `input` is `[batch, input_dim]`.
    pub fn forward(&self, input: &RealArray) -> Result<RealArray> {
        self.check_input(input)?;
        let last = self.num_layers() - 1;
        let mut h = self.affine(0, input);
        for layer in 1..=last {
            relu_in_place(&mut h);
            h = self.affine(layer, &h);
        }
        Ok(h)
    }

    pub fn forward_traced(&self, input: &RealArray) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let last = self.num_layers() - 1;
        let mut layer_inputs = vec![input.clone()];
        let mut pre_activations = Vec::with_capacity(last);
        let mut h = self.affine(0, input);
        for layer in 1..=last {
            let mut act = h.clone();
            relu_in_place(&mut act);
            pre_activations.push(h);
            h = self.affine(layer, &act);
            layer_inputs.push(act);
        }
        Ok(ForwardTrace {
            layer_inputs,
            pre_activations,
            output: h,
        })
    }

    /// Reverse pass: gradients of `sum(output * output_cotangent)` with respect to
    /// the parameters (summed over the batch) and to the input.
    pub fn backward(&self, trace: &ForwardTrace, output_cotangent: &RealArray) -> Result<NetGradients> {
        let mut params = vec![0.0; self.num_params()];
        let input = self.backward_accumulate(trace, output_cotangent, &mut params)?;
        Ok(NetGradients { params, input })
    }

    /// As [`backward`](Self::backward) but adds the parameter gradient into
    /// `param_grad` and returns only the input gradient.
    pub fn backward_accumulate(
        &self,
        trace: &ForwardTrace,
        output_cotangent: &RealArray,
        param_grad: &mut [f64],
    ) -> Result<RealArray> {
        let batch = trace.batch_size();
        let last = self.num_layers() - 1;
        if output_cotangent.cols() != self.output_dim() {
            return Err(SiviError::ShapeMismatch {
                layer: last,
                expected: self.output_dim(),
                found: output_cotangent.cols(),
            });
        }
        if output_cotangent.rows() != batch {
            return Err(SiviError::DimensionMismatch {
                expected: batch,
                found: output_cotangent.rows(),
            });
        }
        if param_grad.len() != self.num_params() {
            return Err(SiviError::DimensionMismatch {
                expected: self.num_params(),
                found: param_grad.len(),
            });
        }
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut offset = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            offsets.push(offset);
            offset += w.len() + b.len();
        }

        let mut delta = output_cotangent.clone();
        for layer in (0..=last).rev() {
            let w = &self.weights[layer];
            let (out_dim, in_dim) = (w.rows(), w.cols());
            let x = &trace.layer_inputs[layer];
            let off = offsets[layer];
            // dW[o, i] += sum_b delta[b, o] * x[b, i]
            gemm(
                out_dim,
                batch,
                in_dim,
                delta.data(),
                (1, out_dim as isize),
                x.data(),
                (in_dim as isize, 1),
                1.0,
                &mut param_grad[off..off + out_dim * in_dim],
            );
            let db = &mut param_grad[off + out_dim * in_dim..off + out_dim * in_dim + out_dim];
            for row in delta.row_iter() {
                for (g, d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }
            // dx[b, i] = sum_o delta[b, o] * W[o, i]
            let mut dx = vec![0.0; batch * in_dim];
            gemm(
                batch,
                out_dim,
                in_dim,
                delta.data(),
                (out_dim as isize, 1),
                w.data(),
                (in_dim as isize, 1),
                0.0,
                &mut dx,
            );
            let mut dx = RealArray::matrix(batch, in_dim, dx).expect("input grad shape");
            if layer > 0 {
                let pre = &trace.pre_activations[layer - 1];
                for (g, p) in dx.data_mut().iter_mut().zip(pre.data()) {
                    if *p <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }
}

fn relu_in_place(a: &mut RealArray) {
    for v in a.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_net(dims: &[usize], seed: u64) -> DenseNet {
        let mut rng = Rng::new(seed);
        let mut net = DenseNet::new(dims, &mut rng).unwrap();
        // non-zero biases so every code path is exercised
        for l in 0..net.num_layers() {
            for b in net.biases_mut(l).data_mut() {
                *b = 0.1 * rng.standard_normal();
            }
        }
        net
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = DenseNet::zeros(&[3, 4, 4, 2]).unwrap();
        net.biases_mut(2).data_mut().copy_from_slice(&[1.5, -2.0]);
        let x = Rng::new(1).standard_normal_array(&[5, 3]);
        let y = net.forward(&x).unwrap();
        for row in y.row_iter() {
            assert_eq!(row, &[1.5, -2.0]);
        }
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = DenseNet::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            net.weights_mut(0).data_mut()[i * 3 + i] = 1.0;
        }
        let x = Rng::new(2).standard_normal_array(&[4, 3]);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn relu_clips_negative_preactivation() {
        // hidden pre-activation is -1, output = 1 * relu(-1) + 0 = 0
        let mut net = DenseNet::zeros(&[1, 1, 1]).unwrap();
        net.weights_mut(0).data_mut()[0] = 1.0;
        net.biases_mut(0).data_mut()[0] = -2.0;
        net.weights_mut(1).data_mut()[0] = 1.0;
        let y = net.forward(&RealArray::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = DenseNet::zeros(&[3, 4, 2]).unwrap();
        let err = net.forward(&RealArray::zeros(&[2, 5])).unwrap_err();
        assert!(matches!(
            err,
            SiviError::ShapeMismatch {
                layer: 0,
                expected: 3,
                found: 5
            }
        ));
        let trace = net.forward_traced(&RealArray::zeros(&[2, 3])).unwrap();
        let err = net.backward(&trace, &RealArray::zeros(&[2, 3])).unwrap_err();
        assert!(matches!(err, SiviError::ShapeMismatch { layer: 1, .. }));
    }

    #[test]
    fn linear_scalar_gradient_is_input() {
        let mut net = DenseNet::zeros(&[3, 1]).unwrap();
        net.weights_mut(0).data_mut().copy_from_slice(&[0.3, -0.2, 0.5]);
        let x = RealArray::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let trace = net.forward_traced(&x).unwrap();
        let g = net
            .backward(&trace, &RealArray::matrix(1, 1, vec![1.0]).unwrap())
            .unwrap();
        assert_eq!(&g.params[..3], x.data());
        assert_eq!(g.params[3], 1.0);
        assert_eq!(g.input.data(), &[0.3, -0.2, 0.5]);
    }

    #[test]
    fn square_loss_chain_rule() {
        // net(x) = 3, loss = net^2, dloss/dnet = 6, propagated as cotangent
        let mut net = DenseNet::zeros(&[1, 1]).unwrap();
        net.biases_mut(0).data_mut()[0] = 3.0;
        let x = RealArray::matrix(1, 1, vec![0.7]).unwrap();
        let trace = net.forward_traced(&x).unwrap();
        let y = trace.output().data()[0];
        let g = net
            .backward(&trace, &RealArray::matrix(1, 1, vec![2.0 * y]).unwrap())
            .unwrap();
        assert_eq!(g.params[1], 6.0);
        assert!((g.params[0] - 6.0 * 0.7).abs() < 1e-15);
    }

    /// Central differences of `sum(net(x) * c)`.
    fn fd_param_grad(net: &DenseNet, x: &RealArray, c: &RealArray, h: f64) -> Vec<f64> {
        let p0 = net.params();
        let f = |p: &[f64]| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            let y = n.forward(x).unwrap();
            y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        (0..p0.len())
            .map(|i| {
                let mut p = p0.clone();
                p[i] += h;
                let up = f(&p);
                p[i] -= 2.0 * h;
                (up - f(&p)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (dims, seed) in [(vec![2, 8, 8, 2], 3), (vec![1, 16, 16, 1], 4), (vec![5, 8, 8, 5], 5)] {
            let net = random_net(&dims, seed);
            let mut rng = Rng::new(seed + 100);
            let x = rng.standard_normal_array(&[6, dims[0]]);
            let c = rng.standard_normal_array(&[6, *dims.last().unwrap()]);
            let trace = net.forward_traced(&x).unwrap();
            let g = net.backward(&trace, &c).unwrap();
            let fd = fd_param_grad(&net, &x, &c, 1e-5);
            for (i, (a, b)) in g.params.iter().zip(&fd).enumerate() {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
                assert!(rel < 1e-5 || (a - b).abs() < 1e-9, "param {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let net = random_net(&[2, 32, 32, 2], 9);
        let x = Rng::new(10).standard_normal_array(&[50, 2]);
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        assert_eq!(net.forward(&x).unwrap(), *net.forward_traced(&x).unwrap().output());
    }

    #[test]
    fn params_round_trip() {
        let net = random_net(&[2, 4, 4, 3], 11);
        let mut other = DenseNet::zeros(&[2, 4, 4, 3]).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(net, other);
        assert!(other.set_params(&[0.0; 3]).is_err());
    }
}
