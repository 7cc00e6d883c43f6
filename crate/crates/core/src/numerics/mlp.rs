//! Plain fully-connected networks over a [`ParamSet`].
//!
//! Layers are stored as `layer{i}.w` (out x in) and `layer{i}.b` (out),
//! with the activation applied between layers but not after the last one.

use crate::error::{Error, Result};
use crate::numerics::graph::{Activation, Graph, NodeId, ParamBinding};
use crate::numerics::param::ParamSet;
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::{Tensor1D, Tensor2D};

/// Layer widths of an MLP, including input and output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
}

impl MlpSpec {
    /// `layers` linear maps from `input` to `output` through `hidden`-wide
    /// intermediate layers.
    pub fn new(input: usize, hidden: usize, output: usize, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::contract("MLP needs at least one layer"));
        }
        let mut dims = Vec::with_capacity(layers + 1);
        dims.push(input);
        for _ in 1..layers {
            dims.push(hidden);
        }
        dims.push(output);
        Ok(MlpSpec { dims })
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// LeCun-style init: W ~ N(0, 1/fan_in), b = 0. All layers trainable.
    pub fn init_params(&self, rng: &mut SeededRng) -> ParamSet {
        let mut params = ParamSet::new();
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let std = (1.0 / fan_in as f64).sqrt();
            let w = Tensor2D::random_normal(fan_out, fan_in, std, rng);
            params.insert(format!("layer{l}.w"), w, true).unwrap();
            params
                .insert(format!("layer{l}.b"), Tensor1D::zeros(fan_out), true)
                .unwrap();
        }
        params
    }
}

fn layer_count(params: &ParamSet) -> Result<usize> {
    let mut n = 0;
    while params.get(&format!("layer{n}.w")).is_some() {
        n += 1;
    }
    if n == 0 {
        return Err(Error::contract("ParamSet holds no layer0.w"));
    }
    Ok(n)
}

/// Single-input forward pass. Errors name the offending layer.
pub fn forward_mlp(params: &ParamSet, input: &Tensor1D, activation: Activation) -> Result<Tensor1D> {
    let layers = layer_count(params)?;
    let mut x = input.clone();
    for l in 0..layers {
        let w = params.matrix(&format!("layer{l}.w"))?;
        let b = params.vector(&format!("layer{l}.b"))?;
        if w.cols() != x.len() {
            return Err(Error::shape(
                "forward_mlp",
                format!("layer {l}: weight {}x{} but input {}", w.rows(), w.cols(), x.len()),
            ));
        }
        x = w.matvec(&x)?.add(b)?;
        if l + 1 < layers {
            x = Tensor1D::from_vec(x.as_slice().iter().map(|&v| activation.apply(v)).collect())?;
        }
    }
    Ok(x)
}

/// Batched forward pass without gradient recording; rows of `x` are inputs.
pub fn forward_mlp_batch(
    params: &ParamSet,
    x: &Tensor2D,
    activation: Activation,
) -> Result<Tensor2D> {
    let layers = layer_count(params)?;
    let mut h = x.clone();
    for l in 0..layers {
        let w = params.matrix(&format!("layer{l}.w"))?;
        let b = params.vector(&format!("layer{l}.b"))?;
        if w.cols() != h.cols() {
            return Err(Error::shape(
                "forward_mlp_batch",
                format!("layer {l}: weight {}x{} but input width {}", w.rows(), w.cols(), h.cols()),
            ));
        }
        let mut out = h.matmul_nt(w)?;
        for r in 0..out.rows() {
            for (o, &bi) in out.row_mut(r).iter_mut().zip(b.as_slice()) {
                *o += bi;
            }
        }
        if l + 1 < layers {
            for v in out.as_mut_slice() {
                *v = activation.apply(*v);
            }
        }
        h = out;
    }
    Ok(h)
}

/// Batched forward pass recorded on a graph; `x` is a (batch x input) node.
pub fn forward_mlp_on_graph(
    graph: &mut Graph,
    binding: &ParamBinding,
    params: &ParamSet,
    x: NodeId,
    activation: Activation,
) -> Result<NodeId> {
    let layers = layer_count(params)?;
    let mut h = x;
    for l in 0..layers {
        let w = binding.node(&format!("layer{l}.w"))?;
        let b = binding.node(&format!("layer{l}.b"))?;
        h = graph.linear_batch(h, w, Some(b))?;
        if l + 1 < layers {
            h = graph.activation(h, activation)?;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut params = ParamSet::new();
        params.insert("layer0.w", Tensor2D::identity(3), true).unwrap();
        params.insert("layer0.b", Tensor1D::zeros(3), true).unwrap();
        let x = Tensor1D::from_vec(vec![0.5, -2.0, 7.0]).unwrap();
        let y = forward_mlp(&params, &x, Activation::Selu).unwrap();
        assert_eq!(y.as_slice(), x.as_slice());
    }

    #[test]
    fn two_layer_forward_matches_hand_evaluation() {
        // W0 = [[1, 2], [0, -1]], b0 = [0.1, -0.2], tanh, W1 = [[1, 1]], b1 = [0.5]
        let mut params = ParamSet::new();
        params
            .insert(
                "layer0.w",
                Tensor2D::from_rows(vec![vec![1.0, 2.0], vec![0.0, -1.0]]).unwrap(),
                true,
            )
            .unwrap();
        params
            .insert("layer0.b", Tensor1D::from_vec(vec![0.1, -0.2]).unwrap(), true)
            .unwrap();
        params
            .insert(
                "layer1.w",
                Tensor2D::from_rows(vec![vec![1.0, 1.0]]).unwrap(),
                true,
            )
            .unwrap();
        params
            .insert("layer1.b", Tensor1D::from_vec(vec![0.5]).unwrap(), true)
            .unwrap();

        let x = Tensor1D::from_vec(vec![1.0, 0.0]).unwrap();
        let y = forward_mlp(&params, &x, Activation::Tanh).unwrap();

        // Scalar hand evaluation: h = tanh([1*1+0.1, -0.2]) summed + 0.5.
        let h0 = (1.0_f64 + 0.1).tanh();
        let h1 = (-0.2_f64).tanh();
        assert_relative_eq!(y.as_slice()[0], h0 + h1 + 0.5, epsilon = 1e-15);
    }

    #[test]
    fn shape_error_names_layer() {
        let mut params = ParamSet::new();
        params.insert("layer0.w", Tensor2D::zeros(2, 3), true).unwrap();
        params.insert("layer0.b", Tensor1D::zeros(2), true).unwrap();
        let x = Tensor1D::zeros(4);
        let err = forward_mlp(&params, &x, Activation::Selu).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn graph_and_plain_forward_agree() {
        let mut rng = SeededRng::new(5);
        let spec = MlpSpec::new(4, 8, 3, 3).unwrap();
        let params = spec.init_params(&mut rng);
        let x = Tensor1D::random_normal(4, 1.0, &mut rng);

        let plain = forward_mlp(&params, &x, Activation::Selu).unwrap();

        let mut g = Graph::new();
        let binding = g.bind(&params);
        let xm = Tensor2D::from_flat(1, 4, x.as_slice().to_vec()).unwrap();
        let xid = g.matrix(xm);
        let out = forward_mlp_on_graph(&mut g, &binding, &params, xid, Activation::Selu).unwrap();
        let om = g.matrix_value(out).unwrap();
        for (a, b) in plain.as_slice().iter().zip(om.row(0)) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }
}
