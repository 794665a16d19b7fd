//! Layer descriptors: thin structs of parameter ids plus a forward that
//! appends the layer's ops to a graph.

use crate::error::Result;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, Parameters};
use super::rng::SeededRng;
use super::tensor::Scalar;

/// Fully connected layer, `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<S: Scalar>(
        params: &mut Parameters<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let w = params.add_glorot(format!("{name}.w"), &[in_dim, out_dim], in_dim, out_dim, rng)?;
        let b = params.add_zeros(format!("{name}.b"), &[out_dim])?;
        Ok(Dense { w, b, in_dim, out_dim })
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &Parameters<S>,
        x: NodeId,
    ) -> Result<NodeId> {
        let w = g.param(params, self.w)?;
        let b = g.param(params, self.b)?;
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

/// Strided convolution, NHWC activations, HWIO kernel.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new<S: Scalar>(
        params: &mut Parameters<S>,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let fan_in = in_c * kernel * kernel;
        let fan_out = out_c * kernel * kernel;
        let w = params.add_glorot(
            format!("{name}.w"),
            &[kernel, kernel, in_c, out_c],
            fan_in,
            fan_out,
            rng,
        )?;
        let b = params.add_zeros(format!("{name}.b"), &[out_c])?;
        Ok(Conv2d { w, b, stride, pad })
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &Parameters<S>,
        x: NodeId,
    ) -> Result<NodeId> {
        let w = g.param(params, self.w)?;
        let b = g.param(params, self.b)?;
        let y = g.conv2d(x, w, self.stride, self.pad)?;
        g.add_bias(y, b)
    }
}

/// Transposed convolution, NHWC activations, HWOI kernel.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        params: &mut Parameters<S>,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let fan_in = in_c * kernel * kernel;
        let fan_out = out_c * kernel * kernel;
        let w = params.add_glorot(
            format!("{name}.w"),
            &[kernel, kernel, out_c, in_c],
            fan_in,
            fan_out,
            rng,
        )?;
        let b = params.add_zeros(format!("{name}.b"), &[out_c])?;
        Ok(ConvTranspose2d {
            w,
            b,
            stride,
            pad,
            out_pad,
        })
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &Parameters<S>,
        x: NodeId,
    ) -> Result<NodeId> {
        let w = g.param(params, self.w)?;
        let b = g.param(params, self.b)?;
        let y = g.conv_transpose2d(x, w, self.stride, self.pad, self.out_pad)?;
        g.add_bias(y, b)
    }
}

/// Activation applied between MLP layers.
#[derive(Debug, Clone, Copy)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply<S: Scalar>(&self, g: &mut Graph<S>, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu(s) => g.leaky_relu(x, *s),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Linear => Ok(x),
        }
    }
}

/// Stack of dense layers with one hidden activation and one output
/// activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    pub fn new<S: Scalar>(
        params: &mut Parameters<S>,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            layers.push(Dense::new(
                params,
                &format!("{name}.fc{}", i + 1),
                dims[i],
                dims[i + 1],
                rng,
            )?);
        }
        Ok(Mlp {
            layers,
            hidden,
            output,
        })
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &Parameters<S>,
        mut x: NodeId,
    ) -> Result<NodeId> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, params, x)?;
            x = if i + 1 == n {
                self.output.apply(g, x)?
            } else {
                self.hidden.apply(g, x)?
            };
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    #[test]
    fn dense_shapes() {
        let mut params = Parameters::<f32>::new();
        let mut rng = SeededRng::new(0);
        let layer = Dense::new(&mut params, "fc", 4, 3, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 4], 0.5)).unwrap();
        let y = layer.forward(&mut g, &params, x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 3]);
    }

    #[test]
    fn mlp_three_layers_param_count() {
        let mut params = Parameters::<f32>::new();
        let mut rng = SeededRng::new(0);
        let mlp = Mlp::new(
            &mut params,
            "t_fg",
            &[100, 128, 128, 100],
            Activation::Relu,
            Activation::Linear,
            &mut rng,
        )
        .unwrap();
        assert_eq!(mlp.layers.len(), 3);
        assert_eq!(params.len(), 6); // 3 weights + 3 biases
    }

    #[test]
    fn conv_stack_roundtrip_shapes() {
        let mut params = Parameters::<f32>::new();
        let mut rng = SeededRng::new(0);
        let down = Conv2d::new(&mut params, "c", 3, 8, 5, 2, 2, &mut rng).unwrap();
        let up = ConvTranspose2d::new(&mut params, "t", 8, 3, 5, 2, 2, 1, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 32, 32, 3], 0.1)).unwrap();
        let y = down.forward(&mut g, &params, x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 16, 16, 8]);
        let z = up.forward(&mut g, &params, y).unwrap();
        assert_eq!(g.value(z).shape(), &[1, 32, 32, 3]);
    }
}
