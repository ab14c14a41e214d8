//! Fully connected network with SiLU hidden activations and a linear
//! output layer, with reverse-mode gradients written out by hand.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Parameters are stored flat, layer by layer: the `out × in` weight
/// matrix in row-major order followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    widths: Vec<usize>,
    params: Vec<F>,
}

/// Intermediate values kept from a forward pass for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    /// Layer inputs `a_0 … a_{L-1}` followed by the output.
    activations: Vec<Vec<F>>,
    /// Hidden pre-activations `z_1 … z_{L-1}`.
    pre: Vec<Vec<F>>,
}

impl<F> ForwardCache<F> {
    pub fn output(&self) -> &[F] {
        self.activations.last().expect("cache has an output")
    }
}

#[inline]
fn sigmoid<F: Scalar>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

#[inline]
fn silu<F: Scalar>(z: F) -> F {
    z * sigmoid(z)
}

#[inline]
fn silu_grad<F: Scalar>(z: F) -> F {
    let s = sigmoid(z);
    s * (F::one() + z * (F::one() - s))
}

pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<F: Scalar> Mlp<F> {
    pub fn from_params(widths: Vec<usize>, params: Vec<F>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config(format!("invalid layer widths {widths:?}")));
        }
        let expected = param_count(&widths);
        if params.len() != expected {
            return Err(Error::dim("network parameters", expected, params.len()));
        }
        Ok(Self { widths, params })
    }

    /// Weights `N(0, 1/fan_in)`, zero biases.
    pub fn random<R: Rng + ?Sized>(widths: Vec<usize>, rng: &mut R) -> Result<Self> {
        let mut params = Vec::with_capacity(param_count(&widths));
        for w in widths.windows(2) {
            let scale = (1.0 / w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                params.push(F::lit(scale * rng.sample::<f64, _>(StandardNormal)));
            }
            params.extend(std::iter::repeat_n(F::zero(), w[1]));
        }
        Self::from_params(widths, params)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.widths.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    /// # Panics
    /// If `input.len()` differs from the input width.
    pub fn forward(&self, input: &[F]) -> Vec<F> {
        self.forward_cached(input).activations.pop().expect("output")
    }

    pub fn forward_cached(&self, input: &[F]) -> ForwardCache<F> {
        assert_eq!(input.len(), self.input_width(), "network input width");
        let n_layers = self.widths.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers.saturating_sub(1));
        activations.push(input.to_vec());
        for (l, (start, n_in, n_out)) in self.layers().enumerate() {
            let w = &self.params[start..start + n_in * n_out];
            let b = &self.params[start + n_in * n_out..start + n_in * n_out + n_out];
            let a = activations.last().expect("layer input");
            let z: Vec<F> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    row.iter().zip(a).fold(b[o], |acc, (&wi, &ai)| acc + wi * ai)
                })
                .collect();
            if l + 1 < n_layers {
                activations.push(z.iter().map(|&v| silu(v)).collect());
                pre.push(z);
            } else {
                activations.push(z);
            }
        }
        ForwardCache { activations, pre }
    }

    /// Accumulates `∂(grad_out · output)/∂θ` into `grad`.
    pub fn backward(&self, cache: &ForwardCache<F>, grad_out: &[F], grad: &mut [F]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        let layers: Vec<_> = self.layers().collect();
        let mut delta = grad_out.to_vec();
        for (l, &(start, n_in, n_out)) in layers.iter().enumerate().rev() {
            let a = &cache.activations[l];
            let (gw, rest) = grad[start..start + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                let row = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, &ai) in row.iter_mut().zip(a) {
                    *g = *g + d * ai;
                }
                rest[o] = rest[o] + d;
            }
            if l > 0 {
                let w = &self.params[start..start + n_in * n_out];
                let z = &cache.pre[l - 1];
                delta = (0..n_in)
                    .map(|i| {
                        let s = (0..n_out).fold(F::zero(), |acc, o| acc + w[o * n_in + i] * delta[o]);
                        s * silu_grad(z[i])
                    })
                    .collect();
            }
        }
    }
}

/// Max relative error between backprop and central differences (`h = 1e-5`)
/// for the loss `½‖net(input) - target‖²`.
pub fn mlp_gradient_check<F: Scalar>(net: &Mlp<F>, input: &[F], target: &[F]) -> F {
    let loss = |m: &Mlp<F>| -> F {
        let out = m.forward(input);
        F::lit(0.5) * out.iter().zip(target).map(|(&o, &t)| (o - t) * (o - t)).sum::<F>()
    };
    let cache = net.forward_cached(input);
    let g_out: Vec<F> = cache.output().iter().zip(target).map(|(&o, &t)| o - t).collect();
    let mut grad = vec![F::zero(); net.params().len()];
    net.backward(&cache, &g_out, &mut grad);
    max_rel_error(&grad, |i, h| {
        let mut m = net.clone();
        m.params_mut()[i] = m.params()[i] + h;
        loss(&m)
    })
}

/// Compares `analytic[i]` against `(f(i, +h) - f(i, -h))/2h` with `h = 1e-5`.
pub(crate) fn max_rel_error<F: Scalar>(analytic: &[F], f: impl Fn(usize, F) -> F) -> F {
    let h = F::lit(1e-5);
    let floor = F::lit(1e-8);
    analytic
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let fd = (f(i, h) - f(i, -h)) / (F::lit(2.0) * h);
            let scale = a.abs().max(fd.abs());
            if scale < floor {
                (a - fd).abs() / floor
            } else {
                (a - fd).abs() / scale
            }
        })
        .fold(F::zero(), |m, e| m.max(e))
}
