use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{ParamVector, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Silu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Silu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

fn default_max_frequency() -> f64 {
    64.0
}

fn default_time_scale() -> f64 {
    1.0
}

/// Shape of a fully connected network on `(t, x, class)`.
///
/// The input features are `[x | sin/cos time features | one-hot class]`;
/// `time_embed_dim = 0` or `context_dim = 0` drops the corresponding block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    /// Number of sinusoidal time features (twice the number of frequencies).
    #[serde(default)]
    pub time_embed_dim: usize,
    /// Largest angular frequency of the time features; frequencies are
    /// geometrically spaced from 1 up to this value.
    #[serde(default = "default_max_frequency")]
    pub max_frequency: f64,
    /// Time is multiplied by this before embedding, so `1/T` maps `[0, T]` to `[0, 1]`.
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
    /// Number of classes for the one-hot context block.
    #[serde(default)]
    pub context_dim: usize,
}

impl MlpSpec {
    /// Default network for low-dimensional data: two hidden layers of 64
    /// SiLU units and 16 time frequencies.
    pub fn small(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![64, 64],
            output_dim,
            activation: Activation::Silu,
            time_embed_dim: 32,
            max_frequency: default_max_frequency(),
            time_scale: 1.0,
            context_dim: 0,
        }
    }

    /// `out = W x + b`, no time or context input.
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![],
            output_dim,
            activation: Activation::Identity,
            time_embed_dim: 0,
            max_frequency: default_max_frequency(),
            time_scale: 1.0,
            context_dim: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.input_dim > 0 && self.output_dim > 0, || {
            "input and output dims must be positive".into()
        })?;
        ensure(self.hidden_dims.iter().all(|&h| h > 0), || {
            "hidden dims must be positive".into()
        })?;
        ensure(self.time_embed_dim.is_multiple_of(2), || {
            format!("time_embed_dim must be even, got {}", self.time_embed_dim)
        })?;
        ensure(self.max_frequency > 0.0 && self.time_scale.is_finite(), || {
            "time embedding parameters must be finite and positive".into()
        })
    }

    pub fn in_features(&self) -> usize {
        self.input_dim + self.time_embed_dim + self.context_dim
    }

    /// `(fan_in, fan_out)` for each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.in_features();
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut offset = 0;
        let mut out = Vec::new();
        for (l, (i, o)) in self.layer_dims().into_iter().enumerate() {
            out.push(Segment {
                name: format!("layer{l}.weight"),
                offset,
                len: i * o,
            });
            offset += i * o;
            out.push(Segment {
                name: format!("layer{l}.bias"),
                offset,
                len: o,
            });
            offset += o;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

/// Batched network inputs. `class` may be empty when the network has no
/// context block.
#[derive(Debug, Clone, Copy)]
pub struct MlpInput<'a> {
    pub t: &'a [f64],
    pub x: ArrayView2<'a, f64>,
    pub class: &'a [usize],
}

impl<'a> MlpInput<'a> {
    pub fn new(t: &'a [f64], x: ArrayView2<'a, f64>, class: &'a [usize]) -> Self {
        Self { t, x, class }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Layer inputs; `inputs[0]` is the feature matrix.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// A multilayer perceptron evaluated against an external flat parameter array.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
    freqs: Vec<f64>,
    n_params: usize,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in spec.layer_dims() {
            layers.push(Layer {
                fan_in,
                fan_out,
                w: offset,
                b: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
        }
        let n_freq = spec.time_embed_dim / 2;
        let freqs = (0..n_freq)
            .map(|k| {
                if n_freq == 1 {
                    1.0
                } else {
                    spec.max_frequency.powf(k as f64 / (n_freq - 1) as f64)
                }
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            freqs,
            n_params: offset,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Gaussian fan-in initialization with zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = vec![0.0; self.n_params];
        for layer in &self.layers {
            let scale = (1.0 / layer.fan_in as f64).sqrt();
            for v in &mut values[layer.w..layer.w + layer.fan_in * layer.fan_out] {
                let z: f64 = rng.sample(StandardNormal);
                *v = scale * z;
            }
        }
        ParamVector::new(values, self.spec.segments()).expect("layout matches spec")
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector::new(vec![0.0; self.n_params], self.spec.segments()).expect("layout matches spec")
    }

    /// Zeroes the output layer so the network starts at the zero function.
    pub fn zero_final_layer(&self, params: &mut [f64]) {
        let last = self.layers.last().unwrap();
        params[last.w..last.b + last.fan_out].fill(0.0);
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::ShapeMismatch {
                expected: self.n_params,
                got: params.len(),
            });
        }
        Ok(())
    }

    /// Builds the `[x | time | class]` feature matrix.
    pub fn features(&self, input: &MlpInput) -> Result<Array2<f64>> {
        let b = input.len();
        let spec = &self.spec;
        if input.x.ncols() != spec.input_dim {
            return Err(Error::ShapeMismatch {
                expected: spec.input_dim,
                got: input.x.ncols(),
            });
        }
        if input.t.len() != b {
            return Err(Error::ShapeMismatch {
                expected: b,
                got: input.t.len(),
            });
        }
        if !input.class.is_empty() && input.class.len() != b {
            return Err(Error::ShapeMismatch {
                expected: b,
                got: input.class.len(),
            });
        }
        let mut feats = Array2::<f64>::zeros((b, spec.in_features()));
        feats.slice_mut(s![.., ..spec.input_dim]).assign(&input.x);
        let t0 = spec.input_dim;
        let n_freq = self.freqs.len();
        for (row, &t) in input.t.iter().enumerate() {
            let tau = t * spec.time_scale;
            for (k, w) in self.freqs.iter().enumerate() {
                let (sn, cs) = (w * tau).sin_cos();
                feats[[row, t0 + k]] = sn;
                feats[[row, t0 + n_freq + k]] = cs;
            }
        }
        if spec.context_dim > 0 {
            let c0 = t0 + spec.time_embed_dim;
            for row in 0..b {
                let c = input.class.get(row).copied().unwrap_or(0);
                if c >= spec.context_dim {
                    return Err(Error::InvalidParameter(format!(
                        "class {c} out of range for {} classes",
                        spec.context_dim
                    )));
                }
                feats[[row, c0 + c]] = 1.0;
            }
        }
        Ok(feats)
    }

    fn weights<'p>(&self, params: &'p [f64], layer: &Layer) -> ArrayView2<'p, f64> {
        ArrayView2::from_shape(
            (layer.fan_in, layer.fan_out),
            &params[layer.w..layer.w + layer.fan_in * layer.fan_out],
        )
        .expect("layer layout")
    }

    fn bias<'p>(&self, params: &'p [f64], layer: &Layer) -> ndarray::ArrayView1<'p, f64> {
        ndarray::ArrayView1::from(&params[layer.b..layer.b + layer.fan_out])
    }

    pub fn forward_tape(&self, params: &[f64], input: &MlpInput) -> Result<Tape> {
        self.check_params(params)?;
        let mut a = self.features(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&self.weights(params, layer));
            z += &self.bias(params, layer);
            inputs.push(a);
            if l == last {
                return Ok(Tape {
                    inputs,
                    pre,
                    output: z,
                });
            }
            let act = self.spec.activation;
            a = z.mapv(|v| act.apply(v));
            pre.push(z);
        }
        unreachable!("network has at least one layer")
    }

    pub fn forward_batch(&self, params: &[f64], input: &MlpInput) -> Result<Array2<f64>> {
        self.check_params(params)?;
        let mut a = self.features(input)?;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&self.weights(params, layer));
            z += &self.bias(params, layer);
            if l == last {
                return Ok(z);
            }
            let act = self.spec.activation;
            z.mapv_inplace(|v| act.apply(v));
            a = z;
        }
        unreachable!("network has at least one layer")
    }

    /// Single-point evaluation.
    pub fn forward(&self, params: &[f64], t: f64, x: &[f64], class: usize) -> Result<Vec<f64>> {
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|_| Error::ShapeMismatch {
            expected: self.spec.input_dim,
            got: x.len(),
        })?;
        let cls = [class];
        let input = MlpInput::new(std::slice::from_ref(&t), xv, if self.spec.context_dim > 0 { &cls } else { &[] });
        Ok(self.forward_batch(params, &input)?.row(0).to_vec())
    }

    /// Reverse pass. Accumulates `d loss / d params` into `grad` when given and
    /// returns `d loss / d x` (batch x input_dim).
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        d_out: ArrayView2<f64>,
        mut grad: Option<&mut [f64]>,
    ) -> Array2<f64> {
        let mut delta = d_out.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a_in = &tape.inputs[l];
            if let Some(g) = grad.as_deref_mut() {
                let dw = a_in.t().dot(&delta);
                let gw = &mut g[layer.w..layer.w + layer.fan_in * layer.fan_out];
                for (dst, src) in gw.iter_mut().zip(dw.iter()) {
                    *dst += src;
                }
                let db: Array1<f64> = delta.sum_axis(Axis(0));
                for (dst, src) in g[layer.b..layer.b + layer.fan_out].iter_mut().zip(db.iter()) {
                    *dst += src;
                }
            }
            let d_in = delta.dot(&self.weights(params, layer).t());
            if l == 0 {
                return d_in.slice(s![.., ..self.spec.input_dim]).to_owned();
            }
            let act = self.spec.activation;
            let z = &tape.pre[l - 1];
            delta = d_in;
            ndarray::Zip::from(&mut delta)
                .and(z)
                .for_each(|d, &zv| *d *= act.derivative(zv));
        }
        unreachable!("network has at least one layer")
    }

    /// Reverse-mode gradient of a scalar loss of the batch outputs.
    ///
    /// `loss` receives the outputs and returns the loss value together with
    /// its gradient with respect to those outputs.
    pub fn grad_params<F>(&self, params: &[f64], input: &MlpInput, loss: F) -> Result<(f64, ParamVector)>
    where
        F: FnOnce(ArrayView2<f64>) -> (f64, Array2<f64>),
    {
        let tape = self.forward_tape(params, input)?;
        let (value, d_out) = loss(tape.output.view());
        if !value.is_finite() {
            return Err(Error::NonFinite { step: 0, what: "loss" });
        }
        let mut grad = vec![0.0; self.n_params];
        self.backward(params, &tape, d_out.view(), Some(&mut grad));
        Ok((value, ParamVector::new(grad, self.spec.segments())?))
    }

    /// Jacobian `d out / d x` at a single point, shape `(output_dim, input_dim)`.
    pub fn grad_input(&self, params: &[f64], t: f64, x: &[f64], class: usize) -> Result<Array2<f64>> {
        let out_dim = self.spec.output_dim;
        let xs = Array2::from_shape_fn((out_dim, x.len()), |(_, j)| x[j]);
        let ts = vec![t; out_dim];
        let cls = vec![class; if self.spec.context_dim > 0 { out_dim } else { 0 }];
        let input = MlpInput::new(&ts, xs.view(), &cls);
        let tape = self.forward_tape(params, &input)?;
        let eye = Array2::<f64>::eye(out_dim);
        Ok(self.backward(params, &tape, eye.view(), None))
    }

    /// Vector-Jacobian product with respect to the inputs, row by row.
    pub fn input_vjp(&self, params: &[f64], input: &MlpInput, cotangent: ArrayView2<f64>) -> Result<Array2<f64>> {
        let tape = self.forward_tape(params, input)?;
        Ok(self.backward(params, &tape, cotangent, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(spec: MlpSpec, seed: u64) -> (Mlp, ParamVector) {
        let mlp = Mlp::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = mlp.init_params(&mut rng);
        (mlp, p)
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, d: usize) -> (Vec<f64>, Array2<f64>) {
        let t: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x = Array2::from_shape_fn((b, d), |_| rng.sample::<f64, _>(StandardNormal));
        (t, x)
    }

    #[test]
    fn zero_final_layer_gives_zero_output() {
        let (mlp, mut p) = net(MlpSpec::small(2, 2), 1);
        mlp.zero_final_layer(p.as_mut_slice());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (t, x) = random_batch(&mut rng, 16, 2);
        let out = mlp.forward_batch(p.as_slice(), &MlpInput::new(&t, x.view(), &[])).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let (mlp, p) = net(MlpSpec::small(2, 3), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t, x) = random_batch(&mut rng, 8, 2);
        let out = mlp.forward_batch(p.as_slice(), &MlpInput::new(&t, x.view(), &[])).unwrap();
        let perm: Vec<usize> = (0..8).rev().collect();
        let tp: Vec<f64> = perm.iter().map(|&i| t[i]).collect();
        let xp = x.select(Axis(0), &perm);
        let outp = mlp.forward_batch(p.as_slice(), &MlpInput::new(&tp, xp.view(), &[])).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(outp.row(k), out.row(i));
        }
    }

    #[test]
    fn forward_is_deterministic_for_fixed_seed() {
        let (mlp, p) = net(MlpSpec::small(2, 2), 9);
        let (_, q) = net(MlpSpec::small(2, 2), 9);
        assert_eq!(p, q);
        let a = mlp.forward(p.as_slice(), 0.3, &[0.1, -0.2], 0).unwrap();
        let b = mlp.forward(q.as_slice(), 0.3, &[0.1, -0.2], 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors() {
        let (mlp, p) = net(MlpSpec::small(2, 2), 1);
        assert!(mlp.forward(p.as_slice(), 0.1, &[1.0, 2.0, 3.0], 0).is_err());
        assert!(mlp.forward(&p.as_slice()[1..], 0.1, &[1.0, 2.0], 0).is_err());
        let mut spec = MlpSpec::small(2, 2);
        spec.context_dim = 2;
        let (mlp, p) = net(spec, 1);
        assert!(mlp.forward(p.as_slice(), 0.1, &[1.0, 2.0], 5).is_err());
    }

    #[test]
    fn param_count_matches_layout() {
        let spec = MlpSpec::small(2, 2);
        // (2 + 32) * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2
        assert_eq!(spec.param_count(), 34 * 64 + 64 + 64 * 64 + 64 + 130);
        let segs = spec.segments();
        assert_eq!(segs.last().map(|s| s.offset + s.len), Some(spec.param_count()));
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let (mlp, p) = net(MlpSpec::small(2, 2), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, x) = random_batch(&mut rng, 4, 2);
        let (v, g) = mlp
            .grad_params(p.as_slice(), &MlpInput::new(&t, x.view(), &[]), |out| {
                (7.0, Array2::zeros(out.raw_dim()))
            })
            .unwrap();
        assert_eq!(v, 7.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let (mlp, p) = net(MlpSpec::small(2, 2), 3);
        let t = [0.5];
        let x = Array2::zeros((1, 2));
        let r = mlp.grad_params(p.as_slice(), &MlpInput::new(&t, x.view(), &[]), |out| {
            (f64::NAN, Array2::zeros(out.raw_dim()))
        });
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        let (mlp, p) = net(MlpSpec::small(2, 2), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (t, x) = random_batch(&mut rng, 6, 2);
        let input = MlpInput::new(&t, x.view(), &[]);
        let l1 = |out: ArrayView2<f64>| (out.sum(), Array2::ones(out.raw_dim()));
        let l2 = |out: ArrayView2<f64>| (out.mapv(|v| v * v).sum(), out.mapv(|v| 2.0 * v));
        let (a, b) = (0.7, -1.3);
        let g1 = mlp.grad_params(p.as_slice(), &input, l1).unwrap().1;
        let g2 = mlp.grad_params(p.as_slice(), &input, l2).unwrap().1;
        let g = mlp
            .grad_params(p.as_slice(), &input, |out| {
                let (v1, d1) = l1(out);
                let (v2, d2) = l2(out);
                (a * v1 + b * v2, d1 * a + d2 * b)
            })
            .unwrap()
            .1;
        for ((x, y), z) in g1.as_slice().iter().zip(g2.as_slice()).zip(g.as_slice()) {
            assert!((a * x + b * y - z).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_network_input_gradient_is_weight() {
        let (mlp, p) = net(MlpSpec::linear(3, 1), 2);
        let jac = mlp.grad_input(p.as_slice(), 0.0, &[0.3, -1.0, 2.0], 0).unwrap();
        let w = p.segment("layer0.weight").unwrap();
        for j in 0..3 {
            assert_eq!(jac[[0, j]], w[j]);
        }
    }

    #[test]
    fn even_network_has_zero_gradient_at_origin() {
        // Hidden units in +/- pairs with shared bias and outgoing weight make
        // the network even in x.
        let spec = MlpSpec {
            hidden_dims: vec![8],
            output_dim: 1,
            ..MlpSpec::small(2, 1)
        };
        let (mlp, mut p) = net(spec.clone(), 21);
        let fan_in = spec.in_features();
        let vals = p.as_mut_slice();
        let b0 = fan_in * 8;
        let w1 = b0 + 8;
        for h in 0..4 {
            for i in 0..fan_in {
                let w = vals[i * 8 + h];
                // x rows flip sign, time rows are shared
                vals[i * 8 + h + 4] = if i < 2 { -w } else { w };
            }
            vals[b0 + h] = 0.1 * h as f64;
            vals[b0 + h + 4] = 0.1 * h as f64;
            vals[w1 + h + 4] = vals[w1 + h];
        }
        let f = |x: &[f64]| mlp.forward(p.as_slice(), 0.4, x, 0).unwrap()[0];
        assert!((f(&[0.3, -0.8]) - f(&[-0.3, 0.8])).abs() < 1e-12);
        let g = mlp.grad_input(p.as_slice(), 0.4, &[0.0, 0.0], 0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }
}
