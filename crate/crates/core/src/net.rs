//! A small fully-convolutional segmentation network with hand-written
//! backpropagation, plus the Adam optimizer.
//!
//! The default stack is `conv3x3(C→F) → ReLU → conv3x3(F→F) → ReLU → conv1x1(F→K)`
//! with zero padding so the output keeps the input's spatial size.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, KeyValues};
use crate::rng::Rng;
use crate::tensor::TensorF;

pub const DEFAULT_WIDTH: usize = 16;

/// One convolution with odd square kernel, stride 1 and "same" zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Conv {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Fan-in scaled uniform init in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut Rng) -> Self {
        let mut c = Conv::zeros(in_channels, out_channels, kernel);
        let bound = (6.0 / (in_channels * kernel * kernel) as f64).sqrt();
        for w in c.weight.iter_mut() {
            *w = rng.uniform_range(-bound, bound);
        }
        c
    }

    fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let plane = h * w;
        let mut out = vec![0.0; self.out_channels * plane];
        for (o, b) in self.bias.iter().enumerate() {
            out[o * plane..(o + 1) * plane].fill(*b);
        }
        let k = self.kernel;
        let padded = pad_planes(input, self.in_channels, h, w, k / 2);
        // [in][ky][kx][out]
        let mut wt = vec![0.0; self.weight.len()];
        for o in 0..self.out_channels {
            for i in 0..self.in_channels {
                for t in 0..k * k {
                    wt[(i * k * k + t) * self.out_channels + o] =
                        self.weight[(o * self.in_channels + i) * k * k + t];
                }
            }
        }
        conv_same(
            &padded,
            self.in_channels,
            self.out_channels,
            h,
            w,
            k,
            &wt,
            &mut out,
        );
        out
    }

    /// Accumulates weight/bias gradients; returns the input gradient when asked.
    fn backward(
        &self,
        input: &[f64],
        grad_out: &[f64],
        h: usize,
        w: usize,
        grad: &mut ConvGrad,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let plane = h * w;
        let k = self.kernel;
        let pad = k / 2;
        let (ic, oc) = (self.in_channels, self.out_channels);
        for o in 0..oc {
            grad.bias[o] += grad_out[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }

        // dW[o][i][t] = <grad_out[o], input[i] shifted by tap t>
        let padded = pad_planes(input, ic, h, w, pad);
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut shifted = vec![0.0; plane];
        for i in 0..ic {
            for ky in 0..k {
                for kx in 0..k {
                    for y in 0..h {
                        let src = &padded[(i * hp + y + ky) * wp + kx..][..w];
                        shifted[y * w..(y + 1) * w].copy_from_slice(src);
                    }
                    let mut o = 0;
                    while o + 4 <= oc {
                        let sums = dot4(
                            [
                                &grad_out[o * plane..(o + 1) * plane],
                                &grad_out[(o + 1) * plane..(o + 2) * plane],
                                &grad_out[(o + 2) * plane..(o + 3) * plane],
                                &grad_out[(o + 3) * plane..(o + 4) * plane],
                            ],
                            &shifted,
                        );
                        for (a, v) in sums.iter().enumerate() {
                            grad.weight[((o + a) * ic + i) * k * k + ky * k + kx] += v;
                        }
                        o += 4;
                    }
                    for o in o..oc {
                        grad.weight[(o * ic + i) * k * k + ky * k + kx] +=
                            dot(&grad_out[o * plane..(o + 1) * plane], &shifted);
                    }
                }
            }
        }

        if !need_input_grad {
            return None;
        }
        // Transposed convolution: flipped taps, input and output roles swapped.
        let gpad = pad_planes(grad_out, oc, h, w, pad);
        let mut wt = vec![0.0; self.weight.len()];
        for o in 0..oc {
            for i in 0..ic {
                for t in 0..k * k {
                    wt[(o * k * k + (k * k - 1 - t)) * ic + i] =
                        self.weight[(o * ic + i) * k * k + t];
                }
            }
        }
        let mut grad_in = vec![0.0; ic * plane];
        conv_same(&gpad, oc, ic, h, w, k, &wt, &mut grad_in);
        Some(grad_in)
    }
}

/// Copy `c` planes of `h×w` into zero-filled planes of `(h+2p)×(w+2p)`.
fn pad_planes(x: &[f64], c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0; c * hp * wp];
    for ch in 0..c {
        for y in 0..h {
            out[(ch * hp + y + p) * wp + p..][..w].copy_from_slice(&x[(ch * h + y) * w..][..w]);
        }
    }
    out
}

/// `out[o][y][x] += Σ_i Σ_(ky,kx) wt[i][ky][kx][o] · xp[i][y+ky][x+kx]` over padded input `xp`.
/// Output channels and columns are blocked 4×4 so the accumulators stay in registers.
#[allow(clippy::too_many_arguments)]
fn conv_same(
    xp: &[f64],
    ic: usize,
    oc: usize,
    h: usize,
    w: usize,
    k: usize,
    wt: &[f64],
    out: &mut [f64],
) {
    let pad = k / 2;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let plane = h * w;
    let taps = ic * k * k;
    let mut ob = 0;
    while ob < oc {
        let on = (oc - ob).min(4);
        // Weights of this output block packed per tap, zero-filled past `on`.
        let packed: Vec<[f64; 4]> = (0..taps)
            .map(|t| {
                let mut v = [0.0; 4];
                v[..on].copy_from_slice(&wt[t * oc + ob..t * oc + ob + on]);
                v
            })
            .collect();
        for y in 0..h {
            let mut xb = 0;
            while xb < w {
                let xn = (w - xb).min(4);
                let mut acc = [[0.0f64; 4]; 4];
                if xn == 4 {
                    let mut taps_iter = packed.iter();
                    for i in 0..ic {
                        for ky in 0..k {
                            let row = &xp[(i * hp + y + ky) * wp + xb..][..k + 3];
                            for (kx, ws) in taps_iter.by_ref().take(k).enumerate() {
                                let xs: &[f64; 4] = row[kx..kx + 4].try_into().unwrap();
                                for a in 0..4 {
                                    for b in 0..4 {
                                        acc[a][b] += ws[a] * xs[b];
                                    }
                                }
                            }
                        }
                    }
                } else {
                    let mut taps_iter = packed.iter();
                    for i in 0..ic {
                        for ky in 0..k {
                            let row = &xp[(i * hp + y + ky) * wp + xb..];
                            for (kx, ws) in taps_iter.by_ref().take(k).enumerate() {
                                for a in 0..4 {
                                    for b in 0..xn {
                                        acc[a][b] += ws[a] * row[kx + b];
                                    }
                                }
                            }
                        }
                    }
                }
                for a in 0..on {
                    let dst = &mut out[(ob + a) * plane + y * w + xb..][..xn];
                    for b in 0..xn {
                        dst[b] += acc[a][b];
                    }
                }
                xb += 4;
            }
        }
        ob += 4;
    }
}

/// Dot product with four independent accumulators so the adds pipeline.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Four dot products against a shared right-hand side.
fn dot4(a: [&[f64]; 4], b: &[f64]) -> [f64; 4] {
    let n = b.len();
    let body = n - n % 2;
    let mut acc = [[0.0f64; 2]; 4];
    let mut j = 0;
    while j < body {
        let bv = [b[j], b[j + 1]];
        for r in 0..4 {
            let av = &a[r][j..j + 2];
            acc[r][0] += av[0] * bv[0];
            acc[r][1] += av[1] * bv[1];
        }
        j += 2;
    }
    let mut out = [0.0; 4];
    for r in 0..4 {
        out[r] = acc[r][0] + acc[r][1];
        for t in body..n {
            out[r] += a[r][t] * b[t];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients for every layer of a [`ConvNet`], same layout as its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<ConvGrad>,
}

impl Grads {
    pub fn zeros_like(net: &ConvNet) -> Self {
        Grads {
            layers: net
                .layers
                .iter()
                .map(|l| ConvGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in self.layers.iter_mut() {
            l.weight
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|v| *v *= s);
        }
    }

    /// Flat views in the order weight0, bias0, weight1, ...
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    height: usize,
    width: usize,
    /// `acts[0]` is the input; `acts[i]` is the (post-ReLU) input of layer `i`.
    acts: Vec<Vec<f64>>,
    pub logits: TensorF,
}

impl ForwardCache {
    /// Which hidden units are active (ReLU output > 0), flattened over layers.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.acts[1..].iter().flatten().map(|&a| a > 0.0).collect()
    }
}

/// Stack of convolutions with ReLU between consecutive layers (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub layers: Vec<Conv>,
    pub seed: u64,
}

impl ConvNet {
    /// The default three-layer segmentation network.
    pub fn new(in_channels: usize, width: usize, classes: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let layers = vec![
            Conv::init(in_channels, width, 3, &mut rng),
            Conv::init(width, width, 3, &mut rng),
            Conv::init(width, classes, 1, &mut rng),
        ];
        ConvNet { layers, seed }
    }

    pub fn from_layers(layers: Vec<Conv>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::Shape(format!(
                    "layer outputs {} channels but next expects {}",
                    pair[0].out_channels, pair[1].in_channels
                )));
            }
        }
        Ok(ConvNet { layers, seed: 0 })
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn classes(&self) -> usize {
        self.layers.last().expect("non-empty").out_channels
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Mutable flat views in the order weight0, bias0, weight1, ...
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn forward(&self, image: &TensorF) -> Result<TensorF> {
        Ok(self.forward_cached(image)?.logits)
    }

    pub fn forward_cached(&self, image: &TensorF) -> Result<ForwardCache> {
        let (c, h, w) = image.chw()?;
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "network expects {} input channels, image has {c}",
                self.in_channels()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(image.data().to_vec());
        let last = self.layers.len() - 1;
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            out = layer.forward(acts.last().expect("input pushed"), h, w);
            if li < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                acts.push(std::mem::take(&mut out));
            }
        }
        Ok(ForwardCache {
            height: h,
            width: w,
            acts,
            logits: TensorF::new(vec![self.classes(), h, w], out)?,
        })
    }

    /// Parameter gradients given `d loss / d logits`.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &TensorF) -> Result<Grads> {
        if grad_logits.shape() != cache.logits.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} vs logits {:?}",
                grad_logits.shape(),
                cache.logits.shape()
            )));
        }
        let (h, w) = (cache.height, cache.width);
        let mut grads = Grads::zeros_like(self);
        let mut upstream = grad_logits.data().to_vec();
        for li in (0..self.layers.len()).rev() {
            let input = &cache.acts[li];
            let gin =
                self.layers[li].backward(input, &upstream, h, w, &mut grads.layers[li], li > 0);
            if let Some(mut gin) = gin {
                // ReLU: input of layer li is relu(pre); gradient passes where it is positive
                for (g, a) in gin.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
                upstream = gin;
            }
        }
        Ok(grads)
    }

    /// Write one PCDT file per parameter plus `manifest.txt`.
    pub fn save(&self, dir: impl AsRef<Path>, extra: &KeyValues) -> Result<()> {
        let dir = dir.as_ref();
        io::create_dir(dir)?;
        let mut manifest = extra.clone();
        manifest.insert("layers".into(), self.layer_spec());
        manifest.insert("seed".into(), self.seed.to_string());
        for (i, l) in self.layers.iter().enumerate() {
            let w = TensorF::new(
                vec![l.out_channels, l.in_channels, l.kernel, l.kernel],
                l.weight.clone(),
            )?;
            io::save_tensor(&w, dir.join(format!("layer{i}.weight.pcdt")))?;
            let b = TensorF::new(vec![l.out_channels], l.bias.clone())?;
            io::save_tensor(&b, dir.join(format!("layer{i}.bias.pcdt")))?;
        }
        io::save_key_values(&manifest, dir.join("manifest.txt"))
    }

    /// Load a checkpoint; returns the network and the full manifest.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, KeyValues)> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.txt");
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact(manifest_path));
        }
        let manifest = io::load_key_values(&manifest_path)?;
        let spec: String = io::kv_get(&manifest, "layers", &manifest_path)?;
        let seed: u64 = io::kv_get(&manifest, "seed", &manifest_path)?;
        let mut layers = Vec::new();
        for (i, (cin, cout, k)) in parse_layer_spec(&spec)?.into_iter().enumerate() {
            let w = io::load_tensor(dir.join(format!("layer{i}.weight.pcdt")))?;
            let b = io::load_tensor(dir.join(format!("layer{i}.bias.pcdt")))?;
            if w.shape() != [cout, cin, k, k] || b.shape() != [cout] {
                return Err(Error::Shape(format!(
                    "layer {i} tensors disagree with manifest"
                )));
            }
            layers.push(Conv {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                weight: w.into_data(),
                bias: b.into_data(),
            });
        }
        let mut net = ConvNet::from_layers(layers)?;
        net.seed = seed;
        Ok((net, manifest))
    }

    /// e.g. `conv3x3:1->16,relu,conv3x3:16->16,relu,conv1x1:16->3`
    pub fn layer_spec(&self) -> String {
        self.layers
            .iter()
            .map(|l| {
                format!(
                    "conv{k}x{k}:{}->{}",
                    l.in_channels,
                    l.out_channels,
                    k = l.kernel
                )
            })
            .collect::<Vec<_>>()
            .join(",relu,")
    }
}

fn parse_layer_spec(spec: &str) -> Result<Vec<(usize, usize, usize)>> {
    let bad = || Error::InvalidArgument(format!("bad layer spec: {spec}"));
    spec.split(',')
        .filter(|s| *s != "relu")
        .map(|s| {
            let rest = s.strip_prefix("conv").ok_or_else(bad)?;
            let (kk, chans) = rest.split_once(':').ok_or_else(bad)?;
            let (k1, k2) = kk.split_once('x').ok_or_else(bad)?;
            let (a, b) = chans.split_once("->").ok_or_else(bad)?;
            let k: usize = k1.parse().map_err(|_| bad())?;
            if k2.parse::<usize>().map_err(|_| bad())? != k || k.is_multiple_of(2) {
                return Err(bad());
            }
            Ok((
                a.parse().map_err(|_| bad())?,
                b.parse().map_err(|_| bad())?,
                k,
            ))
        })
        .collect()
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Update each parameter slice with its gradient slice.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Shape("parameter and gradient layouts differ".into()));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::Shape(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn step_net(&mut self, net: &mut ConvNet, grads: &Grads) -> Result<()> {
        let g = grads.slices();
        self.step(&mut net.param_slices_mut(), &g)
    }
}
