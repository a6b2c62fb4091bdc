//! Layers with rounding at their inputs and outputs, forward and backward.
//!
//! A quantized fully connected layer computes
//! `Y = R(R(X . R(W)^T) + R(B))`, where `R` rounds into the working format
//! and the product is reduced with the configured accumulate mode. Backward
//! rounds the incoming gradient and the outgoing activation gradient; weight
//! and bias gradients keep binary32 width.

use rand::Rng;

use crate::instructions::transpose;
use crate::telemetry::{DenormalStats, Phase, TelemetryError, TelemetrySink};

use super::precision::Precision;

/// Dense row-major activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?}");
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per sample.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

/// Where per-tensor statistics go during one step.
#[derive(Clone, Copy)]
pub struct Observer<'a> {
    pub sink: Option<&'a dyn TelemetrySink>,
    pub step: u64,
}

impl<'a> Observer<'a> {
    pub fn none() -> Self {
        Observer { sink: None, step: 0 }
    }

    fn observe(&self, prec: &Precision, id: String, phase: Phase, data: &[f32]) -> Result<(), TelemetryError> {
        if let (Some(sink), Some(format)) = (self.sink, prec.format()) {
            sink.record(DenormalStats::from_values(&id, phase, self.step, data, format))?;
        }
        Ok(())
    }
}

/// Parameter gradients of one layer, binary32 width.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

fn uniform_init(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Master weights, `out_dim x in_dim`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    xq: Vec<f32>,
    wq: Vec<f32>,
    batch: usize,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Linear {
            name: name.to_string(),
            in_dim,
            out_dim,
            weight: uniform_init(rng, in_dim * out_dim, in_dim),
            bias: uniform_init(rng, out_dim, in_dim),
        }
    }

    pub fn forward(&self, x: &Tensor, prec: &Precision, obs: &Observer) -> Result<(Tensor, LinearCache), TelemetryError> {
        let n = x.batch();
        assert_eq!(x.row_len(), self.in_dim, "{}: input width", self.name);
        let xq = prec.round_all(&x.data);
        obs.observe(prec, format!("{}.input", self.name), Phase::ForwardActivation, &xq)?;
        let wq = prec.round_all(&self.weight);
        obs.observe(prec, format!("{}.weight", self.name), Phase::Weight, &wq)?;
        let z = prec.matmul_nt(&xq, &wq, n, self.in_dim, self.out_dim, false);
        let bq = prec.round_all(&self.bias);
        let y: Vec<f32> = z
            .iter()
            .enumerate()
            .map(|(i, &zi)| prec.round(zi + bq[i % self.out_dim]))
            .collect();
        obs.observe(prec, format!("{}.output", self.name), Phase::ForwardActivation, &y)?;
        Ok((
            Tensor::new(vec![n, self.out_dim], y),
            LinearCache { xq, wq, batch: n },
        ))
    }

    pub fn backward(
        &self,
        cache: &LinearCache,
        dy: &Tensor,
        prec: &Precision,
        obs: &Observer,
        need_dx: bool,
    ) -> Result<(Option<Tensor>, ParamGrads), TelemetryError> {
        let n = cache.batch;
        let g = prec.round_all(&dy.data);
        obs.observe(prec, format!("{}.grad_output", self.name), Phase::ActivationGradient, &g)?;
        let dx = if need_dx {
            let wqt = transpose(&cache.wq, self.out_dim, self.in_dim);
            let dx = prec.matmul_nt(&g, &wqt, n, self.out_dim, self.in_dim, false);
            obs.observe(prec, format!("{}.grad_input", self.name), Phase::ActivationGradient, &dx)?;
            Some(Tensor::new(vec![n, self.in_dim], dx))
        } else {
            None
        };
        let gt = transpose(&g, n, self.out_dim);
        let xqt = transpose(&cache.xq, n, self.in_dim);
        let weight = prec.matmul_nt(&gt, &xqt, self.out_dim, n, self.in_dim, true);
        let bias = (0..self.out_dim)
            .map(|o| gt[o * n..(o + 1) * n].iter().fold(0.0f32, |a, &b| a + b))
            .collect();
        Ok((dx, ParamGrads { weight, bias }))
    }
}

/// Stride-1, unpadded 2-D convolution with square kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    /// Master weights, `out_ch x (in_ch * kernel * kernel)`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    patches: Vec<f32>,
    wq: Vec<f32>,
    in_shape: [usize; 4],
}

impl Conv2d {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            name: name.to_string(),
            in_ch,
            out_ch,
            kernel,
            weight: uniform_init(rng, out_ch * fan_in, fan_in),
            bias: uniform_init(rng, out_ch, fan_in),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn im2col(&self, x: &[f32], [n, c, h, w]: [usize; 4]) -> Vec<f32> {
        let k = self.kernel;
        let (oh, ow) = (h - k + 1, w - k + 1);
        let mut p = Vec::with_capacity(n * oh * ow * self.patch_len());
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                p.push(x[((b * c + ch) * h + oy + ky) * w + ox + kx]);
                            }
                        }
                    }
                }
            }
        }
        p
    }

    pub fn forward(&self, x: &Tensor, prec: &Precision, obs: &Observer) -> Result<(Tensor, ConvCache), TelemetryError> {
        let [n, c, h, w]: [usize; 4] = x.shape.as_slice().try_into().expect("conv input is NCHW");
        assert_eq!(c, self.in_ch, "{}: channels", self.name);
        let k = self.kernel;
        let (oh, ow) = (h - k + 1, w - k + 1);
        let xq = prec.round_all(&x.data);
        obs.observe(prec, format!("{}.input", self.name), Phase::ForwardActivation, &xq)?;
        let wq = prec.round_all(&self.weight);
        obs.observe(prec, format!("{}.weight", self.name), Phase::Weight, &wq)?;
        let patches = self.im2col(&xq, [n, c, h, w]);
        let rows = n * oh * ow;
        let z = prec.matmul_nt(&patches, &wq, rows, self.patch_len(), self.out_ch, false);
        let bq = prec.round_all(&self.bias);
        let mut y = vec![0.0f32; n * self.out_ch * oh * ow];
        for r in 0..rows {
            let (b, pos) = (r / (oh * ow), r % (oh * ow));
            for o in 0..self.out_ch {
                y[(b * self.out_ch + o) * oh * ow + pos] = prec.round(z[r * self.out_ch + o] + bq[o]);
            }
        }
        obs.observe(prec, format!("{}.output", self.name), Phase::ForwardActivation, &y)?;
        Ok((
            Tensor::new(vec![n, self.out_ch, oh, ow], y),
            ConvCache {
                patches,
                wq,
                in_shape: [n, c, h, w],
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &ConvCache,
        dy: &Tensor,
        prec: &Precision,
        obs: &Observer,
        need_dx: bool,
    ) -> Result<(Option<Tensor>, ParamGrads), TelemetryError> {
        let [n, c, h, w] = cache.in_shape;
        let k = self.kernel;
        let (oh, ow) = (h - k + 1, w - k + 1);
        let plane = oh * ow;
        let g = prec.round_all(&dy.data);
        obs.observe(prec, format!("{}.grad_output", self.name), Phase::ActivationGradient, &g)?;

        // g is N x K x OH x OW; gt is K x (N * OH * OW) with rows in im2col order.
        let rows = n * plane;
        let mut gt = vec![0.0f32; self.out_ch * rows];
        for b in 0..n {
            for o in 0..self.out_ch {
                let src = &g[(b * self.out_ch + o) * plane..][..plane];
                gt[o * rows + b * plane..][..plane].copy_from_slice(src);
            }
        }
        let pt = transpose(&cache.patches, rows, self.patch_len());
        let weight = prec.matmul_nt(&gt, &pt, self.out_ch, rows, self.patch_len(), true);
        let bias = (0..self.out_ch)
            .map(|o| gt[o * rows..(o + 1) * rows].iter().fold(0.0f32, |a, &b| a + b))
            .collect();

        let dx = if need_dx {
            let mut dx = vec![0.0f32; n * c * h * w];
            let mut gs = Vec::with_capacity(self.out_ch * k * k);
            let mut ws = Vec::with_capacity(self.out_ch * k * k);
            for b in 0..n {
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            gs.clear();
                            ws.clear();
                            for o in 0..self.out_ch {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        if y < ky || x < kx || y - ky >= oh || x - kx >= ow {
                                            continue;
                                        }
                                        gs.push(g[(b * self.out_ch + o) * plane + (y - ky) * ow + (x - kx)]);
                                        ws.push(cache.wq[o * self.patch_len() + (ch * k + ky) * k + kx]);
                                    }
                                }
                            }
                            dx[((b * c + ch) * h + y) * w + x] = prec.dot(&gs, &ws);
                        }
                    }
                }
            }
            obs.observe(prec, format!("{}.grad_input", self.name), Phase::ActivationGradient, &dx)?;
            Some(Tensor::new(vec![n, c, h, w], dx))
        } else {
            None
        };
        Ok((dx, ParamGrads { weight, bias }))
    }
}

fn relu(x: f32) -> f32 {
    if x > 0.0 || x.is_nan() {
        x
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    Conv(Conv2d),
    Relu,
    /// Collapses everything after the batch dimension.
    Flatten,
}

#[derive(Debug, Clone)]
pub enum Cache {
    Linear(LinearCache),
    Conv(ConvCache),
    Relu(Vec<bool>),
    Flatten(Vec<usize>),
}

impl Layer {
    pub fn forward(&self, x: &Tensor, prec: &Precision, obs: &Observer) -> Result<(Tensor, Cache), TelemetryError> {
        Ok(match self {
            Layer::Linear(l) => {
                let (y, c) = l.forward(x, prec, obs)?;
                (y, Cache::Linear(c))
            }
            Layer::Conv(l) => {
                let (y, c) = l.forward(x, prec, obs)?;
                (y, Cache::Conv(c))
            }
            Layer::Relu => {
                let mask = x.data.iter().map(|&v| v > 0.0).collect();
                let y = x.data.iter().map(|&v| relu(v)).collect();
                (Tensor::new(x.shape.clone(), y), Cache::Relu(mask))
            }
            Layer::Flatten => (
                Tensor::new(vec![x.batch(), x.row_len()], x.data.clone()),
                Cache::Flatten(x.shape.clone()),
            ),
        })
    }

    pub fn backward(
        &self,
        cache: &Cache,
        dy: &Tensor,
        prec: &Precision,
        obs: &Observer,
        need_dx: bool,
    ) -> Result<(Option<Tensor>, Option<ParamGrads>), TelemetryError> {
        Ok(match (self, cache) {
            (Layer::Linear(l), Cache::Linear(c)) => {
                let (dx, g) = l.backward(c, dy, prec, obs, need_dx)?;
                (dx, Some(g))
            }
            (Layer::Conv(l), Cache::Conv(c)) => {
                let (dx, g) = l.backward(c, dy, prec, obs, need_dx)?;
                (dx, Some(g))
            }
            (Layer::Relu, Cache::Relu(mask)) => {
                let dx = dy
                    .data
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { g } else { 0.0 })
                    .collect();
                (Some(Tensor::new(dy.shape.clone(), dx)), None)
            }
            (Layer::Flatten, Cache::Flatten(shape)) => (Some(Tensor::new(shape.clone(), dy.data.clone())), None),
            _ => panic!("cache does not belong to this layer"),
        })
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<f32>, &mut Vec<f32>)> {
        match self {
            Layer::Linear(l) => Some((&mut l.weight, &mut l.bias)),
            Layer::Conv(l) => Some((&mut l.weight, &mut l.bias)),
            _ => None,
        }
    }

    pub fn params(&self) -> Option<(&[f32], &[f32])> {
        match self {
            Layer::Linear(l) => Some((&l.weight, &l.bias)),
            Layer::Conv(l) => Some((&l.weight, &l.bias)),
            _ => None,
        }
    }
}

/// A feed-forward stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
}

pub struct ForwardPass {
    pub output: Tensor,
    caches: Vec<Cache>,
}

impl Model {
    pub fn forward(&self, x: &Tensor, prec: &Precision, obs: &Observer) -> Result<ForwardPass, TelemetryError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&cur, prec, obs)?;
            caches.push(c);
            cur = y;
        }
        Ok(ForwardPass { output: cur, caches })
    }

    /// Gradients for every layer with parameters, in layer order.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        dy: &Tensor,
        prec: &Precision,
        obs: &Observer,
    ) -> Result<Vec<ParamGrads>, TelemetryError> {
        // Activation gradients are only needed above the first parametric layer.
        let first_param = self.layers.iter().position(|l| l.params().is_some()).unwrap_or(0);
        let mut grads = Vec::new();
        let mut cur = dy.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(&pass.caches).enumerate().rev() {
            let need_dx = i > first_param;
            if i < first_param {
                break;
            }
            let (dx, g) = layer.backward(cache, &cur, prec, obs, need_dx)?;
            if let Some(g) = g {
                grads.push(g);
            }
            match dx {
                Some(dx) => cur = dx,
                None => break,
            }
        }
        grads.reverse();
        Ok(grads)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// All parameters flattened, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.layers.iter().filter_map(|l| l.params()) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f32]) {
        assert_eq!(flat.len(), self.param_count());
        let mut off = 0;
        for (w, b) in self.layers.iter_mut().filter_map(|l| l.params_mut()) {
            let (wl, bl) = (w.len(), b.len());
            w.copy_from_slice(&flat[off..off + wl]);
            b.copy_from_slice(&flat[off + wl..off + wl + bl]);
            off += wl + bl;
        }
    }
}

/// Flattens per-layer gradients in the order of [`Model::flat_params`].
pub fn flatten_grads(grads: &[ParamGrads]) -> Vec<f32> {
    grads
        .iter()
        .flat_map(|g| g.weight.iter().chain(&g.bias).copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::FpFormat;
    use crate::instructions::AccumMode;
    use crate::telemetry::Recorder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quant(format: FpFormat) -> Precision {
        Precision::Quantized {
            format,
            mode: AccumMode::Fmacs,
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::new("fc", 3, 2, &mut rng);
        l.weight.iter_mut().for_each(|w| *w = 0.0);
        l.bias.iter_mut().for_each(|b| *b = 0.0);
        let (y, c) = l
            .forward(&Tensor::zeros(vec![4, 3]), &quant(FpFormat::BINARY16), &Observer::none())
            .unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
        let (dx, g) = l
            .backward(&c, &Tensor::zeros(vec![4, 2]), &quant(FpFormat::BINARY16), &Observer::none(), true)
            .unwrap();
        assert!(dx.unwrap().data.iter().all(|&v| v == 0.0));
        assert!(g.weight.iter().chain(&g.bias).all(|&v| v == 0.0));
    }

    #[test]
    fn hand_sized_linear() {
        // Y = R(R(R(X) . R(W)^T) + R(B)) in 1/5/10/d, worked by hand.
        let l = Linear {
            name: "fc".into(),
            in_dim: 2,
            out_dim: 2,
            weight: vec![0.1, 2.0, -1.0, 0.3333],
            bias: vec![0.5, 1000.3],
        };
        let x = Tensor::new(vec![1, 2], vec![3.0, 0.25]);
        let (y, _) = l.forward(&x, &quant(FpFormat::BINARY16), &Observer::none()).unwrap();
        // R(0.1) = 1638/16384 = 0.0999755859375; 3 * that + 0.25 * 2 = 0.7999267578125
        // R -> 0.7998046875 (ulp 2^-11 in [0.5, 1)); + R(0.5) = 1.2998046875 -> R = 1.2998046875
        assert_eq!(y.data[0], 1.2998046875);
        // R(0.3333) = 0.333251953125; -3 + 0.25 * 0.333251953125 = -2.91668701171875
        // R -> -2.916015625 (ulp 2^-9); R(1000.3) = 1000.5; sum 997.583984375 -> R = 997.5
        assert_eq!(y.data[1], 997.5);
    }

    #[test]
    fn binary32_matches_reference_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = Linear::new("fc", 5, 3, &mut rng);
        let x = Tensor::new(vec![4, 5], (0..20).map(|i| (i as f32 * 0.37).sin()).collect());
        let (yq, cq) = l.forward(&x, &quant(FpFormat::BINARY32), &Observer::none()).unwrap();
        let (yr, cr) = l.forward(&x, &Precision::Reference, &Observer::none()).unwrap();
        assert_eq!(yq, yr);
        let dy = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f32 * 0.91).cos()).collect());
        let gq = l.backward(&cq, &dy, &quant(FpFormat::BINARY32), &Observer::none(), true).unwrap();
        let gr = l.backward(&cr, &dy, &Precision::Reference, &Observer::none(), true).unwrap();
        assert_eq!(gq, gr);
    }

    #[test]
    fn telemetry_names_and_phases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new("fc0", 2, 2, &mut rng);
        let rec = Recorder::default();
        let obs = Observer {
            sink: Some(&rec),
            step: 4,
        };
        let prec = quant(FpFormat::BINARY16);
        let (_, c) = l.forward(&Tensor::new(vec![1, 2], vec![1.0, 2.0]), &prec, &obs).unwrap();
        l.backward(&c, &Tensor::new(vec![1, 2], vec![1.0, 1.0]), &prec, &obs, true).unwrap();
        let ids: Vec<(String, Phase)> = rec.records().into_iter().map(|r| (r.tensor_id, r.phase)).collect();
        assert_eq!(
            ids,
            vec![
                ("fc0.input".to_string(), Phase::ForwardActivation),
                ("fc0.weight".to_string(), Phase::Weight),
                ("fc0.output".to_string(), Phase::ForwardActivation),
                ("fc0.grad_output".to_string(), Phase::ActivationGradient),
                ("fc0.grad_input".to_string(), Phase::ActivationGradient),
            ]
        );
        // unquantized runs have no format to classify against
        let rec2 = Recorder::default();
        let obs2 = Observer {
            sink: Some(&rec2),
            step: 0,
        };
        l.forward(&Tensor::new(vec![1, 2], vec![1.0, 2.0]), &Precision::Reference, &obs2).unwrap();
        assert!(rec2.is_empty());
    }

    #[test]
    fn conv_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::new("conv0", 2, 3, 3, &mut rng);
        let x = Tensor::new(vec![2, 2, 5, 4], (0..80).map(|i| (i as f32 * 0.1).sin()).collect());
        let prec = Precision::Reference;
        let (y, c) = conv.forward(&x, &prec, &Observer::none()).unwrap();
        assert_eq!(y.shape, vec![2, 3, 3, 2]);
        let (dx, g) = conv.backward(&c, &Tensor::zeros(y.shape.clone()), &prec, &Observer::none(), true).unwrap();
        assert_eq!(dx.unwrap().shape, vec![2, 2, 5, 4]);
        assert_eq!(g.weight.len(), 3 * 2 * 9);
    }
}
