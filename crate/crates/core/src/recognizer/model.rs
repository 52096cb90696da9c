//! Single-layer GRU acoustic model with an affine softmax output layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Posteriorgram, RecognizerError, NUM_CLASSES};
use crate::container::{Container, ContainerError, Tensor};
use crate::dsp::FeatureMatrix;
use crate::Matrix;

/// Offsets of each parameter block inside the flat weight vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    input: usize,
    hidden: usize,
    classes: usize,
}

impl Layout {
    fn gate_in(&self) -> usize {
        self.hidden * self.input
    }
    fn gate_rec(&self) -> usize {
        self.hidden * self.hidden
    }
    // [w_z, w_r, w_h] then [u_z, u_r, u_h] then [b_z, b_r, b_h] then w_out, b_out
    fn w(&self, g: usize) -> usize {
        g * self.gate_in()
    }
    fn u(&self, g: usize) -> usize {
        3 * self.gate_in() + g * self.gate_rec()
    }
    fn b(&self, g: usize) -> usize {
        3 * self.gate_in() + 3 * self.gate_rec() + g * self.hidden
    }
    fn w_out(&self) -> usize {
        self.b(3)
    }
    fn b_out(&self) -> usize {
        self.w_out() + self.classes * self.hidden
    }
    fn total(&self) -> usize {
        self.b_out() + self.classes
    }
}

const Z: usize = 0;
const R: usize = 1;
const H: usize = 2;
const GATE_NAMES: [&str; 3] = ["z", "r", "h"];

/// GRU weights plus the fixed input normalization estimated from training data.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticModelParams {
    layout: Layout,
    /// Flat trainable weights; see [`Layout`] for block order.
    weights: Vec<f64>,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
}

impl AcousticModelParams {
    /// All-zero weights with identity normalization.
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let layout = Layout { input, hidden, classes: NUM_CLASSES };
        Self {
            layout,
            weights: vec![0.0; layout.total()],
            feature_mean: vec![0.0; input],
            feature_scale: vec![1.0; input],
        }
    }

    /// Uniform(±1/√hidden) initialization with zero biases.
    pub fn random(input: usize, hidden: usize, seed: u64) -> Self {
        let mut p = Self::zeros(input, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden as f64).sqrt();
        let l = p.layout;
        let bias_ranges = [(l.b(0), l.b(3)), (l.b_out(), l.total())];
        for (i, w) in p.weights.iter_mut().enumerate() {
            let is_bias = bias_ranges.iter().any(|&(a, b)| (a..b).contains(&i));
            if !is_bias {
                *w = rng.gen_range(-bound..bound);
            }
        }
        p
    }

    pub fn input_size(&self) -> usize {
        self.layout.input
    }

    pub fn hidden_size(&self) -> usize {
        self.layout.hidden
    }

    pub fn num_classes(&self) -> usize {
        self.layout.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn set_normalization(&mut self, mean: Vec<f64>, scale: Vec<f64>) {
        assert_eq!(mean.len(), self.layout.input);
        assert_eq!(scale.len(), self.layout.input);
        self.feature_mean = mean;
        self.feature_scale = scale;
    }

    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.feature_mean, &self.feature_scale)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.feature_mean).chain(&self.feature_scale).all(|v| v.is_finite())
    }

    pub fn to_container(&self) -> Container {
        let l = self.layout;
        let w = &self.weights;
        let mut c = Container::default();
        c.push(Tensor::from_f64("norm.mean", vec![l.input], &self.feature_mean));
        c.push(Tensor::from_f64("norm.scale", vec![l.input], &self.feature_scale));
        for g in 0..3 {
            let n = GATE_NAMES[g];
            c.push(Tensor::from_f64(format!("gru.w_{n}"), vec![l.hidden, l.input], &w[l.w(g)..l.w(g) + l.gate_in()]));
        }
        for g in 0..3 {
            let n = GATE_NAMES[g];
            c.push(Tensor::from_f64(format!("gru.u_{n}"), vec![l.hidden, l.hidden], &w[l.u(g)..l.u(g) + l.gate_rec()]));
        }
        for g in 0..3 {
            let n = GATE_NAMES[g];
            c.push(Tensor::from_f64(format!("gru.b_{n}"), vec![l.hidden], &w[l.b(g)..l.b(g) + l.hidden]));
        }
        c.push(Tensor::from_f64("out.w", vec![l.classes, l.hidden], &w[l.w_out()..l.b_out()]));
        c.push(Tensor::from_f64("out.b", vec![l.classes], &w[l.b_out()..l.total()]));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, ContainerError> {
        let mean = c.get("norm.mean")?;
        let input = *mean.dims.first().ok_or_else(|| ContainerError::Shape {
            name: "norm.mean".into(),
            found: mean.dims.clone(),
            expected: vec![0],
        })?;
        let out_b = c.get("out.b")?;
        let classes = out_b.dims.first().copied().unwrap_or(0);
        if classes != NUM_CLASSES {
            return Err(ContainerError::Shape { name: "out.b".into(), found: out_b.dims.clone(), expected: vec![NUM_CLASSES] });
        }
        let b_z = c.get("gru.b_z")?;
        let hidden = b_z.dims.first().copied().unwrap_or(0);
        let mut p = Self::zeros(input, hidden);
        let l = p.layout;
        p.feature_mean = c.expect("norm.mean", &[input])?.to_f64();
        p.feature_scale = c.expect("norm.scale", &[input])?.to_f64();
        let mut copy = |name: String, dims: &[usize], at: usize| -> Result<(), ContainerError> {
            let t = c.expect(&name, dims)?;
            for (dst, &v) in p.weights[at..at + t.data.len()].iter_mut().zip(&t.data) {
                *dst = v as f64;
            }
            Ok(())
        };
        for g in 0..3 {
            copy(format!("gru.w_{}", GATE_NAMES[g]), &[hidden, input], l.w(g))?;
            copy(format!("gru.u_{}", GATE_NAMES[g]), &[hidden, hidden], l.u(g))?;
            copy(format!("gru.b_{}", GATE_NAMES[g]), &[hidden], l.b(g))?;
        }
        copy("out.w".into(), &[classes, hidden], l.w_out())?;
        copy("out.b".into(), &[classes], l.b_out())?;
        Ok(p)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// out[i] += Σ_j m[i, j] · v[j] for a row-major block.
fn matvec_acc(out: &mut [f64], m: &[f64], v: &[f64]) {
    let cols = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// out[j] += Σ_i m[i, j] · v[i]
fn matvec_t_acc(out: &mut [f64], m: &[f64], v: &[f64]) {
    let cols = out.len();
    for (row, &vi) in m.chunks_exact(cols).zip(v) {
        if vi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }
}

/// g[i, j] += a[i] · b[j]
fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (row, &ai) in g.chunks_exact_mut(cols).zip(a) {
        if ai != 0.0 {
            for (x, bj) in row.iter_mut().zip(b) {
                *x += ai * bj;
            }
        }
    }
}

/// Per-frame activations kept for backpropagation.
pub(crate) struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    candidate: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    pub(crate) logits: Matrix,
}

pub(crate) fn forward_trace(features: &FeatureMatrix, params: &AcousticModelParams) -> Result<ForwardTrace, RecognizerError> {
    let l = params.layout;
    if features.width() != l.input {
        return Err(RecognizerError::Shape { expected: l.input, found: features.width() });
    }
    let w = &params.weights;
    let frames = features.frames();
    let mut trace = ForwardTrace {
        inputs: Vec::with_capacity(frames),
        z: Vec::with_capacity(frames),
        r: Vec::with_capacity(frames),
        candidate: Vec::with_capacity(frames),
        hidden: Vec::with_capacity(frames),
        logits: Matrix::zeros(frames, l.classes),
    };
    let mut h_prev = vec![0.0; l.hidden];
    for t in 0..frames {
        let x: Vec<f64> = features
            .values
            .row(t)
            .iter()
            .zip(&params.feature_mean)
            .zip(&params.feature_scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect();

        let gate = |g: usize, rec: &[f64]| -> Vec<f64> {
            let mut a = w[l.b(g)..l.b(g) + l.hidden].to_vec();
            matvec_acc(&mut a, &w[l.w(g)..l.w(g) + l.gate_in()], &x);
            matvec_acc(&mut a, &w[l.u(g)..l.u(g) + l.gate_rec()], rec);
            a
        };
        let z: Vec<f64> = gate(Z, &h_prev).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate(R, &h_prev).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(&h_prev).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = gate(H, &rh).into_iter().map(f64::tanh).collect();
        let h: Vec<f64> = (0..l.hidden).map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * cand[i]).collect();

        let logits = trace.logits.row_mut(t);
        logits.copy_from_slice(&w[l.b_out()..l.total()]);
        matvec_acc(logits, &w[l.w_out()..l.b_out()], &h);

        trace.inputs.push(x);
        trace.z.push(z);
        trace.r.push(r);
        trace.candidate.push(cand);
        trace.hidden.push(h.clone());
        h_prev = h;
    }
    Ok(trace)
}

/// Backpropagates logit gradients through time; returns the flat weight gradient.
pub(crate) fn backward(trace: &ForwardTrace, params: &AcousticModelParams, dlogits: &Matrix) -> Vec<f64> {
    let l = params.layout;
    let w = &params.weights;
    let mut grad = vec![0.0; l.total()];
    let frames = trace.hidden.len();
    let zeros = vec![0.0; l.hidden];
    let mut dh_next = vec![0.0; l.hidden];

    for t in (0..frames).rev() {
        let h_prev = if t == 0 { &zeros } else { &trace.hidden[t - 1] };
        let (z, r, cand, x) = (&trace.z[t], &trace.r[t], &trace.candidate[t], &trace.inputs[t]);
        let dlog = dlogits.row(t);

        let (head, tail) = grad.split_at_mut(l.b_out());
        for (g, d) in tail.iter_mut().zip(dlog) {
            *g += d;
        }
        outer_acc(&mut head[l.w_out()..], dlog, &trace.hidden[t]);

        let mut dh = dh_next.clone();
        matvec_t_acc(&mut dh, &w[l.w_out()..l.b_out()], dlog);

        let mut dh_prev: Vec<f64> = (0..l.hidden).map(|i| dh[i] * (1.0 - z[i])).collect();
        let da_h: Vec<f64> = (0..l.hidden).map(|i| dh[i] * z[i] * (1.0 - cand[i] * cand[i])).collect();
        let da_z: Vec<f64> = (0..l.hidden).map(|i| dh[i] * (cand[i] - h_prev[i]) * z[i] * (1.0 - z[i])).collect();

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut drh = vec![0.0; l.hidden];
        matvec_t_acc(&mut drh, &w[l.u(H)..l.u(H) + l.gate_rec()], &da_h);
        let da_r: Vec<f64> = (0..l.hidden).map(|i| drh[i] * h_prev[i] * r[i] * (1.0 - r[i])).collect();
        for i in 0..l.hidden {
            dh_prev[i] += drh[i] * r[i];
        }
        matvec_t_acc(&mut dh_prev, &w[l.u(Z)..l.u(Z) + l.gate_rec()], &da_z);
        matvec_t_acc(&mut dh_prev, &w[l.u(R)..l.u(R) + l.gate_rec()], &da_r);

        for (g, da, rec) in [(Z, &da_z, h_prev), (R, &da_r, h_prev), (H, &da_h, &rh)] {
            outer_acc(&mut grad[l.w(g)..l.w(g) + l.gate_in()], da, x);
            outer_acc(&mut grad[l.u(g)..l.u(g) + l.gate_rec()], da, rec);
            for (b, d) in grad[l.b(g)..l.b(g) + l.hidden].iter_mut().zip(da.iter()) {
                *b += d;
            }
        }
        dh_next = dh_prev;
    }
    grad
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for t in 0..out.rows() {
        let row = out.row_mut(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Runs the GRU over a feature matrix and returns per-frame class posteriors.
pub fn forward(features: &FeatureMatrix, params: &AcousticModelParams) -> Result<Posteriorgram, RecognizerError> {
    let trace = forward_trace(features, params)?;
    Ok(Posteriorgram::from_matrix_unchecked(softmax_rows(&trace.logits), features.frame_hop_seconds))
}
