//! Deviation estimator: a small MLP that maps an encoded Gaussian center and
//! an encoded camera pose to `l` position offsets, one per latent view.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::CameraView;

pub const HIDDEN_WIDTH: usize = 64;
pub const HIDDEN_LAYERS: usize = 3;
pub const POSITION_FREQUENCIES: usize = 4;
pub const POSE_FREQUENCIES: usize = 2;
pub const POSE_DIM: usize = 7;
pub const DEFAULT_LAMBDA_P: f64 = 0.01;

const ROWS_PER_TASK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionalEncoding {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl PositionalEncoding {
    pub fn new(num_frequencies: usize, include_input: bool) -> Result<Self> {
        if num_frequencies == 0 {
            return Err(Error::InvalidArgument("positional encoding needs L ≥ 1".into()));
        }
        Ok(PositionalEncoding {
            num_frequencies,
            include_input,
        })
    }

    fn per_component(&self) -> usize {
        2 * self.num_frequencies + usize::from(self.include_input)
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * self.per_component()
    }

    /// Per component: `[v,] sin(2⁰πv), cos(2⁰πv), …, sin(2^{L−1}πv), cos(2^{L−1}πv)`.
    pub fn encode_into(&self, v: &[f64], out: &mut Vec<f64>) {
        for &x in v {
            if self.include_input {
                out.push(x);
            }
            let mut freq = PI;
            for _ in 0..self.num_frequencies {
                let (s, c) = (freq * x).sin_cos();
                out.push(s);
                out.push(c);
                freq *= 2.0;
            }
        }
    }

    pub fn encode(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim(v.len()));
        self.encode_into(v, &mut out);
        out
    }
}

/// Dense layer `y = W x + b` with `W` stored row-major (`out × in`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    pub fn bias(&self) -> Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

/// Per-view deviations: `deviations[i - 1][j]` is `δx_j` for latent `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationSet {
    pub deviations: Vec<Vec<Vector3<f64>>>,
    pub lambda_p: f64,
}

impl DeviationSet {
    pub fn l(&self) -> usize {
        self.deviations.len()
    }

    pub fn is_zero(&self) -> bool {
        self.deviations
            .iter()
            .all(|d| d.iter().all(|v| v.iter().all(|c| *c == 0.0)))
    }
}

/// `x + λ_p·δx` for latent `i` (one-based).
pub fn apply_deviations(
    positions: &[Vector3<f64>],
    devs: &DeviationSet,
    i: usize,
) -> Result<Vec<Vector3<f64>>> {
    if i == 0 || i > devs.l() {
        return Err(Error::IndexOutOfRange(format!(
            "latent index {i} outside 1..={}",
            devs.l()
        )));
    }
    let d = &devs.deviations[i - 1];
    if d.len() != positions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} positions but {} deviations",
            positions.len(),
            d.len()
        )));
    }
    Ok(positions
        .iter()
        .zip(d)
        .map(|(x, dx)| x + dx * devs.lambda_p)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdeNetwork {
    l: usize,
    pub lambda_p: f64,
    pos_enc: PositionalEncoding,
    pose_enc: PositionalEncoding,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct AdeCache {
    pose_code: Vec<f64>,
    /// Per Gaussian, the post-ReLU input to every layer concatenated.
    activations: Vec<f64>,
    stride: usize,
    n: usize,
}

impl AdeCache {
    /// Which hidden units were active, for every Gaussian in order.
    pub fn relu_mask(&self) -> Vec<bool> {
        let skip = self.stride - HIDDEN_WIDTH * (HIDDEN_LAYERS + 1);
        (0..self.n)
            .flat_map(|j| {
                let row = &self.activations[j * self.stride..(j + 1) * self.stride];
                row[skip..].iter().map(|v| *v > 0.0).collect::<Vec<_>>()
            })
            .collect()
    }
}

impl AdeNetwork {
    /// Hidden layers use He-uniform initialization from `seed`; the decode
    /// layer starts at exactly zero.
    pub fn new(l: usize, lambda_p: f64, seed: u64) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidArgument("deviation estimator needs l ≥ 1".into()));
        }
        let pos_enc = PositionalEncoding::new(POSITION_FREQUENCIES, true)?;
        let pose_enc = PositionalEncoding::new(POSE_FREQUENCIES, true)?;
        let input = pos_enc.output_dim(3) + pose_enc.output_dim(POSE_DIM);
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(HIDDEN_WIDTH, HIDDEN_LAYERS + 1));
        dims.push(3 * l);
        let mut layers = Vec::new();
        let mut offset = 0;
        for w in dims.windows(2) {
            let shape = LayerShape {
                inputs: w[0],
                outputs: w[1],
                offset,
            };
            offset += shape.len();
            layers.push(shape);
        }
        let mut params = vec![0.0; offset];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for shape in &layers[..layers.len() - 1] {
            let bound = (6.0 / shape.inputs as f64).sqrt();
            for p in &mut params[shape.weights()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(AdeNetwork {
            l,
            lambda_p,
            pos_enc,
            pose_enc,
            layers,
            params,
        })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn decode_layer(&self) -> LayerShape {
        *self.layers.last().expect("network has layers")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} network parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Quaternion `(w, x, y, z)` followed by the translation.
    pub fn pose_vector(view: &CameraView) -> [f64; POSE_DIM] {
        let q = view.rotation;
        let t = view.translation;
        [q.w, q.x, q.y, q.z, t[0], t[1], t[2]]
    }

    fn stride(&self) -> usize {
        self.pos_enc.output_dim(3) + HIDDEN_WIDTH * (HIDDEN_LAYERS + 1)
    }

    pub fn forward(&self, positions: &[Vector3<f64>], view: &CameraView) -> Result<(DeviationSet, AdeCache)> {
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Numerical("non-finite Gaussian position".into()));
        }
        let pose_code = self.pose_enc.encode(&Self::pose_vector(view));
        let first = self.layers[0];
        let pos_dim = self.pos_enc.output_dim(3);
        // Pose part of the first layer is shared by every Gaussian.
        let mut shared = self.params[first.bias()].to_vec();
        let w0 = &self.params[first.weights()];
        for (o, s) in shared.iter_mut().enumerate() {
            let row = &w0[o * first.inputs + pos_dim..(o + 1) * first.inputs];
            *s += row.iter().zip(&pose_code).map(|(w, x)| w * x).sum::<f64>();
        }
        let stride = self.stride();
        let out_dim = 3 * self.l;
        let n = positions.len();
        let mut activations = vec![0.0; n * stride];
        let mut outputs = vec![0.0; n * out_dim];
        activations
            .par_chunks_mut(ROWS_PER_TASK * stride)
            .zip(outputs.par_chunks_mut(ROWS_PER_TASK * out_dim))
            .enumerate()
            .for_each(|(chunk, (acts, outs))| {
                let mut enc = Vec::with_capacity(pos_dim);
                for (r, (act, out)) in acts.chunks_mut(stride).zip(outs.chunks_mut(out_dim)).enumerate() {
                    let j = chunk * ROWS_PER_TASK + r;
                    enc.clear();
                    self.pos_enc.encode_into(positions[j].as_slice(), &mut enc);
                    self.forward_row(&enc, &shared, act, out);
                }
            });
        let deviations = (0..self.l)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let o = &outputs[j * out_dim + 3 * i..j * out_dim + 3 * i + 3];
                        Vector3::new(o[0], o[1], o[2])
                    })
                    .collect()
            })
            .collect();
        Ok((
            DeviationSet {
                deviations,
                lambda_p: self.lambda_p,
            },
            AdeCache {
                pose_code,
                activations,
                stride,
                n,
            },
        ))
    }

    fn forward_row(&self, enc: &[f64], shared: &[f64], act: &mut [f64], out: &mut [f64]) {
        let pos_dim = enc.len();
        act[..pos_dim].copy_from_slice(enc);
        let first = self.layers[0];
        let w0 = &self.params[first.weights()];
        for o in 0..first.outputs {
            let row = &w0[o * first.inputs..o * first.inputs + pos_dim];
            let z = shared[o] + row.iter().zip(enc).map(|(w, x)| w * x).sum::<f64>();
            act[pos_dim + o] = z.max(0.0);
        }
        let mut input_at = pos_dim;
        for (li, layer) in self.layers.iter().enumerate().skip(1) {
            let (done, rest) = act.split_at_mut(input_at + layer.inputs);
            let x = &done[input_at..];
            let w = &self.params[layer.weights()];
            let b = &self.params[layer.bias()];
            let last = li == self.layers.len() - 1;
            for o in 0..layer.outputs {
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                let z = b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
                if last {
                    out[o] = z;
                } else {
                    rest[o] = z.max(0.0);
                }
            }
            input_at += layer.inputs;
        }
    }

    /// Gradient of the loss with respect to every network parameter, given
    /// `grad[i - 1][j] = dL/dδx_j` for latent `i`. Positions are treated as
    /// constants.
    pub fn backward(&self, cache: &AdeCache, grad: &[Vec<Vector3<f64>>]) -> Result<Vec<f64>> {
        Ok(self.backward_full(cache, grad)?.0)
    }

    /// Like [`backward`](Self::backward), also returning `dL/dx_j` through the
    /// positional encoding of each input center.
    pub fn backward_full(
        &self,
        cache: &AdeCache,
        grad: &[Vec<Vector3<f64>>],
    ) -> Result<(Vec<f64>, Vec<Vector3<f64>>)> {
        if grad.len() != self.l || grad.iter().any(|g| g.len() != cache.n) {
            return Err(Error::ShapeMismatch("deviation gradient shape mismatch".into()));
        }
        let out_dim = 3 * self.l;
        let partials: Vec<(Vec<f64>, Vec<Vector3<f64>>)> = (0..cache.n.div_ceil(ROWS_PER_TASK))
            .into_par_iter()
            .map(|chunk| {
                let mut acc = vec![0.0; self.params.len()];
                let mut g_out = vec![0.0; out_dim];
                let lo = chunk * ROWS_PER_TASK;
                let hi = (lo + ROWS_PER_TASK).min(cache.n);
                let mut g_pos = Vec::with_capacity(hi - lo);
                for j in lo..hi {
                    for i in 0..self.l {
                        g_out[3 * i..3 * i + 3].copy_from_slice(grad[i][j].as_slice());
                    }
                    let act = &cache.activations[j * cache.stride..(j + 1) * cache.stride];
                    g_pos.push(self.backward_row(act, &cache.pose_code, &g_out, &mut acc));
                }
                (acc, g_pos)
            })
            .collect();
        let mut total = vec![0.0; self.params.len()];
        let mut positions = Vec::with_capacity(cache.n);
        for (p, g) in partials {
            for (t, v) in total.iter_mut().zip(&p) {
                *t += v;
            }
            positions.extend(g);
        }
        Ok((total, positions))
    }

    /// Chains a gradient on the encoding back to the raw coordinates, using
    /// the stored `sin`/`cos` values.
    fn encoding_backward(&self, enc: &[f64], g_enc: &[f64]) -> Vector3<f64> {
        let per = 2 * self.pos_enc.num_frequencies + usize::from(self.pos_enc.include_input);
        let mut out = Vector3::zeros();
        for c in 0..3 {
            let e = &enc[c * per..(c + 1) * per];
            let g = &g_enc[c * per..(c + 1) * per];
            let skip = usize::from(self.pos_enc.include_input);
            let mut d = if skip == 1 { g[0] } else { 0.0 };
            let mut freq = PI;
            for k in 0..self.pos_enc.num_frequencies {
                let (s, co) = (e[skip + 2 * k], e[skip + 2 * k + 1]);
                d += freq * (g[skip + 2 * k] * co - g[skip + 2 * k + 1] * s);
                freq *= 2.0;
            }
            out[c] = d;
        }
        out
    }

    fn backward_row(&self, act: &[f64], pose_code: &[f64], g_out: &[f64], acc: &mut [f64]) -> Vector3<f64> {
        let mut g = g_out.to_vec();
        let mut input_end = act.len();
        for li in (0..self.layers.len()).rev() {
            let layer = self.layers[li];
            let input_start = input_end - if li == 0 { act.len() - HIDDEN_WIDTH * (HIDDEN_LAYERS + 1) } else { layer.inputs };
            let x = &act[input_start..input_end];
            let w_range = layer.weights();
            let b_range = layer.bias();
            for o in 0..layer.outputs {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                acc[b_range.start + o] += go;
                let row = w_range.start + o * layer.inputs;
                for (k, xv) in x.iter().enumerate() {
                    acc[row + k] += go * xv;
                }
                if li == 0 {
                    for (k, pv) in pose_code.iter().enumerate() {
                        acc[row + x.len() + k] += go * pv;
                    }
                }
            }
            if li == 0 {
                let w = &self.params[w_range];
                let mut g_enc = vec![0.0; x.len()];
                for o in 0..layer.outputs {
                    let go = g[o];
                    if go == 0.0 {
                        continue;
                    }
                    let row = &w[o * layer.inputs..o * layer.inputs + x.len()];
                    for (k, wv) in row.iter().enumerate() {
                        g_enc[k] += go * wv;
                    }
                }
                return self.encoding_backward(x, &g_enc);
            }
            // Gradient w.r.t. this layer's input, masked by the ReLU that
            // produced it.
            let w = &self.params[w_range];
            let mut gi = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                for (k, wv) in row.iter().enumerate() {
                    gi[k] += go * wv;
                }
            }
            for (k, v) in gi.iter_mut().enumerate() {
                if x[k] <= 0.0 {
                    *v = 0.0;
                }
            }
            g = gi;
            input_end = input_start;
        }
        unreachable!("the first layer returns")
    }
}
