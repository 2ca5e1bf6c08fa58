//! Layers used by the quality predictor. Each layer owns a name prefix and
//! its dimensions; parameters live in a [`ParamStore`] under
//! `"{prefix}.{name}"`.

use super::graph::{BatchStats, Graph, Var};
use super::params::{Bound, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::Xoshiro256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Valid-frame layout of a padded batch: `B` sequences padded to `max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqMask {
    pub lengths: Vec<usize>,
    pub max_len: usize,
}

impl SeqMask {
    pub fn new(lengths: Vec<usize>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::Empty("mask for an empty batch".into()));
        }
        if lengths.contains(&0) {
            return Err(Error::Validation("sequence with no valid frames".into()));
        }
        let max_len = *lengths.iter().max().unwrap();
        Ok(Self { lengths, max_len })
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn rows(&self) -> usize {
        self.batch() * self.max_len
    }

    pub fn is_valid(&self, b: usize, t: usize) -> bool {
        t < self.lengths[b]
    }

    /// One flag per row of a `(B·T) × D` matrix.
    pub fn row_flags(&self) -> Vec<bool> {
        (0..self.batch())
            .flat_map(|b| (0..self.max_len).map(move |t| t < self.lengths[b]))
            .collect()
    }

    /// Key mask for sequence `b`: one flag per time step.
    pub fn key_flags(&self, b: usize) -> Vec<bool> {
        (0..self.max_len).map(|t| t < self.lengths[b]).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.lengths.iter().sum()
    }
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            output,
        }
    }

    pub fn weight(&self) -> String {
        format!("{}.weight", self.prefix)
    }

    pub fn bias(&self) -> String {
        format!("{}.bias", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Xoshiro256) {
        let bound = fan_in_bound(self.input);
        store.insert(self.weight(), Tensor::uniform(&[self.input, self.output], bound, rng));
        store.insert(self.bias(), Tensor::uniform(&[self.output], bound, rng));
    }

    /// `y = x·W + b` for `x: N × input`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let (_, c) = g.shape(x);
        if c != self.input {
            return Err(Error::Shape(format!(
                "{}: input width {c}, expected {}",
                self.prefix, self.input
            )));
        }
        let xw = g.matmul(x, p.get(&self.weight())?)?;
        g.add_row(xw, p.get(&self.bias())?)
    }
}

/// Batch normalization over feature channels, statistics taken over valid
/// frames only.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub prefix: String,
    pub dim: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(prefix: impl Into<String>, dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            dim,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn gamma(&self) -> String {
        format!("{}.gamma", self.prefix)
    }

    pub fn beta(&self) -> String {
        format!("{}.beta", self.prefix)
    }

    pub fn running_mean(&self) -> String {
        format!("{}.running_mean", self.prefix)
    }

    pub fn running_var(&self) -> String {
        format!("{}.running_var", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, buffers: &mut ParamStore) {
        store.insert(self.gamma(), Tensor::filled(&[self.dim], 1.0));
        store.insert(self.beta(), Tensor::zeros(&[self.dim]));
        buffers.insert(self.running_mean(), Tensor::zeros(&[self.dim]));
        buffers.insert(self.running_var(), Tensor::filled(&[self.dim], 1.0));
    }

    /// Returns the output and, in train mode, the batch statistics used.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        buffers: &ParamStore,
        x: Var,
        valid_rows: &[bool],
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (_, c) = g.shape(x);
        if c != self.dim {
            return Err(Error::Shape(format!(
                "{}: width {c}, expected {}",
                self.prefix, self.dim
            )));
        }
        let (normed, stats) = match mode {
            Mode::Train => {
                let valid = valid_rows.iter().filter(|&&v| v).count();
                if valid < 2 {
                    return Err(Error::Validation(format!(
                        "{}: batch normalization in train mode needs at least 2 valid frames, got {valid}",
                        self.prefix
                    )));
                }
                let (v, s) = g.batch_norm(x, valid_rows, self.eps)?;
                (v, Some(s))
            }
            Mode::Eval => {
                let mean = &buffers.get(&self.running_mean())?.data;
                let var = &buffers.get(&self.running_var())?.data;
                let neg_mean = g.constant(mean.iter().map(|m| -m).collect(), 1, c);
                let inv_std = g.constant(var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect(), 1, c);
                let centered = g.add_row(x, neg_mean)?;
                (g.mul_row(centered, inv_std)?, None)
            }
        };
        let scaled = g.mul_row(normed, p.get(&self.gamma())?)?;
        Ok((g.add_row(scaled, p.get(&self.beta())?)?, stats))
    }

    /// Momentum update of the running statistics; the variance uses the
    /// unbiased estimate.
    pub fn update_running(&self, buffers: &mut ParamStore, stats: &BatchStats) -> Result<()> {
        let m = self.momentum;
        let n = stats.count as f64;
        let unbias = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        let rm = buffers.get_mut(&self.running_mean())?;
        for (r, &b) in rm.data.iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        let rv = buffers.get_mut(&self.running_var())?;
        for (r, &b) in rv.data.iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b * unbias;
        }
        Ok(())
    }
}

/// Stacked bidirectional LSTM with gate order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
}

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

impl BiLstm {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, layers: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            hidden,
            layers,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    fn name(&self, layer: usize, dir: &str, what: &str) -> String {
        format!("{}.l{layer}.{dir}.{what}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Xoshiro256) {
        let h = self.hidden;
        for layer in 0..self.layers {
            let din = if layer == 0 { self.input } else { 2 * h };
            for dir in DIRECTIONS {
                store.insert(
                    self.name(layer, dir, "w_ih"),
                    Tensor::uniform(&[din, 4 * h], fan_in_bound(din), rng),
                );
                store.insert(
                    self.name(layer, dir, "w_hh"),
                    Tensor::uniform(&[h, 4 * h], fan_in_bound(h), rng),
                );
                let mut bias = Tensor::uniform(&[4 * h], fan_in_bound(h), rng);
                bias.data[h..2 * h].iter_mut().for_each(|b| *b += 1.0);
                store.insert(self.name(layer, dir, "bias"), bias);
            }
        }
    }

    /// `x: (B·T) × input` → `(B·T) × 2H`. Padded steps hold the previous
    /// state, so the backward direction starts from zeros at each sequence's
    /// last valid frame.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, mask: &SeqMask) -> Result<Var> {
        let (rows, c) = g.shape(x);
        if rows != mask.rows() || c != self.input {
            return Err(Error::Shape(format!(
                "{}: got {rows}x{c}, expected {}x{}",
                self.prefix,
                mask.rows(),
                self.input
            )));
        }
        let mut h_in = x;
        for layer in 0..self.layers {
            let fwd = self.direction(g, p, h_in, mask, layer, false)?;
            let bwd = self.direction(g, p, h_in, mask, layer, true)?;
            h_in = g.concat_cols(&[fwd, bwd])?;
        }
        Ok(h_in)
    }

    fn direction(&self, g: &mut Graph, p: &Bound, x: Var, mask: &SeqMask, layer: usize, reverse: bool) -> Result<Var> {
        let dir = DIRECTIONS[reverse as usize];
        let (bsz, tmax, h) = (mask.batch(), mask.max_len, self.hidden);
        let xw = g.matmul(x, p.get(&self.name(layer, dir, "w_ih"))?)?;
        let xw = g.add_row(xw, p.get(&self.name(layer, dir, "bias"))?)?;
        let w_hh = p.get(&self.name(layer, dir, "w_hh"))?;
        let mut h_prev = g.constant(vec![0.0; bsz * h], bsz, h);
        let mut c_prev = g.constant(vec![0.0; bsz * h], bsz, h);
        let mut outputs = vec![h_prev; tmax];
        let steps: Vec<usize> = if reverse {
            (0..tmax).rev().collect()
        } else {
            (0..tmax).collect()
        };
        for t in steps {
            let rows: Vec<usize> = (0..bsz).map(|b| b * tmax + t).collect();
            let step_mask: Vec<bool> = (0..bsz).map(|b| mask.is_valid(b, t)).collect();
            let xt = g.gather_rows(xw, &rows)?;
            let rec = g.matmul(h_prev, w_hh)?;
            let gates = g.add(xt, rec)?;
            let i_lin = g.slice_cols(gates, 0, h)?;
            let f_lin = g.slice_cols(gates, h, h)?;
            let c_lin = g.slice_cols(gates, 2 * h, h)?;
            let o_lin = g.slice_cols(gates, 3 * h, h)?;
            let i = g.sigmoid(i_lin);
            let f = g.sigmoid(f_lin);
            let cand = g.tanh(c_lin);
            let o = g.sigmoid(o_lin);
            let keep = g.mul(f, c_prev)?;
            let write = g.mul(i, cand)?;
            let c_new = g.add(keep, write)?;
            let c_act = g.tanh(c_new);
            let h_new = g.mul(o, c_act)?;
            c_prev = g.mask_blend(c_new, c_prev, &step_mask)?;
            h_prev = g.mask_blend(h_new, h_prev, &step_mask)?;
            outputs[t] = h_prev;
        }
        // Time-major stack back to sample-major rows.
        let stacked = g.concat_rows(&outputs)?;
        let order: Vec<usize> = (0..bsz).flat_map(|b| (0..tmax).map(move |t| t * bsz + b)).collect();
        g.gather_rows(stacked, &order)
    }
}

/// Sinusoidal position encodings for `len` steps of width `dim`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * dim];
    for t in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            out[t * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

/// Pre-norm transformer encoder stack: LayerNorm → masked multi-head
/// self-attention → residual → LayerNorm → GELU feed-forward (4× width) →
/// residual.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerEncoder {
    pub prefix: String,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
}

impl TransformerEncoder {
    pub fn new(prefix: impl Into<String>, dim: usize, heads: usize, layers: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "hidden size {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            dim,
            heads,
            layers,
        })
    }

    fn name(&self, layer: usize, what: &str) -> String {
        format!("{}.l{layer}.{what}", self.prefix)
    }

    fn linear(&self, layer: usize, what: &str, input: usize, output: usize) -> Linear {
        Linear::new(self.name(layer, what), input, output)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Xoshiro256) {
        let d = self.dim;
        for layer in 0..self.layers {
            for ln in ["ln1", "ln2"] {
                store.insert(self.name(layer, &format!("{ln}.gamma")), Tensor::filled(&[d], 1.0));
                store.insert(self.name(layer, &format!("{ln}.beta")), Tensor::zeros(&[d]));
            }
            for proj in ["q", "k", "v", "o"] {
                self.linear(layer, proj, d, d).init(store, rng);
            }
            self.linear(layer, "ff1", d, 4 * d).init(store, rng);
            self.linear(layer, "ff2", 4 * d, d).init(store, rng);
        }
    }

    fn norm(&self, g: &mut Graph, p: &Bound, x: Var, layer: usize, ln: &str) -> Result<Var> {
        let y = g.layer_norm(x, 1e-5);
        let y = g.mul_row(y, p.get(&self.name(layer, &format!("{ln}.gamma")))?)?;
        g.add_row(y, p.get(&self.name(layer, &format!("{ln}.beta")))?)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, mask: &SeqMask) -> Result<Var> {
        let (rows, c) = g.shape(x);
        if rows != mask.rows() || c != self.dim {
            return Err(Error::Shape(format!(
                "{}: got {rows}x{c}, expected {}x{}",
                self.prefix,
                mask.rows(),
                self.dim
            )));
        }
        let mut h = x;
        for layer in 0..self.layers {
            let attn = {
                let normed = self.norm(g, p, h, layer, "ln1")?;
                let (out, _) = self.attention(g, p, normed, mask, layer)?;
                out
            };
            h = g.add(h, attn)?;
            let normed = self.norm(g, p, h, layer, "ln2")?;
            let ff = self
                .linear(layer, "ff1", self.dim, 4 * self.dim)
                .forward(g, p, normed)?;
            let ff = g.gelu(ff);
            let ff = self.linear(layer, "ff2", 4 * self.dim, self.dim).forward(g, p, ff)?;
            h = g.add(h, ff)?;
        }
        Ok(h)
    }

    /// Multi-head self-attention over one layer. Also returns the attention
    /// matrices, indexed `[batch][head]`, each `T × T`.
    pub fn attention(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        mask: &SeqMask,
        layer: usize,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let d = self.dim;
        let dh = d / self.heads;
        let tmax = mask.max_len;
        let q = self.linear(layer, "q", d, d).forward(g, p, x)?;
        let k = self.linear(layer, "k", d, d).forward(g, p, x)?;
        let v = self.linear(layer, "v", d, d).forward(g, p, x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut per_seq = Vec::with_capacity(mask.batch());
        let mut maps = Vec::with_capacity(mask.batch());
        for b in 0..mask.batch() {
            let keys = mask.key_flags(b);
            let (qb, kb, vb) = (
                g.slice_rows(q, b * tmax, tmax)?,
                g.slice_rows(k, b * tmax, tmax)?,
                g.slice_rows(v, b * tmax, tmax)?,
            );
            let mut heads = Vec::with_capacity(self.heads);
            let mut head_maps = Vec::with_capacity(self.heads);
            for hd in 0..self.heads {
                let qh = g.slice_cols(qb, hd * dh, dh)?;
                let kh = g.slice_cols(kb, hd * dh, dh)?;
                let vh = g.slice_cols(vb, hd * dh, dh)?;
                let scores = g.matmul_bt(qh, kh)?;
                let scores = g.scale(scores, scale);
                let weights = g.masked_softmax(scores, &keys)?;
                heads.push(g.matmul(weights, vh)?);
                head_maps.push(weights);
            }
            per_seq.push(g.concat_cols(&heads)?);
            maps.push(head_maps);
        }
        let merged = g.concat_rows(&per_seq)?;
        let out = self.linear(layer, "o", d, d).forward(g, p, merged)?;
        Ok((out, maps))
    }
}

/// Additive attention pooling: `score_t = vᵀ tanh(W h_t + b)`, softmax over
/// valid frames, output `Σ_t α_t h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPool {
    pub prefix: String,
    pub dim: usize,
    pub hidden: usize,
}

impl AttentionPool {
    pub fn new(prefix: impl Into<String>, dim: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.into(),
            dim,
            hidden,
        }
    }

    fn scorer(&self) -> Linear {
        Linear::new(format!("{}.score", self.prefix), self.dim, self.hidden)
    }

    pub fn vector(&self) -> String {
        format!("{}.v", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Xoshiro256) {
        self.scorer().init(store, rng);
        store.insert(
            self.vector(),
            Tensor::uniform(&[self.hidden, 1], fan_in_bound(self.hidden), rng),
        );
    }

    /// `h: (B·T) × dim` → (pooled `B × dim`, weights `B × T`).
    pub fn forward(&self, g: &mut Graph, p: &Bound, h: Var, mask: &SeqMask) -> Result<(Var, Var)> {
        let (rows, c) = g.shape(h);
        if rows != mask.rows() || c != self.dim {
            return Err(Error::Shape(format!(
                "{}: got {rows}x{c}, expected {}x{}",
                self.prefix,
                mask.rows(),
                self.dim
            )));
        }
        let tmax = mask.max_len;
        let hidden = self.scorer().forward(g, p, h)?;
        let hidden = g.tanh(hidden);
        let scores = g.matmul(hidden, p.get(&self.vector())?)?;
        let scores = g.reshape(scores, mask.batch(), tmax)?;
        let alpha = g.masked_softmax(scores, &mask.row_flags())?;
        let mut pooled = Vec::with_capacity(mask.batch());
        for b in 0..mask.batch() {
            let a = g.slice_rows(alpha, b, 1)?;
            let hb = g.slice_rows(h, b * tmax, tmax)?;
            pooled.push(g.matmul(a, hb)?);
        }
        Ok((g.concat_rows(&pooled)?, alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(g: &mut Graph, rows: usize, cols: usize, seed: u64) -> Var {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        g.constant((0..rows * cols).map(|_| rng.normal()).collect(), rows, cols)
    }

    #[test]
    fn mask_layout_is_batch_major() {
        let m = SeqMask::new(vec![3, 1]).unwrap();
        assert_eq!((m.batch(), m.max_len, m.rows()), (2, 3, 6));
        assert_eq!(m.row_flags(), [true, true, true, true, false, false]);
        assert_eq!(m.valid_count(), 4);
        assert!(SeqMask::new(vec![2, 0]).is_err());
        assert!(SeqMask::new(vec![]).is_err());
    }

    #[test]
    fn bilstm_shapes_and_padding_isolation() {
        let mut rng = Xoshiro256::seed_from_u64(1);
        let lstm = BiLstm::new("l", 3, 5, 2);
        let mut p = ParamStore::new();
        lstm.init(&mut p, &mut rng);
        let mask = SeqMask::new(vec![4, 2]).unwrap();

        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let x = input(&mut g, 8, 3, 2);
        let y = lstm.forward(&mut g, &b, x, &mask).unwrap();
        assert_eq!(g.shape(y), (8, lstm.output_dim()));
        assert_eq!(lstm.output_dim(), 10);
        let valid = g.value(y)[4 * 10..6 * 10].to_vec();

        // Changing padded frames of the second sequence leaves its valid outputs alone.
        let mut g2 = Graph::new();
        let b2 = p.bind(&mut g2, false);
        let mut data = g.value(x).to_vec();
        data[6 * 3..].iter_mut().for_each(|v| *v = 100.0);
        let x2 = g2.constant(data, 8, 3);
        let y2 = lstm.forward(&mut g2, &b2, x2, &mask).unwrap();
        assert_eq!(&g2.value(y2)[4 * 10..6 * 10], valid.as_slice());
    }

    #[test]
    fn transformer_rejects_indivisible_heads() {
        assert!(TransformerEncoder::new("t", 6, 4, 1).is_err());
        assert!(TransformerEncoder::new("t", 8, 4, 1).is_ok());
    }

    #[test]
    fn positions_start_at_sin0_cos0() {
        let pe = sinusoidal_positions(3, 4);
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe[4] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn attention_pool_ignores_padding() {
        let mut rng = Xoshiro256::seed_from_u64(3);
        let pool = AttentionPool::new("a", 4, 6);
        let mut p = ParamStore::new();
        pool.init(&mut p, &mut rng);
        let mask = SeqMask::new(vec![1, 3]).unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let h = input(&mut g, 6, 4, 4);
        let (pooled, alpha) = pool.forward(&mut g, &b, h, &mask).unwrap();
        assert_eq!(g.shape(pooled), (2, 4));
        let a = g.value(alpha);
        assert_eq!(&a[..3], &[1.0, 0.0, 0.0]);
        assert!((a[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // A single valid frame pools to itself.
        assert_eq!(&g.value(pooled)[..4], &g.value(h)[..4]);
    }
}
