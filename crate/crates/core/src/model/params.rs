use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::config::ModelConfig;

/// Half-width of the uniform initializer.
pub const INIT_BOUND: f64 = 0.08;

/// The four LSTM transforms, in the column order used by [`CellWeights`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// `i`: tanh candidate.
    Candidate = 0,
    /// `j`: sigmoid input gate.
    Input = 1,
    /// `f`: sigmoid forget gate.
    Forget = 2,
    /// `o`: output gate.
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Candidate, Gate::Input, Gate::Forget, Gate::Output];
}

/// Weights for one LSTM layer, with the four gates packed side by side:
/// `w` is `[input × 4H]`, `r` is `[H × 4H]`, `b` is `[4H]`, and gate `g`
/// owns columns `g·H .. (g+1)·H`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    pub w: Tensor,
    pub r: Tensor,
    pub b: Tensor,
}

impl CellWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Tensor::zeros(&[input, 4 * hidden]),
            r: Tensor::zeros(&[hidden, 4 * hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn random(input: usize, hidden: usize, rng: &mut Rng, bound: f64) -> Self {
        Self {
            w: rng.uniform_tensor(&[input, 4 * hidden], bound),
            r: rng.uniform_tensor(&[hidden, 4 * hidden], bound),
            b: rng.uniform_tensor(&[4 * hidden], bound),
        }
    }

    /// Packs per-gate `(W_g [input × H], R_g [H × H], b_g [H])` triples,
    /// given in [`Gate::ALL`] order.
    pub fn from_gates(gates: [(&Tensor, &Tensor, &Tensor); 4]) -> Result<Self> {
        let (w0, _, b0) = gates[0];
        let hidden = b0.len();
        let input = w0.rows();
        let mut packed = Self::zeros(input, hidden);
        for (g, (w, r, b)) in gates.iter().enumerate() {
            if w.shape() != [input, hidden] {
                return Err(Error::dim("CellWeights::from_gates", w.shape(), &[input, hidden]));
            }
            if r.shape() != [hidden, hidden] {
                return Err(Error::dim("CellWeights::from_gates", r.shape(), &[hidden, hidden]));
            }
            if b.shape() != [hidden] {
                return Err(Error::dim("CellWeights::from_gates", b.shape(), &[hidden]));
            }
            write_block(&mut packed.w, w, g * hidden);
            write_block(&mut packed.r, r, g * hidden);
            packed.b.data_mut()[g * hidden..(g + 1) * hidden].copy_from_slice(b.data());
        }
        Ok(packed)
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }

    pub fn input_width(&self) -> usize {
        self.w.rows()
    }

    /// `W_g` as a standalone `[input × H]` matrix.
    pub fn gate_input_weights(&self, gate: Gate) -> Tensor {
        read_block(&self.w, gate as usize * self.hidden(), self.hidden())
    }

    /// `R_g` as a standalone `[H × H]` matrix.
    pub fn gate_recurrent_weights(&self, gate: Gate) -> Tensor {
        read_block(&self.r, gate as usize * self.hidden(), self.hidden())
    }

    pub fn gate_bias(&self, gate: Gate) -> Tensor {
        let h = self.hidden();
        let start = gate as usize * h;
        Tensor::vector(self.b.data()[start..start + h].to_vec())
    }

    pub fn check(&self, input: usize, hidden: usize) -> Result<()> {
        for (t, shape) in [
            (&self.w, vec![input, 4 * hidden]),
            (&self.r, vec![hidden, 4 * hidden]),
            (&self.b, vec![4 * hidden]),
        ] {
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("CellWeights", t.shape(), &shape));
            }
        }
        Ok(())
    }
}

fn write_block(dst: &mut Tensor, src: &Tensor, col0: usize) {
    let cols = dst.cols();
    let width = src.cols();
    for i in 0..src.rows() {
        dst.data_mut()[i * cols + col0..i * cols + col0 + width].copy_from_slice(src.row(i));
    }
}

fn read_block(src: &Tensor, col0: usize, width: usize) -> Tensor {
    let rows = src.rows();
    let mut data = Vec::with_capacity(rows * width);
    for i in 0..rows {
        data.extend_from_slice(&src.row(i)[col0..col0 + width]);
    }
    Tensor::matrix(rows, width, data).expect("block shape")
}

/// `y = x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: Tensor,
    pub b: Tensor,
}

impl Affine {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Tensor::zeros(&[input, output]),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = Self::zeros(dim, dim);
        for i in 0..dim {
            a.w.data_mut()[i * dim + i] = 1.0;
        }
        a
    }

    pub fn random(input: usize, output: usize, rng: &mut Rng, bound: f64) -> Self {
        Self {
            w: rng.uniform_tensor(&[input, output], bound),
            b: rng.uniform_tensor(&[output], bound),
        }
    }
}

/// Every trainable tensor of a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// `[vocab × embed_dim]`; rows 0 (unknown) and 1 (padding) start at zero.
    pub embedding: Tensor,
    pub layers: Vec<CellWeights>,
    /// Present only for bidirectional models with separate weights.
    pub reverse_layers: Option<Vec<CellWeights>>,
    pub pooling: Option<Affine>,
    pub projection: Affine,
}

impl ClassifierParams {
    pub fn zeros(config: &ModelConfig, vocab_size: usize) -> Self {
        let stack = |c: &ModelConfig| {
            (0..c.num_layers)
                .map(|l| CellWeights::zeros(c.layer_input_width(l), c.hidden_size))
                .collect::<Vec<_>>()
        };
        Self {
            embedding: Tensor::zeros(&[vocab_size, config.embed_dim]),
            layers: stack(config),
            reverse_layers: (config.direction == super::Direction::SeparateBidirectional).then(|| stack(config)),
            pooling: config.pooling.then(|| Affine::zeros(config.embed_dim, config.pooling_dim)),
            projection: Affine::zeros(config.projection_input_width(), config.num_classes),
        }
    }

    /// Uniform `[-0.08, 0.08]` initialization of every tensor, except the
    /// unknown and padding embedding rows, which stay zero.
    pub fn random(config: &ModelConfig, vocab_size: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(config, vocab_size);
        for (name, t) in p.named_mut() {
            *t = rng.uniform_tensor(t.shape(), INIT_BOUND);
            if name == "embedding" {
                let e = t.cols();
                for v in &mut t.data_mut()[..e * vocab_size.min(2)] {
                    *v = 0.0;
                }
            }
        }
        p
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    /// Stable `(name, tensor)` listing; the embedding always comes first.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (l, cell) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.w"), &cell.w));
            out.push((format!("layer{l}.r"), &cell.r));
            out.push((format!("layer{l}.b"), &cell.b));
        }
        if let Some(rev) = &self.reverse_layers {
            for (l, cell) in rev.iter().enumerate() {
                out.push((format!("reverse.layer{l}.w"), &cell.w));
                out.push((format!("reverse.layer{l}.r"), &cell.r));
                out.push((format!("reverse.layer{l}.b"), &cell.b));
            }
        }
        if let Some(pool) = &self.pooling {
            out.push(("pooling.w".to_string(), &pool.w));
            out.push(("pooling.b".to_string(), &pool.b));
        }
        out.push(("projection.w".to_string(), &self.projection.w));
        out.push(("projection.b".to_string(), &self.projection.b));
        out
    }

    /// Same order as [`named`](Self::named).
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding)];
        for (l, cell) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{l}.w"), &mut cell.w));
            out.push((format!("layer{l}.r"), &mut cell.r));
            out.push((format!("layer{l}.b"), &mut cell.b));
        }
        if let Some(rev) = &mut self.reverse_layers {
            for (l, cell) in rev.iter_mut().enumerate() {
                out.push((format!("reverse.layer{l}.w"), &mut cell.w));
                out.push((format!("reverse.layer{l}.r"), &mut cell.r));
                out.push((format!("reverse.layer{l}.b"), &mut cell.b));
            }
        }
        if let Some(pool) = &mut self.pooling {
            out.push(("pooling.w".to_string(), &mut pool.w));
            out.push(("pooling.b".to_string(), &mut pool.b));
        }
        out.push(("projection.w".to_string(), &mut self.projection.w));
        out.push(("projection.b".to_string(), &mut self.projection.b));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.named_mut().into_iter().map(|(_, t)| t).collect()
    }

    /// Rebuilds parameters from named tensors, checking every shape against
    /// what `config` requires.
    pub fn from_named(config: &ModelConfig, vocab_size: usize, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut params = Self::zeros(config, vocab_size);
        let mut by_name: BTreeMap<String, Tensor> = tensors.into_iter().collect();
        for (name, slot) in params.named_mut() {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| Error::CheckpointMalformed(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::CheckpointShape {
                    name,
                    found: t.shape().to_vec(),
                    expected: slot.shape().to_vec(),
                });
            }
            *slot = t;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::CheckpointMalformed(format!("unexpected tensor {extra}")));
        }
        Ok(params)
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.norm().powi(2)).sum::<f64>().sqrt()
    }
}

/// Gradient accumulator. Embedding gradients are kept sparse by row because
/// a sequence touches only a handful of vocabulary entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub embedding_rows: BTreeMap<usize, Vec<f64>>,
    /// Aligned with `ClassifierParams::named()[1..]`.
    pub dense: Vec<Tensor>,
}

impl ParamGrads {
    pub fn zeros_for(params: &ClassifierParams) -> Self {
        Self {
            embedding_rows: BTreeMap::new(),
            dense: params.tensors()[1..].iter().map(|t| Tensor::zeros_like(t)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) -> Result<()> {
        for (row, g) in &other.embedding_rows {
            let slot = self.embedding_rows.entry(*row).or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in slot.iter_mut().zip(g) {
                *a += b;
            }
        }
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.embedding_rows.values_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
        for t in &mut self.dense {
            t.scale_in_place(factor);
        }
    }

    pub fn dense_embedding(&self, vocab_size: usize, dim: usize) -> Tensor {
        let mut t = Tensor::zeros(&[vocab_size, dim]);
        for (row, g) in &self.embedding_rows {
            t.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(g);
        }
        t
    }

    pub fn norm(&self) -> f64 {
        let emb: f64 = self.embedding_rows.values().flatten().map(|v| v * v).sum();
        let dense: f64 = self.dense.iter().map(|t| t.norm().powi(2)).sum();
        (emb + dense).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.embedding_rows.values().flatten().all(|v| v.is_finite()) && self.dense.iter().all(Tensor::is_finite)
    }
}
