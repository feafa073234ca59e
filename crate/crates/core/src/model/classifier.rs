//! The full classifier: embedding lookup, recurrent stack, optional pooling
//! channel, and the softmax head.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::{dropout_mask, Rng};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{argmax, softmax, Tensor};

use super::config::ModelConfig;
use super::lstm::{run_bidirectional, run_stack, stage_inputs, CellVars};
use super::params::{ClassifierParams, ParamGrads};
use super::pooling::pool_vars;

/// How dropout masks are chosen for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Fresh masks; gradients are usually wanted.
    Train,
    /// All-ones masks. Inverted dropout needs no test-time rescale.
    StandardInference,
    /// Fresh masks, one stochastic network sample.
    McSample,
}

impl Mode {
    pub fn is_stochastic(self) -> bool {
        !matches!(self, Mode::StandardInference)
    }
}

/// Every dropout mask one forward pass consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// `layers[l]` is `[T × input width of l]`. The first one also masks the
    /// word vectors entering the pooling channel.
    pub layers: Vec<Tensor>,
    /// Applied to the recurrent output before projection.
    pub projection: Tensor,
    /// Applied to the pooling MLP output, when pooling is on.
    pub pooling_output: Option<Tensor>,
}

impl DropoutMasks {
    pub fn ones(config: &ModelConfig, steps: usize) -> Self {
        Self {
            layers: (0..config.num_layers)
                .map(|l| Tensor::ones(&[steps, config.layer_input_width(l)]))
                .collect(),
            projection: Tensor::ones(&[config.rnn_output_width()]),
            pooling_output: config.pooling.then(|| Tensor::ones(&[config.pooling_dim])),
        }
    }

    /// Independent inverted-dropout masks at `config.input_keep_prob`.
    pub fn sample(config: &ModelConfig, steps: usize, rng: &mut Rng) -> Result<Self> {
        let keep = config.input_keep_prob;
        let layers = (0..config.num_layers)
            .map(|l| dropout_mask(rng, &[steps, config.layer_input_width(l)], keep))
            .collect::<Result<Vec<_>>>()?;
        let projection = dropout_mask(rng, &[config.rnn_output_width()], keep)?;
        let pooling_output = if config.pooling {
            Some(dropout_mask(rng, &[config.pooling_dim], keep)?)
        } else {
            None
        };
        Ok(Self {
            layers,
            projection,
            pooling_output,
        })
    }

    pub fn for_mode(config: &ModelConfig, steps: usize, mode: Mode, rng: &mut Rng) -> Result<Self> {
        if mode.is_stochastic() {
            Self::sample(config, steps, rng)
        } else {
            Ok(Self::ones(config, steps))
        }
    }

    fn check(&self, config: &ModelConfig, steps: usize) -> Result<()> {
        if self.layers.len() != config.num_layers {
            return Err(Error::dim("dropout masks", &[self.layers.len()], &[config.num_layers]));
        }
        for (l, m) in self.layers.iter().enumerate() {
            let expected = [steps, config.layer_input_width(l)];
            if m.shape() != expected {
                return Err(Error::dim("dropout masks", m.shape(), &expected));
            }
        }
        if self.projection.shape() != [config.rnn_output_width()] {
            return Err(Error::dim("dropout masks", self.projection.shape(), &[config.rnn_output_width()]));
        }
        match (&self.pooling_output, config.pooling) {
            (Some(m), true) if m.shape() == [config.pooling_dim] => Ok(()),
            (None, false) => Ok(()),
            (Some(m), _) => Err(Error::dim("dropout masks", m.shape(), &[config.pooling_dim])),
            (None, true) => Err(Error::config("pooling", "pooling is on but no output mask was given")),
        }
    }
}

/// What one forward pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// The (masked) vector fed to the projection.
    pub pre_projection: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl ForwardOutput {
    pub fn predicted(&self) -> usize {
        argmax(self.probs.data())
    }
}

/// A model configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: ModelConfig,
    pub params: ClassifierParams,
}

struct Graph {
    embedded: Var,
    param_vars: Vec<Var>,
    pre_projection: Var,
    logits: Var,
}

impl Classifier {
    pub fn new(config: ModelConfig, params: ClassifierParams) -> Result<Self> {
        config.validate()?;
        let expected = ClassifierParams::zeros(&config, params.vocab_size());
        for ((name, want), (_, got)) in expected.named().iter().zip(params.named()) {
            if want.shape() != got.shape() {
                return Err(Error::CheckpointShape {
                    name: name.clone(),
                    found: got.shape().to_vec(),
                    expected: want.shape().to_vec(),
                });
            }
        }
        if expected.named().len() != params.named().len() {
            return Err(Error::config("params", "tensor layout does not match the configuration"));
        }
        Ok(Self { config, params })
    }

    /// Uniformly initialized model.
    pub fn random(config: ModelConfig, vocab_size: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let params = ClassifierParams::random(&config, vocab_size, rng);
        Ok(Self { config, params })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        let vocab_size = self.params.vocab_size();
        if let Some(&id) = tokens.iter().find(|&&id| id >= vocab_size) {
            return Err(Error::Vocabulary { id, vocab_size });
        }
        Ok(())
    }

    fn gather(&self, tokens: &[usize]) -> Result<Tensor> {
        let e = self.config.embed_dim;
        let mut data = Vec::with_capacity(tokens.len() * e);
        for &id in tokens {
            data.extend_from_slice(self.params.embedding.row(id));
        }
        Tensor::matrix(tokens.len(), e, data)
    }

    fn build<'p>(&'p self, tape: &mut Tape<'p>, tokens: &[usize], masks: &'p DropoutMasks) -> Result<Graph> {
        self.check_tokens(tokens)?;
        masks.check(&self.config, tokens.len())?;
        let cfg = &self.config;

        let embedded = tape.param_owned(self.gather(tokens)?);
        let mut param_vars = Vec::new();
        let mut register = |tape: &mut Tape<'p>, layers: &'p [super::CellWeights]| -> Result<Vec<CellVars>> {
            let cells = layers
                .iter()
                .map(|c| CellVars::register(tape, c, cfg.forget_bias))
                .collect::<Result<Vec<_>>>()?;
            for c in &cells {
                param_vars.extend([c.w, c.r, c.raw_b]);
            }
            Ok(cells)
        };
        let fwd = register(tape, &self.params.layers)?;
        let bwd = match &self.params.reverse_layers {
            Some(rev) => Some(register(tape, rev)?),
            None => None,
        };

        let mask_vars: Vec<Var> = masks.layers.iter().map(|m| tape.constant_ref(m)).collect();
        let rnn_out = if cfg.direction.is_bidirectional() {
            let bwd_cells = bwd.as_deref().unwrap_or(&fwd);
            run_bidirectional(tape, cfg, &fwd, bwd_cells, embedded, &mask_vars)?
        } else {
            let order: Vec<usize> = (0..tokens.len()).collect();
            let (first, upper) = stage_inputs(tape, embedded, &mask_vars, &order)?;
            let stack = run_stack(tape, cfg, &fwd, &first, &upper)?;
            *stack.outputs.last().and_then(|o| o.last()).expect("nonempty stack")
        };
        let proj_mask = tape.constant_ref(&masks.projection);
        let rnn_out = tape.mul(rnn_out, proj_mask)?;

        let pre_projection = match (&self.params.pooling, &masks.pooling_output) {
            (Some(pool), Some(out_mask)) => {
                let w = tape.param(&pool.w);
                let b = tape.param(&pool.b);
                param_vars.extend([w, b]);
                let masked = tape.mul(embedded, mask_vars[0])?;
                let om = tape.constant_ref(out_mask);
                let pooled = pool_vars(tape, masked, w, b, om)?;
                tape.concat(&[rnn_out, pooled])?
            }
            _ => rnn_out,
        };

        let pw = tape.param(&self.params.projection.w);
        let pb = tape.param(&self.params.projection.b);
        param_vars.extend([pw, pb]);
        let logits = tape.matmul(pre_projection, pw)?;
        let logits = tape.add(logits, pb)?;
        Ok(Graph {
            embedded,
            param_vars,
            pre_projection,
            logits,
        })
    }

    fn output(tape: &Tape<'_>, graph: &Graph) -> ForwardOutput {
        let logits = tape.value(graph.logits).clone();
        ForwardOutput {
            pre_projection: tape.value(graph.pre_projection).clone(),
            probs: Tensor::vector(softmax(logits.data())),
            logits,
        }
    }

    /// Forward pass under explicit masks.
    pub fn forward_with_masks(&self, tokens: &[usize], masks: &DropoutMasks) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let graph = self.build(&mut tape, tokens, masks)?;
        Ok(Self::output(&tape, &graph))
    }

    /// Forward pass; stochastic modes draw their masks from `rng`.
    pub fn forward(&self, tokens: &[usize], mode: Mode, rng: &mut Rng) -> Result<ForwardOutput> {
        let masks = DropoutMasks::for_mode(&self.config, tokens.len(), mode, rng)?;
        self.forward_with_masks(tokens, &masks)
    }

    /// Deterministic prediction with all-ones masks.
    pub fn predict(&self, tokens: &[usize]) -> Result<usize> {
        let masks = DropoutMasks::ones(&self.config, tokens.len());
        Ok(self.forward_with_masks(tokens, &masks)?.predicted())
    }

    /// Applies the projection head to a pre-projection vector.
    pub fn project(&self, pre_projection: &Tensor) -> Result<Tensor> {
        pre_projection.matmul(&self.params.projection.w)?.add(&self.params.projection.b)
    }

    /// Cross-entropy loss against `label` and its gradient w.r.t. every
    /// parameter.
    pub fn loss_and_grads(
        &self,
        tokens: &[usize],
        label: usize,
        masks: &DropoutMasks,
    ) -> Result<(f64, ForwardOutput, ParamGrads)> {
        if label >= self.config.num_classes {
            return Err(Error::Index {
                index: label,
                len: self.config.num_classes,
            });
        }
        let mut tape = Tape::new();
        let graph = self.build(&mut tape, tokens, masks)?;
        let (loss, _) = tape.softmax_cross_entropy(graph.logits, label)?;
        let loss_value = tape.value(loss).data()[0];
        let out = Self::output(&tape, &graph);
        let mut grads = tape.backward(loss)?;
        let pg = self.collect_grads(&mut grads, &graph, tokens);
        Ok((loss_value, out, pg))
    }

    fn collect_grads(&self, grads: &mut Gradients, graph: &Graph, tokens: &[usize]) -> ParamGrads {
        let e = self.config.embed_dim;
        let mut embedding_rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        if let Some(g) = grads.take(graph.embedded) {
            for (t, &id) in tokens.iter().enumerate() {
                let slot = embedding_rows.entry(id).or_insert_with(|| vec![0.0; e]);
                for (a, b) in slot.iter_mut().zip(g.row(t)) {
                    *a += b;
                }
            }
        }
        let shapes = self.params.tensors();
        let dense = graph
            .param_vars
            .iter()
            .zip(&shapes[1..])
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros_like(p)))
            .collect();
        ParamGrads { embedding_rows, dense }
    }
}
