//! The LSTM cell, residual stacking and bidirectional passes.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::config::{ModelConfig, OutputGate, ResidualMode};
use super::params::{CellWeights, Gate};

/// Recurrent state: `h` is the fast state, `c` the slow one.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Tensor,
    pub c: Tensor,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(&[hidden]),
            c: Tensor::zeros(&[hidden]),
        }
    }
}

/// Tape handles for one layer's weights, with the forget bias already folded
/// into the bias vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CellVars {
    pub w: Var,
    pub r: Var,
    /// Bias after the forget shift.
    pub b: Var,
    /// The bias parameter itself, for reading gradients.
    pub raw_b: Var,
    pub hidden: usize,
}

impl CellVars {
    pub fn register<'p>(tape: &mut Tape<'p>, cell: &'p CellWeights, forget_bias: f64) -> Result<Self> {
        let hidden = cell.hidden();
        let w = tape.param(&cell.w);
        let r = tape.param(&cell.r);
        let b = tape.param(&cell.b);
        // Adding the shift to the bias (rather than to each preactivation)
        // makes forget_bias = 1 bit-identical to b_f + 1 with forget_bias = 0.
        let mut shift = Tensor::zeros(&[4 * hidden]);
        let f0 = Gate::Forget as usize * hidden;
        shift.data_mut()[f0..f0 + hidden].fill(forget_bias);
        let shift = tape.constant(shift);
        let shifted = tape.add(b, shift)?;
        Ok(Self {
            w,
            r,
            b: shifted,
            raw_b: b,
            hidden,
        })
    }
}

/// One timestep. Returns `(o ⊙ tanh(c), c)`; residual wiring is applied by
/// the caller.
pub(crate) fn cell_step_vars(
    tape: &mut Tape<'_>,
    cell: &CellVars,
    x: Var,
    prev_h: Var,
    prev_c: Var,
    gate: OutputGate,
) -> Result<(Var, Var)> {
    let h = cell.hidden;
    let wx = tape.matmul(x, cell.w)?;
    let rh = tape.matmul(prev_h, cell.r)?;
    let pre = tape.add(wx, rh)?;
    let pre = tape.add(pre, cell.b)?;

    let i_pre = tape.slice(pre, Gate::Candidate as usize * h, h)?;
    let j_pre = tape.slice(pre, Gate::Input as usize * h, h)?;
    let f_pre = tape.slice(pre, Gate::Forget as usize * h, h)?;
    let o_pre = tape.slice(pre, Gate::Output as usize * h, h)?;

    let i = tape.tanh(i_pre)?;
    let j = tape.sigmoid(j_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let o = match gate {
        OutputGate::Sigmoid => tape.sigmoid(o_pre)?,
        OutputGate::Tanh => tape.tanh(o_pre)?,
    };

    let ij = tape.mul(i, j)?;
    let fc = tape.mul(f, prev_c)?;
    let c = tape.add(ij, fc)?;
    let tc = tape.tanh(c)?;
    let h_out = tape.mul(o, tc)?;
    Ok((h_out, c))
}

/// Applies the six LSTM equations once, without residuals.
pub fn cell_step(
    weights: &CellWeights,
    x: &Tensor,
    prev: &CellState,
    forget_bias: f64,
    gate: OutputGate,
) -> Result<CellState> {
    let hidden = weights.hidden();
    weights.check(weights.input_width(), hidden)?;
    if x.shape() != [weights.input_width()] {
        return Err(Error::dim("cell_step", x.shape(), &[weights.input_width()]));
    }
    if prev.h.shape() != [hidden] || prev.c.shape() != [hidden] {
        return Err(Error::dim("cell_step", prev.h.shape(), &[hidden]));
    }
    let mut tape = Tape::new();
    let cell = CellVars::register(&mut tape, weights, forget_bias)?;
    let xv = tape.constant_ref(x);
    let hv = tape.constant_ref(&prev.h);
    let cv = tape.constant_ref(&prev.c);
    let (h, c) = cell_step_vars(&mut tape, &cell, xv, hv, cv, gate)?;
    Ok(CellState {
        h: tape.value(h).clone(),
        c: tape.value(c).clone(),
    })
}

/// Per-layer outputs of a stack pass, on the tape.
pub(crate) struct StackVars {
    /// `outputs[l][t]`: what layer `l` passes upward at step `t`.
    pub outputs: Vec<Vec<Var>>,
    /// Final `(fast state, slow state)` per layer.
    pub finals: Vec<(Var, Var)>,
}

/// Runs the layer stack over `first_inputs` (already masked layer-1 inputs,
/// in processing order). `upper_masks[l - 1][t]` masks the input of layer `l`.
pub(crate) fn run_stack(
    tape: &mut Tape<'_>,
    config: &ModelConfig,
    cells: &[CellVars],
    first_inputs: &[Var],
    upper_masks: &[Vec<Var>],
) -> Result<StackVars> {
    if first_inputs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let hidden = config.hidden_size;
    let steps = first_inputs.len();
    let mut outputs: Vec<Vec<Var>> = Vec::with_capacity(cells.len());
    let mut finals = Vec::with_capacity(cells.len());

    for (l, cell) in cells.iter().enumerate() {
        let inputs: Vec<Var> = if l == 0 {
            first_inputs.to_vec()
        } else {
            let below = &outputs[l - 1];
            let masks = &upper_masks[l - 1];
            let mut masked = Vec::with_capacity(steps);
            for t in 0..steps {
                masked.push(tape.mul(below[t], masks[t])?);
            }
            masked
        };

        let residual = config.residual_applies(l);
        let mut h = tape.constant(Tensor::zeros(&[hidden]));
        let mut c = tape.constant(Tensor::zeros(&[hidden]));
        let mut layer_out = Vec::with_capacity(steps);
        for (t, &x) in inputs.iter().enumerate() {
            let (h_raw, c_new) = cell_step_vars(tape, cell, x, h, c, config.output_gate)?;
            let (up, fast) = match config.residual_mode {
                ResidualMode::None => (h_raw, h_raw),
                ResidualMode::VerticalOnly if residual => (tape.add(h_raw, x)?, h_raw),
                ResidualMode::VerticalOnly => (h_raw, h_raw),
                ResidualMode::VerticalAndLateral if residual => {
                    let s = tape.add(h_raw, x)?;
                    (s, s)
                }
                ResidualMode::VerticalAndLateral => (h_raw, h_raw),
                ResidualMode::HorizontalOnly if t > 0 => (h_raw, tape.add(h_raw, h)?),
                ResidualMode::HorizontalOnly => (h_raw, h_raw),
            };
            layer_out.push(up);
            h = fast;
            c = c_new;
        }
        outputs.push(layer_out);
        finals.push((h, c));
    }
    Ok(StackVars { outputs, finals })
}

/// Result of [`stack_forward`].
#[derive(Debug, Clone)]
pub struct StackOutput {
    /// `[layers × T × hidden]`: the value each layer passes upward.
    pub all_h: Tensor,
    pub final_states: Vec<CellState>,
}

impl StackOutput {
    /// Top-layer output at the last step.
    pub fn top_final(&self) -> Tensor {
        let (l, t, h) = (self.all_h.shape()[0], self.all_h.shape()[1], self.all_h.shape()[2]);
        let start = ((l - 1) * t + (t - 1)) * h;
        Tensor::vector(self.all_h.data()[start..start + h].to_vec())
    }
}

fn check_stack(config: &ModelConfig, layers: &[CellWeights], inputs: &Tensor, masks: &[Tensor]) -> Result<()> {
    config.validate()?;
    if layers.len() != config.num_layers {
        return Err(Error::config(
            "num_layers",
            format!("{} layers given, config declares {}", layers.len(), config.num_layers),
        ));
    }
    for (l, cell) in layers.iter().enumerate() {
        cell.check(config.layer_input_width(l), config.hidden_size)?;
    }
    if inputs.rank() != 2 || inputs.cols() != config.embed_dim {
        return Err(Error::dim("stack_forward", inputs.shape(), &[0, config.embed_dim]));
    }
    if inputs.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    if masks.len() != config.num_layers {
        return Err(Error::dim("stack_forward masks", &[masks.len()], &[config.num_layers]));
    }
    for (l, m) in masks.iter().enumerate() {
        let expected = [inputs.rows(), config.layer_input_width(l)];
        if m.shape() != expected {
            return Err(Error::dim("stack_forward masks", m.shape(), &expected));
        }
    }
    Ok(())
}

/// Builds masked per-step layer-1 inputs and per-step upper masks, in the
/// given time order.
pub(crate) fn stage_inputs(
    tape: &mut Tape<'_>,
    inputs: Var,
    masks: &[Var],
    order: &[usize],
) -> Result<(Vec<Var>, Vec<Vec<Var>>)> {
    let masked = tape.mul(inputs, masks[0])?;
    let first = order.iter().map(|&t| tape.row(masked, t)).collect::<Result<Vec<_>>>()?;
    let upper = masks[1..]
        .iter()
        .map(|&m| order.iter().map(|&t| tape.row(m, t)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok((first, upper))
}

/// Runs the stack over `inputs` (`[T × embed_dim]`). `masks[l]` is the
/// `[T × width_l]` dropout mask for layer `l`'s input.
pub fn stack_forward(
    config: &ModelConfig,
    layers: &[CellWeights],
    inputs: &Tensor,
    masks: &[Tensor],
) -> Result<StackOutput> {
    check_stack(config, layers, inputs, masks)?;
    let steps = inputs.rows();
    let mut tape = Tape::new();
    let cells = layers
        .iter()
        .map(|c| CellVars::register(&mut tape, c, config.forget_bias))
        .collect::<Result<Vec<_>>>()?;
    let x = tape.constant_ref(inputs);
    let mask_vars: Vec<Var> = masks.iter().map(|m| tape.constant_ref(m)).collect();
    let order: Vec<usize> = (0..steps).collect();
    let (first, upper) = stage_inputs(&mut tape, x, &mask_vars, &order)?;
    let stack = run_stack(&mut tape, config, &cells, &first, &upper)?;

    let hidden = config.hidden_size;
    let mut all_h = Vec::with_capacity(config.num_layers * steps * hidden);
    for layer in &stack.outputs {
        for &v in layer {
            all_h.extend_from_slice(tape.value(v).data());
        }
    }
    let final_states = stack
        .finals
        .iter()
        .map(|&(h, c)| CellState {
            h: tape.value(h).clone(),
            c: tape.value(c).clone(),
        })
        .collect();
    Ok(StackOutput {
        all_h: Tensor::new(&[config.num_layers, steps, hidden], all_h)?,
        final_states,
    })
}

/// Forward pass plus a pass over the time-reversed sequence, returning
/// `[forward top final ; backward top final]`. Masks stay attached to their
/// sequence positions in both directions. With shared weights, pass
/// `reverse_layers = None`.
pub fn bidirectional_forward(
    config: &ModelConfig,
    layers: &[CellWeights],
    reverse_layers: Option<&[CellWeights]>,
    inputs: &Tensor,
    masks: &[Tensor],
) -> Result<Tensor> {
    if !config.direction.is_bidirectional() {
        return Err(Error::config("direction", "bidirectional_forward needs a bidirectional config"));
    }
    check_stack(config, layers, inputs, masks)?;
    let rev = match (config.direction.shares_weights(), reverse_layers) {
        (true, None) => layers,
        (false, Some(r)) => {
            check_stack(config, r, inputs, masks)?;
            r
        }
        (true, Some(_)) => return Err(Error::config("direction", "shared weights take no reverse layers")),
        (false, None) => return Err(Error::config("direction", "separate weights need reverse layers")),
    };
    let mut tape = Tape::new();
    let fwd_cells = layers
        .iter()
        .map(|c| CellVars::register(&mut tape, c, config.forget_bias))
        .collect::<Result<Vec<_>>>()?;
    let bwd_cells = rev
        .iter()
        .map(|c| CellVars::register(&mut tape, c, config.forget_bias))
        .collect::<Result<Vec<_>>>()?;
    let x = tape.constant_ref(inputs);
    let mask_vars: Vec<Var> = masks.iter().map(|m| tape.constant_ref(m)).collect();
    let combined = run_bidirectional(&mut tape, config, &fwd_cells, &bwd_cells, x, &mask_vars)?;
    Ok(tape.value(combined).clone())
}

pub(crate) fn run_bidirectional(
    tape: &mut Tape<'_>,
    config: &ModelConfig,
    fwd_cells: &[CellVars],
    bwd_cells: &[CellVars],
    inputs: Var,
    masks: &[Var],
) -> Result<Var> {
    let steps = tape.value(inputs).rows();
    let forward_order: Vec<usize> = (0..steps).collect();
    let backward_order: Vec<usize> = (0..steps).rev().collect();
    let (first, upper) = stage_inputs(tape, inputs, masks, &forward_order)?;
    let fwd = run_stack(tape, config, fwd_cells, &first, &upper)?;
    let (first_r, upper_r) = stage_inputs(tape, inputs, masks, &backward_order)?;
    let bwd = run_stack(tape, config, bwd_cells, &first_r, &upper_r)?;
    let f_top = *fwd.outputs.last().and_then(|o| o.last()).expect("nonempty stack");
    let b_top = *bwd.outputs.last().and_then(|o| o.last()).expect("nonempty stack");
    tape.concat(&[f_top, b_top])
}
