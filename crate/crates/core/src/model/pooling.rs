//! Embed average pooling: a bag-of-words side channel for the classifier head.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::params::Affine;

/// Averages the masked word vectors over time, then applies
/// `tanh(mean · W + b)` followed by `output_mask`.
///
/// `shared_input_mask` must be the layer-1 mask the recurrent stack consumes.
pub fn embed_average_pool(
    vectors: &Tensor,
    shared_input_mask: &Tensor,
    mlp: &Affine,
    output_mask: &Tensor,
) -> Result<Tensor> {
    if vectors.rank() != 2 {
        return Err(Error::dim("embed_average_pool", vectors.shape(), &[0, mlp.w.rows()]));
    }
    if vectors.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    let mut tape = Tape::new();
    let x = tape.constant_ref(vectors);
    let m = tape.constant_ref(shared_input_mask);
    let masked = tape.mul(x, m)?;
    let w = tape.constant_ref(&mlp.w);
    let b = tape.constant_ref(&mlp.b);
    let om = tape.constant_ref(output_mask);
    let out = pool_vars(&mut tape, masked, w, b, om)?;
    Ok(tape.value(out).clone())
}

pub(crate) fn pool_vars(tape: &mut Tape<'_>, masked: Var, w: Var, b: Var, output_mask: Var) -> Result<Var> {
    let mean = tape.mean_rows(masked)?;
    let pre = tape.matmul(mean, w)?;
    let pre = tape.add(pre, b)?;
    let act = tape.tanh(pre)?;
    tape.mul(act, output_mask)
}
