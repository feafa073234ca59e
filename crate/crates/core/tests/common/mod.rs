#![allow(dead_code)]

use auglstm::data::{gen_synthetic, LabeledSequence, SyntheticTask};
use auglstm::model::{Classifier, ClassifierParams, DropoutMasks, ModelConfig};
use auglstm::{Result, Tensor};

/// Every parameter, embedding first, as one flat vector.
pub fn flatten(params: &ClassifierParams) -> Tensor {
    Tensor::vector(params.tensors().iter().flat_map(|t| t.data().iter().copied()).collect())
}

pub fn unflatten(template: &ClassifierParams, flat: &Tensor) -> ClassifierParams {
    let mut p = template.clone();
    let mut offset = 0;
    for t in p.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat.data()[offset..offset + n]);
        offset += n;
    }
    assert_eq!(offset, flat.len());
    p
}

/// Loss and flattened analytic gradient at `flat`.
pub fn loss_and_flat_grad(
    model: &Classifier,
    flat: &Tensor,
    tokens: &[usize],
    label: usize,
    masks: &DropoutMasks,
) -> Result<(f64, Tensor)> {
    let m = Classifier {
        config: model.config.clone(),
        params: unflatten(&model.params, flat),
    };
    let (loss, _, g) = m.loss_and_grads(tokens, label, masks)?;
    let emb = g.dense_embedding(m.params.vocab_size(), m.config.embed_dim);
    let mut data = emb.into_data();
    for t in &g.dense {
        data.extend_from_slice(t.data());
    }
    Ok((loss, Tensor::vector(data)))
}

pub fn synthetic(task: SyntheticTask, n: usize, seq_len: usize, vocab: usize, classes: usize, seed: u64) -> Vec<LabeledSequence> {
    gen_synthetic(task, n, seq_len, vocab, classes, seed).expect("valid generator arguments")
}

pub fn small_config(layers: usize, hidden: usize, embed: usize, classes: usize) -> ModelConfig {
    ModelConfig::baseline(layers, hidden, embed, classes)
}
