mod common;

use auglstm::gradcheck::{grad_check, DEFAULT_STEP};
use auglstm::model::{Classifier, Direction, DropoutMasks, ModelConfig, OutputGate, ResidualMode};
use auglstm::{Rng, Tensor};
use common::{flatten, loss_and_flat_grad};
use proptest::prelude::*;

fn check(cfg: ModelConfig, vocab: usize, len: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed, 77);
    let mut model = Classifier::random(cfg.clone(), vocab, &mut rng).unwrap();
    for t in model.params.tensors_mut() {
        *t = rng.uniform_tensor(t.shape(), 0.4);
    }
    let tokens: Vec<usize> = (0..len).map(|_| rng.below(vocab)).collect();
    let label = rng.below(cfg.num_classes);
    let masks = DropoutMasks::sample(&cfg, len, &mut rng).unwrap();
    let x = flatten(&model.params);
    grad_check(|p: &Tensor| loss_and_flat_grad(&model, p, &tokens, label, &masks), &x, DEFAULT_STEP).unwrap()
}

#[test]
fn separate_bidirectional_gradients() {
    for mode in ResidualMode::ALL {
        for pooling in [false, true] {
            let cfg = ModelConfig {
                residual_mode: mode,
                direction: Direction::SeparateBidirectional,
                pooling,
                pooling_dim: 3,
                input_keep_prob: 0.8,
                ..ModelConfig::baseline(2, 4, 4, 3)
            };
            let err = check(cfg, 7, 5, 3);
            assert!(err < 1e-4, "{mode:?} pooling={pooling}: {err:e}");
        }
    }
}

#[test]
fn mismatched_embed_and_hidden_widths() {
    // Layer-one residuals are skipped when widths differ.
    for mode in ResidualMode::ALL {
        let cfg = ModelConfig {
            residual_mode: mode,
            ..ModelConfig::baseline(3, 4, 6, 2)
        };
        let err = check(cfg, 6, 4, 8);
        assert!(err < 1e-4, "{mode:?}: {err:e}");
    }
}

#[test]
fn single_token_sequence() {
    let cfg = ModelConfig {
        direction: Direction::SharedBidirectional,
        pooling: true,
        pooling_dim: 2,
        ..ModelConfig::baseline(1, 3, 3, 2)
    };
    assert!(check(cfg, 5, 1, 1) < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_configs_match_finite_differences(
        layers in 1usize..4,
        hidden in 2usize..5,
        embed in 2usize..5,
        len in 1usize..5,
        mode in 0usize..4,
        dir in 0usize..3,
        pooling in any::<bool>(),
        tanh_gate in any::<bool>(),
        keep in 0.5f64..1.0,
        seed in 0u64..1000,
    ) {
        let direction = [Direction::Unidirectional, Direction::SharedBidirectional, Direction::SeparateBidirectional][dir];
        let cfg = ModelConfig {
            residual_mode: ResidualMode::ALL[mode],
            direction,
            pooling,
            pooling_dim: 2,
            output_gate: if tanh_gate { OutputGate::Tanh } else { OutputGate::Sigmoid },
            input_keep_prob: keep,
            forget_bias: 1.0,
            ..ModelConfig::baseline(layers, hidden, embed, 3)
        };
        let err = check(cfg, 6, len, seed);
        prop_assert!(err < 1e-4, "relative error {:e}", err);
    }
}
