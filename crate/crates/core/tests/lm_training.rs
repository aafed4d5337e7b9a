//! Training behaviour of the token model beyond the memorization criterion.

mod common;

use common::{toy_corpus, toy_lm_config};
use vocalmotion::lm::{train_lm, LMConfig, LmTrainOptions};
use vocalmotion::motion::smooth;
use vocalmotion::tokens::VocabLayout;

#[test]
fn random_labels_are_not_learned() {
    let layout = VocabLayout::default();
    let corpus = toy_corpus(&layout, 1);
    let cfg = LMConfig {
        epochs: 100,
        ..toy_lm_config()
    };
    let opts = LmTrainOptions {
        label_noise: true,
        ..LmTrainOptions::default()
    };
    let (_, losses) = train_lm(&corpus, &layout, &cfg, &opts).unwrap();
    let s = smooth(&losses, 20);
    let last = *s.last().unwrap();
    assert!(last >= 0.9 * losses[0], "{} -> {last}", losses[0]);
}
