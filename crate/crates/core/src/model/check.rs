use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::network::{cross_entropy, Network};
use super::params::{init_params, ModelParams};
use crate::audio::FeatureMatrix;
use crate::autodiff::{finite_diff_check, Graph};
use crate::ctc::{ctc_loss, LabelSequence, Vocab};
use crate::error::Result;
use crate::labels::NoiseLabel;

/// Finite-difference step for the model gradient check. Many of the tiny
/// model's gradients are near 1e-8, where round-off in a smaller step swamps
/// the difference; larger steps start crossing the conv clamp's kinks.
pub const GRADCHECK_STEP: f64 = 1e-3;

/// The smallest useful model: one conv layer, two recurrent layers of four
/// units, and a four-symbol output (blank plus `a`, `b`, `c`).
pub fn tiny_config() -> ModelConfig {
    ModelConfig::tiny(9, Vocab::characters("abc").expect("static vocab"))
}

fn flat_values(p: &ModelParams) -> Vec<f64> {
    p.params.iter().flat_map(|x| x.value.data().iter().copied()).collect()
}

fn with_values(base: &ModelParams, flat: &[f64]) -> ModelParams {
    let mut p = base.clone();
    let mut off = 0;
    for param in &mut p.params {
        let n = param.value.numel();
        param.value.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    p
}

/// CTC loss plus the noise classifier's cross-entropy, and the gradient of
/// their sum with respect to every parameter, flattened in layout order.
pub fn joint_loss_and_grad(
    params: &ModelParams,
    features: &FeatureMatrix,
    target: &LabelSequence,
    label: NoiseLabel,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let net = Network::bind(&mut g, params);
    let out = net.forward(&mut g, features)?;
    let ctc = ctc_loss(&mut g, out.log_probs, target, params.config.vocab.blank())?;
    let logits = net.noise_forward(&mut g, out.tapped, None)?;
    let ce = cross_entropy(&mut g, logits, label.index())?;
    let total = g.add(ctc, ce)?;
    g.backward(total)?;
    let grads = net.grads(&g);
    Ok((g.value(total).item(), grads.iter().flat_map(|t| t.data().iter().copied()).collect()))
}

/// Largest relative error between back-propagated and central-difference
/// gradients of the tiny model, over all parameters, for a seeded random
/// model, input, target and noise label.
pub fn tiny_model_gradcheck(seed: u64) -> Result<f64> {
    let cfg = tiny_config();
    let base = init_params(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let frames = rng.gen_range(9..=13);
    let features = FeatureMatrix {
        bins: cfg.input_bins(),
        frames,
        values: (0..cfg.input_bins() * frames).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    };
    let symbols = cfg.vocab.len() - 1;
    let target = LabelSequence((0..2).map(|_| rng.gen_range(1..=symbols)).collect());
    let label = NoiseLabel::from_index(rng.gen_range(0..NoiseLabel::COUNT)).expect("in range");
    finite_diff_check(
        |flat| joint_loss_and_grad(&with_values(&base, flat), &features, &target, label),
        &flat_values(&base),
        GRADCHECK_STEP,
    )
}
