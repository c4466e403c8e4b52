use super::config::{effective_lr, TrainConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Momentum buffers plus the schedule position.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Vec<f64>>,
    pub epoch: usize,
    pub eta: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Self {
        OptimizerState {
            velocity: params.params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            epoch: 0,
            eta: cfg.eta0,
        }
    }
}

/// Global L2 norm over all gradient tensors.
pub fn grad_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Clips, accumulates momentum and applies `w -= lr * v` per parameter.
/// Gradients are zeroed afterwards. Non-finite gradients abort the step
/// before anything is modified.
pub fn sgd_step(params: &mut ModelParams, grads: &mut [Tensor], state: &mut OptimizerState, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != params.params.len() || state.velocity.len() != params.params.len() {
        return Err(Error::ShapeMismatch {
            op: "sgd_step",
            left: vec![params.params.len()],
            right: vec![grads.len(), state.velocity.len()],
        });
    }
    for (g, p) in grads.iter().zip(&params.params) {
        if g.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: p.value.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient);
        }
    }
    let scale = match cfg.clip_norm {
        Some(c) => {
            let n = grad_norm(grads);
            if n > c {
                c / n
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    for ((p, g), v) in params.params.iter_mut().zip(grads.iter_mut()).zip(&mut state.velocity) {
        let lr = effective_lr(&p.tag, cfg);
        for ((w, gi), vi) in p.value.data_mut().iter_mut().zip(g.data_mut()).zip(v.iter_mut()) {
            *vi = cfg.momentum * *vi + scale * *gi;
            *w -= lr * *vi;
            *gi = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, tiny_config};
    use crate::trainer::TrainMode;

    fn setup(mode: TrainMode) -> (ModelParams, Vec<Tensor>, TrainConfig) {
        let p = init_params(&tiny_config(), 1).unwrap();
        let grads: Vec<Tensor> = p
            .params
            .iter()
            .enumerate()
            .map(|(i, x)| Tensor::full(x.value.shape(), 0.01 * (i as f64 + 1.0)))
            .collect();
        let mut cfg = TrainConfig::new(mode);
        cfg.momentum = 0.0;
        cfg.clip_norm = None;
        (p, grads, cfg)
    }

    #[test]
    fn plain_sgd_and_zeroing() {
        let (mut p, mut g, cfg) = setup(TrainMode::VanillaDat);
        let before = p.clone();
        let expected: Vec<Tensor> = g.clone();
        let mut st = OptimizerState::new(&p, &cfg);
        sgd_step(&mut p, &mut g, &mut st, &cfg).unwrap();
        for ((a, b), gr) in before.params.iter().zip(&p.params).zip(&expected) {
            for ((x, y), d) in a.value.data().iter().zip(b.value.data()).zip(gr.data()) {
                assert_eq!(*y, x - cfg.base_lr * d);
            }
        }
        assert!(g.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn soft_freeze_halves_member_updates() {
        let (mut p0, g0, cfg) = setup(TrainMode::SoftFreezeDat);
        // From zero weights the update is the parameter itself, so no
        // subtraction rounding hides the ratio.
        for p in &mut p0.params {
            p.value.data_mut().fill(0.0);
        }
        let full = TrainConfig {
            mode: TrainMode::VanillaDat,
            ..cfg.clone()
        };
        let run = |cfg: &TrainConfig| {
            let mut p = p0.clone();
            let mut g = g0.clone();
            let mut st = OptimizerState::new(&p, cfg);
            sgd_step(&mut p, &mut g, &mut st, cfg).unwrap();
            p
        };
        let soft = run(&cfg);
        let plain = run(&full);
        for (s, f) in soft.params.iter().zip(&plain.params) {
            for (ds, df) in s.value.data().iter().zip(f.value.data()) {
                assert_ne!(*df, 0.0);
                if s.tag.soft_freeze {
                    assert_eq!(*ds, 0.5 * df, "{}", s.name);
                } else {
                    assert_eq!(ds, df);
                }
            }
        }
    }

    #[test]
    fn clipping_scales_to_the_bound() {
        let (mut p, mut g, mut cfg) = setup(TrainMode::VanillaDat);
        let n = grad_norm(&g);
        cfg.clip_norm = Some(n / 2.0);
        let before = p.clone();
        let g0 = g.clone();
        let mut st = OptimizerState::new(&p, &cfg);
        sgd_step(&mut p, &mut g, &mut st, &cfg).unwrap();
        for ((a, b), gr) in before.params.iter().zip(&p.params).zip(&g0) {
            for ((x, y), d) in a.value.data().iter().zip(b.value.data()).zip(gr.data()) {
                assert!(((x - y) - cfg.base_lr * 0.5 * d).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn momentum_accumulates() {
        let (mut p, g, mut cfg) = setup(TrainMode::VanillaDat);
        cfg.momentum = 0.9;
        let w0 = p.params[0].value.data()[0];
        let g0 = g[0].data()[0];
        let mut st = OptimizerState::new(&p, &cfg);
        sgd_step(&mut p, &mut g.clone(), &mut st, &cfg).unwrap();
        sgd_step(&mut p, &mut g.clone(), &mut st, &cfg).unwrap();
        let expected = w0 - cfg.base_lr * g0 - cfg.base_lr * (0.9 * g0 + g0);
        assert!((p.params[0].value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn nan_aborts_without_changes() {
        let (mut p, mut g, cfg) = setup(TrainMode::VanillaDat);
        g[3].data_mut()[0] = f64::NAN;
        let before = p.clone();
        let mut st = OptimizerState::new(&p, &cfg);
        assert!(matches!(sgd_step(&mut p, &mut g, &mut st, &cfg), Err(Error::NonFiniteGradient)));
        assert_eq!(p, before);
    }
}
