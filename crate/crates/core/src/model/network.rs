use super::params::{BiLstmIndex, ModelParams};
use crate::audio::FeatureMatrix;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outputs of the recognition path.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[frames, vocab]` log-probabilities.
    pub log_probs: Var,
    /// `[frames, 2 * hidden]` output of the tapped recurrent layer.
    pub tapped: Var,
}

/// A model's parameters placed on a graph.
pub struct Network<'a> {
    params: &'a ModelParams,
    vars: Vec<Var>,
}

impl<'a> Network<'a> {
    /// Binds every parameter as a trainable leaf.
    pub fn bind(g: &mut Graph, params: &'a ModelParams) -> Self {
        let vars = params.params.iter().map(|p| g.param(p.value.clone())).collect();
        Network { params, vars }
    }

    /// Binds every parameter as a constant, for inference.
    pub fn bind_frozen(g: &mut Graph, params: &'a ModelParams) -> Self {
        let vars = params.params.iter().map(|p| g.constant(p.value.clone())).collect();
        Network { params, vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient for each parameter after `g.backward`, zero where unused.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.vars.iter().map(|&v| g.grad_or_zeros(v)).collect()
    }

    /// Features to per-frame log-probabilities.
    pub fn forward(&self, g: &mut Graph, features: &FeatureMatrix) -> Result<Forward> {
        let cfg = &self.params.config;
        let layout = &self.params.layout;
        if features.bins != cfg.input_bins() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: vec![features.bins, features.frames],
                right: vec![cfg.input_bins()],
            });
        }
        let required = cfg.min_input_frames();
        if features.frames < required {
            return Err(Error::InputTooShort {
                frames: features.frames,
                required,
            });
        }

        let input = Tensor::new(vec![1, features.bins, features.frames], features.values.clone())?;
        let mut x = g.constant(input);
        for (spec, &(w, b)) in cfg.conv.iter().zip(&layout.conv) {
            x = g.conv2d(x, self.vars[w], self.vars[b], (spec.stride_freq, spec.stride_time))?;
            x = g.hardtanh(x, 0.0, cfg.conv_clip)?;
        }
        let mut x = g.channels_to_frames(x)?;

        let mut tapped = None;
        for (l, idx) in layout.recurrent.iter().enumerate() {
            x = self.bilstm(g, x, idx, cfg.hidden_size)?;
            if l == cfg.tap_index {
                tapped = Some(x);
            }
        }
        let (w, b) = layout.output;
        let logits = g.matmul(x, self.vars[w])?;
        let logits = g.add_row(logits, self.vars[b])?;
        Ok(Forward {
            log_probs: g.log_softmax(logits, 1)?,
            tapped: tapped.expect("tap index below layer count"),
        })
    }

    /// Noise-type logits `[1, labels]` from the tapped features. With
    /// `reverse = Some(coef)` the input passes through a gradient reversal.
    pub fn noise_forward(&self, g: &mut Graph, tapped: Var, reverse: Option<f64>) -> Result<Var> {
        let x = match reverse {
            Some(coef) => g.grad_reverse(tapped, coef)?,
            None => tapped,
        };
        let h = self.bilstm(g, x, &self.params.layout.noise_recurrent, self.params.config.head_hidden)?;
        self.pool_and_classify(g, h)
    }

    /// Mean over frames, then linear, tanh, linear.
    pub fn pool_and_classify(&self, g: &mut Graph, seq: Var) -> Result<Var> {
        let frames = g.shape(seq)[0];
        let avg = g.constant(Tensor::full(&[1, frames], 1.0 / frames as f64));
        let pooled = g.matmul(avg, seq)?;
        let [(w0, b0), (w1, b1)] = self.params.layout.noise_linear;
        let z = g.matmul(pooled, self.vars[w0])?;
        let z = g.add_row(z, self.vars[b0])?;
        let z = g.tanh(z)?;
        let z = g.matmul(z, self.vars[w1])?;
        g.add_row(z, self.vars[b1])
    }

    fn bilstm(&self, g: &mut Graph, x: Var, idx: &BiLstmIndex, hidden: usize) -> Result<Var> {
        let fwd = self.lstm(g, x, idx.forward, hidden, false)?;
        let bwd = self.lstm(g, x, idx.backward, hidden, true)?;
        g.concat(&[fwd, bwd], 1)
    }

    /// One LSTM direction with gates ordered (input, forget, cell, output).
    fn lstm(&self, g: &mut Graph, x: Var, [w_ih, w_hh, bias]: [usize; 3], hidden: usize, reverse: bool) -> Result<Var> {
        let frames = g.shape(x)[0];
        let proj = g.matmul(x, self.vars[w_ih])?;
        let proj = g.add_row(proj, self.vars[bias])?;
        let mut state: Option<(Var, Var)> = None;
        let mut outs = Vec::with_capacity(frames);
        for step in 0..frames {
            let t = if reverse { frames - 1 - step } else { step };
            let mut gates = g.slice(proj, 0, t, 1)?;
            if let Some((h, _)) = state {
                let rec = g.matmul(h, self.vars[w_hh])?;
                gates = g.add(gates, rec)?;
            }
            let i = g.slice(gates, 1, 0, hidden)?;
            let i = g.sigmoid(i)?;
            let cand = g.slice(gates, 1, 2 * hidden, hidden)?;
            let cand = g.tanh(cand)?;
            let o = g.slice(gates, 1, 3 * hidden, hidden)?;
            let o = g.sigmoid(o)?;
            let mut c = g.mul(i, cand)?;
            if let Some((_, c_prev)) = state {
                let f = g.slice(gates, 1, hidden, hidden)?;
                let f = g.sigmoid(f)?;
                let kept = g.mul(f, c_prev)?;
                c = g.add(c, kept)?;
            }
            let squashed = g.tanh(c)?;
            let h = g.mul(o, squashed)?;
            outs.push(h);
            state = Some((h, c));
        }
        if reverse {
            outs.reverse();
        }
        g.concat(&outs, 0)
    }
}

/// Negative log-likelihood of `label` under `[1, K]` logits.
pub fn cross_entropy(g: &mut Graph, logits: Var, label: usize) -> Result<Var> {
    let k = g.shape(logits)[1];
    if label >= k {
        return Err(Error::InvalidSymbol {
            index: label,
            vocab: k,
            blank: usize::MAX,
        });
    }
    let lp = g.log_softmax(logits, 1)?;
    let mut onehot = Tensor::zeros(&[1, k]);
    onehot.data_mut()[label] = 1.0;
    let onehot = g.constant(onehot);
    let picked = g.mul(lp, onehot)?;
    let s = g.reduce_sum(picked)?;
    g.scale(s, -1.0)
}

/// Inference without gradients: `(log_probs, tapped)`.
pub fn infer(params: &ModelParams, features: &FeatureMatrix) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let net = Network::bind_frozen(&mut g, params);
    let out = net.forward(&mut g, features)?;
    Ok((g.value(out.log_probs).clone(), g.value(out.tapped).clone()))
}

/// Noise-type posterior logits for one utterance, without gradients.
pub fn infer_noise(params: &ModelParams, features: &FeatureMatrix) -> Result<Tensor> {
    let mut g = Graph::new();
    let net = Network::bind_frozen(&mut g, params);
    let out = net.forward(&mut g, features)?;
    let logits = net.noise_forward(&mut g, out.tapped, None)?;
    Ok(g.value(logits).clone())
}
