use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::Result;

/// Which optimiser group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Conv layers and recurrent layers up to and including the tap.
    FeatureExtractor,
    /// Recurrent layers past the tap and the output layer.
    Recognition,
    NoiseClassifier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerId {
    Conv(usize),
    Recurrent(usize),
    Output,
    NoiseRecurrent,
    NoiseLinear(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamTag {
    pub group: ParamGroup,
    pub layer: LayerId,
    /// Trained at a reduced rate when soft freezing is on.
    pub soft_freeze: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub tag: ParamTag,
    pub value: Tensor,
}

/// Shape and init scale of one parameter, before values exist.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub tag: ParamTag,
    pub shape: Vec<usize>,
    /// Uniform init half-width; zero for biases.
    pub init_scale: f64,
}

/// Positions of each layer's tensors in the flat parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    /// (weight, bias) per conv layer.
    pub conv: Vec<(usize, usize)>,
    /// Main recurrent stack, one entry per layer.
    pub recurrent: Vec<BiLstmIndex>,
    pub output: (usize, usize),
    pub noise_recurrent: BiLstmIndex,
    pub noise_linear: [(usize, usize); 2],
}

/// (w_ih, w_hh, bias) for the forward and backward directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiLstmIndex {
    pub forward: [usize; 3],
    pub backward: [usize; 3],
}

fn spec(specs: &mut Vec<ParamSpec>, name: String, tag: ParamTag, shape: Vec<usize>, fan_in: usize) -> usize {
    let init_scale = if fan_in == 0 { 0.0 } else { 1.0 / (fan_in as f64).sqrt() };
    specs.push(ParamSpec {
        name,
        tag,
        shape,
        init_scale,
    });
    specs.len() - 1
}

fn bilstm_specs(specs: &mut Vec<ParamSpec>, prefix: &str, tag: ParamTag, input: usize, hidden: usize) -> BiLstmIndex {
    let mut dir = |d: &str| {
        [
            spec(specs, format!("{prefix}.{d}.w_ih"), tag, vec![input, 4 * hidden], hidden),
            spec(specs, format!("{prefix}.{d}.w_hh"), tag, vec![hidden, 4 * hidden], hidden),
            spec(specs, format!("{prefix}.{d}.bias"), tag, vec![4 * hidden], 0),
        ]
    };
    let forward = dir("fwd");
    let backward = dir("bwd");
    BiLstmIndex { forward, backward }
}

/// Parameter list for `cfg`, in a fixed order.
pub fn layout(cfg: &ModelConfig) -> Result<(Vec<ParamSpec>, Layout)> {
    cfg.validate()?;
    let mut specs = Vec::new();
    let soft_from = cfg.n_recurrent.saturating_sub(2);
    let tag = |group, layer, soft_freeze| ParamTag {
        group,
        layer,
        soft_freeze,
    };

    let mut conv = Vec::new();
    let mut c_in = 1;
    for (i, c) in cfg.conv.iter().enumerate() {
        let t = tag(ParamGroup::FeatureExtractor, LayerId::Conv(i), false);
        let fan_in = c_in * c.kernel_freq * c.kernel_time;
        let w = spec(
            &mut specs,
            format!("conv{i}.weight"),
            t,
            vec![c.channels, c_in, c.kernel_freq, c.kernel_time],
            fan_in,
        );
        let b = spec(&mut specs, format!("conv{i}.bias"), t, vec![c.channels], 0);
        conv.push((w, b));
        c_in = c.channels;
    }

    let h = cfg.hidden_size;
    let mut width = cfg.frame_width().expect("validated");
    let mut recurrent = Vec::new();
    for l in 0..cfg.n_recurrent {
        let group = if l <= cfg.tap_index {
            ParamGroup::FeatureExtractor
        } else {
            ParamGroup::Recognition
        };
        let t = tag(group, LayerId::Recurrent(l), l >= soft_from);
        recurrent.push(bilstm_specs(&mut specs, &format!("rnn{l}"), t, width, h));
        width = 2 * h;
    }

    let t = tag(ParamGroup::Recognition, LayerId::Output, true);
    let v = cfg.vocab.len();
    let output = (
        spec(&mut specs, "output.weight".into(), t, vec![2 * h, v], 2 * h),
        spec(&mut specs, "output.bias".into(), t, vec![v], 0),
    );

    let t = tag(ParamGroup::NoiseClassifier, LayerId::NoiseRecurrent, false);
    let noise_recurrent = bilstm_specs(&mut specs, "noise.rnn", t, 2 * h, cfg.head_hidden);
    let hn = 2 * cfg.head_hidden;
    let t0 = tag(ParamGroup::NoiseClassifier, LayerId::NoiseLinear(0), false);
    let t1 = tag(ParamGroup::NoiseClassifier, LayerId::NoiseLinear(1), false);
    let noise_linear = [
        (
            spec(&mut specs, "noise.lin0.weight".into(), t0, vec![hn, cfg.head_linear], hn),
            spec(&mut specs, "noise.lin0.bias".into(), t0, vec![cfg.head_linear], 0),
        ),
        (
            spec(
                &mut specs,
                "noise.lin1.weight".into(),
                t1,
                vec![cfg.head_linear, cfg.n_noise_labels],
                cfg.head_linear,
            ),
            spec(&mut specs, "noise.lin1.bias".into(), t1, vec![cfg.n_noise_labels], 0),
        ),
    ];

    Ok((
        specs,
        Layout {
            conv,
            recurrent,
            output,
            noise_recurrent,
            noise_linear,
        },
    ))
}

/// A configuration together with its tagged parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    pub layout: Layout,
}

/// Weights uniform in `±1/sqrt(fan_in)` (`±1/sqrt(hidden)` for LSTM
/// weights), biases zero.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let (specs, layout) = layout(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = specs
        .into_iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            let data = if s.init_scale == 0.0 {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.gen_range(-s.init_scale..=s.init_scale)).collect()
            };
            Param {
                name: s.name,
                tag: s.tag,
                value: Tensor::new(s.shape, data).expect("shape matches data"),
            }
        })
        .collect();
    Ok(ModelParams {
        config: cfg.clone(),
        params,
        layout,
    })
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn values(&self) -> Vec<&Tensor> {
        self.params.iter().map(|p| &p.value).collect()
    }
}

/// Parameter indices per optimiser group.
pub fn param_groups(params: &ModelParams) -> BTreeMap<ParamGroup, Vec<usize>> {
    let mut groups: BTreeMap<ParamGroup, Vec<usize>> = BTreeMap::new();
    for (i, p) in params.params.iter().enumerate() {
        groups.entry(p.tag.group).or_default().push(i);
    }
    groups
}
