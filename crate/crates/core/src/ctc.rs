//! Connectionist Temporal Classification: the sequence loss, an exhaustive
//! reference implementation, and greedy decoding.
//!
//! Alignments run over the extended label sequence `_ l1 _ l2 _ ... lN _`
//! (blank `_`). A frame may stay on its state, advance by one, or skip a
//! blank when the two labels around it differ.

use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Output symbols of the acoustic model, including the blank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
    blank: usize,
    /// Joins decoded symbols; empty means symbols are single characters.
    separator: String,
}

impl Vocab {
    pub fn new(symbols: Vec<String>, blank: usize, separator: impl Into<String>) -> Result<Self> {
        if blank >= symbols.len() {
            return Err(Error::InvalidVocab(format!("blank index {blank} out of range")));
        }
        if symbols.len() < 2 {
            return Err(Error::InvalidVocab("need the blank and at least one symbol".into()));
        }
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(Error::InvalidVocab(format!("duplicate symbol {s:?}")));
            }
        }
        let separator = separator.into();
        if separator.is_empty() && symbols.iter().enumerate().any(|(i, s)| i != blank && s.chars().count() != 1) {
            return Err(Error::InvalidVocab("character vocabularies need single-character symbols".into()));
        }
        Ok(Vocab {
            symbols,
            blank,
            separator,
        })
    }

    /// Blank `_` at index 0 followed by one symbol per character.
    pub fn characters(chars: &str) -> Result<Self> {
        let symbols = std::iter::once("_".to_string())
            .chain(chars.chars().map(String::from))
            .collect();
        Vocab::new(symbols, 0, "")
    }

    /// Blank `_` at index 0 followed by whitespace-delimited word symbols.
    pub fn words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let symbols = std::iter::once("_".to_string())
            .chain(words.iter().map(|w| w.as_ref().to_string()))
            .collect();
        Vocab::new(symbols, 0, " ")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Non-blank symbols in index order.
    pub fn labels(&self) -> impl Iterator<Item = (usize, &str)> {
        self.symbols
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.blank)
            .map(|(i, s)| (i, s.as_str()))
    }

    pub fn encode(&self, text: &str) -> Result<LabelSequence> {
        let lookup = |tok: &str| {
            self.labels()
                .find(|(_, s)| *s == tok)
                .map(|(i, _)| i)
                .ok_or_else(|| Error::UnknownSymbol(tok.to_string()))
        };
        let labels = if self.separator.is_empty() {
            let mut buf = [0u8; 4];
            text.chars()
                .map(|c| lookup(c.encode_utf8(&mut buf)))
                .collect::<Result<Vec<_>>>()?
        } else {
            text.split_whitespace().map(lookup).collect::<Result<Vec<_>>>()?
        };
        Ok(LabelSequence(labels))
    }

    pub fn render(&self, labels: &LabelSequence) -> String {
        labels
            .0
            .iter()
            .map(|&i| self.symbols[i].as_str())
            .collect::<Vec<_>>()
            .join(&self.separator)
    }
}

/// Symbol indices of a transcript, blanks excluded.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSequence(pub Vec<usize>);

impl LabelSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fewest frames any alignment needs: one per label plus a blank between
    /// each pair of equal neighbours.
    pub fn min_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn validate(target: &LabelSequence, frames: usize, vocab: usize, blank: usize) -> Result<()> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    if let Some(&bad) = target.0.iter().find(|&&l| l >= vocab || l == blank) {
        return Err(Error::InvalidSymbol {
            index: bad,
            vocab,
            blank,
        });
    }
    let required = target.min_frames();
    if frames < required {
        return Err(Error::InfeasibleTarget {
            target_len: target.len(),
            required,
            frames,
        });
    }
    Ok(())
}

/// Negative log-likelihood of `target` under per-frame log-probabilities
/// (`[frames, vocab]`) together with its gradient with respect to them.
pub fn ctc_forward_backward(
    log_probs: &Tensor,
    target: &LabelSequence,
    blank: usize,
) -> Result<(f64, Tensor)> {
    let (frames, vocab) = match log_probs.shape() {
        &[t, v] => (t, v),
        s => {
            return Err(Error::ShapeMismatch {
                op: "ctc_loss",
                left: s.to_vec(),
                right: vec![0, 0],
            })
        }
    };
    validate(target, frames, vocab, blank)?;

    let ext: Vec<usize> = std::iter::once(blank)
        .chain(target.0.iter().flat_map(|&l| [l, blank]))
        .collect();
    let states = ext.len();
    let lp = |t: usize, s: usize| log_probs.get2(t, ext[s]);
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let neg_inf = f64::NEG_INFINITY;
    let mut alpha = vec![neg_inf; frames * states];
    alpha[0] = lp(0, 0);
    alpha[1] = lp(0, 1);
    for t in 1..frames {
        for s in 0..states {
            let prev = &alpha[(t - 1) * states..t * states];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[t * states + s] = if acc == neg_inf { neg_inf } else { acc + lp(t, s) };
        }
    }
    let last = (frames - 1) * states;
    let log_likelihood = log_add(alpha[last + states - 1], alpha[last + states - 2]);
    if log_likelihood == neg_inf {
        return Err(Error::ZeroProbability);
    }

    // beta[t][s]: log-probability of finishing from state s at frame t,
    // excluding frame t's own emission.
    let mut beta = vec![neg_inf; frames * states];
    beta[last + states - 1] = 0.0;
    beta[last + states - 2] = 0.0;
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let next = (t + 1) * states;
            let mut acc = beta[next + s] + lp(t + 1, s);
            if s + 1 < states {
                acc = log_add(acc, beta[next + s + 1] + lp(t + 1, s + 1));
            }
            if s + 2 < states && can_skip(s + 2) {
                acc = log_add(acc, beta[next + s + 2] + lp(t + 1, s + 2));
            }
            beta[t * states + s] = acc;
        }
    }

    let mut grad = vec![0.0; frames * vocab];
    let mut occupancy = vec![neg_inf; vocab];
    for t in 0..frames {
        occupancy.fill(neg_inf);
        for s in 0..states {
            let k = ext[s];
            occupancy[k] = log_add(occupancy[k], alpha[t * states + s] + beta[t * states + s]);
        }
        for (k, occ) in occupancy.iter().enumerate() {
            if *occ != neg_inf {
                grad[t * vocab + k] = -(occ - log_likelihood).exp();
            }
        }
    }
    Ok((-log_likelihood, Tensor::new(vec![frames, vocab], grad)?))
}

struct CtcOp {
    grad: Tensor,
}

impl CustomOp for CtcOp {
    fn name(&self) -> &'static str {
        "ctc_loss"
    }

    fn backward(&self, grad_out: &Tensor, _inputs: &[&Tensor], _output: &Tensor) -> Vec<Option<Tensor>> {
        let scale = grad_out.item();
        let data = self.grad.data().iter().map(|g| g * scale).collect();
        vec![Some(Tensor::new(self.grad.shape().to_vec(), data).expect("ctc grad shape"))]
    }
}

/// CTC loss node over `log_probs` (`[frames, vocab]` rows of
/// log-distributions).
pub fn ctc_loss(g: &mut Graph, log_probs: Var, target: &LabelSequence, blank: usize) -> Result<Var> {
    let (loss, grad) = ctc_forward_backward(g.value(log_probs), target, blank)?;
    g.custom(Box::new(CtcOp { grad }), vec![log_probs], Tensor::scalar(loss))
}

/// Reference CTC loss by enumerating all `V^T` frame paths.
pub fn ctc_brute_force(log_probs: &Tensor, target: &LabelSequence, blank: usize) -> Result<f64> {
    let (frames, vocab) = (log_probs.rows(), log_probs.cols());
    if frames > 6 || vocab > 4 {
        return Err(Error::EnumerationBound { frames, vocab });
    }
    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank) == target.0 {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &k)| log_probs.get2(t, k))
                .sum::<f64>()
                .exp();
        }
        // Odometer increment over the V^T paths.
        let mut pos = 0;
        while pos < frames && path[pos] == vocab - 1 {
            path[pos] = 0;
            pos += 1;
        }
        if pos == frames {
            break;
        }
        path[pos] += 1;
    }
    if total == 0.0 {
        return Err(Error::ZeroProbability);
    }
    Ok(-total.ln())
}

/// Merges repeats, then drops blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Per-frame argmax (ties go to the lowest index), collapsed.
pub fn greedy_labels(log_probs: &Tensor, blank: usize) -> LabelSequence {
    let best: Vec<usize> = (0..log_probs.rows())
        .map(|t| {
            let row = log_probs.row(t);
            let mut arg = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = k;
                }
            }
            arg
        })
        .collect();
    LabelSequence(collapse(&best, blank))
}

pub fn greedy_decode(log_probs: &Tensor, vocab: &Vocab) -> String {
    vocab.render(&greedy_labels(log_probs, vocab.blank()))
}
