//! CTC negative log-likelihood in log space, its adjoint, a brute-force
//! alignment oracle, and greedy decoding.

use crate::diff::{log_sum_exp, Graph, NodeId, Tensor};

use super::ProbeError;

pub const BLANK: usize = 0;

/// Per-frame log-probabilities (`T × V`, row-major) and a label sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcInput {
    pub log_probs: Vec<f64>,
    pub n_frames: usize,
    pub n_classes: usize,
    pub targets: Vec<usize>,
}

impl CtcInput {
    pub fn new(log_probs: Vec<f64>, n_frames: usize, n_classes: usize, targets: Vec<usize>) -> Result<Self, ProbeError> {
        let input = Self {
            log_probs,
            n_frames,
            n_classes,
            targets,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.n_frames == 0 || self.n_classes < 2 || self.log_probs.len() != self.n_frames * self.n_classes {
            return Err(ProbeError::InvalidInput(format!(
                "{} log-probs for {} frames × {} classes",
                self.log_probs.len(),
                self.n_frames,
                self.n_classes
            )));
        }
        for (t, row) in self.log_probs.chunks(self.n_classes).enumerate() {
            let mass: f64 = row.iter().map(|v| v.exp()).sum();
            if (mass - 1.0).abs() > 1e-9 {
                return Err(ProbeError::InvalidInput(format!("row {t} sums to {mass}")));
            }
        }
        check_targets(&self.targets, self.n_classes)
    }
}

fn check_targets(targets: &[usize], n_classes: usize) -> Result<(), ProbeError> {
    if targets.contains(&BLANK) {
        return Err(ProbeError::BlankInTargets);
    }
    if let Some(&bad) = targets.iter().find(|&&l| l >= n_classes) {
        return Err(ProbeError::InvalidInput(format!("label {bad} outside {n_classes} classes")));
    }
    Ok(())
}

/// Fewest frames that can emit `targets`: one per label plus a blank
/// between each adjacent equal pair.
pub fn min_frames(targets: &[usize]) -> usize {
    targets.len() + targets.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Loss and `∂loss/∂log_probs` (minus the per-frame label posteriors).
#[derive(Debug, Clone, PartialEq)]
pub struct CtcResult {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Forward-backward over the blank-interleaved label sequence.
pub fn ctc_forward_backward(log_probs: &[f64], n_frames: usize, n_classes: usize, targets: &[usize]) -> Result<CtcResult, ProbeError> {
    check_targets(targets, n_classes)?;
    let required = min_frames(targets);
    if n_frames < required {
        return Err(ProbeError::InfeasibleLength {
            frames: n_frames,
            required,
        });
    }
    let (t_len, v) = (n_frames, n_classes);
    let s_len = 2 * targets.len() + 1;
    let label = |s: usize| if s.is_multiple_of(2) { BLANK } else { targets[s / 2] };
    // skip transition s-2 -> s allowed for labels differing from the one two back
    let can_skip = |s: usize| s >= 2 && s % 2 == 1 && label(s) != label(s - 2);
    let lp = |t: usize, c: usize| log_probs[t * v + c];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp(0, label(0));
    if s_len > 1 {
        alpha[1] = lp(0, label(1));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut terms = [prev[s], ninf, ninf];
            if s >= 1 {
                terms[1] = prev[s - 1];
            }
            if can_skip(s) {
                terms[2] = prev[s - 2];
            }
            alpha[t * s_len + s] = log_sum_exp(&terms) + lp(t, label(s));
        }
    }

    // beta excludes the emission at t
    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[(t + 1) * s_len + s2] + lp(t + 1, label(s2));
            let mut terms = [next(s), ninf, ninf];
            if s + 1 < s_len {
                terms[1] = next(s + 1);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                terms[2] = next(s + 2);
            }
            beta[t * s_len + s] = log_sum_exp(&terms);
        }
    }

    let end = &alpha[last..last + s_len];
    let log_p = if s_len > 1 {
        log_sum_exp(&end[s_len - 2..])
    } else {
        end[0]
    };
    if !log_p.is_finite() {
        return Err(ProbeError::InfeasibleLength {
            frames: n_frames,
            required,
        });
    }

    let mut grad = vec![0.0; t_len * v];
    for t in 0..t_len {
        for s in 0..s_len {
            let lg = alpha[t * s_len + s] + beta[t * s_len + s] - log_p;
            if lg > ninf {
                grad[t * v + label(s)] -= lg.exp();
            }
        }
    }
    Ok(CtcResult { loss: -log_p, grad })
}

/// `−log p(targets | log_probs)`.
pub fn ctc_loss(input: &CtcInput) -> Result<f64, ProbeError> {
    input.validate()?;
    ctc_forward_backward(&input.log_probs, input.n_frames, input.n_classes, &input.targets).map(|r| r.loss)
}

/// Graph node for the CTC loss of a `[T, V]` log-probability node.
pub fn ctc_loss_node(g: &mut Graph, log_probs: NodeId, targets: &[usize]) -> Result<NodeId, ProbeError> {
    let (t, v) = match *g.shape(log_probs) {
        [t, v] => (t, v),
        ref s => return Err(ProbeError::InvalidInput(format!("CTC expects [T, V], got {s:?}"))),
    };
    let r = ctc_forward_backward(g.value(log_probs).data(), t, v, targets)?;
    let adjoint = Tensor::matrix(t, v, r.grad)?;
    Ok(g.custom_scalar(log_probs, r.loss, adjoint)?)
}

/// Largest alignment count the oracle will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// Collapses repeats then removes blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != BLANK {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

/// Testing oracle: sums the probability of every one of the `V^T` frame
/// labelings that collapses to the targets. Returns `+∞` when none does.
pub fn ctc_brute_force(input: &CtcInput) -> Result<f64, ProbeError> {
    input.validate()?;
    let (t_len, v) = (input.n_frames, input.n_classes);
    let count = (v as u64).checked_pow(t_len as u32).filter(|&c| c <= BRUTE_FORCE_LIMIT);
    let count = count.ok_or(ProbeError::TooLarge { frames: t_len, classes: v })?;
    let mut path = vec![0usize; t_len];
    let mut total = 0.0;
    for code in 0..count {
        let mut c = code;
        let mut logp = 0.0;
        for (t, slot) in path.iter_mut().enumerate() {
            *slot = (c % v as u64) as usize;
            c /= v as u64;
            logp += input.log_probs[t * v + *slot];
        }
        if collapse(&path) == input.targets {
            total += logp.exp();
        }
    }
    Ok(-total.ln())
}

/// Per-frame argmax (ties to the lowest index), collapse, drop blanks.
pub fn greedy_decode(log_probs: &[f64], n_classes: usize) -> Vec<usize> {
    let best: Vec<usize> = log_probs
        .chunks(n_classes)
        .map(|row| {
            let mut arg = 0;
            for (i, &x) in row.iter().enumerate() {
                if x > row[arg] {
                    arg = i;
                }
            }
            arg
        })
        .collect();
    collapse(&best)
}
