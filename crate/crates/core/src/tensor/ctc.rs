//! Connectionist temporal classification loss.
//!
//! Forward/backward recursions run in log space over the blank-augmented
//! target `b l1 b l2 ... lL b`. The gradient with respect to every input
//! log-probability is computed alongside the loss and replayed on the tape.

use super::graph::Op;
use super::{Graph, Real, Result, Tensor, TensorError, Var};

fn log_add<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum number of frames that can emit `target`.
pub fn ctc_required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `target` under `log_probs: [frames, classes]`
/// together with its gradient with respect to `log_probs`.
pub fn ctc_forward<T: Real>(
    log_probs: &[T],
    frames: usize,
    classes: usize,
    target: &[usize],
    blank: usize,
) -> Result<(T, Vec<T>)> {
    if log_probs.len() != frames * classes || frames == 0 {
        return Err(TensorError::Shape {
            op: "ctc_loss",
            detail: format!("{} values for {frames} frames x {classes} classes", log_probs.len()),
        });
    }
    if blank >= classes {
        return Err(TensorError::Domain { op: "ctc_loss", detail: format!("blank {blank} >= {classes} classes") });
    }
    if let Some(&bad) = target.iter().find(|&&c| c >= classes || c == blank) {
        return Err(TensorError::Domain { op: "ctc_loss", detail: format!("invalid target label {bad}") });
    }
    let required = ctc_required_frames(target);
    if frames < required {
        return Err(TensorError::InfeasibleTarget { frames, required });
    }
    let states: Vec<usize> = std::iter::once(blank).chain(target.iter().flat_map(|&c| [c, blank])).collect();
    let s_len = states.len();
    let lp = |t: usize, c: usize| log_probs[t * classes + c];
    let ninf = T::neg_infinity();
    // a state may be entered by skipping the previous blank when labels differ
    let can_skip = |s: usize| s >= 2 && states[s] != blank && states[s] != states[s - 2];

    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp(0, states[0]);
    if s_len > 1 {
        alpha[1] = lp(0, states[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = if acc == ninf { ninf } else { acc + lp(t, states[s]) };
        }
    }
    let mut beta = vec![ninf; frames * s_len];
    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = lp(frames - 1, states[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(frames - 1, states[s_len - 2]);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, next[s + 2]);
            }
            beta[t * s_len + s] = if acc == ninf { ninf } else { acc + lp(t, states[s]) };
        }
    }
    let tail = &alpha[last..];
    let log_p = if s_len > 1 { log_add(tail[s_len - 1], tail[s_len - 2]) } else { tail[0] };
    if !log_p.is_finite() {
        return Err(TensorError::InfeasibleTarget { frames, required });
    }
    let mut grad = vec![T::zero(); frames * classes];
    let mut per_class = vec![ninf; classes];
    for t in 0..frames {
        per_class.iter_mut().for_each(|v| *v = ninf);
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            per_class[states[s]] = log_add(per_class[states[s]], ab);
        }
        for c in 0..classes {
            if per_class[c] != ninf {
                // alpha and beta both include the emission at t
                grad[t * classes + c] = -(per_class[c] - lp(t, c) - log_p).exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// Loss only; convenience for evaluation code.
pub fn ctc_neg_log_likelihood<T: Real>(
    log_probs: &[T],
    frames: usize,
    classes: usize,
    target: &[usize],
    blank: usize,
) -> Result<T> {
    ctc_forward(log_probs, frames, classes, target, blank).map(|(l, _)| l)
}

impl<T: Real> Graph<T> {
    /// `-ln P(target | log_probs)` for `log_probs: [frames, classes]`.
    pub fn ctc_loss(&mut self, log_probs: Var, target: &[usize], blank: usize) -> Result<Var> {
        let shape = self.shape(log_probs).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::Shape { op: "ctc_loss", detail: format!("expected [T, A+1], got {shape:?}") });
        }
        let (loss, grad) = ctc_forward(self.value(log_probs).data(), shape[0], shape[1], target, blank)?;
        self.push(Tensor::scalar(loss), Op::Ctc { x: log_probs, grad })
    }
}

/// Best-path decoding: argmax per frame, merge repeats, drop blanks.
pub fn ctc_greedy_decode<T: Real>(log_probs: &[T], classes: usize, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in log_probs.chunks(classes) {
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_frames_single_label_uniform() {
        let lp = vec![0.5f64.ln(); 4];
        let loss = ctc_neg_log_likelihood(&lp, 2, 2, &[0], 1).unwrap();
        assert!((loss + 0.75f64.ln()).abs() < 1e-12);
        assert!((loss - 0.28768).abs() < 5e-6);
    }

    #[test]
    fn forced_single_frame() {
        let lp = vec![0.0f64, f64::NEG_INFINITY];
        let loss = ctc_neg_log_likelihood(&lp, 1, 2, &[0], 1).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn repeated_label_needs_separator_frame() {
        let lp = vec![(1.0f64 / 3.0).ln(); 2 * 3];
        let err = ctc_neg_log_likelihood(&lp, 2, 3, &[0, 0], 2).unwrap_err();
        assert_eq!(err, TensorError::InfeasibleTarget { frames: 2, required: 3 });
        assert_eq!(ctc_required_frames(&[0, 0, 1]), 4);
    }

    #[test]
    fn empty_target_is_all_blank_path() {
        let p = [0.2f64, 0.8];
        let lp: Vec<f64> = p.iter().chain(&p).chain(&p).map(|v| v.ln()).collect();
        let loss = ctc_neg_log_likelihood(&lp, 3, 2, &[], 1).unwrap();
        assert!((loss + 3.0 * 0.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn greedy_decode_collapses() {
        // frames argmax: a a blank a b b
        let rows: [[f32; 3]; 6] = [[1., 0., 0.], [1., 0., 0.], [0., 0., 1.], [1., 0., 0.], [0., 1., 0.], [0., 1., 0.]];
        let flat: Vec<f32> = rows.iter().flatten().copied().collect();
        assert_eq!(ctc_greedy_decode(&flat, 3, 2), vec![0, 0, 1]);
    }
}
