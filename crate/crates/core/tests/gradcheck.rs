//! Central finite differences at f64 against the tape's analytic gradients,
//! and an exhaustive alignment oracle for the CTC loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scribe_core::tensor::{
    ctc_neg_log_likelihood, ctc_required_frames, Graph, Padding, ParamStore, Reduction, Result, Tensor, TensorError,
    Var,
};

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;
const CASES: u64 = 20;
const MAX_PROBES: usize = 40;

type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

fn uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Values at least `gap` apart, shuffled, so kinks stay out of reach of `H`.
fn spread(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) * gap + gap / 4.0).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Reduces any output to a scalar with fixed pseudo-random weights.
fn project(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    if g.shape(out) == [1] {
        return Ok(out);
    }
    let shape = g.shape(out).to_vec();
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(0xfeed), &shape);
    let w = g.constant(w);
    let m = g.mul(out, w)?;
    g.sum(m)
}

fn loss_value(store: &ParamStore<f64>, build: &Build) -> f64 {
    let mut g = Graph::training();
    let vars: Vec<Var> = store.ids().map(|id| g.param(store, id)).collect();
    let out = build(&mut g, &vars).expect("forward");
    let l = project(&mut g, out).expect("projection");
    g.value(l).item()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Worst relative error between analytic and numeric gradients over all inputs.
fn gradcheck(inputs: Vec<Tensor<f64>>, build: &Build, rng: &mut impl Rng) -> f64 {
    let mut store = ParamStore::new();
    for (i, t) in inputs.into_iter().enumerate() {
        store.add(format!("x{i}"), t).unwrap();
    }
    let mut g = Graph::training();
    let vars: Vec<Var> = store.ids().map(|id| g.param(&store, id)).collect();
    let out = build(&mut g, &vars).expect("forward");
    let loss = project(&mut g, out).unwrap();
    let grads = g.backward(loss).expect("backward");
    let mut worst = 0.0f64;
    for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec()));
        let n = store.get(id).numel();
        let mut probes: Vec<usize> = (0..n).collect();
        if n > MAX_PROBES {
            probes.shuffle(rng);
            probes.truncate(MAX_PROBES);
        }
        for i in probes {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + H;
            let up = loss_value(&store, build);
            store.get_mut(id).data_mut()[i] = orig - H;
            let down = loss_value(&store, build);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

fn run_cases(name: &str, mut case: impl FnMut(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>)) {
    let mut worst = 0.0f64;
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + name.len() as u64);
        let (inputs, build) = case(&mut rng);
        let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
        let err = gradcheck(inputs, &*build, &mut rng);
        assert!(err < TOL, "{name}: relative error {err:e} on shapes {shapes:?} (seed {seed})");
        worst = worst.max(err);
    }
    eprintln!("{name}: worst relative error {worst:.2e} over {CASES} shapes");
}

fn dims(rng: &mut impl Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

pub fn matmul_and_linear() {
    run_cases("matmul", |rng| {
        let (m, k, n) = (dims(rng, 1, 5), dims(rng, 1, 5), dims(rng, 1, 5));
        (
            vec![uniform(rng, &[m, k]), uniform(rng, &[k, n]), uniform(rng, &[n])],
            Box::new(|g, x| g.linear(x[0], x[1], Some(x[2]))),
        )
    });
}

pub fn embedding_lookup() {
    run_cases("embedding", |rng| {
        let (v, d, len) = (dims(rng, 1, 6), dims(rng, 1, 5), dims(rng, 1, 7));
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..v)).collect();
        (vec![uniform(rng, &[v, d])], Box::new(move |g, x| g.embedding(x[0], &ids)))
    });
}

pub fn softmax_and_log_softmax() {
    run_cases("softmax", |rng| {
        let shape = [dims(rng, 1, 4), dims(rng, 1, 6)];
        (vec![uniform(rng, &shape)], Box::new(|g, x| g.softmax(x[0])))
    });
    run_cases("log_softmax", |rng| {
        let shape = [dims(rng, 1, 4), dims(rng, 1, 6)];
        (vec![uniform(rng, &shape)], Box::new(|g, x| g.log_softmax(x[0])))
    });
}

pub fn normalizations() {
    run_cases("layer_norm", |rng| {
        let (r, d) = (dims(rng, 1, 4), dims(rng, 4, 8));
        (
            vec![spread(rng, &[r, d], 0.2), uniform(rng, &[d]), uniform(rng, &[d])],
            Box::new(|g, x| g.layer_norm(x[0], x[1], x[2])),
        )
    });
    run_cases("instance_norm", |rng| {
        let (n, c, h, w) = (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 2, 4), dims(rng, 2, 4));
        (
            vec![spread(rng, &[n, c, h, w], 0.3), uniform(rng, &[c]), uniform(rng, &[c])],
            Box::new(|g, x| g.instance_norm(x[0], x[1], x[2])),
        )
    });
}

pub fn activations() {
    run_cases("relu", |rng| {
        let shape = [dims(rng, 1, 4), dims(rng, 1, 6)];
        (vec![spread(rng, &shape, 0.05)], Box::new(|g, x| g.relu(x[0])))
    });
    run_cases("gelu", |rng| {
        let shape = [dims(rng, 1, 4), dims(rng, 1, 6)];
        (vec![uniform(rng, &shape)], Box::new(|g, x| g.gelu(x[0])))
    });
    run_cases("dropout", |rng| {
        let shape = [dims(rng, 1, 4), dims(rng, 1, 6)];
        let seed = rng.gen();
        (vec![uniform(rng, &shape)], Box::new(move |g, x| g.dropout(x[0], 0.3, &mut ChaCha8Rng::seed_from_u64(seed))))
    });
}

pub fn elementwise_and_reductions() {
    run_cases("add_mul_scale", |rng| {
        let shape = [dims(rng, 1, 4), dims(rng, 1, 5)];
        (
            vec![uniform(rng, &shape), uniform(rng, &shape)],
            Box::new(|g, x| {
                let s = g.add(x[0], x[1])?;
                let p = g.mul(s, x[1])?;
                g.scale(p, 1.7)
            }),
        )
    });
    run_cases("sum_mean", |rng| {
        let shape = [dims(rng, 1, 4), dims(rng, 1, 5)];
        (
            vec![uniform(rng, &shape)],
            Box::new(|g, x| {
                let sq = g.mul(x[0], x[0])?;
                let m = g.mean(sq)?;
                let s = g.sum(x[0])?;
                g.mul(m, s)
            }),
        )
    });
}

pub fn layout_ops() {
    run_cases("concat", |rng| {
        let rank = dims(rng, 1, 3);
        let axis = rng.gen_range(0..rank);
        let base: Vec<usize> = (0..rank).map(|_| dims(rng, 1, 3)).collect();
        let mut other = base.clone();
        other[axis] = dims(rng, 1, 3);
        (vec![uniform(rng, &base), uniform(rng, &other)], Box::new(move |g, x| g.concat(&[x[0], x[1]], axis)))
    });
    run_cases("reshape_permute", |rng| {
        let shape = [dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3)];
        let mut axes = vec![0, 1, 2];
        axes.shuffle(rng);
        let flat = shape.iter().product::<usize>();
        (
            vec![uniform(rng, &shape)],
            Box::new(move |g, x| {
                let p = g.permute(x[0], &axes)?;
                g.reshape(p, vec![flat])
            }),
        )
    });
    run_cases("adaptive_max_pool_vertical", |rng| {
        let shape = [dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 4)];
        (vec![spread(rng, &shape, 0.05)], Box::new(|g, x| g.adaptive_max_pool_vertical(x[0])))
    });
}

pub fn cross_entropy_with_ignore() {
    run_cases("cross_entropy", |rng| {
        let (n, v) = (dims(rng, 1, 5), dims(rng, 2, 6));
        let ignore = rng.gen_range(0..v);
        let mut targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();
        targets[0] = (ignore + 1) % v;
        let reduction = if rng.gen() { Reduction::Mean } else { Reduction::Sum };
        (vec![uniform(rng, &[n, v])], Box::new(move |g, x| g.cross_entropy(x[0], &targets, Some(ignore), reduction)))
    });
}

fn conv_case(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize, usize, usize, (usize, usize), Padding) {
    let k = [1, 2, 3][rng.gen_range(0..3)];
    let padding = if rng.gen() { Padding::Same } else { Padding::Valid };
    let (h, w) = (dims(rng, k, 6), dims(rng, k, 6));
    let stride = (dims(rng, 1, 2), dims(rng, 1, 2));
    (dims(rng, 1, 2), dims(rng, 1, 3), dims(rng, 1, 3), h, w, k, stride, padding)
}

pub fn conv2d_gradients() {
    run_cases("conv2d", |rng| {
        let (n, cin, cout, h, w, k, stride, padding) = conv_case(rng);
        (
            vec![uniform(rng, &[n, cin, h, w]), uniform(rng, &[cout, cin, k, k]), uniform(rng, &[cout])],
            Box::new(move |g, x| g.conv2d(x[0], x[1], Some(x[2]), stride, padding)),
        )
    });
    // the reference shape: one image, two channels, 5x5
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![uniform(&mut rng, &[1, 2, 5, 5]), uniform(&mut rng, &[3, 2, 3, 3])];
    let err = gradcheck(inputs, &|g, x| g.conv2d(x[0], x[1], None, (1, 1), Padding::Same), &mut rng);
    assert!(err < TOL, "{err:e}");
}

pub fn depthwise_and_separable_gradients() {
    run_cases("depthwise_conv2d", |rng| {
        let (n, c, _, h, w, k, stride, padding) = conv_case(rng);
        (
            vec![uniform(rng, &[n, c, h, w]), uniform(rng, &[c, 1, k, k]), uniform(rng, &[c])],
            Box::new(move |g, x| g.depthwise_conv2d(x[0], x[1], Some(x[2]), stride, padding)),
        )
    });
    run_cases("depthwise_separable_conv2d", |rng| {
        let (n, cin, cout, h, w, k, stride, padding) = conv_case(rng);
        (
            vec![
                uniform(rng, &[n, cin, h, w]),
                uniform(rng, &[cin, 1, k, k]),
                uniform(rng, &[cin]),
                uniform(rng, &[cout, cin, 1, 1]),
                uniform(rng, &[cout]),
            ],
            Box::new(move |g, x| {
                g.depthwise_separable_conv2d(x[0], x[1], Some(x[2]), x[3], Some(x[4]), stride, padding)
            }),
        )
    });
}

pub fn attention_gradients() {
    run_cases("attention", |rng| {
        let heads = dims(rng, 1, 3);
        let d = heads * dims(rng, 1, 3);
        let causal = rng.gen();
        let lq = dims(rng, 1, 4);
        let lk = if causal { lq + rng.gen_range(0..3) } else { dims(rng, 1, 5) };
        (
            vec![uniform(rng, &[lq, d]), uniform(rng, &[lk, d]), uniform(rng, &[lk, d])],
            Box::new(move |g, x| g.attention(x[0], x[1], x[2], heads, causal)),
        )
    });
}

pub fn ctc_gradients() {
    run_cases("ctc_loss", |rng| {
        let classes = dims(rng, 2, 4);
        let blank = rng.gen_range(0..classes);
        let labels: Vec<usize> = (0..classes).filter(|&c| c != blank).collect();
        let len = dims(rng, 0, 3);
        let target: Vec<usize> = (0..len).map(|_| labels[rng.gen_range(0..labels.len())]).collect();
        let frames = ctc_required_frames(&target).max(1) + rng.gen_range(0..3);
        (
            vec![uniform(rng, &[frames, classes])],
            Box::new(move |g, x| {
                let lp = g.log_softmax(x[0])?;
                g.ctc_loss(lp, &target, blank)
            }),
        )
    });
}

pub fn composite_conv_norm_dense_cross_entropy() {
    run_cases("composite", |rng| {
        let (cin, c, h, w, v) = (dims(rng, 1, 2), dims(rng, 2, 3), dims(rng, 3, 6), dims(rng, 3, 6), dims(rng, 2, 5));
        let ho = h.div_ceil(2);
        let targets: Vec<usize> = (0..c * ho).map(|_| rng.gen_range(0..v)).collect();
        (
            vec![
                uniform(rng, &[1, cin, h, w]),
                uniform(rng, &[c, cin, 3, 3]),
                uniform(rng, &[c]),
                uniform(rng, &[c]),
                uniform(rng, &[c]),
                uniform(rng, &[w, v]),
                uniform(rng, &[v]),
            ],
            Box::new(move |g, x| {
                let y = g.conv2d(x[0], x[1], Some(x[2]), (2, 1), Padding::Same)?;
                let y = g.instance_norm(y, x[3], x[4])?;
                let y = g.gelu(y)?;
                let y = g.reshape(y, vec![c * ho, w])?;
                let logits = g.linear(y, x[5], Some(x[6]))?;
                g.cross_entropy(logits, &targets, None, Reduction::Mean)
            }),
        )
    });
}

/// Sum over every frame-level path whose collapse equals `target`.
fn ctc_brute_force(lp: &[f64], frames: usize, classes: usize, target: &[usize], blank: usize) -> f64 {
    let mut total = 0.0;
    let mut path = vec![0usize; frames];
    loop {
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &c in &path {
            if Some(c) != prev && c != blank {
                collapsed.push(c);
            }
            prev = Some(c);
        }
        if collapsed == target {
            total += path.iter().enumerate().map(|(t, &c)| lp[t * classes + c]).sum::<f64>().exp();
        }
        // odometer increment
        let mut i = 0;
        while i < frames {
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
        if i == frames {
            return total;
        }
    }
}

fn all_targets(labels: &[usize], max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for t in &frontier {
            for &l in labels {
                let mut e: Vec<usize> = t.clone();
                e.push(l);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn ctc_matches_exhaustive_alignment_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0;
    for frames in 1..=6 {
        for alphabet in 1..=3 {
            let classes = alphabet + 1;
            for blank in [0, alphabet] {
                let mut logits = uniform(&mut rng, &[frames, classes]).into_data();
                for row in logits.chunks_mut(classes) {
                    let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
                    row.iter_mut().for_each(|v| *v -= lse);
                }
                let labels: Vec<usize> = (0..classes).filter(|&c| c != blank).collect();
                for target in all_targets(&labels, 3) {
                    let p = ctc_brute_force(&logits, frames, classes, &target, blank);
                    match ctc_neg_log_likelihood(&logits, frames, classes, &target, blank) {
                        Ok(loss) => {
                            assert!(p > 0.0);
                            let expected = -p.ln();
                            assert!(
                                (loss - expected).abs() < 1e-9,
                                "T={frames} target {target:?}: {loss} vs {expected}"
                            );
                        }
                        Err(TensorError::InfeasibleTarget { .. }) => assert_eq!(p, 0.0, "T={frames} target {target:?}"),
                        Err(e) => panic!("{e}"),
                    }
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 500);
}

mod tests {
    #[test]
    fn matmul_and_linear() {
        super::matmul_and_linear()
    }

    #[test]
    fn embedding_lookup() {
        super::embedding_lookup()
    }

    #[test]
    fn softmax_and_log_softmax() {
        super::softmax_and_log_softmax()
    }

    #[test]
    fn normalizations() {
        super::normalizations()
    }

    #[test]
    fn activations() {
        super::activations()
    }

    #[test]
    fn elementwise_and_reductions() {
        super::elementwise_and_reductions()
    }

    #[test]
    fn layout_ops() {
        super::layout_ops()
    }

    #[test]
    fn cross_entropy_with_ignore() {
        super::cross_entropy_with_ignore()
    }

    #[test]
    fn conv2d_gradients() {
        super::conv2d_gradients()
    }

    #[test]
    fn depthwise_and_separable_gradients() {
        super::depthwise_and_separable_gradients()
    }

    #[test]
    fn attention_gradients() {
        super::attention_gradients()
    }

    #[test]
    fn ctc_gradients() {
        super::ctc_gradients()
    }

    #[test]
    fn composite_conv_norm_dense_cross_entropy() {
        super::composite_conv_norm_dense_cross_entropy()
    }

    #[test]
    fn ctc_matches_exhaustive_alignment_enumeration() {
        super::ctc_matches_exhaustive_alignment_enumeration()
    }
}
