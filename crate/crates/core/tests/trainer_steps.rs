use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scribe_core::codec::{serialize, TaskPrompt};
use scribe_core::image::GrayImage;
use scribe_core::metrics::{char_tally, Tally};
use scribe_core::model::{Model, ModelConfig};
use scribe_core::noise::CandidateTable;
use scribe_core::synthgen::{Corpus, Family, Generator, PageConfig};
use scribe_core::tensor::Graph;
use scribe_core::tokenizer::{desk_vocabulary, SpecialSet, Task, Vocabulary};
use scribe_core::trainer::{
    classes_text, ctc_alphabet, ctc_transcribe, fit_minimum, line_pool, pretrain_encoder, teacher_forcing_pair,
    LineSample, RunConfig, Sample, TrainError, Trainer, TrainerConfig,
};
use scribe_core::Exec;

struct Fixture {
    vocab: Vocabulary,
    table: CandidateTable,
    samples: Vec<Sample>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let corpus = Corpus::bundled();
        let vocab =
            desk_vocabulary(corpus.paragraphs().iter().map(String::as_str), 256, &SpecialSet::default()).unwrap();
        let table = CandidateTable::build(&vocab, Exec::Sequential);
        let generator = Generator::desk().unwrap().with_size_range(10.0, 14.0);
        let prompt = TaskPrompt::new(&vocab, Task::Htr).unwrap();
        let samples = (0..4)
            .map(|i| {
                let page = generator.page(Family::Paragraph, &PageConfig::new(256, 48, 1), 7, i).unwrap();
                Sample { ids: serialize(&page.document, &prompt, &vocab).unwrap(), image: page.image }
            })
            .collect();
        Fixture { vocab, table, samples }
    })
}

fn trainer(noise_rate: f64, lr: f64) -> Trainer {
    let f = fixture();
    let model = Model::new(ModelConfig::desk(f.vocab.len(), ctc_alphabet().len()), 1).unwrap();
    Trainer::new(model, TrainerConfig { lr, noise_rate, seed: 5, pad: f.vocab.pad(), exec: Exec::Sequential }).unwrap()
}

fn param_bytes(t: &Trainer) -> Vec<u32> {
    t.model.params.iter().flat_map(|(_, _, p)| p.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn trailing_pads_leave_the_loss_unchanged() {
    let f = fixture();
    let batch = f.samples[..2].to_vec();
    let mut padded = batch.clone();
    for s in &mut padded {
        s.ids.extend([f.vocab.pad(); 7]);
    }
    let (mut a, mut b) = (trainer(0.3, 1e-4), trainer(0.3, 1e-4));
    let ra = a.train_step(&batch, &f.table).unwrap();
    let rb = b.train_step(&padded, &f.table).unwrap();
    assert_eq!(ra.tokens, rb.tokens);
    assert!((ra.loss - rb.loss).abs() <= 1e-5 * ra.loss, "{} vs {}", ra.loss, rb.loss);
}

#[test]
fn noise_touches_inputs_only() {
    let f = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for s in &f.samples {
        let (input, target) = teacher_forcing_pair(&s.ids, &f.table, 1.0, &mut rng);
        assert_eq!(target, s.ids[1..]);
        for (i, (&noisy, &clean)) in input.iter().zip(&s.ids[..s.ids.len() - 1]).enumerate() {
            if f.table.candidates(clean).is_empty() {
                assert_eq!(noisy, clean, "position {i}");
            } else {
                assert_ne!(noisy, clean, "position {i}");
            }
        }
    }
}

#[test]
fn over_long_labels_are_skipped() {
    let f = fixture();
    let mut t = trainer(0.0, 1e-4);
    let mut long = f.samples[0].clone();
    long.ids = std::iter::repeat_n(long.ids[1], 400).collect();
    let report = t.train_step(&[long, f.samples[1].clone()], &f.table).unwrap();
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].0, 0);
    assert!(report.updated);
}

#[test]
fn steps_are_deterministic() {
    let f = fixture();
    let (mut a, mut b) = (trainer(0.3, 1e-4), trainer(0.3, 1e-4));
    for _ in 0..3 {
        let ra = a.train_step(&f.samples, &f.table).unwrap();
        let rb = b.train_step(&f.samples, &f.table).unwrap();
        assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
    }
    assert_eq!(param_bytes(&a), param_bytes(&b));
}

#[test]
fn memorizing_one_sample_drives_the_loss_to_zero() {
    let f = fixture();
    let mut t = trainer(0.0, 1e-3);
    let one = [f.samples[0].clone()];
    let first = t.train_step(&one, &f.table).unwrap().loss;
    let mut last = first;
    for _ in 0..80 {
        last = t.train_step(&one, &f.table).unwrap().loss;
    }
    assert!(last < 0.05, "loss {first} -> {last}");
}

#[test]
fn non_finite_loss_is_reported_as_divergence() {
    let f = fixture();
    let mut t = trainer(0.0, 1e-4);
    let id = t.model.params.id("dec.out.w").unwrap();
    t.model.params.get_mut(id).data_mut()[0] = f32::NAN;
    match t.train_step(&f.samples[..1], &f.table) {
        Err(TrainError::Divergence { step: 0, .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

/// Number of frame labellings of `target` over `frames` frames, by walking
/// the emitted prefix length and whether the last frame was a character.
fn alignments(target: &[usize], frames: usize) -> u128 {
    let l = target.len();
    // ways[j][c]: j characters emitted, c = last frame was target[j - 1]
    let mut ways = vec![[0u128; 2]; l + 1];
    ways[0][0] = 1;
    for _ in 0..frames {
        let mut next = vec![[0u128; 2]; l + 1];
        for j in 0..=l {
            let [blank, held] = ways[j];
            next[j][0] += blank + held;
            next[j][1] += held;
            if j < l {
                next[j + 1][1] += blank;
                if j == 0 || target[j] != target[j - 1] {
                    next[j + 1][1] += held;
                }
            }
        }
        ways = next;
    }
    ways[l][0] + ways[l][1]
}

#[test]
fn alignment_counter_matches_enumeration() {
    let brute = |target: &[usize], frames: usize| -> u128 {
        let classes = 3usize;
        (0..classes.pow(frames as u32))
            .filter(|&code| {
                let path: Vec<usize> = (0..frames).map(|t| code / classes.pow(t as u32) % classes).collect();
                let mut out = Vec::new();
                let mut prev = None;
                for &p in &path {
                    if Some(p) != prev && p != 2 {
                        out.push(p);
                    }
                    prev = Some(p);
                }
                out == target
            })
            .count() as u128
    };
    for target in [vec![], vec![0], vec![0, 0], vec![0, 1], vec![1, 0, 1], vec![0, 0, 0]] {
        for frames in 0..=7 {
            assert_eq!(alignments(&target, frames), brute(&target, frames), "{target:?} over {frames}");
        }
    }
}

fn ctc_cfg() -> RunConfig {
    RunConfig { encoder_steps: 500, ..RunConfig::desk() }
}

fn encoder_model() -> Model<f32> {
    Model::new(ModelConfig::desk(fixture().vocab.len(), ctc_alphabet().len()), 1).unwrap()
}

fn frames(model: &Model<f32>, image: &GrayImage) -> usize {
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f2d = model.encode(&mut g, &fit_minimum(model, image), &mut rng).unwrap();
    let lp = model.ctc_log_probs(&mut g, f2d).unwrap();
    g.shape(lp)[0]
}

#[test]
fn untrained_ctc_loss_is_the_uniform_baseline() {
    let cfg = ctc_cfg();
    let generator = Generator::desk().unwrap();
    let pool: Vec<LineSample> = line_pool(&generator, &cfg).unwrap();
    let model = encoder_model();
    let classes = (model.config.ctc_classes + 1) as f64;
    let expected: f64 = pool[..cfg.batch]
        .iter()
        .map(|l| {
            let t = frames(&model, &l.image);
            t as f64 * classes.ln() - (alignments(&l.target, t) as f64).ln()
        })
        .sum::<f64>()
        / cfg.batch as f64;
    let mut t =
        Trainer::new(model, TrainerConfig { lr: 1e-3, noise_rate: 0.0, seed: 1, pad: 0, exec: Exec::Sequential })
            .unwrap();
    let got = t.ctc_step(&pool[..cfg.batch]).unwrap().loss;
    assert!((got - expected).abs() < 1e-4 * expected, "{got} vs {expected}");
}

#[test]
fn encoder_pretraining_overfits_a_line_pool() {
    let cfg = ctc_cfg();
    let generator = Generator::desk().unwrap();
    let pool = line_pool(&generator, &cfg).unwrap();
    assert_eq!(pool.len(), 20);
    let dir = tempfile::tempdir().unwrap();
    let out = pretrain_encoder(encoder_model(), &pool, &cfg, dir.path()).unwrap();
    assert_eq!(out.manifest.losses().len(), 500);
    assert!(out.checkpoint.exists());
    let mut tally = Tally::default();
    for line in &pool {
        tally.add(char_tally(&ctc_transcribe(&out.model, &line.image).unwrap(), &classes_text(&line.target)));
    }
    let cer = tally.rate().unwrap();
    eprintln!("encoder pretraining: pool CER {cer:.4}");
    assert!(cer < 0.10, "pool CER {cer}");
}

#[test]
fn encoder_loss_curves_repeat() {
    let cfg = RunConfig { encoder_steps: 6, ..RunConfig::desk() };
    let pool = line_pool(&Generator::desk().unwrap(), &cfg).unwrap();
    let curve = || {
        let dir = tempfile::tempdir().unwrap();
        let out = pretrain_encoder(encoder_model(), &pool, &cfg, dir.path()).unwrap();
        let ckpt = std::fs::read(&out.checkpoint).unwrap();
        (out.manifest.losses(), ckpt)
    };
    assert_eq!(curve(), curve());
}
