//! Shape, causality, decoding and size contracts of the recognizer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scribe_core::image::GrayImage;
use scribe_core::model::{count_params, DecoderConfig, EncoderConfig, EncoderPreset, Model, ModelConfig, ModelError};
use scribe_core::tensor::{Graph, Tensor};
use scribe_core::Exec;

fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayImage::from_pixels(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn f2d_shape(model: &Model<f32>, image: &GrayImage) -> Vec<usize> {
    let mut g = Graph::new();
    let f2d = model.encode(&mut g, image, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    g.shape(f2d).to_vec()
}

/// Base encoder behind a one-block decoder, enough to exercise real weights.
fn base_model() -> Model<f32> {
    let config = ModelConfig {
        encoder: EncoderConfig { dropout: 0.0, ..EncoderConfig::preset(EncoderPreset::Base, false) },
        decoder: DecoderConfig { blocks: 1, vocab: 16, ..DecoderConfig::full(16) },
        ..ModelConfig::full(16, 4)
    };
    Model::new(config, 11).unwrap()
}

pub fn encoder_shapes_follow_ceil_division_for_random_sizes() {
    let base = base_model();
    let mut mpopp = base.clone();
    mpopp.config.encoder.mpopp = true;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..10 {
        let (h, w) = (rng.gen_range(32..=120), rng.gen_range(8..=120));
        let img = noise_image(w, h, i);
        assert_eq!(f2d_shape(&base, &img), [1, 1024, h.div_ceil(32), w.div_ceil(8)], "{h}x{w}");
        assert_eq!(f2d_shape(&mpopp, &img), [1, 1024, h.div_ceil(16), w.div_ceil(8)], "{h}x{w} variant");
    }
}

pub fn mpopp_doubles_feature_height() {
    let base = EncoderConfig::preset(EncoderPreset::Base, false);
    let mpopp = EncoderConfig::preset(EncoderPreset::Base, true);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        // multiples of 32 keep the doubling exact under ceil division
        let (h, w) = (32 * rng.gen_range(1..40), rng.gen_range(8..2000));
        let (hb, wb) = base.output_extent(h, w).unwrap();
        let (hm, wm) = mpopp.output_extent(h, w).unwrap();
        assert_eq!((hm, wm), (2 * hb, wb));
    }
}

pub fn same_weights_accept_any_size() {
    let model = Model::<f32>::new(ModelConfig::desk(64, 10), 1).unwrap();
    for (h, w) in [(256, 256), (512, 128), (32, 8), (33, 9)] {
        let f1d = model.features(&noise_image(w, h, 0)).unwrap();
        assert_eq!(f1d.shape(), [h.div_ceil(32) * w.div_ceil(8), 128]);
    }
    let too_small = model.features(&noise_image(7, 40, 0));
    assert!(matches!(too_small, Err(ModelError::InputSize { min_height: 32, min_width: 8, .. })));
}

pub fn f1d_is_row_major_flattening_plus_positions() {
    let model = Model::<f64>::new(ModelConfig::desk(64, 10), 2).unwrap();
    let img = noise_image(40, 64, 3);
    let mut g = Graph::new();
    let f2d = model.encode(&mut g, &img, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let raw = g.value(f2d).clone();
    let f1d = model.flatten(&mut g, f2d).unwrap();
    let (c, h, w) = (raw.shape()[1], raw.shape()[2], raw.shape()[3]);
    let pe = scribe_core::model::pos2d::<f64>(h, w, c).unwrap();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let expected = raw.data()[(ch * h + y) * w + x] + pe.data()[(ch * h + y) * w + x];
                assert_eq!(g.value(f1d).data()[(y * w + x) * c + ch], expected);
            }
        }
    }
}

fn desk_session_fixture() -> (Model<f32>, Tensor<f32>) {
    let model = Model::<f32>::new(ModelConfig::desk(96, 10), 21).unwrap();
    let f1d = model.features(&noise_image(96, 32, 9)).unwrap();
    (model, f1d)
}

pub fn decoder_is_causal_under_future_permutations() {
    let (model, f1d) = desk_session_fixture();
    let v = model.config.decoder.vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let len = rng.gen_range(2..24);
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..v)).collect();
        let i = rng.gen_range(0..len - 1);
        let mut permuted = ids.clone();
        permuted[i + 1..].shuffle(&mut rng);
        permuted[len - 1] = (permuted[len - 1] + 1) % v;
        let a = model.prefix_logits(&f1d, &ids).unwrap();
        let b = model.prefix_logits(&f1d, &permuted).unwrap();
        assert_eq!(a.data()[..(i + 1) * v], b.data()[..(i + 1) * v], "position {i} of {len}");
        assert_ne!(a.data()[(len - 1) * v..], b.data()[(len - 1) * v..]);
    }
}

pub fn cross_attention_is_live() {
    let (model, f1d) = desk_session_fixture();
    let zero = Tensor::zeros(f1d.shape().to_vec());
    let ids = [1, 5, 9];
    assert_ne!(model.prefix_logits(&f1d, &ids).unwrap(), model.prefix_logits(&zero, &ids).unwrap());
}

pub fn batch_rows_match_single_runs() {
    let (model, _) = desk_session_fixture();
    let f1ds: Vec<Tensor<f32>> =
        (0..4).map(|i| model.features(&noise_image(64 + 8 * i, 32, i as u64)).unwrap()).collect();
    let prefixes: Vec<Vec<usize>> = vec![vec![1, 2, 3], vec![4, 5, 6, 7, 8], vec![9], vec![10, 11]];
    let batch = model.prefix_logits_batch(&f1ds, &prefixes, 0, Exec::Parallel).unwrap();
    for (k, row) in batch.iter().enumerate() {
        let single = model.prefix_logits(&f1ds[k], &prefixes[k]).unwrap();
        assert_eq!(row.shape(), single.shape());
        for (a, b) in row.data().iter().zip(single.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

pub fn prefix_longer_than_max_is_a_length_error() {
    let (model, f1d) = desk_session_fixture();
    let m = model.config.decoder.max_len;
    assert!(matches!(model.prefix_logits(&f1d, &vec![1; m + 1]), Err(ModelError::Length { .. })));
    assert!(model.prefix_logits(&f1d, &vec![1; m]).is_ok());
}

pub fn greedy_stops_at_end_or_cap() {
    let (mut model, f1d) = desk_session_fixture();
    let end = 7;
    // final norm emits all ones, so logits equal column sums of the decision layer
    let set = |model: &mut Model<f32>, name: &str, f: &dyn Fn(usize) -> f32| {
        let id = model.params.id(name).unwrap();
        let t = model.params.get_mut(id);
        for (i, x) in t.data_mut().iter_mut().enumerate() {
            *x = f(i);
        }
    };
    set(&mut model, "dec.ln.g", &|_| 0.0);
    set(&mut model, "dec.ln.b", &|_| 1.0);
    let v = model.config.decoder.vocab;
    set(&mut model, "dec.out.w", &|i| if i % v == end { 1.0 } else { 0.0 });
    assert_eq!(model.greedy_decode(&f1d, 1, end, 50).unwrap(), vec![end]);

    set(&mut model, "dec.out.w", &|i| if i % v == 3 { 1.0 } else { 0.0 });
    assert_eq!(model.greedy_decode(&f1d, 1, end, 5).unwrap(), vec![3; 5]);

    // all-equal logits: the lowest id wins
    set(&mut model, "dec.out.w", &|_| 0.5);
    assert_eq!(model.greedy_decode(&f1d, 1, end, 3).unwrap(), vec![0; 3]);
}

pub fn greedy_is_deterministic_and_matches_teacher_forcing() {
    let (model, f1d) = desk_session_fixture();
    let a = model.greedy_decode(&f1d, 1, 2, 12).unwrap();
    assert_eq!(a, model.greedy_decode(&f1d, 1, 2, 12).unwrap());
    let mut prefix = vec![1];
    prefix.extend(&a[..a.len() - 1]);
    let logits = model.prefix_logits(&f1d, &prefix).unwrap();
    let v = model.config.decoder.vocab;
    for (i, &t) in a.iter().enumerate() {
        let row = &logits.data()[i * v..(i + 1) * v];
        assert_eq!(scribe_core::model::argmax(row), t);
    }
}

pub fn ctc_head_width_follows_the_encoder() {
    let model = Model::<f32>::new(ModelConfig::desk(64, 10), 4).unwrap();
    let mut g = Graph::new();
    let f2d = model.encode(&mut g, &noise_image(200, 40, 1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let lp = model.ctc_log_probs(&mut g, f2d).unwrap();
    assert_eq!(g.shape(lp), [25, 11]);
}

fn within(value: usize, target: f64, tol: f64) -> bool {
    (value as f64 - target).abs() <= tol * target
}

pub fn parameter_counts() {
    let enc = |p| count_params(&ModelConfig { encoder: EncoderConfig::preset(p, false), ..ModelConfig::full(100, 10) });
    // the small and large encoders do not end at the decoder width
    let enc_only = |p: EncoderPreset| {
        let mut c = ModelConfig::full(100, 10);
        c.encoder = EncoderConfig::preset(p, false);
        c.decoder.dim = c.encoder.out_channels();
        count_params(&c).unwrap().encoder
    };
    assert_eq!(enc(EncoderPreset::Base).unwrap().encoder, 20_002_944);
    assert!(within(20_002_944, 20.0e6, 0.02));
    assert_eq!(enc_only(EncoderPreset::Small), 4_042_048);
    assert!(within(4_042_048, 4.0e6, 0.05));
    assert_eq!(enc_only(EncoderPreset::Large), 44_181_632);
    assert!(within(44_181_632, 44.2e6, 0.02));

    let full = count_params(&ModelConfig::full(32_153, 80)).unwrap();
    assert_eq!(full.embedding, 32_924_672);
    assert_eq!(full.decision, 32_924_672);
    assert_eq!(full.decoder_blocks, 4 * 16_796_672);
    assert_eq!(full.total(), 153_041_024);
    assert!(within(full.total(), 154.0e6, 0.03));

    let desk = count_params(&ModelConfig::desk(512, 80)).unwrap();
    assert_eq!(desk.total(), 1_093_472);
    assert_eq!(desk, count_params(&ModelConfig::desk(512, 80)).unwrap());
}

mod tests {
    #[test]
    fn encoder_shapes_follow_ceil_division_for_random_sizes() {
        super::encoder_shapes_follow_ceil_division_for_random_sizes()
    }

    #[test]
    fn mpopp_doubles_feature_height() {
        super::mpopp_doubles_feature_height()
    }

    #[test]
    fn same_weights_accept_any_size() {
        super::same_weights_accept_any_size()
    }

    #[test]
    fn f1d_is_row_major_flattening_plus_positions() {
        super::f1d_is_row_major_flattening_plus_positions()
    }

    #[test]
    fn decoder_is_causal_under_future_permutations() {
        super::decoder_is_causal_under_future_permutations()
    }

    #[test]
    fn cross_attention_is_live() {
        super::cross_attention_is_live()
    }

    #[test]
    fn batch_rows_match_single_runs() {
        super::batch_rows_match_single_runs()
    }

    #[test]
    fn prefix_longer_than_max_is_a_length_error() {
        super::prefix_longer_than_max_is_a_length_error()
    }

    #[test]
    fn greedy_stops_at_end_or_cap() {
        super::greedy_stops_at_end_or_cap()
    }

    #[test]
    fn greedy_is_deterministic_and_matches_teacher_forcing() {
        super::greedy_is_deterministic_and_matches_teacher_forcing()
    }

    #[test]
    fn ctc_head_width_follows_the_encoder() {
        super::ctc_head_width_follows_the_encoder()
    }

    #[test]
    fn parameter_counts() {
        super::parameter_counts()
    }
}
