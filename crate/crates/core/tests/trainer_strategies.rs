//! Pipelines for strategies A to D at toy scale, audited through their manifests.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use scribe_core::model::{Model, ModelConfig};
use scribe_core::noise::CandidateTable;
use scribe_core::synthgen::{Corpus, Family, Generator, PageConfig};
use scribe_core::tokenizer::{desk_vocabulary, SpecialSet, Task, Vocabulary};
use scribe_core::trainer::{
    ctc_alphabet, line_pool, load_checkpoint, pretrain, pretrain_encoder, run_strategy, Context, Dataset, Example,
    InitSources, Record, RunConfig, RunManifest, Strategy, TrainError,
};
use scribe_core::Exec;

struct World {
    vocab: Vocabulary,
    table: CandidateTable,
    generator: Generator,
    datasets: Vec<Dataset>,
    cfg: RunConfig,
    /// Holds the encoder, multilingual and monolingual stages.
    _dir: tempfile::TempDir,
    encoder: PathBuf,
    multilingual: PathBuf,
    monolingual: PathBuf,
}

impl World {
    fn ctx(&self) -> Context<'_> {
        Context { vocab: &self.vocab, table: &self.table, generator: &self.generator }
    }
}

fn dataset(generator: &Generator, id: &str, family: Family, task: Task, seed: u64) -> Dataset {
    let page = PageConfig { annotate: matches!(task, Task::Ner(_)), ..PageConfig::new(256, 96, 2) };
    let example = |i: u64| {
        let s = generator.page(family, &page, seed, i).unwrap();
        Example { id: format!("{id}-{i}"), image: s.image, document: s.document }
    };
    Dataset { id: id.into(), family, task, train: (0..3).map(example).collect(), valid: (3..5).map(example).collect() }
}

fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| {
        let corpus = Corpus::bundled();
        let vocab =
            desk_vocabulary(corpus.paragraphs().iter().map(String::as_str), 256, &SpecialSet::default()).unwrap();
        let table = CandidateTable::build(&vocab, Exec::Sequential);
        let generator = Generator::desk().unwrap().with_size_range(10.0, 14.0);
        let datasets = vec![
            dataset(&generator, "iam", Family::Paragraph, Task::Htr, 11),
            dataset(&generator, "rimes", Family::Mail, Task::Htr, 12),
            dataset(&generator, "iam-ner", Family::Paragraph, Task::Ner("iam".into()), 13),
        ];
        let cfg = RunConfig {
            encoder_steps: 2,
            pretrain_steps: 3,
            finetune_steps: 4,
            validate_every: 2,
            ramp_length: 4,
            page_width: 256,
            page_height: 96,
            line_count: 4,
            ..RunConfig::desk()
        };
        let dir = tempfile::tempdir().unwrap();
        let mut config = ModelConfig::desk(vocab.len(), ctc_alphabet().len());
        config.decoder.max_len = 96;
        let pool = line_pool(&generator, &cfg).unwrap();
        let encoder = pretrain_encoder(Model::new(config, 3).unwrap(), &pool, &cfg, dir.path()).unwrap().checkpoint;
        let ctx = Context { vocab: &vocab, table: &table, generator: &generator };
        let all: Vec<&Dataset> = datasets.iter().collect();
        let multilingual = pretrain(&ctx, &encoder, &all, &cfg, dir.path(), "multilingual").unwrap().checkpoint;
        let monolingual = pretrain(&ctx, &encoder, &all[..1], &cfg, dir.path(), "mono-iam").unwrap().checkpoint;
        World { vocab, table, generator, datasets, cfg, _dir: dir, encoder, multilingual, monolingual }
    })
}

fn run(strategy: Strategy, target: Option<&str>, init: &InitSources, out: &Path) -> Result<RunManifest, TrainError> {
    let w = world();
    run_strategy(&w.ctx(), &strategy.preset(), &w.datasets, target, init, &w.cfg, out)
}

fn pretrained() -> InitSources {
    let w = world();
    InitSources {
        multilingual: Some(w.multilingual.clone()),
        monolingual: Some(w.monolingual.clone()),
        strategy_a: None,
    }
}

fn referenced_paths(m: &RunManifest) -> Vec<String> {
    m.records()
        .iter()
        .filter_map(|r| match r {
            Record::Best { path, .. } | Record::Checkpoint(path) | Record::Init { path, .. } => Some(path.clone()),
            _ => None,
        })
        .collect()
}

fn assert_complete(m: &RunManifest) {
    for p in referenced_paths(m) {
        assert!(Path::new(&p).exists(), "{p} is referenced but missing");
    }
    let on_disk = std::fs::read_to_string(m.path().unwrap()).unwrap();
    assert_eq!(on_disk, m.to_text(), "manifest file holds exactly the appended records");
    let reread = RunManifest::read(m.path().unwrap()).unwrap();
    assert_eq!(reread.records(), m.records());
}

fn synthetic(m: &RunManifest) -> BTreeSet<String> {
    m.corpora().into_iter().filter(|c| c.starts_with("synth:")).collect()
}

pub fn presets_match_their_definitions() {
    use scribe_core::trainer::{InitSource, Scope};
    let a = Strategy::A.preset();
    assert_eq!((a.finetune, a.init, a.best_per_dataset), (Scope::All, InitSource::MultilingualPretrain, true));
    let b = Strategy::B.preset();
    assert_eq!((b.finetune, b.init, b.best_per_dataset), (Scope::Target, InitSource::MultilingualPretrain, false));
    let c = Strategy::C.preset();
    assert_eq!((c.finetune, c.init), (Scope::Target, InitSource::StrategyABest));
    let d = Strategy::D.preset();
    assert_eq!((d.pretraining, d.finetune, d.init), (Scope::Target, Scope::Target, InitSource::MonolingualPretrain));
    assert_eq!("c".parse::<Strategy>().unwrap(), Strategy::C);
    assert!("E".parse::<Strategy>().is_err());
}

pub fn pretraining_stages_record_their_corpora() {
    let w = world();
    let multi = load_checkpoint(&w.multilingual).unwrap();
    assert_eq!(multi.meta["corpora"], "lines,synth:iam,synth:iam-ner,synth:rimes");
    let mono = load_checkpoint(&w.monolingual).unwrap();
    assert_eq!(mono.meta["corpora"], "lines,synth:iam");
    assert_eq!(load_checkpoint(&w.encoder).unwrap().meta["stage"], "pretrain-encoder");
}

pub fn strategy_a_then_c_then_b_and_d() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();

    // C before any A run names the missing stage
    match run(Strategy::C, Some("iam"), &pretrained(), dir.path()) {
        Err(TrainError::MissingStage(stage)) => assert!(stage.contains("strategy A"), "{stage}"),
        other => panic!("expected a missing stage, got {other:?}"),
    }

    let a = run(Strategy::A, None, &pretrained(), &dir.path().join("a")).unwrap();
    assert_complete(&a);
    let best = a.best();
    let ids: BTreeSet<&str> = w.datasets.iter().map(|d| d.id.as_str()).collect();
    assert_eq!(best.keys().map(String::as_str).collect::<BTreeSet<_>>(), ids, "one best per validation set");
    assert_eq!(best["iam-ner"].metric, "f1");
    assert_eq!(best["rimes"].metric, "cer");
    let steps: BTreeSet<u64> = a.metrics().iter().map(|m| m.0).collect();
    assert_eq!(steps, BTreeSet::from([2, 4]));
    assert_eq!(synthetic(&a).len(), 3);

    let mut with_a = pretrained();
    with_a.strategy_a = a.path().map(Path::to_path_buf);
    let c = run(Strategy::C, Some("iam"), &with_a, &dir.path().join("c")).unwrap();
    assert_complete(&c);
    assert_eq!(
        c.inits(),
        vec![("strategy-A-best".to_string(), best["iam"].path.clone())],
        "lineage A-best -> fine-tune"
    );
    assert_eq!(c.best().len(), 1);

    let b = run(Strategy::B, Some("rimes"), &pretrained(), &dir.path().join("b")).unwrap();
    assert_complete(&b);
    assert_eq!(b.best().keys().collect::<Vec<_>>(), vec!["rimes"], "exactly one best checkpoint");
    assert!(b.metrics().iter().all(|m| m.1 == "rimes"));

    let d = run(Strategy::D, Some("iam"), &pretrained(), &dir.path().join("d")).unwrap();
    assert_complete(&d);
    assert_eq!(synthetic(&d), BTreeSet::from(["synth:iam".to_string()]), "D never touches other corpora");
    assert_eq!(d.best().len(), 1);
}

pub fn d_rejects_a_multilingual_initialization() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let init = InitSources { monolingual: Some(w.multilingual.clone()), ..InitSources::default() };
    assert!(matches!(run(Strategy::D, Some("iam"), &init, dir.path()), Err(TrainError::Config(_))));
    assert!(matches!(
        run(Strategy::D, Some("iam"), &InitSources::default(), dir.path()),
        Err(TrainError::MissingStage(_))
    ));
    assert!(matches!(run(Strategy::B, None, &pretrained(), dir.path()), Err(TrainError::Config(_))));
}

pub fn metric_history_repeats_from_config_and_seed() {
    let history = || {
        let dir = tempfile::tempdir().unwrap();
        let m = run(Strategy::B, Some("iam-ner"), &pretrained(), dir.path()).unwrap();
        (m.metrics(), m.losses())
    };
    assert_eq!(history(), history());
}

mod tests {
    #[test]
    fn presets_match_their_definitions() {
        super::presets_match_their_definitions()
    }

    #[test]
    fn pretraining_stages_record_their_corpora() {
        super::pretraining_stages_record_their_corpora()
    }

    #[test]
    fn strategy_a_then_c_then_b_and_d() {
        super::strategy_a_then_c_then_b_and_d()
    }

    #[test]
    fn d_rejects_a_multilingual_initialization() {
        super::d_rejects_a_multilingual_initialization()
    }

    #[test]
    fn metric_history_repeats_from_config_and_seed() {
        super::metric_history_repeats_from_config_and_seed()
    }
}
