#![allow(dead_code)]

use nextpoi::data::{Dataset, Segment, Split};
use nextpoi::eval::{evaluate, EvalReport};
use nextpoi::model::{Hyperparams, Model, MetaSets, Parameters, VocabSizes};
use nextpoi::pipeline::{init_model, pretrain};
use nextpoi::pretrain::{SkipGramConfig, WalkConfig};
use nextpoi::synth::{generate, SynthConfig};
use nextpoi::train::{train, TrainConfig, TrainOutcome};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Settings used for all learnability runs on planted corpora.
pub fn harness_hp() -> Hyperparams {
    Hyperparams {
        dim: 16,
        learning_rate: 0.05,
        lambda: 1e-4,
        ..Hyperparams::default()
    }
}

pub struct Run {
    pub ds: Dataset,
    pub split: Split,
    pub outcome: TrainOutcome,
    pub test: EvalReport,
}

pub fn synth_run(corpus: &SynthConfig, hp: &Hyperparams, pretrained: bool, seed: u64) -> Run {
    let ds = generate(corpus).unwrap().dataset().unwrap();
    let split = Split::chronological(&ds).unwrap();
    let pre = pretrained.then(|| {
        let walks = WalkConfig { seed, ..WalkConfig::default() };
        let sg = SkipGramConfig { dim: hp.dim, seed: seed + 1, ..SkipGramConfig::default() };
        pretrain(&ds, &split, &walks, &sg, Default::default(), None).unwrap()
    });
    let model = init_model(&ds, hp, pre.as_ref(), seed + 2).unwrap();
    let cfg = TrainConfig { max_epochs: 50, patience: 50, seed: seed + 3 };
    let outcome = train(model, &ds, &split, &cfg).unwrap();
    let test = evaluate(&outcome.model, &ds, &split, Segment::Test).unwrap();
    Run { ds, split, outcome, test }
}

/// A random model with meta sets over `words` POI words and 3 user items.
pub fn random_model(hp: Hyperparams, users: usize, pois: usize, words: usize, seed: u64) -> Model {
    let sizes = VocabSizes { users, pois, items: 3, words };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = Parameters::random(sizes, hp.dim, &mut rng);
    let poi_words = (0..pois).map(|l| (0..words).filter(|w| (l + w) % 3 == 0).collect()).collect();
    let user_items = (0..users).map(|u| if u % 2 == 0 { vec![u % 3] } else { vec![] }).collect();
    Model::new(hp, params, MetaSets { poi_words, user_items }).unwrap()
}
