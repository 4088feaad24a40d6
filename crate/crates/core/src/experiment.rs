//! End-to-end pipeline at desk scale: synthetic pairs, retrieval training,
//! selector training and the held-out noisy evaluation sets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::{train_retrieval, CachedEmbedder, EmbedNet, EmbedNetConfig, RetrievalLog};
use crate::error::Result;
use crate::gallery::{build_gallery, GalleryFeatures};
use crate::ppo::{train_selector, Environment, EvalSet, PpoConfig, RewardConfig, SelectorTrainLog, TrainItem};
use crate::selector::{SelectorConfig, SelectorNet};
use crate::synth::{derive_seed, generate_dataset, inject_noise, Dataset, GeneratorConfig, LabeledSketch, Split};

/// Embedding cache size used while training the selector.
pub const EMBED_CACHE: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DeskConfig {
    pub n_pairs: usize,
    pub fractions: [f64; 3],
    pub data_seed: u64,
    pub generator: GeneratorConfig,
    pub embed: EmbedNetConfig,
    pub selector: SelectorConfig,
    pub ppo: PpoConfig,
    pub reward: RewardConfig,
    /// Noise strokes planted into held-out sketches.
    pub eval_noise: usize,
    pub eval_seed: u64,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DeskConfig {
    /// Runs end to end in a few minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            n_pairs: 300,
            fractions: [0.7, 0.15, 0.15],
            data_seed: 7,
            generator: GeneratorConfig::default(),
            embed: EmbedNetConfig {
                lr: 1e-3,
                epochs: 10,
                patience: 10,
                seed: 1,
                ..Default::default()
            },
            selector: SelectorConfig {
                seed: 2,
                ..Default::default()
            },
            ppo: PpoConfig {
                lr: 1e-3,
                lr_late: 1e-4,
                warm_epochs: 60,
                epochs: 60,
                seed: 3,
                ..Default::default()
            },
            reward: RewardConfig::default(),
            eval_noise: 3,
            eval_seed: 99,
        }
    }

    /// Tiny configuration for tests.
    pub fn smoke() -> Self {
        let mut c = Self::desk();
        c.n_pairs = 40;
        c.embed.epochs = 2;
        c.embed.batch_size = 8;
        c.selector.hidden = 16;
        c.ppo.epochs = 2;
        c.ppo.batch_size = 8;
        c.ppo.minibatch_size = 8;
        c.ppo.updates_per_iteration = 1;
        c.ppo.episode_len = 2;
        c
    }
}

/// Dataset plus the trained (then frozen) retrieval net.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cfg: DeskConfig,
    pub dataset: Dataset,
    pub net: EmbedNet,
    pub retrieval_log: RetrievalLog,
}

pub fn prepare(cfg: &DeskConfig) -> Result<Prepared> {
    let dataset = generate_dataset(cfg.n_pairs, &cfg.generator, cfg.fractions, cfg.data_seed)?;
    let (net, retrieval_log) = train_retrieval(&dataset, &cfg.embed)?;
    Ok(Prepared {
        cfg: cfg.clone(),
        dataset,
        net,
        retrieval_log,
    })
}

impl Prepared {
    /// Photo gallery of one split.
    pub fn gallery(&self, split: Split) -> Result<GalleryFeatures> {
        let ps = self.dataset.split(split);
        let photos: Vec<(String, &_)> = ps.iter().map(|p| (p.id.clone(), &p.photo)).collect();
        build_gallery(&self.net, &photos)
    }

    pub fn train_items(&self) -> Vec<TrainItem> {
        self.dataset
            .split(Split::Train)
            .iter()
            .map(|p| TrainItem {
                sketch: p.sketch.sketch.clone(),
                pair_id: p.id.clone(),
            })
            .collect()
    }

    /// Held-out sketches of `split` with `n` planted noise strokes; `draw`
    /// selects an independent noise realisation.
    pub fn noisy_items(&self, split: Split, n: usize, draw: u64) -> Result<Vec<LabeledSketch>> {
        let base = derive_seed(self.cfg.eval_seed, draw);
        self.dataset
            .split(split)
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, i as u64));
                inject_noise(&p.sketch.sketch, &p.id, n, &self.cfg.generator.noise, &mut rng)
            })
            .collect()
    }

    pub fn eval_set(&self, split: Split) -> Result<EvalSet> {
        Ok(EvalSet {
            items: self.noisy_items(split, self.cfg.eval_noise, 0)?,
            gallery: self.gallery(split)?,
        })
    }

    /// Trains a selector against the train-photo gallery with the given
    /// reward, reporting validation accuracy each epoch.
    pub fn train_selector_with(&self, reward: RewardConfig) -> Result<(SelectorNet, SelectorTrainLog)> {
        let gallery = self.gallery(Split::Train)?;
        let cached = CachedEmbedder::new(&self.net, EMBED_CACHE);
        let env = Environment {
            embedder: &cached,
            gallery: &gallery,
            reward,
        };
        let val = self.eval_set(Split::Val)?;
        train_selector(&self.train_items(), &env, Some(&val), &self.cfg.selector, &self.cfg.ppo)
    }

    pub fn train_selector(&self) -> Result<(SelectorNet, SelectorTrainLog)> {
        self.train_selector_with(self.cfg.reward.clone())
    }
}
