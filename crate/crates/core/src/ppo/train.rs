use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strokesel_tape::{Adam, Tape};

use super::{ppo_loss, rollout, Environment, LossConfig, ReplayBuffer, RolloutStats, StateMode};
use crate::error::{Error, Result};
use crate::gallery::{acc_at_k, rank, Embedder, GalleryFeatures};
use crate::selector::{greedy_nonempty, SelectorConfig, SelectorNet};
use crate::sketch::{apply_mask, VectorSketch};
use crate::synth::{derive_seed, inject_noise, LabeledSketch, NoiseSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub loss: LossConfig,
    pub episode_len: usize,
    pub lr: f64,
    /// Learning rate once `warm_epochs` have passed.
    pub lr_late: f64,
    pub warm_epochs: usize,
    /// Sketches rolled out per iteration.
    pub batch_size: usize,
    /// Records per gradient step.
    pub minibatch_size: usize,
    pub updates_per_iteration: usize,
    /// Iterations between copies of the current policy into the acting one.
    pub policy_sync_every: usize,
    pub epochs: usize,
    pub buffer_capacity: usize,
    pub max_grad_norm: f64,
    pub state_mode: StateMode,
    /// Noise strokes planted into each training sketch, redrawn every epoch.
    pub noise_strokes: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            episode_len: 5,
            lr: 1e-4,
            lr_late: 1e-5,
            warm_epochs: 15,
            batch_size: 16,
            minibatch_size: 16,
            updates_per_iteration: 4,
            policy_sync_every: 20,
            epochs: 300,
            buffer_capacity: 4096,
            max_grad_norm: 0.5,
            state_mode: StateMode::Chained,
            noise_strokes: 3,
            noise: NoiseSpec::default(),
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let e = self.loss.clip_eps;
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::InvalidConfig("clip epsilon must be in (0, 1)".into()));
        }
        if self.episode_len == 0 || self.batch_size == 0 || self.minibatch_size == 0 || self.policy_sync_every == 0 {
            return Err(Error::InvalidConfig(
                "episode_len, batch sizes and policy_sync_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A clean training sketch and the id of its paired photo.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub sketch: VectorSketch,
    pub pair_id: String,
}

/// Fixed (already noised) sketches and the gallery they are ranked in.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub items: Vec<LabeledSketch>,
    pub gallery: GalleryFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorEpochLog {
    pub epoch: usize,
    pub mean_reward: f64,
    pub acc1: f64,
    pub acc5: f64,
    pub clip_frac: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectorTrainLog {
    pub epochs: Vec<SelectorEpochLog>,
    pub rollout: RolloutStats,
    pub updates: usize,
}

impl SelectorTrainLog {
    pub fn csv(&self) -> String {
        let mut s = String::from("epoch,mean_reward,acc1,acc5,clip_frac,entropy\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                e.epoch, e.mean_reward, e.acc1, e.acc5, e.clip_frac, e.entropy
            ));
        }
        s
    }
}

/// Acc@1, Acc@5 and ranks of the eval sketches, after greedy selection
/// when a selector is given.
pub fn evaluate_selector<E: Embedder + ?Sized>(
    selector: Option<&SelectorNet>,
    embedder: &E,
    eval: &EvalSet,
) -> Result<(f64, f64, Vec<usize>)> {
    let ranks = eval
        .items
        .iter()
        .map(|it| {
            let s = match selector {
                Some(sel) => {
                    let m = greedy_nonempty(&sel.encode(&it.sketch)?.probs);
                    apply_mask(&it.sketch, &m)?
                }
                None => it.sketch.clone(),
            };
            Ok(rank(&embedder.embed_sketch(&s)?, &eval.gallery, &it.pair_id)?.rank)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((acc_at_k(&ranks, 1), acc_at_k(&ranks, 5), ranks))
}

/// Alternates rollouts by the acting (old) policy with clipped
/// actor-critic updates of the current one.
pub fn train_selector(
    train: &[TrainItem],
    env: &Environment<'_>,
    eval: Option<&EvalSet>,
    sel_cfg: &SelectorConfig,
    cfg: &PpoConfig,
) -> Result<(SelectorNet, SelectorTrainLog)> {
    cfg.validate()?;
    env.reward.validate()?;
    if train.is_empty() {
        return Err(Error::DatasetTooSmall("no training sketches".into()));
    }
    let mut net = SelectorNet::new(sel_cfg.clone())?;
    let mut acting = net.clone();
    let mut adam = Adam::new(net.store(), cfg.lr);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5E1E_C702));
    let mut log = SelectorTrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut iteration = 0usize;
    for epoch in 1..=cfg.epochs {
        adam.set_lr(if epoch <= cfg.warm_epochs { cfg.lr } else { cfg.lr_late });
        order.shuffle(&mut rng);
        let (mut reward_sum, mut reward_n) = (0.0, 0usize);
        let (mut clip_sum, mut ent_sum, mut upd) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            for &i in chunk {
                let item = &train[i];
                let mut nrng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, epoch as u64), i as u64));
                let noisy = inject_noise(&item.sketch, &item.pair_id, cfg.noise_strokes, &cfg.noise, &mut nrng)?;
                let (recs, stats) = rollout(
                    &noisy.sketch,
                    &item.pair_id,
                    &acting,
                    env,
                    cfg.episode_len,
                    cfg.state_mode,
                    &mut rng,
                )?;
                log.rollout += stats;
                reward_sum += recs.iter().map(|r| r.reward).sum::<f64>();
                reward_n += recs.len();
                buffer.extend(recs);
            }
            for _ in 0..cfg.updates_per_iteration {
                let batch = buffer.sample(cfg.minibatch_size, &mut rng);
                let mut tape = Tape::new();
                let (loss, diag) = ppo_loss(&mut tape, &net, net.store(), &batch, &cfg.loss)?;
                let mut grads = tape.backward(loss)?.to_param_grads(net.store());
                drop(tape);
                if cfg.max_grad_norm > 0.0 {
                    grads.clip_norm(cfg.max_grad_norm);
                }
                adam.step(net.store_mut(), &grads)?;
                clip_sum += diag.clip_frac;
                ent_sum += diag.entropy;
                upd += 1;
            }
            log.updates += cfg.updates_per_iteration;
            iteration += 1;
            if iteration.is_multiple_of(cfg.policy_sync_every) {
                acting = net.clone();
            }
        }
        let (acc1, acc5) = match eval {
            Some(ev) => {
                let (a1, a5, _) = evaluate_selector(Some(&net), env.embedder, ev)?;
                (a1, a5)
            }
            None => (f64::NAN, f64::NAN),
        };
        log.epochs.push(SelectorEpochLog {
            epoch,
            mean_reward: reward_sum / reward_n.max(1) as f64,
            acc1,
            acc5,
            clip_frac: clip_sum / upd.max(1) as f64,
            entropy: ent_sum / upd.max(1) as f64,
        });
    }
    Ok((net, log))
}
