//! Stroke-subset selector: a local LSTM embeds each stroke from its points,
//! a global LSTM runs over the stroke embeddings, and the fused features
//! feed a per-stroke keep/drop head and a critic.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strokesel_tape::{ParamStore, Tape, Tensor, Var};

use crate::checkpoint::{self, config_get, ConfigBlock};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Lstm};
use crate::sketch::{StrokeMask, VectorSketch};

pub const SELECTOR_MAGIC: &[u8; 8] = b"SSELSEL1";

/// Floor applied before taking the log of a probability.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Softmax over `[select, ignore]` logits.
    Categorical,
    /// One sigmoid logit per stroke.
    Bernoulli,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Categorical => "categorical",
            HeadKind::Bernoulli => "bernoulli",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(HeadKind::Categorical),
            "bernoulli" => Ok(HeadKind::Bernoulli),
            _ => Err(Error::InvalidConfig(format!("unknown head {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorConfig {
    pub hidden: usize,
    pub head: HeadKind,
    /// Feed per-point deltas alongside absolute coordinates.
    pub use_deltas: bool,
    /// Multiplier on deltas (already divided by canvas size).
    pub delta_scale: f64,
    pub seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            head: HeadKind::Categorical,
            use_deltas: true,
            delta_scale: 10.0,
            seed: 0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden < 8 {
            return Err(Error::InvalidConfig("selector hidden size must be at least 8".into()));
        }
        Ok(())
    }

    pub fn point_dims(&self) -> usize {
        if self.use_deltas {
            4
        } else {
            2
        }
    }

    fn to_block(&self) -> ConfigBlock {
        vec![
            ("hidden".into(), self.hidden.to_string()),
            ("head".into(), self.head.to_string()),
            ("use_deltas".into(), self.use_deltas.to_string()),
            ("delta_scale".into(), format!("{:?}", self.delta_scale)),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    fn from_block(b: &ConfigBlock) -> Result<Self> {
        Ok(Self {
            hidden: config_get(b, "hidden")?,
            head: config_get::<String>(b, "head")?
                .parse()
                .map_err(|_| Error::CorruptCheckpoint("bad head".into()))?,
            use_deltas: config_get(b, "use_deltas")?,
            delta_scale: config_get(b, "delta_scale")?,
            seed: config_get(b, "seed")?,
        })
    }
}

/// Per-point inputs for every stroke: `[x/W, y/H]`, plus the scaled step
/// from the previous point when deltas are on (zero for the first point).
pub fn stroke_inputs(sketch: &VectorSketch, cfg: &SelectorConfig) -> Vec<Tensor> {
    let (w, h) = (sketch.canvas_w() as f64, sketch.canvas_h() as f64);
    let dims = cfg.point_dims();
    sketch
        .strokes()
        .iter()
        .map(|s| {
            let pts = s.points();
            let mut data = Vec::with_capacity(pts.len() * dims);
            for (i, p) in pts.iter().enumerate() {
                data.push(p.x / w);
                data.push(p.y / h);
                if cfg.use_deltas {
                    let prev = if i == 0 { *p } else { pts[i - 1] };
                    data.push((p.x - prev.x) / w * cfg.delta_scale);
                    data.push((p.y - prev.y) / h * cfg.delta_scale);
                }
            }
            Tensor::new([pts.len(), dims], data).expect("sized")
        })
        .collect()
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct PolicyVars {
    /// `[K, 2]`, columns `[select, ignore]`.
    pub probs: Var,
    /// Fused stroke features `[K, d]`.
    pub features: Var,
    /// Per-stroke local features `[K, d]`.
    pub local: Var,
    /// Global feature `[1, d]`.
    pub global: Var,
    /// Critic estimate `[1, 1]`.
    pub value: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub probs: Vec<[f64; 2]>,
    pub stroke_features: Vec<Vec<f64>>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct SelectorNet {
    cfg: SelectorConfig,
    store: ParamStore,
    local: Lstm,
    global: Lstm,
    norm: LayerNorm,
    policy: Linear,
    critic: Linear,
}

impl SelectorNet {
    pub fn new(cfg: SelectorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let d = cfg.hidden;
        let local = Lstm::new(&mut store, "local", cfg.point_dims(), d, &mut rng);
        let global = Lstm::new(&mut store, "global", d, d, &mut rng);
        let norm = LayerNorm::new(&mut store, "fuse", d);
        let out = match cfg.head {
            HeadKind::Categorical => 2,
            HeadKind::Bernoulli => 1,
        };
        let policy = Linear::new(&mut store, "policy", d, out, &mut rng);
        // start close to a uniform policy
        store.get_mut(policy.w).value.data_mut().iter_mut().for_each(|v| *v *= 0.01);
        let critic = Linear::new(&mut store, "critic", d, 1, &mut rng);
        Ok(Self {
            cfg,
            store,
            local,
            global,
            norm,
            policy,
            critic,
        })
    }

    pub fn config(&self) -> &SelectorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn policy_head(&self) -> Linear {
        self.policy
    }

    pub fn critic_head(&self) -> Linear {
        self.critic
    }

    /// Records the forward pass with parameters taken from `store` (which
    /// must share this net's layout).
    pub fn forward_vars(&self, tape: &mut Tape, store: &ParamStore, sketch: &VectorSketch) -> Result<PolicyVars> {
        let k = sketch.k();
        if k == 0 {
            return Err(Error::EmptySketch);
        }
        let inputs = stroke_inputs(sketch, &self.cfg);
        let local = self.local.run_batched(tape, store, &inputs)?;
        let global = self.global.run(tape, store, local)?;
        let fused = tape.add_row(local, global)?;
        let features = self.norm.forward(tape, store, fused)?;
        let logits = self.policy.forward(tape, store, features)?;
        let logits = match self.cfg.head {
            HeadKind::Categorical => logits,
            HeadKind::Bernoulli => {
                let zero = tape.constant(Tensor::zeros([k, 1]))?;
                tape.concat_cols(&[logits, zero])?
            }
        };
        let probs = tape.softmax_rows(logits)?;
        let pooled = tape.mean_rows(features)?;
        let value = self.critic.forward(tape, store, pooled)?;
        Ok(PolicyVars {
            probs,
            features,
            local,
            global,
            value,
        })
    }

    pub fn encode(&self, sketch: &VectorSketch) -> Result<PolicyOutput> {
        let mut tape = Tape::new();
        let v = self.forward_vars(&mut tape, &self.store, sketch)?;
        let p = tape.value(v.probs).data();
        let f = tape.value(v.features);
        let d = f.cols();
        Ok(PolicyOutput {
            probs: p.chunks_exact(2).map(|r| [r[0], r[1]]).collect(),
            stroke_features: f.data().chunks_exact(d).map(<[f64]>::to_vec).collect(),
            value: tape.scalar(v.value),
        })
    }

    /// Critic estimate only.
    pub fn value(&self, sketch: &VectorSketch) -> Result<f64> {
        Ok(self.encode(sketch)?.value)
    }

    pub fn save(&self) -> Vec<u8> {
        checkpoint::encode(SELECTOR_MAGIC, &self.cfg.to_block(), &self.store)
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        let (block, loaded) = checkpoint::decode(SELECTOR_MAGIC, bytes)?;
        let mut net = Self::new(SelectorConfig::from_block(&block)?)?;
        checkpoint::restore_into(&mut net.store, &loaded)?;
        Ok(net)
    }
}

/// Independent per-stroke draws; returns the mask and `Σ log p(a_i)`.
pub fn sample_mask<R: Rng>(probs: &[[f64; 2]], rng: &mut R) -> (StrokeMask, f64) {
    let bits: Vec<bool> = probs.iter().map(|p| rng.gen::<f64>() < p[0]).collect();
    let mask = StrokeMask::new(bits);
    let lp = log_prob_of(probs, &mask).expect("same length");
    (mask, lp)
}

/// `log p(a_i)` for each stroke, floored at [`LOG_FLOOR`].
pub fn stroke_log_probs(probs: &[[f64; 2]], mask: &StrokeMask) -> Result<Vec<f64>> {
    if probs.len() != mask.len() {
        return Err(Error::LengthMismatch {
            mask: mask.len(),
            strokes: probs.len(),
        });
    }
    Ok(probs
        .iter()
        .zip(mask.actions())
        .map(|(p, a)| p[a].max(LOG_FLOOR).ln())
        .collect())
}

pub fn log_prob_of(probs: &[[f64; 2]], mask: &StrokeMask) -> Result<f64> {
    Ok(stroke_log_probs(probs, mask)?.iter().sum())
}

/// Mean over strokes of `-Σ_a p log p`.
pub fn entropy(probs: &[[f64; 2]]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let h: f64 = probs
        .iter()
        .map(|r| r.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum::<f64>())
        .sum();
    h / probs.len() as f64
}

/// Per-stroke argmax; ties select.
pub fn greedy_mask(probs: &[[f64; 2]]) -> StrokeMask {
    StrokeMask::new(probs.iter().map(|p| p[0] >= p[1]).collect())
}

/// Greedy mask, falling back to every stroke when it would drop them all.
pub fn greedy_nonempty(probs: &[[f64; 2]]) -> StrokeMask {
    let m = greedy_mask(probs);
    if m.selected() == 0 {
        StrokeMask::all(probs.len())
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::parse_sketch;

    fn sketch() -> VectorSketch {
        parse_sketch("canvas 64 64\nstroke 1,1 10,4 20,9\nstroke 30,30 31,40\nstroke 5,50 6,51 9,55 12,60\n").unwrap()
    }

    #[test]
    fn rows_sum_to_one_for_both_heads() {
        for head in [HeadKind::Categorical, HeadKind::Bernoulli] {
            let net = SelectorNet::new(SelectorConfig {
                hidden: 8,
                head,
                ..Default::default()
            })
            .unwrap();
            let out = net.encode(&sketch()).unwrap();
            assert_eq!(out.probs.len(), 3);
            for r in &out.probs {
                assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
            }
            assert!(out.value.is_finite());
        }
    }

    #[test]
    fn degenerate_rows() {
        let (m, lp) = sample_mask(&[[1.0, 0.0]; 4], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(m, StrokeMask::all(4));
        assert_eq!(lp, 0.0);
        assert_eq!(entropy(&[[1.0, 0.0], [0.0, 1.0]]), 0.0);
        let u = [[0.5, 0.5]; 3];
        assert!((log_prob_of(&u, &StrokeMask::all(3)).unwrap() - 3.0 * 0.5f64.ln()).abs() < 1e-15);
        assert!((entropy(&u) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn greedy_ties_select() {
        let m = greedy_mask(&[[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]]);
        assert_eq!(m.bits(), &[true, true, false]);
    }

    #[test]
    fn log_prob_length_mismatch() {
        assert!(matches!(
            log_prob_of(&[[0.5, 0.5]], &StrokeMask::all(2)),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = SelectorNet::new(SelectorConfig {
            hidden: 8,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let back = SelectorNet::load(&net.save()).unwrap();
        assert_eq!(back.encode(&sketch()).unwrap(), net.encode(&sketch()).unwrap());
        assert!(crate::embed::EmbedNet::load(&net.save()).is_err());
    }

    #[test]
    fn strict_mode_uses_two_inputs() {
        let cfg = SelectorConfig {
            use_deltas: false,
            ..Default::default()
        };
        let inputs = stroke_inputs(&sketch(), &cfg);
        assert_eq!(inputs[0].shape(), &[3, 2]);
        assert_eq!(inputs[0].data()[2], 10.0 / 64.0);
    }
}
