//! Flat `key = value` run configuration.
//!
//! Every module setting has a dotted key. Unknown keys and repeated keys are
//! rejected; paths under `paths.*` must exist when the file is loaded.

use std::collections::HashSet;
use std::fmt::{self, Display};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use strokesel_core::experiment::DeskConfig;
use strokesel_core::synth::{derive_seed, ShapeFamily, MANIFEST_NAME};

use crate::error::{AppError, Result};

/// Which photos the HTTP service ranks against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GalleryScope {
    Test,
    All,
}

impl Display for GalleryScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GalleryScope::Test => "test",
            GalleryScope::All => "all",
        })
    }
}

impl FromStr for GalleryScope {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "test" => Ok(GalleryScope::Test),
            "all" => Ok(GalleryScope::All),
            _ => Err(format!("expected test or all, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeConfig {
    pub addr: String,
    /// Critic score at or above which feeding the sketch is recommended.
    pub threshold: f64,
    pub session_timeout_secs: u64,
    pub top_k: usize,
    pub gallery: GalleryScope,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            threshold: 0.2,
            session_timeout_secs: 30 * 60,
            top_k: 10,
            gallery: GalleryScope::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub desk: DeskConfig,
    /// Base seed; sub-seeds not given explicitly are derived from it.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub data_dir: Option<PathBuf>,
    pub embed_checkpoint: Option<PathBuf>,
    pub selector_checkpoint: Option<PathBuf>,
    pub serve: ServeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            desk: DeskConfig::desk(),
            seed: None,
            out_dir: PathBuf::from("runs/default"),
            data_dir: None,
            embed_checkpoint: None,
            selector_checkpoint: None,
            serve: ServeConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e: T::Err| AppError::BadValue {
        key: key.into(),
        reason: format!("{v:?}: {e}"),
    })
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(|p| parse_value(key, p.trim())).collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

macro_rules! scalar_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        const SCALAR_KEYS: &[&str] = &[$($key),*];

        fn set_scalar(c: &mut RunConfig, key: &str, v: &str) -> Option<Result<()>> {
            match key {
                $($key => Some(parse_value(key, v).map(|x| c.$($field).+ = x)),)*
                _ => None,
            }
        }

        fn get_scalar(c: &RunConfig, key: &str) -> Option<String> {
            match key {
                $($key => Some(c.$($field).+.to_string()),)*
                _ => None,
            }
        }
    };
}

scalar_keys! {
    "data.n_pairs" => desk.n_pairs,
    "data.seed" => desk.data_seed,
    "data.jitter_sigma" => desk.generator.jitter_sigma,
    "data.min_clean_strokes" => desk.generator.min_clean_strokes,
    "data.max_clean_strokes" => desk.generator.max_clean_strokes,
    "data.n_noise_strokes" => desk.generator.n_noise_strokes,
    "data.canvas" => desk.generator.canvas,
    "data.photo_hw" => desk.generator.photo_hw,
    "data.contour_points" => desk.generator.contour_points,
    "embed.input_hw" => desk.embed.input_hw,
    "embed.embed_dim" => desk.embed.embed_dim,
    "embed.margin" => desk.embed.margin,
    "embed.lr" => desk.embed.lr,
    "embed.batch_size" => desk.embed.batch_size,
    "embed.epochs" => desk.embed.epochs,
    "embed.patience" => desk.embed.patience,
    "embed.line_width" => desk.embed.line_width,
    "embed.seed" => desk.embed.seed,
    "selector.hidden" => desk.selector.hidden,
    "selector.head" => desk.selector.head,
    "selector.use_deltas" => desk.selector.use_deltas,
    "selector.delta_scale" => desk.selector.delta_scale,
    "selector.seed" => desk.selector.seed,
    "ppo.clip_eps" => desk.ppo.loss.clip_eps,
    "ppo.c1" => desk.ppo.loss.c1,
    "ppo.c2" => desk.ppo.loss.c2,
    "ppo.ratio" => desk.ppo.loss.ratio,
    "ppo.episode_len" => desk.ppo.episode_len,
    "ppo.lr" => desk.ppo.lr,
    "ppo.lr_late" => desk.ppo.lr_late,
    "ppo.warm_epochs" => desk.ppo.warm_epochs,
    "ppo.batch_size" => desk.ppo.batch_size,
    "ppo.minibatch_size" => desk.ppo.minibatch_size,
    "ppo.updates_per_iteration" => desk.ppo.updates_per_iteration,
    "ppo.policy_sync_every" => desk.ppo.policy_sync_every,
    "ppo.epochs" => desk.ppo.epochs,
    "ppo.buffer_capacity" => desk.ppo.buffer_capacity,
    "ppo.max_grad_norm" => desk.ppo.max_grad_norm,
    "ppo.state_mode" => desk.ppo.state_mode,
    "ppo.noise_strokes" => desk.ppo.noise_strokes,
    "ppo.seed" => desk.ppo.seed,
    "reward.variant" => desk.reward.variant,
    "reward.w1" => desk.reward.w1,
    "reward.w2" => desk.reward.w2,
    "reward.eps_r" => desk.reward.eps_r,
    "reward.margin" => desk.reward.margin,
    "eval.noise_strokes" => desk.eval_noise,
    "eval.seed" => desk.eval_seed,
    "serve.addr" => serve.addr,
    "serve.threshold" => serve.threshold,
    "serve.session_timeout_secs" => serve.session_timeout_secs,
    "serve.top_k" => serve.top_k,
    "serve.gallery" => serve.gallery,
}

const OTHER_KEYS: &[&str] = &[
    "seed",
    "paths.out",
    "paths.data",
    "paths.embed_checkpoint",
    "paths.selector_checkpoint",
    "data.fractions",
    "data.families",
    "embed.channels",
    "noise.min_points",
    "noise.max_points",
    "noise.max_step",
];

const SUB_SEEDS: [&str; 5] = ["data.seed", "embed.seed", "selector.seed", "ppo.seed", "eval.seed"];

impl RunConfig {
    /// Every accepted key, in dump order.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        OTHER_KEYS.iter().chain(SCALAR_KEYS).copied()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if let Some(r) = set_scalar(self, key, v) {
            return r;
        }
        let path = || PathBuf::from(v);
        match key {
            "seed" => self.seed = Some(parse_value(key, v)?),
            "paths.out" => self.out_dir = path(),
            "paths.data" => self.data_dir = Some(path()),
            "paths.embed_checkpoint" => self.embed_checkpoint = Some(path()),
            "paths.selector_checkpoint" => self.selector_checkpoint = Some(path()),
            "data.fractions" => {
                let f: Vec<f64> = parse_list(key, v)?;
                self.desk.fractions = f.try_into().map_err(|_| AppError::BadValue {
                    key: key.into(),
                    reason: "expected three fractions".into(),
                })?;
            }
            "data.families" => self.desk.generator.families = parse_list::<ShapeFamily>(key, v)?,
            "embed.channels" => self.desk.embed.channels = parse_list(key, v)?,
            // planted eval noise and PPO training noise share one shape
            "noise.min_points" => {
                let x = parse_value(key, v)?;
                self.desk.generator.noise.min_points = x;
                self.desk.ppo.noise.min_points = x;
            }
            "noise.max_points" => {
                let x = parse_value(key, v)?;
                self.desk.generator.noise.max_points = x;
                self.desk.ppo.noise.max_points = x;
            }
            "noise.max_step" => {
                let x = parse_value(key, v)?;
                self.desk.generator.noise.max_step = x;
                self.desk.ppo.noise.max_step = x;
            }
            _ => return Err(AppError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(v) = get_scalar(self, key) {
            return Some(v);
        }
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        match key {
            "seed" => self.seed.map(|s| s.to_string()),
            "paths.out" => Some(self.out_dir.display().to_string()),
            "paths.data" => p(&self.data_dir),
            "paths.embed_checkpoint" => p(&self.embed_checkpoint),
            "paths.selector_checkpoint" => p(&self.selector_checkpoint),
            "data.fractions" => Some(join(&self.desk.fractions)),
            "data.families" => Some(join(&self.desk.generator.families)),
            "embed.channels" => Some(join(&self.desk.embed.channels)),
            "noise.min_points" => Some(self.desk.generator.noise.min_points.to_string()),
            "noise.max_points" => Some(self.desk.generator.noise.max_points.to_string()),
            "noise.max_step" => Some(self.desk.generator.noise.max_step.to_string()),
            _ => None,
        }
    }

    /// Parses config text on top of the defaults. Later `overrides` win over
    /// the file; `seed` fills in whichever sub-seeds neither of them set.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(AppError::Usage(format!("config line {}: {k} given twice", n + 1)));
            }
            c.set(k, v.trim())?;
        }
        for (k, v) in overrides {
            c.set(k, v)?;
            seen.insert(k.clone());
        }
        if let Some(base) = c.seed {
            for (i, key) in SUB_SEEDS.iter().enumerate() {
                if !seen.contains(*key) {
                    c.set(key, &derive_seed(base, i as u64).to_string())?;
                }
            }
        }
        Ok(c)
    }

    /// Reads a config file (or the defaults) and checks the referenced paths.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| AppError::io(format!("reading {}", p.display()), e))?,
            None => String::new(),
        };
        let c = Self::parse(&text, overrides)?;
        c.check_paths()?;
        Ok(c)
    }

    pub fn check_paths(&self) -> Result<()> {
        let given = [
            ("dataset", &self.data_dir),
            ("checkpoint", &self.embed_checkpoint),
            ("checkpoint", &self.selector_checkpoint),
        ];
        for (what, p) in given {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(AppError::MissingPath { what, path: p.clone() });
                }
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::keys() {
            if let Some(v) = self.get(k) {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.data_dir().join(MANIFEST_NAME)
    }

    pub fn embed_path(&self) -> PathBuf {
        self.embed_checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("embed.ckpt"))
    }

    pub fn selector_path(&self) -> PathBuf {
        self.selector_checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("selector.ckpt"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut c = RunConfig::default();
        c.set("embed.channels", "4,8,16").unwrap();
        c.set("data.families", "polygon,spline-blob").unwrap();
        c.set("serve.gallery", "all").unwrap();
        c.set("seed", "5").unwrap();
        let back = RunConfig::parse(&c.to_text(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_and_repeated_keys_are_usage_errors() {
        let e = RunConfig::parse("embed.lrr = 1", &[]).unwrap_err();
        assert!(matches!(e, AppError::UnknownKey(_)));
        assert_eq!(e.exit_code(), 1);
        assert!(RunConfig::parse("ppo.lr = 1\nppo.lr = 2", &[]).is_err());
        assert!(RunConfig::parse("ppo.lr 1", &[]).is_err());
        assert!(matches!(
            RunConfig::parse("ppo.lr = fast", &[]).unwrap_err(),
            AppError::BadValue { .. }
        ));
    }

    #[test]
    fn base_seed_fills_only_unset_sub_seeds() {
        let c = RunConfig::parse("seed = 9\nppo.seed = 1", &[]).unwrap();
        assert_eq!(c.desk.ppo.seed, 1);
        assert_eq!(c.desk.data_seed, derive_seed(9, 0));
        assert_eq!(c.desk.eval_seed, derive_seed(9, 4));
        let o = RunConfig::parse("seed = 9", &[("data.seed".into(), "3".into())]).unwrap();
        assert_eq!(o.desk.data_seed, 3);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let c = RunConfig::parse("# desk run\n\nppo.epochs = 4  # short\n", &[]).unwrap();
        assert_eq!(c.desk.ppo.epochs, 4);
    }

    #[test]
    fn missing_referenced_paths_fail_at_load() {
        let e = RunConfig::load(None, &[("paths.embed_checkpoint".into(), "/nonexistent/e.ckpt".into())]).unwrap_err();
        assert_eq!(e.name(), "MissingCheckpoint");
        assert_eq!(e.exit_code(), 2);
    }
}
