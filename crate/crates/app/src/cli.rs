use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strokesel_core::embed::{evaluate_pairs, train_on, train_retrieval, EmbedNet, RetrievalLog};
use strokesel_core::experiment::Prepared;
use strokesel_core::gallery::{build_gallery, prefix_episode, GalleryFeatures};
use strokesel_core::oracle::{
    drop_event_fraction, exhaustive_best_subset, gating_eval, linear_limit, noise_resistance_on, GatingReport,
    DEFAULT_K_CAP,
};
use strokesel_core::ppo::{augment, clean_training_data};
use strokesel_core::selector::SelectorNet;
use strokesel_core::sketch::{parse_sketch, serialize_sketch, VectorSketch};
use strokesel_core::synth::{derive_seed, generate_dataset, load_dataset, write_dataset, Dataset, Pair, Split};

use crate::config::{GalleryScope, RunConfig};
use crate::error::{AppError, Result};
use crate::server::{self, AppState, Models, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "strokesel", version, about = "Noise-tolerant sketch retrieval by stroke-subset selection")]
pub struct Cli {
    /// Run configuration file (flat `key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; same as `--set paths.out=DIR`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Base seed; same as `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override a config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic photo/sketch dataset.
    GenData {
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Train the triplet embedding net.
    TrainRetrieval {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the stroke selector with PPO against the frozen embedding net.
    TrainSelector {
        #[arg(long)]
        epochs: Option<usize>,
        /// neg_rank, inv_rank, neg_triplet, inv_triplet_eps or combined.
        #[arg(long)]
        reward: Option<String>,
    },
    /// Noise resistance on held-out sketches with planted noise.
    Eval {
        #[arg(long)]
        noise: Option<usize>,
    },
    /// Exhaustive best-subset search.
    Oracle {
        #[arg(long, default_value_t = DEFAULT_K_CAP)]
        k_cap: usize,
        /// Single sketch document; the default is every noisy test sketch.
        #[arg(long, requires = "pair_id")]
        sketch: Option<PathBuf>,
        /// Paired photo of `--sketch`.
        #[arg(long)]
        pair_id: Option<String>,
        /// Only the first N test sketches.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Critic-gated on-the-fly retrieval over stroke prefixes.
    Gate {
        /// Threshold; may be repeated.
        #[arg(long = "tau")]
        taus: Vec<f64>,
    },
    /// Sample stroke subsets of a sketch from the policy.
    Augment {
        #[arg(long)]
        sketch: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
    },
    /// Drop the strokes the selector rejects from noisy training sketches,
    /// retrain retrieval and compare.
    Clean,
    /// Serve the JSON API.
    Serve {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainRetrieval { .. } => "train-retrieval",
            Command::TrainSelector { .. } => "train-selector",
            Command::Eval { .. } => "eval",
            Command::Oracle { .. } => "oracle",
            Command::Gate { .. } => "gate",
            Command::Augment { .. } => "augment",
            Command::Clean => "clean",
            Command::Serve { .. } => "serve",
        }
    }

    /// Flags that stand in for config keys.
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        match self {
            Command::GenData { pairs } => put("data.n_pairs", pairs.map(|x| x.to_string())),
            Command::TrainRetrieval { epochs } => put("embed.epochs", epochs.map(|x| x.to_string())),
            Command::TrainSelector { epochs, reward } => {
                put("ppo.epochs", epochs.map(|x| x.to_string()));
                put("reward.variant", reward.clone());
            }
            Command::Eval { noise } => put("eval.noise_strokes", noise.map(|x| x.to_string())),
            Command::Serve { addr, threshold } => {
                put("serve.addr", addr.clone());
                put("serve.threshold", threshold.map(|x| x.to_string()));
            }
            _ => {}
        }
        o
    }
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    if let Some(s) = cli.seed {
        overrides.push(("seed".to_string(), s.to_string()));
    }
    if let Some(o) = &cli.out {
        overrides.push(("paths.out".to_string(), o.display().to_string()));
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| AppError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    overrides.extend(cli.command.overrides());
    RunConfig::load(cli.config.as_deref(), &overrides)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| AppError::io(format!("writing {}", path.display()), e))
}

fn read(path: &Path, what: &'static str) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(AppError::MissingPath {
            what,
            path: path.to_path_buf(),
        });
    }
    fs::read(path).map_err(|e| AppError::io(format!("reading {}", path.display()), e))
}

fn read_sketch(path: &Path) -> Result<VectorSketch> {
    let bytes = read(path, "sketch")?;
    Ok(parse_sketch(&String::from_utf8_lossy(&bytes))?)
}

/// Loads inputs lazily for one subcommand.
struct Run {
    cfg: RunConfig,
}

impl Run {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn dataset(&self) -> Result<Dataset> {
        let m = self.cfg.manifest();
        if !m.exists() {
            return Err(AppError::MissingPath {
                what: "dataset",
                path: m,
            });
        }
        Ok(load_dataset(&m)?)
    }

    fn embed(&self) -> Result<EmbedNet> {
        Ok(EmbedNet::load(&read(&self.cfg.embed_path(), "checkpoint")?)?)
    }

    fn selector(&self) -> Result<SelectorNet> {
        Ok(SelectorNet::load(&read(&self.cfg.selector_path(), "checkpoint")?)?)
    }

    fn prepared(&self) -> Result<Prepared> {
        // checkpoints first so a missing one is reported before any heavy work
        let net = self.embed()?;
        Ok(Prepared {
            cfg: self.cfg.desk.clone(),
            dataset: self.dataset()?,
            net,
            retrieval_log: RetrievalLog::default(),
        })
    }
}

/// Runs one subcommand to completion; returns the text printed on success.
pub fn run(cli: Cli) -> Result<String> {
    let cfg = resolve_config(&cli)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| AppError::io(format!("creating {}", cfg.out_dir.display()), e))?;
    write(&cfg.out_dir.join(format!("{}.config.txt", cli.command.name())), cfg.to_text())?;
    let r = Run { cfg };
    match cli.command {
        Command::GenData { .. } => gen_data(&r),
        Command::TrainRetrieval { .. } => train_retrieval_cmd(&r),
        Command::TrainSelector { .. } => train_selector_cmd(&r),
        Command::Eval { .. } => eval(&r),
        Command::Oracle {
            k_cap,
            sketch,
            pair_id,
            limit,
        } => match (sketch, pair_id) {
            (Some(s), Some(id)) => oracle_one(&r, &s, &id, k_cap),
            (None, None) => oracle_test(&r, k_cap, limit),
            _ => Err(AppError::Usage("--pair-id needs --sketch".into())),
        },
        Command::Gate { taus } => gate(&r, taus),
        Command::Augment { sketch, n } => augment_cmd(&r, &sketch, n),
        Command::Clean => clean(&r),
        Command::Serve { .. } => serve(&r),
    }
}

fn gen_data(r: &Run) -> Result<String> {
    let d = &r.cfg.desk;
    let ds = generate_dataset(d.n_pairs, &d.generator, d.fractions, d.data_seed)?;
    let manifest = write_dataset(&ds, &r.cfg.data_dir())?;
    let (a, b, c) = ds.counts();
    Ok(format!("wrote {} ({a} train, {b} val, {c} test)\n", manifest.display()))
}

fn train_retrieval_cmd(r: &Run) -> Result<String> {
    let ds = r.dataset()?;
    let (net, log) = train_retrieval(&ds, &r.cfg.desk.embed)?;
    write(&r.cfg.embed_path(), net.save())?;
    write(&r.out("retrieval_log.csv"), log.csv())?;
    let (acc1, acc5, _) = evaluate_pairs(&net, &ds.split(Split::Val))?;
    Ok(format!(
        "wrote {}; val acc1 {acc1:.4} acc5 {acc5:.4} after {} epochs\n",
        r.cfg.embed_path().display(),
        log.epochs.len()
    ))
}

fn train_selector_cmd(r: &Run) -> Result<String> {
    let p = r.prepared()?;
    let (sel, log) = p.train_selector()?;
    write(&r.cfg.selector_path(), sel.save())?;
    write(&r.out("selector_log.csv"), log.csv())?;
    let last = log.epochs.last();
    Ok(format!(
        "wrote {}; {} updates, final val acc1 {:.4}, forced all-select {}\n",
        r.cfg.selector_path().display(),
        log.updates,
        last.map_or(f64::NAN, |e| e.acc1),
        log.rollout.forced_all_select
    ))
}

fn eval(r: &Run) -> Result<String> {
    let sel = r.selector()?;
    let p = r.prepared()?;
    let clean: Vec<_> = p.dataset.split(Split::Test).iter().map(|q| q.sketch.clone()).collect();
    let noisy = p.noisy_items(Split::Test, p.cfg.eval_noise, 0)?;
    let g = p.gallery(Split::Test)?;
    let report = noise_resistance_on(&clean, &noisy, &sel, &p.net, &g)?;
    let s = report.summary();
    write(&r.out("eval.csv"), &s)?;
    Ok(s)
}

fn all_photos_gallery(net: &EmbedNet, ds: &Dataset) -> Result<GalleryFeatures> {
    let photos: Vec<(String, &_)> = ds.pairs.iter().map(|p| (p.id.clone(), &p.photo)).collect();
    Ok(build_gallery(net, &photos)?)
}

fn oracle_one(r: &Run, sketch: &Path, pair_id: &str, k_cap: usize) -> Result<String> {
    let s = read_sketch(sketch)?;
    let net = r.embed()?;
    let g = all_photos_gallery(&net, &r.dataset()?)?;
    let rep = exhaustive_best_subset(&s, &net, &g, pair_id, k_cap)?;
    let lin = linear_limit(&s, &net, &g, pair_id)?;
    let mask: String = rep.best_mask.bits().iter().map(|b| if *b { '1' } else { '0' }).collect();
    let text = format!(
        "k,full_rank,best_rank,best_k,best_mask,subsets,best_prefix_rank,drop_events\n{},{},{},{},{},{},{},{}\n",
        s.k(),
        rep.full_rank,
        rep.best_rank,
        rep.best_k(),
        mask,
        rep.subsets_evaluated,
        lin.best_prefix_rank,
        lin.drop_events
    );
    write(&r.out("oracle_sketch.csv"), &text)?;
    Ok(text)
}

fn oracle_test(r: &Run, k_cap: usize, limit: Option<usize>) -> Result<String> {
    let p = r.prepared()?;
    let g = p.gallery(Split::Test)?;
    let mut items = p.noisy_items(Split::Test, p.cfg.eval_noise, 0)?;
    items.truncate(limit.unwrap_or(usize::MAX));
    let mut csv = String::from("pair_id,k,full_rank,best_rank,best_k,best_prefix_rank,drop_events\n");
    let mut lins = Vec::new();
    let (mut full, mut best) = (0.0, 0.0);
    for it in &items {
        let rep = exhaustive_best_subset(&it.sketch, &p.net, &g, &it.pair_id, k_cap)?;
        let lin = linear_limit(&it.sketch, &p.net, &g, &it.pair_id)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            it.pair_id,
            it.sketch.k(),
            rep.full_rank,
            rep.best_rank,
            rep.best_k(),
            lin.best_prefix_rank,
            lin.drop_events
        ));
        full += rep.full_rank as f64;
        best += rep.best_rank as f64;
        lins.push(lin);
    }
    write(&r.out("oracle.csv"), &csv)?;
    let n = items.len().max(1) as f64;
    Ok(format!(
        "{} sketches: mean full rank {:.3}, mean best-subset rank {:.3}, drop-event fraction {:.3}\n",
        items.len(),
        full / n,
        best / n,
        drop_event_fraction(&lins)
    ))
}

fn gate(r: &Run, taus: Vec<f64>) -> Result<String> {
    let taus = if taus.is_empty() { vec![0.05, 0.1, 0.2] } else { taus };
    let sel = r.selector()?;
    let p = r.prepared()?;
    let g = p.gallery(Split::Test)?;
    let episodes: Vec<(String, Vec<VectorSketch>)> = p
        .noisy_items(Split::Test, p.cfg.eval_noise, 0)?
        .into_iter()
        .map(|it| (it.pair_id, prefix_episode(&it.sketch)))
        .collect();
    let mut csv = format!("{}\n", GatingReport::csv_header());
    for tau in taus {
        csv.push_str(&gating_eval(&episodes, &sel, &p.net, &g, tau)?.csv_row());
        csv.push('\n');
    }
    write(&r.out("gating.csv"), &csv)?;
    Ok(csv)
}

fn augment_cmd(r: &Run, sketch: &Path, n: usize) -> Result<String> {
    if n == 0 {
        return Err(AppError::Usage("--n must be positive".into()));
    }
    let s = read_sketch(sketch)?;
    let sel = r.selector()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(r.cfg.desk.eval_seed, 0xa11));
    let out = augment(&s, &sel, n, &mut rng)?;
    let dir = r.out("augment");
    fs::create_dir_all(&dir).map_err(|e| AppError::io(format!("creating {}", dir.display()), e))?;
    for (i, a) in out.iter().enumerate() {
        write(&dir.join(format!("aug_{i:03}.sketch")), serialize_sketch(a))?;
    }
    Ok(format!("wrote {} subsets to {}\n", out.len(), dir.display()))
}

fn clean(r: &Run) -> Result<String> {
    let sel = r.selector()?;
    let p = r.prepared()?;
    // draw 1 keeps these apart from the draw-0 evaluation noise
    let noisy = p.noisy_items(Split::Train, p.cfg.eval_noise, 1)?;
    let cleaned = clean_training_data(&noisy, &sel)?;
    let train = p.dataset.split(Split::Train);
    let val = p.dataset.split(Split::Val);
    let with = |items: &[strokesel_core::synth::LabeledSketch]| -> Vec<Pair> {
        train
            .iter()
            .zip(items)
            .map(|(q, it)| Pair {
                sketch: it.clone(),
                ..(*q).clone()
            })
            .collect()
    };
    let (noisy_pairs, clean_pairs) = (with(&noisy), with(&cleaned));
    let run = |pairs: &[Pair]| -> Result<f64> {
        let refs: Vec<&Pair> = pairs.iter().collect();
        let (net, _) = train_on(&refs, &val, &p.cfg.embed)?;
        Ok(evaluate_pairs(&net, &val)?.0)
    };
    let acc_noisy = run(&noisy_pairs)?;
    let acc_clean = run(&clean_pairs)?;
    let dropped: usize = noisy.iter().zip(&cleaned).map(|(a, b)| a.sketch.k() - b.sketch.k()).sum();
    let noise_dropped: usize = noisy.iter().zip(&cleaned).map(|(a, b)| a.n_noise() - b.n_noise()).sum();
    let text = format!(
        "train_data,val_acc1\nnoisy,{acc_noisy:.4}\ncleaned,{acc_clean:.4}\ndelta,{:.4}\nstrokes_dropped,{dropped}\nnoise_strokes_dropped,{noise_dropped}\n",
        acc_clean - acc_noisy
    );
    write(&r.out("clean.csv"), &text)?;
    let ds = Dataset {
        pairs: p
            .dataset
            .pairs
            .iter()
            .filter(|q| q.split != Split::Train)
            .cloned()
            .chain(clean_pairs)
            .collect(),
    };
    write_dataset(&ds, &r.out("cleaned"))?;
    Ok(text)
}

/// Loads the models the service needs.
pub fn load_models(r: &RunConfig) -> Result<Models> {
    let run = Run { cfg: r.clone() };
    let selector = run.selector()?;
    let embed = run.embed()?;
    let ds = run.dataset()?;
    let gallery = match r.serve.gallery {
        GalleryScope::Test => {
            let photos: Vec<(String, &_)> = ds.split(Split::Test).iter().map(|p| (p.id.clone(), &p.photo)).collect();
            build_gallery(&embed, &photos)?
        }
        GalleryScope::All => all_photos_gallery(&embed, &ds)?,
    };
    Ok(Models {
        embed,
        selector,
        gallery,
        canvas_h: r.desk.generator.canvas,
        canvas_w: r.desk.generator.canvas,
    })
}

pub fn service_config(r: &RunConfig) -> ServiceConfig {
    ServiceConfig {
        threshold: r.serve.threshold,
        session_timeout: Duration::from_secs(r.serve.session_timeout_secs),
        top_k: r.serve.top_k,
    }
}

fn serve(r: &Run) -> Result<String> {
    let state = Arc::new(AppState::new(load_models(&r.cfg)?, service_config(&r.cfg)));
    let rt = tokio::runtime::Runtime::new().map_err(|e| AppError::io("starting runtime", e))?;
    rt.block_on(server::serve(state, &r.cfg.serve.addr))
        .map_err(|e| AppError::io(format!("serving on {}", r.cfg.serve.addr), e))?;
    Ok(String::new())
}
