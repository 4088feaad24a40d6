use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strokesel_core::embed::{batch_loss, evaluate_pairs, sample_negatives, train_retrieval, EmbedNet, EmbedNetConfig};
use strokesel_core::experiment::{prepare, DeskConfig};
use strokesel_core::ppo::{clean_training_data, evaluate_selector, LossConfig};
use strokesel_core::selector::SelectorNet;
use strokesel_core::synth::{generate_dataset, GeneratorConfig, Split};
use strokesel_tape::finite_diff_check;

#[test]
fn batched_triplet_loss_matches_finite_differences() {
    let ds = generate_dataset(6, &GeneratorConfig::default(), [1.0, 0.0, 0.0], 2).unwrap();
    let net = EmbedNet::new(EmbedNetConfig {
        input_hw: 16,
        channels: vec![3, 6],
        embed_dim: 6,
        margin: 1.0,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let mut store = net.store().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for id in store.ids().collect::<Vec<_>>() {
        if store.get(id).name.ends_with(".b") {
            let t = strokesel_tape::Tensor::randn(store.get(id).value.shape().to_vec(), 0.2, &mut rng);
            store.get_mut(id).value = t;
        }
    }
    let train = ds.split(Split::Train);
    let sketches: Vec<_> = train.iter().map(|p| net.rasterize(&p.sketch.sketch)).collect();
    let photos: Vec<_> = train
        .iter()
        .map(|p| {
            let small = strokesel_core::sketch::RasterImage::from_pixels(
                16,
                16,
                (0..256).map(|i| p.photo.get(i / 16 * 4, i % 16 * 4)).collect(),
            );
            small.unwrap()
        })
        .collect();
    let negs = sample_negatives(sketches.len(), &mut rng);
    let report = finite_diff_check(
        &store,
        |t, s| Ok(batch_loss(&net, t, s, &sketches, &photos, &negs).unwrap()),
        1e-5,
        1e-5,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn retrieval_training_beats_chance_by_five_times() {
    let ds = generate_dataset(200, &GeneratorConfig::default(), [0.7, 0.15, 0.15], 11).unwrap();
    let cfg = EmbedNetConfig {
        lr: 1e-3,
        epochs: 8,
        seed: 4,
        ..Default::default()
    };
    let (net, log) = train_retrieval(&ds, &cfg).unwrap();
    let val = ds.split(Split::Val);
    let (acc1, _, _) = evaluate_pairs(&net, &val).unwrap();
    assert!(acc1 >= 5.0 / val.len() as f64, "acc1 {acc1}, log {log:?}");
}

#[test]
fn seeded_training_is_bit_reproducible() {
    let cfg = DeskConfig::smoke();
    let a = prepare(&cfg).unwrap();
    let b = prepare(&cfg).unwrap();
    assert_eq!(a.retrieval_log, b.retrieval_log);
    assert_eq!(a.net.save(), b.net.save());
    let (sa, la) = a.train_selector().unwrap();
    let (sb, lb) = b.train_selector().unwrap();
    assert_eq!(la, lb);
    assert_eq!(sa.save(), sb.save());
    let back = SelectorNet::load(&sa.save()).unwrap();
    assert_eq!(back.save(), sa.save());
    let embed_back = EmbedNet::load(&a.net.save()).unwrap();
    assert_eq!(embed_back.save(), a.net.save());
}

#[test]
fn smoke_pipeline_runs_end_to_end() {
    let p = prepare(&DeskConfig::smoke()).unwrap();
    let (sel, log) = p.train_selector().unwrap();
    assert_eq!(log.epochs.len(), 2);
    assert!(log.epochs.iter().all(|e| e.mean_reward.is_finite()));
    let test = p.eval_set(Split::Test).unwrap();
    let (a1, a5, ranks) = evaluate_selector(Some(&sel), &p.net, &test).unwrap();
    assert!((0.0..=1.0).contains(&a1) && a1 <= a5);
    assert_eq!(ranks.len(), test.items.len());
    let cleaned = clean_training_data(&test.items, &sel).unwrap();
    for (c, o) in cleaned.iter().zip(&test.items) {
        assert!(c.sketch.k() <= o.sketch.k() && c.sketch.k() >= 1);
        assert_eq!(c.noise_flags.len(), c.sketch.k());
        assert_eq!(c.pair_id, o.pair_id);
    }
    assert!(log.csv().starts_with("epoch,"));
}

#[test]
fn stronger_entropy_bonus_keeps_the_policy_less_certain() {
    let mut cfg = DeskConfig::smoke();
    cfg.ppo.epochs = 8;
    cfg.ppo.lr = 3e-3;
    cfg.ppo.warm_epochs = 8;
    let p = prepare(&cfg).unwrap();
    let (_, base) = p.train_selector().unwrap();
    let mut hot = p.clone();
    hot.cfg.ppo.loss = LossConfig {
        c2: 100.0 * cfg.ppo.loss.c2,
        ..cfg.ppo.loss
    };
    let (_, high) = hot.train_selector().unwrap();
    let last = |l: &strokesel_core::ppo::SelectorTrainLog| l.epochs.last().unwrap().entropy;
    assert!(last(&high) > last(&base), "{} vs {}", last(&high), last(&base));
}
