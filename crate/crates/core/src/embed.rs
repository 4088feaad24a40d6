//! Sketch/photo embedding net and its triplet training loop.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strokesel_tape::{Adam, ParamId, ParamStore, Tape, Tensor, Var};

use crate::checkpoint::{self, config_get, ConfigBlock};
use crate::error::{Error, Result};
use crate::gallery::{acc_at_k, build_gallery, rank, Embedder};
use crate::nn::Linear;
use crate::sketch::{rasterize, RasterImage, VectorSketch};
use crate::synth::{Dataset, Pair, Split};

pub const EMBED_MAGIC: &[u8; 8] = b"SSELEMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedNetConfig {
    pub input_hw: usize,
    pub channels: Vec<usize>,
    pub embed_dim: usize,
    pub margin: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a validation Acc@1 improvement before stopping.
    pub patience: usize,
    pub line_width: usize,
    pub seed: u64,
}

impl Default for EmbedNetConfig {
    fn default() -> Self {
        Self {
            input_hw: crate::sketch::DEFAULT_RASTER,
            channels: vec![8, 16],
            embed_dim: 32,
            margin: 0.2,
            lr: 1e-4,
            batch_size: 16,
            epochs: 60,
            patience: 10,
            line_width: 1,
            seed: 0,
        }
    }
}

impl EmbedNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::InvalidConfig("embed_dim must be at least 2".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidConfig("margin must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidConfig("channels must be a non-empty list of positive counts".into()));
        }
        let mut hw = self.input_hw;
        for _ in &self.channels {
            if hw < 4 {
                return Err(Error::InvalidConfig(format!(
                    "input_hw {} too small for {} conv stages",
                    self.input_hw,
                    self.channels.len()
                )));
            }
            hw = (hw - 2) / 2;
        }
        Ok(())
    }

    fn to_block(&self) -> ConfigBlock {
        let ch: Vec<String> = self.channels.iter().map(ToString::to_string).collect();
        vec![
            ("input_hw".into(), self.input_hw.to_string()),
            ("channels".into(), ch.join(",")),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("margin".into(), format!("{:?}", self.margin)),
            ("lr".into(), format!("{:?}", self.lr)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("line_width".into(), self.line_width.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    fn from_block(b: &ConfigBlock) -> Result<Self> {
        let ch: String = config_get(b, "channels")?;
        let channels = ch
            .split(',')
            .map(|c| c.parse().map_err(|_| Error::CorruptCheckpoint(format!("bad channels {ch:?}"))))
            .collect::<Result<Vec<usize>>>()?;
        Ok(Self {
            input_hw: config_get(b, "input_hw")?,
            channels,
            embed_dim: config_get(b, "embed_dim")?,
            margin: config_get(b, "margin")?,
            lr: config_get(b, "lr")?,
            batch_size: config_get(b, "batch_size")?,
            epochs: config_get(b, "epochs")?,
            patience: config_get(b, "patience")?,
            line_width: config_get(b, "line_width")?,
            seed: config_get(b, "seed")?,
        })
    }
}

/// Conv(3×3, valid) → ReLU → maxpool2 per stage, global average pool,
/// linear to `embed_dim`, L2 normalization.
#[derive(Debug, Clone)]
pub struct EmbedNet {
    cfg: EmbedNetConfig,
    store: ParamStore,
    convs: Vec<(ParamId, ParamId)>,
    head: Linear,
}

impl EmbedNet {
    pub fn new(cfg: EmbedNetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        let mut cin = 1;
        for (i, &cout) in cfg.channels.iter().enumerate() {
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let k = store.add(format!("conv{i}.k"), Tensor::randn([cout, cin, 3, 3], std, &mut rng));
            let b = store.add(format!("conv{i}.b"), Tensor::zeros([cout]));
            convs.push((k, b));
            cin = cout;
        }
        let head = Linear::new(&mut store, "head", cin, cfg.embed_dim, &mut rng);
        Ok(Self {
            cfg,
            store,
            convs,
            head,
        })
    }

    pub fn config(&self) -> &EmbedNetConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn head(&self) -> Linear {
        self.head
    }

    /// Records the forward pass of one image; returns a `[1, d]` var.
    pub fn forward_var(&self, tape: &mut Tape, store: &ParamStore, image: &RasterImage) -> Result<Var> {
        let hw = self.cfg.input_hw;
        if image.h() != hw || image.w() != hw {
            return Err(Error::Tensor(strokesel_tape::TensorError::ShapeMismatch {
                op: "embed",
                lhs: vec![image.h(), image.w()],
                rhs: vec![hw, hw],
            }));
        }
        let mut x = tape.constant(Tensor::new([1, hw, hw], image.pixels().to_vec())?)?;
        for &(k, b) in &self.convs {
            let (kv, bv) = (tape.param(store, k), tape.param(store, b));
            x = tape.conv2d_valid(x, kv, bv)?;
            x = tape.relu(x)?;
            x = tape.maxpool2(x)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        let y = self.head.forward(tape, store, pooled)?;
        Ok(tape.l2_normalize_rows(y)?)
    }

    /// Embeddings for a batch, one unit-norm row per image.
    pub fn forward(&self, images: &[&RasterImage]) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|img| self.embed_image(img)).collect()
    }

    pub fn rasterize(&self, sketch: &VectorSketch) -> RasterImage {
        rasterize(sketch, self.cfg.input_hw, self.cfg.input_hw, self.cfg.line_width)
    }

    pub fn save(&self) -> Vec<u8> {
        checkpoint::encode(EMBED_MAGIC, &self.cfg.to_block(), &self.store)
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        let (block, loaded) = checkpoint::decode(EMBED_MAGIC, bytes)?;
        let cfg = EmbedNetConfig::from_block(&block)?;
        let mut net = Self::new(cfg)?;
        checkpoint::restore_into(&mut net.store, &loaded)?;
        Ok(net)
    }
}

impl Embedder for EmbedNet {
    fn dim(&self) -> usize {
        self.cfg.embed_dim
    }

    fn embed_image(&self, image: &RasterImage) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let y = self.forward_var(&mut tape, &self.store, image)?;
        Ok(tape.value(y).data().to_vec())
    }

    fn embed_sketch(&self, sketch: &VectorSketch) -> Result<Vec<f64>> {
        self.embed_image(&self.rasterize(sketch))
    }
}

fn sketch_key(sketch: &VectorSketch) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    (sketch.canvas_h(), sketch.canvas_w(), sketch.k()).hash(&mut h);
    for s in sketch.strokes() {
        s.len().hash(&mut h);
        for p in s.points() {
            p.x.to_bits().hash(&mut h);
            p.y.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// Memoizes sketch embeddings of a frozen net. Subsets recur constantly
/// during selector training, so this saves most forward passes.
#[derive(Debug)]
pub struct CachedEmbedder<'a, E: Embedder + ?Sized> {
    inner: &'a E,
    cache: Mutex<HashMap<u64, Vec<f64>>>,
    capacity: usize,
}

impl<'a, E: Embedder + ?Sized> CachedEmbedder<'a, E> {
    pub fn new(inner: &'a E, capacity: usize) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<E: Embedder + ?Sized> Embedder for CachedEmbedder<'_, E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_image(&self, image: &RasterImage) -> Result<Vec<f64>> {
        self.inner.embed_image(image)
    }

    fn embed_sketch(&self, sketch: &VectorSketch) -> Result<Vec<f64>> {
        let key = sketch_key(sketch);
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.embed_sketch(sketch)?;
        let mut c = self.cache.lock().expect("cache lock");
        if c.len() >= self.capacity {
            c.clear();
        }
        c.insert(key, v.clone());
        Ok(v)
    }
}

/// Mean over the batch of `max(0, |a-p| - |a-n| + margin)`.
pub fn triplet_loss(tape: &mut Tape, anchor: Var, positive: Var, negative: Var, margin: f64) -> Result<Var> {
    let (sa, sp, sn) = (tape.shape(anchor), tape.shape(positive), tape.shape(negative));
    if sa != sp || sa != sn {
        return Err(Error::Tensor(strokesel_tape::TensorError::ShapeMismatch {
            op: "triplet_loss",
            lhs: sa.to_vec(),
            rhs: if sa != sp { sp.to_vec() } else { sn.to_vec() },
        }));
    }
    let dp = tape.sub(anchor, positive)?;
    let dp = tape.norm_rows(dp)?;
    let dn = tape.sub(anchor, negative)?;
    let dn = tape.norm_rows(dn)?;
    let gap = tape.sub(dp, dn)?;
    let gap = tape.add_scalar(gap, margin)?;
    let hinge = tape.relu(gap)?;
    Ok(tape.mean(hinge)?)
}

/// Plain-number triplet loss for one triplet.
pub fn triplet_value(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    (d(anchor, positive) - d(anchor, negative) + margin).max(0.0)
}

/// For each of `b` anchors, a uniformly chosen other index in `0..b`.
pub fn sample_negatives<R: Rng>(b: usize, rng: &mut R) -> Vec<usize> {
    (0..b)
        .map(|i| {
            if b < 2 {
                return i;
            }
            let j = rng.gen_range(0..b - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect()
}

/// Triplet loss over a batch of pairs: negatives are photos of other pairs
/// in the same batch.
pub fn batch_loss(
    net: &EmbedNet,
    tape: &mut Tape,
    store: &ParamStore,
    sketches: &[RasterImage],
    photos: &[RasterImage],
    negatives: &[usize],
) -> Result<Var> {
    let a = sketches
        .iter()
        .map(|s| net.forward_var(tape, store, s))
        .collect::<Result<Vec<_>>>()?;
    let p = photos
        .iter()
        .map(|s| net.forward_var(tape, store, s))
        .collect::<Result<Vec<_>>>()?;
    let a = tape.concat_rows(&a)?;
    let p = tape.concat_rows(&p)?;
    let n = tape.gather_rows(p, negatives)?;
    triplet_loss(tape, a, p, n, net.cfg.margin)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl RetrievalLog {
    pub fn csv(&self) -> String {
        let mut s = String::from("epoch,loss,val_acc1\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.loss, e.val_acc1));
        }
        s
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Acc@1 and Acc@5 of clean sketches against a gallery of the same pairs'
/// photos.
pub fn evaluate_pairs<E: Embedder + ?Sized>(net: &E, pairs: &[&Pair]) -> Result<(f64, f64, Vec<usize>)> {
    let photos: Vec<(String, &RasterImage)> = pairs.iter().map(|p| (p.id.clone(), &p.photo)).collect();
    let g = build_gallery(net, &photos)?;
    let ranks = pairs
        .iter()
        .map(|p| Ok(rank(&net.embed_sketch(&p.sketch.sketch)?, &g, &p.id)?.rank))
        .collect::<Result<Vec<_>>>()?;
    Ok((acc_at_k(&ranks, 1), acc_at_k(&ranks, 5), ranks))
}

/// Trains on the train split with validation-based early stopping; the
/// returned net holds the best-validation parameters.
pub fn train_retrieval(ds: &Dataset, cfg: &EmbedNetConfig) -> Result<(EmbedNet, RetrievalLog)> {
    let train = ds.split(Split::Train);
    let val = ds.split(Split::Val);
    train_on(&train, &val, cfg)
}

pub fn train_on(train: &[&Pair], val: &[&Pair], cfg: &EmbedNetConfig) -> Result<(EmbedNet, RetrievalLog)> {
    if train.len() < 2 {
        return Err(Error::DatasetTooSmall(format!(
            "need at least 2 training pairs, got {}",
            train.len()
        )));
    }
    let mut net = EmbedNet::new(cfg.clone())?;
    let mut log = RetrievalLog::default();
    if cfg.epochs == 0 {
        return Ok((net, log));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7157_11E7);
    let mut adam = Adam::new(&net.store, cfg.lr);
    let sketch_rasters: Vec<RasterImage> = train.iter().map(|p| net.rasterize(&p.sketch.sketch)).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let sk: Vec<RasterImage> = chunk.iter().map(|&i| sketch_rasters[i].clone()).collect();
            let ph: Vec<RasterImage> = chunk.iter().map(|&i| train[i].photo.clone()).collect();
            let negs = sample_negatives(chunk.len(), &mut rng);
            let mut tape = Tape::new();
            let loss = batch_loss(&net, &mut tape, &net.store, &sk, &ph, &negs)?;
            total += tape.scalar(loss);
            batches += 1;
            let grads = tape.backward(loss)?.to_param_grads(&net.store);
            adam.step(&mut net.store, &grads)?;
        }
        let val_acc1 = if val.is_empty() {
            0.0
        } else {
            evaluate_pairs(&net, val)?.0
        };
        log.epochs.push(EpochLog {
            epoch,
            loss: total / batches.max(1) as f64,
            val_acc1,
        });
        if best.as_ref().is_none_or(|(b, _)| val_acc1 > *b) {
            best = Some((val_acc1, net.store.clone()));
            log.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        net.store = store;
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> EmbedNetConfig {
        EmbedNetConfig {
            input_hw: 16,
            channels: vec![2, 3],
            embed_dim: 4,
            ..Default::default()
        }
    }

    #[test]
    fn rows_are_unit_norm_and_deterministic() {
        let net = EmbedNet::new(small_cfg()).unwrap();
        let img = RasterImage::from_pixels(16, 16, (0..256).map(|i| ((i * 7) % 5) as f64 / 4.0).collect()).unwrap();
        let a = net.embed_image(&img).unwrap();
        let b = net.embed_image(&img).unwrap();
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_head_on_blank_image_gives_zero_row() {
        let mut net = EmbedNet::new(small_cfg()).unwrap();
        let head = net.head();
        for id in [head.w, head.b] {
            net.store_mut().get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let e = net.embed_image(&RasterImage::blank(16, 16)).unwrap();
        assert!(e.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn triplet_loss_arithmetic() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new([1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
        let p = t.constant(Tensor::new([1, 2], vec![0.1, 0.0]).unwrap()).unwrap();
        let n = t.constant(Tensor::new([1, 2], vec![0.0, 0.9]).unwrap()).unwrap();
        let l = triplet_loss(&mut t, a, p, n, 0.2).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let l = triplet_loss(&mut t, a, a, a, 0.2).unwrap();
        assert!((t.scalar(l) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn negatives_never_point_at_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for b in 2..10 {
            let n = sample_negatives(b, &mut rng);
            assert!(n.iter().enumerate().all(|(i, j)| i != *j && *j < b));
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_forward() {
        let net = EmbedNet::new(small_cfg()).unwrap();
        let img = RasterImage::from_pixels(16, 16, (0..256).map(|i| (i % 2) as f64).collect()).unwrap();
        let bytes = net.save();
        let back = EmbedNet::load(&bytes).unwrap();
        assert_eq!(back.config(), net.config());
        assert_eq!(back.embed_image(&img).unwrap(), net.embed_image(&img).unwrap());
        assert_eq!(back.save(), bytes);
    }
}
