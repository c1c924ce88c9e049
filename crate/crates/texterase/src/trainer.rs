//! End-to-end training: Adam with a geometric learning-rate schedule,
//! batch-norm freeze for fine-tuning, per-epoch checkpoints, resumable
//! from the last one, with a JSON-lines loss log.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::resize_pad_to;
use crate::imagecore::{binarize, load_image, load_mask, ImageBuffer, ImageError, StrokeMask};
use crate::losses::{total_loss, FeatureExtractor, LossBreakdown, LossWeights, TotalLossInputs, VggExtractor};
use crate::net::checkpoint::{load_checkpoint, save_checkpoint};
use crate::net::{images_to_batch, text_masks_to_batch, ErasingNetwork, NetError, NetworkConfig};
use crate::synthgen::{Manifest, SynthError};
use texterase_tensor::optim::Adam;
use texterase_tensor::rng::mix;
use texterase_tensor::{Graph, Rng, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at step {step}: {breakdown:?}")]
    NonFiniteLoss { step: u64, breakdown: LossBreakdown },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "TrainConfig::default_batch")]
    pub batch_size: usize,
    #[serde(default = "TrainConfig::default_lr")]
    pub lr_initial: f64,
    #[serde(default = "TrainConfig::default_decay")]
    pub lr_decay_per_epoch: f64,
    #[serde(default = "TrainConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "TrainConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "TrainConfig::default_bn_freeze")]
    pub bn_freeze_after_epochs: u64,
    pub epochs: u64,
    pub dataset_manifest: PathBuf,
    pub checkpoint_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub loss_weights: LossWeights,
    /// Frozen feature-extractor weights; a seeded random reduced-width
    /// extractor is used when absent.
    #[serde(default)]
    pub vgg_weights: Option<PathBuf>,
    #[serde(default = "TrainConfig::default_vgg_divisor")]
    pub vgg_width_divisor: usize,
    /// Serialize data loading so runs are reproducible step for step.
    #[serde(default)]
    pub deterministic: bool,
}

impl TrainConfig {
    fn default_batch() -> usize {
        8
    }
    fn default_lr() -> f64 {
        2e-4
    }
    fn default_decay() -> f64 {
        0.9
    }
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_bn_freeze() -> u64 {
        10
    }
    fn default_vgg_divisor() -> usize {
        8
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Dataset("batch_size must be >= 1".into()));
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch <= 1.0) {
            return Err(TrainError::Dataset("lr decay must be in (0,1]".into()));
        }
        Ok(())
    }
}

/// lr(e) = lr_initial · decay^e — the schedule that starts at 2·10⁻⁴ and
/// decays to nine tenths after every epoch.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: u64) -> f64 {
    cfg.lr_initial * cfg.lr_decay_per_epoch.powi(epoch as i32)
}

/// One training batch, already normalized to the network input extent.
pub struct Batch {
    pub inputs: Tensor,
    pub gts: Tensor,
    /// Ground-truth text masks, text = 1, binary.
    pub text_masks: Tensor,
}

/// Lazily decoded dataset directory.
pub struct Dataset {
    root: PathBuf,
    dirs: Vec<String>,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Dataset, TrainError> {
        let manifest = Manifest::load(manifest_path)?;
        let root = manifest_path
            .parent()
            .ok_or_else(|| TrainError::Dataset("manifest has no parent directory".into()))?
            .to_path_buf();
        Ok(Dataset {
            root,
            dirs: manifest.samples.into_iter().map(|s| s.dir).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    fn load_one(&self, idx: usize, net_h: usize, net_w: usize) -> Result<(ImageBuffer, ImageBuffer, StrokeMask), TrainError> {
        let dir = self.root.join(&self.dirs[idx]);
        let input = load_image(&dir.join("input.jpg"))?;
        let gt = load_image(&dir.join("gt.png"))?;
        let mask = load_mask(&dir.join("mask.png"))?;
        let (input, _) = resize_pad_to(&input, net_h, net_w);
        let (gt, _) = resize_pad_to(&gt, net_h, net_w);
        // resize the mask in the text=1 representation so the zero padding
        // reads as valid background
        let text_gray = ImageBuffer::from_fn(mask.width(), mask.height(), |x, y| {
            let t = 1.0 - mask.get(x, y);
            [t, t, t]
        });
        let (text_gray, _) = resize_pad_to(&text_gray, net_h, net_w);
        let soft = StrokeMask::from_text_alpha(
            net_w,
            net_h,
            &(0..net_w * net_h)
                .map(|i| text_gray.get(i % net_w, i / net_w)[0])
                .collect::<Vec<_>>(),
        );
        Ok((input, gt, binarize(&soft, 0.5)))
    }

    /// Assemble a batch for the given sample indices.
    pub fn batch(
        &self,
        indices: &[usize],
        net_h: usize,
        net_w: usize,
        parallel: bool,
    ) -> Result<Batch, TrainError> {
        let loaded: Vec<Result<_, TrainError>> = {
            #[cfg(feature = "parallel")]
            {
                if parallel {
                    use rayon::prelude::*;
                    indices
                        .par_iter()
                        .map(|&i| self.load_one(i, net_h, net_w))
                        .collect()
                } else {
                    indices.iter().map(|&i| self.load_one(i, net_h, net_w)).collect()
                }
            }
            #[cfg(not(feature = "parallel"))]
            {
                let _ = parallel;
                indices.iter().map(|&i| self.load_one(i, net_h, net_w)).collect()
            }
        };
        let mut inputs = Vec::new();
        let mut gts = Vec::new();
        let mut masks = Vec::new();
        for r in loaded {
            let (i, g, m) = r?;
            inputs.push(i);
            gts.push(g);
            masks.push(m);
        }
        Ok(Batch {
            inputs: images_to_batch(&inputs),
            gts: images_to_batch(&gts),
            text_masks: text_masks_to_batch(&masks),
        })
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    step: u64,
    epoch: u64,
    lr: f64,
    #[serde(flatten)]
    losses: &'a LossBreakdown,
}

/// One optimizer step on one batch. Returns the per-term loss values.
pub fn train_step(
    net: &mut ErasingNetwork,
    batch: &Batch,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor,
    opt: &mut Adam,
    step: u64,
) -> Result<LossBreakdown, TrainError> {
    let mut g = Graph::new();
    let x = g.leaf(batch.inputs.clone(), false);
    let fwd = net.erase_forward(&mut g, x, true)?;
    let gt_img = g.leaf(batch.gts.clone(), false);
    let gt_text = g.leaf(batch.text_masks.clone(), false);
    // TV runs over the binarized predicted hole (1 = hole)
    let hole_region = g.tensor(fwd.hole_mask).map(|v| 1.0 - v);
    let inputs = TotalLossInputs {
        pred_text_soft: fwd.soft_text_mask,
        gt_text,
        out_hat: fwd.inpainted,
        out_gt: gt_img,
        hole_region: &hole_region,
        extractor,
    };
    let (loss, breakdown) = total_loss(&mut g, &inputs, weights)
        .map_err(|e| TrainError::Dataset(e.to_string()))?;
    if !breakdown.total.is_finite() {
        return Err(TrainError::NonFiniteLoss { step, breakdown });
    }
    let grads = g.backward(loss);
    opt.step(net.params_mut(), &grads);
    net.apply_stat_updates(fwd.stat_updates);
    Ok(breakdown)
}

fn checkpoint_path(dir: &Path, completed_epochs: u64) -> PathBuf {
    dir.join(format!("epoch_{completed_epochs:04}.ckpt"))
}

/// Latest checkpoint in a directory, by completed-epoch number.
pub fn latest_checkpoint(dir: &Path) -> Option<(u64, PathBuf)> {
    let mut best: Option<(u64, PathBuf)> = None;
    let entries = std::fs::read_dir(dir).ok()?;
    for e in entries.flatten() {
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(num) = name
            .strip_prefix("epoch_")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            if best.as_ref().map(|(b, _)| num > *b).unwrap_or(true) {
                best = Some((num, e.path()));
            }
        }
    }
    best
}

/// Full training run per the config; resumes from the newest checkpoint in
/// `checkpoint_dir` when one exists. Returns the final checkpoint path.
pub fn fit(cfg: &TrainConfig) -> Result<PathBuf, TrainError> {
    cfg.validate()?;
    let dataset = Dataset::open(&cfg.dataset_manifest)?;
    if dataset.is_empty() && cfg.epochs > 0 {
        return Err(TrainError::Dataset("dataset is empty".into()));
    }
    std::fs::create_dir_all(&cfg.checkpoint_dir)?;

    let (mut net, mut opt, start_epoch) = match latest_checkpoint(&cfg.checkpoint_dir) {
        Some((epoch, path)) => {
            let loaded = load_checkpoint(&path)?;
            let mut opt = Adam::new(lr_at_epoch(cfg, epoch), cfg.beta1, cfg.beta2, cfg.weight_decay);
            if let Some(restore) = loaded.optimizer {
                opt.restore(restore.step, restore.m, restore.v);
            }
            eprintln!("resuming from {} (epoch {epoch})", path.display());
            (loaded.network, opt, epoch)
        }
        None => {
            let net = ErasingNetwork::new(cfg.network.clone())?;
            let opt = Adam::new(cfg.lr_initial, cfg.beta1, cfg.beta2, cfg.weight_decay);
            (net, opt, 0)
        }
    };

    let extractor: VggExtractor = match &cfg.vgg_weights {
        Some(path) => VggExtractor::from_file(path)?,
        None => VggExtractor::random(mix(cfg.seed, 0xFEA7), cfg.vgg_width_divisor),
    };

    let log_path = cfg.checkpoint_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?,
    );

    if start_epoch == 0 {
        save_checkpoint(&net, Some(&opt), 0, &checkpoint_path(&cfg.checkpoint_dir, 0))?;
    }
    if start_epoch >= cfg.epochs {
        return Ok(checkpoint_path(&cfg.checkpoint_dir, start_epoch.min(cfg.epochs)));
    }

    let (net_h, net_w) = (cfg.network.input_height, cfg.network.input_width);
    let mut step: u64 = opt.step_count();
    for epoch in start_epoch..cfg.epochs {
        if epoch >= cfg.bn_freeze_after_epochs && !net.bn_frozen() {
            net.freeze_bn()?;
            eprintln!("epoch {epoch}: froze inpainting-encoder batch norm");
        }
        opt.lr = lr_at_epoch(cfg, epoch);

        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut shuffle_rng = Rng::seed_from(mix(cfg.seed, epoch));
        shuffle_rng.shuffle(&mut order);

        for chunk in order.chunks(cfg.batch_size) {
            let batch = dataset.batch(chunk, net_h, net_w, !cfg.deterministic)?;
            let breakdown = train_step(&mut net, &batch, &cfg.loss_weights, &extractor, &mut opt, step)?;
            step += 1;
            let line = LogLine {
                step,
                epoch,
                lr: opt.lr,
                losses: &breakdown,
            };
            serde_json::to_writer(&mut log, &line)?;
            log.write_all(b"\n")?;
        }
        log.flush()?;
        save_checkpoint(&net, Some(&opt), epoch + 1, &checkpoint_path(&cfg.checkpoint_dir, epoch + 1))?;
    }
    Ok(checkpoint_path(&cfg.checkpoint_dir, cfg.epochs))
}
