//! Frozen feature extractor for the perceptual and style losses: a VGG-19
//! style stack of 3×3 convolutions and 2×2 max pools, tapped after the
//! first activation of each of the five blocks.
//!
//! Weights load from a named-tensor archive (see `net::checkpoint`), with
//! tensors `conv{block}_{idx}.weight` / `.bias` in (Cout,Cin,3,3) layout
//! and an ImageNet-style per-channel input normalization. Tests run the
//! same topology at reduced width with fixed random weights: every loss
//! identity holds regardless of the weights, which stay frozen either way.

use std::path::Path;

use crate::net::checkpoint::read_tensor_archive;
use crate::net::NetError;
use texterase_tensor::graph::{Graph, Value};
use texterase_tensor::{Rng, Shape, Tensor};

/// Maps an image value to a list of feature-map values, one per stage.
/// Gradients flow through the features to the image; the extractor's own
/// parameters never train.
pub trait FeatureExtractor {
    fn features(&self, g: &mut Graph, x: Value) -> Vec<Value>;
}

/// Conv layer names of the VGG-19 prefix this extractor mirrors, in order.
const LAYER_NAMES: [&str; 13] = [
    "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv3_4",
    "conv4_1", "conv4_2", "conv4_3", "conv4_4", "conv5_1",
];
/// Indices (into the conv sequence) whose post-ReLU output is a tap.
const TAPS: [usize; 5] = [0, 2, 4, 8, 12];
/// Indices followed by a 2×2 max pool.
const POOLS_AFTER: [usize; 4] = [1, 3, 7, 11];

/// Channel widths of the full-size extractor.
const FULL_WIDTHS: [usize; 13] = [64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512];

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

pub struct VggExtractor {
    convs: Vec<(Tensor, Tensor)>,
}

impl VggExtractor {
    /// Load full-width weights from a tensor archive.
    pub fn from_file(path: &Path) -> Result<Self, NetError> {
        let tensors = read_tensor_archive(path)?;
        let lookup = |name: &str| -> Result<Tensor, NetError> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| NetError::Checkpoint(format!("feature weights missing {name}")))
        };
        let mut convs = Vec::with_capacity(LAYER_NAMES.len());
        let mut cin = 3;
        for (i, name) in LAYER_NAMES.iter().enumerate() {
            let w = lookup(&format!("{name}.weight"))?;
            let b = lookup(&format!("{name}.bias"))?;
            let s = w.shape();
            if s.c != cin || s.n != FULL_WIDTHS[i] || s.h != 3 || s.w != 3 {
                return Err(NetError::Checkpoint(format!(
                    "{name}.weight has shape {s}, expected {}x{cin}x3x3",
                    FULL_WIDTHS[i]
                )));
            }
            cin = s.n;
            convs.push((w, b));
        }
        Ok(VggExtractor { convs })
    }

    /// Same topology at `1/divisor` of the full width with seeded random
    /// weights; the frozen-extractor loss identities are weight-free, so
    /// this stands in for the real weights in tests and small runs.
    pub fn random(seed: u64, divisor: usize) -> Self {
        let mut rng = Rng::seed_from(seed);
        let mut convs = Vec::with_capacity(LAYER_NAMES.len());
        let mut cin = 3;
        for full in FULL_WIDTHS {
            let cout = (full / divisor).max(2);
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let w = Tensor::randn(Shape::new(cout, cin, 3, 3), std, &mut rng);
            let b = Tensor::zeros(Shape::new(1, cout, 1, 1));
            convs.push((w, b));
            cin = cout;
        }
        VggExtractor { convs }
    }

    /// Write random weights in the documented archive layout (handy for
    /// producing a self-contained extractor file).
    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let mut tensors = Vec::new();
        for (name, (w, b)) in LAYER_NAMES.iter().zip(&self.convs) {
            tensors.push((format!("{name}.weight"), w.clone()));
            tensors.push((format!("{name}.bias"), b.clone()));
        }
        crate::net::checkpoint::write_tensor_archive(path, &tensors)
    }

    /// Smallest input extent the five-stage extractor accepts.
    pub const MIN_INPUT: usize = 16;

    fn normalize(&self, g: &mut Graph, x: Value) -> Value {
        let s = x.shape;
        assert_eq!(s.c, 3, "extractor expects RGB input");
        let mean = Tensor::from_fn(s, |_, c, _, _| IMAGENET_MEAN[c]);
        let inv_std = Tensor::from_fn(s, |_, c, _, _| 1.0 / IMAGENET_STD[c]);
        let mean = g.constant(mean);
        let inv_std = g.constant(inv_std);
        let centered = g.sub(x, mean);
        g.mul(centered, inv_std)
    }
}

impl FeatureExtractor for VggExtractor {
    fn features(&self, g: &mut Graph, x: Value) -> Vec<Value> {
        assert!(
            x.shape.h >= Self::MIN_INPUT && x.shape.w >= Self::MIN_INPUT,
            "input {} too small for the five-stage extractor",
            x.shape
        );
        let mut t = self.normalize(g, x);
        let mut taps = Vec::with_capacity(TAPS.len());
        for (i, (w, b)) in self.convs.iter().enumerate() {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            let y = g.conv2d(t, wv, Some(bv), 1, 1);
            t = g.relu(y);
            if TAPS.contains(&i) {
                taps.push(t);
            }
            if POOLS_AFTER.contains(&i) {
                t = g.maxpool2(t);
            }
        }
        taps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn produces_five_stages_with_halving_extents() {
        let vgg = VggExtractor::random(1, 32);
        let mut g = Graph::new();
        let mut rng = Rng::seed_from(2);
        let x = g.constant(Tensor::rand_uniform(Shape::new(1, 3, 32, 64), 0.0, 1.0, &mut rng));
        let feats = vgg.features(&mut g, x);
        assert_eq!(feats.len(), 5);
        let extents: Vec<(usize, usize)> = feats.iter().map(|f| (f.shape.h, f.shape.w)).collect();
        assert_eq!(extents, vec![(32, 64), (16, 32), (8, 16), (4, 8), (2, 4)]);
    }

    #[test]
    fn deterministic_for_fixed_input() {
        let vgg = VggExtractor::random(1, 32);
        let mut rng = Rng::seed_from(3);
        let x0 = Tensor::rand_uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut rng);
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(x0.clone());
            let feats = vgg.features(&mut g, x);
            g.tensor(feats[4]).clone()
        };
        assert_eq!(run().max_abs_diff(&run()), 0.0);
    }

    #[test]
    fn archive_roundtrip_preserves_features() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vgg.bin");
        // full-width layout check only works at divisor 1; use a small input
        let vgg = VggExtractor::random(4, 1);
        vgg.save(&path).unwrap();
        let loaded = VggExtractor::from_file(&path).unwrap();
        let mut rng = Rng::seed_from(5);
        let x0 = Tensor::rand_uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(x0);
        let a = vgg.features(&mut g, x);
        let b = loaded.features(&mut g, x);
        for (fa, fb) in a.iter().zip(b.iter()) {
            assert_eq!(g.tensor(*fa).max_abs_diff(g.tensor(*fb)), 0.0);
        }
    }
}
