//! Property tests over the value-level invariants.

use proptest::prelude::*;

use texterase::imagecore::{binarize, quantize_roundtrip, StrokeMask};
use texterase::losses::{compose, dice_loss};
use texterase_tensor::{Graph, Shape, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// binarize(binarize(m)) == binarize(m), and raising the threshold
    /// never adds valid pixels.
    #[test]
    fn binarize_idempotent_and_monotone(
        values in prop::collection::vec(0.0f64..=1.0, 1..64),
        tau_lo in 0.05f64..0.45,
        tau_hi in 0.55f64..0.95,
    ) {
        let w = values.len();
        let m = StrokeMask::from_data(w, 1, values);
        let b = binarize(&m, tau_lo);
        let bb = binarize(&b, tau_lo);
        prop_assert_eq!(bb.data(), b.data());
        let hi = binarize(&m, tau_hi);
        for (l, h) in b.data().iter().zip(hi.data().iter()) {
            prop_assert!(h <= l);
        }
    }

    /// One save/load through PNG is exactly the 8-bit quantization.
    #[test]
    fn png_quantization_fixed_point(v in 0.0f64..=1.0) {
        let q = quantize_roundtrip(v);
        prop_assert!((q - v).abs() <= 0.5 / 255.0 + 1e-12);
        prop_assert_eq!(quantize_roundtrip(q), q);
    }

    /// Composing the ground truth with itself is the identity for any
    /// soft mask, and a mask of ones returns the ground truth exactly.
    #[test]
    fn compose_identities(
        gt_vals in prop::collection::vec(0.0f64..=1.0, 12),
        hat_vals in prop::collection::vec(0.0f64..=1.0, 12),
        mask_vals in prop::collection::vec(0.0f64..=1.0, 4),
    ) {
        let shape = Shape::new(1, 3, 2, 2);
        let mask_shape = Shape::new(1, 1, 2, 2);
        let mut g = Graph::new();
        let gt = g.constant(Tensor::new(shape, gt_vals));
        let hat = g.constant(Tensor::new(shape, hat_vals));
        let m = g.constant(Tensor::new(mask_shape, mask_vals));
        let ones = g.constant(Tensor::full(mask_shape, 1.0));

        let c = compose(&mut g, gt, gt, m).unwrap();
        prop_assert!(g.tensor(c).max_abs_diff(g.tensor(gt)) < 1e-12);
        let c = compose(&mut g, hat, gt, ones).unwrap();
        prop_assert_eq!(g.tensor(c).max_abs_diff(g.tensor(gt)), 0.0);
    }

    /// Dice stays within [0, 1] for soft predictions against binary truth.
    #[test]
    fn dice_bounded(
        pred_vals in prop::collection::vec(0.0f64..=1.0, 16),
        gt_bits in prop::collection::vec(0..=1u8, 16),
    ) {
        let shape = Shape::new(1, 1, 4, 4);
        let mut g = Graph::new();
        let pred = g.constant(Tensor::new(shape, pred_vals));
        let gt = g.constant(Tensor::new(shape, gt_bits.iter().map(|&b| b as f64).collect()));
        let d = dice_loss(&mut g, pred, gt).unwrap();
        let v = g.tensor(d).item();
        prop_assert!((-1e-9..=1.0 + 1e-9).contains(&v), "dice = {}", v);
    }
}
