//! Preprocessing, ground-truth construction, splits and the synthetic set.

use fastsal_core::data::*;
use fastsal_core::metrics::FixationData;
use fastsal_core::Tensor;
use proptest::prelude::*;

fn ramp(c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(&[c, h, w], |i| (i % (h * w)) as f64 / (h * w) as f64)
}

#[test]
fn resize_constant_identity_and_convexity() {
    let flat = Tensor::<f32>::full(&[3, 5, 7], 0.25);
    let up = resize_bilinear(&flat, (11, 3)).unwrap();
    assert_eq!(up.shape(), &[3, 11, 3]);
    assert!(up.data().iter().all(|v| (v - 0.25).abs() < 1e-7));

    let r = ramp(3, 6, 9);
    let same = resize_bilinear(&r, (6, 9)).unwrap();
    assert!(same.data().iter().zip(r.data()).all(|(a, b)| (a - b).abs() < 1e-6));

    let small = Tensor::<f64>::new(&[1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let big = resize_bilinear(&small, (4, 4)).unwrap();
    assert!(big.data().iter().all(|&v| (0.0..=3.0).contains(&v)));
    // half-pixel sampling: the first output column sits a quarter pixel
    // left of the first input center and clamps to it
    assert_eq!(big.data()[0], 0.0);
    assert!((big.data()[1] - 0.25).abs() < 1e-12);
}

#[test]
fn normalization_is_channelwise() {
    let img = Tensor::<f32>::full(&[3, 2, 2], 0.75);
    let n = normalize_pixels(&img, &PIXEL_MEAN, &PIXEL_STD).unwrap();
    assert!(n.data().iter().all(|v| (v - 0.5).abs() < 1e-7));
    let m = normalize_pixels(&img, &[0.0, 0.5, 1.0], &[1.0, 0.25, 0.5]).unwrap();
    assert_eq!(&m.data()[..1], &[0.75]);
    assert_eq!(m.data()[4], 1.0);
    assert_eq!(m.data()[8], -0.5);
    assert!(normalize_pixels(&img, &PIXEL_MEAN, &[0.5, 0.0, 0.5]).is_err());
}

#[test]
fn single_fixation_density_is_centered_and_symmetric() {
    let f = FixationData::new(21, 21, vec![(10, 10)]).unwrap();
    let d = fixations_to_density(&f, 2.0).unwrap();
    assert_eq!(d.argmax(), 10 * 21 + 10);
    for r in 0..21 {
        for c in 0..21 {
            // 90 degree rotation about the center
            assert!((d.at(r, c) - d.at(c, 20 - r)).abs() < 1e-6);
        }
    }
}

#[test]
fn narrow_sigma_concentrates_mass() {
    let f = FixationData::new(15, 15, vec![(7, 7)]).unwrap();
    let d = fixations_to_density(&f, 0.5).unwrap();
    let mut near = 0.0;
    for r in 0..15usize {
        for c in 0..15usize {
            if r.abs_diff(7).pow(2) + c.abs_diff(7).pow(2) <= 4 {
                near += d.at(r, c);
            }
        }
    }
    assert!(near >= 0.99, "{near}");
}

#[test]
fn density_is_linear_in_fixations() {
    let a = FixationData::new(16, 16, vec![(1, 2)]).unwrap();
    let b = FixationData::new(16, 16, vec![(9, 12)]).unwrap();
    let ab = FixationData::new(16, 16, vec![(1, 2), (9, 12)]).unwrap();
    let (da, db, dab) = (
        fixations_to_density(&a, 1.5).unwrap(),
        fixations_to_density(&b, 1.5).unwrap(),
        fixations_to_density(&ab, 1.5).unwrap(),
    );
    for i in 0..256 {
        assert!((dab.values()[i] - 0.5 * (da.values()[i] + db.values()[i])).abs() < 1e-12);
    }
    assert!(fixations_to_density(&FixationData::new(4, 4, vec![]).unwrap(), 1.0).is_err());
    assert!(fixations_to_density(&a, 0.0).is_err());
}

proptest! {
    #[test]
    fn density_translates_with_fixations(r in 10usize..20, c in 10usize..20, dr in 0usize..6, dc in 0usize..6) {
        let sigma = 1.5;
        let a = fixations_to_density(&FixationData::new(40, 40, vec![(r, c)]).unwrap(), sigma).unwrap();
        let b = fixations_to_density(&FixationData::new(40, 40, vec![(r + dr, c + dc)]).unwrap(), sigma).unwrap();
        for y in 0..34 {
            for x in 0..34 {
                prop_assert!((a.at(y, x) - b.at(y + dr, x + dc)).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn splits_are_seeded_disjoint_covers() {
    let parts = split_random(1003, &[904, 99], 5).unwrap();
    let mut all = parts.concat();
    all.sort_unstable();
    assert_eq!(all, (0..1003).collect::<Vec<_>>());
    assert_eq!(parts, split_random(1003, &[904, 99], 5).unwrap());
    assert_ne!(parts, split_random(1003, &[904, 99], 6).unwrap());
    let empty = split_random(5, &[0, 5], 1).unwrap();
    assert!(empty[0].is_empty() && empty[1].len() == 5);
    assert!(split_random(5, &[4, 2], 1).is_err());
}

#[test]
fn synthetic_argmax_tracks_the_brightest_blob() {
    let data = synth_dataset(100, 48, 0.0, 3).unwrap();
    let mut hits = 0;
    for s in &data {
        let (r, c) = (s.density.argmax() / 48, s.density.argmax() % 48);
        // the brightest blob is the brightest image region
        let lum = |r: usize, c: usize| (0..3).map(|ch| s.image.data()[ch * 48 * 48 + r * 48 + c]).sum::<f32>();
        let mut best = (0.0f32, 0, 0);
        for y in 0..48 {
            for x in 0..48 {
                // light smoothing so pixel noise cannot win
                let mut acc = 0.0;
                for dy in 0..5usize {
                    for dx in 0..5usize {
                        acc += lum((y + dy).saturating_sub(2).min(47), (x + dx).saturating_sub(2).min(47));
                    }
                }
                if acc > best.0 {
                    best = (acc, y, x);
                }
            }
        }
        if r.abs_diff(best.1) <= 2 && c.abs_diff(best.2) <= 2 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits} of 100");
}

#[test]
fn synthetic_generator_contracts() {
    let a = synth_dataset(6, 32, 0.3, 9).unwrap();
    assert_eq!(a, synth_dataset(6, 32, 0.3, 9).unwrap());
    assert_ne!(a, synth_dataset(6, 32, 0.3, 10).unwrap());
    let prior = synth_center_prior(32);
    for s in synth_dataset(4, 32, 1.0, 1).unwrap() {
        assert_eq!(s.density, prior);
    }
    for s in &a {
        assert_eq!(s.image.shape(), &[3, 32, 32]);
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((s.density.sum() - 1.0).abs() < 1e-9);
        assert_eq!(s.fixations.len(), SYNTH_FIXATIONS);
        assert_eq!(s.fixations.size(), s.density.size());
    }
}
