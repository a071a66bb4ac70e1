use dcpnet_core::scene::{
    crop_views, degrade_traced, generate_sample, generate_world, hetero_transform, Degradation, Mode, NoiseKind,
    SceneConfig, WorldSpec,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn crops_match_the_world_at_their_offset(seed in any::<u64>(), n in 2usize..6) {
        let spec = WorldSpec { seed, ..WorldSpec::default() };
        let world = generate_world(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let crops = crop_views(&world, spec.view_size, n, &mut rng).unwrap();
        prop_assert_eq!(crops.len(), n);
        let ws = spec.world_size;
        for c in &crops {
            let (oy, ox) = c.offset;
            for y in 0..spec.view_size {
                for x in 0..spec.view_size {
                    let wi = (oy + y) * ws + ox + x;
                    let vi = y * spec.view_size + x;
                    prop_assert_eq!(c.mask.labels[vi], world.mask.labels[wi]);
                    for ch in 0..3 {
                        prop_assert_eq!(c.view.data()[vi * 3 + ch].to_bits(), world.image.data()[wi * 3 + ch].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn occlusion_is_one_zero_rectangle_of_a_quarter_to_half(seed in any::<u64>()) {
        let world = generate_world(&WorldSpec { seed, ..WorldSpec::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let crop = crop_views(&world, 64, 2, &mut rng).unwrap().remove(0);
        let d = Degradation { kind: NoiseKind::Occlusion, strength: 1.0 };
        let (out, rect) = degrade_traced(&crop.view, &d, &mut rng).unwrap();
        let (ry, rx, rh, rw) = rect.unwrap();
        let frac = (rh * rw) as f64 / (64.0 * 64.0);
        prop_assert!((0.25..=0.5).contains(&frac), "{frac}");
        for y in 0..64 {
            for x in 0..64 {
                let inside = (ry..ry + rh).contains(&y) && (rx..rx + rw).contains(&x);
                for ch in 0..3 {
                    let i = (y * 64 + x) * 3 + ch;
                    if inside {
                        prop_assert_eq!(out.data()[i], 0.0);
                    } else {
                        prop_assert_eq!(out.data()[i], crop.view.data()[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn degradation_keeps_values_in_range(seed in any::<u64>(), sigma in 0.0f64..1.0) {
        let world = generate_world(&WorldSpec { seed, world_size: 64, ..WorldSpec::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for kind in [NoiseKind::Gaussian, NoiseKind::Blur, NoiseKind::Occlusion] {
            let out = degrade_traced(&world.image, &Degradation { kind, strength: sigma }, &mut rng).unwrap().0;
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(out.shape(), world.image.shape());
        }
    }
}

#[test]
fn same_seed_same_sample() {
    let cfg = SceneConfig::default();
    for mode in [Mode::HomoCis, Mode::HomoPis, Mode::HeteroPis] {
        let a = generate_sample(&cfg, mode, 11, 5).unwrap();
        let b = generate_sample(&cfg, mode, 11, 5).unwrap();
        assert!(a.views.iter().zip(&b.views).all(|(x, y)| x.bitwise_eq(y)));
        assert_eq!(a.masks, b.masks);
        assert_eq!((a.victim, a.clean_twin, &a.degraded), (b.victim, b.clean_twin, &b.degraded));
    }
}

#[test]
fn victim_degraded_in_about_half_the_frames() {
    let cfg = SceneConfig { world: WorldSpec { world_size: 64, view_size: 32, ..WorldSpec::default() }, ..SceneConfig::default() };
    let n = 10_000;
    let hit = (0..n).filter(|&i| generate_sample(&cfg, Mode::HomoPis, 1, i).unwrap().victim_degraded()).count();
    let frac = hit as f64 / n as f64;
    assert!((frac - 0.5).abs() < 0.03, "{frac}");
}

#[test]
fn exactly_one_victim_and_valid_labels() {
    let cfg = SceneConfig::default();
    for i in 0..40 {
        let s = generate_sample(&cfg, Mode::HomoCis, 2, i).unwrap();
        assert!(s.degraded.iter().filter(|&&d| d).count() <= 1);
        assert!(s.degraded.iter().enumerate().all(|(j, &d)| !d || j == s.victim));
        assert!(s.masks.iter().all(|m| m.labels.iter().all(|&c| (c as usize) < cfg.world.num_classes)));
    }
}

#[test]
fn homo_cis_twin_holds_the_clean_original() {
    let cfg = SceneConfig::default();
    let mut degraded = 0;
    for i in 0..60 {
        let s = generate_sample(&cfg, Mode::HomoCis, 4, i).unwrap();
        let twin = s.clean_twin.expect("homo-cis frames carry a twin");
        assert_ne!(twin, s.victim);
        assert_eq!(s.masks[twin], s.masks[s.victim]);
        assert_eq!(s.offsets[twin], s.offsets[s.victim]);
        if s.victim_degraded() {
            degraded += 1;
            assert!(!s.views[twin].bitwise_eq(&s.views[s.victim]));
        } else {
            assert!(s.views[twin].bitwise_eq(&s.views[s.victim]));
        }
    }
    assert!(degraded > 10);
}

#[test]
fn pis_modes_hold_no_copy_of_the_victim_view() {
    let cfg = SceneConfig::default();
    for mode in [Mode::HomoPis, Mode::HeteroPis] {
        for i in 0..40 {
            let s = generate_sample(&cfg, mode, 6, i).unwrap();
            assert!(s.clean_twin.is_none());
            for j in (0..s.platforms()).filter(|&j| j != s.victim) {
                assert!(!s.views[j].bitwise_eq(&s.views[s.victim]), "{mode} sample {i} platform {j}");
            }
        }
    }
}

#[test]
fn hetero_views_differ_from_their_untransformed_crops() {
    let cfg = SceneConfig::default();
    for i in 0..20 {
        let hetero = generate_sample(&cfg, Mode::HeteroPis, 8, i).unwrap();
        let homo = generate_sample(&cfg, Mode::HomoPis, 8, i).unwrap();
        assert!(hetero.views[hetero.victim].bitwise_eq(&homo.views[homo.victim]));
        for j in (0..hetero.platforms()).filter(|&j| j != hetero.victim) {
            assert!(!hetero.views[j].bitwise_eq(&homo.views[j]));
            assert!(hetero_transform(&homo.views[j]).unwrap().bitwise_eq(&hetero.views[j]));
        }
    }
}

#[test]
fn classes_all_appear_over_many_worlds() {
    let mut seen = [false; 6];
    for seed in 0..100 {
        let w = generate_world(&WorldSpec { seed, ..WorldSpec::default() }).unwrap();
        for &c in &w.mask.labels {
            seen[c as usize] = true;
        }
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn zero_density_world_is_background() {
    let w = generate_world(&WorldSpec { density: 0.0, seed: 3, ..WorldSpec::default() }).unwrap();
    assert!(w.mask.labels.iter().all(|&c| c == 0));
}
