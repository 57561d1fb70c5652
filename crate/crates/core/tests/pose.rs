use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toonscan_core::pose::{decode_joints, pckh, render_heatmap, Dims, Heatmap, Joint, JointSet, TransformOp, JOINT_COUNT};

const DIMS: Dims = Dims::new(96, 64);

fn random_set(rng: &mut ChaCha8Rng) -> JointSet {
    let mut set = JointSet::absent(DIMS);
    for j in set.joints.iter_mut() {
        *j = Joint::new(
            rng.random_range(0..DIMS.width) as f64,
            rng.random_range(0..DIMS.height) as f64,
            rng.random_range(0.05..=1.0),
        );
    }
    set
}

/// First maximum in row-major order, written independently of the decoder.
fn scan(h: &Heatmap, c: usize) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for y in 0..DIMS.height as usize {
        for x in 0..DIMS.width as usize {
            let v = h.get(c, y, x);
            if best.is_none_or(|(_, _, b)| v > b) {
                best = Some((x, y, v));
            }
        }
    }
    best.filter(|b| b.2 > 0.0)
}

#[test]
fn render_then_decode_recovers_joints() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let set = random_set(&mut rng);
        let back = decode_joints(&render_heatmap(&set, 2.0, DIMS).unwrap());
        for (a, b) in set.joints.iter().zip(back.joints.iter()) {
            assert_eq!((a.x, a.y), (b.x, b.y));
            assert!((a.confidence - b.confidence).abs() <= 1e-6);
        }
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn decoder_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..50 {
        let mut h = Heatmap::zeros(DIMS);
        for c in 0..JOINT_COUNT {
            for y in 0..DIMS.height as usize {
                for x in 0..DIMS.width as usize {
                    // coarse levels make ties common
                    let v = if i % 2 == 0 { rng.random::<f64>() } else { rng.random_range(0..4) as f64 / 4.0 };
                    h.set(c, y, x, v);
                }
            }
        }
        let got = decode_joints(&h);
        for c in 0..JOINT_COUNT {
            let j = got.joints[c];
            match scan(&h, c) {
                Some((x, y, v)) => {
                    assert_eq!((j.x, j.y), (x as f64, y as f64), "map {i} channel {c}");
                    assert_eq!(j.confidence, v.min(1.0));
                }
                None => assert!(!j.is_detected()),
            }
        }
    }
}

#[test]
fn pckh_reference_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let gt = random_set(&mut rng);
    assert_eq!(pckh(&gt, &gt, 10.0, 0.5).unwrap(), 1.0);
    let mut far = gt.clone();
    for j in far.joints.iter_mut() {
        j.x += 100.0;
    }
    assert_eq!(pckh(&far, &gt, 10.0, 0.5).unwrap(), 0.0);
    let mut half = gt.clone();
    for j in half.joints.iter_mut().step_by(2) {
        j.y += 6.0;
    }
    assert_eq!(pckh(&half, &gt, 10.0, 0.5).unwrap(), 0.5);
}

proptest! {
    #[test]
    fn transforms_compose_to_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng);
        let h = render_heatmap(&set, 2.0, DIMS).unwrap();
        let f = TransformOp::Hflip;
        prop_assert_eq!(f.apply_joints(&f.apply_joints(&set)), set.clone());
        prop_assert_eq!(f.apply_heatmap(&f.apply_heatmap(&h)), h.clone());
        let r = TransformOp::RotHalfPi;
        let mut j4 = set.clone();
        let mut h4 = h.clone();
        for _ in 0..4 {
            j4 = r.apply_joints(&j4);
            h4 = r.apply_heatmap(&h4);
        }
        prop_assert_eq!(j4, set);
        prop_assert_eq!(h4, h);
    }
}
