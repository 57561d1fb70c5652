use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toonscan_core::model::{IMAGE_HEIGHT, IMAGE_WIDTH};
use toonscan_core::oracle::{limb_census, mock_reply, CensusConfig, PoseEvidence, Verdict, REFUSAL};
use toonscan_core::gateway::TurnKind;
use toonscan_core::icvl::{parse_label, ParsedLabel};
use toonscan_core::pose::Dims;
use toonscan_core::synth::{character, defect_suite, Character, Defect};

fn image_joints(c: &Character) -> toonscan_core::pose::JointSet {
    c.joints.rescaled(Dims::new(IMAGE_HEIGHT, IMAGE_WIDTH))
}

#[test]
fn defect_suite_is_classified_exactly() {
    let mut seen = std::collections::BTreeSet::new();
    for seed in [1, 2, 3] {
        let suite = defect_suite(seed);
        for (name, c, expected) in &suite {
            let v = limb_census(&image_joints(c), Some(&c.heatmap), &CensusConfig::default());
            assert_eq!(v.verdict, *expected, "seed {seed} {name}: {v:?}");
            if let Some(d) = c.defect {
                seen.insert(format!("{d:?}"));
                assert_eq!(d.expected_verdict(), *expected);
                assert!(!v.evidence.is_empty(), "{name} names its evidence");
            }
        }
    }
    assert_eq!(seen.len(), Defect::ALL.len());
}

#[test]
fn group_counts_grow_as_threshold_drops() {
    for seed in 0..4 {
        for (name, c, _) in defect_suite(seed) {
            let j = image_joints(&c);
            let counts: Vec<_> = [0.5, 0.3, 0.1]
                .into_iter()
                .map(|t| limb_census(&j, Some(&c.heatmap), &CensusConfig::default().with_threshold(t)).per_group_counts)
                .collect();
            for w in counts.windows(2) {
                for (group, hi) in &w[0] {
                    assert!(w[1][group].observed >= hi.observed, "{name} {group}: {counts:?}");
                }
            }
        }
    }
}

#[test]
fn missing_heatmap_is_a_refusal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = character(&mut rng, None, false);
    let ev = PoseEvidence { joints: Some(image_joints(&c)), heatmap: None, pose_visible: true };
    let reply = mock_reply(Some(&ev), &CensusConfig::default(), TurnKind::Query);
    assert_eq!(reply, REFUSAL);
    assert_eq!(parse_label(&reply), ParsedLabel::Unparseable);
}

#[test]
fn verdicts_ignore_rgb_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = character(&mut rng, Some(Defect::ExtraArm), false);
    let mut d = c.clone();
    for p in d.image.pixels_mut() {
        p.0 = [255 - p.0[0], p.0[2], p.0[1]];
    }
    let cfg = CensusConfig::default();
    let a = limb_census(&image_joints(&c), Some(&c.heatmap), &cfg);
    let b = limb_census(&image_joints(&d), Some(&d.heatmap), &cfg);
    assert_eq!(a, b);
    assert_eq!(a.verdict, Verdict::Many);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn threshold_monotonicity_on_random_characters(seed in any::<u64>(), kind in 0usize..6, occluded in any::<bool>()) {
        let defect = Defect::ALL.get(kind).copied();
        let c = character(&mut ChaCha8Rng::seed_from_u64(seed), defect, occluded && defect.is_none());
        let j = image_joints(&c);
        let mut prev: Option<std::collections::BTreeMap<String, usize>> = None;
        for t in [0.9, 0.7, 0.5, 0.3, 0.1, 0.05] {
            let v = limb_census(&j, Some(&c.heatmap), &CensusConfig::default().with_threshold(t));
            let now: std::collections::BTreeMap<_, _> = v.per_group_counts.iter().map(|(k, g)| (k.clone(), g.observed)).collect();
            if let Some(p) = &prev {
                for (k, n) in p {
                    prop_assert!(now[k] >= *n, "tau {t} group {k}: {now:?} < {p:?}");
                }
            }
            prev = Some(now);
        }
    }

    #[test]
    fn generated_defects_match_their_verdict(seed in any::<u64>(), kind in 0usize..5) {
        let d = Defect::ALL[kind];
        let c = character(&mut ChaCha8Rng::seed_from_u64(seed), Some(d), false);
        let v = limb_census(&image_joints(&c), Some(&c.heatmap), &CensusConfig::default());
        prop_assert_eq!(v.verdict, d.expected_verdict());
    }
}
