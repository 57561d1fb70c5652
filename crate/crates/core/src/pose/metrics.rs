use super::joints::JointSet;
use super::PoseError;

/// Percentage of correct keypoints normalized by head size.
///
/// A ground-truth joint is evaluable when its confidence is positive; a
/// prediction is correct when its Euclidean error is at most
/// `threshold * head_size`.
pub fn pckh(pred: &JointSet, gt: &JointSet, head_size: f64, threshold: f64) -> Result<f64, PoseError> {
    if head_size.is_nan() || head_size <= 0.0 {
        return Err(PoseError::BadHeadSize(head_size));
    }
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(PoseError::BadThreshold(threshold));
    }
    let radius = threshold * head_size;
    let mut evaluable = 0usize;
    let mut hits = 0usize;
    for (p, g) in pred.joints.iter().zip(gt.joints.iter()) {
        if !g.is_detected() {
            continue;
        }
        evaluable += 1;
        if p.distance(g) <= radius {
            hits += 1;
        }
    }
    if evaluable == 0 {
        return Err(PoseError::NoEvaluableJoints);
    }
    Ok(hits as f64 / evaluable as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{Dims, Joint};

    fn gt() -> JointSet {
        let mut j = JointSet::absent(Dims::new(384, 256));
        for (i, slot) in j.joints.iter_mut().enumerate() {
            *slot = Joint::new(20.0 + 10.0 * i as f64, 30.0 + 15.0 * i as f64, 0.9);
        }
        j
    }

    fn shifted(set: &JointSet, dx: f64, which: impl Fn(usize) -> bool) -> JointSet {
        let mut out = set.clone();
        for (i, j) in out.joints.iter_mut().enumerate() {
            if which(i) {
                j.x += dx;
            }
        }
        out
    }

    #[test]
    fn identical_sets_score_one() {
        assert_eq!(pckh(&gt(), &gt(), 40.0, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn fully_displaced_scores_zero() {
        let pred = shifted(&gt(), 2.0 * 0.5 * 40.0, |_| true);
        assert_eq!(pckh(&pred, &gt(), 40.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn half_within_half_beyond() {
        // radius 20: even joints move 19 px, odd joints 21 px
        let mut pred = shifted(&gt(), 19.0, |i| i % 2 == 0);
        pred = shifted(&pred, 21.0, |i| i % 2 == 1);
        assert_eq!(pckh(&pred, &gt(), 40.0, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn boundary_counts_as_hit() {
        let pred = shifted(&gt(), 20.0, |_| true);
        assert_eq!(pckh(&pred, &gt(), 40.0, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn undetected_ground_truth_is_skipped() {
        let mut g = gt();
        g.joints[0].confidence = 0.0;
        let pred = shifted(&gt(), 100.0, |i| i == 0);
        assert_eq!(pckh(&pred, &g, 40.0, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        let none = JointSet::absent(Dims::new(10, 10));
        assert!(matches!(pckh(&none, &none, 1.0, 0.5), Err(PoseError::NoEvaluableJoints)));
        assert!(matches!(pckh(&gt(), &gt(), 0.0, 0.5), Err(PoseError::BadHeadSize(_))));
        assert!(matches!(pckh(&gt(), &gt(), 1.0, 0.0), Err(PoseError::BadThreshold(_))));
    }

    #[test]
    fn monotone_in_displacement() {
        let mut last = 1.0;
        for step in 0..40 {
            let pred = shifted(&gt(), step as f64, |i| i < 8);
            let s = pckh(&pred, &gt(), 40.0, 0.5).unwrap();
            assert!(s <= last);
            last = s;
        }
        assert_eq!(last, 0.5);
    }
}
