//! Overlap, detection and shape-distance scores, and per-domain reports.

pub mod hausdorff;
pub mod report;

pub use hausdorff::{boundary, hausdorff, squared_distance_map};
pub use report::{
    evaluate_dataset, evaluate_image, EvalReport, EvalRow, ImageEval, OracleSegmenter, Segmentation, Segmenter,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mask::Mask;

fn overlap(a: &Mask, b: &Mask) -> Result<(usize, usize, usize)> {
    a.ensure_same_dims(b)?;
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x != 0, y != 0);
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    Ok((na, nb, both))
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    let (na, nb, both) = overlap(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// `|A∩B| / |A∪B|`; two empty masks score 1.
pub fn jaccard(a: &Mask, b: &Mask) -> Result<f64> {
    let (na, nb, both) = overlap(a, b)?;
    let union = na + nb - both;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(both as f64 / union as f64)
}

/// Jaccard index at or above which a predicted object counts as a hit.
pub const DETECTION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for DetectionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// One-to-one matching, greedy by descending Jaccard. Pairs at or above
/// [`DETECTION_THRESHOLD`] are true positives.
pub fn match_detections(pred: &[Mask], truth: &[Mask]) -> Result<DetectionCounts> {
    let mut pairs = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let jac = jaccard(p, t)?;
            if jac >= DETECTION_THRESHOLD {
                pairs.push((jac, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let (mut used_p, mut used_t) = (vec![false; pred.len()], vec![false; truth.len()]);
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            tp += 1;
        }
    }
    Ok(DetectionCounts {
        tp,
        fp: pred.len() - tp,
        fn_: truth.len() - tp,
    })
}

/// Harmonic mean of precision and recall, `2tp / (2tp + fp + fn)`.
/// No objects on either side scores 1.
pub fn f1(c: DetectionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return 1.0;
    }
    2.0 * c.tp as f64 / denom as f64
}

/// Each 4-connected foreground component as its own binary mask.
pub fn objects(mask: &Mask) -> Vec<Mask> {
    mask.components()
        .into_iter()
        .map(|comp| {
            let mut m = Mask::new(mask.width(), mask.height());
            for i in comp {
                m.data_mut()[i] = 1;
            }
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn row(bits: &[u8]) -> Mask {
        Mask::from_vec(bits.len(), 1, bits.to_vec()).unwrap()
    }

    #[test]
    fn counting_examples() {
        let a = row(&[1, 1, 1, 1, 0, 0]);
        let b = row(&[0, 0, 1, 1, 0, 0]);
        assert!((dice(&a, &b).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.5);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &row(&[0, 0, 0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(dice(&row(&[0; 3]), &row(&[0; 3])).unwrap(), 1.0);
        assert_eq!(jaccard(&row(&[0; 3]), &row(&[0; 3])).unwrap(), 1.0);
        assert!(matches!(dice(&a, &row(&[1])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn half_overlap_is_a_hit() {
        let gt = row(&[1, 1, 0, 0]);
        let pred = row(&[0, 1, 0, 0]);
        assert_eq!(jaccard(&pred, &gt).unwrap(), 0.5);
        let c = match_detections(&[pred], &[gt]).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (1, 0, 0));
    }

    #[test]
    fn two_predictions_one_truth() {
        let gt = row(&[0, 1, 1, 1, 1, 1, 0, 0, 0, 0]);
        let good = row(&[0, 1, 1, 1, 1, 0, 0, 0, 0, 0]); // J = 0.8
        let bad = row(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]); // J = 1/9
        let c = match_detections(&[good, bad], &[gt]).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
    }

    #[test]
    fn one_truth_matches_at_most_one_prediction() {
        let gt = row(&[1, 1, 1, 1]);
        let c = match_detections(&[gt.clone(), gt.clone()], &[gt]).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
    }

    #[test]
    fn f1_examples() {
        assert!((f1(DetectionCounts { tp: 2, fp: 1, fn_: 1 }) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1(DetectionCounts { tp: 3, fp: 0, fn_: 0 }), 1.0);
        assert_eq!(f1(DetectionCounts { tp: 0, fp: 0, fn_: 2 }), 0.0);
        assert_eq!(f1(DetectionCounts::default()), 1.0);
    }

    #[test]
    fn f1_never_rises_with_more_errors() {
        for tp in 0..5 {
            for fp in 0..5 {
                for fn_ in 0..5 {
                    let base = f1(DetectionCounts { tp, fp, fn_ });
                    assert!(f1(DetectionCounts { tp, fp: fp + 1, fn_ }) <= base);
                    assert!(f1(DetectionCounts { tp, fp, fn_: fn_ + 1 }) <= base);
                }
            }
        }
    }

    #[test]
    fn objects_split_components() {
        let m = row(&[1, 1, 0, 1, 0, 1]);
        let o = objects(&m);
        assert_eq!(o.len(), 3);
        assert_eq!(o[0], row(&[1, 1, 0, 0, 0, 0]));
    }
}
