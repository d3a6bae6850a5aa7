//! Segmentation metrics: Dice (DSC), IoU and precision.

use crate::error::{Error, Result};
use crate::tensor::LabelMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub dsc: f64,
    pub iou: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<ClassScores>>,
    pub mean_dsc: f64,
    pub mean_iou: f64,
    pub mean_precision: f64,
}

impl EvalResult {
    fn from_per_class(per_class: Vec<Option<ClassScores>>) -> Self {
        let present: Vec<&ClassScores> = per_class.iter().flatten().collect();
        let mean = |f: fn(&ClassScores) -> f64| {
            if present.is_empty() {
                0.0
            } else {
                present.iter().map(|s| f(s)).sum::<f64>() / present.len() as f64
            }
        };
        EvalResult {
            mean_dsc: mean(|s| s.dsc),
            mean_iou: mean(|s| s.iou),
            mean_precision: mean(|s| s.precision),
            per_class,
        }
    }
}

/// Per-class scores from confusion counts. Classes absent from both maps are
/// skipped; a class only in the prediction scores 0 everywhere.
pub fn evaluate(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<EvalResult> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut tp = vec![0u64; classes];
    let mut fp = vec![0u64; classes];
    let mut fne = vec![0u64; classes];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p as usize, g as usize);
        if p >= classes || g >= classes {
            return Err(Error::InvalidArgument(format!(
                "label outside {classes} classes"
            )));
        }
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fne[g] += 1;
        }
    }
    let per_class = (0..classes)
        .map(|c| {
            let (tp, fp, fne) = (tp[c] as f64, fp[c] as f64, fne[c] as f64);
            if tp + fp + fne == 0.0 {
                return None;
            }
            let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
            Some(ClassScores {
                dsc: ratio(2.0 * tp, 2.0 * tp + fp + fne),
                iou: ratio(tp, tp + fp + fne),
                precision: ratio(tp, tp + fp),
            })
        })
        .collect();
    Ok(EvalResult::from_per_class(per_class))
}

/// Unweighted mean over images; per-class means skip images where the class was absent.
pub fn aggregate(results: &[EvalResult]) -> Result<EvalResult> {
    let first = results
        .first()
        .ok_or_else(|| Error::Empty("no evaluation results to aggregate".into()))?;
    let classes = first.per_class.len();
    let n = results.len() as f64;
    let per_class = (0..classes)
        .map(|c| {
            let scores: Vec<&ClassScores> = results
                .iter()
                .filter_map(|r| r.per_class.get(c)?.as_ref())
                .collect();
            if scores.is_empty() {
                return None;
            }
            let m = scores.len() as f64;
            Some(ClassScores {
                dsc: scores.iter().map(|s| s.dsc).sum::<f64>() / m,
                iou: scores.iter().map(|s| s.iou).sum::<f64>() / m,
                precision: scores.iter().map(|s| s.precision).sum::<f64>() / m,
            })
        })
        .collect();
    Ok(EvalResult {
        per_class,
        mean_dsc: results.iter().map(|r| r.mean_dsc).sum::<f64>() / n,
        mean_iou: results.iter().map(|r| r.mean_iou).sum::<f64>() / n,
        mean_precision: results.iter().map(|r| r.mean_precision).sum::<f64>() / n,
    })
}

pub const EVAL_CSV_HEADER: &str = "image_id,class,dsc,iou,precision";

/// Rows `image_id,class,dsc,iou,precision`, one per present class, then a `mean` row per image.
pub fn eval_csv_rows(image_id: &str, r: &EvalResult) -> Vec<String> {
    let mut rows: Vec<String> = r
        .per_class
        .iter()
        .enumerate()
        .filter_map(|(c, s)| {
            s.map(|s| {
                format!(
                    "{image_id},{c},{:.6},{:.6},{:.6}",
                    s.dsc, s.iou, s.precision
                )
            })
        })
        .collect();
    rows.push(format!(
        "{image_id},mean,{:.6},{:.6},{:.6}",
        r.mean_dsc, r.mean_iou, r.mean_precision
    ));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn map(labels: &[u8], k: usize) -> LabelMap {
        LabelMap::new(2, labels.len() / 2, k, labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let gt = map(&[0, 1, 2, 1], 3);
        let r = evaluate(&gt, &gt, 3).unwrap();
        assert_eq!((r.mean_dsc, r.mean_iou, r.mean_precision), (1.0, 1.0, 1.0));
    }

    #[test]
    fn disjoint_masks() {
        let r = evaluate(&map(&[1, 1, 0, 0], 2), &map(&[0, 0, 1, 1], 2), 2).unwrap();
        let s = r.per_class[1].unwrap();
        assert_eq!((s.dsc, s.iou), (0.0, 0.0));
        assert_eq!(r.mean_dsc, 0.0);
    }

    #[test]
    fn counting_oracle_on_two_by_two() {
        // class 1: pred {0,1}, gt {0,2} → TP 1, FP 1, FN 1
        let r = evaluate(&map(&[1, 1, 0, 0], 2), &map(&[1, 0, 1, 0], 2), 2).unwrap();
        let s = r.per_class[1].unwrap();
        assert_eq!(s.dsc, 0.5);
        assert!((s.iou - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.precision, 0.5);
    }

    #[test]
    fn absent_classes_skipped_hallucinated_zero() {
        let r = evaluate(&map(&[0, 0, 0, 2], 3), &map(&[0, 0, 0, 0], 3), 3).unwrap();
        assert!(r.per_class[1].is_none());
        assert_eq!(r.per_class[2].unwrap().dsc, 0.0);
        let s0 = r.per_class[0].unwrap();
        assert!((r.mean_dsc - s0.dsc / 2.0).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let a = LabelMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let b = LabelMap::new(2, 1, 2, vec![0, 1]).unwrap();
        assert!(evaluate(&a, &b, 2).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let one = |d: f64| EvalResult {
            per_class: vec![Some(ClassScores {
                dsc: d,
                iou: d,
                precision: d,
            })],
            mean_dsc: d,
            mean_iou: d,
            mean_precision: d,
        };
        assert_eq!(aggregate(&[one(0.6)]).unwrap(), one(0.6));
        assert_eq!(aggregate(&[one(0.6), one(0.6)]).unwrap().mean_dsc, 0.6);
        assert!((aggregate(&[one(0.6), one(0.8)]).unwrap().mean_dsc - 0.7).abs() < 1e-15);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn csv_rows() {
        let gt = map(&[0, 1, 0, 1], 3);
        let rows = eval_csv_rows("img_00000", &evaluate(&gt, &gt, 3).unwrap());
        assert_eq!(
            rows,
            vec![
                "img_00000,0,1.000000,1.000000,1.000000",
                "img_00000,1,1.000000,1.000000,1.000000",
                "img_00000,mean,1.000000,1.000000,1.000000",
            ]
        );
    }

    proptest! {
        #[test]
        fn dice_iou_identity(seed in any::<u64>(), k in 2usize..5) {
            let mut r = Rng::new(seed);
            let mk = |r: &mut Rng| LabelMap::new(4, 4, k, (0..16).map(|_| r.below(k as u64) as u8).collect()).unwrap();
            let (p, g) = (mk(&mut r), mk(&mut r));
            let res = evaluate(&p, &g, k).unwrap();
            for s in res.per_class.iter().flatten() {
                prop_assert!(s.iou <= s.dsc);
                prop_assert!((s.dsc - 2.0 * s.iou / (1.0 + s.iou)).abs() < 1e-9);
                for v in [s.dsc, s.iou, s.precision] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let mut perm: Vec<u8> = (0..k as u8).collect();
            r.shuffle(&mut perm);
            let relabel = |m: &LabelMap| LabelMap::new(4, 4, k, m.labels().iter().map(|&c| perm[c as usize]).collect()).unwrap();
            let res2 = evaluate(&relabel(&p), &relabel(&g), k).unwrap();
            prop_assert!((res.mean_dsc - res2.mean_dsc).abs() < 1e-12);
            prop_assert!((res.mean_iou - res2.mean_iou).abs() < 1e-12);
        }
    }
}
