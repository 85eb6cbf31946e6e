//! Pixel metrics over binary masks.

use serde::{Deserialize, Serialize};

use crate::domain::{BinaryMask, ProbabilityMask};
use crate::error::{Error, Result};

/// Pixel `p` is foreground iff `p >= threshold`.
pub fn binarize(p: &ProbabilityMask, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(BinaryMask::from_array(p.view().mapv(|v| (v >= threshold) as u8)).expect("values are 0 or 1"))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2tp / (2tp + fp + fn)`, or 1 when both masks are empty.
    pub fn dsc(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    pub fn precision_recall_f1(&self) -> (f64, f64, f64) {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f1)
    }

    /// `(foreground IoU, mean of foreground and background IoU)`; a class
    /// absent from both masks scores 1.
    pub fn iou(&self) -> (f64, f64) {
        let class_iou = |inter: u64, union: u64| if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        let fg = class_iou(self.tp, self.tp + self.fp + self.fn_);
        let bg = class_iou(self.tn, self.tn + self.fp + self.fn_);
        (fg, (fg + bg) / 2.0)
    }
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.dims() != truth.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs truth {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn dsc(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    Ok(confusion(pred, truth)?.dsc())
}

pub fn precision_recall_f1(counts: &ConfusionCounts) -> (f64, f64, f64) {
    counts.precision_recall_f1()
}

pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<(f64, f64)> {
    Ok(confusion(pred, truth)?.iou())
}

/// Every metric of one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dsc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou_foreground: f64,
    pub iou_mean: f64,
}

impl MetricSummary {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let (precision, recall, f1) = c.precision_recall_f1();
        let (iou_foreground, iou_mean) = c.iou();
        Self {
            dsc: c.dsc(),
            precision,
            recall,
            f1,
            iou_foreground,
            iou_mean,
        }
    }

    /// Arithmetic mean of each metric; `None` for an empty slice.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a MetricSummary>) -> Option<Self> {
        let mut n = 0usize;
        let mut acc = [0.0f64; 6];
        for m in items {
            n += 1;
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        (n > 0).then(|| {
            let k = n as f64;
            Self {
                dsc: acc[0] / k,
                precision: acc[1] / k,
                recall: acc[2] / k,
                f1: acc[3] / k,
                iou_foreground: acc[4] / k,
                iou_mean: acc[5] / k,
            }
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [self.dsc, self.precision, self.recall, self.f1, self.iou_foreground, self.iou_mean]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, bits: &[u8]) -> BinaryMask {
        BinaryMask::from_array(ndarray::Array2::from_shape_vec((h, w), bits.to_vec()).unwrap()).unwrap()
    }

    /// tp 3, fp 1, fn 2, tn 10 on a 4x4 grid.
    fn fixture() -> (BinaryMask, BinaryMask) {
        let pred = mask(4, 4, &[1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let truth = mask(4, 4, &[1, 1, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        (pred, truth)
    }

    fn brute(pred: &BinaryMask, truth: &BinaryMask) -> [u64; 4] {
        let mut c = [0u64; 4];
        for r in 0..pred.height() {
            for col in 0..pred.width() {
                let (p, t) = (pred.get(r, col), truth.get(r, col));
                let i = if p && t {
                    0
                } else if p {
                    1
                } else if t {
                    2
                } else {
                    3
                };
                c[i] += 1;
            }
        }
        c
    }

    #[test]
    fn binarize_boundaries() {
        let half = ProbabilityMask::filled(3, 3, 0.5).unwrap();
        assert_eq!(binarize(&half, 0.5).unwrap().count_ones(), 9);
        let below = ProbabilityMask::filled(3, 3, 0.49).unwrap();
        assert_eq!(binarize(&below, 0.5).unwrap().count_ones(), 0);
        assert!(binarize(&half, 0.0).is_err());
        assert!(binarize(&half, 1.0).is_err());
    }

    #[test]
    fn fixture_counts_and_metrics() {
        let (pred, truth) = fixture();
        let c = confusion(&pred, &truth).unwrap();
        let [tp, fp, fn_, tn] = brute(&pred, &truth);
        assert_eq!(c, ConfusionCounts { tp, fp, fn_, tn });
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (3, 1, 2, 10));
        assert!((c.dsc() - 6.0 / 9.0).abs() < 1e-12);
        let (p, r, f1) = c.precision_recall_f1();
        assert!((p - 0.75).abs() < 1e-12 && (r - 0.6).abs() < 1e-12);
        assert!((f1 - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-12);
        let (fg, mean) = c.iou();
        assert!((fg - 0.5).abs() < 1e-12);
        assert!((mean - (0.5 + 10.0 / 13.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn conventions_for_degenerate_masks() {
        let ones = mask(4, 4, &[1; 16]);
        let c = confusion(&ones, &ones).unwrap();
        assert_eq!(c.tp, 16);
        assert_eq!(MetricSummary::from_counts(&c).values(), [1.0; 6]);

        let c = confusion(&mask(2, 2, &[1; 4]), &mask(2, 2, &[0; 4])).unwrap();
        assert_eq!(c.fp, 4);
        assert_eq!(c.iou(), (0.0, 0.0));

        let empty = mask(2, 2, &[0; 4]);
        let c = confusion(&empty, &empty).unwrap();
        assert_eq!(c.dsc(), 1.0);
        assert_eq!(c.precision_recall_f1(), (0.0, 0.0, 0.0));
        assert!(confusion(&empty, &ones).is_err());
    }

    fn pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            (proptest::collection::vec(0u8..2, h * w), proptest::collection::vec(0u8..2, h * w))
                .prop_map(move |(a, b)| (mask(h, w, &a), mask(h, w, &b)))
        })
    }

    proptest! {
        #[test]
        fn counts_partition_the_grid((p, t) in pair()) {
            let c = confusion(&p, &t).unwrap();
            prop_assert_eq!(c.total() as usize, p.height() * p.width());
        }

        #[test]
        fn dsc_equals_f1_when_anything_is_positive((p, t) in pair()) {
            let c = confusion(&p, &t).unwrap();
            prop_assume!(c.tp + c.fp + c.fn_ > 0);
            prop_assert!((c.dsc() - c.precision_recall_f1().2).abs() < 1e-12);
        }

        #[test]
        fn dsc_and_foreground_iou_are_symmetric((p, t) in pair()) {
            prop_assert_eq!(dsc(&p, &t).unwrap(), dsc(&t, &p).unwrap());
            prop_assert_eq!(iou(&p, &t).unwrap().0, iou(&t, &p).unwrap().0);
        }

        #[test]
        fn removing_a_false_positive_never_hurts((p, t) in pair(), pick in any::<prop::sample::Index>()) {
            let fps: Vec<(usize, usize)> = (0..p.height())
                .flat_map(|r| (0..p.width()).map(move |c| (r, c)))
                .filter(|&(r, c)| p.get(r, c) && !t.get(r, c))
                .collect();
            prop_assume!(!fps.is_empty());
            let (r, c) = fps[pick.index(fps.len())];
            let mut q = p.clone();
            q.set(r, c, false);
            let before = MetricSummary::from_counts(&confusion(&p, &t).unwrap());
            let after = MetricSummary::from_counts(&confusion(&q, &t).unwrap());
            prop_assert!(after.precision >= before.precision);
            prop_assert!(after.iou_foreground >= before.iou_foreground);
            prop_assert!(after.dsc >= before.dsc);
        }

        #[test]
        fn positives_shrink_as_threshold_rises(
            values in proptest::collection::vec(0.0f64..=1.0, 1..64),
            a in 0.01f64..0.99,
            b in 0.01f64..0.99,
        ) {
            let p = ProbabilityMask::from_array(ndarray::Array2::from_shape_vec((1, values.len()), values).unwrap()).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(binarize(&p, hi).unwrap().count_ones() <= binarize(&p, lo).unwrap().count_ones());
        }

        #[test]
        fn binarize_is_idempotent(values in proptest::collection::vec(0.0f64..=1.0, 1..64), th in 0.01f64..0.99) {
            let p = ProbabilityMask::from_array(ndarray::Array2::from_shape_vec((1, values.len()), values).unwrap()).unwrap();
            let once = binarize(&p, th).unwrap();
            prop_assert_eq!(binarize(&once.to_probabilities(), th).unwrap(), once);
        }
    }
}
