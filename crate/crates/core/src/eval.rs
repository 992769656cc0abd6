//! Segment-based delayed evaluation and corpus splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELAY: usize = 1;

/// Inclusive run of anomalous indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }
}

/// Maximal runs of `true`.
pub fn segments(labels: &[bool]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Segment {
                    start: s,
                    end: i - 1,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Segment {
            start: s,
            end: labels.len() - 1,
        });
    }
    out
}

fn check_len(a: &[bool], b: &[bool]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// A truth segment counts as detected (in full) iff a prediction falls within
/// `k` points of its start; otherwise it is cleared. Predictions outside
/// truth segments pass through.
pub fn adjust_predictions(pred: &[bool], truth: &[bool], k: usize) -> Result<Vec<bool>> {
    check_len(pred, truth)?;
    let mut out = pred.to_vec();
    for seg in segments(truth) {
        let last = seg.end.min(seg.start.saturating_add(k));
        let hit = pred[seg.start..=last].iter().any(|&p| p);
        out[seg.start..=seg.end].fill(hit);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn of(adjusted: &[bool], truth: &[bool]) -> Result<Self> {
        check_len(adjusted, truth)?;
        let mut c = Counts::default();
        for (&a, &t) in adjusted.iter().zip(truth) {
            match (a, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn scores(&self) -> Scores {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        Scores {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Pointwise precision, recall and F1.
pub fn prf(adjusted: &[bool], truth: &[bool]) -> Result<(f64, f64, f64)> {
    let s = Counts::of(adjusted, truth)?.scores();
    Ok((s.precision, s.recall, s.f1))
}

/// Adjusts then counts.
pub fn segment_counts(pred: &[bool], truth: &[bool], k: usize) -> Result<Counts> {
    Counts::of(&adjust_predictions(pred, truth, k)?, truth)
}

pub fn segment_f1(pred: &[bool], truth: &[bool], k: usize) -> Result<f64> {
    Ok(segment_counts(pred, truth, k)?.scores().f1)
}

pub fn train_size(n: usize) -> usize {
    (3 * n).div_ceil(4)
}

/// Seeded shuffle, then a 3:1 cut with the larger part first.
pub fn split_corpus<T: Clone>(corpus: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if corpus.len() < 4 {
        return Err(Error::TooFew {
            needed: 4,
            got: corpus.len(),
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = train_size(corpus.len());
    let pick = |ix: &[usize]| ix.iter().map(|&i| corpus[i].clone()).collect();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

/// Micro (pooled) and macro (mean of per-series) scores for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub counts: Counts,
    pub micro: Scores,
    pub macro_f1: f64,
    pub per_series_f1: Vec<f64>,
}

impl Aggregate {
    pub fn from_counts(per_series: &[Counts]) -> Self {
        let mut counts = Counts::default();
        for c in per_series {
            counts.add(*c);
        }
        let per_series_f1: Vec<f64> = per_series.iter().map(|c| c.scores().f1).collect();
        let macro_f1 = if per_series_f1.is_empty() {
            0.0
        } else {
            per_series_f1.iter().sum::<f64>() / per_series_f1.len() as f64
        };
        Self {
            counts,
            micro: counts.scores(),
            macro_f1,
            per_series_f1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(n: usize, on: &[usize]) -> Vec<bool> {
        (0..n).map(|i| on.contains(&i)).collect()
    }

    #[test]
    fn segment_runs() {
        let t = [false, true, true, false, true, false, true];
        assert_eq!(
            segments(&t),
            vec![
                Segment { start: 1, end: 2 },
                Segment { start: 4, end: 4 },
                Segment { start: 6, end: 6 }
            ]
        );
        assert!(segments(&[]).is_empty());
        assert_eq!(segments(&[true; 3]), vec![Segment { start: 0, end: 2 }]);
    }

    #[test]
    fn golden_adjustments() {
        let truth = mask(10, &[3, 4, 5, 6]);
        let hit = adjust_predictions(&mask(10, &[4]), &truth, 1).unwrap();
        assert_eq!(hit, truth);
        let late = adjust_predictions(&mask(10, &[6]), &truth, 1).unwrap();
        assert!(late.iter().all(|&x| !x));
        let pred = mask(10, &[0, 2, 9]);
        assert_eq!(adjust_predictions(&pred, &[false; 10], 1).unwrap(), pred);
    }

    #[test]
    fn false_positives_untouched() {
        let truth = mask(8, &[3, 4]);
        let pred = mask(8, &[2, 3, 6]);
        assert_eq!(
            adjust_predictions(&pred, &truth, 0).unwrap(),
            mask(8, &[2, 3, 4, 6])
        );
    }

    #[test]
    fn prf_examples() {
        let t = [true, false, true];
        assert_eq!(prf(&t, &t).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(prf(&[false; 3], &t).unwrap(), (0.0, 0.0, 0.0));
        let truth = [false, true, true, false, false];
        let adj = [false, true, true, false, true];
        let (p, r, f) = prf(&adj, &truth).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r, 1.0);
        assert!((f - 0.8).abs() < 1e-15);
        assert_eq!(prf(&[false; 4], &[false; 4]).unwrap(), (0.0, 0.0, 0.0));
        assert!(matches!(
            prf(&[true], &[]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn split_sizes() {
        let c: Vec<u32> = (0..8).collect();
        let (a, b) = split_corpus(&c, 1).unwrap();
        assert_eq!((a.len(), b.len()), (6, 2));
        assert_eq!(split_corpus(&c, 1).unwrap(), (a.clone(), b.clone()));
        let mut all: Vec<u32> = a.into_iter().chain(b).collect();
        all.sort();
        assert_eq!(all, c);
        assert_eq!(train_size(1570), 1178);
        assert!(matches!(
            split_corpus(&c[..3], 0),
            Err(Error::TooFew { .. })
        ));
    }

    #[test]
    fn aggregate_micro_and_macro() {
        let a = Counts {
            tp: 1,
            fp: 0,
            fn_: 0,
        };
        let b = Counts {
            tp: 0,
            fp: 0,
            fn_: 3,
        };
        let agg = Aggregate::from_counts(&[a, b]);
        assert_eq!(
            agg.counts,
            Counts {
                tp: 1,
                fp: 0,
                fn_: 3
            }
        );
        assert!((agg.micro.f1 - 0.4).abs() < 1e-15);
        assert_eq!(agg.macro_f1, 0.5);
    }

    fn naive(adj: &[bool], truth: &[bool]) -> (f64, f64, f64) {
        let mut m = [[0usize; 2]; 2];
        for i in 0..adj.len() {
            m[adj[i] as usize][truth[i] as usize] += 1;
        }
        let (tp, fp, fn_) = (m[1][1] as f64, m[1][0] as f64, m[0][1] as f64);
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        (p, r, f)
    }

    fn pair() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
        (1usize..80).prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::bool::weighted(0.2), n),
                proptest::collection::vec(proptest::bool::weighted(0.3), n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn prf_matches_confusion_oracle((a, t) in pair()) {
            prop_assert_eq!(prf(&a, &t).unwrap(), naive(&a, &t));
        }

        #[test]
        fn adjust_idempotent((p, t) in pair(), k in 0usize..6) {
            let once = adjust_predictions(&p, &t, k).unwrap();
            prop_assert_eq!(adjust_predictions(&once, &t, k).unwrap(), once);
        }

        #[test]
        fn adjusted_recall_grows_with_delay((p, t) in pair(), k in 0usize..6) {
            let r = |k| prf(&adjust_predictions(&p, &t, k).unwrap(), &t).unwrap().1;
            let raw = prf(&p, &t).unwrap().1;
            prop_assert!(r(k) <= r(k + 1));
            prop_assert!(r(p.len()) >= raw);
        }
    }
}
