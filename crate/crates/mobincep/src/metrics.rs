//! Classification metrics: confusion matrix, per-class
//! precision/sensitivity/F1, one-vs-rest ROC curves, micro/macro AUC.
//!
//! Everything is a pure function over plain slices; scores arrive as `f64`
//! regardless of the training precision.

use crate::error::Error;
use crate::Result;

/// K×K counts, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_labels(true_labels: &[usize], pred_labels: &[usize], k: usize) -> Result<Self> {
        if true_labels.len() != pred_labels.len() {
            return Err(Error::contract(format!(
                "{} true labels vs {} predictions",
                true_labels.len(),
                pred_labels.len()
            )));
        }
        let mut counts = vec![0u64; k * k];
        for (&t, &p) in true_labels.iter().zip(pred_labels) {
            if t >= k || p >= k {
                return Err(Error::contract(format!(
                    "label ({t}, {p}) out of range for K={k}"
                )));
            }
            counts[t * k + p] += 1;
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class * self.k + pred_class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.count(c, c)).sum()
    }

    pub fn row(&self, true_class: usize) -> &[u64] {
        &self.counts[true_class * self.k..(true_class + 1) * self.k]
    }
}

/// Precision, sensitivity (recall) and F1 for one class, with the
/// zero-denominator convention: the metric is 0 and `degenerate` is set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub degenerate: bool,
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let k = cm.classes();
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.count(c, c) as f64;
        let fp: f64 = (0..k)
            .filter(|&t| t != c)
            .map(|t| cm.count(t, c) as f64)
            .sum();
        let fn_: f64 = (0..k)
            .filter(|&p| p != c)
            .map(|p| cm.count(c, p) as f64)
            .sum();
        let mut degenerate = false;
        let mut ratio = |num: f64, den: f64| {
            if den == 0.0 {
                degenerate = true;
                0.0
            } else {
                num / den
            }
        };
        let precision = ratio(tp, tp + fp);
        let sensitivity = ratio(tp, tp + fn_);
        let f1 = ratio(2.0 * precision * sensitivity, precision + sensitivity);
        out.push(ClassMetrics {
            precision,
            sensitivity,
            f1,
            degenerate,
        });
    }
    out
}

/// Fraction of exact matches.
pub fn accuracy(true_labels: &[usize], pred_labels: &[usize]) -> Result<f64> {
    if true_labels.len() != pred_labels.len() {
        return Err(Error::contract(format!(
            "{} true labels vs {} predictions",
            true_labels.len(),
            pred_labels.len()
        )));
    }
    if true_labels.is_empty() {
        return Ok(0.0);
    }
    let hits = true_labels
        .iter()
        .zip(pred_labels)
        .filter(|(t, p)| t == p)
        .count();
    Ok(hits as f64 / true_labels.len() as f64)
}

/// One ROC curve: (FPR, TPR) points from (0,0) to (1,1) and the trapezoidal
/// area under them.
#[derive(Clone, Debug)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Binary ROC by threshold sweep over the distinct scores (descending);
/// equal scores collapse into one step. `None` when either class is empty.
pub fn binary_roc(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        // group every sample sharing this score into one threshold step
        let score = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == score {
            if positive[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let prev = *points.last().expect("seeded with (0,0)");
        let point = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
        auc += (point.0 - prev.0) * (point.1 + prev.1) / 2.0;
        points.push(point);
        i = j;
    }
    Some(RocCurve { points, auc })
}

/// Pairwise-concordance (Mann-Whitney) AUC estimate; the independent oracle
/// for [`binary_roc`]. Ties count a half.
pub fn auc_by_concordance(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(positive)
        .filter(|(_, &p)| !p)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut concordant = 0.0;
    for &sp in &pos {
        for &sn in &neg {
            if sp > sn {
                concordant += 1.0;
            } else if sp == sn {
                concordant += 0.5;
            }
        }
    }
    Some(concordant / (pos.len() * neg.len()) as f64)
}

/// One-vs-rest ROC analysis over a probability matrix.
#[derive(Clone, Debug)]
pub struct RocReport {
    /// Per-class curve; `None` for classes absent from the true labels.
    pub per_class: Vec<Option<RocCurve>>,
    /// Sample-wise curve over the flattened (sample, class) indicators.
    pub micro: RocCurve,
    /// Unweighted mean of the defined class AUCs.
    pub macro_auc: f64,
    /// Classes excluded from the macro average.
    pub excluded: Vec<usize>,
}

/// `scores` is row-major `[N, K]`; every row must be a probability vector
/// (non-negative, summing to 1 within 1e-5).
pub fn roc_auc(scores: &[f64], n: usize, k: usize, true_labels: &[usize]) -> Result<RocReport> {
    if scores.len() != n * k {
        return Err(Error::shape(format!(
            "score matrix {}x{k} wants {} values",
            n,
            n * k
        )));
    }
    if true_labels.len() != n {
        return Err(Error::contract(
            "one true label per scored sample".to_string(),
        ));
    }
    for row in scores.chunks_exact(k) {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| v.is_nan() || v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > 1e-5
        {
            return Err(Error::contract(format!(
                "score rows must be probability vectors (row sums to {sum})"
            )));
        }
    }
    for &t in true_labels {
        if t >= k {
            return Err(Error::contract(format!("label {t} out of range for K={k}")));
        }
    }

    let mut per_class = Vec::with_capacity(k);
    let mut excluded = Vec::new();
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    for c in 0..k {
        let class_scores: Vec<f64> = (0..n).map(|i| scores[i * k + c]).collect();
        let positive: Vec<bool> = true_labels.iter().map(|&t| t == c).collect();
        match binary_roc(&class_scores, &positive) {
            Some(curve) => {
                macro_sum += curve.auc;
                macro_n += 1;
                per_class.push(Some(curve));
            }
            None => {
                excluded.push(c);
                per_class.push(None);
            }
        }
    }

    let flat_positive: Vec<bool> = (0..n * k)
        .map(|idx| true_labels[idx / k] == idx % k)
        .collect();
    let micro = binary_roc(scores, &flat_positive)
        .ok_or_else(|| Error::contract("micro AUC undefined (degenerate label set)"))?;
    let macro_auc = if macro_n > 0 {
        macro_sum / macro_n as f64
    } else {
        0.0
    };

    Ok(RocReport {
        per_class,
        micro,
        macro_auc,
        excluded,
    })
}

/// Everything the evaluation harness reports for one split.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub roc: RocReport,
}

impl MetricsReport {
    /// `scores` row-major `[N, K]` probabilities; predictions are derived
    /// by the caller (argmax with lowest-index tie-break).
    pub fn compute(
        true_labels: &[usize],
        pred_labels: &[usize],
        scores: &[f64],
        k: usize,
    ) -> Result<Self> {
        let confusion = ConfusionMatrix::from_labels(true_labels, pred_labels, k)?;
        let per_class = per_class_metrics(&confusion);
        let accuracy = accuracy(true_labels, pred_labels)?;
        let roc = roc_auc(scores, true_labels.len(), k, true_labels)?;
        Ok(MetricsReport {
            confusion,
            per_class,
            accuracy,
            roc,
        })
    }

    /// Fixed-order CSV: one row per class, then accuracy / micro / macro
    /// footer rows. Formatting is deterministic so identical evaluations
    /// yield identical bytes.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut s = String::from("class,precision,sensitivity,f1,auc\n");
        for (c, m) in self.per_class.iter().enumerate() {
            let name = class_names
                .get(c)
                .cloned()
                .unwrap_or_else(|| format!("class_{c}"));
            let auc = match &self.roc.per_class[c] {
                Some(curve) => format!("{:.6}", curve.auc),
                None => "undefined".to_string(),
            };
            s.push_str(&format!(
                "{name},{:.6},{:.6},{:.6},{auc}\n",
                m.precision, m.sensitivity, m.f1
            ));
        }
        s.push_str(&format!("accuracy,{:.6},,,\n", self.accuracy));
        s.push_str(&format!("micro_auc,{:.6},,,\n", self.micro_auc()));
        s.push_str(&format!("macro_auc,{:.6},,,\n", self.roc.macro_auc));
        s
    }

    pub fn micro_auc(&self) -> f64 {
        self.roc.micro.auc
    }

    /// ROC points of one class as CSV (`fpr,tpr` per line).
    pub fn roc_points_csv(&self, class: usize) -> Option<String> {
        self.roc.per_class[class].as_ref().map(|curve| {
            let mut s = String::from("fpr,tpr\n");
            for &(x, y) in &curve.points {
                s.push_str(&format!("{x:.6},{y:.6}\n"));
            }
            s
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let cm = ConfusionMatrix::from_labels(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.trace(), 4);
        assert_eq!(cm.total(), 4);
        for m in per_class_metrics(&cm) {
            assert_eq!(m.precision, 1.0);
            assert_eq!(m.sensitivity, 1.0);
            assert_eq!(m.f1, 1.0);
        }
    }

    #[test]
    fn hand_counted_binary_matrix() {
        let cm = ConfusionMatrix::from_labels(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.row(0), &[1, 1]);
        assert_eq!(cm.row(1), &[0, 2]);
        let m = per_class_metrics(&cm);
        // class 1: precision 2/3, sensitivity 1, F1 0.8
        assert!((m[1].precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m[1].sensitivity, 1.0);
        assert!((m[1].f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_all_zero() {
        let cm = ConfusionMatrix::from_labels(&[], &[], 3).unwrap();
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn out_of_range_label_is_contract_error() {
        assert!(matches!(
            ConfusionMatrix::from_labels(&[0, 5], &[0, 1], 3),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn absent_class_is_degenerate_zero() {
        // class 2 never true and never predicted
        let cm = ConfusionMatrix::from_labels(&[0, 1], &[0, 1], 3).unwrap();
        let m = per_class_metrics(&cm);
        assert_eq!(m[2].precision, 0.0);
        assert_eq!(m[2].sensitivity, 0.0);
        assert!(m[2].degenerate);
        assert!(!m[0].degenerate);
    }

    #[test]
    fn accuracy_examples_and_identity() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert!((accuracy(&[0, 1, 2], &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(accuracy(&[0], &[0, 1]).is_err());

        // accuracy == trace / total
        let t = [0, 1, 2, 2, 0, 1, 1];
        let p = [0, 2, 2, 1, 0, 1, 0];
        let cm = ConfusionMatrix::from_labels(&t, &p, 3).unwrap();
        let acc = accuracy(&t, &p).unwrap();
        assert!((acc - cm.trace() as f64 / cm.total() as f64).abs() < 1e-12);
    }

    #[test]
    fn textbook_binary_auc() {
        // scores [0.1, 0.4, 0.35, 0.8], labels [0, 0, 1, 1]: 3 of 4
        // positive-negative pairs concordant -> AUC 0.75
        let scores = [0.1, 0.4, 0.35, 0.8];
        let positive = [false, false, true, true];
        let curve = binary_roc(&scores, &positive).unwrap();
        assert!((curve.auc - 0.75).abs() < 1e-12);
        assert_eq!(curve.auc, auc_by_concordance(&scores, &positive).unwrap());
    }

    #[test]
    fn roc_endpoints_and_monotonicity() {
        let scores = [0.9, 0.8, 0.7, 0.3, 0.2, 0.5, 0.5];
        let positive = [true, true, false, false, true, true, false];
        let curve = binary_roc(&scores, &positive).unwrap();
        assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));
        for w in curve.points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn trapezoid_matches_concordance_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(5..60);
            // distinct scores: shuffled index-derived values (tie-free)
            let mut scores: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                scores.swap(i, j);
            }
            let positive: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
            if positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
                continue;
            }
            let trapz = binary_roc(&scores, &positive).unwrap().auc;
            let mw = auc_by_concordance(&scores, &positive).unwrap();
            assert!(
                (trapz - mw).abs() < 1e-9,
                "trapz {trapz} vs mann-whitney {mw}"
            );
        }
    }

    #[test]
    fn perfect_separation_gives_unit_auc_everywhere() {
        // 3 classes, one-hot-ish scores matching the labels
        let labels = [0usize, 1, 2, 0, 1, 2];
        let mut scores = vec![0.05; 18];
        for (i, &l) in labels.iter().enumerate() {
            scores[i * 3 + l] = 0.9;
        }
        let report = roc_auc(&scores, 6, 3, &labels).unwrap();
        for c in 0..3 {
            assert_eq!(report.per_class[c].as_ref().unwrap().auc, 1.0);
        }
        assert_eq!(report.micro.auc, 1.0);
        assert_eq!(report.macro_auc, 1.0);
    }

    #[test]
    fn random_scores_hover_at_half() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let (n, k) = (10_000, 2);
        let mut scores = Vec::with_capacity(n * k);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let p: f64 = rng.random();
            scores.push(p);
            scores.push(1.0 - p);
            labels.push(rng.random_range(0..k));
        }
        let report = roc_auc(&scores, n, k, &labels).unwrap();
        assert!(
            (report.micro.auc - 0.5).abs() < 0.02,
            "micro {}",
            report.micro.auc
        );
        assert!(
            (report.macro_auc - 0.5).abs() < 0.02,
            "macro {}",
            report.macro_auc
        );
    }

    #[test]
    fn absent_class_excluded_from_macro() {
        let labels = [0usize, 0, 1, 1];
        let scores = [
            0.8, 0.1, 0.1, //
            0.7, 0.2, 0.1, //
            0.2, 0.7, 0.1, //
            0.1, 0.8, 0.1,
        ];
        let report = roc_auc(&scores, 4, 3, &labels).unwrap();
        assert!(report.per_class[2].is_none());
        assert_eq!(report.excluded, vec![2]);
        let mean_defined = (report.per_class[0].as_ref().unwrap().auc
            + report.per_class[1].as_ref().unwrap().auc)
            / 2.0;
        assert!((report.macro_auc - mean_defined).abs() < 1e-12);
    }

    #[test]
    fn micro_with_single_class_scores_degenerates_to_binary() {
        // K=2 with labels all but one in class 0: micro over the flattened
        // set is still the class-0-vs-class-1 binary problem mirrored
        let labels = [0usize, 0, 0, 1];
        let scores = [0.9, 0.1, 0.8, 0.2, 0.6, 0.4, 0.3, 0.7];
        let report = roc_auc(&scores, 4, 2, &labels).unwrap();
        let class0 = report.per_class[0].as_ref().unwrap().auc;
        let class1 = report.per_class[1].as_ref().unwrap().auc;
        assert!(
            (class0 - class1).abs() < 1e-12,
            "complementary scores mirror"
        );
        assert!((report.micro.auc - class0).abs() < 1e-12);
    }

    #[test]
    fn f1_guard_against_formula_transposition() {
        // swapping FP and FN changes precision and sensitivity but may only
        // keep F1 when they were equal
        let cm = ConfusionMatrix::from_labels(&[0, 0, 0, 1], &[0, 0, 1, 1], 2).unwrap();
        let m = per_class_metrics(&cm);
        let swapped = ConfusionMatrix::from_labels(&[0, 0, 1, 1], &[0, 0, 0, 1], 2).unwrap();
        let ms = per_class_metrics(&swapped);
        assert!((m[0].precision - ms[0].sensitivity).abs() < 1e-12);
        assert!((m[0].sensitivity - ms[0].precision).abs() < 1e-12);
        assert!(
            (m[0].f1 - ms[0].f1).abs() < 1e-12,
            "F1 symmetric under FP/FN swap"
        );
        // and when precision != sensitivity they genuinely differ
        assert!((m[0].precision - m[0].sensitivity).abs() > 1e-9);
    }

    #[test]
    fn non_probability_rows_rejected() {
        let labels = [0usize, 1];
        let scores = [0.9, 0.3, 0.5, 0.5]; // first row sums to 1.2
        assert!(matches!(
            roc_auc(&scores, 2, 2, &labels),
            Err(Error::Contract(_))
        ));
    }
}
