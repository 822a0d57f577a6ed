//! Volumetric overlap metrics and the weighted cross-entropy loss.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::Dims;

const SIMPLEX_TOL: f64 = 1e-5;
const PROB_FLOOR: f64 = 1e-12;

fn voxel_count(dims: Dims) -> usize {
    dims.0 * dims.1 * dims.2
}

/// Per-voxel class ids, i1-fastest. Class 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims,
    class_count: usize,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: Dims, class_count: usize, labels: Vec<u8>) -> Result<Self> {
        if !(2..=256).contains(&class_count) {
            return Err(Error::usage(format!(
                "class count must lie in 2..=256, got {class_count}"
            )));
        }
        if voxel_count(dims) == 0 || labels.len() != voxel_count(dims) {
            return Err(Error::usage(format!(
                "label volume of dims {dims:?} needs {} labels, got {}",
                voxel_count(dims),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= class_count) {
            return Err(Error::usage(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            dims,
            class_count,
            labels,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn slice(&self, i3: usize) -> &[u8] {
        let plane = self.dims.0 * self.dims.1;
        &self.labels[i3 * plane..(i3 + 1) * plane]
    }

    /// Same labels under a larger class count.
    pub fn with_class_count(self, class_count: usize) -> Result<Self> {
        LabelVolume::new(self.dims, class_count, self.labels)
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }
}

/// Per-voxel class probabilities. Class varies slowest: `data[c * N + voxel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    dims: Dims,
    class_count: usize,
    data: Vec<f64>,
}

impl ProbVolume {
    pub fn new(dims: Dims, class_count: usize, data: Vec<f64>) -> Result<Self> {
        let n = voxel_count(dims);
        if class_count < 2 {
            return Err(Error::usage(format!("need at least 2 classes, got {class_count}")));
        }
        if n == 0 || data.len() != n * class_count {
            return Err(Error::usage(format!(
                "probability volume of dims {dims:?} x {class_count} classes needs {} values, got {}",
                n * class_count,
                data.len()
            )));
        }
        for v in 0..n {
            let mut sum = 0.0;
            for c in 0..class_count {
                let p = data[c * n + v];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::usage(format!(
                        "probability {p} at voxel {v}, class {c} outside [0, 1]"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::usage(format!("probabilities at voxel {v} sum to {sum}")));
            }
        }
        Ok(Self {
            dims,
            class_count,
            data,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn prob(&self, class: usize, voxel: usize) -> f64 {
        self.data[class * voxel_count(self.dims) + voxel]
    }

    /// Class-slowest probabilities of slice `i3`.
    pub fn slice(&self, i3: usize) -> Vec<f64> {
        let plane = self.dims.0 * self.dims.1;
        let n = voxel_count(self.dims);
        let mut out = Vec::with_capacity(plane * self.class_count);
        for c in 0..self.class_count {
            let start = c * n + i3 * plane;
            out.extend_from_slice(&self.data[start..start + plane]);
        }
        out
    }

    /// Most probable class per voxel; ties go to the lowest index.
    pub fn argmax(&self) -> LabelVolume {
        let n = voxel_count(self.dims);
        let labels = (0..n)
            .map(|v| {
                let mut best = 0;
                for c in 1..self.class_count {
                    if self.prob(c, v) > self.prob(best, v) {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelVolume {
            dims: self.dims,
            class_count: self.class_count,
            labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::usage("class weights must be positive and finite"));
        }
        Ok(Self(weights))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub voe_percent: f64,
    /// Signed volume difference; `None` when the reference set is empty but
    /// the prediction is not.
    pub vd_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsMeans {
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub voe_percent: f64,
    /// Mean over the classes whose volume difference is defined.
    pub vd_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub mean: MetricsMeans,
}

/// Overlap counts for one class.
fn class_metrics(class: usize, pred: &[u8], reference: &[u8]) -> ClassMetrics {
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &r) in pred.iter().zip(reference) {
        let in_a = p as usize == class;
        let in_b = r as usize == class;
        a += in_a as usize;
        b += in_b as usize;
        both += (in_a && in_b) as usize;
    }
    let union = a + b - both;
    let (a, b, both, union) = (a as f64, b as f64, both as f64, union as f64);
    ClassMetrics {
        class,
        dice: if a + b == 0.0 { 1.0 } else { 2.0 * both / (a + b) },
        precision: match (a == 0.0, b == 0.0) {
            (true, true) => 1.0,
            (true, false) => 0.0,
            _ => both / a,
        },
        recall: match (a == 0.0, b == 0.0) {
            (true, true) => 1.0,
            (false, true) => 0.0,
            _ => both / b,
        },
        voe_percent: if union == 0.0 {
            0.0
        } else {
            100.0 * (1.0 - both / union)
        },
        vd_percent: match (a == 0.0, b == 0.0) {
            (true, true) => Some(0.0),
            (false, true) => None,
            _ => Some(100.0 * (a - b) / b),
        },
    }
}

/// Per-class overlap metrics for every foreground class `1..C`.
pub fn evaluate(pred: &LabelVolume, reference: &LabelVolume) -> Result<MetricsReport> {
    if pred.dims != reference.dims {
        return Err(Error::usage(format!(
            "prediction dims {:?} differ from reference dims {:?}",
            pred.dims, reference.dims
        )));
    }
    if pred.class_count != reference.class_count {
        return Err(Error::usage(format!(
            "prediction has {} classes, reference has {}",
            pred.class_count, reference.class_count
        )));
    }
    let classes: Vec<ClassMetrics> = (1..pred.class_count)
        .map(|c| class_metrics(c, &pred.labels, &reference.labels))
        .collect();
    let k = classes.len() as f64;
    let mean_of = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / k;
    let vds: Vec<f64> = classes.iter().filter_map(|c| c.vd_percent).collect();
    let mean = MetricsMeans {
        dice: mean_of(|c| c.dice),
        precision: mean_of(|c| c.precision),
        recall: mean_of(|c| c.recall),
        voe_percent: mean_of(|c| c.voe_percent),
        vd_percent: if vds.is_empty() {
            None
        } else {
            Some(vds.iter().sum::<f64>() / vds.len() as f64)
        },
    };
    Ok(MetricsReport { classes, mean })
}

impl MetricsReport {
    /// `class<TAB>metric<TAB>value` rows, one per metric, followed by the
    /// foreground means under class `mean`. Undefined values print as
    /// `undefined`. `names[c]`, when present, replaces the numeric class id.
    pub fn to_table(&self, names: &[String]) -> String {
        let mut out = String::new();
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| v.to_string());
        for c in &self.classes {
            let name = names.get(c.class).cloned().unwrap_or_else(|| c.class.to_string());
            let rows = [
                ("dice", c.dice.to_string()),
                ("precision", c.precision.to_string()),
                ("recall", c.recall.to_string()),
                ("voe_percent", c.voe_percent.to_string()),
                ("vd_percent", fmt_opt(c.vd_percent)),
            ];
            for (metric, value) in rows {
                let _ = writeln!(out, "{name}\t{metric}\t{value}");
            }
        }
        let m = &self.mean;
        let rows = [
            ("dice", m.dice.to_string()),
            ("precision", m.precision.to_string()),
            ("recall", m.recall.to_string()),
            ("voe_percent", m.voe_percent.to_string()),
            ("vd_percent", fmt_opt(m.vd_percent)),
        ];
        for (metric, value) in rows {
            let _ = writeln!(out, "mean\t{metric}\t{value}");
        }
        out
    }
}

/// Compensated (Neumaier) running sum; fixed order keeps results reproducible.
#[derive(Default)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Mean over voxels of `−w(t) · ln p_t`, with `p_t` floored at 1e-12.
pub fn wce_loss(probs: &ProbVolume, labels: &LabelVolume, weights: &ClassWeights) -> Result<f64> {
    if probs.dims != labels.dims {
        return Err(Error::usage(format!(
            "probability dims {:?} differ from label dims {:?}",
            probs.dims, labels.dims
        )));
    }
    if probs.class_count != labels.class_count || weights.0.len() != probs.class_count {
        return Err(Error::usage(format!(
            "class counts disagree: probabilities {}, labels {}, weights {}",
            probs.class_count,
            labels.class_count,
            weights.0.len()
        )));
    }
    let mut acc = KahanSum::default();
    for (v, &t) in labels.labels.iter().enumerate() {
        let p = probs.prob(t as usize, v).max(PROB_FLOOR);
        acc.add(-p.ln() * weights.0[t as usize]);
    }
    Ok(acc.total() / labels.labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume(labels: &[u8], classes: usize) -> LabelVolume {
        LabelVolume::new((labels.len(), 1, 1), classes, labels.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted_example() {
        // |A| = 4, |B| = 6, |A ∩ B| = 3
        let pred = volume(&[1, 1, 1, 1, 0, 0, 0, 0, 0], 2);
        let refr = volume(&[1, 1, 1, 0, 1, 1, 1, 0, 0], 2);
        let m = &evaluate(&pred, &refr).unwrap().classes[0];
        assert!((m.dice - 0.6).abs() < 1e-12);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.5).abs() < 1e-12);
        assert!((m.voe_percent - 57.142857).abs() < 1e-6);
        assert!((m.vd_percent.unwrap() + 33.333333).abs() < 1e-6);
    }

    #[test]
    fn identity_and_disjoint() {
        let a = volume(&[0, 1, 1, 2, 0], 3);
        let r = evaluate(&a, &a).unwrap();
        for m in &r.classes {
            assert_eq!((m.dice, m.precision, m.recall, m.voe_percent), (1.0, 1.0, 1.0, 0.0));
            assert_eq!(m.vd_percent, Some(0.0));
        }
        let b = volume(&[1, 0, 0, 0, 0], 2);
        let c = volume(&[0, 1, 0, 0, 0], 2);
        let m = &evaluate(&b, &c).unwrap().classes[0];
        assert_eq!((m.dice, m.voe_percent), (0.0, 100.0));
    }

    #[test]
    fn empty_set_conventions() {
        let empty = volume(&[0, 0, 0], 2);
        let some = volume(&[1, 0, 0], 2);
        let m = &evaluate(&empty, &empty).unwrap().classes[0];
        assert_eq!((m.dice, m.voe_percent, m.vd_percent), (1.0, 0.0, Some(0.0)));
        let m = &evaluate(&some, &empty).unwrap().classes[0];
        assert_eq!((m.dice, m.voe_percent, m.vd_percent), (0.0, 100.0, None));
        let m = &evaluate(&empty, &some).unwrap().classes[0];
        assert_eq!((m.dice, m.voe_percent, m.vd_percent), (0.0, 100.0, Some(-100.0)));
        let table = evaluate(&some, &empty).unwrap().to_table(&[]);
        assert!(table.contains("1\tvd_percent\tundefined\n"));
    }

    #[test]
    fn mismatches_are_usage_errors() {
        let a = volume(&[0, 1], 2);
        let b = volume(&[0, 1, 1], 2);
        assert!(matches!(evaluate(&a, &b), Err(Error::Usage(_))));
        let c = volume(&[0, 1], 3);
        assert!(matches!(evaluate(&a, &c), Err(Error::Usage(_))));
        assert!(LabelVolume::new((2, 1, 1), 2, vec![0, 2]).is_err());
    }

    #[test]
    fn wce_values() {
        let labels = volume(&[0, 1], 2);
        let uniform = ProbVolume::new((2, 1, 1), 2, vec![0.5; 4]).unwrap();
        let loss = wce_loss(&uniform, &labels, &ClassWeights::uniform(2)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        // class-slowest: p0 = (0.9, 0.2), p1 = (0.1, 0.8)
        let probs = ProbVolume::new((2, 1, 1), 2, vec![0.9, 0.2, 0.1, 0.8]).unwrap();
        let w = ClassWeights::new(vec![1.0, 2.0]).unwrap();
        let loss = wce_loss(&probs, &labels, &w).unwrap();
        let expected = (-(0.9f64.ln()) - 2.0 * 0.8f64.ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.275824).abs() < 1e-6);

        let perfect = ProbVolume::new((2, 1, 1), 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(wce_loss(&perfect, &labels, &w).unwrap(), 0.0);
    }

    #[test]
    fn hard_zero_probability_is_floored() {
        let labels = volume(&[1], 2);
        let probs = ProbVolume::new((1, 1, 1), 2, vec![1.0, 0.0]).unwrap();
        let loss = wce_loss(&probs, &labels, &ClassWeights::uniform(2)).unwrap();
        assert!((loss + 1e-12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn prob_volume_validation() {
        assert!(ProbVolume::new((1, 1, 1), 2, vec![0.6, 0.6]).is_err());
        assert!(ProbVolume::new((1, 1, 1), 2, vec![1.2, -0.2]).is_err());
        assert!(ClassWeights::new(vec![1.0, 0.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
            (1usize..60).prop_flat_map(|n| {
                (
                    proptest::collection::vec(0u8..3, n),
                    proptest::collection::vec(0u8..3, n),
                )
            })
        }

        proptest! {
            #[test]
            fn dice_symmetric_and_tied_to_voe((a, b) in pair()) {
                let (a, b) = (volume(&a, 3), volume(&b, 3));
                let ab = evaluate(&a, &b).unwrap();
                let ba = evaluate(&b, &a).unwrap();
                for (x, y) in ab.classes.iter().zip(&ba.classes) {
                    prop_assert_eq!(x.dice, y.dice);
                    prop_assert_eq!(x.precision, y.recall);
                    let j = 1.0 - x.voe_percent / 100.0;
                    prop_assert!((x.dice - 2.0 * j / (1.0 + j)).abs() < 1e-9);
                    prop_assert!((0.0..=100.0).contains(&x.voe_percent));
                }
            }

            #[test]
            fn loss_nonnegative_and_monotone(p in proptest::collection::vec(0.01f64..0.98, 1..20), bump in 0.0f64..0.01) {
                let n = p.len();
                let labels = LabelVolume::new((n, 1, 1), 2, vec![1; n]).unwrap();
                let make = |q: &[f64]| {
                    let mut data: Vec<f64> = q.iter().map(|x| 1.0 - x).collect();
                    data.extend_from_slice(q);
                    ProbVolume::new((n, 1, 1), 2, data).unwrap()
                };
                let w = ClassWeights::new(vec![1.0, 3.0]).unwrap();
                let base = wce_loss(&make(&p), &labels, &w).unwrap();
                let raised: Vec<f64> = p.iter().map(|x| x + bump + 1e-3).collect();
                let better = wce_loss(&make(&raised), &labels, &w).unwrap();
                prop_assert!(base >= 0.0);
                prop_assert!(better < base);
            }
        }
    }
}
