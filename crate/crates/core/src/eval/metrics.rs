//! gIoU, cIoU, P@50 and P@50:95 over per-item IoUs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::exact_sum::ExactSum;
use super::EvalError;
use crate::mask::{intersection_union_counts, ratio, RleMask};
use crate::pipeline::PipelineTrace;

/// IoU thresholds 0.50, 0.55, ..., 0.95, built from integers so each is the
/// nearest double to its decimal value.
pub const THRESHOLDS: [f64; 10] = {
    let mut t = [0.0; 10];
    let mut k = 0;
    while k < 10 {
        t[k] = (50 + 5 * k) as f64 / 100.0;
        k += 1;
    }
    t
};

/// An item passes threshold `t` when its IoU strictly exceeds `t`.
pub fn passes(iou: f64, threshold: f64) -> bool {
    iou > threshold
}

/// Scores one trace against its ground truth. Failed items predict
/// nothing, so they score 0 against a non-empty ground truth and 1 against
/// an empty one.
pub fn score_item(trace: &PipelineTrace, gt: &RleMask) -> Result<ItemScore, EvalError> {
    let (intersection, union) = match &trace.result {
        Some(result) => intersection_union_counts(&result.union_mask, gt)?,
        None => (0, gt.area()),
    };
    Ok(ItemScore {
        id: trace.item_id.clone(),
        iou: ratio(intersection, union),
        intersection,
        union,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    pub iou: f64,
    pub intersection: u64,
    pub union: u64,
}

/// Running totals; a commutative monoid under [`EvalAccumulator::merge`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalAccumulator {
    n_items: u64,
    sum_iou: ExactSum,
    cum_intersection: u64,
    cum_union: u64,
    pass_counts: [u64; 10],
    items: BTreeMap<String, f64>,
}

impl EvalAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_items(&self) -> u64 {
        self.n_items
    }

    pub fn pass_counts(&self) -> [u64; 10] {
        self.pass_counts
    }

    pub fn cumulative_counts(&self) -> (u64, u64) {
        (self.cum_intersection, self.cum_union)
    }

    /// Adds one item. `iou` must lie in `[0, 1]`.
    pub fn accumulate(
        &mut self,
        id: impl Into<String>,
        iou: f64,
        (intersection, union): (u64, u64),
    ) -> Result<(), EvalError> {
        if !(0.0..=1.0).contains(&iou) {
            return Err(EvalError::InvalidArgument(format!(
                "IoU {iou} outside [0, 1]"
            )));
        }
        let id = id.into();
        if self.items.contains_key(&id) {
            return Err(EvalError::InvalidArgument(format!(
                "item {id} scored twice"
            )));
        }
        self.n_items += 1;
        self.sum_iou.add(iou);
        self.cum_intersection += intersection;
        self.cum_union += union;
        for (count, &t) in self.pass_counts.iter_mut().zip(&THRESHOLDS) {
            *count += u64::from(passes(iou, t));
        }
        self.items.insert(id, iou);
        Ok(())
    }

    pub fn add_score(&mut self, score: &ItemScore) -> Result<(), EvalError> {
        self.accumulate(
            score.id.clone(),
            score.iou,
            (score.intersection, score.union),
        )
    }

    /// Fieldwise sum. Item ids must be disjoint.
    pub fn merge(mut self, other: &EvalAccumulator) -> Result<Self, EvalError> {
        if let Some(dup) = other.items.keys().find(|k| self.items.contains_key(*k)) {
            return Err(EvalError::InvalidArgument(format!(
                "item {dup} in both accumulators"
            )));
        }
        self.n_items += other.n_items;
        self.sum_iou.merge(&other.sum_iou);
        self.cum_intersection += other.cum_intersection;
        self.cum_union += other.cum_union;
        for (a, b) in self.pass_counts.iter_mut().zip(other.pass_counts) {
            *a += b;
        }
        self.items
            .extend(other.items.iter().map(|(k, v)| (k.clone(), *v)));
        Ok(self)
    }

    pub fn finalize(&self) -> Result<EvalReport, EvalError> {
        if self.n_items == 0 {
            return Err(EvalError::EmptyEvaluation);
        }
        let n = self.n_items as f64;
        let c_iou = if self.cum_union == 0 {
            tracing::warn!("cumulative union is zero; reporting cIoU as 0");
            0.0
        } else {
            self.cum_intersection as f64 / self.cum_union as f64
        };
        let total_passes: u64 = self.pass_counts.iter().sum();
        Ok(EvalReport {
            g_iou: self.sum_iou.value() / n,
            c_iou,
            p50: self.pass_counts[0] as f64 / n,
            p50_95: total_passes as f64 / (n * THRESHOLDS.len() as f64),
            n: self.n_items,
            items: self
                .items
                .iter()
                .map(|(id, &iou)| ItemIou {
                    id: id.clone(),
                    iou,
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemIou {
    pub id: String,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "gIoU")]
    pub g_iou: f64,
    #[serde(rename = "cIoU")]
    pub c_iou: f64,
    #[serde(rename = "P50")]
    pub p50: f64,
    #[serde(rename = "P50_95")]
    pub p50_95: f64,
    pub n: u64,
    /// Sorted by id.
    pub items: Vec<ItemIou>,
}

impl EvalReport {
    /// Human-readable summary; metrics shown as percentages.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>8} {:>8} {:>8} {:>8} {:>6}",
            "gIoU", "cIoU", "P@50", "P@50:95", "n"
        );
        let _ = writeln!(
            out,
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>6}",
            self.g_iou * 100.0,
            self.c_iou * 100.0,
            self.p50 * 100.0,
            self.p50_95 * 100.0,
            self.n
        );
        out
    }
}
