use std::fmt::Write as _;

use super::trainer::predict_masks;
use crate::data::SliceTriplet;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, binarize_plane, csv_number, records_to_csv, BinaryMask, MetricRecord, Region, Summary};
use crate::network::Network;
use crate::real::Real;

/// The four reporting scopes, in print order. `None` is the full scan.
pub const REPORT_SCOPES: [(&str, Option<Region>); 4] = [
    ("full-scan", None),
    ("proximal", Some(Region::Proximal)),
    ("shaft", Some(Region::Shaft)),
    ("distal", Some(Region::Distal)),
];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<MetricRecord>,
}

impl EvalReport {
    pub fn summary(&self, region: Option<Region>) -> Result<Summary> {
        aggregate(&self.records, region)
    }

    /// One summary per reporting scope.
    pub fn scope_summaries(&self) -> Vec<(&'static str, Result<Summary>)> {
        REPORT_SCOPES.iter().map(|&(name, r)| (name, self.summary(r))).collect()
    }

    pub fn records_csv(&self) -> String {
        records_to_csv(&self.records)
    }

    /// `scope,slices,dice,iou,hd95,hd95_dropped`, one row per scope with
    /// at least one slice.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("scope,slices,dice,iou,hd95,hd95_dropped\n");
        for (name, sum) in self.scope_summaries() {
            if let Ok(m) = sum {
                writeln!(
                    s,
                    "{name},{},{},{},{},{}",
                    m.count,
                    csv_number(m.dice),
                    csv_number(m.iou),
                    csv_number(m.hd95),
                    m.hd95_dropped
                )
                .unwrap();
            }
        }
        s
    }
}

fn truth_mask(t: &SliceTriplet) -> BinaryMask {
    let [_, _, h, w] = t.target.dims();
    binarize_plane(t.target.data(), h, w, 0.5)
}

/// Scores given predictions against the triplets' targets.
pub fn evaluate_predictions(test: &[&SliceTriplet], predictions: &[BinaryMask]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptySet("test set is empty".into()));
    }
    if predictions.len() != test.len() {
        return Err(Error::Dimension(format!("{} predictions for {} slices", predictions.len(), test.len())));
    }
    let records = test
        .iter()
        .zip(predictions)
        .map(|(t, p)| MetricRecord::compute(t.slice_id.clone(), t.region, &truth_mask(t), p))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { records })
}

/// Eval-mode inference, binarization at 0.5, per-slice metrics.
pub fn evaluate<R: Real>(net: &Network<R>, test: &[&SliceTriplet], batch_size: usize) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptySet("test set is empty".into()));
    }
    let preds = predict_masks(net, test, batch_size)?;
    evaluate_predictions(test, &preds)
}
