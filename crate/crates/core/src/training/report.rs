use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dataset::{DatasetView, SampleRecord};
use crate::error::{Error, Result};
use crate::geometry::{angular_distance_exact, GazeVector};
use crate::layers::Mode;
use crate::model::{Model, VariantKind};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tape};

use super::{check_geometry, make_batch, EpochStats};

const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionStats {
    pub mean: f64,
    pub std: f64,
}

impl AttentionStats {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(AttentionStats { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectReport {
    pub subject: u16,
    pub count: usize,
    /// Mean angular error of the basic gaze `g_b`, degrees.
    pub basic_deg: f64,
    /// Mean angular error of the final gaze `g`, degrees.
    pub refined_deg: f64,
    pub w_l: Option<AttentionStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub count: usize,
    pub basic_deg: f64,
    pub refined_deg: f64,
    pub subjects: Vec<SubjectReport>,
    /// Left-eye attention weight over all samples; absent for variants
    /// without attention.
    pub w_l: Option<AttentionStats>,
}

/// Per-sample outcome: subject, basic error, refined error, left weight.
type SampleScore = (u16, f64, f64, Option<f64>);

fn aggregate(scores: &[SampleScore]) -> EvalReport {
    let summarize = |rows: &[&SampleScore]| {
        let n = rows.len() as f64;
        let w: Vec<f64> = rows.iter().filter_map(|r| r.3).collect();
        (
            rows.iter().map(|r| r.1).sum::<f64>() / n,
            rows.iter().map(|r| r.2).sum::<f64>() / n,
            AttentionStats::of(&w),
        )
    };
    let mut by_subject: BTreeMap<u16, Vec<&SampleScore>> = BTreeMap::new();
    for s in scores {
        by_subject.entry(s.0).or_default().push(s);
    }
    let subjects = by_subject
        .into_iter()
        .map(|(subject, rows)| {
            let (basic_deg, refined_deg, w_l) = summarize(&rows);
            SubjectReport {
                subject,
                count: rows.len(),
                basic_deg,
                refined_deg,
                w_l,
            }
        })
        .collect();
    let all: Vec<&SampleScore> = scores.iter().collect();
    let (basic_deg, refined_deg, w_l) = summarize(&all);
    EvalReport {
        count: scores.len(),
        basic_deg,
        refined_deg,
        subjects,
        w_l,
    }
}

fn row_vector<T: Scalar>(data: &[T], i: usize) -> GazeVector {
    GazeVector::new(data[3 * i].as_f64(), data[3 * i + 1].as_f64(), data[3 * i + 2].as_f64())
}

/// Mean angular errors in degrees over a view, using running batch-norm
/// statistics. Parameters are not touched.
pub fn evaluate(model: &Model, store: &ParamStore<f32>, view: &DatasetView) -> Result<EvalReport> {
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let geometry = view.dataset().geometry();
    check_geometry(model, geometry)?;
    let mut scores = Vec::with_capacity(view.len());
    let records: Vec<&SampleRecord> = view.iter().collect();
    for chunk in records.chunks(EVAL_BATCH) {
        let batch = make_batch::<f32>(chunk, geometry);
        let mut tape = Tape::new();
        let face = tape.constant(batch.face);
        let left = tape.constant(batch.left);
        let right = tape.constant(batch.right);
        let out = model.forward(&mut tape, store, face, left, right, Mode::Eval)?;
        let (g, g_b) = (tape.value(out.g).data(), tape.value(out.g_b).data());
        let w_l = out.attention.map(|a| tape.value(a.w_l).data());
        for (i, r) in chunk.iter().enumerate() {
            let truth = r.gaze_vector();
            scores.push((
                r.subject_id,
                angular_distance_exact(row_vector(g_b, i), truth)?.to_degrees(),
                angular_distance_exact(row_vector(g, i), truth)?.to_degrees(),
                w_l.map(|w| w[i].as_f64()),
            ));
        }
    }
    Ok(aggregate(&scores))
}

/// Scores a predictor that always answers `gaze`, as both basic and final
/// output.
pub fn evaluate_constant(view: &DatasetView, gaze: GazeVector) -> Result<EvalReport> {
    if view.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scores = view
        .iter()
        .map(|r| {
            let e = angular_distance_exact(gaze, r.gaze_vector())?.to_degrees();
            Ok((r.subject_id, e, e, None))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&scores))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl EvalReport {
    /// One row per subject then an `all` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("subject,count,basic_deg,refined_deg,w_l_mean,w_l_std\n");
        let mut row = |id: String, count: usize, b: f64, r: f64, w: Option<AttentionStats>| {
            let _ = writeln!(s, "{id},{count},{b},{r},{},{}", opt(w.map(|w| w.mean)), opt(w.map(|w| w.std)));
        };
        for sub in &self.subjects {
            row(sub.subject.to_string(), sub.count, sub.basic_deg, sub.refined_deg, sub.w_l);
        }
        row("all".into(), self.count, self.basic_deg, self.refined_deg, self.w_l);
        s
    }
}

pub fn loss_curve_csv(curve: &[EpochStats]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for e in curve {
        let _ = writeln!(s, "{},{}", e.epoch, e.mean_loss);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: VariantKind,
    pub params: usize,
    pub final_loss: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, variant: VariantKind) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,params,final_loss,basic_deg,refined_deg,w_l_mean,w_l_std\n");
        for r in &self.rows {
            let w = r.report.w_l;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.variant,
                r.params,
                r.final_loss,
                r.report.basic_deg,
                r.report.refined_deg,
                opt(w.map(|w| w.mean)),
                opt(w.map(|w| w.std))
            );
        }
        s
    }
}
