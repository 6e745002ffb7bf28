//! Classification metrics and the head's parameter breakdown.

use serde::{Deserialize, Serialize};

use crate::circuit::{param_count, CandidateDescriptor, CANDIDATES_PER_BLOCK};
use crate::error::{Error, Result};
use crate::head::HeadConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub kappa: f64,
    /// Macro-averaged.
    pub precision: f64,
    /// Macro-averaged.
    pub recall: f64,
    /// `confusion[label][prediction]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "predictions vs labels",
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (sample, (&p, &l)) in predictions.iter().zip(labels).enumerate() {
        if p >= n_classes || l >= n_classes {
            return Err(Error::LabelOutOfRange {
                sample,
                label: p.max(l),
                n_classes,
            });
        }
        confusion[l][p] += 1;
    }
    let total = labels.len();
    let support: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
    let predicted: Vec<usize> = (0..n_classes).map(|k| confusion.iter().map(|row| row[k]).sum()).collect();
    let correct: usize = (0..n_classes).map(|k| confusion[k][k]).sum();

    let (mut p_sum, mut r_sum, mut f_sum, mut f_weighted) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..n_classes {
        if support[k] == 0 {
            log::warn!("class {k} is absent from the labels; it scores 0 in macro averages");
        }
        let precision = ratio(confusion[k][k], predicted[k]);
        let recall = ratio(confusion[k][k], support[k]);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
        f_weighted += f1 * support[k] as f64;
    }
    let k = n_classes as f64;
    let p_o = ratio(correct, total);
    let p_e: f64 = support
        .iter()
        .zip(&predicted)
        .map(|(&s, &p)| ratio(s, total) * ratio(p, total))
        .sum();
    let kappa = if p_e >= 1.0 { 1.0 } else { (p_o - p_e) / (1.0 - p_e) };
    Ok(MetricsReport {
        accuracy: p_o,
        f1_macro: f_sum / k,
        f1_weighted: f_weighted / total as f64,
        kappa,
        precision: p_sum / k,
        recall: r_sum / k,
        confusion,
    })
}

/// Trainable-value counts per parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub projection: usize,
    pub lcu: usize,
    pub qsvt: usize,
    /// Angle count of every QFF candidate, in candidate order.
    pub qff_per_candidate: Vec<usize>,
    /// Index of the QFF candidate in use, if the architecture is fixed.
    pub qff_selected: Option<usize>,
    /// QFF angles in use: all 24 sets while searching, one set otherwise.
    pub qff: usize,
    pub classifier: usize,
    pub structural: usize,
    /// `lcu + qsvt + qff`.
    pub quantum: usize,
    pub total: usize,
}

/// Parameter breakdown for a search (`arch = None`) or a fixed architecture.
pub fn param_report(cfg: &HeadConfig, arch: Option<(&CandidateDescriptor, &CandidateDescriptor)>) -> Result<ParamReport> {
    cfg.validate()?;
    let slots = cfg.n_angle_slots();
    let projection = slots * cfg.feat_dim + slots;
    let lcu = 2 * cfg.seq_len;
    let qsvt = cfg.qsvt_degree + 1;
    let qff_per_candidate: Vec<usize> = cfg
        .qff_candidates()
        .iter()
        .map(|c| param_count(c, cfg.n_qubits))
        .collect();
    let (qff_selected, qff, structural) = match arch {
        Some((_, q)) => (Some(q.index()), qff_per_candidate[q.index()], 0),
        None => (None, qff_per_candidate.iter().sum(), 2 * CANDIDATES_PER_BLOCK),
    };
    let classifier = cfg.n_features() * cfg.n_classes + cfg.n_classes;
    let quantum = lcu + qsvt + qff;
    Ok(ParamReport {
        projection,
        lcu,
        qsvt,
        qff_per_candidate,
        qff_selected,
        qff,
        classifier,
        structural,
        quantum,
        total: projection + quantum + classifier + structural,
    })
}
