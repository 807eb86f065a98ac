//! The loss/point ablation: each row adds one distillation point to the
//! previous row, ending with the full configuration (plus attention).

use std::fmt::Write as _;
use std::path::Path;

use super::trainer::{train_with, Objective};
use super::Teacher;
use crate::config::{LossAssignment, LossKind, ModelConfig, ObjectiveWeights, Term, TrainConfig};
use crate::data::{Normalization, StereoSample};
use crate::error::Result;
use crate::evaluation::{evaluate_model, MetricReport};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    /// Loss function of the point the row adds.
    pub added_loss: LossKind,
    pub points: Vec<Term>,
    pub losses: LossAssignment,
    /// Student uses the attention-gated cost volume.
    pub attention: bool,
}

impl AblationRow {
    pub fn label(&self) -> String {
        let pts: Vec<&str> = self.points.iter().map(|t| t.as_str()).collect();
        let att = if self.attention { "+attention" } else { "" };
        format!("{:?}:{}{att}", self.added_loss, pts.join("+"))
    }
}

/// The six rows, in order.
pub fn ablation_rows() -> Vec<AblationRow> {
    let steps = [
        (LossKind::LogL1, Term::Spw),
        (LossKind::Cosine, Term::Cv),
        (LossKind::Cosine, Term::Fe),
        (LossKind::SmoothL1, Term::Stpw),
        (LossKind::Kld, Term::Ca),
    ];
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut losses = LossAssignment::default();
    for (kind, term) in steps {
        points.push(term);
        losses.set(term, kind);
        rows.push(AblationRow { added_loss: kind, points: points.clone(), losses, attention: false });
    }
    rows.push(AblationRow { added_loss: LossKind::Cosine, points, losses, attention: true });
    rows
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub row: AblationRow,
    pub report: MetricReport,
}

pub const ABLATION_HEADER: &str = "row,label,epe,d1,px3,px2,px1";

pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for (i, r) in results.iter().enumerate() {
        let k = &r.report.kpx_percent;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            i + 1,
            r.row.label(),
            r.report.epe_px,
            r.report.d1_percent,
            k[2],
            k[1],
            k[0]
        );
    }
    s
}

/// Trains one student per row and scores it on `test`.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    rows: &[AblationRow],
    cfg: &TrainConfig,
    model: &ModelConfig,
    weights: &ObjectiveWeights,
    mut teacher: Option<&mut dyn Teacher>,
    train: &[StereoSample],
    test: &[StereoSample],
    out_dir: &Path,
    progress: &mut dyn FnMut(usize, &super::EpochRecord),
) -> Result<Vec<AblationResult>> {
    let mut results = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let mut m = model.clone();
        m.use_attention = row.attention;
        let objective = Objective::new(weights.clone(), row.losses, &row.points)?;
        let dir = out_dir.join(format!("row{}", i + 1));
        let t = if objective.needs_teacher() { super::reborrow(&mut teacher) } else { None };
        let outcome = train_with(cfg, &m, &objective, t, train, test, &dir, &mut |r| progress(i + 1, r))?;
        let (report, _) =
            evaluate_model(&outcome.student.net, &outcome.student.store, test, &Normalization::default())?;
        results.push(AblationResult { row: row.clone(), report });
        std::fs::write(out_dir.join("ablation.csv"), ablation_csv(&results))
            .map_err(|e| crate::error::Error::io(out_dir.join("ablation.csv"), e))?;
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_grow_one_point_at_a_time() {
        let rows = ablation_rows();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].points, vec![Term::Spw]);
        assert_eq!(rows[0].losses.spw, LossKind::LogL1);
        for w in rows.windows(2).take(4) {
            assert_eq!(w[1].points.len(), w[0].points.len() + 1);
        }
        let last = &rows[5];
        assert!(last.attention);
        assert_eq!(last.points.len(), 5);
        assert_eq!(last.losses, LossAssignment::default());
    }
}
