//! One bundle per evaluated model: every metric the pipeline computes,
//! renderable as an indented key-value document and as flat CSV rows for
//! cross-run tabulation.

use crate::world::AttributeSpace;

use super::downstream::GroupMetrics;
use super::wasserstein::GaussianW2;

/// All metrics for one trained model on one world.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// Independence violation: mean JSD between the implicit joint table
    /// and the product of its marginals, in nats.
    pub jsd: f64,
    /// Conformity over every attribute tuple.
    pub cs_all: f64,
    /// Conformity over the tuples absent from generator training.
    pub cs_unseen: f64,
    /// Distance between the generated unseen-tuple cloud and a reference
    /// cloud of the same tuple.
    pub w2_unseen: GaussianW2,
    /// Probe trained on synthetic data, tested on real data.
    pub downstream: GroupMetrics,
    /// The model classifying through its own denoising errors.
    pub implicit: GroupMetrics,
}

impl MetricsReport {
    /// Header of the flat one-row-per-model CSV form.
    pub fn csv_header() -> &'static str {
        "run,jsd,cs_all,cs_unseen,w2_unseen,test_acc,balanced_acc,wga,implicit_wga"
    }

    /// The flat CSV row labeled `run`.
    pub fn csv_row(&self, run: &str) -> String {
        format!(
            "{run},{},{},{},{},{},{},{},{}",
            self.jsd,
            self.cs_all,
            self.cs_unseen,
            self.w2_unseen.distance,
            self.downstream.test_acc,
            self.downstream.balanced_acc,
            self.downstream.worst_group_acc,
            self.implicit.worst_group_acc,
        )
    }

    /// Indented key-value rendering including the per-group tables.
    pub fn to_text_tree(&self, space: &AttributeSpace) -> String {
        let mut out = String::new();
        let group_block = |out: &mut String, m: &GroupMetrics| {
            out.push_str(&format!("  test_acc: {:.4}\n", m.test_acc));
            out.push_str(&format!("  balanced_acc: {:.4}\n", m.balanced_acc));
            out.push_str(&format!("  worst_group_acc: {:.4}\n", m.worst_group_acc));
            out.push_str("  per_group:\n");
            for (tuple, acc) in &m.per_group {
                out.push_str(&format!("    {}: {:.4}\n", space.format_tuple(tuple), acc));
            }
            for tuple in &m.excluded {
                out.push_str(&format!(
                    "    {}: absent from test set\n",
                    space.format_tuple(tuple)
                ));
            }
        };
        out.push_str(&format!("jsd: {:.6}\n", self.jsd));
        out.push_str(&format!("cs_all: {:.4}\n", self.cs_all));
        out.push_str(&format!("cs_unseen: {:.4}\n", self.cs_unseen));
        out.push_str(&format!(
            "w2_unseen: {:.4}{}\n",
            self.w2_unseen.distance,
            if self.w2_unseen.regularized {
                " (covariance regularized)"
            } else {
                ""
            }
        ));
        out.push_str("downstream:\n");
        group_block(&mut out, &self.downstream);
        out.push_str("implicit_classifier:\n");
        group_block(&mut out, &self.implicit);
        out
    }
}
