//! Subset selection: random, score-ranked and cluster-based pruning.

pub mod features;
pub mod kmeans;
pub mod scores;
pub mod select;

pub use features::FeatureMap;
pub use kmeans::{inertia_csv, inertia_curve, kmeans, kmeans_tagged, Clustering};
pub use scores::{
    ema_normalizer, score_grad, score_loss, Normalizer, ScoreKind, ScoreSpec, ScoreTable,
};
pub use select::{
    allocate_quotas, select_by_center_distance, select_random, select_top, Direction, QuotaMode,
};

use serde::{Deserialize, Serialize};
use std::fmt;

/// A pruning strategy together with its inverse flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Unpruned,
    Random,
    Grad,
    GradInv,
    Loss,
    LossInv,
    ClustP,
    ClustPInv,
    ClustB,
    ClustBInv,
}

impl Method {
    /// Report column order.
    pub const ALL: [Method; 10] = [
        Method::Unpruned,
        Method::Random,
        Method::Grad,
        Method::GradInv,
        Method::Loss,
        Method::LossInv,
        Method::ClustP,
        Method::ClustPInv,
        Method::ClustB,
        Method::ClustBInv,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Unpruned => "unpruned",
            Method::Random => "random",
            Method::Grad => "grad",
            Method::GradInv => "grad-inv",
            Method::Loss => "loss",
            Method::LossInv => "loss-inv",
            Method::ClustP => "clust-p",
            Method::ClustPInv => "clust-p-inv",
            Method::ClustB => "clust-b",
            Method::ClustBInv => "clust-b-inv",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Unpruned => "Unpruned",
            Method::Random => "Random",
            Method::Grad => "Grad",
            Method::GradInv => "Grad⁻¹",
            Method::Loss => "Loss",
            Method::LossInv => "Loss⁻¹",
            Method::ClustP => "Clust_p",
            Method::ClustPInv => "Clust_p⁻¹",
            Method::ClustB => "Clust_b",
            Method::ClustBInv => "Clust_b⁻¹",
        }
    }

    pub fn inverse(self) -> bool {
        matches!(
            self,
            Method::GradInv | Method::LossInv | Method::ClustPInv | Method::ClustBInv
        )
    }

    pub fn score_kind(self) -> Option<ScoreKind> {
        match self {
            Method::Grad | Method::GradInv => Some(ScoreKind::Grad),
            Method::Loss | Method::LossInv => Some(ScoreKind::Loss),
            _ => None,
        }
    }

    pub fn quota_mode(self) -> Option<QuotaMode> {
        match self {
            Method::ClustP | Method::ClustPInv => Some(QuotaMode::Proportional),
            Method::ClustB | Method::ClustBInv => Some(QuotaMode::Balanced),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| crate::Error::invalid(format!("unknown pruning method `{s}`")))
    }
}
