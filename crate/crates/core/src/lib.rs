//! Differentially private hierarchical count-of-counts histograms.
//!
//! For every region of a hierarchy the library releases how many groups have exactly
//! `j` members. Released histograms are integral, nonnegative, sum to the public group
//! count of their region, and every parent equals the sum of its children.
//!
//! ```
//! use coc_hist::prelude::*;
//!
//! let path = |p: &str| p.split('/').map(String::from).collect::<Vec<_>>();
//! let tree = HierarchyTree::from_leaves([
//!     (path("top/a"), CountHistogram::new(vec![0, 1, 0, 0, 1])),
//!     (path("top/b"), CountHistogram::new(vec![0, 1, 1])),
//! ])?;
//! let cfg = TopDownConfig::uniform(
//!     PrivacyBudget::new(1.0)?,
//!     vec![EstimatorKind::HcL1, EstimatorKind::HcL1],
//!     SizeBound::new(16)?,
//! )?;
//! let result = top_down(&tree, &cfg, &SeededRng::new(7))?;
//! assert!(check_consistency(&result, &tree).is_empty());
//! # Ok::<(), coc_hist::Error>(())
//! ```

pub mod bench;
pub mod consistency;
pub mod data;
pub mod error;
pub mod estimators;
pub mod format;
pub mod hierarchy;
pub mod hist;
pub mod isotonic;
pub mod noise;
pub mod release;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::bench::{
        run_experiment, run_pipeline, Algorithm, BoundSpec, Budget, ExperimentConfig, PipelineSpec,
    };
    pub use crate::consistency::{
        bottom_up, check_consistency, independent, match_groups, top_down, MergeRule, TopDownConfig,
    };
    pub use crate::estimators::{estimate, EstimatorKind, NodeEstimate};
    pub use crate::hierarchy::HierarchyTree;
    pub use crate::hist::{emd, CountHistogram, CumulativeHistogram, SizeBound, UnattributedHistogram};
    pub use crate::isotonic::{isotonic, isotonic_constrained, isotonic_l1, isotonic_l2, IsotonicFit, Norm};
    pub use crate::noise::{PrivacyBudget, SeededRng};
}
