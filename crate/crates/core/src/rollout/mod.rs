pub mod dataset;
pub mod distance;
pub mod guided;
pub mod recovery;
pub mod select;

pub use dataset::{collect_dataset, read_dataset, write_dataset, GenDataset};
pub use distance::{gen_distance, DistanceConfig, DistanceMode};
pub use guided::{run_guided_rollout, Driver, RolloutConfig, RolloutMode, RolloutRecord, Termination};
pub use recovery::{recovery_blend, recovery_check, RecoveryConfig};
pub use select::{select_closest, topk_select, ActionCandidateSet};
