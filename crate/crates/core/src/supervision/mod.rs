//! Training data and training: analytic and mesh ground truth, reference
//! locations and labels, the two losses and the optimization loop.

pub mod labels;
pub mod loss;
pub mod sample;
pub mod shapes;
pub mod train;

pub use labels::{
    label_locations_analytic, label_locations_mesh, label_tetrahedra, sample_reference_locations, InsideOracle,
    LabelError, ReferenceLabels,
};
pub use loss::{loss_on_tape, multi_label_loss, neighbor_consistency_loss, total_loss, LossError, LossWeights};
pub use sample::{build_training_sample, label_cloud, synthesize_cloud, SampleError, TrainingSample};
pub use shapes::{parse_shape, OracleDescriptor, Shape, ShapeError};
pub use train::{evaluate, tet_accuracy, train, write_loss_csv, EvalLog, StepLog, TrainConfig, TrainError, TrainOutcome};

/// Independent seed for a numbered sub-stream of `seed` (SplitMix64).
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
