//! Attribution quality: against known saliency ([`white_box`]), from masking
//! ([`black_box`]) and stability ([`lipschitz`]).

pub mod black_box;
pub mod lipschitz;
mod report;
pub mod white_box;

pub use black_box::{
    black_box_batch, black_box_masked, black_box_metric, masked_cells, perturbed_inputs, BlackBoxMetric, MaskMode,
    MaskPolicy, Side, WeightFn,
};
pub use lipschitz::{lipschitz_max, LipschitzOptions};
pub use report::MetricReport;
pub use white_box::{white_box_instance, white_box_metrics};
