//! Rate–distortion engine: step-size search, bit-depth–distortion curves,
//! Lagrangian bit allocation, frontier sweeps, basis overhead accounting,
//! and factored inference.

mod allocate;
mod curves;
mod factored;
mod grid;
mod plan;
mod sweep;

pub use allocate::{allocate_bits, allocate_unit, objective};
pub use curves::{
    build_section_curves, step_size_search, CurveConfig, DistortionProbe, RDCurve, Section, Unit,
};
pub use factored::{acceleration, factored_forward, network_acceleration, FactoredLayer, FlopCount};
pub use grid::delta_grid;
pub use plan::{
    budget_for, overhead_bits, overhead_elements, partition_blocks, quantize_cols, quantize_rows,
    stored_basis_cols, BitBudget, BlockAssignment, LayerBits, LayerPlan, TransformedLayer,
};
pub use sweep::{
    build_transform, compress_to_rate, frontier_csv, lagrangian_sweep, prepare, top1_agreement,
    Prepared, PreparedLayer, SweepConfig, SweepPoint, FRONTIER_CSV_HEADER,
};

pub(crate) mod plan_internals {
    pub(crate) use super::plan::{
        gather_col_block, gather_row_block, reconstruct_weights, scatter_col_block,
        scatter_row_block,
    };
}
