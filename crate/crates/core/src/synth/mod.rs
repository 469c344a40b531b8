//! Synthetic multiplex tissue: cell layouts, rendering and dataset assembly.

pub mod dataset;
pub mod layout;
pub mod patches;
pub mod render;

pub use dataset::{build_dataset, Arm, Dataset, DatasetConfig, EvalPair, PatchRecord};
pub use layout::{generate_layout, Cell, CellLayout, FovSpec};
pub use patches::{extract_patches, Patch, PatchSet, Split, SplitRatio};
pub use render::{render, render_concentrations};
