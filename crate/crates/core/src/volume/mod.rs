//! Voxel grids, connected components and distance transforms.

mod components;
mod edt;
mod grid;

pub use components::{
    component_volumes, connected_components, label_components, BoundingBox, ComponentLabels,
    Connectivity, LesionComponent,
};
pub use edt::{distance_to_background, squared_distance_to_background, DistanceUnits};
pub use grid::VoxelGrid;
