//! File formats, dataset preparation and the `fairreg` command line on top
//! of `fairreg-core`.

pub mod audit;
pub mod cli;
pub mod compas;
pub mod model;
pub mod table;
pub mod verify;
