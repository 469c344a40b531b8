//! Core building blocks for brightfield triplex stain unmixing: optical-density
//! color physics, classical unmixers, a synthetic tissue generator and the
//! evaluation harness.

pub mod color;
pub mod concentration;
pub mod error;
pub mod eval;
pub mod io;
pub mod seed;
pub mod stain;
pub mod synth;
pub mod unmix;

pub use color::{compose, compose_od, od_to_rgb, rgb_to_od, OdImage, OD_MAX, WHITE};
pub use concentration::ConcentrationMap;
pub use error::{Error, Result};
pub use stain::{normalize_stain_vector, Stain, StainMatrix, StainVector};
