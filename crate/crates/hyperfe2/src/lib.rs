//! Desk-scale hyper-reduced multiscale homogenization.

pub mod constraint;
pub mod bench;
pub mod coupon;
pub mod cubature;
pub mod element;
pub mod error;
pub mod hf;
pub mod hpr;
pub mod io;
pub mod material;
pub mod mesh;
pub mod reconstruction;
pub mod reduction;
pub mod sampling;
pub mod solver;
pub mod voigt;

pub use error::{Error, Result};
pub use voigt::Dim;
