//! Metric Diophantine approximation with planar star bodies.
//!
//! Distance functions are built from absolute linear forms with `min`, `max`,
//! geometric means and positive scalings ([`Expr`]). On top of that the crate
//! provides skeleton and significance analysis ([`skeleton`]), densities and
//! resonant-set membership ([`measure`], [`lattice`]), Khintchine-type series
//! and tail experiments ([`khintchine`]), circle-rotation tools
//! ([`circle`]) and transference harnesses ([`transference`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::should_implement_trait)]

pub mod circle;
pub mod cli;
pub mod dsl;
pub mod error;
pub mod expr;
pub mod khintchine;
pub mod lattice;
pub mod mc;
pub mod measure;
pub mod output;
pub mod quadrature;
pub mod scalar;
pub mod skeleton;
pub mod transference;

pub use dsl::{parse_distance_function, to_dsl};
pub use error::{Error, Result};
pub use expr::{Expr, LinearForm, Vec2};
pub use scalar::{Scalar, Surd};
