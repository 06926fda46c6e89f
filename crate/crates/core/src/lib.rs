//! Super-replication pricing and power-utility portfolio optimization in a
//! binomial market with proportional transaction costs.
//!
//! Both problems are solved through price systems `(ρ⁰, ρ¹)`: martingale
//! pairs whose ratio `A = ρ¹/ρ⁰` (the shadow price) stays inside the bid-ask
//! band. Pricing becomes a backward recursion over concave piecewise-linear
//! functions of `A`; utility maximization becomes a recursion over a
//! normalized dual curve. Brute-force primal solvers in [`oracle`] check both.
//!
//! The numerical kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the oracles and the
//! CLI use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod market;
pub mod oracle;
pub mod price_system;
pub mod pwl;
pub mod scalar;
pub mod superhedge;
pub mod utility;

pub use error::{Error, Result};
pub use market::{Move, NodeIndex, PathWord};
pub use scalar::Scalar;

pub type MarketParams = market::MarketParams<f64>;
pub type Payoff = market::Payoff<f64>;
pub type PortfolioState = market::PortfolioState<f64>;
pub type Strategy = market::Strategy<f64>;
pub type ControlField = price_system::ControlField<f64>;
pub type PriceSystemTree = price_system::PriceSystemTree<f64>;
pub type PiecewiseLinearConcave = pwl::PiecewiseLinearConcave<f64>;
pub type ValueSurface = superhedge::ValueSurface<f64>;
pub type PowerUtility = utility::PowerUtility<f64>;
pub type VhatCurve = utility::VhatCurve<f64>;

pub type MarketParamsF32 = market::MarketParams<f32>;
pub type PayoffF32 = market::Payoff<f32>;
