//! Posted-price policy learning from sampled buyer values.
//!
//! Buyers arrive in order `1..n`; buyer `i` is offered price `π_i` and buys if
//! their value `V_i ≥ π_i`. The first sale ends the process. Welfare counts the
//! buyer's value, revenue counts the price.

pub mod diagnostics;
pub mod distributions;
pub mod dp_policy;
pub mod error;
pub mod experiments;
pub mod hard_instances;
pub mod io;
pub mod learners;
pub mod numeric;

pub use distributions::{CorrelatedSource, DiscreteDist, MixtureComponent, ProductDist, SampleSet};
pub use dp_policy::{DPResult, Objective, Price, PricePolicy};
pub use error::{Error, Result};
pub use learners::{ChangePointSet, SegmentPrices};
