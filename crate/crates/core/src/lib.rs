//! Covert Bayesian quickest change detection.
//!
//! Alice watches a channel whose state switches at a geometric changepoint
//! and may probe it to learn faster, while a warden (Eve) observes the same
//! channel and should not be able to tell probing from idling. The crate
//! provides the channel model, the constant-rate Shiryaev policy with its
//! budgeted probing rate, closed-form delay bounds, Monte-Carlo estimation,
//! an exact covertness check for short horizons, and a belief-grid DP
//! baseline.

pub mod bounds;
pub mod cli;
pub mod dp;
pub mod error;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod probability;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{build_channel, ChannelSpec, ChannelTables, Prior, Scenario};
pub use policy::{PolicyKind, ShiryaevState};
pub use probability::{DivergencePair, Pmf};
pub use simulate::{McSummary, PolicyTrace};
