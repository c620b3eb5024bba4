//! Deterministic block-stepped simulator of a pooled lending protocol,
//! plus analytics that reproduce standard empirical measurements on the
//! simulated event ledgers.

pub mod agents;
pub mod amm;
pub mod analytics;
pub mod comptroller;
pub mod engine;
pub mod interest;
pub mod ledger;
pub mod oracle;
pub mod pool;
pub mod report;
pub mod scenario;
pub mod testing;
pub mod wad;

pub use engine::{run, run_crash_experiment, sweep, RunOutput};
pub use ledger::{
    AddressId, AgentCategory, BlockClock, Event, EventKind, Ledger, TokenId, TokenInfo,
};
pub use scenario::Scenario;
pub use wad::{SignedWad, Wad, WAD};
