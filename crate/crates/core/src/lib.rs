//! Transaction fee mechanisms with active block producers.
//!
//! The crate models block producers with private block valuations, the
//! classic fee mechanisms (first-price auction, EIP-1559, tipless, trivial),
//! a BPS-maximizing block solver, brute-force incentive auditors, and
//! generators for the adversarial scenarios behind the impossibility results
//! for DSIC and BPIC mechanisms.

pub mod audit;
pub mod blockset;
pub mod constructions;
pub mod error;
pub mod generator;
pub mod mechanisms;
pub mod model;
pub mod money;
pub mod report;
pub mod scenario_file;
pub mod solver;

pub use audit::{AuditOptions, AuditReport, Grid, Verdict, Witness, WitnessKind};
pub use blockset::{TieOrder, Universe, DEFAULT_BUDGET};
pub use error::{Result, TfmError};
pub use mechanisms::{
    Allocation, BidVector, BiddingStrategy, Eligibility, Mechanism, StrategyWrapped, Tfm,
};
pub use model::{
    bp_value, bps, user_utility, welfare, Block, Blockset, BpValuation, Scenario, Transaction, TxId,
};
pub use money::{Money, Rational};
pub use scenario_file::{scenario_digest, ScenarioFile};
