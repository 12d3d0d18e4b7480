//! Elements of reality in correlated spin systems.
//!
//! Dense complex linear algebra ([`linalg`]), observables and correlation
//! rules ([`quantum`]), specimen supports with measurement and extension
//! rules ([`ensemble`]), the two concrete experiments ([`experiments`]) and a
//! consistent-histories treatment of the second ([`histories`]).

#[cfg(feature = "cli")]
pub mod cli;
pub mod ensemble;
pub mod experiments;
pub mod histories;
pub mod linalg;
pub mod quantum;
