//! Model-based testing framework built around symbolic finite state
//! machines: input equivalence class construction, Mealy abstraction,
//! complete module-level test suite generation with a mutation oracle, and
//! online system-level testing over symbolic scenario test trees.

pub mod abstraction;
pub mod agents;
pub mod eqclass;
pub mod fileio;
pub mod fsm;
pub mod mutation;
pub mod predicate;
pub mod sfsm;
pub mod sstt;
pub mod testgen;
pub mod train;
