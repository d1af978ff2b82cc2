//! Rank-one cutting-and-stacking constructions: exact heights, symbolic
//! words, exact lagged pair counts, weak-limit classification against
//! operator families, and an exact-time engine for staircase flows.

pub mod construction;
pub mod correlation;
pub mod flow;
pub mod matrix;
pub mod operator;
pub mod symbolic;

pub use construction::{
    catalog, heights, observable_mass, realize_stochastic, validate_schedule, ConstructionSchedule,
    CutRule, HeightsTable, RealizedSchedule, ScheduleError, ScheduleKind, SpacerRule,
    ValidatedSchedule,
};
pub use matrix::{CountMatrix, Matrix};
pub use symbolic::{Alphabet, Symbol, SymbolWord, Tower};
