//! Reinforcement learning dynamics in finite games: score aggregation
//! through regularized choice maps, the induced strategy-space fields, and
//! the diagnostic toolkit used to verify their long-run behavior.

// Validation guards use `!(x > 0.0)` so that NaN inputs fail closed; the
// indexed loops walk several parallel arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod choice;
pub mod cli;
pub mod coupling;
pub mod dynamics;
pub mod ext;
pub mod game;
pub mod lp;
pub mod penalty;
pub mod trajectory;
