//! Formulaic alpha mining: expression trees over market panels, a
//! flow-matching sampler trained with trajectory balance, reward shaping for
//! quality and diversity, pool combination into a composite signal, and
//! backtesting.

pub mod cli;
pub mod config;
pub mod engine;
pub mod formula;
pub mod gfn;
pub mod metrics;
pub mod pool;
pub mod rewards;
pub mod rgcn;
pub mod tensor;
pub mod trainer;
