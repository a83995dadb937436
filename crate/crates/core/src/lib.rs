//! Concurrent tabling: a page-based allocator, lock-free tries, a table
//! space with several sharing designs, an evaluation engine, an analytic
//! memory model and the benchmark workloads used to exercise them.

pub mod bench;
pub mod engine;
pub mod memmodel;
pub mod pagealloc;
pub mod tablespace;
pub mod term;
pub mod trie;

pub use engine::{
    parse_goal, solve, Engine, EngineError, EvalConfig, EvalStats, Program, Scheduling, Solution,
    ThreadStats,
};
pub use memmodel::{predict, reconcile, MemParams, MemReport};
pub use pagealloc::{AllocConfig, HeapStats};
pub use tablespace::{Design, Mode, TableSpace, TableSpaceConfig};
pub use term::{PredId, Term};
pub use trie::{HashScheme, TrieConfig, TrieStats};
