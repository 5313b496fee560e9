//! Sparse training of wide fully-connected classifiers with hash-table
//! neuron sampling.
//!
//! Each layer may keep `L` locality-sensitive hash tables over its neurons'
//! weight vectors. During the forward pass the layer input is hashed, the
//! matching buckets are read, and only the retrieved neurons are evaluated
//! and updated. Workers process batch instances in parallel and write
//! parameters without locks.
//!
//! Module map:
//!
//! * [`sparse`]: sparse vectors,
//! * [`hash`]: SimHash, WTA, DWTA and DOPH families,
//! * [`table`]: bucketed hash tables with rebuild scheduling,
//! * [`sampler`]: active-set selection strategies and retrieval probabilities,
//! * [`net`]: the network, sparse forward/backward, Adam and checkpoints,
//! * [`data`]: dataset parsing, batching and precision@k,
//! * [`oracle`]: slow reference implementations used for verification.

pub mod data;
pub mod hash;
pub mod hogwild;
pub mod net;
pub mod oracle;
pub mod sampler;
pub mod sparse;
pub mod table;

pub use sparse::SparseVector;
