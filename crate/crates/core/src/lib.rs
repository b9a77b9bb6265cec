//! Self-supervised, online-adaptive deep receivers.
//!
//! Two learned receivers are provided: [`viterbinet`] (a Viterbi equalizer
//! whose branch metrics come from a small classifier) for finite-memory
//! single-antenna channels, and [`deepsic`] (iterative soft interference
//! cancellation built from per-user classifier modules) for multi-user
//! channels. Coded blocks pass through a Reed-Solomon decoder whose
//! re-encoded output serves as training labels; [`training`] adapts the
//! receivers online, optionally meta-learning the initialization used for
//! each block. [`harness`] wires it all into reproducible block streams.

pub mod block;
pub mod channel;
pub mod cli;
pub mod deepsic;
pub mod fec;
pub mod harness;
pub mod neural;
pub mod par;
pub mod training;
pub mod viterbinet;
