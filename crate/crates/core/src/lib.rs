//! Carousel private membership test.
//!
//! A dictionary provider publishes a compact representation `Y` of a set of
//! 128-bit identifiers. An untrusted host streams `Y` in chunks through a
//! trusted application that answers pending membership queries with a
//! data-independent scan, releasing each answer after one full pass. A Path
//! ORAM front-end over the same cuckoo table serves as the baseline.

pub mod bench;
pub mod bitpack;
pub mod carousel;
pub mod crypto;
pub mod error;
pub mod keys;
pub mod model;
pub mod oblivious;
pub mod oram;
pub mod repr;
pub mod service;

pub use error::{PmtError, Result};
pub use model::{Dictionary, ItemId, PmtParams};
