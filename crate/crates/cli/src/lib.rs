//! Frontend pieces behind the `linf-mwu` binary: report serialization, the
//! reference Chebyshev oracle, the size-sweep bench harness, and the
//! invariant verification suite. Kept as a library so integration tests can
//! drive every piece directly.

pub mod bench;
pub mod reference;
pub mod report;
pub mod verify;
