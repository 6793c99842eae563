//! Verification oracles. (in progress)
