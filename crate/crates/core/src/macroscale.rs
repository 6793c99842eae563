//! Coupled macroscopic solver. (in progress)
