//! Elasticity cell problems and effective tensors. (in progress)
