//! Synthetic worlds and the training loop.
