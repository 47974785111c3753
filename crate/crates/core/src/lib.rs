//! Training-free concept erasure over embedding vocabularies.
//!
//! The engine builds a density-adaptive semantic graph over a vocabulary of
//! unit embedding vectors, spreads heat from an anchor node to find the
//! entangled neighborhood of a concept, and then soft-projects prompt token
//! vectors away from that neighborhood. No model weights are touched; the
//! whole pipeline runs at inference time on embeddings alone.
//!
//! Pipeline stages, one module each:
//!
//! * [`embed`] — vocabulary tables and prompt sequences, text and binary I/O
//! * [`graph`] — sparse semantic graph with per-node adaptive thresholds
//! * [`diffusion`] — heat-kernel diffusion over the graph Laplacian
//! * [`cluster`] — anchor resolution and diffusion-ranked cluster extraction
//! * [`erase`] — geodesic attention weights and token projection
//! * [`synth`] — planted-cluster tables, proxy metrics, benchmark harness

pub mod cluster;
pub mod diffusion;
pub mod embed;
pub mod erase;
mod error;
pub mod graph;
pub mod synth;
mod vecmath;

pub use error::{Error, Result};
