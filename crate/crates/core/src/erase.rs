//! Graph-guided soft projection of prompt tokens.
//!
//! For each token, a virtual node is attached to every vocabulary node whose
//! cosine with the token direction exceeds the attachment threshold, with
//! edge length `1 - cos`; graph edges contribute length `1 - similarity`.
//! Dijkstra from the virtual node yields geodesic distances d_G. Cluster
//! members then receive attention weights
//!
//!   alpha_v = softmax_v(-d_G(p, e_v) / sigma_p)
//!
//! (stabilized by subtracting the minimum distance; unreachable members get
//! weight zero), and the token is projected:
//!
//!   p <- p - sum_v alpha_v <p, e_v> e_v
//!
//! A token no cluster can reach is left bit-identical. Concepts in a plan
//! apply sequentially to the token as it evolves; tokens are independent and
//! run in parallel. All arithmetic accumulates in f64; the edited prompt is
//! rounded back to f32 storage once at the end.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::Serialize;

use crate::cluster::ConceptCluster;
use crate::embed::PromptEmbedding;
use crate::error::{Error, Result};
use crate::graph::SemanticGraph;
use crate::vecmath;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErasureParams {
    /// Softmax temperature over geodesic distances.
    pub sigma_p: f64,
    /// Minimum cosine for attaching a token's virtual node.
    pub attach_threshold: f64,
    /// Projection repetitions per concept; extra passes grind down residue
    /// left by non-orthogonal cluster members.
    pub passes: usize,
}

impl Default for ErasureParams {
    fn default() -> Self {
        ErasureParams {
            sigma_p: 1.0,
            attach_threshold: 0.3,
            passes: 1,
        }
    }
}

impl ErasureParams {
    /// Defaults with the attachment threshold matched to the graph's own
    /// base similarity threshold.
    pub fn for_graph(graph: &SemanticGraph) -> Self {
        ErasureParams {
            attach_threshold: graph.params().tau0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_p > 0.0 && self.sigma_p.is_finite()) {
            return Err(Error::validation(format!(
                "sigma_p must be positive and finite, got {}",
                self.sigma_p
            )));
        }
        if !(self.attach_threshold >= 0.0 && self.attach_threshold < 1.0) {
            return Err(Error::validation(format!(
                "attach_threshold must lie in [0, 1), got {}",
                self.attach_threshold
            )));
        }
        if self.passes < 1 {
            return Err(Error::validation("passes must be at least 1"));
        }
        Ok(())
    }
}

/// One column of the attention matrix: which concept block and which member.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaColumn {
    pub concept_index: usize,
    pub node_id: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TokenResidual {
    pub token_index: usize,
    /// max |<edited token, e_v>| over every member of every plan cluster.
    pub max_residual: f64,
    /// True when no cluster reached the token and it passed through intact.
    pub skipped: bool,
}

#[derive(Debug)]
pub struct ErasureResult {
    pub edited: PromptEmbedding,
    /// Plan-order concatenation of the clusters' member columns.
    pub alpha_columns: Vec<AlphaColumn>,
    /// One row per token; each concept's block sums to 1, or is all zero
    /// when that cluster cannot reach the token.
    pub per_token_alpha: Vec<Vec<f64>>,
    pub residuals: Vec<TokenResidual>,
}

/// Geodesic distances from a token to every graph node, +inf when
/// unreachable. Fails on a zero-norm token.
pub fn token_distances(
    graph: &SemanticGraph,
    token: &[f32],
    attach_threshold: f64,
) -> Result<Vec<f64>> {
    if token.len() != graph.table().dim() {
        return Err(Error::validation(format!(
            "token has dimension {}, table has {}",
            token.len(),
            graph.table().dim()
        )));
    }
    let unit = vecmath::unit_f64(token)
        .ok_or_else(|| Error::validation("zero-norm token has no direction"))?;
    Ok(distances_from_unit(graph, &unit, attach_threshold))
}

/// Geodesic distance from a token to one target node.
pub fn token_distance(
    graph: &SemanticGraph,
    token: &[f32],
    target: usize,
    attach_threshold: f64,
) -> Result<f64> {
    if target >= graph.node_count() {
        return Err(Error::validation(format!(
            "target node {target} out of range for {} nodes",
            graph.node_count()
        )));
    }
    Ok(token_distances(graph, token, attach_threshold)?[target])
}

/// Dijkstra from a virtual source attached along the unit token direction.
/// Distances are sums of nonnegative `1 - similarity` lengths; cosines are
/// clamped so f32 rounding can never produce a negative edge.
fn distances_from_unit(graph: &SemanticGraph, unit: &[f64], attach_threshold: f64) -> Vec<f64> {
    let m = graph.node_count();
    let table = graph.table();
    let mut dist = vec![f64::INFINITY; m];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    for j in 0..m {
        let cos = vecmath::dot_mixed(unit, table.row(j));
        if cos > attach_threshold {
            let d = (1.0 - cos).max(0.0);
            if d < dist[j] {
                dist[j] = d;
                heap.push(Reverse((d.to_bits(), j)));
            }
        }
    }
    while let Some(Reverse((bits, i))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[i] {
            continue;
        }
        for (j, _, sim) in graph.neighbors(i) {
            let cand = d + (1.0 - sim as f64).max(0.0);
            if cand < dist[j] {
                dist[j] = cand;
                heap.push(Reverse((cand.to_bits(), j)));
            }
        }
    }
    dist
}

/// Stabilized softmax over negated distances. Infinite distances get weight
/// zero; an all-infinite row collapses to all zeros.
pub fn attention_weights(distances: &[f64], sigma_p: f64) -> Vec<f64> {
    let dmin = distances
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !dmin.is_finite() {
        return vec![0.0; distances.len()];
    }
    let mut w: Vec<f64> = distances
        .iter()
        .map(|&d| {
            if d.is_finite() {
                (-(d - dmin) / sigma_p).exp()
            } else {
                0.0
            }
        })
        .collect();
    let sum: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= sum;
    }
    w
}

/// One application of the soft projection: all inner products are taken
/// against the incoming token, then subtracted together.
pub fn project_token(
    work: &mut [f64],
    members: &[usize],
    alpha: &[f64],
    graph: &SemanticGraph,
) {
    debug_assert_eq!(members.len(), alpha.len());
    let table = graph.table();
    let coeffs: Vec<f64> = members
        .iter()
        .zip(alpha)
        .map(|(&v, &a)| a * vecmath::dot_mixed(work, table.row(v)))
        .collect();
    for (&v, &c) in members.iter().zip(&coeffs) {
        if c == 0.0 {
            continue;
        }
        for (w, e) in work.iter_mut().zip(table.row(v)) {
            *w -= c * *e as f64;
        }
    }
}

/// Applies every cluster in plan order to every token. Returns the edited
/// prompt plus the attention rows and a residual report.
pub fn erase(
    prompt: &PromptEmbedding,
    plan: &[ConceptCluster],
    graph: &SemanticGraph,
    params: &ErasureParams,
) -> Result<ErasureResult> {
    params.validate()?;
    if plan.is_empty() {
        return Err(Error::validation("erase plan holds no clusters"));
    }
    let dim = graph.table().dim();
    if prompt.dim() != dim {
        return Err(Error::validation(format!(
            "prompt dimension {} does not match table dimension {dim}",
            prompt.dim()
        )));
    }
    for i in 0..prompt.len() {
        if vecmath::norm(prompt.token(i)) == 0.0 {
            return Err(Error::validation(format!(
                "token {i} has zero norm and no direction to erase"
            )));
        }
    }

    struct TokenOutcome {
        data: Vec<f32>,
        alpha_row: Vec<f64>,
        touched: bool,
    }

    let outcomes: Vec<TokenOutcome> = (0..prompt.len())
        .into_par_iter()
        .map(|ti| {
            let original = prompt.token(ti);
            let mut work: Vec<f64> = original.iter().map(|x| *x as f64).collect();
            let mut alpha_row = Vec::new();
            let mut touched = false;
            for cluster in plan {
                // A token fully consumed by an earlier concept attaches to
                // nothing; its remaining blocks are zero.
                let norm = vecmath::norm_f64(&work);
                if norm == 0.0 {
                    alpha_row.extend(std::iter::repeat(0.0).take(cluster.members.len()));
                    continue;
                }
                let unit: Vec<f64> = work.iter().map(|x| x / norm).collect();
                let dist = distances_from_unit(graph, &unit, params.attach_threshold);
                let member_d: Vec<f64> =
                    cluster.members.iter().map(|&v| dist[v]).collect();
                let alpha = attention_weights(&member_d, params.sigma_p);
                if alpha.iter().all(|a| *a == 0.0) {
                    alpha_row.extend(alpha);
                    continue;
                }
                touched = true;
                for _ in 0..params.passes {
                    project_token(&mut work, &cluster.members, &alpha, graph);
                }
                alpha_row.extend(alpha);
            }
            let data = if touched {
                work.iter().map(|x| *x as f32).collect()
            } else {
                original.to_vec()
            };
            TokenOutcome {
                data,
                alpha_row,
                touched,
            }
        })
        .collect();

    let union: Vec<usize> = {
        let mut set = std::collections::BTreeSet::new();
        for cluster in plan {
            set.extend(cluster.members.iter().copied());
        }
        set.into_iter().collect()
    };

    let mut flat = Vec::with_capacity(prompt.len() * dim);
    let mut per_token_alpha = Vec::with_capacity(prompt.len());
    let mut residuals = Vec::with_capacity(prompt.len());
    for (ti, o) in outcomes.into_iter().enumerate() {
        let max_residual = union
            .iter()
            .map(|&v| vecmath::dot(&o.data, graph.table().row(v)).abs())
            .fold(0.0f64, f64::max);
        residuals.push(TokenResidual {
            token_index: ti,
            max_residual,
            skipped: !o.touched,
        });
        flat.extend_from_slice(&o.data);
        per_token_alpha.push(o.alpha_row);
    }

    let alpha_columns = plan
        .iter()
        .enumerate()
        .flat_map(|(ci, cluster)| {
            cluster.members.iter().map(move |&v| AlphaColumn {
                concept_index: ci,
                node_id: v,
            })
        })
        .collect();

    let mut edited = PromptEmbedding::from_flat(flat, prompt.len(), dim);
    edited.source_labels = prompt.source_labels.clone();
    Ok(ErasureResult {
        edited,
        alpha_columns,
        per_token_alpha,
        residuals,
    })
}
