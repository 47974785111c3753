//! Concept anchoring and diffusion-ranked cluster extraction.
//!
//! A concept is a vocabulary label, or an out-of-vocabulary label paired
//! with an embedding vector that gets inserted as a fresh node. From the
//! anchor, heat diffuses over the graph; the concept cluster is the top-K
//! scoring nodes inside the anchor's hop ball, ties broken by ascending
//! node id so results are reproducible.

use serde::Serialize;

use crate::diffusion::{diffuse, DiffusionField};
use crate::error::{Error, Result};
use crate::graph::SemanticGraph;

/// Diffusion scores at or below this value count as unreached; such nodes
/// never enter a cluster (the anchor itself excepted).
pub const SUPPORT_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ConceptSpec {
    pub name: String,
    /// Embedding for concepts absent from the vocabulary.
    pub vector: Option<Vec<f32>>,
}

impl ConceptSpec {
    pub fn named(name: impl Into<String>) -> Self {
        ConceptSpec {
            name: name.into(),
            vector: None,
        }
    }

    pub fn with_vector(name: impl Into<String>, vector: Vec<f32>) -> Self {
        ConceptSpec {
            name: name.into(),
            vector: Some(vector),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterParams {
    /// Hop radius of the candidate ball around the anchor.
    pub radius: usize,
    /// Cluster size cap.
    pub top_k: usize,
    /// Diffusion time.
    pub t: f64,
    /// Series tolerance passed through to diffusion.
    pub tol: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            radius: 2,
            top_k: 8,
            t: 1.0,
            tol: 1e-6,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::validation("hop radius must be at least 1"));
        }
        if self.top_k < 1 {
            return Err(Error::validation("cluster size cap must be at least 1"));
        }
        Ok(())
    }
}

/// Ranked concept cluster: member ids and their diffusion scores, highest
/// first, anchor guaranteed present.
#[derive(Debug, Clone)]
pub struct ConceptCluster {
    pub concept: String,
    pub anchor: usize,
    pub members: Vec<usize>,
    pub scores: Vec<f64>,
    pub params: ClusterParams,
}

#[derive(Debug, Serialize)]
pub struct ClusterReport {
    pub concept: String,
    pub anchor_label: String,
    pub members: Vec<MemberReport>,
    pub params: ClusterParams,
}

#[derive(Debug, Serialize)]
pub struct MemberReport {
    pub label: String,
    pub score: f64,
    pub hops: u32,
}

impl ConceptCluster {
    pub fn report(&self, graph: &SemanticGraph) -> ClusterReport {
        let levels = hop_levels(graph, self.anchor, self.params.radius);
        ClusterReport {
            concept: self.concept.clone(),
            anchor_label: graph.table().label(self.anchor).to_string(),
            members: self
                .members
                .iter()
                .zip(&self.scores)
                .map(|(&id, &score)| MemberReport {
                    label: graph.table().label(id).to_string(),
                    score,
                    hops: levels[id].expect("cluster member outside hop ball"),
                })
                .collect(),
            params: self.params,
        }
    }
}

/// Maps a concept to a node id, inserting its vector when the label is
/// absent from the vocabulary. A missing label without a vector is an error.
pub fn resolve_anchor(graph: &mut SemanticGraph, spec: &ConceptSpec) -> Result<usize> {
    if let Some(id) = graph.table().lookup(&spec.name) {
        return Ok(id);
    }
    match &spec.vector {
        Some(v) => graph.insert_node(&spec.name, v),
        None => Err(Error::UnknownConcept(spec.name.clone())),
    }
}

/// BFS hop level per node, `None` beyond `radius`. The anchor sits at hop 0.
pub fn hop_levels(graph: &SemanticGraph, anchor: usize, radius: usize) -> Vec<Option<u32>> {
    let mut levels = vec![None; graph.node_count()];
    levels[anchor] = Some(0);
    let mut frontier = vec![anchor];
    for depth in 1..=radius as u32 {
        let mut next = Vec::new();
        for &i in &frontier {
            for (j, _, _) in graph.neighbors(i) {
                if levels[j].is_none() {
                    levels[j] = Some(depth);
                    next.push(j);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    levels
}

/// Nodes within `radius` hops of the anchor, ascending by id.
pub fn hop_neighborhood(graph: &SemanticGraph, anchor: usize, radius: usize) -> Vec<usize> {
    hop_levels(graph, anchor, radius)
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|_| i))
        .collect()
}

/// Diffuses heat from the anchor and keeps the top-K supported nodes inside
/// the hop ball. Ordering is score-descending with ascending-id tie-break.
pub fn identify_cluster(
    graph: &SemanticGraph,
    concept: &str,
    anchor: usize,
    params: ClusterParams,
) -> Result<ConceptCluster> {
    params.validate()?;
    let field = diffuse(graph, anchor, params.t, params.tol)?;
    Ok(rank_cluster(graph, concept, anchor, params, &field))
}

fn rank_cluster(
    graph: &SemanticGraph,
    concept: &str,
    anchor: usize,
    params: ClusterParams,
    field: &DiffusionField,
) -> ConceptCluster {
    let levels = hop_levels(graph, anchor, params.radius);
    let mut candidates: Vec<(usize, f64)> = levels
        .iter()
        .enumerate()
        .filter(|(i, l)| l.is_some() && (field.scores[*i] > SUPPORT_EPS || *i == anchor))
        .map(|(i, _)| (i, field.scores[i]))
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    candidates.truncate(params.top_k);
    // Top-K can squeeze the anchor out only in regimes where heat has left
    // it entirely; the cluster still must contain its own concept.
    if !candidates.iter().any(|&(i, _)| i == anchor) {
        candidates.pop();
        candidates.push((anchor, field.scores[anchor]));
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    }
    ConceptCluster {
        concept: concept.to_string(),
        anchor,
        members: candidates.iter().map(|&(i, _)| i).collect(),
        scores: candidates.iter().map(|&(_, s)| s).collect(),
        params,
    }
}

/// Resolves every concept, then identifies every cluster on the resulting
/// graph. Validation runs up front so an unresolvable concept aborts the
/// plan before any insertion mutates the graph.
pub fn erase_plan(
    graph: &mut SemanticGraph,
    concepts: &[ConceptSpec],
    params: ClusterParams,
) -> Result<Vec<ConceptCluster>> {
    params.validate()?;
    if concepts.is_empty() {
        return Err(Error::validation("erase plan lists no concepts"));
    }
    for spec in concepts {
        if graph.table().lookup(&spec.name).is_some() {
            continue;
        }
        match &spec.vector {
            None => return Err(Error::UnknownConcept(spec.name.clone())),
            Some(v) => {
                if v.len() != graph.table().dim() {
                    return Err(Error::validation(format!(
                        "concept '{}' vector has dimension {}, table has {}",
                        spec.name,
                        v.len(),
                        graph.table().dim()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) || v.iter().all(|x| *x == 0.0) {
                    return Err(Error::validation(format!(
                        "concept '{}' vector must be finite and nonzero",
                        spec.name
                    )));
                }
            }
        }
    }
    let anchors: Vec<usize> = concepts
        .iter()
        .map(|spec| resolve_anchor(graph, spec))
        .collect::<Result<_>>()?;
    concepts
        .iter()
        .zip(anchors)
        .map(|(spec, anchor)| identify_cluster(graph, &spec.name, anchor, params))
        .collect()
}
