//! Sparse semantic graph over a vocabulary table.
//!
//! Construction runs in two passes. Pass 1 collects candidate edges: every
//! pair with cosine similarity strictly above the base threshold `tau0`,
//! computed block-parallel over the upper triangle so the M×M similarity
//! matrix is never materialized. Each node's candidate neighborhood then
//! yields a mean `mu` and population deviation `sigma_hat`; dense regions get
//! a raised bar `tau0 + lambda * sigma_hat`. Pass 2 keeps an edge only if its
//! similarity clears the raised bar of both endpoints. Edge weights always
//! use the base threshold: `w = exp((s - tau0) / sigma)`.
//!
//! Storage is symmetric CSR with columns sorted per row, weights and cached
//! similarities in f32, node statistics in f64. A graph owns the table it
//! was built from; the on-disk form stores the table's content hash instead
//! of duplicating labels, and the loader refuses a mismatched table.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::embed::{EmbeddingTable, Reader, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::vecmath;

pub const GRAPH_MAGIC: &[u8; 8] = b"GROCEGRF";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphParams {
    /// Base similarity threshold; edges need s strictly above it.
    pub tau0: f64,
    /// Weight temperature in `exp((s - tau0) / sigma)`.
    pub sigma: f64,
    /// Scale on the per-node deviation added to the Pass-2 threshold.
    pub lambda: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            tau0: 0.3,
            sigma: 0.1,
            lambda: 0.5,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0 < 1.0) {
            return Err(Error::validation(format!(
                "tau0 must lie strictly inside (0, 1), got {}",
                self.tau0
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::validation(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation(format!(
                "lambda must be nonnegative and finite, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DegreeStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub mean_degree: f64,
    pub max_degree: usize,
    pub isolated_count: usize,
}

#[derive(Debug, Clone)]
pub struct SemanticGraph {
    params: GraphParams,
    table: EmbeddingTable,
    table_hash: [u8; 32],
    mu: Vec<f64>,
    sigma_hat: Vec<f64>,
    offsets: Vec<u64>,
    cols: Vec<u32>,
    weights: Vec<f32>,
    sims: Vec<f32>,
}

/// Mean and population deviation of a candidate neighborhood's similarities.
/// An empty neighborhood contributes nothing: both statistics are zero, so
/// the node's Pass-2 bar stays at `tau0`.
pub(crate) fn neighborhood_stats(sims: &[f64]) -> (f64, f64) {
    if sims.is_empty() {
        return (0.0, 0.0);
    }
    let n = sims.len() as f64;
    let mu = sims.iter().sum::<f64>() / n;
    let var = sims.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / n;
    (mu, var.max(0.0).sqrt())
}

impl SemanticGraph {
    /// Two-pass density-adaptive construction. Takes ownership of the table;
    /// similarities accumulate in f64 over the f32 rows.
    pub fn build(table: EmbeddingTable, params: GraphParams) -> Result<Self> {
        params.validate()?;
        let m = table.len();
        if m > u32::MAX as usize {
            return Err(Error::Capacity(format!(
                "graph limited to {} nodes, table has {m}",
                u32::MAX
            )));
        }

        // Pass 1: upper-triangle candidates above tau0, one row block per task.
        let upper: Vec<Vec<(u32, f64)>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let ri = table.row(i);
                let mut out = Vec::new();
                for j in (i + 1)..m {
                    let s = vecmath::dot(ri, table.row(j));
                    if s > params.tau0 {
                        out.push((j as u32, s));
                    }
                }
                out
            })
            .collect();

        // Candidate-neighborhood statistics, accumulated serially in node
        // order so results do not depend on thread scheduling.
        let mut count = vec![0usize; m];
        let mut sum = vec![0.0f64; m];
        let mut sumsq = vec![0.0f64; m];
        for (i, row) in upper.iter().enumerate() {
            for &(j, s) in row {
                count[i] += 1;
                sum[i] += s;
                sumsq[i] += s * s;
                let j = j as usize;
                count[j] += 1;
                sum[j] += s;
                sumsq[j] += s * s;
            }
        }
        let mut mu = vec![0.0f64; m];
        let mut sigma_hat = vec![0.0f64; m];
        for i in 0..m {
            if count[i] > 0 {
                let n = count[i] as f64;
                mu[i] = sum[i] / n;
                sigma_hat[i] = (sumsq[i] / n - mu[i] * mu[i]).max(0.0).sqrt();
            }
        }

        // Pass 2: an edge survives only above both endpoints' raised bars.
        let kept: Vec<Vec<(u32, f64)>> = upper
            .into_par_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .filter(|&(j, s)| {
                        let bar = params.tau0
                            + params.lambda * sigma_hat[i].max(sigma_hat[j as usize]);
                        s > bar
                    })
                    .collect()
            })
            .collect();

        let (offsets, cols, weights, sims) = assemble_csr(m, &kept, &params);
        let table_hash = table.content_hash();
        Ok(SemanticGraph {
            params,
            table,
            table_hash,
            mu,
            sigma_hat,
            offsets,
            cols,
            weights,
            sims,
        })
    }

    /// Appends one node and connects it using the same two-pass rule, except
    /// that existing nodes keep their stored statistics: only the new node's
    /// neighborhood is measured. Returns the new node id.
    pub fn insert_node(&mut self, label: &str, vector: &[f32]) -> Result<usize> {
        let id = self.table.push_row(label.to_string(), vector)?;
        let row = self.table.row(id);

        let candidates: Vec<(u32, f64)> = (0..id)
            .into_par_iter()
            .filter_map(|j| {
                let s = vecmath::dot(row, self.table.row(j));
                (s > self.params.tau0).then_some((j as u32, s))
            })
            .collect();

        let sims_only: Vec<f64> = candidates.iter().map(|&(_, s)| s).collect();
        let (mu_new, sig_new) = neighborhood_stats(&sims_only);

        let kept: Vec<(u32, f64)> = candidates
            .into_iter()
            .filter(|&(j, s)| {
                let bar = self.params.tau0
                    + self.params.lambda * sig_new.max(self.sigma_hat[j as usize]);
                s > bar
            })
            .collect();

        // Splice the mirrored entries into the CSR arrays. The new node has
        // the largest id, so appending at each row's end keeps columns sorted.
        let nnz = self.cols.len() + 2 * kept.len();
        let mut offsets = Vec::with_capacity(id + 2);
        let mut cols = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        let mut sims = Vec::with_capacity(nnz);
        let mut k = 0usize;
        offsets.push(0u64);
        for r in 0..id {
            let (lo, hi) = (self.offsets[r] as usize, self.offsets[r + 1] as usize);
            cols.extend_from_slice(&self.cols[lo..hi]);
            weights.extend_from_slice(&self.weights[lo..hi]);
            sims.extend_from_slice(&self.sims[lo..hi]);
            if k < kept.len() && kept[k].0 as usize == r {
                let (_, s) = kept[k];
                cols.push(id as u32);
                weights.push(edge_weight(s, &self.params));
                sims.push(s as f32);
                k += 1;
            }
            offsets.push(cols.len() as u64);
        }
        for &(j, s) in &kept {
            cols.push(j);
            weights.push(edge_weight(s, &self.params));
            sims.push(s as f32);
        }
        offsets.push(cols.len() as u64);

        self.offsets = offsets;
        self.cols = cols;
        self.weights = weights;
        self.sims = sims;
        self.mu.push(mu_new);
        self.sigma_hat.push(sig_new);
        self.table_hash = self.table.content_hash();
        Ok(id)
    }

    pub fn node_count(&self) -> usize {
        self.table.len()
    }

    pub fn params(&self) -> GraphParams {
        self.params
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn mu(&self, id: usize) -> f64 {
        self.mu[id]
    }

    pub fn sigma_hat(&self, id: usize) -> f64 {
        self.sigma_hat[id]
    }

    /// The node's Pass-2 admission bar `tau0 + lambda * sigma_hat`.
    pub fn threshold(&self, id: usize) -> f64 {
        self.params.tau0 + self.params.lambda * self.sigma_hat[id]
    }

    pub fn degree(&self, id: usize) -> usize {
        (self.offsets[id + 1] - self.offsets[id]) as usize
    }

    /// Neighbors of `id` as `(node, weight, similarity)`, columns ascending.
    pub fn neighbors(&self, id: usize) -> impl Iterator<Item = (usize, f32, f32)> + '_ {
        let (lo, hi) = (self.offsets[id] as usize, self.offsets[id + 1] as usize);
        (lo..hi).map(move |k| (self.cols[k] as usize, self.weights[k], self.sims[k]))
    }

    pub fn weight_between(&self, a: usize, b: usize) -> Option<f32> {
        let (lo, hi) = (self.offsets[a] as usize, self.offsets[a + 1] as usize);
        let row = &self.cols[lo..hi];
        row.binary_search(&(b as u32))
            .ok()
            .map(|k| self.weights[lo + k])
    }

    pub fn edge_entries(&self) -> usize {
        self.cols.len()
    }

    pub fn degree_stats(&self) -> DegreeStats {
        let m = self.node_count();
        let mut max_degree = 0usize;
        let mut isolated = 0usize;
        for i in 0..m {
            let d = self.degree(i);
            max_degree = max_degree.max(d);
            if d == 0 {
                isolated += 1;
            }
        }
        DegreeStats {
            node_count: m,
            edge_count: self.cols.len() / 2,
            mean_degree: self.cols.len() as f64 / m as f64,
            max_degree,
            isolated_count: isolated,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let m = self.node_count();
        let nnz = self.cols.len();
        let mut out = Vec::with_capacity(64 + m * 16 + nnz * 12);
        out.extend_from_slice(GRAPH_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.table_hash);
        out.extend_from_slice(&self.params.tau0.to_le_bytes());
        out.extend_from_slice(&self.params.sigma.to_le_bytes());
        out.extend_from_slice(&self.params.lambda.to_le_bytes());
        out.extend_from_slice(&(m as u32).to_le_bytes());
        for i in 0..m {
            out.extend_from_slice(&self.mu[i].to_le_bytes());
            out.extend_from_slice(&self.sigma_hat[i].to_le_bytes());
        }
        for o in &self.offsets {
            out.extend_from_slice(&o.to_le_bytes());
        }
        for c in &self.cols {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for s in &self.sims {
            out.extend_from_slice(&s.to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Loads a graph and binds it to `table`, refusing a table whose content
    /// hash differs from the one recorded at save time.
    pub fn load(path: &Path, table: EmbeddingTable) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(path, &bytes);
        r.expect_magic(GRAPH_MAGIC)?;
        r.expect_version()?;
        let stored_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let actual = table.content_hash();
        if stored_hash != actual {
            return Err(Error::HashMismatch(format!(
                "graph was built from a table with digest {}, supplied table has {}",
                hex(&stored_hash[..8]),
                hex(&actual[..8])
            )));
        }
        let params = GraphParams {
            tau0: r.f64()?,
            sigma: r.f64()?,
            lambda: r.f64()?,
        };
        params.validate()?;
        let m = r.u32()? as usize;
        if m != table.len() {
            return Err(Error::format(format!(
                "graph declares {m} nodes, table has {}",
                table.len()
            )));
        }
        let mut mu = Vec::with_capacity(m);
        let mut sigma_hat = Vec::with_capacity(m);
        for _ in 0..m {
            mu.push(r.f64()?);
            sigma_hat.push(r.f64()?);
        }
        let offsets = r.u64_vec(m + 1)?;
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::format(format!(
                "{}: row offsets are not monotone",
                path.display()
            )));
        }
        let nnz = offsets[m] as usize;
        let cols = r.u32_vec(nnz)?;
        let weights = r.f32_vec(nnz)?;
        let sims = r.f32_vec(nnz)?;
        r.expect_end()?;
        for i in 0..m {
            let row = &cols[offsets[i] as usize..offsets[i + 1] as usize];
            if row.iter().any(|&c| c as usize >= m) {
                return Err(Error::format(format!(
                    "{}: column index out of range in row {i}",
                    path.display()
                )));
            }
            if row.iter().any(|&c| c as usize == i) {
                return Err(Error::format(format!(
                    "{}: self loop stored on node {i}",
                    path.display()
                )));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::format(format!(
                    "{}: columns of row {i} are not strictly ascending",
                    path.display()
                )));
            }
        }
        Ok(SemanticGraph {
            params,
            table,
            table_hash: stored_hash,
            mu,
            sigma_hat,
            offsets,
            cols,
            weights,
            sims,
        })
    }
}

fn edge_weight(s: f64, params: &GraphParams) -> f32 {
    (((s - params.tau0) / params.sigma).exp()) as f32
}

/// Mirrors kept upper-triangle edges into a full symmetric CSR. Iterating
/// source rows in ascending order lands both copies of every edge in
/// ascending column position, so no per-row sort is needed.
fn assemble_csr(
    m: usize,
    kept: &[Vec<(u32, f64)>],
    params: &GraphParams,
) -> (Vec<u64>, Vec<u32>, Vec<f32>, Vec<f32>) {
    let mut deg = vec![0usize; m];
    for (i, row) in kept.iter().enumerate() {
        for &(j, _) in row {
            deg[i] += 1;
            deg[j as usize] += 1;
        }
    }
    let mut offsets = Vec::with_capacity(m + 1);
    offsets.push(0u64);
    for i in 0..m {
        offsets.push(offsets[i] + deg[i] as u64);
    }
    let nnz = offsets[m] as usize;
    let mut cursor: Vec<usize> = offsets[..m].iter().map(|&o| o as usize).collect();
    let mut cols = vec![0u32; nnz];
    let mut weights = vec![0.0f32; nnz];
    let mut sims = vec![0.0f32; nnz];
    for (i, row) in kept.iter().enumerate() {
        for &(j, s) in row {
            let w = edge_weight(s, params);
            let ju = j as usize;
            cols[cursor[i]] = j;
            weights[cursor[i]] = w;
            sims[cursor[i]] = s as f32;
            cursor[i] += 1;
            cols[cursor[ju]] = i as u32;
            weights[cursor[ju]] = w;
            sims[cursor[ju]] = s as f32;
            cursor[ju] += 1;
        }
    }
    (offsets, cols, weights, sims)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
