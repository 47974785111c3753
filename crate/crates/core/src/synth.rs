//! Synthetic vocabularies with known cluster structure, plus the proxy
//! metrics and benchmark harness built on them.
//!
//! A planted table holds K clusters of unit vectors: each member is
//! `cos(theta) * center + sin(theta) * u` with `theta` drawn uniformly from
//! `[0, spread)` and `u` a random unit direction orthogonal to the center.
//! With `orthogonal_centers` set, the centers are orthonormalized and the
//! rotation directions are sampled orthogonal to *every* center, which pins
//! cross-cluster similarities at f32 round-off and makes off-target damage
//! measurable down to ~1e-7. Background rows are uniform random unit
//! vectors. Ground truth comes back as a label map, so recall and precision
//! of cluster recovery can be scored exactly.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cluster::{erase_plan, ClusterParams, ConceptSpec};
use crate::embed::{EmbeddingTable, PromptEmbedding};
use crate::erase::{erase, ErasureParams};
use crate::error::{Error, Result};
use crate::graph::{GraphParams, SemanticGraph};
use crate::vecmath;

/// Maximum spread: members stay within 45 degrees of their center, keeping
/// intra-cluster similarity at least cos(2 * spread) > 0.
pub const MAX_SPREAD: f64 = std::f64::consts::FRAC_PI_4;

#[derive(Debug, Clone)]
pub struct ClusterSpec {
    /// Member labels are `{label_prefix}{index}`.
    pub label_prefix: String,
    pub size: usize,
    /// Angular radius in radians; 0 plants exact copies of the center.
    pub spread: f64,
    /// Optional pinned center direction; sampled uniformly when absent.
    pub center: Option<Vec<f32>>,
}

impl ClusterSpec {
    pub fn new(label_prefix: impl Into<String>, size: usize, spread: f64) -> Self {
        ClusterSpec {
            label_prefix: label_prefix.into(),
            size,
            spread,
            center: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub clusters: Vec<ClusterSpec>,
    /// Extra rows drawn uniformly from the unit sphere, labeled `bg{i}`.
    pub background: usize,
    pub dim: usize,
    pub seed: u64,
    /// Orthonormalize centers and rotate members only within the
    /// orthogonal complement of all centers.
    pub orthogonal_centers: bool,
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::validation(format!(
                "dimension must be at least 2, got {}",
                self.dim
            )));
        }
        let planted: usize = self.clusters.iter().map(|c| c.size).sum();
        if planted + self.background == 0 {
            return Err(Error::validation("table would hold no rows"));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.clusters {
            if c.label_prefix.is_empty() || c.label_prefix.chars().any(char::is_whitespace) {
                return Err(Error::validation(format!(
                    "label prefix {:?} must be non-empty without whitespace",
                    c.label_prefix
                )));
            }
            if !seen.insert(c.label_prefix.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate label prefix {:?}",
                    c.label_prefix
                )));
            }
            if c.size == 0 {
                return Err(Error::validation(format!(
                    "cluster {:?} has zero members",
                    c.label_prefix
                )));
            }
            if !(c.spread >= 0.0 && c.spread < MAX_SPREAD) {
                return Err(Error::validation(format!(
                    "spread must lie in [0, pi/4), got {}",
                    c.spread
                )));
            }
            if let Some(v) = &c.center {
                if v.len() != self.dim {
                    return Err(Error::validation(format!(
                        "pinned center for {:?} has dimension {}, expected {}",
                        c.label_prefix,
                        v.len(),
                        self.dim
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::validation(format!(
                        "pinned center for {:?} holds a non-finite component",
                        c.label_prefix
                    )));
                }
            }
        }
        if self.orthogonal_centers && self.clusters.len() > self.dim {
            return Err(Error::Capacity(format!(
                "cannot orthonormalize {} centers in dimension {}",
                self.clusters.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// A generated table together with its ground truth.
#[derive(Debug)]
pub struct PlantedTable {
    pub table: EmbeddingTable,
    /// Cluster label prefix -> member labels, in planting order.
    pub truth: BTreeMap<String, Vec<String>>,
    /// Unit cluster centers, in spec order.
    pub centers: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random unit vector orthogonal to every direction in `basis`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, dim);
        for b in basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let n = vecmath::norm_f64(&v);
        if n > 1e-6 {
            for x in v.iter_mut() {
                *x /= n;
            }
            return v;
        }
    }
}

pub fn generate_table(spec: &PlantedSpec) -> Result<PlantedTable> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.clusters.len());
    for c in &spec.clusters {
        let mut v: Vec<f64> = match &c.center {
            Some(raw) => {
                let n = vecmath::norm(raw);
                if n == 0.0 {
                    return Err(Error::validation(format!(
                        "pinned center for {:?} has zero norm",
                        c.label_prefix
                    )));
                }
                raw.iter().map(|x| *x as f64 / n).collect()
            }
            None => loop {
                let g = gaussian(&mut rng, spec.dim);
                let n = vecmath::norm_f64(&g);
                if n > 1e-6 {
                    break g.iter().map(|x| x / n).collect();
                }
            },
        };
        if spec.orthogonal_centers {
            loop {
                let mut w = v.clone();
                for prev in &centers {
                    let d: f64 = w.iter().zip(prev).map(|(x, y)| x * y).sum();
                    for (x, y) in w.iter_mut().zip(prev) {
                        *x -= d * y;
                    }
                }
                let n = vecmath::norm_f64(&w);
                if n > 1e-6 {
                    for x in w.iter_mut() {
                        *x /= n;
                    }
                    v = w;
                    break;
                }
                if c.center.is_some() {
                    return Err(Error::validation(format!(
                        "pinned center for {:?} is linearly dependent on earlier centers",
                        c.label_prefix
                    )));
                }
                v = {
                    let g = gaussian(&mut rng, spec.dim);
                    let n = vecmath::norm_f64(&g);
                    g.iter().map(|x| x / n).collect()
                };
            }
        }
        centers.push(v);
    }

    let planted: usize = spec.clusters.iter().map(|c| c.size).sum();
    let mut rows: Vec<(String, Vec<f32>)> = Vec::with_capacity(planted + spec.background);
    let mut truth = BTreeMap::new();
    for (ci, c) in spec.clusters.iter().enumerate() {
        let mut labels = Vec::with_capacity(c.size);
        for i in 0..c.size {
            let label = format!("{}{}", c.label_prefix, i);
            let dir: Vec<f64> = if c.spread > 0.0 {
                let theta = rng.gen_range(0.0..c.spread);
                let basis: &[Vec<f64>] = if spec.orthogonal_centers {
                    &centers
                } else {
                    std::slice::from_ref(&centers[ci])
                };
                let u = orthogonal_unit(&mut rng, basis, spec.dim);
                centers[ci]
                    .iter()
                    .zip(&u)
                    .map(|(cc, uu)| theta.cos() * cc + theta.sin() * uu)
                    .collect()
            } else {
                centers[ci].clone()
            };
            rows.push((label.clone(), dir.iter().map(|x| *x as f32).collect()));
            labels.push(label);
        }
        truth.insert(c.label_prefix.clone(), labels);
    }
    for i in 0..spec.background {
        let v = loop {
            let g = gaussian(&mut rng, spec.dim);
            if vecmath::norm_f64(&g) > 1e-6 {
                break g;
            }
        };
        rows.push((format!("bg{i}"), v.iter().map(|x| *x as f32).collect()));
    }

    Ok(PlantedTable {
        table: EmbeddingTable::from_rows(rows)?,
        truth,
        centers,
    })
}

/// Before/after prompt comparison against a known target concept.
#[derive(Debug, Clone, Serialize)]
pub struct ProxyMetrics {
    /// `max(0, 1 - after/before)` of the mean best cosine between target
    /// tokens and the target's vocabulary rows.
    pub target_similarity_drop: f64,
    /// Largest relative L2 change among non-target tokens.
    pub offtarget_drift: f64,
    /// Tokens that came through bit-identical.
    pub unchanged_tokens: usize,
}

pub fn proxy_metrics(
    before: &PromptEmbedding,
    after: &PromptEmbedding,
    table: &EmbeddingTable,
    target_labels: &[String],
    target_tokens: &[usize],
) -> Result<ProxyMetrics> {
    if before.len() != after.len() || before.dim() != after.dim() {
        return Err(Error::validation(
            "before and after prompts must share shape",
        ));
    }
    if before.dim() != table.dim() {
        return Err(Error::validation(format!(
            "prompt dimension {} does not match table dimension {}",
            before.dim(),
            table.dim()
        )));
    }
    if target_labels.is_empty() {
        return Err(Error::validation("no target labels supplied"));
    }
    let rows: Vec<usize> = target_labels
        .iter()
        .map(|l| {
            table
                .lookup(l)
                .ok_or_else(|| Error::UnknownConcept(l.clone()))
        })
        .collect::<Result<_>>()?;
    for &i in target_tokens {
        if i >= before.len() {
            return Err(Error::validation(format!(
                "target token index {i} out of range for {} tokens",
                before.len()
            )));
        }
    }

    let best_cos = |tok: &[f32]| -> f64 {
        let n = vecmath::norm(tok);
        if n == 0.0 {
            return 0.0;
        }
        rows.iter()
            .map(|&r| vecmath::dot(tok, table.row(r)) / n)
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let is_target: Vec<bool> = {
        let mut v = vec![false; before.len()];
        for &i in target_tokens {
            v[i] = true;
        }
        v
    };

    let mut sum_before = 0.0;
    let mut sum_after = 0.0;
    let mut drift = 0.0f64;
    let mut unchanged = 0usize;
    for i in 0..before.len() {
        let b = before.token(i);
        let a = after.token(i);
        if a == b {
            unchanged += 1;
        }
        if is_target[i] {
            sum_before += best_cos(b);
            sum_after += best_cos(a);
        } else {
            let bn = vecmath::norm(b);
            if bn > 0.0 {
                let diff: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| {
                        let d = *x as f64 - *y as f64;
                        d * d
                    })
                    .sum();
                drift = drift.max(diff.sqrt() / bn);
            }
        }
    }

    let drop = if target_tokens.is_empty() || sum_before <= 0.0 {
        0.0
    } else {
        (1.0 - sum_after / sum_before).max(0.0)
    };
    Ok(ProxyMetrics {
        target_similarity_drop: drop,
        offtarget_drift: drift,
        unchanged_tokens: unchanged,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
}

impl MachineInfo {
    pub fn detect() -> Self {
        MachineInfo {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            logical_cpus: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub table_size: usize,
    pub dim: usize,
    pub concepts: usize,
    pub cluster_size: usize,
    pub prompt_len: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            table_size: 10_000,
            dim: 256,
            concepts: 10,
            cluster_size: 8,
            prompt_len: 77,
            repeats: 5,
            seed: 7,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 3 {
            return Err(Error::validation("bench needs at least 3 repeats"));
        }
        if self.concepts == 0 || self.cluster_size == 0 || self.prompt_len == 0 {
            return Err(Error::validation(
                "concepts, cluster_size and prompt_len must be positive",
            ));
        }
        if self.concepts > self.dim {
            return Err(Error::Capacity(format!(
                "cannot plant {} orthogonal concepts in dimension {}",
                self.concepts, self.dim
            )));
        }
        if self.table_size < self.concepts * self.cluster_size {
            return Err(Error::validation(format!(
                "table_size {} cannot hold {} clusters of {} members",
                self.table_size, self.concepts, self.cluster_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub table_size: usize,
    pub dim: usize,
    pub concepts: usize,
    pub prompt_len: usize,
    pub repeats: usize,
    /// Graph construction, run once.
    pub build_ms: f64,
    /// Median over repeats of planning every concept's cluster.
    pub cluster_ms: f64,
    /// Median over repeats of erasing the whole prompt.
    pub erase_ms: f64,
    /// Median over repeats of cluster + erase back to back.
    pub pipeline_ms: f64,
    /// Whole benchmark wall time, build included.
    pub total_ms: f64,
    pub machine: MachineInfo,
    /// SHA-256 over the recovered clusters and the edited prompt bytes;
    /// stable across runs with the same config.
    pub result_digest: String,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times the full pipeline on a planted table: graph construction once,
/// then `repeats` rounds of cluster identification plus prompt erasure.
/// Repeats must agree bit for bit; any divergence is reported as an error.
pub fn bench_pipeline(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let start = Instant::now();

    let clusters = (0..cfg.concepts)
        .map(|i| ClusterSpec::new(format!("c{i}_"), cfg.cluster_size, 0.1))
        .collect();
    let planted = generate_table(&PlantedSpec {
        clusters,
        background: cfg.table_size - cfg.concepts * cfg.cluster_size,
        dim: cfg.dim,
        seed: cfg.seed,
        orthogonal_centers: true,
    })?;
    let truth = planted.truth;

    let t0 = Instant::now();
    let mut graph = SemanticGraph::build(planted.table, GraphParams::default())?;
    let build_ms = t0.elapsed().as_secs_f64() * 1e3;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbead);
    let prompt = {
        let mut toks = Vec::with_capacity(cfg.prompt_len);
        for _ in 0..cfg.prompt_len {
            let base = rng.gen_range(0..graph.table().len());
            let row = graph.table().row(base).to_vec();
            let tok: Vec<f32> = row
                .iter()
                .map(|x| {
                    let noise: f64 = rng.sample(StandardNormal);
                    *x + 0.05 * noise as f32
                })
                .collect();
            toks.push(tok);
        }
        PromptEmbedding::from_rows(toks)?
    };

    let concepts: Vec<ConceptSpec> = truth
        .values()
        .map(|labels| ConceptSpec::named(labels[0].clone()))
        .collect();
    let cparams = ClusterParams {
        top_k: cfg.cluster_size,
        ..Default::default()
    };
    let eparams = ErasureParams::for_graph(&graph);

    let mut cluster_ms = Vec::with_capacity(cfg.repeats);
    let mut erase_ms = Vec::with_capacity(cfg.repeats);
    let mut pipeline_ms = Vec::with_capacity(cfg.repeats);
    let mut digest: Option<String> = None;
    for _ in 0..cfg.repeats {
        let t1 = Instant::now();
        let plan = erase_plan(&mut graph, &concepts, cparams)?;
        let c_ms = t1.elapsed().as_secs_f64() * 1e3;

        let t2 = Instant::now();
        let result = erase(&prompt, &plan, &graph, &eparams)?;
        let e_ms = t2.elapsed().as_secs_f64() * 1e3;

        cluster_ms.push(c_ms);
        erase_ms.push(e_ms);
        pipeline_ms.push(c_ms + e_ms);

        let mut h = Sha256::new();
        for cluster in &plan {
            h.update(cluster.concept.as_bytes());
            h.update([0u8]);
            for &m in &cluster.members {
                h.update((m as u64).to_le_bytes());
            }
        }
        for tok in result.edited.tokens() {
            for x in tok {
                h.update(x.to_le_bytes());
            }
        }
        let d = format!("{:x}", h.finalize());
        match &digest {
            None => digest = Some(d),
            Some(prev) if *prev != d => {
                return Err(Error::validation(
                    "pipeline repeats disagreed; results are not deterministic",
                ))
            }
            Some(_) => {}
        }
    }

    Ok(BenchReport {
        table_size: cfg.table_size,
        dim: cfg.dim,
        concepts: cfg.concepts,
        prompt_len: cfg.prompt_len,
        repeats: cfg.repeats,
        build_ms,
        cluster_ms: median(cluster_ms),
        erase_ms: median(erase_ms),
        pipeline_ms: median(pipeline_ms),
        total_ms: start.elapsed().as_secs_f64() * 1e3,
        machine: MachineInfo::detect(),
        result_digest: digest.unwrap_or_default(),
    })
}
