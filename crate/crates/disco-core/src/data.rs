//! Corpus handling and unsupervised data partitioning: byte-level
//! tokenization, mean-pooled sentence vectors, k-means clustering into one
//! shard per expert, and 2-D PCA projection for scatter export.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Byte-level token space; every corpus byte is its own token.
pub const BYTE_VOCAB: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub token_ids: Vec<u32>,
    /// Zero-based line number in the source file.
    pub source_id: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    /// Each nonblank line is one sentence; tokens are the line's bytes.
    pub fn from_text(text: &str) -> Corpus {
        let sentences = text
            .lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(i, line)| Sentence {
                token_ids: line.bytes().map(u32::from).collect(),
                source_id: i,
            })
            .collect();
        Corpus { sentences }
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read corpus {}: {e}", path.display())))?;
        let corpus = Corpus::from_text(&text);
        if corpus.sentences.is_empty() {
            return Err(Error::Input(format!(
                "corpus {} contains no nonblank lines",
                path.display()
            )));
        }
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.token_ids.len()).sum()
    }

    /// Concatenates the chosen sentences into one token stream with a
    /// newline separator after each sentence, in the given order.
    pub fn stream(&self, order: &[usize]) -> Vec<u32> {
        let mut out = Vec::new();
        for &i in order {
            out.extend_from_slice(&self.sentences[i].token_ids);
            out.push(u32::from(b'\n'));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SentenceVector {
    /// Mean of the token embedding rows, one entry per embedding dimension.
    pub values: Vec<f64>,
    /// Index of the sentence within the corpus it came from.
    pub sentence: usize,
}

/// Mean-pools token embeddings into a sentence vector. Repeated tokens are
/// grouped (count times row, ids ascending), which makes the result exactly
/// invariant under token reordering.
pub fn embed_sentence<T: Scalar>(
    sentence: &Sentence,
    sentence_index: usize,
    table: &Tensor<T>,
) -> Result<SentenceVector> {
    if sentence.token_ids.is_empty() {
        return Err(Error::Domain("cannot embed an empty sentence".to_string()));
    }
    let shape = table.shape();
    if shape.len() != 2 {
        return Err(Error::shape("embed_sentence", format!("table {shape:?}")));
    }
    let (vocab, dim) = (shape[0], shape[1]);
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &id in &sentence.token_ids {
        if id as usize >= vocab {
            return Err(Error::Input(format!(
                "token id {id} out of range for embedding table with {vocab} rows"
            )));
        }
        *counts.entry(id).or_insert(0) += 1;
    }
    let n = sentence.token_ids.len() as f64;
    let data = table.data();
    let mut values = vec![0.0f64; dim];
    for (&id, &count) in &counts {
        let row = &data[id as usize * dim..(id as usize + 1) * dim];
        let c = count as f64;
        for (v, &e) in values.iter_mut().zip(row) {
            *v += c * e.to_f64();
        }
    }
    for v in &mut values {
        *v /= n;
    }
    Ok(SentenceVector {
        values,
        sentence: sentence_index,
    })
}

pub fn embed_corpus<T: Scalar>(corpus: &Corpus, table: &Tensor<T>) -> Result<Vec<SentenceVector>> {
    corpus
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| embed_sentence(s, i, table))
        .collect()
}

// ---- k-means ----------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct KmeansOptions {
    pub max_iters: usize,
    /// Independent k-means++ starts; the lowest-objective run wins.
    pub restarts: usize,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        KmeansOptions {
            max_iters: 100,
            restarts: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances after every assignment step
    /// of the winning restart; non-increasing by construction.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl KmeansResult {
    pub fn objective(&self) -> f64 {
        *self
            .objective_history
            .last()
            .expect("at least one iteration runs")
    }
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = dist_sq(point, c);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    (best, best_d)
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.random_range(0..points.len());
    centroids.push(points[first].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| dist_sq(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // Every point coincides with an existing centroid.
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = dist_sq(p, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, max_iters: usize) -> KmeansResult {
    let dim = points[0].len();
    let mut centroids = kmeans_pp_init(points, k, rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0usize;

    for _ in 0..max_iters {
        iterations += 1;
        let mut changed = false;
        let mut objective = 0.0f64;
        for (i, p) in points.iter().enumerate() {
            let (best, d) = nearest_centroid(p, &centroids);
            objective += d;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        history.push(objective);
        if !changed && history.len() > 1 {
            break;
        }
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (m, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *m = s / counts[c] as f64;
                }
            } else {
                // Empty-cluster repair: seed it with the point farthest from
                // its current centroid, taken from a cluster that can spare
                // one.
                let mut far_i = usize::MAX;
                let mut far_d = -1.0;
                for (i, p) in points.iter().enumerate() {
                    if counts[assignments[i]] > 1 {
                        let d = dist_sq(p, &centroids[assignments[i]]);
                        if d > far_d {
                            far_d = d;
                            far_i = i;
                        }
                    }
                }
                if far_i != usize::MAX {
                    counts[assignments[far_i]] -= 1;
                    centroids[c] = points[far_i].clone();
                    assignments[far_i] = c;
                    counts[c] = 1;
                }
            }
        }
    }
    KmeansResult {
        assignments,
        centroids,
        objective_history: history,
        iterations,
    }
}

/// Lloyd's algorithm with k-means++ seeding and deterministic restarts.
/// Assignment ties resolve to the lower cluster index, so the result is a
/// pure function of (input order, seed).
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    opts: KmeansOptions,
) -> Result<KmeansResult> {
    if k == 0 {
        return Err(Error::Input("k must be at least 1".to_string()));
    }
    if points.len() < k {
        return Err(Error::Input(format!(
            "{} vectors cannot form {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Input("inconsistent vector dimensions".to_string()));
    }
    let restarts = opts.restarts.max(1);
    let mut best: Option<KmeansResult> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seeding::derive_seed(
            seed,
            crate::seeding::Stream::Worker(7000 + r),
        ));
        let run = lloyd(points, k, &mut rng, opts.max_iters.max(1));
        let better = match &best {
            None => true,
            Some(b) => run.objective() < b.objective(),
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart runs"))
}

// ---- shards -----------------------------------------------------------------

/// One expert's training subset: disjoint from the others, and together
/// they cover the corpus.
#[derive(Debug, Clone)]
pub struct DataShard {
    pub cluster_id: usize,
    /// Sentence indices into the partitioned corpus, ascending.
    pub members: Vec<usize>,
    pub centroid: Vec<f64>,
}

impl DataShard {
    pub fn sample_count(&self) -> usize {
        self.members.len()
    }
}

/// Clusters mean-pooled sentence vectors into `num_shards` groups with
/// k-means and returns one shard per cluster.
pub fn partition_dataset<T: Scalar>(
    corpus: &Corpus,
    table: &Tensor<T>,
    num_shards: usize,
    seed: u64,
    opts: KmeansOptions,
) -> Result<Vec<DataShard>> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot partition an empty corpus".to_string()));
    }
    let vectors = embed_corpus(corpus, table)?;
    let points: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.clone()).collect();
    let result = kmeans(&points, num_shards, seed, opts)?;
    Ok(shards_from_assignments(
        &result.assignments,
        &result.centroids,
    ))
}

/// Ablation partitioner: a seeded shuffle dealt round-robin, so shard sizes
/// differ by at most one. Centroids are the mean vectors of the members.
pub fn partition_random<T: Scalar>(
    corpus: &Corpus,
    table: &Tensor<T>,
    num_shards: usize,
    seed: u64,
) -> Result<Vec<DataShard>> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot partition an empty corpus".to_string()));
    }
    if corpus.len() < num_shards {
        return Err(Error::Input(format!(
            "{} sentences cannot fill {num_shards} shards",
            corpus.len()
        )));
    }
    let vectors = embed_corpus(corpus, table)?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let dim = vectors[0].values.len();
    let mut shards: Vec<DataShard> = (0..num_shards)
        .map(|k| DataShard {
            cluster_id: k,
            members: Vec::new(),
            centroid: vec![0.0; dim],
        })
        .collect();
    for (pos, &idx) in order.iter().enumerate() {
        shards[pos % num_shards].members.push(idx);
    }
    for shard in &mut shards {
        shard.members.sort_unstable();
        for &m in &shard.members {
            for (c, &v) in shard.centroid.iter_mut().zip(&vectors[m].values) {
                *c += v;
            }
        }
        let n = shard.members.len().max(1) as f64;
        for c in &mut shard.centroid {
            *c /= n;
        }
    }
    Ok(shards)
}

pub fn shards_from_assignments(assignments: &[usize], centroids: &[Vec<f64>]) -> Vec<DataShard> {
    let mut shards: Vec<DataShard> = centroids
        .iter()
        .enumerate()
        .map(|(k, c)| DataShard {
            cluster_id: k,
            members: Vec::new(),
            centroid: c.clone(),
        })
        .collect();
    for (i, &a) in assignments.iter().enumerate() {
        shards[a].members.push(i);
    }
    shards
}

/// Fraction of sentences landing in a cluster whose dominant label matches
/// theirs; 1.0 means every cluster is label-pure.
pub fn cluster_purity(shards: &[DataShard], labels: &[usize]) -> f64 {
    let total: usize = shards.iter().map(|s| s.members.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let mut agree = 0usize;
    for shard in shards {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &m in &shard.members {
            *counts.entry(labels[m]).or_insert(0) += 1;
        }
        agree += counts.values().copied().max().unwrap_or(0);
    }
    agree as f64 / total as f64
}

// ---- manifest + scatter export -------------------------------------------------

/// Plain-text shard manifest: one `sentence` record per sentence, then one
/// `cluster` record per shard with its size and centroid.
pub fn manifest_text(shards: &[DataShard]) -> String {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for shard in shards {
        for &m in &shard.members {
            pairs.push((m, shard.cluster_id));
        }
    }
    pairs.sort_unstable();
    let mut out = String::new();
    for (sentence, cluster) in pairs {
        out.push_str(&format!("sentence\t{sentence}\t{cluster}\n"));
    }
    for shard in shards {
        let centroid = shard
            .centroid
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!(
            "cluster\t{}\t{}\t{centroid}\n",
            shard.cluster_id,
            shard.sample_count()
        ));
    }
    out
}

pub fn write_manifest(path: &Path, shards: &[DataShard]) -> Result<()> {
    std::fs::write(path, manifest_text(shards))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub cluster_id: usize,
    pub sample_count: usize,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ShardManifest {
    /// (sentence index, cluster id), ascending by sentence.
    pub assignments: Vec<(usize, usize)>,
    pub clusters: Vec<ManifestEntry>,
}

pub fn read_manifest(path: &Path) -> Result<ShardManifest> {
    let text = std::fs::read_to_string(path)?;
    let mut manifest = ShardManifest::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| {
            Error::Format(format!(
                "manifest {}:{}: {what}",
                path.display(),
                lineno + 1
            ))
        };
        match fields.first().copied() {
            Some("sentence") if fields.len() == 3 => {
                let idx = fields[1].parse().map_err(|_| bad("bad sentence index"))?;
                let cluster = fields[2].parse().map_err(|_| bad("bad cluster id"))?;
                manifest.assignments.push((idx, cluster));
            }
            Some("cluster") if fields.len() == 4 => {
                let cluster_id = fields[1].parse().map_err(|_| bad("bad cluster id"))?;
                let sample_count = fields[2].parse().map_err(|_| bad("bad sample count"))?;
                let centroid = fields[3]
                    .split(',')
                    .map(|v| v.parse::<f64>().map_err(|_| bad("bad centroid value")))
                    .collect::<Result<Vec<f64>>>()?;
                manifest.clusters.push(ManifestEntry {
                    cluster_id,
                    sample_count,
                    centroid,
                });
            }
            _ => return Err(bad("unrecognized record")),
        }
    }
    Ok(manifest)
}

/// CSV of 2-D projected sentence vectors with their cluster ids, for
/// external scatter plotting.
pub fn scatter_csv(coords: &[Vec<f64>], assignments: &[usize]) -> String {
    let mut out = String::from("x,y,cluster\n");
    for (c, &a) in coords.iter().zip(assignments) {
        out.push_str(&format!("{:?},{:?},{a}\n", c[0], c[1]));
    }
    out
}

// ---- PCA ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PcaResult {
    /// `n x out_dim` projected coordinates.
    pub coords: Vec<Vec<f64>>,
    /// All eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// `out_dim x d` principal directions (rows, unit length).
    pub components: Vec<Vec<f64>>,
    /// Set when the input had no variance; coords are all zero then.
    pub degenerate: bool,
}

/// Centers the data and projects onto the leading principal directions of
/// the sample covariance (eigen-decomposition by cyclic Jacobi rotations).
pub fn pca_project(vectors: &[Vec<f64>], out_dim: usize) -> Result<PcaResult> {
    if vectors.len() < 2 {
        return Err(Error::Input("pca needs at least two vectors".to_string()));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Input("inconsistent vector dimensions".to_string()));
    }
    if out_dim == 0 || out_dim > d {
        return Err(Error::Input(format!("out_dim {out_dim} outside 1..={d}")));
    }
    let n = vectors.len();
    let mut mean = vec![0.0f64; d];
    for v in vectors {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(&x, &m)| x - m).collect())
        .collect();

    // Sample covariance, normalized by n - 1.
    let mut cov = vec![0.0f64; d * d];
    for row in &centered {
        for i in 0..d {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i * d + j] += xi * row[j];
            }
        }
    }
    let norm = 1.0 / (n as f64 - 1.0);
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] * norm;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }

    let total_var: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if total_var <= 1e-24 {
        return Ok(PcaResult {
            coords: vec![vec![0.0; out_dim]; n],
            eigenvalues: vec![0.0; d],
            components: (0..out_dim)
                .map(|i| {
                    let mut e = vec![0.0; d];
                    e[i] = 1.0;
                    e
                })
                .collect(),
            degenerate: true,
        });
    }

    let (mut eigenvalues, mut components_all) = jacobi_eigen(&mut cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());
    eigenvalues = order.iter().map(|&i| eigenvalues[i]).collect();
    components_all = order.iter().map(|&i| components_all[i].clone()).collect();

    // Deterministic sign: the largest-magnitude entry of each component is
    // non-negative.
    for comp in components_all.iter_mut() {
        let mut lead = 0usize;
        for (i, &v) in comp.iter().enumerate() {
            if v.abs() > comp[lead].abs() {
                lead = i;
            }
        }
        if comp[lead] < 0.0 {
            for v in comp.iter_mut() {
                *v = -*v;
            }
        }
    }

    let components: Vec<Vec<f64>> = components_all.into_iter().take(out_dim).collect();
    let coords = centered
        .iter()
        .map(|row| {
            components
                .iter()
                .map(|comp| row.iter().zip(comp).map(|(&x, &c)| x * c).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        coords,
        eigenvalues,
        components,
        degenerate: false,
    })
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major,
/// destroyed in place). Returns (eigenvalues, eigenvectors as rows).
fn jacobi_eigen(a: &mut [f64], d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut v = vec![0.0f64; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..d {
                    let aip = a[i * d + p];
                    let aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for j in 0..d {
                    let apj = a[p * d + j];
                    let aqj = a[q * d + j];
                    a[p * d + j] = c * apj - s * aqj;
                    a[q * d + j] = s * apj + c * aqj;
                }
                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = c * vip - s * viq;
                    v[i * d + q] = s * vip + c * viq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    let eigenvectors: Vec<Vec<f64>> = (0..d)
        .map(|col| (0..d).map(|row| v[row * d + col]).collect())
        .collect();
    (eigenvalues, eigenvectors)
}

// ---- synthetic corpora ----------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Number of disjoint alphabets; lines cycle through them so labels stay
    /// balanced.
    pub vocabularies: usize,
    /// Generation stops once the corpus reaches this many byte tokens.
    pub target_tokens: usize,
    pub seed: u64,
    pub words_per_vocab: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl SyntheticSpec {
    pub fn new(vocabularies: usize, target_tokens: usize, seed: u64) -> Self {
        SyntheticSpec {
            vocabularies,
            target_tokens,
            seed,
            words_per_vocab: 24,
            min_words: 8,
            max_words: 16,
        }
    }
}

/// Generates a corpus whose sentences draw from disjoint letter alphabets,
/// one per vocabulary, with a small per-vocabulary word list so the text
/// has learnable structure. Returns the text and one vocabulary label per
/// line.
pub fn synthetic_clustered_corpus(spec: &SyntheticSpec) -> (String, Vec<usize>) {
    assert!(
        (1..=6).contains(&spec.vocabularies),
        "the 26 letters split cleanly into at most 6 alphabets"
    );
    let letters: Vec<char> = ('a'..='z').collect();
    let per = letters.len() / spec.vocabularies;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let wordlists: Vec<Vec<String>> = (0..spec.vocabularies)
        .map(|v| {
            let alphabet = &letters[v * per..(v + 1) * per];
            (0..spec.words_per_vocab)
                .map(|_| {
                    let len = rng.random_range(3..=7);
                    (0..len)
                        .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut text = String::new();
    let mut labels = Vec::new();
    let mut tokens = 0usize;
    let mut line = 0usize;
    while tokens < spec.target_tokens {
        let vocab = line % spec.vocabularies;
        let words = rng.random_range(spec.min_words..=spec.max_words);
        let sentence = (0..words)
            .map(|_| wordlists[vocab][rng.random_range(0..wordlists[vocab].len())].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        tokens += sentence.len() + 1;
        text.push_str(&sentence);
        text.push('\n');
        labels.push(vocab);
        line += 1;
    }
    (text, labels)
}
