//! k-means with k-means++ seeding, silhouette scores and silhouette-based
//! choice of k. Also turns word lists into points: L2-normalized embedding
//! rows, or valence/arousal/dominance triples from an affect lexicon.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{nfc, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Borrowed row-major point set.
#[derive(Clone, Copy, Debug)]
pub struct Points<'a, T> {
    data: &'a [T],
    dim: usize,
}

impl<'a, T: Scalar> Points<'a, T> {
    pub fn new(data: &'a [T], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("points contain non-finite values".into()));
        }
        Ok(Points { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
fn sq_dist<T: Scalar>(p: &[T], c: &[f64]) -> f64 {
    p.iter().zip(c).map(|(&x, &y)| (x.widen() - y).powi(2)).sum()
}

#[inline]
fn dist<T: Scalar>(p: &[T], q: &[T]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&x, &y)| (x.widen() - y.widen()).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Independent runs with seeds `seed, seed + 1, ...`; the lowest
    /// objective wins.
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 300,
            restarts: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub k: usize,
    pub assignment: Vec<usize>,
    /// Row-major `k x dim` centroids.
    pub centroids: Vec<f64>,
    /// Within-cluster sum of squares of the final assignment.
    pub objective: f64,
    /// Objective after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Seed of the winning run.
    pub seed: u64,
    /// Every seed that was run.
    pub seeds_tried: Vec<u64>,
    /// Times an empty cluster was re-seeded.
    pub reseeded: usize,
}

fn kmeans_pp<T: Scalar>(points: &Points<'_, T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len();
    let dim = points.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend(points.row(first).iter().map(|v| v.widen()));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    pick = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // all remaining points coincide with a centroid
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[next] = true;
        let start = centroids.len();
        centroids.extend(points.row(next).iter().map(|v| v.widen()));
        let c = &centroids[start..];
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(points.row(i), c));
        }
    }
    centroids
}

fn assign<T: Scalar>(points: &Points<'_, T>, centroids: &[f64], k: usize) -> Vec<(usize, f64)> {
    let dim = points.dim();
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut best = (0, f64::INFINITY);
            for j in 0..k {
                let d = sq_dist(p, &centroids[j * dim..(j + 1) * dim]);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

fn lloyd<T: Scalar>(points: &Points<'_, T>, k: usize, seed: u64, max_iter: usize) -> KMeansResult {
    let n = points.len();
    let dim = points.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut reseeded = 0;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let step = assign(points, &centroids, k);
        let objective: f64 = step.iter().map(|s| s.1).sum();
        if let Some(&prev) = trace.last() {
            debug_assert!(
                objective <= prev + 1e-12 * prev.abs().max(1.0),
                "k-means objective rose from {prev} to {objective}"
            );
        }
        trace.push(objective);
        let new_assignment: Vec<usize> = step.iter().map(|s| s.0).collect();
        if new_assignment == assignment {
            converged = true;
            break;
        }
        assignment = new_assignment;

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += v.widen();
            }
        }
        let mut far: Vec<f64> = step.iter().map(|s| s.1).collect();
        for j in 0..k {
            if counts[j] > 0 {
                let count = counts[j] as f64;
                for (c, s) in centroids[j * dim..(j + 1) * dim].iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                    *c = s / count;
                }
            } else {
                // move the empty centroid onto the point farthest from its own centroid
                let (idx, _) = far
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
                far[idx] = 0.0;
                reseeded += 1;
                for (c, v) in centroids[j * dim..(j + 1) * dim].iter_mut().zip(points.row(idx)) {
                    *c = v.widen();
                }
            }
        }
    }

    let objective = (0..n)
        .map(|i| sq_dist(points.row(i), &centroids[assignment[i] * dim..(assignment[i] + 1) * dim]))
        .sum();
    KMeansResult {
        k,
        assignment,
        centroids,
        objective,
        objective_trace: trace,
        iterations,
        converged,
        seed,
        seeds_tried: vec![seed],
        reseeded,
    }
}

/// Lloyd's algorithm from a seeded k-means++ start.
pub fn kmeans<T: Scalar>(points: &Points<'_, T>, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(points, k, seed, KMeansOptions::default())
}

pub fn kmeans_with<T: Scalar>(
    points: &Points<'_, T>,
    k: usize,
    seed: u64,
    options: KMeansOptions,
) -> Result<KMeansResult> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > points.len() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the {} points", points.len())));
    }
    let runs = options.restarts.max(1);
    let mut best: Option<KMeansResult> = None;
    let mut seeds = Vec::with_capacity(runs);
    for r in 0..runs {
        let s = seed.wrapping_add(r as u64);
        seeds.push(s);
        let result = lloyd(points, k, s, options.max_iter);
        if best.as_ref().is_none_or(|b| result.objective < b.objective) {
            best = Some(result);
        }
    }
    let mut best = best.expect("at least one run");
    best.seeds_tried = seeds;
    Ok(best)
}

/// Pairwise Euclidean distances, computed once and reused across k.
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new<T: Scalar>(points: &Points<'_, T>) -> Self {
        let n = points.len();
        let d = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| (0..n).map(move |j| dist(points.row(i), points.row(j))))
            .collect();
        DistanceMatrix { n, d }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// Mean silhouette over all points. A point alone in its cluster scores 0,
/// as does a point with `a = b = 0`.
pub fn silhouette<T: Scalar>(points: &Points<'_, T>, assignment: &[usize]) -> Result<f64> {
    silhouette_with(&DistanceMatrix::new(points), assignment)
}

pub fn silhouette_with(distances: &DistanceMatrix, assignment: &[usize]) -> Result<f64> {
    let n = distances.n;
    if assignment.len() != n {
        return Err(Error::LengthMismatch(assignment.len(), n));
    }
    // relabel to 0..m in order of first appearance
    let mut labels: HashMap<usize, usize> = HashMap::new();
    let dense: Vec<usize> = assignment
        .iter()
        .map(|&c| {
            let next = labels.len();
            *labels.entry(c).or_insert(next)
        })
        .collect();
    let m = labels.len();
    if m < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least two clusters".into()));
    }
    let mut sizes = vec![0usize; m];
    for &c in &dense {
        sizes[c] += 1;
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = dense[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0f64; m];
            for j in 0..n {
                if j != i {
                    sums[dense[j]] += distances.get(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..m)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k_chosen: usize,
    pub silhouette_by_k: BTreeMap<usize, f64>,
    /// Cluster id per input point, in input order.
    pub assignment: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub cluster_sizes_pct: BTreeMap<usize, f64>,
    pub seed: u64,
    pub seeds_tried: BTreeMap<usize, Vec<u64>>,
    pub objective: f64,
    pub iterations: usize,
}

/// Runs k-means for every k in the inclusive range and keeps the one with
/// the highest silhouette (ties go to the smaller k).
pub fn select_k_cluster<T: Scalar>(
    points: &Points<'_, T>,
    k_range: (usize, usize),
    seed: u64,
    options: KMeansOptions,
) -> Result<ClusterReport> {
    let (k_min, k_max) = k_range;
    if k_min < 2 || k_min > k_max || k_max > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k range [{k_min}, {k_max}] must lie within [2, {}]",
            points.len()
        )));
    }
    let distances = DistanceMatrix::new(points);
    let mut silhouette_by_k = BTreeMap::new();
    let mut seeds_tried = BTreeMap::new();
    let mut best: Option<(f64, KMeansResult)> = None;
    for k in k_min..=k_max {
        let run = kmeans_with(points, k, seed, options)?;
        let labels_used = {
            let mut seen = run.assignment.clone();
            seen.sort_unstable();
            seen.dedup();
            seen.len()
        };
        let score = if labels_used < 2 {
            -1.0
        } else {
            silhouette_with(&distances, &run.assignment)?
        };
        silhouette_by_k.insert(k, score);
        seeds_tried.insert(k, run.seeds_tried.clone());
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, run));
        }
    }
    let (_, run) = best.expect("non-empty range");
    let n = points.len();
    let mut cluster_sizes = vec![0usize; run.k];
    for &c in &run.assignment {
        cluster_sizes[c] += 1;
    }
    let cluster_sizes_pct = cluster_sizes
        .iter()
        .enumerate()
        .map(|(c, &s)| (c, 100.0 * s as f64 / n as f64))
        .collect();
    Ok(ClusterReport {
        k_chosen: run.k,
        silhouette_by_k,
        assignment: run.assignment,
        cluster_sizes,
        cluster_sizes_pct,
        seed,
        seeds_tried,
        objective: run.objective,
        iterations: run.iterations,
    })
}

/// Embedding rows for `tokens`, scaled to unit length, in input order.
/// Returns the tokens found with their rows, and the tokens that were missing
/// or had a zero vector.
pub fn embedding_points<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    tokens: &[String],
) -> (Vec<(String, usize)>, Vec<T>, Vec<String>) {
    let mut found = Vec::new();
    let mut data = Vec::new();
    let mut missing = Vec::new();
    for t in tokens {
        match matrix.rank_of(t) {
            Some(r) if matrix.norm(r) > 0.0 => {
                let inv = 1.0 / matrix.norm(r);
                data.extend(matrix.row(r).iter().map(|v| T::narrow(v.widen() * inv)));
                found.push((matrix.token(r).to_string(), r));
            }
            _ => missing.push(t.clone()),
        }
    }
    (found, data, missing)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VadVector {
    pub valence: f64,
    pub arousal: f64,
    pub dominance: f64,
}

/// Term -> valence/arousal/dominance, keyed by lowercase NFC term.
#[derive(Clone, Debug, Default)]
pub struct VadLexicon {
    entries: HashMap<String, VadVector>,
}

fn lexicon_key(s: &str) -> String {
    nfc(s.trim()).to_lowercase()
}

impl VadLexicon {
    pub fn insert(&mut self, term: &str, v: VadVector) {
        self.entries.entry(lexicon_key(term)).or_insert(v);
    }

    pub fn get(&self, term: &str) -> Option<&VadVector> {
        self.entries.get(&lexicon_key(term))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads `term<TAB>valence<TAB>arousal<TAB>dominance` lines. A first line
    /// whose scores are not numbers is taken as a header.
    pub fn from_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lex = VadLexicon::default();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let parsed: Vec<Option<f64>> = fields[1..].iter().map(|f| f.trim().parse().ok()).collect();
            if lineno == 1 && parsed.iter().all(Option::is_none) {
                continue;
            }
            let mut vals = [0.0; 3];
            for (slot, (p, raw)) in vals.iter_mut().zip(parsed.iter().zip(&fields[1..])) {
                match p {
                    Some(v) if (0.0..=1.0).contains(v) => *slot = *v,
                    Some(v) => {
                        return Err(Error::Parse {
                            line: lineno,
                            message: format!("score {v} outside [0, 1]"),
                        })
                    }
                    None => {
                        return Err(Error::Parse {
                            line: lineno,
                            message: format!("invalid score `{raw}`"),
                        })
                    }
                }
            }
            lex.insert(
                fields[0],
                VadVector {
                    valence: vals[0],
                    arousal: vals[1],
                    dominance: vals[2],
                },
            );
        }
        if lex.is_empty() {
            return Err(Error::Empty("lexicon has no entries".into()));
        }
        Ok(lex)
    }
}

/// Reads a `from<TAB>to` spelling substitution table.
pub fn load_substitutions<R: BufRead>(reader: R) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let Some((from, to)) = line.split_once('\t') else {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected `from<TAB>to`".into(),
            });
        };
        out.insert(lexicon_key(from), to.trim().to_string());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VadEmbedding {
    /// Input words that were found, in input order.
    pub tokens: Vec<String>,
    /// Row-major `tokens.len() x 3` (valence, arousal, dominance).
    pub points: Vec<f64>,
    pub excluded: Vec<String>,
    /// Percentage of input words not found.
    pub exclusion_rate: f64,
}

/// Maps words to 3-d affect points. Lookups are case-insensitive; optional
/// substitutions are applied first.
pub fn vad_embed(
    words: &[String],
    lexicon: &VadLexicon,
    substitutions: Option<&HashMap<String, String>>,
) -> Result<VadEmbedding> {
    let mut tokens = Vec::new();
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for w in words {
        let key = lexicon_key(w);
        let query = substitutions.and_then(|s| s.get(&key)).map(String::as_str).unwrap_or(&key);
        match lexicon.get(query) {
            Some(v) => {
                tokens.push(w.clone());
                points.extend([v.valence, v.arousal, v.dominance]);
            }
            None => excluded.push(w.clone()),
        }
    }
    if tokens.is_empty() {
        return Err(Error::Empty("no word was found in the lexicon".into()));
    }
    let exclusion_rate = 100.0 * excluded.len() as f64 / words.len() as f64;
    if !excluded.is_empty() {
        log::info!("{} of {} words not in the lexicon ({exclusion_rate:.1}%)", excluded.len(), words.len());
    }
    Ok(VadEmbedding {
        tokens,
        points,
        excluded,
        exclusion_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const FOUR: [f64; 8] = [0.0, 0.0, 0.0, 1.0, 10.0, 10.0, 10.0, 11.0];

    #[test]
    fn separated_pairs_split_for_any_seed() {
        let pts = Points::new(&FOUR[..], 2).unwrap();
        for seed in 0..50 {
            let r = kmeans(&pts, 2, seed).unwrap();
            assert_eq!(r.assignment[0], r.assignment[1]);
            assert_eq!(r.assignment[2], r.assignment[3]);
            assert_ne!(r.assignment[0], r.assignment[2]);
            assert!(r.converged);
        }
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let pts = Points::new(&FOUR[..], 2).unwrap();
        let r = kmeans(&pts, 4, 9).unwrap();
        let mut labels = r.assignment.clone();
        labels.sort_unstable();
        assert_eq!(labels, [0, 1, 2, 3]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn duplicates_share_a_cluster() {
        let data = [0.0, 0.0, 0.0, 0.0, 5.0, 5.0, 5.0, 5.0, 0.2, 0.1, 0.2, 0.1];
        let pts = Points::new(&data[..], 2).unwrap();
        for seed in 0..20 {
            let r = kmeans(&pts, 2, seed).unwrap();
            assert_eq!(r.assignment[0], r.assignment[1]);
            assert_eq!(r.assignment[2], r.assignment[3]);
            assert_eq!(r.assignment[4], r.assignment[5]);
        }
    }

    #[test]
    fn more_clusters_than_distinct_points() {
        // three copies of one point plus one other: k = 3 must still run
        let data = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 4.0, 4.0];
        let pts = Points::new(&data[..], 2).unwrap();
        let r = kmeans(&pts, 3, 0).unwrap();
        assert_eq!(r.assignment.len(), 4);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn kmeans_errors() {
        let pts = Points::new(&FOUR[..], 2).unwrap();
        assert!(kmeans(&pts, 5, 0).is_err());
        assert!(kmeans(&pts, 1, 0).is_err());
        assert!(Points::new(&FOUR[..3], 2).is_err());
    }

    #[test]
    fn silhouette_four_points() {
        let pts = Points::new(&FOUR[..], 2).unwrap();
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        // a = 1 everywhere; b = mean(sqrt 200, sqrt 221) for the outer points
        // and mean(sqrt 181, sqrt 200) for the inner ones
        let (r181, r200, r221) = (181f64.sqrt(), 200f64.sqrt(), 221f64.sqrt());
        let outer = 1.0 - 1.0 / ((r200 + r221) / 2.0);
        let inner = 1.0 - 1.0 / ((r181 + r200) / 2.0);
        assert_abs_diff_eq!(s, (outer + inner) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.92929, epsilon = 1e-4);
        // relabeling does not matter
        assert_eq!(s, silhouette(&pts, &[7, 7, 3, 3]).unwrap());
    }

    #[test]
    fn silhouette_degenerate_cases() {
        let same = [1.0, 1.0, 1.0, 1.0];
        let pts = Points::new(&same[..], 1).unwrap();
        assert_eq!(silhouette(&pts, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(silhouette(&pts, &[0, 0, 0, 0]).is_err());
        let pts = Points::new(&FOUR[..], 2).unwrap();
        // singleton clusters score 0
        let s = silhouette(&pts, &[0, 1, 2, 2]).unwrap();
        let expected = ((1.0 - 1.0 / 181f64.sqrt()) + (1.0 - 1.0 / 200f64.sqrt())) / 4.0;
        assert_abs_diff_eq!(s, expected, epsilon = 1e-12);
    }

    #[test]
    fn silhouette_approaches_one() {
        let mut last = 0.0;
        for sep in [10.0, 100.0, 1000.0] {
            let data = [0.0, 0.1, sep, sep + 0.1];
            let pts = Points::new(&data[..], 1).unwrap();
            let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
            assert!(s > last);
            last = s;
        }
        assert!(last > 0.999);
    }

    #[test]
    fn select_k_on_two_lines() {
        let mut data = Vec::new();
        for i in 0..10 {
            data.extend([i as f64 * 0.01, 0.0]);
            data.extend([50.0 + i as f64 * 0.01, 0.0]);
        }
        let pts = Points::new(&data[..], 2).unwrap();
        let r = select_k_cluster(&pts, (2, 4), 3, KMeansOptions::default()).unwrap();
        assert_eq!(r.k_chosen, 2);
        assert_eq!(r.silhouette_by_k.len(), 3);
        let total: f64 = r.cluster_sizes_pct.values().sum();
        assert_abs_diff_eq!(total, 100.0, epsilon = 0.01);
        assert_eq!(r, select_k_cluster(&pts, (2, 4), 3, KMeansOptions::default()).unwrap());
        assert!(select_k_cluster(&pts, (2, 21), 3, KMeansOptions::default()).is_err());
    }

    #[test]
    fn restarts_keep_the_best_objective() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 37) % 17) as f64).collect();
        let pts = Points::new(&data[..], 2).unwrap();
        let one = kmeans(&pts, 4, 5).unwrap();
        let many = kmeans_with(&pts, 4, 5, KMeansOptions { max_iter: 300, restarts: 6 }).unwrap();
        assert!(many.objective <= one.objective);
        assert_eq!(many.seeds_tried, (5..11).collect::<Vec<_>>());
    }

    fn lexicon() -> VadLexicon {
        let tsv = "Word\tValence\tArousal\tDominance\nhappy\t1.000\t0.735\t0.772\nw1\t0.5\t0.5\t0.5\n";
        VadLexicon::from_tsv(tsv.as_bytes()).unwrap()
    }

    #[test]
    fn vad_embed_contract() {
        let lex = lexicon();
        let r = vad_embed(&["w1".into(), "w2".into()], &lex, None).unwrap();
        assert_eq!(r.tokens, ["w1"]);
        assert_eq!(r.points, [0.5, 0.5, 0.5]);
        assert_eq!(r.excluded, ["w2"]);
        assert_eq!(r.exclusion_rate, 50.0);

        let r = vad_embed(&["Happy".into(), "w1".into()], &lex, None).unwrap();
        assert!(r.excluded.is_empty());
        assert_eq!(r.points[0], 1.0);

        assert!(vad_embed(&["nope".into()], &lex, None).is_err());

        let subs: HashMap<_, _> = [("hapy".to_string(), "happy".to_string())].into();
        let r = vad_embed(&["hapy".into()], &lex, Some(&subs)).unwrap();
        assert_eq!(r.tokens, ["hapy"]);
    }

    #[test]
    fn lexicon_rejects_bad_rows() {
        assert!(VadLexicon::from_tsv("a\t0.5\t0.5\n".as_bytes()).is_err());
        assert!(VadLexicon::from_tsv("a\t0.5\t0.5\t1.5\n".as_bytes()).is_err());
        assert!(VadLexicon::from_tsv("a\t0.5\tx\t0.5\n".as_bytes()).is_err());
        // a non-numeric row after line 1 is not a header
        assert!(VadLexicon::from_tsv("a\t0.5\t0.5\t0.5\nb\tx\ty\tz\n".as_bytes()).is_err());
    }
}
