//! Single-category WEAT: effect sizes, permutation p-values and the
//! intersection of significant words across several reference groups.
//!
//! For a word `w` with cosines `a_i` to the target group and `b_j` to one
//! reference group, the effect size is
//!
//! ```text
//! d = (mean(a) - mean(b)) / sd(a ∪ b)        (sample sd, n - 1)
//! ```
//!
//! The permutation test re-splits the pooled cosines into every subset of
//! size `|a|` (or a seeded random sample of them). The mean difference of a
//! split is increasing in the sum of the subset, so counting splits whose
//! statistic is at least the observed one reduces to counting subsets whose
//! sum is at least the observed subset sum. Sums are computed exactly: each
//! cosine is converted to an integer multiple of a common power of two, so
//! ties are decided without rounding.
//!
//! Exact enumeration walks the subsets in revolving-door order, where
//! consecutive subsets differ by one element leaving and one entering; the
//! swap list is computed once per group-size pair and shared across words.

use std::collections::HashMap;
use std::ops::{AddAssign, SubAssign};
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{Float, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{resolve_group, row_cosine, ResolvedGroup};
use crate::config::{AuditConfig, PermutationMode, WordGroup, EXACT_MAX_POOLED};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest subset count for which a swap list is materialized; bigger
/// problems use a pruned depth-first count instead.
pub const MAX_PLAN_SUBSETS: u64 = 1 << 20;

/// A permutation p-value kept as the exact ratio `count / total`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PValue {
    pub count: u64,
    pub total: u64,
}

impl PValue {
    pub fn value(&self) -> f64 {
        self.count as f64 / self.total as f64
    }
}

impl std::fmt::Display for PValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// Binomial coefficient; saturates at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Cohen's d of one word against a target and a reference group, given its
/// cosines to each member.
pub fn scweat_effect(cos_a: &[f64], cos_b: &[f64]) -> Result<f64> {
    if cos_a.len() < 2 || cos_b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "effect size needs at least 2 cosines per group, got {} and {}",
            cos_a.len(),
            cos_b.len()
        )));
    }
    let n = (cos_a.len() + cos_b.len()) as f64;
    let pooled_mean = (cos_a.iter().sum::<f64>() + cos_b.iter().sum::<f64>()) / n;
    let ss: f64 = cos_a.iter().chain(cos_b).map(|x| (x - pooled_mean).powi(2)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    let first = cos_a[0];
    if sd == 0.0 || cos_a.iter().chain(cos_b).all(|x| x.to_bits() == first.to_bits()) {
        return Err(Error::Degenerate("pooled cosines have zero deviation".into()));
    }
    Ok((mean(cos_a) - mean(cos_b)) / sd)
}

/// Exact integer images of a set of floats: all values scaled by one power of two.
#[derive(Debug)]
enum ExactValues {
    Fixed(Vec<i128>),
    Big(Vec<BigInt>),
}

fn exact_values(values: &[f64]) -> ExactValues {
    let parts: Vec<(u64, i32, bool)> = values
        .iter()
        .map(|&x| {
            if x == 0.0 {
                return (0, 0, false);
            }
            let (mut mant, mut exp, sign) = Float::integer_decode(x);
            let tz = mant.trailing_zeros();
            mant >>= tz;
            exp += tz as i16;
            (mant, exp as i32, sign < 0)
        })
        .collect();
    let e_min = parts.iter().filter(|p| p.0 != 0).map(|p| p.1).min().unwrap_or(0);
    // 30 values of at most 121 bits sum well inside i128
    let fits = parts
        .iter()
        .all(|&(m, e, _)| m == 0 || (64 - m.leading_zeros()) as i32 + (e - e_min) <= 121);
    if fits {
        ExactValues::Fixed(
            parts
                .iter()
                .map(|&(m, e, neg)| {
                    let v = (m as i128) << (e - e_min);
                    if neg {
                        -v
                    } else {
                        v
                    }
                })
                .collect(),
        )
    } else {
        ExactValues::Big(
            parts
                .iter()
                .map(|&(m, e, neg)| {
                    let v = BigInt::from(m) << (e - e_min) as usize;
                    if neg {
                        -v
                    } else {
                        v
                    }
                })
                .collect(),
        )
    }
}

trait ExactSum: Clone + Ord + Zero + for<'a> AddAssign<&'a Self> + for<'a> SubAssign<&'a Self> {}
impl<T> ExactSum for T where T: Clone + Ord + Zero + for<'a> AddAssign<&'a T> + for<'a> SubAssign<&'a T> {}

/// Revolving-door ordering of the `k`-subsets of `n` elements, starting at
/// `{0, .., k-1}`, stored as the swap taking each subset to the next.
#[derive(Clone, Debug)]
pub struct PermutationPlan {
    n_a: usize,
    n_total: usize,
    /// (element leaving, element entering)
    swaps: Vec<(u8, u8)>,
}

fn revolving_door(n: usize, k: usize) -> Vec<u32> {
    if k == 0 {
        return vec![0];
    }
    if k == n {
        return vec![((1u64 << n) - 1) as u32];
    }
    let mut head = revolving_door(n - 1, k);
    let tail = revolving_door(n - 1, k - 1);
    let bit = 1u32 << (n - 1);
    head.extend(tail.iter().rev().map(|m| m | bit));
    head
}

impl PermutationPlan {
    pub fn new(n_a: usize, n_b: usize) -> Result<Self> {
        let n_total = n_a + n_b;
        if n_a == 0 || n_b == 0 || n_total > 32 {
            return Err(Error::InvalidArgument(format!("no permutation plan for sizes {n_a}+{n_b}")));
        }
        if binomial(n_total, n_a) > MAX_PLAN_SUBSETS {
            return Err(Error::InvalidArgument(format!(
                "C({n_total}, {n_a}) subsets exceed the plan limit of {MAX_PLAN_SUBSETS}"
            )));
        }
        let masks = revolving_door(n_total, n_a);
        let swaps = masks
            .windows(2)
            .map(|w| {
                let (out, inn) = (w[0] & !w[1], w[1] & !w[0]);
                debug_assert!(out.count_ones() == 1 && inn.count_ones() == 1);
                (out.trailing_zeros() as u8, inn.trailing_zeros() as u8)
            })
            .collect();
        Ok(PermutationPlan { n_a, n_total, swaps })
    }

    /// Number of subsets visited, identity included.
    pub fn subsets(&self) -> u64 {
        self.swaps.len() as u64 + 1
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.n_a, self.n_total - self.n_a)
    }

    /// Subsets whose sum is at least the sum of the first `n_a` values.
    fn count_at_least<S: ExactSum>(&self, vals: &[S]) -> u64 {
        debug_assert_eq!(vals.len(), self.n_total);
        let mut sum = S::zero();
        for v in &vals[..self.n_a] {
            sum += v;
        }
        let observed = sum.clone();
        let mut count = 1u64;
        for &(out, inn) in &self.swaps {
            sum -= &vals[out as usize];
            sum += &vals[inn as usize];
            if sum >= observed {
                count += 1;
            }
        }
        count
    }
}

/// Counts `k`-subsets with sum >= target by depth-first search over the
/// values sorted in descending order, pruning branches that are decided.
fn dfs_count_at_least<S: ExactSum>(vals: &[S], k: usize) -> u64 {
    let mut observed = S::zero();
    for v in &vals[..k] {
        observed += v;
    }
    let mut sorted = vals.to_vec();
    sorted.sort_by(|a, b| b.cmp(a));
    let n = sorted.len();
    // prefix[i] = sum of sorted[..i]
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(S::zero());
    for v in &sorted {
        let mut next = prefix.last().unwrap().clone();
        next += v;
        prefix.push(next);
    }
    let range_sum = |from: usize, to: usize| {
        let mut s = prefix[to].clone();
        s -= &prefix[from];
        s
    };

    fn walk<S: ExactSum>(
        i: usize,
        remaining: usize,
        sum: S,
        sorted: &[S],
        observed: &S,
        range_sum: &dyn Fn(usize, usize) -> S,
    ) -> u64 {
        let n = sorted.len();
        if remaining == 0 {
            return u64::from(sum >= *observed);
        }
        // largest completion takes the next `remaining` values
        let mut best = sum.clone();
        best += &range_sum(i, i + remaining);
        if best < *observed {
            return 0;
        }
        let mut worst = sum.clone();
        worst += &range_sum(n - remaining, n);
        if worst >= *observed {
            return binomial(n - i, remaining);
        }
        let mut with = sum.clone();
        with += &sorted[i];
        let mut total = walk(i + 1, remaining - 1, with, sorted, observed, range_sum);
        if n - i > remaining {
            total += walk(i + 1, remaining, sum, sorted, observed, range_sum);
        }
        total
    }

    walk(0, k, S::zero(), &sorted, &observed, &range_sum)
}

fn sampled_count<S: ExactSum>(vals: &[S], k: usize, n_samples: usize, rng: &mut ChaCha8Rng) -> u64 {
    let mut observed = S::zero();
    for v in &vals[..k] {
        observed += v;
    }
    let mut count = 0u64;
    for _ in 0..n_samples {
        let mut sum = S::zero();
        for i in rand::seq::index::sample(rng, vals.len(), k).iter() {
            sum += &vals[i];
        }
        if sum >= observed {
            count += 1;
        }
    }
    count
}

/// Exact one-sided p-value. Uses `plan` when given (it must match the sizes).
fn exact_pvalue(cos_a: &[f64], cos_b: &[f64], plan: Option<&PermutationPlan>) -> Result<PValue> {
    if cos_a.len() != cos_b.len() {
        return Err(Error::InvalidArgument(format!(
            "exact permutation mode needs equal group sizes, got {} and {}",
            cos_a.len(),
            cos_b.len()
        )));
    }
    let n_total = cos_a.len() + cos_b.len();
    if n_total > EXACT_MAX_POOLED {
        return Err(Error::InvalidArgument(format!(
            "exact enumeration over {n_total} pooled cosines is refused; use sampled mode"
        )));
    }
    let pooled: Vec<f64> = cos_a.iter().chain(cos_b).copied().collect();
    let k = cos_a.len();
    let total = binomial(n_total, k);
    let owned;
    let plan = match plan {
        Some(p) => Some(p),
        None if total <= MAX_PLAN_SUBSETS => {
            owned = PermutationPlan::new(k, cos_b.len())?;
            Some(&owned)
        }
        None => None,
    };
    let count = match (exact_values(&pooled), plan) {
        (ExactValues::Fixed(v), Some(p)) => p.count_at_least(&v),
        (ExactValues::Big(v), Some(p)) => p.count_at_least(&v),
        (ExactValues::Fixed(v), None) => dfs_count_at_least(&v, k),
        (ExactValues::Big(v), None) => dfs_count_at_least(&v, k),
    };
    Ok(PValue { count, total })
}

fn sampled_pvalue(cos_a: &[f64], cos_b: &[f64], n_samples: usize, seed: u64) -> Result<PValue> {
    if cos_a.is_empty() || cos_b.is_empty() || n_samples == 0 {
        return Err(Error::InvalidArgument("sampled permutation test needs non-empty groups and samples".into()));
    }
    let pooled: Vec<f64> = cos_a.iter().chain(cos_b).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cos_a.len();
    let count = match exact_values(&pooled) {
        ExactValues::Fixed(v) => sampled_count(&v, k, n_samples, &mut rng),
        ExactValues::Big(v) => sampled_count(&v, k, n_samples, &mut rng),
    };
    // the observed split itself is always counted
    Ok(PValue {
        count: count + 1,
        total: n_samples as u64 + 1,
    })
}

/// One-sided permutation p-value for the target cosines exceeding the
/// reference cosines. `seed` only matters in sampled mode.
pub fn scweat_pvalue(cos_a: &[f64], cos_b: &[f64], mode: PermutationMode, seed: u64) -> Result<PValue> {
    match mode {
        PermutationMode::Exact => exact_pvalue(cos_a, cos_b, None),
        PermutationMode::Sampled { n_samples } => sampled_pvalue(cos_a, cos_b, n_samples, seed),
    }
}

/// Seed for one (word, reference) sampled test, independent of scheduling.
pub fn derive_seed(seed: u64, rank: usize, reference: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix((rank as u64).wrapping_mul(0x1_0000_0001).wrapping_add(reference as u64)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScWeatResult {
    pub token: String,
    pub rank: usize,
    pub d: f64,
    pub p: PValue,
    pub reference_name: String,
}

fn cosines_into<T: Scalar>(m: &EmbeddingMatrix<T>, row: usize, members: &[usize], out: &mut Vec<f64>) {
    out.clear();
    out.extend(members.iter().map(|&g| row_cosine(m, row, g)));
}

/// SC-WEAT for a single word.
pub fn scweat_word<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    word: &str,
    target: &WordGroup,
    reference: &WordGroup,
    mode: PermutationMode,
    seed: u64,
) -> Result<ScWeatResult> {
    let entry = matrix.lookup(word).ok_or_else(|| Error::MissingToken(word.to_string()))?;
    if matrix.norm(entry.rank) == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let a = resolve_group(matrix, target)?;
    let b = resolve_group(matrix, reference)?;
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    cosines_into(matrix, entry.rank, &a.rows, &mut ca);
    cosines_into(matrix, entry.rank, &b.rows, &mut cb);
    Ok(ScWeatResult {
        token: entry.token.to_string(),
        rank: entry.rank,
        d: scweat_effect(&ca, &cb)?,
        p: scweat_pvalue(&ca, &cb, mode, seed)?,
        reference_name: reference.name.clone(),
    })
}

/// A word that passed every reference test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniqueWord {
    pub token: String,
    pub rank: usize,
    /// One result per reference group, in config order.
    pub results: Vec<ScWeatResult>,
}

/// Everything computed for one scanned word (kept only on request).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordEvaluation {
    pub rank: usize,
    /// Effect size per reference.
    pub d: Vec<f64>,
    /// Present only when every `d` exceeded the threshold.
    pub p: Option<Vec<PValue>>,
    pub member: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    /// Words belonging to a configured group.
    pub group_members: usize,
    pub zero_norm: usize,
    /// Words whose pooled cosines had zero deviation for some reference.
    pub degenerate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniqueAssociationSet {
    pub target: ResolvedGroup,
    pub references: Vec<ResolvedGroup>,
    pub d_min: f64,
    pub p_max: f64,
    pub mode: PermutationMode,
    pub seed: u64,
    /// Uniquely associated words, ascending rank.
    pub words: Vec<UniqueWord>,
    pub scanned: usize,
    /// Words with d above the threshold for every reference.
    pub passed_effect: usize,
    pub skips: SkipReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluations: Option<Vec<WordEvaluation>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ScanOptions {
    /// Keep a [`WordEvaluation`] for every scanned word.
    pub keep_evaluations: bool,
}

enum Outcome {
    GroupMember,
    ZeroNorm,
    Degenerate,
    Evaluated(WordEvaluation),
}

/// Computes the uniquely associated set: words whose effect exceeds
/// `d_min` with `p < p_max` against every reference group.
pub fn unique_association_scan<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    config: &AuditConfig,
) -> Result<UniqueAssociationSet> {
    unique_association_scan_with(matrix, config, ScanOptions::default())
}

pub fn unique_association_scan_with<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    config: &AuditConfig,
    options: ScanOptions,
) -> Result<UniqueAssociationSet> {
    if config.references.is_empty() {
        return Err(Error::Config("no reference groups configured".into()));
    }
    let target = resolve_group(matrix, &config.target)?;
    let references = config
        .references
        .iter()
        .map(|g| resolve_group(matrix, g))
        .collect::<Result<Vec<_>>>()?;
    for g in std::iter::once(&target).chain(&references) {
        if g.len() < 2 {
            return Err(Error::Config(format!(
                "group `{}` resolves to {} vector(s); at least 2 are needed",
                g.name,
                g.len()
            )));
        }
    }

    let mut plans: HashMap<usize, Arc<PermutationPlan>> = HashMap::new();
    if config.permutation_mode == PermutationMode::Exact {
        for b in &references {
            if b.len() != target.len() {
                return Err(Error::Config(format!(
                    "exact mode needs equal resolved group sizes: `{}` has {}, `{}` has {} (use sampled mode)",
                    target.name,
                    target.len(),
                    b.name,
                    b.len()
                )));
            }
            if b.len() + target.len() > EXACT_MAX_POOLED {
                return Err(Error::Config(format!(
                    "exact enumeration over {} pooled cosines is refused; use sampled mode",
                    b.len() + target.len()
                )));
            }
            if binomial(target.len() + b.len(), target.len()) <= MAX_PLAN_SUBSETS {
                plans
                    .entry(b.len())
                    .or_insert_with(|| Arc::new(PermutationPlan::new(target.len(), b.len()).expect("sizes checked")));
            }
        }
    }

    let mut group_rows = vec![false; matrix.len()];
    for g in std::iter::once(&target).chain(&references) {
        for &r in &g.rows {
            group_rows[r] = true;
        }
    }

    let d_min = config.d_min;
    let p_max = config.p_max;
    let mode = config.permutation_mode;
    let seed = config.seed;

    let evaluate = |scratch: &mut (Vec<f64>, Vec<f64>), row: usize| -> Result<Outcome> {
        if group_rows[row] {
            return Ok(Outcome::GroupMember);
        }
        if matrix.norm(row) == 0.0 {
            return Ok(Outcome::ZeroNorm);
        }
        let (ca, cb) = scratch;
        cosines_into(matrix, row, &target.rows, ca);
        let mut ds = Vec::with_capacity(references.len());
        let mut all_pass = true;
        for b in &references {
            cosines_into(matrix, row, &b.rows, cb);
            match scweat_effect(ca, cb) {
                Ok(d) => {
                    all_pass &= d > d_min;
                    ds.push(d);
                }
                Err(Error::Degenerate(_)) => return Ok(Outcome::Degenerate),
                Err(e) => return Err(e),
            }
        }
        let mut p = None;
        let mut member = false;
        if all_pass {
            let mut ps = Vec::with_capacity(references.len());
            for (j, b) in references.iter().enumerate() {
                cosines_into(matrix, row, &b.rows, cb);
                let pv = match mode {
                    PermutationMode::Exact => exact_pvalue(ca, cb, plans.get(&b.len()).map(|p| p.as_ref()))?,
                    PermutationMode::Sampled { n_samples } => {
                        sampled_pvalue(ca, cb, n_samples, derive_seed(seed, row, j))?
                    }
                };
                ps.push(pv);
            }
            member = ps.iter().all(|pv| pv.value() < p_max);
            p = Some(ps);
        }
        Ok(Outcome::Evaluated(WordEvaluation { rank: row, d: ds, p, member }))
    };

    let outcomes: Vec<Outcome> = (0..matrix.len())
        .into_par_iter()
        .map_init(|| (Vec::new(), Vec::new()), evaluate)
        .collect::<Result<Vec<_>>>()?;

    let mut skips = SkipReport::default();
    let mut words = Vec::new();
    let mut passed_effect = 0;
    let mut scanned = 0;
    let mut evaluations = options.keep_evaluations.then(Vec::new);
    for outcome in outcomes {
        match outcome {
            Outcome::GroupMember => skips.group_members += 1,
            Outcome::ZeroNorm => {
                scanned += 1;
                skips.zero_norm += 1
            }
            Outcome::Degenerate => {
                scanned += 1;
                skips.degenerate += 1
            }
            Outcome::Evaluated(ev) => {
                scanned += 1;
                if let Some(ps) = &ev.p {
                    passed_effect += 1;
                    if ev.member {
                        words.push(UniqueWord {
                            token: matrix.token(ev.rank).to_string(),
                            rank: ev.rank,
                            results: references
                                .iter()
                                .zip(ev.d.iter().zip(ps))
                                .map(|(b, (&d, &p))| ScWeatResult {
                                    token: matrix.token(ev.rank).to_string(),
                                    rank: ev.rank,
                                    d,
                                    p,
                                    reference_name: b.name.clone(),
                                })
                                .collect(),
                        });
                    }
                }
                if let Some(evs) = evaluations.as_mut() {
                    evs.push(ev);
                }
            }
        }
    }

    Ok(UniqueAssociationSet {
        target,
        references,
        d_min,
        p_max,
        mode,
        seed,
        words,
        scanned,
        passed_effect,
        skips,
        evaluations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopFrequent {
    pub words: Vec<UniqueWord>,
    /// The set held fewer than the requested number of words.
    pub truncated: bool,
}

/// The `n` most frequent (lowest-rank) uniquely associated words.
pub fn select_top_frequent(set: &UniqueAssociationSet, n: usize) -> TopFrequent {
    let mut words = set.words.clone();
    words.sort_by_key(|w| w.rank);
    let truncated = words.len() < n;
    if truncated {
        log::warn!("requested {n} uniquely associated words but only {} exist", words.len());
    }
    words.truncate(n);
    TopFrequent { words, truncated }
}

/// Writes `token,rank,d_B1,p_B1,...` with one pair of columns per reference.
pub fn write_unique_csv<W: std::io::Write>(words: &[UniqueWord], n_references: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["token".to_string(), "rank".to_string()];
    for j in 1..=n_references {
        header.push(format!("d_B{j}"));
        header.push(format!("p_B{j}"));
    }
    w.write_record(&header)?;
    for word in words {
        let mut rec = vec![word.token.clone(), word.rank.to_string()];
        for r in &word.results {
            rec.push(r.d.to_string());
            rec.push(r.p.value().to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
