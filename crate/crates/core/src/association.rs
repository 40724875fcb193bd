//! Cosine similarity, mean group association and full-vocabulary scans.

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::WordGroup;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

/// Mean cosine similarity of one vocabulary word to a group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationScore {
    pub token: String,
    pub rank: usize,
    pub s: f64,
}

/// `dot(u, v) / (|u| |v|)` in 64-bit arithmetic.
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (scalar::norm(u), scalar::norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(scalar::dot(u, v) / (nu * nv))
}

/// Cosine between two rows using the norms cached at load.
#[inline]
pub(crate) fn row_cosine<T: Scalar>(m: &EmbeddingMatrix<T>, a: usize, b: usize) -> f64 {
    scalar::dot(m.row(a), m.row(b)) / (m.norm(a) * m.norm(b))
}

/// A group's tokens mapped onto vocabulary rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedGroup {
    pub name: String,
    /// Rows in group-token order.
    pub rows: Vec<usize>,
    /// Tokens absent from the vocabulary or carrying a zero vector.
    pub missing: Vec<String>,
}

impl ResolvedGroup {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Resolves group tokens, dropping (and logging) the ones that cannot be used.
pub fn resolve_group<T: Scalar>(matrix: &EmbeddingMatrix<T>, group: &WordGroup) -> Result<ResolvedGroup> {
    let mut rows = Vec::with_capacity(group.len());
    let mut missing = Vec::new();
    for token in &group.tokens {
        match matrix.rank_of(token) {
            Some(r) if matrix.norm(r) > 0.0 => rows.push(r),
            _ => missing.push(token.clone()),
        }
    }
    if !missing.is_empty() {
        log::warn!("group `{}`: {} token(s) not usable: {}", group.name, missing.len(), missing.join(", "));
    }
    if rows.is_empty() {
        return Err(Error::UnresolvedGroup(group.name.clone()));
    }
    Ok(ResolvedGroup {
        name: group.name.clone(),
        rows,
        missing,
    })
}

#[inline]
pub(crate) fn mean_cosine<T: Scalar>(matrix: &EmbeddingMatrix<T>, row: usize, members: &[usize]) -> f64 {
    let sum: f64 = members.iter().map(|&m| row_cosine(matrix, row, m)).sum();
    sum / members.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAssociation {
    pub score: AssociationScore,
    /// Number of group tokens the mean was taken over.
    pub resolved: usize,
}

/// Mean cosine of `word` to the resolvable members of `group`.
pub fn group_association<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    word: &str,
    group: &WordGroup,
) -> Result<GroupAssociation> {
    let entry = matrix.lookup(word).ok_or_else(|| Error::MissingToken(word.to_string()))?;
    if matrix.norm(entry.rank) == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let resolved = resolve_group(matrix, group)?;
    Ok(GroupAssociation {
        score: AssociationScore {
            token: entry.token.to_string(),
            rank: entry.rank,
            s: mean_cosine(matrix, entry.rank, &resolved.rows),
        },
        resolved: resolved.len(),
    })
}

/// Group tokens plus every vocabulary token that matches one of them
/// case-insensitively.
pub fn target_exclusions<T: Scalar>(matrix: &EmbeddingMatrix<T>, group: &WordGroup) -> HashSet<String> {
    let lowered: HashSet<String> = group.tokens.iter().map(|t| t.to_lowercase()).collect();
    let mut out: HashSet<String> = group.tokens.iter().cloned().collect();
    out.extend(
        matrix
            .tokens()
            .par_iter()
            .filter(|t| lowered.contains(&t.to_lowercase()))
            .cloned()
            .collect::<Vec<_>>(),
    );
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub scores: Vec<AssociationScore>,
    pub requested: usize,
    /// Fewer than `requested` words were available.
    pub truncated: bool,
    pub group: ResolvedGroup,
    pub excluded: usize,
    pub zero_norm_skipped: usize,
}

/// Orders by `s` descending, then rank ascending.
fn by_score(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `k` words with the highest mean cosine to `group`, excluding the given
/// tokens. Ties go to the more frequent word. The result does not depend on
/// the size of the thread pool.
pub fn top_k_associated<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    group: &WordGroup,
    k: usize,
    exclude: &HashSet<String>,
) -> Result<ScanResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let resolved = resolve_group(matrix, group)?;
    let excluded_rows: HashSet<usize> = exclude.iter().filter_map(|t| matrix.rank_of(t)).collect();
    let zero_norm = (0..matrix.len())
        .filter(|&r| matrix.norm(r) == 0.0 && !excluded_rows.contains(&r))
        .count();

    let mut scored: Vec<(f64, usize)> = (0..matrix.len())
        .into_par_iter()
        .filter(|r| !excluded_rows.contains(r) && matrix.norm(*r) > 0.0)
        .map(|r| (mean_cosine(matrix, r, &resolved.rows), r))
        .collect();

    let truncated = scored.len() < k;
    if truncated {
        log::warn!("requested top {k} but only {} words are eligible", scored.len());
    } else if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, by_score);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_score);

    Ok(ScanResult {
        scores: scored
            .into_iter()
            .map(|(s, rank)| AssociationScore {
                token: matrix.token(rank).to_string(),
                rank,
                s,
            })
            .collect(),
        requested: k,
        truncated,
        group: resolved,
        excluded: excluded_rows.len(),
        zero_norm_skipped: zero_norm,
    })
}

/// Writes `token,rank,s` rows.
pub fn write_scores_csv<W: std::io::Write>(scores: &[AssociationScore], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["token", "rank", "s"])?;
    for s in scores {
        w.write_record([s.token.as_str(), &s.rank.to_string(), &s.s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn matrix(rows: &[(&str, [f64; 2])]) -> EmbeddingMatrix<f64> {
        EmbeddingMatrix::from_rows(
            rows.iter().map(|(t, _)| t.to_string()).collect(),
            rows.iter().flat_map(|(_, v)| *v).collect(),
            2,
        )
        .unwrap()
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(cosine(&[1.0f64, 1.0], &[1.0, 0.0]).unwrap(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(
            cosine(&[1.0f64, 1.0], &[1.0, 0.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-9
        );
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine(&[0.0f32, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
        assert!(matches!(cosine(&[1.0f32], &[1.0, 0.0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn group_association_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let m = matrix(&[("x", [1.0, 0.0]), ("y", [0.0, 1.0]), ("w", [h, h]), ("neg", [-1.0, 0.0])]);
        let g = WordGroup::new("A", ["x", "y"]).unwrap();
        let a = group_association(&m, "w", &g).unwrap();
        assert_abs_diff_eq!(a.score.s, h, epsilon = 1e-9);
        assert_eq!(a.resolved, 2);

        let self_group = WordGroup::new("A", ["w"]).unwrap();
        assert_abs_diff_eq!(group_association(&m, "w", &self_group).unwrap().score.s, 1.0, epsilon = 1e-12);

        let opposed = WordGroup::new("A", ["x", "neg"]).unwrap();
        assert_eq!(group_association(&m, "x", &opposed).unwrap().score.s, 0.0);
    }

    #[test]
    fn group_association_errors() {
        let m = matrix(&[("x", [1.0, 0.0])]);
        let g = WordGroup::new("A", ["x", "ghost"]).unwrap();
        assert!(matches!(group_association(&m, "nope", &g), Err(Error::MissingToken(_))));
        let dropped = group_association(&m, "x", &g).unwrap();
        assert_eq!(dropped.resolved, 1);
        let none = WordGroup::new("B", ["ghost"]).unwrap();
        assert!(matches!(group_association(&m, "x", &none), Err(Error::UnresolvedGroup(_))));
    }

    #[test]
    fn top_k_examples() {
        let m = matrix(&[("a", [1.0, 0.0]), ("b", [0.9, 0.1]), ("c", [0.0, 1.0])]);
        let g = WordGroup::new("A", ["a"]).unwrap();
        let r = top_k_associated(&m, &g, 2, &HashSet::new()).unwrap();
        let toks: Vec<_> = r.scores.iter().map(|s| s.token.as_str()).collect();
        assert_eq!(toks, ["a", "b"]);
        assert_abs_diff_eq!(r.scores[0].s, 1.0, epsilon = 1e-12);
        // 0.9 / sqrt(0.82)
        assert_abs_diff_eq!(r.scores[1].s, 0.99388373, epsilon = 1e-8);

        let ex: HashSet<String> = ["a".to_string()].into();
        let r = top_k_associated(&m, &g, 2, &ex).unwrap();
        let toks: Vec<_> = r.scores.iter().map(|s| s.token.as_str()).collect();
        assert_eq!(toks, ["b", "c"]);
        assert!(!r.truncated);

        let r = top_k_associated(&m, &g, 3, &HashSet::new()).unwrap();
        assert_eq!(r.scores.len(), 3);
        let r = top_k_associated(&m, &g, 3, &ex).unwrap();
        assert!(r.truncated);
        assert_eq!(r.scores.len(), 2);
    }

    #[test]
    fn ties_break_by_rank() {
        let m = matrix(&[("p", [0.0, 1.0]), ("q", [2.0, 0.0]), ("r", [1.0, 0.0])]);
        let g = WordGroup::new("A", ["r"]).unwrap();
        let r = top_k_associated(&m, &g, 3, &HashSet::new()).unwrap();
        let toks: Vec<_> = r.scores.iter().map(|s| s.token.as_str()).collect();
        assert_eq!(toks, ["q", "r", "p"]);
    }

    #[test]
    fn exclusions_cover_case_variants() {
        let m = matrix(&[("Teen", [1.0, 0.0]), ("teen", [1.0, 0.1]), ("TEEN", [0.0, 1.0]), ("other", [1.0, 1.0])]);
        let g = WordGroup::new("A", ["teen"]).unwrap();
        let ex = target_exclusions(&m, &g);
        assert!(ex.contains("Teen") && ex.contains("TEEN") && ex.contains("teen"));
        assert!(!ex.contains("other"));
    }
}
