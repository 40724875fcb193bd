//! Pearson correlation with a t-test, trait-rating alignment against
//! embedding associations, and code tallies over coded continuations.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::association::{mean_cosine, resolve_group};
use crate::config::WordGroup;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::protocol::ContinuationRecord;
use crate::scalar::Scalar;

/// Significance level used for the "n.s." label.
pub const ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Two-tailed.
    pub p: f64,
    pub n: usize,
}

impl Correlation {
    pub fn significant(&self) -> bool {
        self.p <= ALPHA
    }

    pub fn label(&self) -> &'static str {
        if self.significant() {
            "p <= .05"
        } else {
            "n.s."
        }
    }
}

impl fmt::Display for Correlation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rho = {:.3}, p = {:.3} ({}), n = {}", self.rho, self.p, self.label(), self.n)
    }
}

/// Two-tailed p for a sample correlation via t = rho * sqrt((n - 2) / (1 - rho^2)).
pub fn correlation_p_value(rho: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 pairs, got {n}")));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("correlation {rho} outside [-1, 1]")));
    }
    if rho.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((2.0 * dist.cdf(-t.abs())).min(1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in correlation input".into()));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation undefined: an input has zero variance".into()));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation {
        rho,
        p: correlation_p_value(rho, n)?,
        n,
    })
}

/// How ratings on the 1 (most similar) .. 5 (least similar) scale enter the
/// correlation. `Inverted` uses `6 - mean` so that a positive rho reads as
/// agreement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Raw,
    #[default]
    Inverted,
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Orientation::Raw),
            "inverted" => Ok(Orientation::Inverted),
            other => Err(Error::InvalidArgument(format!("unknown orientation `{other}` (raw or inverted)"))),
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Raw => "raw",
            Orientation::Inverted => "inverted",
        })
    }
}

/// Participants x traits, integer ratings 1..=5.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitRatingTable {
    pub traits: Vec<String>,
    pub participants: Vec<String>,
    /// Row per participant, column per trait.
    pub ratings: Vec<Vec<u8>>,
}

impl TraitRatingTable {
    /// Reads `participant,trait1,...` CSV. Every cell must be an integer 1..=5.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Config("ratings header needs a participant column and traits".into()));
        }
        let traits: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let distinct: HashSet<&String> = traits.iter().collect();
        if distinct.len() != traits.len() {
            return Err(Error::Config("ratings header repeats a trait".into()));
        }
        let mut participants = Vec::new();
        let mut ratings = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let line = i + 2;
            if row.len() != header.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} cells, found {}", header.len(), row.len()),
                });
            }
            let mut values = Vec::with_capacity(traits.len());
            for (cell, t) in row.iter().skip(1).zip(&traits) {
                let v: u8 = cell.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("rating `{cell}` for `{t}` is not an integer"),
                })?;
                if !(1..=5).contains(&v) {
                    return Err(Error::Parse {
                        line,
                        message: format!("rating {v} for `{t}` outside 1..5"),
                    });
                }
                values.push(v);
            }
            participants.push(row[0].to_string());
            ratings.push(values);
        }
        if participants.is_empty() {
            return Err(Error::Empty("ratings file has no participants".into()));
        }
        Ok(TraitRatingTable {
            traits,
            participants,
            ratings,
        })
    }

    pub fn mean_ratings(&self) -> Vec<f64> {
        let n = self.participants.len() as f64;
        (0..self.traits.len())
            .map(|j| self.ratings.iter().map(|r| r[j] as f64).sum::<f64>() / n)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraitRow {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub mean_rating: f64,
    /// Mean rating after orientation.
    pub score: f64,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub target: String,
    pub orientation: Orientation,
    pub correlation: Correlation,
    pub traits: Vec<TraitRow>,
    pub unresolved: Vec<String>,
}

/// Correlates per-trait mean ratings with each trait's mean cosine to the
/// target group. Traits missing from the vocabulary are listed and skipped.
pub fn trait_alignment<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    target: &WordGroup,
    ratings: &TraitRatingTable,
    orientation: Orientation,
) -> Result<AlignmentReport> {
    let group = resolve_group(matrix, target)?;
    let means = ratings.mean_ratings();
    let mut rows = Vec::new();
    let mut unresolved = Vec::new();
    for (t, &mean) in ratings.traits.iter().zip(&means) {
        match matrix.rank_of(t) {
            Some(r) if matrix.norm(r) > 0.0 => rows.push(TraitRow {
                trait_name: t.clone(),
                mean_rating: mean,
                score: match orientation {
                    Orientation::Raw => mean,
                    Orientation::Inverted => 6.0 - mean,
                },
                cosine: mean_cosine(matrix, r, &group.rows),
            }),
            _ => unresolved.push(t.clone()),
        }
    }
    if rows.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "only {} trait(s) resolve in the embedding; unresolved: {}",
            rows.len(),
            unresolved.join(", ")
        )));
    }
    if !unresolved.is_empty() {
        log::warn!("traits not in the embedding: {}", unresolved.join(", "));
    }
    let raw: Vec<f64> = rows.iter().map(|r| r.mean_rating).collect();
    let cos: Vec<f64> = rows.iter().map(|r| r.cosine).collect();
    // correlate the raw means and negate for inversion, so both
    // orientations share one p bit for bit
    let mut correlation = pearson(&raw, &cos)?;
    if orientation == Orientation::Inverted {
        correlation.rho = -correlation.rho;
    }
    Ok(AlignmentReport {
        target: target.name.clone(),
        orientation,
        correlation,
        traits: rows,
        unresolved,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeCount {
    pub count: usize,
    /// Percentage of the model's records.
    pub pct: f64,
    /// For `Parent/Child` codes with subcodes enabled, percentage of the
    /// records carrying the parent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pct_of_parent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeStats {
    pub model_id: String,
    pub total_records: usize,
    pub codes: BTreeMap<String, CodeCount>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TallyOptions {
    /// Treat `/` as a parent/child separator: a record carrying `P/x`
    /// also counts toward `P`, and child percentages are reported over
    /// the parent count.
    pub subcodes: bool,
}

pub fn tally_codes(records: &[ContinuationRecord]) -> Result<Vec<CodeStats>> {
    tally_codes_with(records, TallyOptions::default())
}

/// Per-model code counts. Each code counts at most once per record. Every
/// code seen in any model is reported for every model, zero included.
pub fn tally_codes_with(records: &[ContinuationRecord], options: TallyOptions) -> Result<Vec<CodeStats>> {
    let mut keys = HashSet::new();
    for r in records {
        if !keys.insert(r.key()) {
            return Err(Error::Integrity(format!(
                "duplicate record ({}, {}, {})",
                r.model_id, r.prompt_id, r.sample_index
            )));
        }
    }
    let record_codes = |r: &ContinuationRecord| -> BTreeSet<String> {
        let mut set: BTreeSet<String> = r.codes.iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
        if options.subcodes {
            let parents: Vec<String> = set
                .iter()
                .filter_map(|c| c.split_once('/').map(|(p, _)| p.trim().to_string()))
                .collect();
            set.extend(parents);
        }
        set
    };
    let mut all_codes = BTreeSet::new();
    let mut per_model: BTreeMap<&str, (usize, BTreeMap<String, usize>)> = BTreeMap::new();
    for r in records {
        let entry = per_model.entry(r.model_id.as_str()).or_default();
        entry.0 += 1;
        for c in record_codes(r) {
            all_codes.insert(c.clone());
            *entry.1.entry(c).or_insert(0) += 1;
        }
    }
    Ok(per_model
        .into_iter()
        .map(|(model, (total, counts))| {
            let codes = all_codes
                .iter()
                .map(|c| {
                    let count = counts.get(c).copied().unwrap_or(0);
                    let pct_of_parent = if options.subcodes {
                        c.split_once('/').map(|(p, _)| {
                            let parent = counts.get(p.trim()).copied().unwrap_or(0);
                            if parent == 0 {
                                0.0
                            } else {
                                100.0 * count as f64 / parent as f64
                            }
                        })
                    } else {
                        None
                    };
                    (
                        c.clone(),
                        CodeCount {
                            count,
                            pct: 100.0 * count as f64 / total as f64,
                            pct_of_parent,
                        },
                    )
                })
                .collect();
            CodeStats {
                model_id: model.to_string(),
                total_records: total,
                codes,
            }
        })
        .collect())
}

/// Writes `code,model_id,count,total,pct[,pct_of_parent]` rows.
pub fn write_tally_csv<W: std::io::Write>(stats: &[CodeStats], subcodes: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["code", "model_id", "count", "total", "pct"];
    if subcodes {
        header.push("pct_of_parent");
    }
    w.write_record(&header)?;
    let codes: BTreeSet<&String> = stats.iter().flat_map(|s| s.codes.keys()).collect();
    for code in codes {
        for s in stats {
            let c = &s.codes[code];
            let mut row = vec![
                code.clone(),
                s.model_id.clone(),
                c.count.to_string(),
                s.total_records.to_string(),
                format!("{:.4}", c.pct),
            ];
            if subcodes {
                row.push(c.pct_of_parent.map(|v| format!("{v:.4}")).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{english_prompts, template_corpus, DecodeParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_lines() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().rho, 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap().rho, -1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().p, 0.0);
        assert!(matches!(pearson(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), Err(Error::Degenerate(_))));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn weak_correlation_is_not_significant() {
        let p = correlation_p_value(0.02, 20).unwrap();
        assert_abs_diff_eq!(p, 0.9333, epsilon = 1e-3);
        let c = Correlation { rho: 0.02, p, n: 20 };
        assert_eq!(c.label(), "n.s.");
    }

    #[test]
    fn symmetric_and_affine() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let y = [2.0, 3.0, 1.0, 9.0, 4.0, 4.0];
        let a = pearson(&x, &y).unwrap();
        let b = pearson(&y, &x).unwrap();
        assert_eq!(a.rho, b.rho);
        let scaled: Vec<f64> = x.iter().map(|v| 3.0 * v + 2.0).collect();
        assert_abs_diff_eq!(pearson(&scaled, &y).unwrap().rho, a.rho, epsilon = 1e-12);
        let flipped: Vec<f64> = x.iter().map(|v| -2.0 * v).collect();
        assert_abs_diff_eq!(pearson(&flipped, &y).unwrap().rho, -a.rho, epsilon = 1e-12);
    }

    #[test]
    fn ratings_csv() {
        let t = TraitRatingTable::from_csv("participant,kind,loud,shy\nE1,1,5,3\nE2,3,5,1\n".as_bytes()).unwrap();
        assert_eq!(t.traits, ["kind", "loud", "shy"]);
        assert_eq!(t.mean_ratings(), [2.0, 5.0, 2.0]);
        assert!(TraitRatingTable::from_csv("participant,kind\nE1,6\n".as_bytes()).is_err());
        assert!(TraitRatingTable::from_csv("participant,kind\nE1,\n".as_bytes()).is_err());
        assert!(TraitRatingTable::from_csv("participant,kind\nE1,2.5\n".as_bytes()).is_err());
        assert!(TraitRatingTable::from_csv("participant,kind\n".as_bytes()).is_err());
    }

    #[test]
    fn alignment_orientation() {
        // target is e0; trait i has cosine c_i to it
        let cos = [0.9f64, 0.5, 0.1, -0.3];
        let mut tokens = vec!["teen".to_string()];
        let mut data = vec![1.0f64, 0.0];
        for (i, c) in cos.iter().enumerate() {
            tokens.push(format!("t{i}"));
            data.extend([*c, (1.0 - c * c).sqrt()]);
        }
        let m = EmbeddingMatrix::from_rows(tokens, data, 2).unwrap();
        let g = WordGroup::new("Teen", ["teen"]).unwrap();
        let csv = "participant,t0,t1,t2,t3,absent\nA,1,2,3,4,1\nB,2,2,3,4,1\n";
        let table = TraitRatingTable::from_csv(csv.as_bytes()).unwrap();
        let inv = trait_alignment(&m, &g, &table, Orientation::Inverted).unwrap();
        let raw = trait_alignment(&m, &g, &table, Orientation::Raw).unwrap();
        assert_eq!(inv.unresolved, ["absent"]);
        assert_eq!(inv.correlation.rho, -raw.correlation.rho);
        assert_eq!(inv.correlation.p, raw.correlation.p);
        assert!(inv.correlation.rho > 0.9);
        assert_eq!(inv.traits[0].score, 6.0 - 1.5);
    }

    #[test]
    fn tally_contract() {
        let prompts = english_prompts();
        let mut recs = template_corpus("m", &prompts, &DecodeParams::default());
        for r in recs.iter_mut().take(68) {
            r.codes.push("Social Problems".into());
        }
        recs[0].codes.extend(["School".to_string(), "Family".to_string(), "School".to_string()]);
        let stats = tally_codes(&recs).unwrap();
        assert_eq!(stats[0].total_records, 225);
        let sp = &stats[0].codes["Social Problems"];
        assert_eq!(sp.count, 68);
        assert_abs_diff_eq!(sp.pct, 30.2222, epsilon = 1e-4);
        assert_eq!(stats[0].codes["School"].count, 1);
        assert_eq!(stats[0].codes["Family"].count, 1);

        recs.reverse();
        assert_eq!(tally_codes(&recs).unwrap(), stats);

        let dup = recs[0].clone();
        recs.push(dup);
        assert!(matches!(tally_codes(&recs), Err(Error::Integrity(_))));
    }

    #[test]
    fn zero_counts_and_subcodes() {
        let prompts = english_prompts();
        let d = DecodeParams::default();
        let mut recs = template_corpus("a", &prompts[..2], &d);
        recs.extend(template_corpus("b", &prompts[..2], &d));
        recs[0].codes.push("Social Problems/Violence".into());
        recs[1].codes.push("Social Problems".into());
        let stats = tally_codes_with(&recs, TallyOptions { subcodes: true }).unwrap();
        let a = &stats[0];
        assert_eq!(a.codes["Social Problems"].count, 2);
        assert_eq!(a.codes["Social Problems/Violence"].pct_of_parent, Some(50.0));
        let b = &stats[1];
        assert_eq!(b.codes["Social Problems"].count, 0);
        assert_eq!(b.codes["Social Problems"].pct, 0.0);
        let mut out = Vec::new();
        write_tally_csv(&stats, true, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("code,model_id,count,total,pct,pct_of_parent\n"));
        assert!(text.contains("Social Problems/Violence,a,1,30,3.3333,50.0000"));
    }
}
