//! Word groups, thresholds and run parameters.
//!
//! Configs are TOML:
//!
//! ```toml
//! [target]
//! name = "Teenager"
//! tokens = ["teenager", "teenagers", ...]
//!
//! [[reference]]
//! preset = "children"        # built-in group, or give name + tokens
//!
//! [thresholds]
//! d_min = 0.8
//! p_max = 0.05
//!
//! [run]
//! top_k = 1000
//! select = 1000
//! k_min = 5
//! k_max = 10
//! seed = 0
//! permutation_mode = "exact"  # or "sampled"
//! n_samples = 10000
//! exclude_target = true
//! ```

use std::collections::HashSet;
use std::io::Read;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::nfc;
use crate::error::{Error, Result};

/// Minimum group size for a single-category WEAT.
pub const SCWEAT_MIN_GROUP: usize = 8;
/// Largest pooled sample for which exact enumeration is attempted.
pub const EXACT_MAX_POOLED: usize = 30;

pub const DEFAULT_D_MIN: f64 = 0.8;
pub const DEFAULT_P_MAX: f64 = 0.05;
pub const DEFAULT_TOP_K: usize = 1000;
pub const DEFAULT_SELECT: usize = 1000;
pub const DEFAULT_K_RANGE: (usize, usize) = (5, 10);
pub const DEFAULT_N_SAMPLES: usize = 10_000;

/// Named set of tokens standing for one concept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordGroup {
    pub name: String,
    pub tokens: Vec<String>,
}

impl WordGroup {
    pub fn new<S: Into<String>>(name: S, tokens: impl IntoIterator<Item = impl AsRef<str>>) -> Result<Self> {
        let name = name.into();
        let tokens: Vec<String> = tokens.into_iter().map(|t| nfc(t.as_ref())).collect();
        if tokens.is_empty() {
            return Err(Error::Config(format!("group `{name}` has no tokens")));
        }
        let mut seen = HashSet::new();
        for t in &tokens {
            if t.is_empty() {
                return Err(Error::Config(format!("group `{name}` contains an empty token")));
            }
            if !seen.insert(t.as_str()) {
                return Err(Error::Config(format!("group `{name}` repeats token `{t}`")));
            }
        }
        Ok(WordGroup { name, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn teenager() -> Self {
        Self::preset("teenager").expect("built-in")
    }

    pub fn children() -> Self {
        Self::preset("children").expect("built-in")
    }

    pub fn adults() -> Self {
        Self::preset("adults").expect("built-in")
    }

    pub fn older_adults() -> Self {
        Self::preset("older-adults").expect("built-in")
    }

    /// Built-in English age groups by preset key.
    pub fn preset(key: &str) -> Result<Self> {
        let (name, tokens): (&str, [&str; 8]) = match key {
            "teenager" => (
                "Teenager",
                ["teenager", "teenagers", "teen", "teens", "teenage", "teenaged", "adolescent", "adolescence"],
            ),
            "children" => (
                "Children",
                ["child", "children", "childlike", "childhood", "kid", "kids", "schoolchild", "schoolchildren"],
            ),
            "adults" => (
                "Adults",
                ["adult", "adults", "adulthood", "middle-age", "middle-aged", "grownup", "grown-up", "grownups"],
            ),
            "older-adults" => (
                "Older Adults",
                ["aged", "aging", "older", "old-age", "elder", "elders", "elderly", "retiree"],
            ),
            other => return Err(Error::UnknownGroup(other.to_string())),
        };
        WordGroup::new(name, tokens)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PermutationMode {
    Exact,
    Sampled { n_samples: usize },
}

impl std::fmt::Display for PermutationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PermutationMode::Exact => f.write_str("exact"),
            PermutationMode::Sampled { n_samples } => write!(f, "sampled({n_samples})"),
        }
    }
}

/// Validated audit parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub target: WordGroup,
    pub references: Vec<WordGroup>,
    pub d_min: f64,
    pub p_max: f64,
    /// Length of the "most associated" list.
    pub top_k: usize,
    /// How many of the uniquely associated words to keep, by frequency.
    pub select: usize,
    pub k_range: (usize, usize),
    pub seed: u64,
    pub permutation_mode: PermutationMode,
    /// Drop the target tokens (and their case variants) from association scans.
    pub exclude_target: bool,
}

impl Default for AuditConfig {
    /// The English age-group audit: Teenager against Children, Adults and
    /// Older Adults.
    fn default() -> Self {
        AuditConfig {
            target: WordGroup::teenager(),
            references: vec![WordGroup::children(), WordGroup::adults(), WordGroup::older_adults()],
            d_min: DEFAULT_D_MIN,
            p_max: DEFAULT_P_MAX,
            top_k: DEFAULT_TOP_K,
            select: DEFAULT_SELECT,
            k_range: DEFAULT_K_RANGE,
            seed: 0,
            permutation_mode: PermutationMode::Exact,
            exclude_target: true,
        }
    }
}

impl AuditConfig {
    /// Checks every invariant. `load_config` calls this; programmatic
    /// builders may call it themselves.
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // negations also reject NaN
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0) {
            return Err(Error::Config(format!("d_min must be > 0, got {}", self.d_min)));
        }
        if !(self.p_max > 0.0 && self.p_max < 1.0) {
            return Err(Error::Config(format!("p_max must lie in (0, 1), got {}", self.p_max)));
        }
        if self.top_k == 0 || self.select == 0 {
            return Err(Error::Config("top_k and select must be positive".into()));
        }
        let (k_min, k_max) = self.k_range;
        if k_min < 2 || k_min > k_max {
            return Err(Error::Config(format!("k range [{k_min}, {k_max}] must be non-empty with min >= 2")));
        }
        if let PermutationMode::Sampled { n_samples: 0 } = self.permutation_mode {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        for g in std::iter::once(&self.target).chain(&self.references) {
            // re-run the group invariants for hand-built values
            WordGroup::new(g.name.clone(), &g.tokens)?;
        }
        Ok(())
    }

    /// The stricter checks applied when the config will drive SC-WEAT runs:
    /// every group meets the minimum size, and exact mode stays enumerable.
    pub fn validate_for_scweat(&self) -> Result<()> {
        self.validate()?;
        if self.references.is_empty() {
            return Err(Error::Config("SC-WEAT needs at least one [[reference]] group".into()));
        }
        for g in std::iter::once(&self.target).chain(&self.references) {
            if g.len() < SCWEAT_MIN_GROUP {
                return Err(Error::Config(format!(
                    "group `{}` has {} tokens; SC-WEAT needs at least {SCWEAT_MIN_GROUP}",
                    g.name,
                    g.len()
                )));
            }
        }
        if self.permutation_mode == PermutationMode::Exact {
            for b in &self.references {
                if b.len() != self.target.len() {
                    return Err(Error::Config(format!(
                        "exact permutation mode needs equal group sizes; `{}` has {} tokens, `{}` has {}",
                        self.target.name,
                        self.target.len(),
                        b.name,
                        b.len()
                    )));
                }
                if b.len() + self.target.len() > EXACT_MAX_POOLED {
                    return Err(Error::Config(format!(
                        "exact permutation over {} cosines is too large; use permutation_mode = \"sampled\"",
                        b.len() + self.target.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form; key order in the source file
    /// does not matter.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    /// Renders the config in the TOML schema accepted by [`load_config`].
    pub fn to_toml(&self) -> String {
        let (mode, n_samples) = match self.permutation_mode {
            PermutationMode::Exact => ("exact", None),
            PermutationMode::Sampled { n_samples } => ("sampled", Some(n_samples)),
        };
        let raw = RawConfig {
            target: Some(RawGroup::from(&self.target)),
            reference: self.references.iter().map(RawGroup::from).collect(),
            thresholds: Some(RawThresholds {
                d_min: Some(self.d_min),
                p_max: Some(self.p_max),
            }),
            run: Some(RawRun {
                top_k: Some(self.top_k as i64),
                select: Some(self.select as i64),
                k_min: Some(self.k_range.0 as i64),
                k_max: Some(self.k_range.1 as i64),
                seed: Some(self.seed),
                permutation_mode: Some(mode.to_string()),
                n_samples: n_samples.map(|n| n as i64),
                exclude_target: Some(self.exclude_target),
            }),
        };
        toml::to_string(&raw).expect("config renders as TOML")
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<RawGroup>,
    #[serde(default)]
    reference: Vec<RawGroup>,
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<RawThresholds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<RawRun>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
}

impl From<&WordGroup> for RawGroup {
    fn from(g: &WordGroup) -> Self {
        RawGroup {
            preset: None,
            name: Some(g.name.clone()),
            tokens: Some(g.tokens.clone()),
        }
    }
}

impl RawGroup {
    fn resolve(self, role: &str) -> Result<WordGroup> {
        match (self.preset, self.tokens) {
            (Some(_), Some(_)) => Err(Error::Config(format!("{role}: give either `preset` or `tokens`, not both"))),
            (Some(key), None) => {
                let mut g = WordGroup::preset(&key)?;
                if let Some(name) = self.name {
                    g.name = name;
                }
                Ok(g)
            }
            (None, Some(tokens)) => {
                let name = self.name.ok_or_else(|| Error::Config(format!("{role}: missing `name`")))?;
                WordGroup::new(name, tokens)
            }
            (None, None) => Err(Error::Config(format!("{role}: missing `tokens`"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThresholds {
    d_min: Option<f64>,
    p_max: Option<f64>,
}

// integers are read as i64 so negative values give a clear message instead
// of a serde type error
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    top_k: Option<i64>,
    select: Option<i64>,
    k_min: Option<i64>,
    k_max: Option<i64>,
    seed: Option<u64>,
    permutation_mode: Option<String>,
    n_samples: Option<i64>,
    exclude_target: Option<bool>,
}

fn positive(field: &str, v: Option<i64>, default: usize) -> Result<usize> {
    match v {
        None => Ok(default),
        Some(x) if x > 0 => Ok(x as usize),
        Some(x) => Err(Error::Config(format!("`{field}` must be a positive integer, got {x}"))),
    }
}

/// Parses and fully validates a TOML config. Missing optional fields take
/// their defaults. When any `[[reference]]` group is present, the SC-WEAT
/// constraints of [`AuditConfig::validate_for_scweat`] also apply.
pub fn load_config<R: Read>(mut stream: R) -> Result<AuditConfig> {
    let mut text = String::new();
    stream
        .read_to_string(&mut text)
        .map_err(|e| Error::Config(format!("config is not readable UTF-8 text: {e}")))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<AuditConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let target = raw
        .target
        .ok_or_else(|| Error::Config("missing [target] table".into()))?
        .resolve("[target]")?;
    let references = raw
        .reference
        .into_iter()
        .enumerate()
        .map(|(i, g)| g.resolve(&format!("[[reference]] #{}", i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let thresholds = raw.thresholds.unwrap_or(RawThresholds { d_min: None, p_max: None });
    let run = raw.run.unwrap_or(RawRun {
        top_k: None,
        select: None,
        k_min: None,
        k_max: None,
        seed: None,
        permutation_mode: None,
        n_samples: None,
        exclude_target: None,
    });
    let permutation_mode = match run.permutation_mode.as_deref() {
        None | Some("exact") => PermutationMode::Exact,
        Some("sampled") => PermutationMode::Sampled {
            n_samples: positive("n_samples", run.n_samples, DEFAULT_N_SAMPLES)?,
        },
        Some(other) => {
            return Err(Error::Config(format!(
                "permutation_mode must be \"exact\" or \"sampled\", got \"{other}\""
            )))
        }
    };
    let config = AuditConfig {
        target,
        references,
        d_min: thresholds.d_min.unwrap_or(DEFAULT_D_MIN),
        p_max: thresholds.p_max.unwrap_or(DEFAULT_P_MAX),
        top_k: positive("top_k", run.top_k, DEFAULT_TOP_K)?,
        select: positive("select", run.select, DEFAULT_SELECT)?,
        k_range: (
            positive("k_min", run.k_min, DEFAULT_K_RANGE.0)?,
            positive("k_max", run.k_max, DEFAULT_K_RANGE.1)?,
        ),
        seed: run.seed.unwrap_or(0),
        permutation_mode,
        exclude_target: run.exclude_target.unwrap_or(true),
    };
    if config.references.is_empty() {
        config.validate()?;
    } else {
        config.validate_for_scweat()?;
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEEN: &str = r#"
[target]
preset = "teenager"
"#;

    #[test]
    fn defaults_apply() {
        let c = parse_config(TEEN).unwrap();
        assert_eq!(c.d_min, 0.8);
        assert_eq!(c.p_max, 0.05);
        assert_eq!(c.top_k, 1000);
        assert_eq!(c.select, 1000);
        assert_eq!(c.k_range, (5, 10));
        assert_eq!(c.permutation_mode, PermutationMode::Exact);
        assert!(c.exclude_target);
    }

    #[test]
    fn english_defaults_are_the_four_age_groups() {
        let c = AuditConfig::default();
        assert_eq!(c.target.tokens.len(), 8);
        assert_eq!(c.target.tokens[0], "teenager");
        assert_eq!(c.target.tokens[7], "adolescence");
        let names: Vec<_> = c.references.iter().map(|g| g.name.as_str()).collect();
        assert_eq!(names, ["Children", "Adults", "Older Adults"]);
        assert!(c.references.iter().all(|g| g.len() == 8));
        assert_eq!(c.references[1].tokens[3], "middle-age");
        assert_eq!(c.references[2].tokens[7], "retiree");
        c.validate_for_scweat().unwrap();
    }

    #[test]
    fn seven_token_reference_rejected_in_exact_mode() {
        let text = r#"
[target]
preset = "teenager"
[[reference]]
name = "Short"
tokens = ["a", "b", "c", "d", "e", "f", "g"]
[run]
permutation_mode = "exact"
"#;
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("at least 8"), "{err}");
    }

    #[test]
    fn unknown_preset_is_unknown_group() {
        let text = "[target]\npreset = \"toddlers\"\n";
        assert!(matches!(parse_config(text), Err(Error::UnknownGroup(g)) if g == "toddlers"));
    }

    #[test]
    fn malformed_numbers_rejected() {
        for bad in [
            "[thresholds]\nd_min = \"big\"\n",
            "[run]\ntop_k = -3\n",
            "[run]\ntop_k = 1.5\n",
            "[thresholds]\np_max = 1.5\n",
            "[thresholds]\nd_min = 0.0\n",
            "[run]\nk_min = 1\n",
            "[run]\nk_min = 7\nk_max = 6\n",
            "[run]\npermutation_mode = \"bootstrap\"\n",
        ] {
            let text = format!("{TEEN}{bad}");
            assert!(parse_config(&text).is_err(), "accepted: {bad}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse_config(&format!("{TEEN}[run]\ntopk = 5\n")).is_err());
    }

    #[test]
    fn key_order_does_not_matter() {
        let a = r#"
[run]
seed = 7
top_k = 20
[target]
name = "T"
tokens = ["x", "y"]
"#;
        let b = r#"
[target]
tokens = ["x", "y"]
name = "T"
[run]
top_k = 20
seed = 7
"#;
        let (ca, cb) = (parse_config(a).unwrap(), parse_config(b).unwrap());
        assert_eq!(ca, cb);
        assert_eq!(ca.config_hash(), cb.config_hash());
    }

    #[test]
    fn sampled_mode_reads_n_samples() {
        let c = parse_config(&format!("{TEEN}[run]\npermutation_mode = \"sampled\"\nn_samples = 500\n")).unwrap();
        assert_eq!(c.permutation_mode, PermutationMode::Sampled { n_samples: 500 });
    }

    #[test]
    fn toml_rendering_round_trips() {
        let c = AuditConfig {
            seed: 42,
            permutation_mode: PermutationMode::Sampled { n_samples: 99 },
            ..AuditConfig::default()
        };
        assert_eq!(parse_config(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn duplicate_tokens_after_nfc_rejected() {
        assert!(WordGroup::new("g", ["\u{e9}", "e\u{301}"]).is_err());
    }
}
