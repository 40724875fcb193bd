//! Prompt sets, decoding profiles and the continuation-record format, plus
//! conformance checks for generated corpora.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The shipped English prompt file.
pub const PROMPTS_EN_JSON: &str = include_str!("../data/prompts_en.json");
/// SHA-256 of [`PROMPTS_EN_JSON`].
pub const PROMPTS_EN_SHA256: &str = "093a215c3efc0a9b6aef5afbcdb898a711fcff7f1eff6e0e787f87ffb7da7bd3";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    Behaviors,
    Motivations,
    Relationships,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Behaviors => "Behaviors",
            Domain::Motivations => "Motivations",
            Domain::Relationships => "Relationships",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub prompt_id: String,
    pub domain: Domain,
    pub text: String,
}

/// Reads a JSON array of prompts. Ids must be unique and texts non-empty.
pub fn load_prompts<R: Read>(reader: R) -> Result<Vec<PromptSpec>> {
    let prompts: Vec<PromptSpec> = serde_json::from_reader(reader)?;
    let mut seen = BTreeSet::new();
    for p in &prompts {
        if p.text.trim().is_empty() {
            return Err(Error::Config(format!("prompt `{}` has empty text", p.prompt_id)));
        }
        if !seen.insert(p.prompt_id.as_str()) {
            return Err(Error::Config(format!("duplicate prompt id `{}`", p.prompt_id)));
        }
    }
    if prompts.is_empty() {
        return Err(Error::Empty("prompt file has no prompts".into()));
    }
    Ok(prompts)
}

/// The 15 English teenager prompts, 5 per domain.
pub fn english_prompts() -> Vec<PromptSpec> {
    load_prompts(PROMPTS_EN_JSON.as_bytes()).expect("shipped prompt file parses")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSummary {
    pub total: usize,
    pub per_domain: BTreeMap<Domain, usize>,
}

pub fn summarize_prompts(prompts: &[PromptSpec]) -> PromptSummary {
    let mut per_domain = BTreeMap::new();
    for p in prompts {
        *per_domain.entry(p.domain).or_insert(0) += 1;
    }
    PromptSummary {
        total: prompts.len(),
        per_domain,
    }
}

/// Sampling settings recorded with every continuation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub top_k: u32,
    pub max_new_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_new_tokens: Option<u32>,
    pub samples_per_prompt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub const PROFILE_NAMES: [&str; 3] = ["gpt2-xl", "llama2-7b", "distilgpt2-ne"];

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            temperature: 1.0,
            top_k: 50,
            max_new_tokens: 50,
            min_new_tokens: None,
            samples_per_prompt: 15,
            seed: None,
        }
    }
}

impl DecodeParams {
    /// Named profiles. `llama2-7b` adds a 25-token minimum.
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "gpt2-xl" | "distilgpt2-ne" => Ok(DecodeParams::default()),
            "llama2-7b" => Ok(DecodeParams {
                min_new_tokens: Some(25),
                ..DecodeParams::default()
            }),
            other => Err(Error::Config(format!(
                "unknown decode profile `{other}` (expected one of {} or a JSON file)",
                PROFILE_NAMES.join(", ")
            ))),
        }
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let p: DecodeParams = serde_json::from_reader(reader)?;
        if !(p.temperature > 0.0 && p.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", p.temperature)));
        }
        if p.samples_per_prompt == 0 {
            return Err(Error::Config("samples_per_prompt must be positive".into()));
        }
        if let Some(min) = p.min_new_tokens {
            if min > p.max_new_tokens {
                return Err(Error::Config(format!(
                    "min_new_tokens {min} exceeds max_new_tokens {}",
                    p.max_new_tokens
                )));
            }
        }
        Ok(p)
    }

    /// Differences from `expected`, seed excluded.
    fn differences(&self, expected: &DecodeParams) -> Vec<(&'static str, String, String)> {
        let mut out = Vec::new();
        if self.temperature != expected.temperature {
            out.push(("temperature", self.temperature.to_string(), expected.temperature.to_string()));
        }
        if self.top_k != expected.top_k {
            out.push(("top_k", self.top_k.to_string(), expected.top_k.to_string()));
        }
        if self.max_new_tokens != expected.max_new_tokens {
            out.push(("max_new_tokens", self.max_new_tokens.to_string(), expected.max_new_tokens.to_string()));
        }
        if self.min_new_tokens != expected.min_new_tokens {
            let show = |v: Option<u32>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
            out.push(("min_new_tokens", show(self.min_new_tokens), show(expected.min_new_tokens)));
        }
        if self.samples_per_prompt != expected.samples_per_prompt {
            out.push((
                "samples_per_prompt",
                self.samples_per_prompt.to_string(),
                expected.samples_per_prompt.to_string(),
            ));
        }
        out
    }
}

/// One sampled continuation. `codes` stays empty until human coding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationRecord {
    pub model_id: String,
    pub prompt_id: String,
    pub sample_index: i64,
    pub continuation: String,
    pub decode: DecodeParams,
    #[serde(default)]
    pub codes: Vec<String>,
}

impl ContinuationRecord {
    pub fn key(&self) -> (&str, &str, i64) {
        (&self.model_id, &self.prompt_id, self.sample_index)
    }
}

/// Reads JSONL records. Blank lines are skipped; a malformed line fails
/// with its 1-based line number.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<ContinuationRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Adds codes from a `model_id,prompt_id,sample_index,code` CSV onto the
/// matching records. Returns the number of codes added.
pub fn merge_codes_sidecar<R: Read>(records: &mut [ContinuationRecord], reader: R) -> Result<usize> {
    let mut index: HashMap<(String, String, i64), usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        index.insert((r.model_id.clone(), r.prompt_id.clone(), r.sample_index), i);
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["model_id", "prompt_id", "sample_index", "code"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Config(format!(
            "codes sidecar header must be `{}`",
            expected.join(",")
        )));
    }
    let mut added = 0;
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let sample: i64 = row[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid sample_index `{}`", &row[2]),
        })?;
        let key = (row[0].to_string(), row[1].to_string(), sample);
        let Some(&at) = index.get(&key) else {
            return Err(Error::Integrity(format!(
                "codes sidecar line {line}: no record ({}, {}, {})",
                key.0, key.1, key.2
            )));
        };
        let code = row[3].to_string();
        if code.is_empty() {
            continue;
        }
        if !records[at].codes.contains(&code) {
            records[at].codes.push(code);
            added += 1;
        }
    }
    Ok(added)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationKind {
    Coverage,
    Samples,
    UnknownPrompt,
    SampleIndex,
    Duplicate,
    Parameter,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Deviation {
    pub kind: DeviationKind,
    pub model_id: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub records: usize,
    pub prompts_covered: usize,
    pub expected_records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: usize,
    pub prompts: PromptSummary,
    pub profile: DecodeParams,
    pub models: Vec<ModelSummary>,
    pub deviations: Vec<Deviation>,
}

impl ValidationReport {
    pub fn is_conforming(&self) -> bool {
        self.deviations.is_empty()
    }

    pub fn parameter_deviations(&self) -> usize {
        self.deviations.iter().filter(|d| d.kind == DeviationKind::Parameter).count()
    }
}

/// Streams a JSONL corpus and checks it against `profile` and `prompts`.
pub fn validate_corpus<R: BufRead>(
    reader: R,
    profile: &DecodeParams,
    prompts: &[PromptSpec],
) -> Result<ValidationReport> {
    Ok(validate_records(&read_corpus(reader)?, profile, prompts))
}

/// Lists every deviation; never rejects. The result does not depend on
/// record order.
pub fn validate_records(
    records: &[ContinuationRecord],
    profile: &DecodeParams,
    prompts: &[PromptSpec],
) -> ValidationReport {
    let known: BTreeSet<&str> = prompts.iter().map(|p| p.prompt_id.as_str()).collect();
    let per_prompt = profile.samples_per_prompt as usize;
    let mut by_model: BTreeMap<&str, Vec<&ContinuationRecord>> = BTreeMap::new();
    for r in records {
        by_model.entry(r.model_id.as_str()).or_default().push(r);
    }
    let mut deviations = Vec::new();
    let mut models = Vec::new();
    for (&model, recs) in &by_model {
        let mut dev = |kind, message: String| {
            deviations.push(Deviation {
                kind,
                model_id: model.to_string(),
                message,
            })
        };
        let mut seen: BTreeMap<(&str, i64), usize> = BTreeMap::new();
        let mut samples: BTreeMap<&str, BTreeSet<i64>> = BTreeMap::new();
        let mut unknown: BTreeMap<&str, usize> = BTreeMap::new();
        let mut bad_index: BTreeMap<i64, usize> = BTreeMap::new();
        let mut params: BTreeMap<(&str, String, String), usize> = BTreeMap::new();
        for r in recs {
            *seen.entry((r.prompt_id.as_str(), r.sample_index)).or_insert(0) += 1;
            if !known.contains(r.prompt_id.as_str()) {
                *unknown.entry(r.prompt_id.as_str()).or_insert(0) += 1;
            } else {
                samples.entry(r.prompt_id.as_str()).or_default().insert(r.sample_index);
            }
            if r.sample_index < 0 || r.sample_index >= per_prompt as i64 {
                *bad_index.entry(r.sample_index).or_insert(0) += 1;
            }
            for (name, got, want) in r.decode.differences(profile) {
                *params.entry((name, got, want)).or_insert(0) += 1;
            }
        }
        let covered = known.iter().filter(|p| samples.contains_key(*p)).count();
        if covered < known.len() {
            let missing: Vec<&str> = known.iter().copied().filter(|p| !samples.contains_key(p)).collect();
            dev(
                DeviationKind::Coverage,
                format!("prompt coverage {covered}/{} (missing {})", known.len(), missing.join(", ")),
            );
        }
        for (prompt, idx) in &samples {
            let valid = idx.iter().filter(|&&i| i >= 0 && i < per_prompt as i64).count();
            if valid != per_prompt {
                dev(DeviationKind::Samples, format!("prompt {prompt}: {valid}/{per_prompt} samples"));
            }
        }
        for (prompt, n) in unknown {
            dev(DeviationKind::UnknownPrompt, format!("unknown prompt id `{prompt}` in {n} record(s)"));
        }
        for (i, n) in bad_index {
            dev(
                DeviationKind::SampleIndex,
                format!("sample_index {i} outside [0, {per_prompt}) in {n} record(s)"),
            );
        }
        for ((prompt, i), n) in &seen {
            if *n > 1 {
                dev(
                    DeviationKind::Duplicate,
                    format!("({model}, {prompt}, {i}) appears {n} times"),
                );
            }
        }
        for ((name, got, want), n) in params {
            dev(
                DeviationKind::Parameter,
                format!("{name} {got} (expected {want}) in {n} record(s)"),
            );
        }
        models.push(ModelSummary {
            model_id: model.to_string(),
            records: recs.len(),
            prompts_covered: covered,
            expected_records: known.len() * per_prompt,
        });
    }
    deviations.sort();
    ValidationReport {
        records: records.len(),
        prompts: summarize_prompts(prompts),
        profile: profile.clone(),
        models,
        deviations,
    }
}

/// A full corpus for `model_id`: every prompt times `samples_per_prompt`,
/// with placeholder text.
pub fn template_corpus(model_id: &str, prompts: &[PromptSpec], decode: &DecodeParams) -> Vec<ContinuationRecord> {
    let mut out = Vec::new();
    for p in prompts {
        for i in 0..decode.samples_per_prompt as i64 {
            out.push(ContinuationRecord {
                model_id: model_id.to_string(),
                prompt_id: p.prompt_id.clone(),
                sample_index: i,
                continuation: format!("{} [{i}]", p.text),
                decode: decode.clone(),
                codes: Vec::new(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    #[test]
    fn shipped_prompts() {
        let p = english_prompts();
        let s = summarize_prompts(&p);
        assert_eq!(s.total, 15);
        assert!(s.per_domain.values().all(|&n| n == 5));
        assert_eq!(p[0].text, "At school, the teenager");
        assert_eq!(p[14].text, "With their romantic partner, the teenager");
        let digest = crate::config::hex(&Sha256::digest(PROMPTS_EN_JSON.as_bytes()));
        assert_eq!(digest, PROMPTS_EN_SHA256);
    }

    #[test]
    fn profiles() {
        let g = DecodeParams::profile("gpt2-xl").unwrap();
        assert_eq!((g.temperature, g.top_k, g.max_new_tokens, g.min_new_tokens), (1.0, 50, 50, None));
        assert_eq!(g.samples_per_prompt, 15);
        assert_eq!(DecodeParams::profile("llama2-7b").unwrap().min_new_tokens, Some(25));
        assert!(DecodeParams::profile("gpt-4").is_err());
        let custom = r#"{"temperature":0.7,"top_k":40,"max_new_tokens":30,"samples_per_prompt":5}"#;
        assert_eq!(DecodeParams::from_json(custom.as_bytes()).unwrap().top_k, 40);
        assert!(DecodeParams::from_json(r#"{"temperature":1}"#.as_bytes()).is_err());
    }

    fn jsonl(records: &[ContinuationRecord]) -> String {
        records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
    }

    #[test]
    fn full_corpus_conforms() {
        let prompts = english_prompts();
        let profile = DecodeParams::profile("gpt2-xl").unwrap();
        let recs = template_corpus("gpt2-xl", &prompts, &profile);
        let report = validate_corpus(jsonl(&recs).as_bytes(), &profile, &prompts).unwrap();
        assert_eq!(report.records, 225);
        assert_eq!(report.models[0].records, 225);
        assert!(report.is_conforming(), "{:?}", report.deviations);
    }

    #[test]
    fn missing_prompt_and_bad_temperature() {
        let prompts = english_prompts();
        let profile = DecodeParams::profile("gpt2-xl").unwrap();
        let mut recs = template_corpus("m", &prompts, &profile);
        recs.retain(|r| r.prompt_id != "R5");
        recs[3].decode.temperature = 0.7;
        let report = validate_records(&recs, &profile, &prompts);
        assert!(report.deviations.iter().any(|d| d.message.starts_with("prompt coverage 14/15")));
        assert_eq!(report.parameter_deviations(), 1);
        assert!(report.deviations.iter().any(|d| d.message.starts_with("temperature 0.7")));

        recs.reverse();
        assert_eq!(validate_records(&recs, &profile, &prompts), report);
    }

    #[test]
    fn duplicates_and_indices() {
        let prompts = english_prompts();
        let profile = DecodeParams::profile("llama2-7b").unwrap();
        let mut recs = template_corpus("m", &prompts, &profile);
        recs.push(recs[0].clone());
        recs[1].sample_index = 15;
        let report = validate_records(&recs, &profile, &prompts);
        let kinds: Vec<_> = report.deviations.iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DeviationKind::Duplicate));
        assert!(kinds.contains(&DeviationKind::SampleIndex));
        assert!(kinds.contains(&DeviationKind::Samples));
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "\n{\"model_id\": 1}\n";
        match read_corpus(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sidecar_merge() {
        let prompts = english_prompts();
        let profile = DecodeParams::default();
        let mut recs = template_corpus("m", &prompts[..1], &profile);
        let csv = "model_id,prompt_id,sample_index,code\nm,B1,0,Social Problems\nm,B1,0,Social Problems\nm,B1,3,School\n";
        assert_eq!(merge_codes_sidecar(&mut recs, csv.as_bytes()).unwrap(), 2);
        assert_eq!(recs[0].codes, ["Social Problems"]);
        let bad = "model_id,prompt_id,sample_index,code\nm,B9,0,X\n";
        assert!(matches!(merge_codes_sidecar(&mut recs, bad.as_bytes()), Err(Error::Integrity(_))));
    }
}
