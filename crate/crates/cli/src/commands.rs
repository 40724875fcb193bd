use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use swe_audit::association::{target_exclusions, write_scores_csv};
use swe_audit::cluster::{embedding_points, load_substitutions, vad_embed, Points};
use swe_audit::manifest::{digest_file, RunManifest};
use swe_audit::pca::pca_2d;
use swe_audit::protocol::{english_prompts, load_prompts, merge_codes_sidecar, read_corpus, validate_records, DecodeParams};
use swe_audit::scweat::{derive_seed, scweat_word, write_unique_csv, UniqueWord};
use swe_audit::survey::{tally_codes_with, write_tally_csv, TallyOptions, TraitRatingTable};
use swe_audit::{
    select_k_cluster, select_top_frequent, top_k_associated, trait_alignment, unique_association_scan, AuditConfig,
    ClusterReport, KMeansOptions, Orientation, PermutationMode, Scalar, VadLexicon,
};

use crate::io::{self, create, load_audit_config, load_embedding, manifest_path, read_words, write_text, Inputs};
use crate::{
    Cli, ClusterArgs, Command, CorrelateArgs, KArgs, ModeArg, OrientationArg, PcaArgs, PermutationArgs, Precision,
    ScanArgs, ScweatArgs, TallyArgs, UniqueArgs, ValidateArgs, VadClusterArgs,
};

/// Exit status when `validate-corpus --strict` finds deviations.
const EXIT_DEVIATIONS: u8 = 3;

struct Run {
    manifest: RunManifest,
    inputs: Inputs,
    outputs: Vec<PathBuf>,
    clock: Instant,
}

impl Run {
    fn new(cli: &Cli, command: &str) -> Self {
        Run {
            manifest: RunManifest {
                tool: "swe-audit".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                argv: std::env::args().collect(),
                threads: rayon::current_num_threads(),
                precision: cli.precision.name().into(),
                summary: Value::Null,
                ..RunManifest::default()
            },
            inputs: Inputs::default(),
            outputs: Vec::new(),
            clock: Instant::now(),
        }
    }

    fn lap(&mut self, phase: &str) {
        self.manifest.timings.insert(phase.into(), self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
    }

    fn config(&mut self, config: &AuditConfig) {
        self.manifest.config = Some(serde_json::to_value(config).expect("config serializes"));
        self.manifest.config_hash = Some(config.config_hash());
        self.manifest.seed = Some(config.seed);
        self.manifest.mode = Some(config.permutation_mode.to_string());
    }

    fn writer(&mut self, path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
        self.outputs.push(path.to_path_buf());
        create(path, &self.inputs)
    }

    fn write_json(&mut self, path: &Path, value: &impl serde::Serialize) -> Result<()> {
        self.outputs.push(path.to_path_buf());
        let text = serde_json::to_string_pretty(value)? + "\n";
        write_text(path, &text, &self.inputs)
    }

    fn finish(mut self, primary: &Path, summary: Value) -> Result<()> {
        self.lap("write");
        self.manifest.inputs = std::mem::take(&mut self.inputs.digests);
        for out in &self.outputs {
            self.manifest.outputs.push(digest_file(out)?);
        }
        self.manifest.summary = summary;
        let path = manifest_path(primary);
        let mut w = std::fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        w.write_all(self.manifest.to_json().as_bytes())?;
        Ok(())
    }
}

macro_rules! by_precision {
    ($p:expr, $f:ident($($arg:expr),*)) => {
        match $p {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let p = cli.precision;
    match &cli.command {
        Command::Scan(a) => by_precision!(p, scan(cli, a))?,
        Command::Scweat(a) => by_precision!(p, scweat(cli, a))?,
        Command::Unique(a) => by_precision!(p, unique(cli, a))?,
        Command::Cluster(a) => by_precision!(p, cluster(cli, a))?,
        Command::VadCluster(a) => vad_cluster(cli, a)?,
        Command::Correlate(a) => by_precision!(p, correlate(cli, a))?,
        Command::ValidateCorpus(a) => return validate(cli, a),
        Command::Tally(a) => tally(cli, a)?,
        Command::ExportPca(a) => by_precision!(p, export_pca(cli, a))?,
    }
    Ok(ExitCode::SUCCESS)
}

fn apply_permutation(config: &mut AuditConfig, args: &PermutationArgs) -> Result<()> {
    if let Some(d) = args.d_min {
        config.d_min = d;
    }
    if let Some(p) = args.p_max {
        config.p_max = p;
    }
    let current_samples = match config.permutation_mode {
        PermutationMode::Sampled { n_samples } => n_samples,
        PermutationMode::Exact => swe_audit::config::DEFAULT_N_SAMPLES,
    };
    match (args.mode, args.n_samples) {
        (Some(ModeArg::Exact), Some(_)) => bail!("--n-samples only applies to --mode sampled"),
        (Some(ModeArg::Exact), None) => config.permutation_mode = PermutationMode::Exact,
        (Some(ModeArg::Sampled), n) => {
            config.permutation_mode = PermutationMode::Sampled {
                n_samples: n.unwrap_or(current_samples),
            }
        }
        (None, Some(n)) => match config.permutation_mode {
            PermutationMode::Sampled { .. } => config.permutation_mode = PermutationMode::Sampled { n_samples: n },
            PermutationMode::Exact => bail!("--n-samples needs --mode sampled"),
        },
        (None, None) => {}
    }
    config.validate()?;
    config.validate_for_scweat()?;
    Ok(())
}

fn embedding_summary(s: &swe_audit::LoadSummary) -> Value {
    json!({ "rows": s.rows, "dim": s.dim, "duplicates": s.duplicates })
}

fn scan<T: Scalar>(cli: &Cli, a: &ScanArgs) -> Result<()> {
    let mut run = Run::new(cli, "scan");
    let mut config = load_audit_config(&a.config, &mut run.inputs)?;
    if let Some(k) = a.top_k {
        config.top_k = k;
    }
    if a.no_exclude_target {
        config.exclude_target = false;
    }
    config.validate()?;
    run.config(&config);
    let (m, loaded) = load_embedding::<T>(&a.embedding, &mut run.inputs)?;
    run.lap("load");
    let exclude = if config.exclude_target {
        target_exclusions(&m, &config.target)
    } else {
        HashSet::new()
    };
    let result = top_k_associated(&m, &config.target, config.top_k, &exclude)?;
    run.lap("compute");
    let mut w = run.writer(&a.out)?;
    write_scores_csv(&result.scores, &mut w)?;
    w.flush()?;
    drop(w);
    let summary = json!({
        "embedding": embedding_summary(&loaded),
        "target": result.group.name,
        "target_missing": result.group.missing,
        "requested": result.requested,
        "returned": result.scores.len(),
        "truncated": result.truncated,
        "excluded": result.excluded,
        "zero_norm_skipped": result.zero_norm_skipped,
    });
    run.finish(&a.out, summary)
}

fn scweat<T: Scalar>(cli: &Cli, a: &ScweatArgs) -> Result<()> {
    let mut run = Run::new(cli, "scweat");
    let mut config = load_audit_config(&a.config, &mut run.inputs)?;
    apply_permutation(&mut config, &a.permutation)?;
    run.config(&config);
    let (m, loaded) = load_embedding::<T>(&a.embedding, &mut run.inputs)?;
    run.lap("load");
    let rank = m
        .rank_of(&a.word)
        .with_context(|| format!("`{}` is not in the embedding", a.word))?;
    let mut results = Vec::new();
    for (j, reference) in config.references.iter().enumerate() {
        let seed = derive_seed(config.seed, rank, j);
        let r = scweat_word(&m, &a.word, &config.target, reference, config.permutation_mode, seed)?;
        results.push(json!({
            "token": r.token,
            "rank": r.rank,
            "reference": r.reference_name,
            "d": r.d,
            "p": r.p.value(),
            "p_count": r.p.count,
            "p_total": r.p.total,
            "passes": r.d > config.d_min && r.p.value() < config.p_max,
        }));
    }
    run.lap("compute");
    run.write_json(&a.out, &results)?;
    run.finish(&a.out, json!({ "embedding": embedding_summary(&loaded), "word": a.word, "rank": rank }))
}

fn unique<T: Scalar>(cli: &Cli, a: &UniqueArgs) -> Result<()> {
    let mut run = Run::new(cli, "unique");
    let mut config = load_audit_config(&a.config, &mut run.inputs)?;
    if let Some(n) = a.select {
        config.select = n;
    }
    apply_permutation(&mut config, &a.permutation)?;
    run.config(&config);
    let (m, loaded) = load_embedding::<T>(&a.embedding, &mut run.inputs)?;
    run.lap("load");
    let set = unique_association_scan(&m, &config)?;
    let selected = select_top_frequent(&set, config.select);
    run.lap("compute");
    let n_refs = config.references.len();
    let write = |run: &mut Run, path: &Path, words: &[UniqueWord]| -> Result<()> {
        let mut w = run.writer(path)?;
        write_unique_csv(words, n_refs, &mut w)?;
        w.flush()?;
        Ok(())
    };
    write(&mut run, &a.out, &selected.words)?;
    if let Some(all) = &a.all_out {
        write(&mut run, all, &set.words)?;
    }
    let missing: BTreeMap<&str, &Vec<String>> = std::iter::once(&set.target)
        .chain(&set.references)
        .map(|g| (g.name.as_str(), &g.missing))
        .collect();
    let summary = json!({
        "embedding": embedding_summary(&loaded),
        "unique": set.words.len(),
        "selected": selected.words.len(),
        "selection_truncated": selected.truncated,
        "scanned": set.scanned,
        "passed_effect": set.passed_effect,
        "skips": set.skips,
        "missing_group_tokens": missing,
    });
    run.finish(&a.out, summary)
}

fn k_range(k: &KArgs, config: &AuditConfig) -> (usize, usize) {
    (k.k_min.unwrap_or(config.k_range.0), k.k_max.unwrap_or(config.k_range.1))
}

fn cluster_json(report: &ClusterReport, tokens: &[String], ranks: Option<&[usize]>, metric: &str) -> Value {
    let members: Vec<Value> = tokens
        .iter()
        .zip(&report.assignment)
        .map(|(t, c)| json!({ "token": t, "cluster": c }))
        .collect();
    // exemplars: most frequent members when ranks are known, else input order
    let mut exemplars: BTreeMap<usize, Vec<(usize, &str)>> = BTreeMap::new();
    for (i, (t, &c)) in tokens.iter().zip(&report.assignment).enumerate() {
        let key = ranks.map_or(i, |r| r[i]);
        exemplars.entry(c).or_default().push((key, t));
    }
    let exemplars: BTreeMap<usize, Vec<&str>> = exemplars
        .into_iter()
        .map(|(c, mut v)| {
            v.sort();
            (c, v.into_iter().take(10).map(|(_, t)| t).collect())
        })
        .collect();
    json!({
        "metric": metric,
        "k_chosen": report.k_chosen,
        "silhouette_by_k": report.silhouette_by_k,
        "cluster_sizes": report.cluster_sizes,
        "cluster_sizes_pct": report.cluster_sizes_pct,
        "seed": report.seed,
        "seeds_tried": report.seeds_tried,
        "objective": report.objective,
        "exemplars": exemplars,
        "assignment": members,
    })
}

fn write_membership(run: &mut Run, path: &Path, tokens: &[String], report: &ClusterReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(run.writer(path)?);
    w.write_record(["token", "cluster"])?;
    for (t, c) in tokens.iter().zip(&report.assignment) {
        w.write_record([t.as_str(), &c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn cluster<T: Scalar>(cli: &Cli, a: &ClusterArgs) -> Result<()> {
    let mut run = Run::new(cli, "cluster");
    let config = load_audit_config(&a.config, &mut run.inputs)?;
    run.config(&config);
    let words = read_words(&a.words, &mut run.inputs)?;
    let (m, loaded) = load_embedding::<T>(&a.embedding, &mut run.inputs)?;
    run.lap("load");
    let (found, data, missing) = embedding_points(&m, &words);
    if found.is_empty() {
        bail!("none of the {} listed words is in the embedding", words.len());
    }
    if !missing.is_empty() {
        log::warn!("{} word(s) not in the embedding", missing.len());
    }
    let points = Points::new(&data, m.dim())?;
    let options = KMeansOptions {
        restarts: a.k.restarts,
        ..KMeansOptions::default()
    };
    let range = k_range(&a.k, &config);
    let report = select_k_cluster(&points, range, config.seed, options)?;
    run.lap("compute");
    let tokens: Vec<String> = found.iter().map(|(t, _)| t.clone()).collect();
    let ranks: Vec<usize> = found.iter().map(|(_, r)| *r).collect();
    let mut body = cluster_json(&report, &tokens, Some(&ranks), "euclidean on L2-normalized embedding vectors");
    body["missing"] = json!(missing);
    run.write_json(&a.out, &body)?;
    if let Some(path) = &a.membership_out {
        write_membership(&mut run, path, &tokens, &report)?;
    }
    let summary = json!({
        "embedding": embedding_summary(&loaded),
        "words": words.len(),
        "clustered": tokens.len(),
        "missing": missing.len(),
        "k_range": range,
        "k_chosen": report.k_chosen,
    });
    run.finish(&a.out, summary)
}

fn vad_cluster(cli: &Cli, a: &VadClusterArgs) -> Result<()> {
    let mut run = Run::new(cli, "vad-cluster");
    let config = load_audit_config(&a.config, &mut run.inputs)?;
    run.config(&config);
    let words = read_words(&a.words, &mut run.inputs)?;
    run.inputs.add(&a.lexicon)?;
    let lexicon = VadLexicon::from_tsv(io::open(&a.lexicon)?)
        .with_context(|| format!("invalid lexicon {}", a.lexicon.display()))?;
    let subs = match &a.substitutions {
        Some(path) => {
            run.inputs.add(path)?;
            Some(load_substitutions(io::open(path)?)?)
        }
        None => None,
    };
    run.lap("load");
    let embedded = vad_embed(&words, &lexicon, subs.as_ref())?;
    let points = Points::new(&embedded.points, 3)?;
    let options = KMeansOptions {
        restarts: a.k.restarts,
        ..KMeansOptions::default()
    };
    let range = k_range(&a.k, &config);
    let report = select_k_cluster(&points, range, config.seed, options)?;
    run.lap("compute");
    let mut body = cluster_json(&report, &embedded.tokens, None, "euclidean on raw valence/arousal/dominance");
    body["excluded"] = json!(embedded.excluded);
    body["exclusion_rate_pct"] = json!(embedded.exclusion_rate);
    run.write_json(&a.out, &body)?;
    if let Some(path) = &a.membership_out {
        write_membership(&mut run, path, &embedded.tokens, &report)?;
    }
    let summary = json!({
        "words": words.len(),
        "clustered": embedded.tokens.len(),
        "exclusion_rate_pct": embedded.exclusion_rate,
        "k_range": range,
        "k_chosen": report.k_chosen,
    });
    run.finish(&a.out, summary)
}

fn correlate<T: Scalar>(cli: &Cli, a: &CorrelateArgs) -> Result<()> {
    let mut run = Run::new(cli, "correlate");
    let config = load_audit_config(&a.config, &mut run.inputs)?;
    run.config(&config);
    run.inputs.add(&a.ratings)?;
    let table = TraitRatingTable::from_csv(io::open(&a.ratings)?)
        .with_context(|| format!("invalid ratings {}", a.ratings.display()))?;
    let (m, loaded) = load_embedding::<T>(&a.embedding, &mut run.inputs)?;
    run.lap("load");
    let orientation = match a.orientation {
        OrientationArg::Raw => Orientation::Raw,
        OrientationArg::Inverted => Orientation::Inverted,
    };
    let report = trait_alignment(&m, &config.target, &table, orientation)?;
    run.lap("compute");
    let mut body = serde_json::to_value(&report)?;
    body["label"] = json!(report.correlation.label());
    run.write_json(&a.out, &body)?;
    if let Some(path) = &a.table_out {
        let mut w = csv::Writer::from_writer(run.writer(path)?);
        w.write_record(["trait", "mean_rating", "score", "cosine"])?;
        for r in &report.traits {
            w.write_record([
                r.trait_name.clone(),
                r.mean_rating.to_string(),
                r.score.to_string(),
                r.cosine.to_string(),
            ])?;
        }
        w.flush()?;
    }
    let summary = json!({
        "embedding": embedding_summary(&loaded),
        "participants": table.participants.len(),
        "traits": table.traits.len(),
        "unresolved": report.unresolved,
        "orientation": report.orientation,
        "rho": report.correlation.rho,
        "p": report.correlation.p,
    });
    run.finish(&a.out, summary)
}

fn validate(cli: &Cli, a: &ValidateArgs) -> Result<ExitCode> {
    let mut run = Run::new(cli, "validate-corpus");
    let prompts = match &a.prompts {
        Some(path) => {
            run.inputs.add(path)?;
            load_prompts(io::open(path)?).with_context(|| format!("invalid prompt file {}", path.display()))?
        }
        None => english_prompts(),
    };
    let profile = if a.profile.ends_with(".json") {
        let path = Path::new(&a.profile);
        run.inputs.add(path)?;
        DecodeParams::from_json(io::open(path)?).with_context(|| format!("invalid profile {}", a.profile))?
    } else {
        DecodeParams::profile(&a.profile)?
    };
    run.inputs.add(&a.corpus)?;
    let records = read_corpus(io::open(&a.corpus)?).with_context(|| format!("in corpus {}", a.corpus.display()))?;
    run.lap("load");
    let report = validate_records(&records, &profile, &prompts);
    run.lap("compute");
    run.write_json(&a.out, &report)?;
    for d in &report.deviations {
        log::warn!("{}: {}", d.model_id, d.message);
    }
    let deviations = report.deviations.len();
    run.finish(
        &a.out,
        json!({ "records": report.records, "models": report.models.len(), "deviations": deviations, "profile": a.profile }),
    )?;
    if a.strict && deviations > 0 {
        eprintln!("{deviations} deviation(s) from the protocol");
        return Ok(ExitCode::from(EXIT_DEVIATIONS));
    }
    Ok(ExitCode::SUCCESS)
}

fn tally(cli: &Cli, a: &TallyArgs) -> Result<()> {
    let mut run = Run::new(cli, "tally");
    run.inputs.add(&a.corpus)?;
    let mut records = read_corpus(io::open(&a.corpus)?).with_context(|| format!("in corpus {}", a.corpus.display()))?;
    if let Some(path) = &a.codes {
        run.inputs.add(path)?;
        let added = merge_codes_sidecar(&mut records, io::open(path)?)?;
        log::info!("merged {added} code(s) from {}", path.display());
    }
    run.lap("load");
    let stats = tally_codes_with(&records, TallyOptions { subcodes: a.subcodes })?;
    run.lap("compute");
    let mut w = run.writer(&a.out)?;
    write_tally_csv(&stats, a.subcodes, &mut w)?;
    w.flush()?;
    drop(w);
    let totals: BTreeMap<&str, usize> = stats.iter().map(|s| (s.model_id.as_str(), s.total_records)).collect();
    run.finish(&a.out, json!({ "records": records.len(), "records_per_model": totals }))
}

fn export_pca<T: Scalar>(cli: &Cli, a: &PcaArgs) -> Result<()> {
    let mut run = Run::new(cli, "export-pca");
    let words = read_words(&a.words, &mut run.inputs)?;
    let (m, loaded) = load_embedding::<T>(&a.embedding, &mut run.inputs)?;
    run.lap("load");
    let (found, data, missing) = embedding_points(&m, &words);
    let projection = pca_2d(&Points::new(&data, m.dim())?)?;
    run.lap("compute");
    let mut w = csv::Writer::from_writer(run.writer(&a.out)?);
    w.write_record(["token", "pc1", "pc2"])?;
    for ((t, _), c) in found.iter().zip(&projection.coords) {
        w.write_record([t.clone(), c[0].to_string(), c[1].to_string()])?;
    }
    w.flush()?;
    drop(w);
    let summary = json!({
        "embedding": embedding_summary(&loaded),
        "points": found.len(),
        "missing": missing,
        "explained_ratio": projection.explained_ratio,
    });
    run.finish(&a.out, summary)
}
