use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use swe_audit::config::load_config;
use swe_audit::embedding::parse_embedding_text_with_dim;
use swe_audit::manifest::{digest_file, FileDigest, HashingReader};
use swe_audit::{AuditConfig, EmbeddingMatrix, LoadSummary, Scalar};

use crate::{ConfigArgs, EmbeddingArgs};

pub fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// Tracks input digests and refuses to write over any of them.
#[derive(Default)]
pub struct Inputs {
    pub digests: Vec<FileDigest>,
    paths: Vec<PathBuf>,
}

impl Inputs {
    pub fn add(&mut self, path: &Path) -> Result<()> {
        let d = digest_file(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.record(path, d);
        Ok(())
    }

    fn record(&mut self, path: &Path, digest: FileDigest) {
        self.paths.push(path.canonicalize().unwrap_or_else(|_| path.to_path_buf()));
        self.digests.push(digest);
    }

    pub fn check_output(&self, out: &Path) -> Result<()> {
        let resolved = match (out.parent(), out.file_name()) {
            (Some(dir), Some(name)) if !dir.as_os_str().is_empty() => {
                dir.canonicalize().map(|d| d.join(name)).unwrap_or_else(|_| out.to_path_buf())
            }
            _ => out.to_path_buf(),
        };
        let resolved = resolved.canonicalize().unwrap_or(resolved);
        if self.paths.contains(&resolved) {
            bail!("output {} would overwrite an input file", out.display());
        }
        Ok(())
    }
}

pub fn load_embedding<T: Scalar>(
    args: &EmbeddingArgs,
    inputs: &mut Inputs,
) -> Result<(EmbeddingMatrix<T>, LoadSummary)> {
    let file = File::open(&args.embedding).with_context(|| format!("cannot open {}", args.embedding.display()))?;
    let mut reader = BufReader::with_capacity(1 << 20, HashingReader::new(file));
    let started = Instant::now();
    let (matrix, summary) = parse_embedding_text_with_dim(&mut reader, args.format, args.dim)
        .with_context(|| format!("cannot parse {}", args.embedding.display()))?;
    let digest = reader.into_inner().finish(args.embedding.display().to_string());
    log::info!(
        "loaded {} x {} from {} in {:.1}s",
        summary.rows,
        summary.dim,
        args.embedding.display(),
        started.elapsed().as_secs_f64()
    );
    if summary.duplicates > 0 {
        log::warn!("{} duplicate token(s) ignored; the first occurrence was kept", summary.duplicates);
    }
    inputs.record(&args.embedding, digest);
    Ok((matrix, summary))
}

pub fn load_audit_config(args: &ConfigArgs, inputs: &mut Inputs) -> Result<AuditConfig> {
    let mut config = match &args.config {
        Some(path) => {
            inputs.add(path)?;
            load_config(open(path)?).with_context(|| format!("invalid config {}", path.display()))?
        }
        None => AuditConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// One token per line, or the `token` column of a CSV (by extension).
pub fn read_words(path: &Path, inputs: &mut Inputs) -> Result<Vec<String>> {
    inputs.add(path)?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let words: Vec<String> = if is_csv {
        let mut rdr = csv::Reader::from_reader(open(path)?);
        let col = rdr
            .headers()?
            .iter()
            .position(|h| h == "token")
            .with_context(|| format!("{} has no `token` column", path.display()))?;
        let mut out = Vec::new();
        for row in rdr.records() {
            out.push(row?[col].to_string());
        }
        out
    } else {
        let mut out = Vec::new();
        for line in open(path)?.lines() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if !line.trim().is_empty() {
                out.push(line.to_string());
            }
        }
        out
    };
    if words.is_empty() {
        bail!("{} lists no words", path.display());
    }
    Ok(words)
}

pub fn create(path: &Path, inputs: &Inputs) -> Result<BufWriter<File>> {
    inputs.check_output(path)?;
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_text(path: &Path, text: &str, inputs: &Inputs) -> Result<()> {
    let mut w = create(path, inputs)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}
