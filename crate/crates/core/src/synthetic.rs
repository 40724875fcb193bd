//! Seeded synthetic fixtures: embeddings with planted target associations,
//! Gaussian blobs and parser stress files.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::{AuditConfig, PermutationMode, WordGroup};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scweat::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSpec {
    /// Total rows, group members included.
    pub vocab: usize,
    pub dim: usize,
    pub planted: usize,
    pub group_size: usize,
    pub references: usize,
    /// Spread of group members around their group axis.
    pub member_noise: f64,
    /// Spread of planted words around the target centroid.
    pub planted_noise: f64,
    /// Share of background rows drawn isotropically over every dimension.
    /// The rest are either orthogonal to all groups or tied to one
    /// reference group.
    pub random_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            vocab: 10_000,
            dim: 50,
            planted: 50,
            group_size: 8,
            references: 3,
            member_noise: 0.3,
            planted_noise: 0.05,
            random_fraction: 0.0,
            seed: 7,
        }
    }
}

pub struct PlantedEmbedding<T> {
    pub matrix: EmbeddingMatrix<T>,
    /// Target plus references, exact permutation mode.
    pub config: AuditConfig,
    /// Planted tokens by ascending rank.
    pub planted: Vec<String>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Group `g` (0 = target) sits on axis `g`. Members add noise on a block of
/// dimensions that background rows never touch; planted words are the
/// target centroid plus noise on the background block.
pub fn planted_embedding<T: Scalar>(spec: &PlantedSpec) -> Result<PlantedEmbedding<T>> {
    let groups = spec.references + 1;
    let group_rows = groups * spec.group_size;
    if spec.dim < groups + 2 {
        return Err(Error::InvalidArgument(format!("dimension {} too small for {groups} groups", spec.dim)));
    }
    if group_rows + spec.planted > spec.vocab {
        return Err(Error::InvalidArgument("vocabulary too small for groups plus planted words".into()));
    }
    let dim = spec.dim;
    let split = groups + (dim - groups) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut tokens = Vec::with_capacity(spec.vocab);
    let mut data = vec![T::zero(); spec.vocab * dim];
    let mut group_tokens: Vec<Vec<String>> = vec![Vec::new(); groups];
    let mut centroid = vec![0.0f64; dim];
    let mut scratch = vec![0.0f64; dim];
    for g in 0..groups {
        for m in 0..spec.group_size {
            let row = g * spec.group_size + m;
            let name = if g == 0 { format!("target_{m}") } else { format!("ref{g}_{m}") };
            group_tokens[g].push(name.clone());
            tokens.push(name);
            scratch.iter_mut().for_each(|x| *x = 0.0);
            scratch[g] = 1.0;
            for x in &mut scratch[groups..split] {
                *x = spec.member_noise * normal(&mut rng);
            }
            for (slot, &x) in data[row * dim..(row + 1) * dim].iter_mut().zip(&scratch) {
                *slot = T::narrow(x);
            }
            if g == 0 {
                for (c, x) in centroid.iter_mut().zip(&scratch) {
                    *c += x / spec.group_size as f64;
                }
            }
        }
    }

    let free = spec.vocab - group_rows;
    let mut planted_rows: Vec<usize> = index::sample(&mut rng, free, spec.planted)
        .into_iter()
        .map(|i| i + group_rows)
        .collect();
    planted_rows.sort_unstable();
    let mut is_planted = vec![false; spec.vocab];
    for &r in &planted_rows {
        is_planted[r] = true;
    }
    for (row, &planted) in is_planted.iter().enumerate().skip(group_rows) {
        tokens.push(if planted {
            format!("planted_{row}")
        } else {
            format!("w_{row}")
        });
    }

    data[group_rows * dim..]
        .par_chunks_mut(dim)
        .enumerate()
        .for_each_init(
            || vec![0.0f64; dim],
            |v, (i, out)| {
                let row = group_rows + i;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, row, 1));
                v.iter_mut().for_each(|x| *x = 0.0);
                if is_planted[row] {
                    v.copy_from_slice(&centroid);
                    for x in &mut v[split..] {
                        *x += spec.planted_noise * normal(&mut rng);
                    }
                } else if rng.random::<f64>() < spec.random_fraction {
                    for x in v.iter_mut() {
                        *x = normal(&mut rng);
                    }
                } else {
                    for x in &mut v[split..] {
                        *x = normal(&mut rng);
                    }
                    if rng.random::<bool>() {
                        let g = rng.random_range(1..groups);
                        v[g] = rng.random_range(0.2..1.0);
                    }
                }
                for (slot, &x) in out.iter_mut().zip(v.iter()) {
                    *slot = T::narrow(x);
                }
            },
        );

    let matrix = EmbeddingMatrix::from_rows(tokens, data, dim)?;
    let mut groups_iter = group_tokens.into_iter().enumerate().map(|(g, toks)| {
        let name = if g == 0 { "Target".to_string() } else { format!("Reference{g}") };
        WordGroup::new(name, toks)
    });
    let target = groups_iter.next().expect("target group")?;
    let references = groups_iter.collect::<Result<Vec<_>>>()?;
    let config = AuditConfig {
        target,
        references,
        permutation_mode: PermutationMode::Exact,
        ..AuditConfig::default()
    };
    let planted = planted_rows.iter().map(|&r| matrix.token(r).to_string()).collect();
    Ok(PlantedEmbedding {
        matrix,
        config,
        planted,
    })
}

/// `n_blobs` isotropic Gaussian blobs centered at `separation * e_b`.
/// Returns row-major points and the generating blob of each point.
pub fn gaussian_blobs(
    n_blobs: usize,
    per_blob: usize,
    dim: usize,
    separation: f64,
    sigma: f64,
    seed: u64,
) -> (Vec<f64>, Vec<usize>) {
    assert!(dim >= n_blobs, "need one axis per blob");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_blobs * per_blob * dim);
    let mut labels = Vec::with_capacity(n_blobs * per_blob);
    for b in 0..n_blobs {
        for _ in 0..per_blob {
            for j in 0..dim {
                let center = if j == b { separation } else { 0.0 };
                points.push(center + sigma * normal(&mut rng));
            }
            labels.push(b);
        }
    }
    (points, labels)
}

/// GloVe-style text with `n` rows: plain tokens, tokens containing spaces,
/// Devanagari tokens, and a mix of LF and CRLF line endings.
pub fn parser_fixture(n: usize, dim: usize, seed: u64) -> String {
    const DEVANAGARI: [&str; 5] = ["किशोर", "किशोरी", "युवा", "विद्यालय", "साथी"];
    const SPACED: [&str; 4] = ["new york", "high school", "a b c", "ice  cream"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..n {
        let token = match if i == 0 { 0 } else { i % 4 } {
            0 | 1 => format!("word{i}"),
            2 => format!("{}_{i}", SPACED[(i / 4) % SPACED.len()]),
            _ => format!("{}{i}", DEVANAGARI[i % DEVANAGARI.len()]),
        };
        out.push_str(&token);
        for _ in 0..dim {
            let v: f32 = (normal(&mut rng) * 10f64.powi(rng.random_range(-4..3))) as f32;
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push_str(if rng.random::<bool>() { "\r\n" } else { "\n" });
    }
    out
}
