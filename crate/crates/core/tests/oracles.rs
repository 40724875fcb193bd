//! Independent reference implementations checked against the library.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swe_audit::cluster::Points;
use swe_audit::survey::correlation_p_value;
use swe_audit::{pearson, scweat_effect, scweat_pvalue, silhouette, PermutationMode};

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Counts size-|a| subsets of the pooled values whose mean difference is at
/// least the observed one, in exact rational arithmetic.
fn brute_force_p(a: &[f64], b: &[f64]) -> (u64, u64) {
    let pooled: Vec<BigRational> = a.iter().chain(b).map(|&x| exact(x)).collect();
    let n = pooled.len();
    let (na, nb) = (BigRational::from_integer(a.len().into()), BigRational::from_integer(b.len().into()));
    let total: BigRational = pooled.iter().sum();
    let stat = |sum_a: &BigRational| sum_a / &na - (&total - sum_a) / &nb;
    let observed = stat(&pooled[..a.len()].iter().sum());
    let (mut count, mut subsets) = (0, 0);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        subsets += 1;
        let sum: BigRational = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| pooled[i].clone()).sum();
        if stat(&sum) >= observed {
            count += 1;
        }
    }
    (count, subsets)
}

fn exact_effect(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<BigRational> = a.iter().chain(b).map(|&x| exact(x)).collect();
    let n = BigRational::from_integer(BigInt::from(pooled.len()));
    let mean_of = |xs: &[BigRational]| xs.iter().sum::<BigRational>() / BigRational::from_integer(xs.len().into());
    let mean = mean_of(&pooled);
    let ss: BigRational = pooled.iter().map(|x| (x - &mean) * (x - &mean)).sum();
    let var = ss / (n - BigRational::from_integer(1.into()));
    let diff = mean_of(&pooled[..a.len()]) - mean_of(&pooled[a.len()..]);
    diff.to_f64().unwrap() / var.to_f64().unwrap().sqrt()
}

fn random_cosines(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if ties {
                rng.random_range(-2..=2) as f64 / 4.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect()
}

#[test]
fn permutation_p_matches_rational_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        let k = rng.random_range(2..=6);
        let ties = case % 2 == 0;
        let a = random_cosines(&mut rng, k, ties);
        let b = random_cosines(&mut rng, k, ties);
        let p = scweat_pvalue(&a, &b, PermutationMode::Exact, 0).unwrap();
        assert_eq!((p.count, p.total), brute_force_p(&a, &b), "a={a:?} b={b:?}");
    }
}

#[test]
fn permutation_p_matches_at_eight_per_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..3 {
        let a = random_cosines(&mut rng, 8, case == 0);
        let b: Vec<f64> = random_cosines(&mut rng, 8, case == 0).iter().map(|x| x - 0.3).collect();
        let p = scweat_pvalue(&a, &b, PermutationMode::Exact, 0).unwrap();
        assert_eq!((p.count, p.total), brute_force_p(&a, &b));
        assert_eq!(p.total, 12870);
    }
}

#[test]
fn effect_matches_rational_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..500 {
        let k = rng.random_range(2..=8);
        let a = random_cosines(&mut rng, k, false);
        let b = random_cosines(&mut rng, k, false);
        let d = scweat_effect(&a, &b).unwrap();
        assert!((d - exact_effect(&a, &b)).abs() < 1e-12);
    }
}

/// Unnormalized Student t density after x = tan(theta).
fn t_integrand(theta: f64, df: f64) -> f64 {
    let x = theta.tan();
    let sec2 = 1.0 + x * x;
    (1.0 + x * x / df).powf(-(df + 1.0) / 2.0) * sec2
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Two-tailed p as the tail share of the half-line mass of the t density.
fn quadrature_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let t = (rho * (df / (1.0 - rho * rho)).sqrt()).abs();
    let end = std::f64::consts::FRAC_PI_2;
    let tail = simpson(|th| t_integrand(th, df), t.atan(), end, 20_000);
    let half = simpson(|th| t_integrand(th, df), 0.0, end, 20_000);
    tail / half
}

#[test]
fn correlation_p_matches_quadrature() {
    let reference = quadrature_p(0.02, 20);
    assert!((reference - 0.933).abs() < 0.001, "{reference}");
    assert!((correlation_p_value(0.02, 20).unwrap() - reference).abs() < 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let rho: f64 = rng.random_range(-0.98..0.98);
        let n = rng.random_range(4..80);
        let ours = correlation_p_value(rho, n).unwrap();
        let oracle = quadrature_p(rho, n);
        assert!((ours - oracle).abs() < 1e-6, "rho={rho} n={n}: {ours} vs {oracle}");
    }
}

#[test]
fn pearson_matches_textbook_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..200 {
        let n = rng.random_range(3..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * rng.random_range(-1.0..1.0) + rng.random_range(-3.0..3.0)).collect();
        let nf = n as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        let textbook = (nf * sxy - sx * sy) / ((nf * sxx - sx * sx).sqrt() * (nf * syy - sy * sy).sqrt());
        assert!((pearson(&x, &y).unwrap().rho - textbook).abs() < 1e-9);
    }
}

/// Silhouette straight from the definition.
fn naive_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mean_to = |c: usize| {
            let others: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i && labels[j] == c)
                .map(|(_, q)| dist(p, q))
                .collect();
            (others.iter().sum::<f64>() / others.len() as f64, others.len())
        };
        let (a, same) = mean_to(labels[i]);
        if same == 0 {
            continue;
        }
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| mean_to(c).0)
            .fold(f64::INFINITY, f64::min);
        if a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / points.len() as f64
}

#[test]
fn silhouette_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..50 {
        let n = rng.random_range(4..40);
        let dim = rng.random_range(1..6);
        let k = rng.random_range(2..=n.min(6));
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        for i in (1..n).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        let flat: Vec<f64> = rows.concat();
        let ours = silhouette(&Points::new(&flat, dim).unwrap(), &labels).unwrap();
        assert!((ours - naive_silhouette(&rows, &labels)).abs() < 1e-12);
    }
}

#[test]
fn silhouette_example_value() {
    let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 10.0], vec![10.0, 11.0]];
    let s = naive_silhouette(&rows, &[0, 0, 1, 1]);
    assert!((s - 0.929290).abs() < 1e-6, "{s}");
    let flat: Vec<f64> = rows.concat();
    let ours = silhouette(&Points::new(&flat, 2).unwrap(), &[0, 0, 1, 1]).unwrap();
    assert!((ours - s).abs() < 1e-12);
}
