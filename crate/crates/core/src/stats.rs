//! Numerical and sampling helpers shared by the samplers.
//!
//! Everything categorical is sampled in log space with max-subtraction, and
//! Dirichlet draws go through log-Gamma variates so that tiny concentrations
//! (down to 1e-4 and below) never underflow to an all-zero vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// The generator used by every sampler in the crate.
pub type SeededRng = ChaCha8Rng;

/// Build a generator for an independent stream derived from `seed`.
///
/// Streams are distinct ChaCha streams, so chain `k` of a run draws the same
/// numbers no matter which thread executes it.
pub fn stream_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mix two integers into a new 64-bit seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalize log-weights into probabilities. Entries at `-inf` get exactly 0.
pub fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_weights);
    log_weights.iter().map(|w| (w - lse).exp()).collect()
}

/// Draw an index with probability proportional to `exp(log_weights[i])`.
///
/// Entries equal to `-inf` are never selected. Panics if every entry is
/// `-inf`; callers exclude that case before sampling.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max > f64::NEG_INFINITY, "categorical with empty support");
    let total: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in log_weights.iter().enumerate() {
        if *w == f64::NEG_INFINITY {
            continue;
        }
        let p = (w - max).exp();
        if u < p {
            return i;
        }
        u -= p;
        last = i;
    }
    last
}

/// `ln X` for `X ~ Gamma(shape, 1)`.
///
/// For `shape < 1` uses `Gamma(shape) = Gamma(shape + 1) * U^(1/shape)`
/// evaluated in log space.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0 && shape.is_finite());
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid shape").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("valid shape").sample(rng);
        let u: f64 = rng.random::<f64>();
        // u == 0 has probability 2^-53; nudge it to keep the result finite
        let u = if u > 0.0 { u } else { f64::MIN_POSITIVE };
        g.ln() + u.ln() / shape
    }
}

/// Log-probabilities of a Dirichlet draw.
pub fn sample_log_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alpha.iter().map(|&a| sample_log_gamma(a, rng)).collect();
    let lse = log_sum_exp(&logs);
    logs.into_iter().map(|l| l - lse).collect()
}

pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    sample_log_dirichlet(alpha, rng)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// `Beta(a, b)` through two Gamma variates.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let la = sample_log_gamma(a, rng);
    let lb = sample_log_gamma(b, rng);
    let m = la.max(lb);
    let ea = (la - m).exp();
    let eb = (lb - m).exp();
    ea / (ea + eb)
}

pub fn sample_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Log density of `Dirichlet(alpha)` at a point given by its logs.
pub fn log_dirichlet_density(alpha: &[f64], log_x: &[f64]) -> f64 {
    let sum_alpha: f64 = alpha.iter().sum();
    let mut out = ln_gamma(sum_alpha);
    for (a, lx) in alpha.iter().zip(log_x) {
        out -= ln_gamma(*a);
        if *a != 1.0 {
            out += (a - 1.0) * lx;
        }
    }
    out
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Linear-interpolation quantile (the "type 7" rule) of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&sorted, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Split-chain potential scale reduction factor.
///
/// Each chain is cut into two halves and the classic between/within variance
/// ratio is computed over the halves. Returns 1 when the within-chain
/// variance is zero (constant draws) and NaN when a half has fewer than two
/// draws.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for chain in chains {
        let half = chain.len() / 2;
        if half < 2 {
            return f64::NAN;
        }
        // drop the middle draw of odd-length chains
        halves.push(&chain[..half]);
        halves.push(&chain[chain.len() - half..]);
    }
    let len = halves[0].len();
    if halves.iter().any(|h| h.len() != len) {
        return f64::NAN;
    }
    let n = len as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let within = mean(&halves.iter().map(|h| variance(h)).collect::<Vec<_>>());
    let between = n * variance(&means);
    if within <= 0.0 {
        return 1.0;
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    (var_plus / within).sqrt()
}

/// Monte Carlo standard error of the mean using non-overlapping batch means.
pub fn batch_means_se(draws: &[f64], batches: usize) -> f64 {
    let batches = batches.max(2);
    let size = draws.len() / batches;
    if size < 1 {
        return (variance(draws) / draws.len().max(1) as f64).sqrt();
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&draws[b * size..(b + 1) * size]))
        .collect();
    (variance(&means) / batches as f64).sqrt()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Largest-remainder apportionment of `total` units by `weights`.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // stable: equal remainders go to the lower index
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[0.5f64.ln(), f64::NEG_INFINITY, 0.5f64.ln()]);
        assert!(v.abs() < 1e-15);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn categorical_never_picks_excluded() {
        let mut rng = stream_rng(3, 0);
        let w = [f64::NEG_INFINITY, -700.0, f64::NEG_INFINITY, -701.0];
        let mut hits = [0usize; 4];
        for _ in 0..20_000 {
            hits[sample_log_categorical(&w, &mut rng)] += 1;
        }
        assert_eq!(hits[0], 0);
        assert_eq!(hits[2], 0);
        let frac = hits[1] as f64 / 20_000.0;
        let expected = 1.0 / (1.0 + (-1f64).exp());
        assert!((frac - expected).abs() < 0.015, "{frac} vs {expected}");
    }

    #[test]
    fn tiny_dirichlet_concentrations_stay_finite() {
        let mut rng = stream_rng(9, 1);
        for _ in 0..200 {
            let l = sample_log_dirichlet(&[1e-4, 1e-4, 5.0], &mut rng);
            assert!(l.iter().all(|v| v.is_finite()));
            let s: f64 = l.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_mean_matches() {
        let mut rng = stream_rng(1, 0);
        let alpha = [2.0, 3.0, 5.0];
        let n = 40_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let d = sample_dirichlet(&alpha, &mut rng);
            for k in 0..3 {
                acc[k] += d[k];
            }
        }
        for k in 0..3 {
            assert!((acc[k] / n as f64 - alpha[k] / 10.0).abs() < 0.005);
        }
    }

    #[test]
    fn beta_mean_for_small_shape() {
        let mut rng = stream_rng(2, 0);
        let n = 40_000;
        let m: f64 = (0..n).map(|_| sample_beta(0.2, 0.2, &mut rng)).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 0.01);
    }

    #[test]
    fn dirichlet_density_uniform() {
        // Dir(1,1,1) has density Gamma(3) = 2 everywhere on the simplex
        let v = log_dirichlet_density(&[1.0, 1.0, 1.0], &[0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()]);
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn quantiles_and_argmax() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn rhat_near_one_for_iid_chains() {
        let mut rng = stream_rng(5, 0);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|_| sample_normal(&mut rng)).collect())
            .collect();
        let r = split_rhat(&chains);
        assert!((r - 1.0).abs() < 0.02, "{r}");
        let shifted = vec![vec![0.0; 100], vec![5.0; 100]];
        assert_eq!(split_rhat(&shifted), 1.0); // zero within variance
        let drifting: Vec<Vec<f64>> = vec![(0..100).map(|i| i as f64).collect()];
        assert!(split_rhat(&drifting) > 1.5);
    }

    #[test]
    fn largest_remainder_hits_total() {
        let c = largest_remainder(&[0.5, 0.3, 0.2], 7);
        assert_eq!(c.iter().sum::<usize>(), 7);
        assert_eq!(c, vec![4, 2, 1]);
        assert_eq!(largest_remainder(&[1.0, 1.0], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[], 3), Vec::<usize>::new());
    }

    #[test]
    fn streams_are_independent_of_creation_order() {
        let a: Vec<u64> = {
            let mut r = stream_rng(42, 3);
            (0..4).map(|_| r.random()).collect()
        };
        let _other = stream_rng(42, 1);
        let b: Vec<u64> = {
            let mut r = stream_rng(42, 3);
            (0..4).map(|_| r.random()).collect()
        };
        assert_eq!(a, b);
        let c: Vec<u64> = {
            let mut r = stream_rng(42, 4);
            (0..4).map(|_| r.random()).collect()
        };
        assert_ne!(a, c);
    }
}
