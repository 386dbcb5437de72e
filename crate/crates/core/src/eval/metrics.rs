use thiserror::Error;

const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{0} is not a probability vector")]
    NotASimplex(&'static str),
    #[error("length mismatch: {0} predictions, {1} truths")]
    LengthMismatch(usize, usize),
    #[error("no deaths to score")]
    EmptyInput,
    #[error("cause index {0} out of range")]
    CauseOutOfRange(usize),
    #[error("true CSMF puts all mass on one cause; accuracy is undefined")]
    Degenerate,
}

fn check_simplex(v: &[f64], what: &'static str) -> Result<(), MetricError> {
    let s: f64 = v.iter().sum();
    if v.iter().any(|x| !x.is_finite() || *x < -SIMPLEX_TOL) || (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(MetricError::NotASimplex(what));
    }
    Ok(())
}

/// `1 - sum_c |pi_hat_c - pi_c| / (2 (1 - min_c pi_c))`.
pub fn csmf_accuracy(pi_hat: &[f64], pi_true: &[f64]) -> Result<f64, MetricError> {
    if pi_hat.len() != pi_true.len() {
        return Err(MetricError::LengthMismatch(pi_hat.len(), pi_true.len()));
    }
    check_simplex(pi_hat, "estimated CSMF")?;
    check_simplex(pi_true, "true CSMF")?;
    let min = pi_true.iter().copied().fold(f64::INFINITY, f64::min);
    if 1.0 - min <= 0.0 {
        return Err(MetricError::Degenerate);
    }
    let err: f64 = pi_hat.iter().zip(pi_true).map(|(a, b)| (a - b).abs()).sum();
    Ok((1.0 - err / (2.0 * (1.0 - min))).clamp(0.0, 1.0))
}

/// Fraction of deaths whose predicted cause is the true one.
pub fn top_cause_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mean per-cause recall over the causes that occur in `truth`.
pub fn balanced_accuracy(pred: &[usize], truth: &[usize], n_causes: usize) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&c| c >= n_causes) {
        return Err(MetricError::CauseOutOfRange(bad));
    }
    let mut total = vec![0usize; n_causes];
    let mut hit = vec![0usize; n_causes];
    for (&p, &t) in pred.iter().zip(truth) {
        total[t] += 1;
        hit[t] += usize::from(p == t);
    }
    // equal class sizes: the mean recall is hits over deaths, computed the same
    // way as top-cause accuracy so the two agree bit for bit
    let mut sizes = total.iter().filter(|&&n| n > 0);
    let first = *sizes.next().expect("truth is non-empty");
    if sizes.all(|&n| n == first) {
        return Ok(hit.iter().sum::<usize>() as f64 / truth.len() as f64);
    }
    let recalls: Vec<f64> = total
        .iter()
        .zip(&hit)
        .filter(|(n, _)| **n > 0)
        .map(|(&n, &h)| h as f64 / n as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}
