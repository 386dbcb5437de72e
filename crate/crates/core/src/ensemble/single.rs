use super::{classify, fit_global, EnsembleConfig, EnsembleError, GlobalPosterior, PhiTensor};

/// One source model run through the global machinery on its own.
#[derive(Debug, Clone)]
pub struct SingleModelFit {
    /// Causes the model covers, in cause-list order; the posterior is indexed by
    /// position in this list.
    pub causes: Vec<usize>,
    pub posterior: GlobalPosterior,
    /// `n × C` predictive probabilities over the full cause list (0 for
    /// uncovered causes).
    pub probs: Vec<Vec<f64>>,
    /// Posterior mean of `pi` over the full cause list.
    pub pi_mean: Vec<f64>,
}

/// Fit the ensemble with model `model` alone, restricted to the causes it
/// covers. Labels on uncovered causes are dropped.
pub fn fit_single_model(
    phi: &PhiTensor,
    model: usize,
    labels: Option<&[Option<usize>]>,
    cfg: &EnsembleConfig,
) -> Result<SingleModelFit, EnsembleError> {
    if model >= phi.n_models() {
        return Err(EnsembleError::DimensionMismatch(format!(
            "model {model} out of range for {} models",
            phi.n_models()
        )));
    }
    let n_causes = phi.n_causes();
    let causes: Vec<usize> = (0..n_causes).filter(|&c| phi.is_present(c, model)).collect();
    let mut position = vec![None; n_causes];
    for (k, &c) in causes.iter().enumerate() {
        position[c] = Some(k);
    }
    let sub = phi.single_model(model, &causes);
    let restricted: Option<Vec<Option<usize>>> =
        labels.map(|l| l.iter().map(|y| y.and_then(|c| position[c])).collect());
    let posterior = fit_global(&sub, restricted.as_deref(), cfg)?;
    let cls = classify(&sub, &posterior)?;
    let expand = |v: &[f64]| {
        let mut full = vec![0.0; n_causes];
        for (k, &c) in causes.iter().enumerate() {
            full[c] = v[k];
        }
        full
    };
    let probs = cls.probs.iter().map(|p| expand(p)).collect();
    let pi_mean = expand(&posterior.pi_mean());
    Ok(SingleModelFit {
        causes,
        posterior,
        probs,
        pi_mean,
    })
}
