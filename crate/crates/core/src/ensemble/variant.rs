//! The four ways a target domain's labels can enter the global fit.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    adjust_csmf, build_phi, classify, fit_global, Classification, EnsembleConfig, EnsembleError, EnsembleVariant,
    GlobalPosterior,
};
use crate::data::{cause_counts, Dataset};
use crate::exchange::FederationRegistry;
use crate::lcm::{train_lcm, BaseModelSummary, GibbsConfig, LcmHyper};
use crate::stats::{derive_seed, stream_rng};

/// Salt mixed into the ensemble seed for the mix-variant label split.
pub const MIX_SPLIT_SALT: u64 = 0x6d69_785f_7370_6c74;

/// Which population the CSMF estimate describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    /// Every target death, labeled or not; deaths held out to train a local
    /// model are folded back in by the finite-sample adjustment.
    #[default]
    FullTarget,
    /// Only the unlabeled deaths.
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantConfig {
    pub ensemble: EnsembleConfig,
    /// Settings for the local model trained by `domain` and `mix`.
    pub local_hyper: LcmHyper,
    pub local_gibbs: GibbsConfig,
    pub estimand: Estimand,
}

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub posterior: GlobalPosterior,
    /// Deaths that entered the global fit without a label.
    pub classification: Classification,
    pub csmf_estimate: Vec<f64>,
    /// Cause counts of deaths used to train the local model.
    pub heldout_counts: Vec<usize>,
    pub local_summary: Option<BaseModelSummary>,
    /// Death ids used to train the local model.
    pub local_ids: Vec<String>,
    /// Death ids whose labels entered the global fit.
    pub partial_ids: Vec<String>,
}

fn split_indices(target: &Dataset) -> (Vec<usize>, Vec<usize>) {
    (0..target.len()).partition(|&i| target.records()[i].cause.is_some())
}

fn train_local(
    target: &Dataset,
    indices: &[usize],
    cfg: &VariantConfig,
) -> Result<BaseModelSummary, EnsembleError> {
    let local = target.subset(indices);
    let local = Dataset::new(
        format!("{}-local", target.domain_id()),
        local.records().to_vec(),
        target.causes().clone(),
        target.dict().clone(),
    )
    .expect("subset of a valid dataset");
    Ok(train_lcm(&local, &cfg.local_hyper, &cfg.local_gibbs)?)
}

/// Run one ensemble variant on a target whose labels are partially known.
///
/// * `plain` ignores all labels; with [`Estimand::Unlabeled`] it fits the
///   unlabeled deaths only.
/// * `partial` feeds known labels into the global fit.
/// * `domain` trains a local model on the labeled deaths, adds it as one more
///   source and fits on the unlabeled deaths only.
/// * `mix` splits the labeled deaths: one part trains the local model, the
///   other enters as partial labels.
pub fn run_variant(
    reg: &FederationRegistry,
    target: &Dataset,
    cfg: &VariantConfig,
) -> Result<VariantOutcome, EnsembleError> {
    let ens = &cfg.ensemble;
    ens.validate()?;
    let n0 = target.len();
    let n_causes = target.n_causes();
    let (labeled, unlabeled) = split_indices(target);
    let ids = |idx: &[usize]| -> Vec<String> { idx.iter().map(|&i| target.records()[i].death_id.clone()).collect() };
    let guard = |have: usize| {
        let need = 2 * n_causes;
        if have < need {
            Err(EnsembleError::InsufficientLocalLabels { have, need })
        } else {
            Ok(())
        }
    };

    match ens.variant {
        EnsembleVariant::Plain => {
            let phi = build_phi(reg, target)?;
            // labels are ignored, but when only the unlabeled deaths are of
            // interest the labeled ones are left out of the fit
            let phi = match cfg.estimand {
                Estimand::FullTarget => phi,
                Estimand::Unlabeled => phi.subset(&unlabeled),
            };
            let posterior = fit_global(&phi, None, ens)?;
            let classification = classify(&phi, &posterior)?;
            let csmf_estimate = posterior.pi_mean();
            Ok(VariantOutcome {
                posterior,
                classification,
                csmf_estimate,
                heldout_counts: vec![0; n_causes],
                local_summary: None,
                local_ids: Vec::new(),
                partial_ids: Vec::new(),
            })
        }
        EnsembleVariant::Partial => {
            let phi = build_phi(reg, target)?;
            let labels = target.labels();
            let posterior = fit_global(&phi, Some(&labels), ens)?;
            let classification = classify(&phi.subset(&unlabeled), &posterior)?;
            let csmf_estimate = posterior.pi_mean();
            Ok(VariantOutcome {
                posterior,
                classification,
                csmf_estimate,
                heldout_counts: vec![0; n_causes],
                local_summary: None,
                local_ids: Vec::new(),
                partial_ids: ids(&labeled),
            })
        }
        EnsembleVariant::Domain => {
            guard(labeled.len())?;
            let local = train_local(target, &labeled, cfg)?;
            let reg = reg.with_model(local.clone())?;
            let rest = target.subset(&unlabeled);
            let phi = build_phi(&reg, &rest)?;
            let posterior = fit_global(&phi, None, ens)?;
            let classification = classify(&phi, &posterior)?;
            let heldout_counts = cause_counts(&target.subset(&labeled));
            let csmf_estimate = finish_estimate(&posterior, n0, &heldout_counts, cfg.estimand)?;
            Ok(VariantOutcome {
                posterior,
                classification,
                csmf_estimate,
                heldout_counts,
                local_summary: Some(local),
                local_ids: ids(&labeled),
                partial_ids: Vec::new(),
            })
        }
        EnsembleVariant::Mix => {
            guard(labeled.len())?;
            let mut shuffled = labeled.clone();
            let mut rng = stream_rng(derive_seed(ens.seed, MIX_SPLIT_SALT), 0);
            shuffled.shuffle(&mut rng);
            let n_local = ((ens.mix_split_fraction * labeled.len() as f64).round() as usize).clamp(1, labeled.len());
            let mut local_idx = shuffled[..n_local].to_vec();
            local_idx.sort_unstable();
            let mut is_local = vec![false; n0];
            local_idx.iter().for_each(|&i| is_local[i] = true);
            let global_idx: Vec<usize> = (0..n0).filter(|&i| !is_local[i]).collect();

            let local = train_local(target, &local_idx, cfg)?;
            let reg = reg.with_model(local.clone())?;
            let rest = target.subset(&global_idx);
            let phi = build_phi(&reg, &rest)?;
            let labels = rest.labels();
            let posterior = fit_global(&phi, Some(&labels), ens)?;
            let unlabeled_pos: Vec<usize> = (0..rest.len()).filter(|&k| labels[k].is_none()).collect();
            let classification = classify(&phi.subset(&unlabeled_pos), &posterior)?;
            let heldout_counts = cause_counts(&target.subset(&local_idx));
            let csmf_estimate = finish_estimate(&posterior, n0, &heldout_counts, cfg.estimand)?;
            let partial: Vec<usize> = global_idx
                .iter()
                .copied()
                .filter(|&i| target.records()[i].cause.is_some())
                .collect();
            Ok(VariantOutcome {
                posterior,
                classification,
                csmf_estimate,
                heldout_counts,
                local_summary: Some(local),
                local_ids: ids(&local_idx),
                partial_ids: ids(&partial),
            })
        }
    }
}

fn finish_estimate(
    posterior: &GlobalPosterior,
    n0: usize,
    heldout: &[usize],
    estimand: Estimand,
) -> Result<Vec<f64>, EnsembleError> {
    let pi = posterior.pi_mean();
    match estimand {
        Estimand::FullTarget => adjust_csmf(&pi, n0, heldout),
        Estimand::Unlabeled => Ok(pi),
    }
}
