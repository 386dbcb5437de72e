use rayon::prelude::*;

use super::EnsembleError;
use crate::data::Dataset;
use crate::exchange::FederationRegistry;
use crate::lcm::CompiledSummary;

/// `log p_m(x_i | c)` for every death, cause and source model; `-inf` exactly
/// where model `m` has no parameters for cause `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTensor {
    n_deaths: usize,
    n_causes: usize,
    n_models: usize,
    /// [i][c][m], row-major
    log_phi: Vec<f64>,
    /// [c][m]
    present: Vec<bool>,
    death_ids: Vec<String>,
    domain_ids: Vec<String>,
}

impl PhiTensor {
    /// Assemble from raw parts. `log_phi` is indexed `[i][c][m]`.
    pub fn from_parts(
        log_phi: Vec<f64>,
        present: Vec<bool>,
        n_causes: usize,
        n_models: usize,
        death_ids: Vec<String>,
        domain_ids: Vec<String>,
    ) -> Result<Self, EnsembleError> {
        let n = death_ids.len();
        if present.len() != n_causes * n_models
            || log_phi.len() != n * n_causes * n_models
            || domain_ids.len() != n_models
        {
            return Err(EnsembleError::DimensionMismatch(format!(
                "phi parts do not match n={n}, C={n_causes}, M={n_models}"
            )));
        }
        for (idx, v) in log_phi.iter().enumerate() {
            let cm = idx % (n_causes * n_models);
            let ok = if present[cm] {
                v.is_finite() && *v <= 0.0
            } else {
                *v == f64::NEG_INFINITY
            };
            if !ok {
                return Err(EnsembleError::DimensionMismatch(format!(
                    "log_phi entry {idx} = {v} inconsistent with presence flags"
                )));
            }
        }
        Ok(Self {
            n_deaths: n,
            n_causes,
            n_models,
            log_phi,
            present,
            death_ids,
            domain_ids,
        })
    }

    pub fn n_deaths(&self) -> usize {
        self.n_deaths
    }

    pub fn n_causes(&self) -> usize {
        self.n_causes
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn death_ids(&self) -> &[String] {
        &self.death_ids
    }

    pub fn domain_ids(&self) -> &[String] {
        &self.domain_ids
    }

    pub fn get(&self, death: usize, cause: usize, model: usize) -> f64 {
        self.log_phi[(death * self.n_causes + cause) * self.n_models + model]
    }

    /// All `C*M` entries of one death.
    pub fn row(&self, death: usize) -> &[f64] {
        let w = self.n_causes * self.n_models;
        &self.log_phi[death * w..(death + 1) * w]
    }

    pub fn is_present(&self, cause: usize, model: usize) -> bool {
        self.present[cause * self.n_models + model]
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    /// Causes no model covers.
    pub fn uncovered_causes(&self) -> Vec<usize> {
        (0..self.n_causes)
            .filter(|&c| (0..self.n_models).all(|m| !self.is_present(c, m)))
            .collect()
    }

    /// Deaths at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> PhiTensor {
        let mut log_phi = Vec::with_capacity(indices.len() * self.n_causes * self.n_models);
        for &i in indices {
            log_phi.extend_from_slice(self.row(i));
        }
        PhiTensor {
            n_deaths: indices.len(),
            n_causes: self.n_causes,
            n_models: self.n_models,
            log_phi,
            present: self.present.clone(),
            death_ids: indices.iter().map(|&i| self.death_ids[i].clone()).collect(),
            domain_ids: self.domain_ids.clone(),
        }
    }

    /// A one-model tensor restricted to `causes` (in the given order).
    pub fn single_model(&self, model: usize, causes: &[usize]) -> PhiTensor {
        let mut log_phi = Vec::with_capacity(self.n_deaths * causes.len());
        for i in 0..self.n_deaths {
            for &c in causes {
                log_phi.push(self.get(i, c, model));
            }
        }
        PhiTensor {
            n_deaths: self.n_deaths,
            n_causes: causes.len(),
            n_models: 1,
            log_phi,
            present: causes.iter().map(|&c| self.is_present(c, model)).collect(),
            death_ids: self.death_ids.clone(),
            domain_ids: vec![self.domain_ids[model].clone()],
        }
    }
}

/// Evaluate every registry model on every target death.
pub fn build_phi(reg: &FederationRegistry, target: &Dataset) -> Result<PhiTensor, EnsembleError> {
    if target.dict().fingerprint() != reg.dict_fingerprint() {
        return Err(EnsembleError::FingerprintMismatch {
            what: "symptom dictionary",
        });
    }
    if target.causes().fingerprint() != reg.cause_list_fingerprint() {
        return Err(EnsembleError::FingerprintMismatch { what: "cause list" });
    }
    if !reg.is_complete() {
        return Err(EnsembleError::IncompleteRegistry(reg.uncovered_causes()));
    }
    build_phi_uncovered(reg, target)
}

/// [`build_phi`] without the coverage check: causes no model covers keep
/// all-`-inf` entries. Single-model fits restrict to covered causes anyway.
pub fn build_phi_uncovered(reg: &FederationRegistry, target: &Dataset) -> Result<PhiTensor, EnsembleError> {
    if target.dict().fingerprint() != reg.dict_fingerprint() {
        return Err(EnsembleError::FingerprintMismatch {
            what: "symptom dictionary",
        });
    }
    if target.causes().fingerprint() != reg.cause_list_fingerprint() {
        return Err(EnsembleError::FingerprintMismatch { what: "cause list" });
    }
    let n_causes = reg.n_causes();
    let n_models = reg.len();
    let compiled: Vec<CompiledSummary> = reg.summaries().iter().map(CompiledSummary::new).collect();
    let present: Vec<bool> = (0..n_causes)
        .flat_map(|c| compiled.iter().map(move |s| s.is_present(c)))
        .collect();
    let rows: Vec<Vec<f64>> = target
        .records()
        .par_iter()
        .map(|r| {
            let mut row = Vec::with_capacity(n_causes * n_models);
            for c in 0..n_causes {
                for s in &compiled {
                    row.push(s.loglik(&r.symptoms, c).unwrap_or(f64::NEG_INFINITY));
                }
            }
            row
        })
        .collect();
    Ok(PhiTensor {
        n_deaths: target.len(),
        n_causes,
        n_models,
        log_phi: rows.concat(),
        present,
        death_ids: target.records().iter().map(|r| r.death_id.clone()).collect(),
        domain_ids: reg.domain_ids(),
    })
}
