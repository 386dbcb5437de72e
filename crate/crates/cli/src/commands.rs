//! Subcommand implementations. Each returns its outputs staged in memory;
//! [`dispatch`] adds the manifest and commits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bflva_core::calibration::{build_predictions, fit_calibration, CalibReport};
use bflva_core::data::{cause_counts, load_dataset, CauseList, Dataset, SymptomDictionary};
use bflva_core::ensemble::{
    adjust_csmf, build_phi, classification_csv, classify, run_variant, Estimand, GlobalPosterior, PosteriorReport,
    VariantConfig,
};
use bflva_core::eval::{run_lodo, ExperimentReport, Quartiles};
use bflva_core::exchange::{build_registry, summary_from_str, summary_to_string, FederationRegistry};
use bflva_core::lcm::train_lcm;
use bflva_core::simulate::simulate;
use bflva_core::stats::quantile;
use bflva_core::TOOL_VERSION;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::output::{to_json, Staged};
use crate::{Cli, CliError, Command, RunConfig};

const SUMMARY_SUFFIX: &str = ".summary.json";

fn need<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    let p = p
        .as_deref()
        .ok_or_else(|| CliError::validation(format!("config is missing paths.{key}")))?;
    exists(p)?;
    Ok(p)
}

fn exists(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::validation(format!("{} does not exist", p.display())))
    }
}

fn coordinates(cfg: &RunConfig) -> Result<(Arc<CauseList>, Arc<SymptomDictionary>), CliError> {
    let causes_path = need(&cfg.paths.causes, "causes")?;
    let dict_path = need(&cfg.paths.symptoms, "symptoms")?;
    let causes = CauseList::from_file(causes_path)
        .map_err(|e| CliError::validation(format!("{}: {e}", causes_path.display())))?;
    let dict = SymptomDictionary::from_file(dict_path)
        .map_err(|e| CliError::validation(format!("{}: {e}", dict_path.display())))?;
    Ok((Arc::new(causes), Arc::new(dict)))
}

fn load(path: &Path, causes: &Arc<CauseList>, dict: &Arc<SymptomDictionary>) -> Result<Dataset, CliError> {
    load_dataset(path, causes.clone(), dict.clone()).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn load_target(cfg: &RunConfig, causes: &Arc<CauseList>, dict: &Arc<SymptomDictionary>) -> Result<Dataset, CliError> {
    load(need(&cfg.paths.target, "target")?, causes, dict)
}

/// Summary files: `paths.summaries`, else `*.summary.json` in
/// `paths.summary_dir`, else in `<out>/summaries`.
fn summary_paths(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !cfg.paths.summaries.is_empty() {
        for p in &cfg.paths.summaries {
            exists(p)?;
        }
        return Ok(cfg.paths.summaries.clone());
    }
    let dir = cfg.paths.summary_dir.clone().unwrap_or_else(|| out.join("summaries"));
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| CliError::validation(format!("no summaries configured and {} unreadable: {e}", dir.display())))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.to_string_lossy().ends_with(SUMMARY_SUFFIX))
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(CliError::validation(format!("no *{SUMMARY_SUFFIX} files in {}", dir.display())));
    }
    Ok(found)
}

fn registry(
    cfg: &RunConfig,
    out: &Path,
    causes: &CauseList,
    dict: &SymptomDictionary,
) -> Result<FederationRegistry, CliError> {
    let paths = summary_paths(cfg, out)?;
    build_registry(&paths, causes, dict).map_err(CliError::runtime)
}

fn require_coverage(reg: &FederationRegistry, causes: &CauseList) -> Result<(), CliError> {
    let missing = reg.uncovered_causes();
    if missing.is_empty() {
        return Ok(());
    }
    let names: Vec<&str> = missing.iter().map(|&c| causes.name(c)).collect();
    Err(CliError::validation(format!(
        "registry is incomplete: no summary covers causes {}",
        names.join(", ")
    )))
}

fn validated<E: std::fmt::Display>(r: Result<(), E>) -> Result<(), CliError> {
    r.map_err(|e| CliError::validation(e.to_string()))
}

fn summary_file(domain: &str) -> String {
    format!("summaries/{domain}{SUMMARY_SUFFIX}")
}

fn csmf_csv(causes: &CauseList, rows: &[(f64, f64, f64)], estimate: &[f64]) -> String {
    let mut out = String::from("cause,mean,lower,upper,estimate\n");
    for (c, ((mean, lo, hi), est)) in rows.iter().zip(estimate).enumerate() {
        let _ = writeln!(out, "{},{mean},{lo},{hi},{est}", causes.name(c));
    }
    out
}

fn lambda_csv(report: &PosteriorReport) -> String {
    let mut out = String::from("cause");
    for d in &report.lambda.domains {
        out.push(',');
        out.push_str(d);
    }
    out.push('\n');
    for (name, row) in report.lambda.causes.iter().zip(&report.lambda.mean) {
        out.push_str(name);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn cmd_train(cfg: &RunConfig, domain: Option<&str>) -> Result<Staged, CliError> {
    let (causes, dict) = coordinates(cfg)?;
    if cfg.paths.datasets.is_empty() {
        return Err(CliError::validation("config lists no paths.datasets"));
    }
    for p in &cfg.paths.datasets {
        exists(p)?;
    }
    validated(cfg.lcm.validate())?;
    validated(cfg.gibbs.validate())?;
    let mut datasets = cfg
        .paths
        .datasets
        .iter()
        .map(|p| load(p, &causes, &dict))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(d) = domain {
        datasets.retain(|ds| ds.domain_id() == d);
        if datasets.is_empty() {
            return Err(CliError::validation(format!("no dataset with domain id {d:?}")));
        }
    }
    let summaries = datasets
        .par_iter()
        .map(|ds| {
            train_lcm(ds, &cfg.lcm, &cfg.gibbs)
                .map_err(|e| CliError::runtime(format!("training {}: {e}", ds.domain_id())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut staged = Staged::default();
    for s in &summaries {
        staged.add(summary_file(&s.domain_id), summary_to_string(s).map_err(CliError::runtime)?);
    }
    Ok(staged)
}

#[derive(Serialize)]
struct RegistryListing {
    domains: Vec<String>,
    cause_list_fingerprint: String,
    dict_fingerprint: String,
    /// Number of models containing each cause.
    coverage: BTreeMap<String, usize>,
    uncovered: Vec<String>,
    /// Embedded payload checksum of each summary.
    checksums: BTreeMap<String, String>,
}

fn cmd_export(cfg: &RunConfig, out: &Path) -> Result<Staged, CliError> {
    let (causes, dict) = coordinates(cfg)?;
    let reg = registry(cfg, out, &causes, &dict)?;
    let mut staged = Staged::default();
    let mut checksums = BTreeMap::new();
    for s in reg.summaries() {
        let text = summary_to_string(s).map_err(CliError::runtime)?;
        let value: serde_json::Value = serde_json::from_str(&text).expect("summary text is JSON");
        checksums.insert(s.domain_id.clone(), value["checksum"].as_str().unwrap_or_default().to_string());
        // round trip guards against writing something the importer would refuse
        summary_from_str(&text).map_err(CliError::runtime)?;
        staged.add(summary_file(&s.domain_id), text);
    }
    let listing = RegistryListing {
        domains: reg.domain_ids(),
        cause_list_fingerprint: reg.cause_list_fingerprint().to_string(),
        dict_fingerprint: reg.dict_fingerprint().to_string(),
        coverage: (0..causes.len())
            .map(|c| (causes.name(c).to_string(), reg.coverage()[c]))
            .collect(),
        uncovered: reg.uncovered_causes().iter().map(|&c| causes.name(c).to_string()).collect(),
        checksums,
    };
    staged.add_json("registry.json", &listing);
    Ok(staged)
}

fn cmd_ensemble(cfg: &RunConfig, out: &Path) -> Result<Staged, CliError> {
    let (causes, dict) = coordinates(cfg)?;
    validated(cfg.ensemble.validate())?;
    let target = load_target(cfg, &causes, &dict)?;
    let reg = registry(cfg, out, &causes, &dict)?;
    require_coverage(&reg, &causes)?;
    let vcfg = VariantConfig {
        ensemble: cfg.ensemble.clone(),
        local_hyper: cfg.lcm.clone(),
        local_gibbs: cfg.gibbs.clone(),
        estimand: cfg.estimand,
    };
    let outcome = run_variant(&reg, &target, &vcfg).map_err(CliError::runtime)?;
    let report = PosteriorReport::new(&outcome.posterior, &causes, &outcome.csmf_estimate);
    let rows: Vec<(f64, f64, f64)> = report.csmf.iter().map(|r| (r.mean, r.lower, r.upper)).collect();

    let mut staged = Staged::default();
    staged.add_json("posterior.json", &outcome.posterior);
    staged.add_json("report.json", &report);
    staged.add("csmf.csv", csmf_csv(&causes, &rows, &outcome.csmf_estimate));
    staged.add("lambda.csv", lambda_csv(&report));
    staged.add("classification.csv", classification_csv(&outcome.classification, &causes));
    if let Some(local) = &outcome.local_summary {
        staged.add(summary_file(&local.domain_id), summary_to_string(local).map_err(CliError::runtime)?);
    }
    Ok(staged)
}

fn cmd_classify(cfg: &RunConfig, out: &Path, posterior: Option<&Path>) -> Result<Staged, CliError> {
    let (causes, dict) = coordinates(cfg)?;
    let post_path = match posterior {
        Some(p) => {
            exists(p)?;
            p
        }
        None => need(&cfg.paths.posterior, "posterior")?,
    };
    let text = std::fs::read_to_string(post_path)
        .map_err(|e| CliError::validation(format!("{}: {e}", post_path.display())))?;
    let post: GlobalPosterior = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: not a posterior: {e}", post_path.display())))?;
    let target = load_target(cfg, &causes, &dict)?;
    let reg = registry(cfg, out, &causes, &dict)?;
    if reg.domain_ids() != post.domain_ids {
        return Err(CliError::validation(format!(
            "summaries {:?} do not match the posterior's sources {:?}",
            reg.domain_ids(),
            post.domain_ids
        )));
    }
    require_coverage(&reg, &causes)?;
    let phi = build_phi(&reg, &target).map_err(CliError::runtime)?;
    let cls = classify(&phi, &post).map_err(CliError::runtime)?;
    let mut staged = Staged::default();
    staged.add("classification.csv", classification_csv(&cls, &causes));
    Ok(staged)
}

fn cmd_calibrate(cfg: &RunConfig, out: &Path, beta_rate: Option<f64>) -> Result<Staged, CliError> {
    let (causes, dict) = coordinates(cfg)?;
    let mut ccfg = cfg.calibration.clone();
    if let Some(rate) = beta_rate {
        ccfg.beta_rate = rate;
    }
    validated(ccfg.validate())?;
    validated(cfg.ensemble.validate())?;
    let target = load_target(cfg, &causes, &dict)?;
    let reg = registry(cfg, out, &causes, &dict)?;
    let a = build_predictions(&reg, &target, &cfg.ensemble).map_err(CliError::runtime)?;
    let post = fit_calibration(&a, &target.labels(), &ccfg).map_err(CliError::runtime)?;
    let report = CalibReport::new(&post, &causes);
    let pi = post.pi_mean();
    let estimate = match cfg.estimand {
        Estimand::Unlabeled => pi,
        Estimand::FullTarget => adjust_csmf(&pi, target.len(), &cause_counts(&target)).map_err(CliError::runtime)?,
    };
    let rows: Vec<(f64, f64, f64)> = report.csmf.iter().map(|r| (r.mean, r.lower, r.upper)).collect();
    let mut staged = Staged::default();
    staged.add_json(
        "calibration.json",
        &json!({
            "report": report,
            "estimand": cfg.estimand,
            "csmf_estimate": estimate,
            "gamma_mean": post.gamma_mean,
            "config": ccfg,
        }),
    );
    staged.add("calibration_csmf.csv", csmf_csv(&causes, &rows, &estimate));
    Ok(staged)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<Staged, CliError> {
    let spec = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::validation("config has no [simulate] block"))?;
    validated(spec.validate())?;
    let sim = simulate(spec).map_err(CliError::runtime)?;
    let mut staged = Staged::default();
    staged.add("causes.txt", sim.causes.to_text());
    staged.add("symptoms.txt", sim.dict.to_text());
    for d in &sim.datasets {
        staged.add(format!("data/{}.csv", d.domain_id()), d.to_csv_string());
    }
    staged.add_json("ground_truth.json", &sim.truth);
    Ok(staged)
}

fn fmt_q(q: &Option<Quartiles>) -> String {
    q.map_or_else(
        || "NA".to_string(),
        |q| format!("{:.4} [{:.4}, {:.4}]", q.median, q.q1, q.q3),
    )
}

/// Per-fold table: median [q1, q3] over seeds for each method.
pub fn lodo_text(summary: &[bflva_core::eval::MethodSummary]) -> String {
    let mut out = String::new();
    let mut fold: Option<&str> = None;
    for s in summary {
        if fold != Some(s.target_domain.as_str()) {
            fold = Some(s.target_domain.as_str());
            let _ = writeln!(out, "target {}", s.target_domain);
            let _ = writeln!(out, "  {:<14} {:>5}  {:<26} {:<26} {:<26}", "method", "seeds", "csmf_acc", "top_acc", "balanced_acc");
        }
        let _ = writeln!(
            out,
            "  {:<14} {:>5}  {:<26} {:<26} {:<26}",
            s.method,
            s.n_seeds,
            fmt_q(&s.csmf_acc),
            fmt_q(&s.top_acc),
            fmt_q(&s.balanced_acc)
        );
    }
    out
}

fn cmd_lodo(cfg: &RunConfig) -> Result<Staged, CliError> {
    let (causes, dict) = coordinates(cfg)?;
    if cfg.paths.datasets.len() < 2 {
        return Err(CliError::validation("lodo needs at least two paths.datasets"));
    }
    for p in &cfg.paths.datasets {
        exists(p)?;
    }
    let lcfg = cfg.lodo_config();
    validated(lcfg.validate())?;
    let domains = cfg
        .paths
        .datasets
        .iter()
        .map(|p| load(p, &causes, &dict))
        .collect::<Result<Vec<_>, _>>()?;
    let report: ExperimentReport = run_lodo(&domains, &lcfg).map_err(CliError::runtime)?;
    for f in &report.failures {
        let what = f.method.as_deref().unwrap_or("fold");
        eprintln!("warning: target {} seed {} {what} skipped: {}", f.target_domain, f.seed, f.reason);
    }
    let summary = report.summary();
    let mut staged = Staged::default();
    staged.add("lodo.csv", report.to_csv());
    staged.add_json(
        "lodo_summary.json",
        &json!({
            "scenario": report.scenario,
            "estimand": report.estimand,
            "local_avg_aggregate": report.local_avg_aggregate,
            "summary": summary,
            "components": report.components,
            "failures": report.failures,
        }),
    );
    staged.add("lodo_summary.txt", lodo_text(&summary));
    Ok(staged)
}

/// Parse rows written by [`ExperimentReport::to_csv`].
fn summary_from_csv(text: &str) -> Result<Vec<bflva_core::eval::MethodSummary>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(ExperimentReport::CSV_HEADER) {
        return Err(CliError::validation("not a LODO CSV (unexpected header)"));
    }
    let parse = |s: &str| -> Result<Option<f64>, CliError> {
        if s == "NA" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| CliError::validation(format!("bad number {s:?}")))
        }
    };
    let mut groups: Vec<((String, String), [Vec<f64>; 3], usize)> = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(CliError::validation(format!("row {} has {} fields", i + 1, f.len())));
        }
        let key = (f[0].to_string(), f[1].to_string());
        let pos = match groups.iter().position(|g| g.0 == key) {
            Some(p) => p,
            None => {
                groups.push((key, Default::default(), 0));
                groups.len() - 1
            }
        };
        let g = &mut groups[pos];
        g.2 += 1;
        for (k, cell) in [f[4], f[5], f[6]].into_iter().enumerate() {
            if let Some(v) = parse(cell)? {
                g.1[k].push(v);
            }
        }
    }
    let quart = |v: &[f64]| {
        (!v.is_empty()).then(|| Quartiles {
            q1: quantile(v, 0.25),
            median: quantile(v, 0.5),
            q3: quantile(v, 0.75),
        })
    };
    Ok(groups
        .into_iter()
        .map(|((t, m), vals, n)| bflva_core::eval::MethodSummary {
            target_domain: t,
            method: m,
            n_seeds: n,
            csmf_acc: quart(&vals[0]),
            top_acc: quart(&vals[1]),
            balanced_acc: quart(&vals[2]),
        })
        .collect())
}

fn posterior_text(post: &GlobalPosterior, causes: &CauseList) -> String {
    let report = PosteriorReport::new(post, causes, &post.pi_mean());
    let mut out = String::new();
    let _ = writeln!(out, "chains {}  draws {}", report.chains, report.draws);
    if let Some(a) = report.acceptance_rate {
        let _ = writeln!(out, "lambda acceptance rate {a:.3}");
    }
    let _ = writeln!(out, "\n{:<20} {:>8} {:>8} {:>8} {:>7}", "cause", "mean", "2.5%", "97.5%", "rhat");
    for (row, rhat) in report.csmf.iter().zip(&report.rhat) {
        let rhat = rhat.map_or_else(|| "NA".to_string(), |r| format!("{r:.3}"));
        let _ = writeln!(out, "{:<20} {:>8.4} {:>8.4} {:>8.4} {:>7}", row.cause, row.mean, row.lower, row.upper, rhat);
    }
    let _ = write!(out, "\nsource weights\n{:<20}", "cause");
    for d in &report.lambda.domains {
        let _ = write!(out, " {d:>12}");
    }
    out.push('\n');
    for (name, row) in report.lambda.causes.iter().zip(&report.lambda.mean) {
        let _ = write!(out, "{name:<20}");
        for v in row {
            let _ = write!(out, " {v:>12.4}");
        }
        out.push('\n');
    }
    out
}

fn cmd_report(cfg: &RunConfig, input: &Path) -> Result<Staged, CliError> {
    exists(input)?;
    let text =
        std::fs::read_to_string(input).map_err(|e| CliError::validation(format!("{}: {e}", input.display())))?;
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let body = if input.extension().is_some_and(|e| e == "csv") {
        lodo_text(&summary_from_csv(&text)?)
    } else {
        let post: GlobalPosterior = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("{}: not a posterior: {e}", input.display())))?;
        let (causes, _) = coordinates(cfg)?;
        if causes.len() != post.n_causes {
            return Err(CliError::validation(format!(
                "posterior has {} causes, cause list has {}",
                post.n_causes,
                causes.len()
            )));
        }
        posterior_text(&post, &causes)
    };
    let mut staged = Staged::default();
    staged.add(format!("{stem}.report.txt"), body);
    Ok(staged)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'a str,
    command: &'a str,
    arguments: BTreeMap<&'static str, String>,
    config: &'a RunConfig,
    files: BTreeMap<String, String>,
}

fn arguments(cmd: &Command) -> BTreeMap<&'static str, String> {
    let mut a = BTreeMap::new();
    match cmd {
        Command::Train { domain: Some(d) } => {
            a.insert("domain", d.clone());
        }
        Command::Ensemble { variant: Some(v) } => {
            a.insert("variant", v.to_string());
        }
        Command::Classify { posterior: Some(p) } => {
            a.insert("posterior", p.display().to_string());
        }
        Command::Calibrate { beta_rate: Some(r) } => {
            a.insert("beta_rate", r.to_string());
        }
        Command::Report { input } => {
            a.insert("input", input.display().to_string());
        }
        _ => {}
    }
    a
}

/// Resolve the effective config, run the command and commit its outputs
/// together with `manifest-<command>.json`.
pub fn dispatch(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = Some(out.clone());
    }
    if let Command::Ensemble { variant: Some(v) } = &cli.command {
        cfg.ensemble.variant = *v;
    }
    let out = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    if cfg.lodo.seeds.is_empty() {
        return Err(CliError::validation("lodo.seeds must not be empty"));
    }

    let staged = match &cli.command {
        Command::Train { domain } => cmd_train(&cfg, domain.as_deref())?,
        Command::Export => cmd_export(&cfg, &out)?,
        Command::Ensemble { .. } => cmd_ensemble(&cfg, &out)?,
        Command::Classify { posterior } => cmd_classify(&cfg, &out, posterior.as_deref())?,
        Command::Calibrate { beta_rate } => cmd_calibrate(&cfg, &out, *beta_rate)?,
        Command::Simulate => cmd_simulate(&cfg)?,
        Command::Lodo => cmd_lodo(&cfg)?,
        Command::Report { input } => cmd_report(&cfg, input)?,
    };
    let name = cli.command.name();
    // the echo leaves out the output directory so reruns elsewhere match byte for byte
    let mut echo = cfg.clone();
    echo.paths.out = None;
    let manifest = Manifest {
        tool_version: TOOL_VERSION,
        command: name,
        arguments: arguments(&cli.command),
        config: &echo,
        files: staged.checksums(),
    };
    let mut staged = staged;
    staged.add(format!("manifest-{name}.json"), to_json(&manifest));
    staged.commit(&out)
}
