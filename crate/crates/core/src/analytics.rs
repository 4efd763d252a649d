//! Result pipeline: per-region normalization and best-case tallies,
//! least-squares models over batch results, and tax-share validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::{median, RunResult, ScenarioResult, ScenarioStatus};
use crate::error::{Error, Result};
use crate::fiscal::{FiscalCase, TaxKind};

/// Min-max normalization of one region's per-case values. All-equal input
/// maps to 0.5 everywhere.
pub fn normalize_qli(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("normalize_qli needs at least one value"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite QLI value {v}")));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// The case with the highest value; ties go to the lower case id.
pub fn best_case(values: &[(FiscalCase, f64)]) -> Option<FiscalCase> {
    let mut sorted: Vec<(FiscalCase, f64)> = values.to_vec();
    sorted.sort_by_key(|(c, _)| c.id());
    let mut best: Option<(FiscalCase, f64)> = None;
    let mut tied = false;
    for &(case, v) in &sorted {
        match best {
            None => best = Some((case, v)),
            Some((_, b)) if v > b => {
                best = Some((case, v));
                tied = false;
            }
            Some((_, b)) if v == b => tied = true,
            _ => {}
        }
    }
    if tied {
        if let Some((c, v)) = best {
            log::info!("best-case tie at {v}; choosing case {}", c.id());
        }
    }
    best.map(|(c, _)| c)
}

/// Counts of best cases, indexed by case id − 1.
pub fn best_case_tally<'a>(winners: impl IntoIterator<Item = &'a FiscalCase>) -> [usize; 4] {
    let mut out = [0; 4];
    for c in winners {
        out[c.id() as usize - 1] += 1;
    }
    out
}

/// Horizon-averaged macro indicators of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub avg_workers_per_firm: f64,
    pub avg_firm_profit: f64,
    pub gdp_index: f64,
    pub inflation: f64,
    pub unemployment: f64,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl RunSummary {
    pub fn of(run: &RunResult) -> Self {
        Self {
            avg_workers_per_firm: mean(run.months.iter().map(|m| m.avg_workers_per_firm)),
            avg_firm_profit: mean(run.months.iter().map(|m| m.avg_firm_profit)),
            gdp_index: mean(run.gdp_index()),
            inflation: mean(run.inflation()),
            unemployment: mean(run.months.iter().map(|m| m.unemployment)),
        }
    }
}

pub const CONTROL_NAMES: [&str; 6] = [
    "avg_workers_per_firm",
    "firm_profit",
    "gdp_index",
    "inflation",
    "unemployment",
    "municipality_count",
];

/// One (region, case) row of the regression data.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub apc_id: String,
    pub case: FiscalCase,
    pub alternative0: bool,
    pub mpf_distribution: bool,
    /// Unweighted mean over municipalities of the median final QLI.
    pub qli_final: f64,
    /// Values in [`CONTROL_NAMES`] order: medians over runs.
    pub controls: Vec<f64>,
    pub covariates: Vec<(String, f64)>,
}

/// Observations from a batch; scenarios without medians are skipped with a
/// warning. Rows are ordered by region id, then case id.
pub fn observations(results: &[ScenarioResult]) -> Vec<Observation> {
    let mut rows = Vec::new();
    for r in results {
        let Some(qli) = r.region_qli() else {
            log::warn!("scenario {} case {} has no median QLI; skipped", r.scenario, r.case.id());
            continue;
        };
        let summaries: Vec<RunSummary> = r.successes().map(RunSummary::of).collect();
        let med = |f: fn(&RunSummary) -> f64| median(&summaries.iter().map(f).collect::<Vec<_>>());
        rows.push(Observation {
            apc_id: r.scenario.clone(),
            case: r.case,
            alternative0: r.case.alternative0(),
            mpf_distribution: r.case.mpf_distribution(),
            qli_final: qli,
            controls: vec![
                med(|s| s.avg_workers_per_firm),
                med(|s| s.avg_firm_profit),
                med(|s| s.gdp_index),
                med(|s| s.inflation),
                med(|s| s.unemployment),
                r.municipality_ids.len() as f64,
            ],
            covariates: Vec::new(),
        });
    }
    rows.sort_by(|a, b| a.apc_id.cmp(&b.apc_id).then(a.case.id().cmp(&b.case.id())));
    rows
}

/// Per-region exogenous covariates, keyed by region id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Covariates {
    pub names: Vec<String>,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl Covariates {
    /// CSV with an `apc_id` column followed by numeric columns.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let key = headers
            .iter()
            .position(|h| h == "apc_id")
            .ok_or_else(|| Error::Parse {
                field: "apc_id".into(),
                message: "covariate file needs an apc_id column".into(),
            })?;
        let names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != key)
            .map(|(_, h)| h.to_string())
            .collect();
        let mut rows = BTreeMap::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut values = Vec::with_capacity(names.len());
            for (i, cell) in rec.iter().enumerate() {
                if i == key {
                    continue;
                }
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    field: format!("row {} column `{}`", line + 2, headers.get(i).unwrap_or("?")),
                    message: format!("`{cell}` is not a number"),
                })?;
                values.push(v);
            }
            rows.insert(rec.get(key).unwrap_or_default().to_string(), values);
        }
        Ok(Self { names, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Attaches covariates to every observation; every region must match.
    pub fn join(&self, observations: &mut [Observation]) -> Result<()> {
        let missing: BTreeSet<String> = observations
            .iter()
            .filter(|o| !self.rows.contains_key(&o.apc_id))
            .map(|o| o.apc_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::UnmatchedCovariates(missing.into_iter().collect()));
        }
        for o in observations {
            let values = &self.rows[&o.apc_id];
            o.covariates = self.names.iter().cloned().zip(values.iter().copied()).collect();
        }
        Ok(())
    }
}

/// Regressor sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    /// Case flags and region dummies.
    Simul1,
    /// Simul1 plus macro controls and municipality count.
    Simul2,
    /// Simul2 without region dummies.
    Simul3,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Simul1, Model::Simul2, Model::Simul3];

    pub fn name(self) -> &'static str {
        match self {
            Model::Simul1 => "Simul1",
            Model::Simul2 => "Simul2",
            Model::Simul3 => "Simul3",
        }
    }

    fn dummies(self) -> bool {
        matches!(self, Model::Simul1 | Model::Simul2)
    }

    fn controls(self) -> bool {
        matches!(self, Model::Simul2 | Model::Simul3)
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Model::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown model `{s}`; expected Simul1, Simul2 or Simul3")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub model: Model,
    pub columns: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Region whose dummy was dropped as the reference level.
    pub reference_apc: Option<String>,
}

pub const INTERCEPT: &str = "const";
pub const ALTERNATIVE0: &str = "alternative0";
pub const MPF: &str = "mpf_distribution";

/// Design matrix for `model`: intercept, the two case flags, then region
/// dummies (first region is the reference), controls and covariates.
pub fn build_dataset(observations: &[Observation], model: Model) -> Result<Dataset> {
    if observations.is_empty() {
        return Err(Error::invalid("no observations"));
    }
    let apcs: Vec<&str> = observations
        .iter()
        .map(|o| o.apc_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut columns = vec![INTERCEPT.to_string(), ALTERNATIVE0.to_string(), MPF.to_string()];
    if model.dummies() {
        columns.extend(apcs.iter().skip(1).map(|a| format!("apc[{a}]")));
    }
    if model.controls() {
        columns.extend(CONTROL_NAMES.iter().map(|s| s.to_string()));
    }
    let cov_names: Vec<String> = observations[0].covariates.iter().map(|(n, _)| n.clone()).collect();
    columns.extend(cov_names.iter().cloned());

    let n = observations.len();
    let k = columns.len();
    let mut x = DMatrix::zeros(n, k);
    let mut y = DVector::zeros(n);
    for (i, o) in observations.iter().enumerate() {
        let mut j = 0;
        let mut put = |v: f64| {
            x[(i, j)] = v;
            j += 1;
        };
        put(1.0);
        put(f64::from(u8::from(o.alternative0)));
        put(f64::from(u8::from(o.mpf_distribution)));
        if model.dummies() {
            for a in apcs.iter().skip(1) {
                put(f64::from(u8::from(o.apc_id == *a)));
            }
        }
        if model.controls() {
            for &c in &o.controls {
                put(c);
            }
        }
        for (_, v) in &o.covariates {
            put(*v);
        }
        y[i] = o.qli_final;
    }
    Ok(Dataset {
        model,
        columns,
        x,
        y,
        reference_apc: model.dummies().then(|| apcs[0].to_string()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

impl Coefficient {
    /// Conventional significance stars at 0.01 / 0.05 / 0.1.
    pub fn stars(&self) -> &'static str {
        match self.p_value {
            p if p < 0.01 => "***",
            p if p < 0.05 => "**",
            p if p < 0.1 => "*",
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    /// Number of estimated coefficients (the residual variance is not counted).
    pub k: usize,
    pub residuals: Vec<f64>,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Columns whose QR pivot is negligible after scaling every column to unit
/// norm; each is a linear combination of the columns before it.
pub fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let r = scaled.qr().r();
    let tol = 1e-9 * (x.nrows().max(x.ncols()) as f64).sqrt();
    (0..x.ncols()).filter(|&j| j >= r.nrows() || r[(j, j)].abs() <= tol).collect()
}

/// Ordinary least squares by Householder QR.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<FitResult> {
    let (n, k) = x.shape();
    if names.len() != k {
        return Err(Error::invalid(format!("{} column names for {k} columns", names.len())));
    }
    if y.len() != n {
        return Err(Error::invalid(format!("response has {} rows, design has {n}", y.len())));
    }
    if n <= k {
        return Err(Error::invalid(format!("need more observations ({n}) than regressors ({k})")));
    }
    let dependent = dependent_columns(x);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(dependent.iter().map(|&j| names[j].clone()).collect()));
    }
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient(names.to_vec()))?;
    let fitted = x * &beta;
    let resid = y - fitted;
    let rss = resid.norm_squared();
    let ybar = y.mean();
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let nf = n as f64;
    let kf = k as f64;
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let adj_r_squared = 1.0 - (1.0 - r_squared) * (nf - 1.0) / (nf - kf);
    let log_likelihood = -nf / 2.0 * ((2.0 * std::f64::consts::PI).ln() + (rss / nf).ln() + 1.0);
    let aic = 2.0 * kf - 2.0 * log_likelihood;
    let bic = kf * nf.ln() - 2.0 * log_likelihood;

    let sigma2 = rss / (nf - kf);
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient(names.to_vec()))?;
    let t_dist = StudentsT::new(0.0, 1.0, nf - kf).expect("positive degrees of freedom");
    let coefficients = (0..k)
        .map(|j| {
            let var = sigma2 * r_inv.row(j).norm_squared();
            let se = var.sqrt();
            let t = beta[j] / se;
            let p = if t.is_finite() { 2.0 * (1.0 - t_dist.cdf(t.abs())) } else { 0.0 };
            Coefficient {
                name: names[j].clone(),
                estimate: beta[j],
                std_error: se,
                t_stat: t,
                p_value: p,
            }
        })
        .collect();
    Ok(FitResult {
        coefficients,
        r_squared,
        adj_r_squared,
        log_likelihood,
        aic,
        bic,
        n_obs: n,
        k,
        residuals: resid.iter().copied().collect(),
    })
}

/// A fitted model plus the columns removed to make the design full rank.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub model: Model,
    pub fit: FitResult,
    pub dropped: Vec<String>,
    pub reference_apc: Option<String>,
}

/// Fits `model`, dropping and reporting columns that are collinear with
/// earlier ones (for example the municipality count, which is constant
/// within a region and so spanned by the region dummies).
pub fn fit_model(observations: &[Observation], model: Model) -> Result<ModelFit> {
    let mut data = build_dataset(observations, model)?;
    let mut dropped = Vec::new();
    loop {
        match ols_fit(&data.x, &data.y, &data.columns) {
            Ok(fit) => {
                return Ok(ModelFit {
                    model,
                    fit,
                    dropped,
                    reference_apc: data.reference_apc,
                })
            }
            Err(Error::RankDeficient(cols)) => {
                let protected = [INTERCEPT, ALTERNATIVE0, MPF];
                if cols.iter().any(|c| protected.contains(&c.as_str())) || cols.is_empty() {
                    return Err(Error::RankDeficient(cols));
                }
                log::warn!("{}: dropping collinear columns {}", model.name(), cols.join(", "));
                let keep: Vec<usize> = (0..data.columns.len())
                    .filter(|&j| !cols.contains(&data.columns[j]))
                    .collect();
                data.x = data.x.select_columns(&keep);
                data.columns = keep.iter().map(|&j| data.columns[j].clone()).collect();
                dropped.extend(cols);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Plain-text table: coefficient with stars, standard error beneath in
/// parentheses, then the fit statistics block. Region dummies are
/// summarized in one line.
pub fn regression_text(fits: &[ModelFit]) -> String {
    let mut rows: Vec<String> = Vec::new();
    for f in fits {
        for c in &f.fit.coefficients {
            if !c.name.starts_with("apc[") && !rows.contains(&c.name) {
                rows.push(c.name.clone());
            }
        }
    }
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(10).max(22);
    let mut out = String::new();
    let _ = write!(out, "{:width$}", "");
    for f in fits {
        let _ = write!(out, " {:>16}", f.model.name());
    }
    out.push('\n');
    for name in &rows {
        let _ = write!(out, "{name:width$}");
        for f in fits {
            let cell = f
                .fit
                .coefficient(name)
                .map(|c| format!("{:.4}{}", c.estimate, c.stars()))
                .unwrap_or_default();
            let _ = write!(out, " {cell:>16}");
        }
        out.push('\n');
        let _ = write!(out, "{:width$}", "");
        for f in fits {
            let cell = f
                .fit
                .coefficient(name)
                .map(|c| format!("({:.4})", c.std_error))
                .unwrap_or_default();
            let _ = write!(out, " {cell:>16}");
        }
        out.push('\n');
    }
    let stat = |label: &str, g: &dyn Fn(&ModelFit) -> String| {
        let mut line = format!("{label:width$}");
        for f in fits {
            let _ = write!(line, " {:>16}", g(f));
        }
        line.push('\n');
        line
    };
    out.push_str(&stat("region dummies", &|f| {
        let n = f.fit.coefficients.iter().filter(|c| c.name.starts_with("apc[")).count();
        if n > 0 { format!("yes ({n})") } else { "no".into() }
    }));
    out.push_str(&stat("Observations", &|f| f.fit.n_obs.to_string()));
    out.push_str(&stat("R-squared Adj", &|f| format!("{:.4}", f.fit.adj_r_squared)));
    out.push_str(&stat("Log-likelihood", &|f| format!("{:.2}", f.fit.log_likelihood)));
    out.push_str(&stat("AIC", &|f| format!("{:.2}", f.fit.aic)));
    out.push_str(&stat("BIC", &|f| format!("{:.2}", f.fit.bic)));
    for f in fits {
        if !f.dropped.is_empty() {
            let _ = writeln!(out, "{}: dropped collinear columns: {}", f.model.name(), f.dropped.join(", "));
        }
        if let Some(r) = &f.reference_apc {
            let _ = writeln!(out, "{}: reference region {r}", f.model.name());
        }
    }
    out.push_str("Significance: *** p<0.01, ** p<0.05, * p<0.1\n");
    out
}

/// Tax-share and macro summary of a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub label: String,
    pub total_tax: f64,
    pub gdp: f64,
    /// `None` when no output was produced.
    pub tax_to_gdp: Option<f64>,
    /// Shares of each tax kind in the total; `None` when nothing was collected.
    pub shares: Option<[f64; TaxKind::COUNT]>,
    pub mean_inflation: f64,
    pub mean_unemployment: f64,
    pub flags: Vec<String>,
}

/// Optional acceptable ranges for the validation report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationTargets {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tax_to_gdp: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consumption_share: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub personal_income_share: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transmission_share: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub company_share: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub property_share: Option<(f64, f64)>,
}

impl ValidationTargets {
    fn share_band(&self, kind: TaxKind) -> Option<(f64, f64)> {
        match kind {
            TaxKind::Consumption => self.consumption_share,
            TaxKind::PersonalIncome => self.personal_income_share,
            TaxKind::Transmission => self.transmission_share,
            TaxKind::Company => self.company_share,
            TaxKind::Property => self.property_share,
        }
    }
}

fn flag_row(row: &mut ValidationRow, targets: &ValidationTargets) {
    match row.shares {
        None => row.flags.push("tax shares undefined: no tax collected".into()),
        Some(shares) => {
            for kind in TaxKind::ALL {
                if let Some((lo, hi)) = targets.share_band(kind) {
                    let s = shares[kind.index()];
                    if !(lo..=hi).contains(&s) {
                        row.flags.push(format!("{kind} share {s:.4} outside [{lo}, {hi}]"));
                    }
                }
            }
        }
    }
    if let (Some(r), Some((lo, hi))) = (row.tax_to_gdp, targets.tax_to_gdp) {
        if !(lo..=hi).contains(&r) {
            row.flags.push(format!("tax/GDP {r:.4} outside [{lo}, {hi}]"));
        }
    }
}

pub fn validation_row(label: &str, run: &RunResult, targets: &ValidationTargets) -> ValidationRow {
    let mut by_kind = [0.0; TaxKind::COUNT];
    for m in &run.months {
        for (acc, v) in by_kind.iter_mut().zip(&m.collected) {
            *acc += v;
        }
    }
    let total: f64 = by_kind.iter().sum();
    let gdp: f64 = run.months.iter().map(|m| m.output_value).sum();
    let mut row = ValidationRow {
        label: label.to_string(),
        total_tax: total,
        gdp,
        tax_to_gdp: (gdp > 0.0).then(|| total / gdp),
        shares: (total > 0.0).then(|| by_kind.map(|v| v / total)),
        mean_inflation: mean(run.inflation()),
        mean_unemployment: mean(run.months.iter().map(|m| m.unemployment)),
        flags: Vec::new(),
    };
    flag_row(&mut row, targets);
    row
}

/// Per-run rows followed by a `median` row over all runs.
pub fn validation_report(runs: &[&RunResult], targets: &ValidationTargets) -> Vec<ValidationRow> {
    let mut rows: Vec<ValidationRow> = runs
        .iter()
        .map(|r| validation_row(&format!("{}_{}_{}", r.scenario, r.case.id(), r.seed), r, targets))
        .collect();
    if rows.is_empty() {
        return rows;
    }
    let med = |f: &dyn Fn(&ValidationRow) -> f64| median(&rows.iter().map(f).collect::<Vec<_>>());
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.tax_to_gdp).collect();
    let defined: Vec<[f64; TaxKind::COUNT]> = rows.iter().filter_map(|r| r.shares).collect();
    let shares = (!defined.is_empty()).then(|| {
        let mut s = [0.0; TaxKind::COUNT];
        for (k, v) in s.iter_mut().enumerate() {
            *v = median(&defined.iter().map(|d| d[k]).collect::<Vec<_>>());
        }
        s
    });
    let mut summary = ValidationRow {
        label: "median".into(),
        total_tax: med(&|r| r.total_tax),
        gdp: med(&|r| r.gdp),
        tax_to_gdp: (!ratios.is_empty()).then(|| median(&ratios)),
        shares,
        mean_inflation: med(&|r| r.mean_inflation),
        mean_unemployment: med(&|r| r.mean_unemployment),
        flags: Vec::new(),
    };
    flag_row(&mut summary, targets);
    rows.push(summary);
    rows
}

/// Successful runs of every scenario, in batch order.
pub fn all_runs(results: &[ScenarioResult]) -> Vec<&RunResult> {
    results.iter().flat_map(|r| r.successes()).collect()
}

/// Whether any scenario of the batch lacks medians.
pub fn batch_failed(results: &[ScenarioResult]) -> bool {
    results.iter().any(|r| r.status == ScenarioStatus::Failed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_affine() {
        let v = normalize_qli(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(v[0], 0.0);
        assert_relative_eq!(v[1], 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(v[2], 2.0 / 3.0, max_relative = 1e-15);
        assert_eq!(v[3], 1.0);
    }

    #[test]
    fn normalize_degenerate_and_bad() {
        assert_eq!(normalize_qli(&[0.3; 4]).unwrap(), vec![0.5; 4]);
        assert!(normalize_qli(&[1.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(normalize_qli(&[]).is_err());
    }

    fn quad(v: [f64; 4]) -> Vec<(FiscalCase, f64)> {
        FiscalCase::ALL.iter().copied().zip(v).collect()
    }

    #[test]
    fn best_case_examples() {
        assert_eq!(best_case(&quad([0.1, 0.9, 0.2, 0.3])), Some(FiscalCase::Case2));
        assert_eq!(best_case(&quad([0.5, 0.5, 0.1, 0.1])), Some(FiscalCase::Case1));
        assert_eq!(best_case(&[]), None);
    }

    #[test]
    fn tally_bins() {
        let w = [FiscalCase::Case2, FiscalCase::Case2, FiscalCase::Case4];
        assert_eq!(best_case_tally(&w), [0, 2, 0, 1]);
    }

    proptest! {
        #[test]
        fn normalization_keeps_argmax(v in prop::array::uniform4(-1e3f64..1e3)) {
            let raw = best_case(&quad(v));
            let n = normalize_qli(&v).unwrap();
            let normed = best_case(&quad([n[0], n[1], n[2], n[3]]));
            prop_assert_eq!(raw, normed);
            prop_assert!(n.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    /// Independent oracle: solve (X'X) b = X'y by Cholesky.
    fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let xtx = x.transpose() * x;
        let xty = x.transpose() * y;
        xtx.cholesky().expect("positive definite").solve(&xty)
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { rng.random_range(-5.0..5.0) });
        let y = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        (x, y)
    }

    #[test]
    fn random_problem_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let (x, y) = random_problem(&mut rng, 50, 4);
        let fit = ols_fit(&x, &y, &names(4)).unwrap();
        let oracle = normal_equations(&x, &y);
        for (c, o) in fit.coefficients.iter().zip(oracle.iter()) {
            assert_relative_eq!(c.estimate, *o, max_relative = 1e-8);
        }
    }

    #[test]
    fn exact_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, _) = random_problem(&mut rng, 30, 3);
        let y = &x * DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let fit = ols_fit(&x, &y, &names(3)).unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-10);
        assert_relative_eq!(fit.coefficients[1].estimate, -2.0, max_relative = 1e-10);
    }

    #[test]
    fn intercept_only_is_mean() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 10.0]);
        let x = DMatrix::from_element(4, 1, 1.0);
        let fit = ols_fit(&x, &y, &names(1)).unwrap();
        assert_relative_eq!(fit.coefficients[0].estimate, 4.0, max_relative = 1e-14);
    }

    #[test]
    fn information_criteria_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y) = random_problem(&mut rng, 40, 5);
        let f = ols_fit(&x, &y, &names(5)).unwrap();
        assert_eq!(f.aic, 2.0 * 5.0 - 2.0 * f.log_likelihood);
        assert_eq!(f.bic, 5.0 * 40f64.ln() - 2.0 * f.log_likelihood);
    }

    #[test]
    fn published_fit_statistics_consistent() {
        // 156 rows with 41 coefficients reproduce the published AIC/BIC
        // from the published log-likelihood
        let (n, k, ll): (f64, f64, f64) = (156.0, 41.0, 506.85);
        assert!((2.0 * k - 2.0 * ll - -931.69).abs() < 0.02);
        assert!((k * n.ln() - 2.0 * ll - -806.65).abs() < 0.02);
    }

    #[test]
    fn residuals_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, y) = random_problem(&mut rng, 60, 6);
        let f = ols_fit(&x, &y, &names(6)).unwrap();
        let r = DVector::from_vec(f.residuals.clone());
        for j in 0..6 {
            assert!(x.column(j).dot(&r).abs() <= 1e-8 * y.norm());
        }
    }

    #[test]
    fn rank_deficiency_named() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut x, y) = random_problem(&mut rng, 20, 4);
        let c = x.column(1) * 2.0 - x.column(2);
        x.set_column(3, &c);
        match ols_fit(&x, &y, &names(4)) {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols, vec!["x3".to_string()]),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_rows() {
        let x = DMatrix::from_element(3, 3, 1.0);
        let y = DVector::from_element(3, 1.0);
        assert!(ols_fit(&x, &y, &names(3)).is_err());
    }

    fn obs(apc: &str, case: FiscalCase, q: f64) -> Observation {
        Observation {
            apc_id: apc.into(),
            case,
            alternative0: case.alternative0(),
            mpf_distribution: case.mpf_distribution(),
            qli_final: q,
            controls: vec![1.0, 2.0, 100.0, 0.0, 0.1, 3.0],
            covariates: vec![],
        }
    }

    fn synthetic(n_apc: usize) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut out = Vec::new();
        for a in 0..n_apc {
            let level = rng.random_range(0.0..1.0);
            for case in FiscalCase::ALL {
                let mut o = obs(&format!("A{a:02}"), case, level + rng.random_range(-0.01..0.01));
                o.controls = (0..5).map(|_| rng.random_range(0.0..1.0)).chain([a as f64 % 3.0 + 2.0]).collect();
                out.push(o);
            }
        }
        out
    }

    #[test]
    fn dataset_counts_and_encoding() {
        let rows = synthetic(40);
        assert_eq!(rows.len(), 160);
        let d = build_dataset(&rows, Model::Simul1).unwrap();
        assert_eq!(d.x.nrows(), 160);
        assert_eq!(d.x.ncols(), 3 + 39);
        let case2 = rows.iter().position(|o| o.case == FiscalCase::Case2).unwrap();
        assert_eq!(d.x[(case2, 1)], 0.0);
        assert_eq!(d.x[(case2, 2)], 1.0);
        assert!(dependent_columns(&d.x).is_empty());
    }

    #[test]
    fn simul2_drops_municipality_count() {
        let fit = fit_model(&synthetic(10), Model::Simul2).unwrap();
        assert_eq!(fit.dropped, vec!["municipality_count".to_string()]);
        let fit3 = fit_model(&synthetic(10), Model::Simul3).unwrap();
        assert!(fit3.dropped.is_empty());
        assert!(fit3.fit.coefficient("municipality_count").is_some());
    }

    #[test]
    fn report_layout() {
        let fits = vec![fit_model(&synthetic(6), Model::Simul1).unwrap()];
        let text = regression_text(&fits);
        assert!(text.contains("alternative0"));
        assert!(text.contains("Observations"));
        assert!(text.contains("AIC"));
        assert!(!text.contains("apc[A01]"));
    }

    #[test]
    fn covariate_join() {
        let csv = "apc_id,income\nA00,1.5\nA01,2.5\n";
        let cov = Covariates::from_csv_reader(csv.as_bytes()).unwrap();
        let mut rows = synthetic(2);
        cov.join(&mut rows).unwrap();
        assert_eq!(rows[4].covariates, vec![("income".to_string(), 2.5)]);
        let mut more = synthetic(3);
        match cov.join(&mut more) {
            Err(Error::UnmatchedCovariates(m)) => assert_eq!(m, vec!["A02".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_covariate_cell() {
        let csv = "apc_id,income\nA00,abc\n";
        assert!(matches!(Covariates::from_csv_reader(csv.as_bytes()), Err(Error::Parse { .. })));
    }
}
