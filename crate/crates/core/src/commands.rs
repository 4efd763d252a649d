//! The subcommands behind the `metrosim` binary: batch execution plus the
//! CSV and text reports each command writes.
//!
//! Every file is UTF-8 with LF line endings, every CSV has a header, and
//! rows come out in a fixed order, so a report is reproducible byte for
//! byte from (config, seed) whatever the thread count.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::analytics::{
    best_case, best_case_tally, fit_model, normalize_qli, observations, regression_text, validation_report,
    Covariates, Model, Observation, CONTROL_NAMES,
};
use crate::config::{scenarios, ScenarioConfig};
use crate::engine::{run_batch, RunResult, ScenarioResult, ScenarioStatus};
use crate::error::{Error, Result};
use crate::fiscal::{FiscalCase, TaxKind};
use crate::rng::{substream, Stream};
use crate::worldgen::{generate_region_with, save_region, RegionGenParams, RegionSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INVARIANT: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

/// Process exit code for an error that stopped a command.
pub fn exit_code_for(err: &Error) -> i32 {
    if err.is_invariant() {
        EXIT_INVARIANT
    } else {
        EXIT_CONFIG
    }
}

/// Overrides shared by the batch commands.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOptions {
    pub out_dir: PathBuf,
    pub jobs: usize,
    /// Region file replacing the config's `[region]` table.
    pub region: Option<PathBuf>,
    pub seed: Option<u64>,
    pub runs: Option<u32>,
    /// Case filter replacing the config's `cases` (or `case_id` for `run`).
    pub cases: Option<Vec<u8>>,
    /// Restrict to these region ids.
    pub apcs: Option<Vec<String>>,
    /// Skip the per-run series CSVs.
    pub no_run_files: bool,
}

impl CommandOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            jobs: 1,
            region: None,
            seed: None,
            runs: None,
            cases: None,
            apcs: None,
            no_run_files: false,
        }
    }
}

/// What a command wrote and how it ended.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandReport {
    pub exit_code: i32,
    /// Files written, relative to the output directory, in write order.
    pub files: Vec<String>,
    /// Short human-readable summary for the terminal.
    pub summary: String,
}

fn apply_overrides(config: &ScenarioConfig, opts: &CommandOptions, single_case: bool) -> Result<ScenarioConfig> {
    let mut c = config.clone();
    if let Some(s) = opts.seed {
        c.seed = s;
    }
    if let Some(r) = opts.runs {
        c.runs_per_scenario = r;
    }
    if let Some(cases) = &opts.cases {
        if single_case {
            if cases.len() != 1 {
                return Err(Error::Config {
                    path: "--cases".into(),
                    message: "run takes exactly one case".into(),
                });
            }
            c.case_id = cases[0];
        } else {
            c.cases = cases.clone();
        }
    }
    c.validate()?;
    Ok(c)
}

fn select_regions(config: &ScenarioConfig, opts: &CommandOptions) -> Result<Vec<RegionSpec>> {
    let regions = config.regions(opts.region.as_deref())?;
    let Some(wanted) = &opts.apcs else { return Ok(regions) };
    for w in wanted {
        if !regions.iter().any(|r| &r.id == w) {
            return Err(Error::Config {
                path: "--apc".into(),
                message: format!("no region with id `{w}`"),
            });
        }
    }
    Ok(regions.into_iter().filter(|r| wanted.contains(&r.id)).collect())
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let mut f = fs::File::create(self.dir.join(name))?;
        f.write_all(body.as_bytes())?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// File name of one run's series: `{scenario}_{case}_{seed}.csv`.
pub fn run_file_name(run: &RunResult) -> String {
    format!("{}_{}_{}.csv", run.scenario, run.case.id(), run.seed)
}

fn run_series_header() -> Vec<&'static str> {
    let mut h = vec!["month", "municipality", "qli", "population"];
    h.extend(INFLOW_COLUMNS);
    h.extend([
        "gdp_index",
        "inflation",
        "unemployment",
        "avg_workers_per_firm",
        "avg_firm_profit",
        "output_value",
        "consumption",
        "housing_transactions",
    ]);
    h
}

const INFLOW_COLUMNS: [&str; TaxKind::COUNT] = [
    "inflow_consumption",
    "inflow_personal_income",
    "inflow_transmission",
    "inflow_company",
    "inflow_property",
];

fn run_series_rows(run: &RunResult) -> Vec<Vec<String>> {
    let gdp = run.gdp_index();
    let inflation = run.inflation();
    let mut rows = Vec::new();
    for (t, m) in run.months.iter().enumerate() {
        for (i, id) in run.municipality_ids.iter().enumerate() {
            let mut row = vec![m.month.to_string(), id.clone(), num(m.qli[i]), m.population[i].to_string()];
            row.extend(m.inflows[i].iter().map(|&v| num(v)));
            row.extend([
                num(gdp[t]),
                num(inflation[t]),
                num(m.unemployment),
                num(m.avg_workers_per_firm),
                num(m.avg_firm_profit),
                num(m.output_value),
                num(m.consumption),
                m.housing_transactions.to_string(),
            ]);
            rows.push(row);
        }
    }
    rows
}

/// Long format: one value per row. Municipal metrics carry the
/// municipality id; region-wide ones use `all`.
fn long_rows(results: &[ScenarioResult]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in results {
        for (run_idx, outcome) in r.runs.iter().enumerate() {
            let Ok(run) = &outcome.result else { continue };
            let gdp = run.gdp_index();
            let inflation = run.inflation();
            for (t, m) in run.months.iter().enumerate() {
                let mut push = |muni: &str, metric: &str, value: f64| {
                    rows.push(vec![
                        r.scenario.clone(),
                        r.case.id().to_string(),
                        run_idx.to_string(),
                        m.month.to_string(),
                        muni.to_string(),
                        metric.to_string(),
                        num(value),
                    ]);
                };
                for (i, id) in run.municipality_ids.iter().enumerate() {
                    push(id, "qli", m.qli[i]);
                    push(id, "population", m.population[i] as f64);
                    push(id, "inflow", m.inflows[i].iter().sum());
                }
                push("all", "gdp_index", gdp[t]);
                push("all", "inflation", inflation[t]);
                push("all", "unemployment", m.unemployment);
            }
        }
    }
    rows
}

fn summary_rows(results: &[ScenarioResult]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in results {
        let ok = r.successes().count();
        let medians = r.median_final_qli.as_deref();
        for (i, id) in r.municipality_ids.iter().enumerate() {
            rows.push(vec![
                r.scenario.clone(),
                r.region_id.clone(),
                r.case.id().to_string(),
                status_name(r.status).to_string(),
                r.runs.len().to_string(),
                ok.to_string(),
                id.clone(),
                opt(medians.map(|m| m[i])),
                opt(r.region_qli()),
            ]);
        }
    }
    rows
}

fn status_name(s: ScenarioStatus) -> &'static str {
    match s {
        ScenarioStatus::Complete => "complete",
        ScenarioStatus::Partial => "partial",
        ScenarioStatus::Failed => "failed",
    }
}

const SUMMARY_HEADER: [&str; 9] = [
    "scenario",
    "region",
    "case",
    "status",
    "runs_attempted",
    "runs_ok",
    "municipality",
    "median_final_qli",
    "region_qli",
];

/// Per region: raw and normalized region QLI per case, and the winner.
pub struct Comparison {
    pub rows: Vec<(String, FiscalCase, f64, f64)>,
    pub winners: Vec<(String, FiscalCase)>,
}

pub fn compare_observations(obs: &[Observation]) -> Result<Comparison> {
    let mut rows = Vec::new();
    let mut winners = Vec::new();
    let mut start = 0;
    while start < obs.len() {
        let apc = &obs[start].apc_id;
        let end = start + obs[start..].iter().take_while(|o| &o.apc_id == apc).count();
        let group = &obs[start..end];
        let raw: Vec<f64> = group.iter().map(|o| o.qli_final).collect();
        let norm = normalize_qli(&raw)?;
        for (o, n) in group.iter().zip(&norm) {
            rows.push((apc.clone(), o.case, o.qli_final, *n));
        }
        let pairs: Vec<(FiscalCase, f64)> = group.iter().map(|o| (o.case, o.qli_final)).collect();
        if let Some(w) = best_case(&pairs) {
            winners.push((apc.clone(), w));
        }
        start = end;
    }
    Ok(Comparison { rows, winners })
}

struct Batch {
    config: ScenarioConfig,
    results: Vec<ScenarioResult>,
}

fn execute(config: &ScenarioConfig, opts: &CommandOptions, single_case: bool) -> Result<Batch> {
    let config = apply_overrides(config, opts, single_case)?;
    let mut regions = select_regions(&config, opts)?;
    let cases = if single_case {
        regions.truncate(1);
        vec![config.case()?]
    } else {
        config.cases()?
    };
    let spec = config.batch_spec()?;
    let scenarios = scenarios(&regions, &cases);
    log::info!(
        "running {} scenarios x {} runs, {} months, {} jobs",
        scenarios.len(),
        spec.runs,
        spec.horizon,
        opts.jobs
    );
    let results = run_batch(&scenarios, &spec, opts.jobs)?;
    Ok(Batch { config, results })
}

/// Files every batch command writes: the echoed config, per-run series,
/// and the batch summary.
fn write_common(out: &mut Output, batch: &Batch, opts: &CommandOptions) -> Result<()> {
    out.text("config.toml", &batch.config.to_toml_string())?;
    if !opts.no_run_files {
        for r in &batch.results {
            for run in r.successes() {
                out.csv(&format!("runs/{}", run_file_name(run)), &run_series_header(), run_series_rows(run))?;
            }
        }
    }
    out.csv("batch_summary.csv", &SUMMARY_HEADER, summary_rows(&batch.results))
}

fn failures(results: &[ScenarioResult]) -> Vec<(String, u64, String, bool)> {
    let mut out = Vec::new();
    for r in results {
        for o in &r.runs {
            if let Err(e) = &o.result {
                out.push((format!("{} case {}", r.scenario, r.case.id()), o.seed, e.to_string(), e.is_invariant()));
            }
        }
    }
    out
}

/// Writes MANIFEST last and works out the exit code.
fn finish(mut out: Output, results: &[ScenarioResult], command: &str, mut summary: String) -> Result<CommandReport> {
    let failed = failures(results);
    let complete = failed.is_empty();
    let mut m = String::new();
    let _ = writeln!(m, "command: {command}");
    let _ = writeln!(m, "status: {}", if complete { "complete" } else { "partial" });
    let _ = writeln!(m, "scenarios: {}", results.len());
    let _ = writeln!(m, "failed_runs: {}", failed.len());
    for (scenario, seed, err, _) in &failed {
        let _ = writeln!(m, "failed: {scenario} seed {seed}: {err}");
    }
    let _ = writeln!(m, "files:");
    for f in &out.files {
        let _ = writeln!(m, "  {f}");
    }
    out.text("MANIFEST", &m)?;
    let exit_code = if complete {
        EXIT_OK
    } else if failed.len() == results.iter().map(|r| r.runs.len()).sum::<usize>() && failed.iter().all(|f| f.3) {
        EXIT_INVARIANT
    } else {
        EXIT_PARTIAL
    };
    if !complete {
        let _ = writeln!(summary, "{} run(s) failed; see MANIFEST", failed.len());
    }
    Ok(CommandReport {
        exit_code,
        files: out.files,
        summary,
    })
}

/// One scenario: the first selected region under `case_id`.
pub fn run_command(config: &ScenarioConfig, opts: &CommandOptions) -> Result<CommandReport> {
    let batch = execute(config, opts, true)?;
    let mut out = Output::new(&opts.out_dir)?;
    write_common(&mut out, &batch, opts)?;
    let mut summary = String::new();
    for r in &batch.results {
        let _ = writeln!(
            summary,
            "{} case {}: {} of {} runs ok, region QLI {}",
            r.scenario,
            r.case.id(),
            r.successes().count(),
            r.runs.len(),
            r.region_qli().map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
        );
    }
    finish(out, &batch.results, "run", summary)
}

/// All selected regions under each requested case: normalized table,
/// best-case histogram and long-format export.
pub fn compare_command(config: &ScenarioConfig, opts: &CommandOptions) -> Result<CommandReport> {
    let batch = execute(config, opts, false)?;
    let mut out = Output::new(&opts.out_dir)?;
    write_common(&mut out, &batch, opts)?;
    out.csv(
        "long.csv",
        &["apc", "case", "run", "month", "municipality", "metric", "value"],
        long_rows(&batch.results),
    )?;
    let obs = observations(&batch.results);
    let cmp = compare_observations(&obs)?;
    out.csv(
        "normalized_qli.csv",
        &["apc", "case", "qli", "normalized_qli", "best"],
        cmp.rows.iter().map(|(apc, case, raw, n)| {
            let best = cmp.winners.iter().any(|(a, w)| a == apc && w == case);
            vec![apc.clone(), case.id().to_string(), num(*raw), num(*n), best.to_string()]
        }),
    )?;
    let tally = best_case_tally(cmp.winners.iter().map(|(_, w)| w));
    out.csv(
        "best_case.csv",
        &["case", "wins"],
        (0..4).map(|i| vec![(i + 1).to_string(), tally[i].to_string()]),
    )?;
    let summary = format!(
        "{} regions compared; best-case tally (cases 1-4): {:?}\n",
        cmp.winners.len(),
        tally
    );
    finish(out, &batch.results, "compare", summary)
}

/// Batch plus the three least-squares models, optionally joined with a
/// per-region covariate file.
pub fn regress_command(
    config: &ScenarioConfig,
    opts: &CommandOptions,
    covariates: Option<&Path>,
    models: &[Model],
) -> Result<CommandReport> {
    let covariates = covariates.map(Covariates::load).transpose()?;
    let batch = execute(config, opts, false)?;
    let mut out = Output::new(&opts.out_dir)?;
    write_common(&mut out, &batch, opts)?;
    let mut obs = observations(&batch.results);
    if let Some(c) = &covariates {
        c.join(&mut obs)?;
    }
    let mut header = vec!["apc", "case", "alternative0", "mpf_distribution", "qli_final"];
    header.extend(CONTROL_NAMES);
    let cov_names: Vec<String> = covariates.as_ref().map(|c| c.names.clone()).unwrap_or_default();
    header.extend(cov_names.iter().map(String::as_str));
    out.csv(
        "observations.csv",
        &header,
        obs.iter().map(|o| {
            let mut row = vec![
                o.apc_id.clone(),
                o.case.id().to_string(),
                o.alternative0.to_string(),
                o.mpf_distribution.to_string(),
                num(o.qli_final),
            ];
            row.extend(o.controls.iter().map(|&v| num(v)));
            row.extend(o.covariates.iter().map(|(_, v)| num(*v)));
            row
        }),
    )?;
    let fits = models.iter().map(|&m| fit_model(&obs, m)).collect::<Result<Vec<_>>>()?;
    let mut coef_rows = Vec::new();
    for f in &fits {
        for c in &f.fit.coefficients {
            coef_rows.push(vec![
                f.model.name().to_string(),
                c.name.clone(),
                num(c.estimate),
                num(c.std_error),
                num(c.t_stat),
                num(c.p_value),
            ]);
        }
    }
    out.csv("coefficients.csv", &["model", "term", "estimate", "std_error", "t_stat", "p_value"], coef_rows)?;
    out.csv(
        "fit_statistics.csv",
        &["model", "observations", "k", "r_squared", "adj_r_squared", "log_likelihood", "aic", "bic", "dropped"],
        fits.iter().map(|f| {
            vec![
                f.model.name().to_string(),
                f.fit.n_obs.to_string(),
                f.fit.k.to_string(),
                num(f.fit.r_squared),
                num(f.fit.adj_r_squared),
                num(f.fit.log_likelihood),
                num(f.fit.aic),
                num(f.fit.bic),
                f.dropped.join(";"),
            ]
        }),
    )?;
    let text = regression_text(&fits);
    out.text("regression.txt", &text)?;
    finish(out, &batch.results, "regress", text)
}

/// Batch plus the tax-share and macro report with target-band flags.
pub fn validate_command(config: &ScenarioConfig, opts: &CommandOptions) -> Result<CommandReport> {
    let batch = execute(config, opts, false)?;
    let mut out = Output::new(&opts.out_dir)?;
    write_common(&mut out, &batch, opts)?;
    let rows = validation_report(&crate::analytics::all_runs(&batch.results), &batch.config.validation);
    let mut header = vec!["label", "total_tax", "gdp", "tax_to_gdp"];
    let share_cols: Vec<String> = TaxKind::ALL.iter().map(|k| format!("{}_share", k.name())).collect();
    header.extend(share_cols.iter().map(String::as_str));
    header.extend(["mean_inflation", "mean_unemployment", "flags"]);
    out.csv(
        "validation.csv",
        &header,
        rows.iter().map(|r| {
            let mut row = vec![r.label.clone(), num(r.total_tax), num(r.gdp), opt(r.tax_to_gdp)];
            match r.shares {
                Some(s) => row.extend(s.iter().map(|&v| num(v))),
                None => row.extend(std::iter::repeat_n(String::new(), TaxKind::COUNT)),
            }
            row.extend([num(r.mean_inflation), num(r.mean_unemployment), r.flags.join("; ")]);
            row
        }),
    )?;
    let mut summary = String::new();
    if let Some(m) = rows.last() {
        let _ = writeln!(summary, "median tax/GDP: {}", opt(m.tax_to_gdp));
        if let Some(s) = m.shares {
            for k in TaxKind::ALL {
                let _ = writeln!(summary, "  {:<16} {:.4}", k.name(), s[k.index()]);
            }
        }
        let flagged = rows.iter().filter(|r| !r.flags.is_empty()).count();
        let _ = writeln!(summary, "{flagged} row(s) flagged outside target bands");
    }
    finish(out, &batch.results, "validate", summary)
}

/// Parameters of `gen-region`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenRegionOptions {
    pub id: String,
    pub name: String,
    pub municipalities: usize,
    pub total_population: u64,
    pub skew: f64,
    pub seed: u64,
    pub generator: RegionGenParams,
}

/// Writes one synthetic region schema file.
pub fn gen_region_command(opts: &GenRegionOptions, path: &Path) -> Result<RegionSpec> {
    let mut rng = substream(opts.seed, Stream::World);
    let region = generate_region_with(
        &opts.id,
        &opts.name,
        opts.municipalities,
        opts.total_population,
        opts.skew,
        &opts.generator,
        &mut rng,
    )?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    save_region(&region, path)?;
    Ok(region)
}
