//! Scenario configuration files (TOML).
//!
//! Every model parameter is representable; anything left out takes its
//! default. Unknown keys are errors unless the caller asks for warnings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::ValidationTargets;
use crate::demographics::{DemographyParams, VitalRates};
use crate::economy::{MarketParams, TaxRates};
use crate::engine::{
    BatchSpec, FiscalParams, ModelParams, Scenario, WorldMode, DEFAULT_HORIZON_MONTHS, INCLUSIVE_HORIZON_MONTHS,
};
use crate::error::{Error, Result};
use crate::fiscal::{FiscalCase, MpfLookup, MpfTable};
use crate::housing::HousingParams;
use crate::rng::{substream, Stream};
use crate::worldgen::{
    default_batch, generate_region_with, load_region, RegionGenParams, RegionSpec, WorldConfig,
    DEFAULT_BATCH_COUNT, DEFAULT_BATCH_SEED,
};

/// What to do with keys the schema does not know.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownKeys {
    #[default]
    Error,
    Warn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSource {
    /// A region schema file (`path`).
    File,
    /// One synthetic region built from the generator fields.
    Generate,
    /// The shipped batch of synthetic regions (`count`, `seed`).
    DefaultBatch,
}

/// The `[region]` table. Which fields apply depends on `source`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<RegionSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub municipalities: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_population: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skew: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<RegionGenParams>,
}

impl RegionConfig {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            source: Some(RegionSource::File),
            path: Some(path.into()),
            ..Self::default()
        }
    }

    pub fn default_batch() -> Self {
        Self {
            source: Some(RegionSource::DefaultBatch),
            ..Self::default()
        }
    }

    fn check_fields(&self, source: RegionSource) -> Result<()> {
        let present: [(&str, bool); 8] = [
            ("path", self.path.is_some()),
            ("id", self.id.is_some()),
            ("name", self.name.is_some()),
            ("municipalities", self.municipalities.is_some()),
            ("total_population", self.total_population.is_some()),
            ("skew", self.skew.is_some()),
            ("count", self.count.is_some()),
            ("generator", self.generator.is_some()),
        ];
        let allowed: &[&str] = match source {
            RegionSource::File => &["path"],
            RegionSource::Generate => &["id", "name", "municipalities", "total_population", "skew", "generator"],
            RegionSource::DefaultBatch => &["count"],
        };
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                return Err(config_err(
                    format!("region.{key}"),
                    format!("not used with source = \"{}\"", source_name(source)),
                ));
            }
        }
        if source == RegionSource::File && self.path.is_none() {
            return Err(config_err("region.path", "required with source = \"file\""));
        }
        if source == RegionSource::File && self.seed.is_some() {
            return Err(config_err("region.seed", "not used with source = \"file\""));
        }
        Ok(())
    }

    /// Builds the regions this table describes. Relative paths resolve
    /// against `base_dir`; `fallback_seed` seeds a generated region when
    /// `seed` is absent.
    pub fn resolve(&self, base_dir: &Path, fallback_seed: u64) -> Result<Vec<RegionSpec>> {
        let source = self
            .source
            .ok_or_else(|| config_err("region.source", "missing region source (file, generate or default_batch)"))?;
        self.check_fields(source)?;
        match source {
            RegionSource::File => {
                let path = self.path.as_ref().expect("checked above");
                let path = if path.is_relative() { base_dir.join(path) } else { path.clone() };
                Ok(vec![load_region(&path)?])
            }
            RegionSource::Generate => {
                let params = self.generator.clone().unwrap_or_default();
                let mut rng = substream(self.seed.unwrap_or(fallback_seed), Stream::World);
                let region = generate_region_with(
                    self.id.as_deref().unwrap_or("APC"),
                    self.name.as_deref().unwrap_or("Synthetic region"),
                    self.municipalities.unwrap_or(5),
                    self.total_population.unwrap_or(100_000),
                    self.skew.unwrap_or(1.0),
                    &params,
                    &mut rng,
                )?;
                Ok(vec![region])
            }
            RegionSource::DefaultBatch => {
                let count = self.count.unwrap_or(DEFAULT_BATCH_COUNT);
                if count == 0 {
                    return Err(config_err("region.count", "must be at least 1"));
                }
                Ok(default_batch(count, self.seed.unwrap_or(DEFAULT_BATCH_SEED)))
            }
        }
    }
}

fn source_name(s: RegionSource) -> &'static str {
    match s {
        RegionSource::File => "file",
        RegionSource::Generate => "generate",
        RegionSource::DefaultBatch => "default_batch",
    }
}

/// The `[demography]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemographyConfig {
    /// CSV with bracket_start_age, bracket_end_age, monthly_mortality,
    /// monthly_fertility. Built-in table when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vital_rates_file: Option<PathBuf>,
    pub labor_entry_age_years: u32,
    pub retirement_age_years: u32,
    pub entrant_qualification_spread: f64,
    pub qualification_levels: u8,
}

impl Default for DemographyConfig {
    fn default() -> Self {
        let d = DemographyParams::default();
        Self {
            vital_rates_file: None,
            labor_entry_age_years: d.labor_entry_age_years,
            retirement_age_years: d.retirement_age_years,
            entrant_qualification_spread: d.entrant_qualification_spread,
            qualification_levels: d.qualification_levels,
        }
    }
}

/// The `[fiscal]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FiscalConfig {
    pub qli_unit_cost: f64,
    /// CSV with max_population, coefficient (empty bound on the last row).
    /// Built-in FPM ladder when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mpf_table_file: Option<PathBuf>,
    pub mpf_lookup: MpfLookup,
    pub freeze_mpf_shares: bool,
}

impl Default for FiscalConfig {
    fn default() -> Self {
        let f = FiscalParams::default();
        Self {
            qli_unit_cost: f.qli_unit_cost,
            mpf_table_file: None,
            mpf_lookup: f.mpf_table.lookup(),
            freeze_mpf_shares: f.freeze_mpf_shares,
        }
    }
}

/// A whole scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub runs_per_scenario: u32,
    /// Explicit horizon; overrides `inclusive_end_year`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_months: Option<u32>,
    /// Read "2000 to 2020" as 252 months instead of 240.
    pub inclusive_end_year: bool,
    /// Case for `run`.
    pub case_id: u8,
    /// Cases for `compare`, `regress` and `validate`.
    pub cases: Vec<u8>,
    pub world_mode: WorldMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionConfig>,
    pub world: WorldConfig,
    pub demography: DemographyConfig,
    pub market: MarketParams,
    pub housing: HousingParams,
    pub taxes: TaxRates,
    pub fiscal: FiscalConfig,
    pub validation: ValidationTargets,
    /// Directory relative paths resolve against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            runs_per_scenario: 3,
            horizon_months: None,
            inclusive_end_year: false,
            case_id: 1,
            cases: vec![1, 2, 3, 4],
            world_mode: WorldMode::PerRun,
            region: None,
            world: WorldConfig::default(),
            demography: DemographyConfig::default(),
            market: MarketParams::default(),
            housing: HousingParams::default(),
            taxes: TaxRates::default(),
            fiscal: FiscalConfig::default(),
            validation: ValidationTargets::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn case_from(id: u8, key: &str) -> Result<FiscalCase> {
    FiscalCase::try_from(id).map_err(|_| config_err(key, format!("case {id} is outside 1..=4")))
}

impl ScenarioConfig {
    /// Parses TOML text. Returns the config and the unknown keys that were
    /// tolerated (always empty in `UnknownKeys::Error` mode).
    pub fn from_toml_str(text: &str, unknown: UnknownKeys) -> Result<(Self, Vec<String>)> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_err("<file>", e.to_string().trim_end()))?;
        let mut ignored = Vec::new();
        let mut record = |path: serde_ignored::Path<'_>| ignored.push(path.to_string().replace(".?", ""));
        let de = serde_ignored::Deserializer::new(de, &mut record);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().message().trim_end())
        })?;
        if !ignored.is_empty() {
            if unknown == UnknownKeys::Error {
                return Err(config_err(ignored[0].clone(), "unknown key"));
            }
            for key in &ignored {
                log::warn!("ignoring unknown config key `{key}`");
            }
        }
        config.validate()?;
        Ok((config, ignored))
    }

    /// Reads and parses a file; relative paths inside it resolve against
    /// the file's directory.
    pub fn load(path: &Path, unknown: UnknownKeys) -> Result<(Self, Vec<String>)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(path.display().to_string(), format!("cannot read: {e}")))?;
        let (mut config, ignored) = Self::from_toml_str(&text, unknown)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok((config, ignored))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// Range checks that do not need the filesystem.
    pub fn validate(&self) -> Result<()> {
        case_from(self.case_id, "case_id")?;
        if self.cases.is_empty() {
            return Err(config_err("cases", "must list at least one case"));
        }
        for (i, &c) in self.cases.iter().enumerate() {
            case_from(c, &format!("cases[{i}]"))?;
        }
        if self.runs_per_scenario == 0 {
            return Err(config_err("runs_per_scenario", "must be at least 1"));
        }
        if self.horizon_months == Some(0) {
            return Err(config_err("horizon_months", "must be at least 1"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> u32 {
        self.horizon_months.unwrap_or(if self.inclusive_end_year {
            INCLUSIVE_HORIZON_MONTHS
        } else {
            DEFAULT_HORIZON_MONTHS
        })
    }

    pub fn case(&self) -> Result<FiscalCase> {
        case_from(self.case_id, "case_id")
    }

    /// Requested cases, deduplicated, in id order.
    pub fn cases(&self) -> Result<Vec<FiscalCase>> {
        let mut out = Vec::with_capacity(self.cases.len());
        for (i, &c) in self.cases.iter().enumerate() {
            out.push(case_from(c, &format!("cases[{i}]"))?);
        }
        out.sort_by_key(|c| c.id());
        out.dedup();
        Ok(out)
    }

    fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    /// Model parameters with any referenced tables loaded.
    pub fn model_params(&self) -> Result<ModelParams> {
        let vital_rates = match &self.demography.vital_rates_file {
            Some(p) => VitalRates::load(&self.resolve_path(p)).map_err(|e| config_err("demography.vital_rates_file", e.to_string()))?,
            None => VitalRates::default(),
        };
        let mpf_table = match &self.fiscal.mpf_table_file {
            Some(p) => MpfTable::load(&self.resolve_path(p), self.fiscal.mpf_lookup)
                .map_err(|e| config_err("fiscal.mpf_table_file", e.to_string()))?,
            None => MpfTable::default().with_lookup(self.fiscal.mpf_lookup),
        };
        let params = ModelParams {
            world: self.world.clone(),
            demography: DemographyParams {
                vital_rates,
                labor_entry_age_years: self.demography.labor_entry_age_years,
                retirement_age_years: self.demography.retirement_age_years,
                entrant_qualification_spread: self.demography.entrant_qualification_spread,
                qualification_levels: self.demography.qualification_levels,
            },
            market: self.market.clone(),
            housing: self.housing.clone(),
            taxes: self.taxes.clone(),
            fiscal: FiscalParams {
                qli_unit_cost: self.fiscal.qli_unit_cost,
                mpf_table,
                freeze_mpf_shares: self.fiscal.freeze_mpf_shares,
            },
        };
        params.validate()?;
        Ok(params)
    }

    /// Regions from the `[region]` table, or from `override_region` when
    /// given (a CLI flag pointing at a region file).
    pub fn regions(&self, override_region: Option<&Path>) -> Result<Vec<RegionSpec>> {
        match (override_region, &self.region) {
            (Some(p), _) => RegionConfig::file(p).resolve(Path::new("."), self.seed),
            (None, Some(r)) => r.resolve(&self.base_dir, self.seed),
            (None, None) => Err(config_err("region.source", "missing region source (file, generate or default_batch)")),
        }
    }

    pub fn batch_spec(&self) -> Result<BatchSpec> {
        Ok(BatchSpec {
            params: self.model_params()?,
            horizon: self.horizon(),
            seed: self.seed,
            runs: self.runs_per_scenario,
            world_mode: self.world_mode,
        })
    }
}

/// One scenario per (region, case), regions outermost.
pub fn scenarios(regions: &[RegionSpec], cases: &[FiscalCase]) -> Vec<Scenario> {
    regions
        .iter()
        .flat_map(|r| {
            cases.iter().map(move |&case| Scenario {
                id: r.id.clone(),
                region: r.clone(),
                case,
            })
        })
        .collect()
}

/// Every config key with its default, as TOML, for `--help`.
pub fn config_reference() -> String {
    let mut out = String::from(
        "# Top-level keys (defaults shown). horizon_months, when set, overrides\n\
         # inclusive_end_year (240 months; 252 when inclusive).\n\
         # horizon_months = 240\n",
    );
    out.push_str(&ScenarioConfig::default().to_toml_string());
    out.push_str(
        "\n# [region] is required unless --region is given. Keys by source:\n\
         #   source = \"file\"           path\n\
         #   source = \"generate\"       id = \"APC\", name, municipalities = 5,\n\
         #                             total_population = 100000, skew = 1.0,\n\
         #                             seed (defaults to the scenario seed),\n\
         #                             [region.generator] (table below)\n\
         #   source = \"default_batch\"  count = 40, seed = 2000\n\
         # [demography] vital_rates_file: CSV bracket_start_age,bracket_end_age,\n\
         #   monthly_mortality,monthly_fertility (built-in table when absent)\n\
         # [fiscal] mpf_table_file: CSV max_population,coefficient (FPM ladder when absent)\n\
         # [world] initial_qualification_distribution: weights over levels 1..Q\n\
         #   (binomial over 21 levels when absent)\n\
         # [validation] optional [low, high] bands: tax_to_gdp, consumption_share,\n\
         #   personal_income_share, transmission_share, company_share, property_share\n\
         \n[region.generator]\n",
    );
    out.push_str(&toml::to_string(&RegionGenParams::default()).expect("serializable"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig> {
        ScenarioConfig::from_toml_str(text, UnknownKeys::Error).map(|(c, _)| c)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.horizon(), 240);
    }

    #[test]
    fn region_file_with_defaults() {
        let c = parse("[region]\nsource = \"file\"\npath = \"r.json\"\n").unwrap();
        assert_eq!(c.region, Some(RegionConfig::file("r.json")));
        assert_eq!(c.model_params().unwrap(), ModelParams::default());
    }

    #[test]
    fn case_out_of_range() {
        let e = parse("case_id = 5").unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "case_id"), "{e}");
        let e = parse("cases = [1, 0]").unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "cases[1]"), "{e}");
    }

    #[test]
    fn type_mismatch_names_key_path() {
        let e = parse("[market]\nprice_step = \"fast\"\n").unwrap_err();
        match e {
            Error::Config { path, .. } => assert_eq!(path, "market.price_step"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_keys_error_or_warn() {
        let text = "[housing]\nentry_rate = 0.1\n";
        let e = parse(text).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "housing.entry_rate"), "{e}");
        let (c, ignored) = ScenarioConfig::from_toml_str(text, UnknownKeys::Warn).unwrap();
        assert_eq!(ignored, vec!["housing.entry_rate".to_string()]);
        assert_eq!(c.housing, HousingParams::default());
    }

    #[test]
    fn unknown_region_key_is_caught() {
        let e = parse("[region]\nsource = \"file\"\npath = \"x\"\nfoo = 1\n").unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "region.foo"), "{e}");
    }

    #[test]
    fn missing_region_source() {
        let c = parse("seed = 4").unwrap();
        let e = c.regions(None).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "region.source"), "{e}");
        let c = parse("[region]\ncount = 3").unwrap();
        assert!(c.regions(None).is_err());
    }

    #[test]
    fn misplaced_region_field() {
        let c = parse("[region]\nsource = \"default_batch\"\npath = \"a.json\"\n").unwrap();
        let e = c.regions(None).unwrap_err();
        assert!(matches!(&e, Error::Config { path, .. } if path == "region.path"), "{e}");
    }

    #[test]
    fn generated_and_batch_regions() {
        let c = parse("seed = 9\n[region]\nsource = \"generate\"\nmunicipalities = 3\ntotal_population = 30000\n").unwrap();
        let r = c.regions(None).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].municipalities.len(), 3);
        assert_eq!(r[0].total_population(), 30_000);
        assert_eq!(r, c.regions(None).unwrap());

        let c = parse("[region]\nsource = \"default_batch\"\ncount = 4\n").unwrap();
        assert_eq!(c.regions(None).unwrap(), default_batch(4, DEFAULT_BATCH_SEED));
    }

    #[test]
    fn horizon_switches() {
        assert_eq!(parse("inclusive_end_year = true").unwrap().horizon(), 252);
        assert_eq!(parse("inclusive_end_year = true\nhorizon_months = 12").unwrap().horizon(), 12);
        assert!(parse("horizon_months = 0").is_err());
        assert!(parse("runs_per_scenario = 0").is_err());
    }

    #[test]
    fn cases_are_sorted_and_deduplicated() {
        let c = parse("cases = [3, 1, 3]").unwrap();
        assert_eq!(c.cases().unwrap(), vec![FiscalCase::try_from(1).unwrap(), FiscalCase::try_from(3).unwrap()]);
    }

    #[test]
    fn bad_parameter_value_fails_resolution() {
        let c = parse("[market]\nprice_step = 2.0\n").unwrap();
        assert!(c.model_params().is_err());
    }

    #[test]
    fn round_trip_is_fixpoint() {
        let text = "seed = 17\nruns_per_scenario = 2\nhorizon_months = 36\ncases = [2, 4]\nworld_mode = \"frozen\"\n\
                    [region]\nsource = \"generate\"\nmunicipalities = 4\nskew = 0.7\n[region.generator]\nmin_population = 100\n\
                    [world]\npopulation_fraction = 0.05\ninitial_qualification_distribution = [1.0, 2.0, 1.0]\n\
                    [demography]\nqualification_levels = 3\n\
                    [market]\nsavings_rate_bounds = [0.1, 0.2]\n[fiscal]\nmpf_lookup = \"step\"\nqli_unit_cost = 0.1\n\
                    [validation]\ntax_to_gdp = [0.1, 0.4]\n";
        let a = parse(text).unwrap();
        let b = parse(&a.to_toml_string()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_toml_string(), b.to_toml_string());
        assert_eq!(parse(&ScenarioConfig::default().to_toml_string()).unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn reference_parses_back() {
        // the --help reference minus the generator tail is itself a valid file
        let r = config_reference();
        let head = &r[..r.find("[region.generator]").unwrap()];
        assert_eq!(parse(head).unwrap(), ScenarioConfig::default());
        for key in ["productivity_alpha", "market_entry_rate", "qli_unit_cost", "population_fraction", "min_population"] {
            assert!(r.contains(key), "{key}");
        }
    }

    #[test]
    fn relative_tables_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mpf.csv"), "max_population,coefficient\n1000,1.0\n,2.0\n").unwrap();
        std::fs::write(dir.path().join("s.toml"), "[fiscal]\nmpf_table_file = \"mpf.csv\"\n").unwrap();
        let (c, _) = ScenarioConfig::load(&dir.path().join("s.toml"), UnknownKeys::Error).unwrap();
        let p = c.model_params().unwrap();
        assert_eq!(p.fiscal.mpf_table.brackets().len(), 2);
        let (c, _) = ScenarioConfig::from_toml_str("[fiscal]\nmpf_table_file = \"nope.csv\"\n", UnknownKeys::Error).unwrap();
        assert!(matches!(c.model_params(), Err(Error::Config { .. })));
    }
}
