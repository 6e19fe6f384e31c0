use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crplus::forecast::ForecastTable;
use crplus::ingest::{emit_rate_series, load_dataset, write_rate_series, CauseMapping, IngestConfig};
use crplus::likelihood::init_params_moment_matching;
use crplus::mcmc::{diagnostics, read_samples, run_chains_parallel, write_samples, PosteriorSamples, SamplerConfig};
use crplus::model::DEFAULT_BASE_YEAR;
use crplus::panjer::{portfolio_loss, risk_measures, Portfolio, TAIL_WARNING};
use crplus::simulate::{simulate_dataset, SimulationSpec};
use crplus::{CauseId, CellIndex, ModelParams, MortalityDataset, TimeMapping};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Resolved;
use crate::failure::Failure;

type CmdResult = Result<(), Failure>;

#[derive(Serialize)]
struct FileDigest {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    seeds: &'a [u64],
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

/// Tracks what a command reads and writes for its manifest.
pub struct Run {
    cfg: Resolved,
    command: &'static str,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn digest(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn json_file<T: Serialize + ?Sized>(path: &Path, value: &T) -> crplus::Result<()> {
    let f = File::create(path).map_err(|e| crplus::Error::Io {
        path: path.into(),
        source: e,
    })?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| crplus::Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(())
}

fn text_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::validation(format!("{key} is not set in the configuration")))
}

impl Run {
    pub fn new(cfg: Resolved, command: &'static str) -> Result<Self, Failure> {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| Failure::io(&cfg.out_dir, e))?;
        Ok(Run {
            cfg,
            command,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Path of output `rel` under the output directory, recorded for the
    /// manifest.
    fn output(&mut self, rel: &str) -> Result<PathBuf, Failure> {
        let path = self.cfg.out_dir.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        }
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn finish(self) -> CmdResult {
        let name = |p: &Path, root: Option<&Path>| {
            root.and_then(|r| p.strip_prefix(r).ok())
                .unwrap_or_else(|| Path::new(p.file_name().unwrap_or_default()))
                .to_string_lossy()
                .replace('\\', "/")
        };
        let mut inputs = Vec::new();
        for p in &self.inputs {
            inputs.push(FileDigest {
                file: name(p, None),
                sha256: digest(p)?,
            });
        }
        let mut outputs = Vec::new();
        for p in &self.outputs {
            outputs.push(FileDigest {
                file: name(p, Some(&self.cfg.out_dir)),
                sha256: digest(p)?,
            });
        }
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: self.cfg.hash(),
            seeds: &self.seeds,
            inputs,
            outputs,
        };
        let path = self.cfg.out_dir.join(format!("manifest.{}.json", self.command));
        json_file(&path, &manifest)?;
        Ok(())
    }

    fn mapping(&mut self) -> Result<CauseMapping, Failure> {
        match self.cfg.config.data.mapping.clone() {
            Some(p) => {
                self.input(&p);
                Ok(CauseMapping::load(&p)?)
            }
            None => Ok(CauseMapping::default()),
        }
    }

    /// Names of causes `0..=k`: from the mapping when it has `k` causes,
    /// generic otherwise.
    fn cause_names(&mut self, k: usize) -> Result<Vec<String>, Failure> {
        let m = self.mapping()?;
        Ok(if m.causes() == k {
            m.cause_names
        } else {
            (0..=k).map(|i| format!("cause_{i}")).collect()
        })
    }

    fn check_shape(&self, age_groups: usize, causes: usize) -> CmdResult {
        let m = &self.cfg.config.model;
        if m.age_groups.is_some_and(|a| a != age_groups) || m.causes.is_some_and(|k| k != causes) {
            return Err(Failure::validation(format!(
                "configuration expects {:?} age groups / {:?} causes, input has {age_groups} / {causes}",
                m.age_groups, m.causes
            )));
        }
        Ok(())
    }

    fn load_dataset(&mut self) -> Result<MortalityDataset, Failure> {
        let path = self.cfg.dataset_path();
        self.input(&path);
        let data = MortalityDataset::load(&path)?;
        self.check_shape(data.age_groups(), data.causes())?;
        Ok(data)
    }

    fn load_chains(&mut self) -> Result<Vec<PosteriorSamples>, Failure> {
        let dir = self.cfg.samples_dir();
        let mut ids: Vec<usize> = match fs::read_dir(&dir) {
            Ok(entries) => entries
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let name = e.file_name().to_string_lossy().into_owned();
                    name.strip_prefix("chain_")?.strip_suffix(".json")?.parse().ok()
                })
                .collect(),
            Err(_) => Vec::new(),
        };
        if ids.is_empty() {
            return Err(Failure::missing_samples(format!(
                "no posterior samples in {}; run `crplus estimate` first",
                dir.display()
            )));
        }
        ids.sort_unstable();
        let mut chains = Vec::new();
        for id in ids {
            let csv = dir.join(format!("chain_{id}.csv"));
            let json = dir.join(format!("chain_{id}.json"));
            self.input(&csv);
            self.input(&json);
            let s = read_samples(&csv, &json)?;
            if s.is_empty() {
                return Err(Failure::missing_samples(format!("{} holds no draws", csv.display())));
            }
            chains.push(s);
        }
        let first = &chains[0];
        if chains
            .iter()
            .any(|c| c.layout() != first.layout() || c.base_year != first.base_year)
        {
            return Err(Failure::validation(
                "posterior chains disagree on model shape or base year",
            ));
        }
        self.check_shape(first.template.age_groups(), first.template.causes())?;
        Ok(chains)
    }
}

pub fn ingest(mut run: Run) -> CmdResult {
    let c = run.cfg.config.clone();
    let deaths = required(&c.data.deaths, "data.deaths")?;
    let population = required(&c.data.population, "data.population")?;
    run.input(deaths);
    run.input(population);
    let mapping = run.mapping()?;
    if c.model.causes.is_some_and(|k| k != mapping.causes()) {
        return Err(Failure::validation(format!(
            "model.causes is {:?} but the mapping defines {} causes",
            c.model.causes,
            mapping.causes()
        )));
    }
    let icfg = IngestConfig {
        base_year: c.model.base_year,
        comparability_cutoff_year: c.ingest.comparability_cutoff_year,
        age_groups: c.model.age_groups.unwrap_or(crplus::model::DEFAULT_AGE_GROUPS),
        age_bands: c.ingest.age_bands.clone(),
        mapping,
    };
    let (data, report) = load_dataset(deaths, population, &icfg)?;
    data.save(&run.output("dataset.csv")?)?;
    json_file(&run.output("coverage.json")?, &report)?;
    if c.ingest.rate_series {
        for cell in CellIndex::all(data.age_groups()) {
            for k in 0..=data.causes() {
                let series = emit_rate_series(&data, cell, CauseId(k))?;
                let path = run.output(&format!("rates/{cell}.cause_{k}.csv"))?;
                let f = File::create(&path).map_err(|e| Failure::io(&path, e))?;
                write_rate_series(&series, BufWriter::new(f))?;
            }
        }
    }
    let s = &report.summary;
    eprintln!(
        "ingested {} cells x {} years, {} deaths; {} rows adjusted for comparability, {} unmapped labels",
        data.cells(),
        data.years(),
        s.total_deaths,
        report.adjusted_rows,
        report.unmapped_labels.len()
    );
    run.finish()
}

pub fn simulate(mut run: Run) -> CmdResult {
    let c = run.cfg.config.clone();
    let path = required(&c.simulate.params, "simulate.params")?;
    run.input(path);
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let params = ModelParams::from_json(&text)?;
    run.check_shape(params.age_groups(), params.causes())?;
    let spec = SimulationSpec::constant(
        params,
        c.simulate.population,
        c.simulate.base_year,
        c.simulate.years,
        c.seed,
    );
    run.seeds = vec![c.seed];
    let (data, stats) = simulate_dataset(&spec)?;
    data.save(&run.output("dataset.csv")?)?;
    json_file(&run.output("simulation_stats.json")?, &stats)?;
    eprintln!(
        "simulated {} cells x {} years, {} deaths, {} capped cell-years",
        data.cells(),
        data.years(),
        data.summary().total_deaths,
        stats.cap_events
    );
    run.finish()
}

pub fn estimate(mut run: Run) -> CmdResult {
    let c = run.cfg.config.clone();
    let s = &c.sampler;
    if s.chains == 0 {
        return Err(Failure::validation("sampler.chains must be at least 1"));
    }
    let seeds: Vec<u64> = match &s.seeds {
        Some(list) if list.len() != s.chains => {
            return Err(Failure::validation(format!(
                "{} seeds given for {} chains",
                list.len(),
                s.chains
            )))
        }
        Some(list) => list.clone(),
        None => (0..s.chains as u64).map(|i| c.seed.wrapping_add(i)).collect(),
    };
    let data = run.load_dataset()?;
    let init = init_params_moment_matching(&data, &c.model.trends)?;
    let cfgs: Vec<SamplerConfig> = seeds
        .iter()
        .map(|&seed| SamplerConfig {
            n_steps: s.n_steps,
            burn_in: s.burn_in,
            proposal_sd: None,
            seed,
            adapt_window: s.adapt_window,
            thin: s.thin,
            sigma2_max: s.sigma2_max,
            ..SamplerConfig::default()
        })
        .collect();
    let layout = crplus::FreeLayout::of(&init);
    for cfg in &cfgs {
        cfg.validate(&layout)?;
    }
    run.seeds = seeds;
    eprintln!(
        "running {} chains x {} sweeps over {} free parameters",
        cfgs.len(),
        s.n_steps,
        layout.len()
    );
    let chains = run_chains_parallel(&data, &vec![init.clone(); cfgs.len()], &cfgs)?;
    json_file(&run.output("init_params.json")?, &init)?;
    for ch in &chains {
        let csv = run.output(&format!("samples/chain_{}.csv", ch.chain_id))?;
        let json = run.output(&format!("samples/chain_{}.json", ch.chain_id))?;
        write_samples(ch, &csv, &json)?;
    }
    let report = diagnostics(&chains, &data)?;
    json_file(&run.output("diagnostics.json")?, &report)?;
    for (block, rate) in &report.acceptance_by_block {
        eprintln!("  acceptance {:<7} {rate:.3}", format!("{block:?}").to_lowercase());
    }
    if let Some(r) = report.max_rhat() {
        eprintln!("  max split R-hat {r:.4}");
    }
    run.finish()
}

pub fn forecast(mut run: Run) -> CmdResult {
    let c = run.cfg.config.clone();
    if c.forecast.years.is_empty() {
        return Err(Failure::validation("forecast.years is empty"));
    }
    if c.forecast.top == 0 {
        return Err(Failure::validation("forecast.top must be at least 1"));
    }
    let chains = run.load_chains()?;
    let t = &chains[0].template;
    let cells: Vec<CellIndex> = match &c.forecast.cells {
        Some(list) => list
            .iter()
            .map(|s| {
                let cell: CellIndex = s.parse()?;
                if cell.age_group > t.age_groups() {
                    return Err(crplus::Error::InvalidParameter(format!(
                        "cell {cell} is outside the model"
                    )));
                }
                Ok(cell)
            })
            .collect::<crplus::Result<_>>()?,
        None => CellIndex::all(t.age_groups()).collect(),
    };
    let names = run.cause_names(t.causes())?;
    let mapping = TimeMapping {
        base_year: chains[0].base_year,
        years: 0,
    };
    let table = ForecastTable::build(chains.as_slice(), &cells, &c.forecast.years, &mapping, names)?;

    let path = run.output("forecast.csv")?;
    let f = File::create(&path).map_err(|e| Failure::io(&path, e))?;
    table.write_csv(BufWriter::new(f))?;
    let path = run.output("death_rates.csv")?;
    let f = File::create(&path).map_err(|e| Failure::io(&path, e))?;
    table.write_death_rates_csv(BufWriter::new(f))?;
    json_file(&run.output("forecast.json")?, &table)?;
    let text = table.render_text(c.forecast.top);
    text_file(&run.output("forecast.txt")?, &text)?;
    print!("{text}");
    run.finish()
}

#[derive(Serialize)]
struct MeasureReport {
    alpha: f64,
    value_at_risk: usize,
    expected_shortfall: f64,
    value_at_risk_amount: f64,
    expected_shortfall_amount: f64,
}

#[derive(Serialize)]
struct LossReport {
    valuation_year: i32,
    model_time: f64,
    loss_unit: f64,
    n_max: usize,
    policies: usize,
    total_exposure: u64,
    mean: f64,
    variance: f64,
    tail_mass: f64,
    warnings: Vec<String>,
    measures: Vec<MeasureReport>,
}

/// Free parameters averaged over all draws of all chains.
fn posterior_mean(chains: &[PosteriorSamples]) -> ModelParams {
    let layout = chains[0].layout();
    let mut sum = vec![0.0; layout.len()];
    let mut n = 0usize;
    for ch in chains {
        for i in 0..ch.len() {
            for (s, x) in sum.iter_mut().zip(ch.row(i)) {
                *s += x;
            }
            n += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut p = chains[0].template.clone();
    layout.apply(&mut p, &mean);
    p
}

pub fn loss(mut run: Run) -> CmdResult {
    let c = run.cfg.config.clone();
    let l = &c.loss;
    if let Some(bad) = l.levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Failure::validation(format!(
            "risk measure level {bad} is not in (0, 1)"
        )));
    }
    let pf_path = required(&l.portfolio, "loss.portfolio")?;
    run.input(pf_path);
    let portfolio = Portfolio::load(pf_path, l.loss_unit, l.valuation_year)?;
    let (params, base_year) = match &l.params {
        Some(p) => {
            run.input(p);
            let text = fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
            (
                ModelParams::from_json(&text)?,
                c.model.base_year.unwrap_or(DEFAULT_BASE_YEAR),
            )
        }
        None => {
            let chains = run.load_chains()?;
            (posterior_mean(&chains), chains[0].base_year)
        }
    };
    portfolio.validate(&params)?;
    let t = f64::from(l.valuation_year - base_year + 1);
    let n_max = l.n_max.unwrap_or(portfolio.total_exposure() as usize);
    let pmf = portfolio_loss(&portfolio, &params, t, n_max)?;
    let path = run.output("loss_pmf.csv")?;
    pmf.save(&path)?;
    for w in &pmf.warnings {
        eprintln!("warning: {w}");
    }
    if pmf.tail_mass > TAIL_WARNING {
        return Err(crplus::Error::Truncation(format!(
            "{:.3e} of the loss distribution lies beyond {n_max} units; raise loss.n_max",
            pmf.tail_mass
        ))
        .into());
    }
    let measures = l
        .levels
        .iter()
        .map(|&a| {
            let rm = risk_measures(&pmf, a)?;
            Ok(MeasureReport {
                alpha: a,
                value_at_risk: rm.value_at_risk,
                expected_shortfall: rm.expected_shortfall,
                value_at_risk_amount: rm.value_at_risk as f64 * l.loss_unit,
                expected_shortfall_amount: rm.expected_shortfall * l.loss_unit,
            })
        })
        .collect::<crplus::Result<Vec<_>>>()?;
    let report = LossReport {
        valuation_year: l.valuation_year,
        model_time: t,
        loss_unit: l.loss_unit,
        n_max,
        policies: portfolio.policies.len(),
        total_exposure: portfolio.total_exposure(),
        mean: pmf.mean(),
        variance: pmf.variance(),
        tail_mass: pmf.tail_mass,
        warnings: pmf.warnings.clone(),
        measures,
    };
    json_file(&run.output("risk_measures.json")?, &report)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(crplus::Error::from)?
    );
    run.finish()
}

pub fn diagnose(mut run: Run) -> CmdResult {
    let chains = run.load_chains()?;
    let data = run.load_dataset()?;
    let report = diagnostics(&chains, &data)?;
    json_file(&run.output("diagnostics.json")?, &report)?;
    println!("{} chains, draws per chain {:?}", report.chains, report.draws_per_chain);
    for (block, rate) in &report.acceptance_by_block {
        println!("acceptance {:<7} {rate:.3}", format!("{block:?}").to_lowercase());
    }
    if let Some(r) = report.max_rhat() {
        println!("max split R-hat {r:.4}");
    }
    let min_ess = report
        .parameters
        .iter()
        .filter_map(|p| p.ess)
        .fold(f64::INFINITY, f64::min);
    if min_ess.is_finite() {
        println!("min ESS {min_ess:.0}");
    }
    for f in &report.factors {
        println!(
            "cause {}: sigma2 {:.4}, lag-1 autocorrelation {:+.3} (band {:.3}), KS p-value {:.3}",
            f.cause, f.sigma2, f.lag1_autocorrelation, f.band, f.ks_p_value
        );
    }
    for x in report.cross_correlations.iter().filter(|x| x.significant) {
        println!(
            "causes {} and {} correlated: r = {:+.3}, p = {:.3}",
            x.cause_a, x.cause_b, x.correlation, x.p_value
        );
    }
    run.finish()
}
