use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use spinbath::bath::{scaled_cutoffs, DEFAULT_BATH_RADIUS, DEFAULT_PAIR_CUTOFF};
use spinbath::cce::{ensemble_coherence, BathSource, SimulationConfig};
use spinbath::isotopes::isotope_densities;
use spinbath::remote::{fetch_remote, ClientConfig, RemoteQuery};
use spinbath::scaling::{
    calibrate_constants, calibrate_density_stage, calibrate_g_stage, element_table,
    element_table_csv, material_decoupling, predict_t2, t2_isotope, transition_prefactor,
    CalibrationPoint, CalibrationReport, DensityStage, GStage, T2Prediction, ELEMENT_TABLE_DENSITY,
};
use spinbath::screening::{load_corpus, screen_corpus, ScreeningError};
use spinbath::{
    element_densities, fit_stretched_exponential, structure_from_cif, CceOrder, DefectSite, Error,
    IsotopeTable, PairSelection, RealizedStructure, ScalingConstants, ScreeningFilters, T2Fit,
    T2Value,
};

#[derive(Debug, Parser)]
#[command(
    name = "spinbath",
    version,
    about = "Nuclear-spin-bath coherence times of defect spin qubits"
)]
struct Cli {
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML config file with `[matdb] base_url` and `[cache] dir`
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// CCE Hahn-echo ensemble for one host, fitted to a stretched exponential
    Simulate(SimulateArgs),
    /// Scaling-law T2 for one crystal structure
    Predict(PredictArgs),
    /// Rank a corpus of material records by predicted T2
    Screen(ScreenArgs),
    /// Scaling-law T2 of every element as a natural-abundance host
    PeriodicTable(PeriodicTableArgs),
    /// Heteronuclear decoupling fields for the element pairs of a structure
    Decouple(DecoupleArgs),
    /// Fit the scaling-law constants to CCE simulations over an isotope/density grid
    Calibrate(CalibrateArgs),
    /// Download material records from the database API into the local cache
    Fetch(FetchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Pairs {
    All,
    Homonuclear,
    Heteronuclear,
}

impl From<Pairs> for PairSelection {
    fn from(p: Pairs) -> Self {
        match p {
            Pairs::All => PairSelection::All,
            Pairs::Homonuclear => PairSelection::Homonuclear,
            Pairs::Heteronuclear => PairSelection::Heteronuclear,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Host crystal structure
    #[arg(long, conflicts_with_all = ["random_isotope", "density"], required_unless_present = "random_isotope")]
    cif: Option<PathBuf>,
    /// Isotope of a random (amorphous) bath, e.g. 13C
    #[arg(long, requires = "density")]
    random_isotope: Option<String>,
    /// Spin density of the random bath (cm^-3)
    #[arg(long)]
    density: Option<f64>,
    /// Magnetic field (T)
    #[arg(long = "field-T", default_value_t = 5.0)]
    field_t: f64,
    /// CCE order (1 or 2)
    #[arg(long, default_value_t = 2)]
    order: u32,
    /// Number of bath instances
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest free-evolution time (s) (default: 3x the scaling-law T2)
    #[arg(long)]
    t_max: Option<f64>,
    /// Time points
    #[arg(long, default_value_t = 201)]
    n_times: usize,
    /// Bath radius (A) (default: 35 for structures, density-scaled for random baths)
    #[arg(long)]
    r_bath: Option<f64>,
    /// Pair cutoff (A) (default: 10 for structures, density-scaled for random baths)
    #[arg(long)]
    r_pair: Option<f64>,
    /// Pair clusters to keep
    #[arg(long, value_enum, default_value_t = Pairs::All)]
    pairs: Pairs,
    /// Electron g-factor
    #[arg(long, default_value_t = 2.0)]
    electron_g: f64,
    /// Defect position: `first` (replaces the first site), `origin`, or a site index
    #[arg(long, default_value = "first")]
    defect_site: String,
    /// Coherence curve CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Host crystal structure
    #[arg(long)]
    cif: PathBuf,
    /// Effective electron g-factor of the transition
    #[arg(long)]
    g_eff: Option<f64>,
}

#[derive(Debug, Args)]
struct ScreenArgs {
    /// Directory of material record JSON files
    #[arg(long)]
    corpus: PathBuf,
    /// Smallest band gap kept (eV)
    #[arg(long, default_value_t = 1.0)]
    min_gap: f64,
    /// Largest energy above hull kept (eV/atom)
    #[arg(long, default_value_t = 0.0)]
    max_e_hull: f64,
    /// Smallest T2 kept (s)
    #[arg(long)]
    min_t2: Option<f64>,
    /// Ranking CSV; a JSON report is written next to it
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PeriodicTableArgs {
    /// Element number density of each host (cm^-3)
    #[arg(long, default_value_t = ELEMENT_TABLE_DENSITY)]
    density: f64,
    /// Output CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecoupleArgs {
    /// Host crystal structure
    #[arg(long)]
    cif: PathBuf,
    /// Override the nearest-neighbour distance of every pair (A)
    #[arg(long)]
    l: Option<f64>,
    /// Output CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// TOML grid: `isotopes`, `densities`, optional `field_T`, `instances`, `n_times`
    #[arg(long)]
    grid: PathBuf,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FetchArgs {
    /// Smallest band gap (eV)
    #[arg(long, default_value_t = 1.0)]
    min_gap: f64,
    /// Largest energy above hull (eV/atom)
    #[arg(long, default_value_t = 0.0)]
    max_e_hull: f64,
    /// Restrict to materials made only of these elements, comma separated
    #[arg(long, value_delimiter = ',')]
    elements: Option<Vec<String>>,
    /// Cache directory (overrides `cache.dir`)
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// API base URL (overrides `matdb.base_url`)
    #[arg(long)]
    base_url: Option<String>,
    /// Ignore a cached result for this query
    #[arg(long)]
    refresh: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    matdb: MatdbSection,
    #[serde(default)]
    cache: CacheSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatdbSection {
    base_url: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheSection {
    dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationGrid {
    isotopes: Vec<String>,
    densities: Vec<f64>,
    #[serde(rename = "field_T", default = "default_field")]
    field_t: f64,
    #[serde(default = "default_instances")]
    instances: usize,
    #[serde(default = "default_n_times")]
    n_times: usize,
}

fn default_field() -> f64 {
    5.0
}

fn default_instances() -> usize {
    10
}

fn default_n_times() -> usize {
    201
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl<E: Into<Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into().to_string())
    }
}

type CliResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| io_failure(path, e))?;
            log::info!("wrote {}", path.display());
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn positive(name: &str, v: f64) -> CliResult {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(usage(format!(
            "--{name} must be a positive number, got {v}"
        )))
    }
}

fn load_structure(path: &Path) -> Result<RealizedStructure, Failure> {
    let text = read_text(path)?;
    structure_from_cif(&text).map_err(|e| Failure::Runtime(format!("cif: {}: {e}", path.display())))
}

fn structure_prediction(
    structure: &RealizedStructure,
    table: &IsotopeTable,
    constants: &ScalingConstants,
) -> Result<T2Prediction, Failure> {
    let isotopes = isotope_densities(table, &element_densities(structure))?;
    Ok(predict_t2(&isotopes, constants)?)
}

fn parse_defect(s: &str) -> Result<DefectSite, Failure> {
    match s {
        "first" => Ok(DefectSite::FirstSite),
        "origin" => Ok(DefectSite::Origin),
        _ => s.parse().map(DefectSite::Site).map_err(|_| {
            usage(format!(
                "--defect-site must be `first`, `origin` or a site index, got `{s}`"
            ))
        }),
    }
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    material: &'a str,
    #[serde(flatten)]
    fit: T2Fit,
    config: &'a SimulationConfig,
}

fn simulate(args: SimulateArgs) -> CliResult {
    let table = IsotopeTable::bundled();
    let constants = ScalingConstants::default();
    positive("field-T", args.field_t)?;
    let order = CceOrder::from_number(args.order)
        .ok_or_else(|| usage(format!("--order must be 1 or 2, got {}", args.order)))?;
    let defect = parse_defect(&args.defect_site)?;

    let (source, predicted, default_radii) = match (&args.cif, &args.random_isotope) {
        (Some(path), _) => {
            let structure = load_structure(path)?;
            let predicted = structure_prediction(&structure, &table, &constants)?.combined;
            let material_id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("host")
                .to_string();
            let source = BathSource::Lattice {
                cell: structure.cell,
                defect,
                material_id,
            };
            (
                source,
                predicted,
                (DEFAULT_BATH_RADIUS, DEFAULT_PAIR_CUTOFF),
            )
        }
        (None, Some(label)) => {
            let density = args
                .density
                .ok_or_else(|| usage("--random-isotope needs --density"))?;
            positive("density", density)?;
            let isotope = table.find(label).map_err(|e| usage(e.to_string()))?.clone();
            if !isotope.is_spinful() {
                return Err(usage(format!(
                    "{} carries no nuclear spin",
                    isotope.label()
                )));
            }
            let t2 = t2_isotope(isotope.g_factor, isotope.spin.value(), density, &constants)?;
            let source = BathSource::Random {
                material_id: isotope.label(),
                isotope,
                density,
            };
            (source, T2Value::Finite(t2), scaled_cutoffs(density))
        }
        (None, None) => return Err(usage("give --cif or --random-isotope")),
    };

    let t_max = match (args.t_max, predicted) {
        (Some(t), _) => t,
        (None, T2Value::Finite(t2)) => 3.0 * t2,
        (None, T2Value::Unbounded) => {
            return Err(usage(
                "host has no spinful isotopes; give --t-max explicitly",
            ));
        }
    };
    let config = SimulationConfig {
        field_t: args.field_t,
        electron_g: args.electron_g,
        order,
        t_max,
        n_times: args.n_times,
        n_instances: args.instances,
        master_seed: args.seed,
        r_bath: args.r_bath.unwrap_or(default_radii.0),
        r_pair: args.r_pair.unwrap_or(default_radii.1),
        pairs: args.pairs.into(),
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    log::info!(
        "{}: {} instances, CCE-{}, {} T, t_max {:.3e} s",
        source.material_id(),
        config.n_instances,
        args.order,
        config.field_t,
        config.t_max
    );

    let curve = ensemble_coherence(&source, &table, &config)?;
    if let Some(out) = &args.out {
        emit(Some(out), &curve.to_csv())?;
    }
    let fit = fit_stretched_exponential(&curve)?;
    print!(
        "{}",
        to_json(&SimulateOutput {
            material: source.material_id(),
            fit,
            config: &config,
        })
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictOutput {
    material: String,
    formula: String,
    g_eff: Option<f64>,
    element_densities_cm3: std::collections::BTreeMap<String, f64>,
    #[serde(flatten)]
    prediction: T2Prediction,
}

fn predict(args: PredictArgs) -> CliResult {
    let table = IsotopeTable::bundled();
    let mut constants = ScalingConstants::default();
    if let Some(g) = args.g_eff {
        positive("g-eff", g)?;
        constants.c = transition_prefactor(g, &constants)?;
    }
    let structure = load_structure(&args.cif)?;
    let prediction = structure_prediction(&structure, &table, &constants)?;
    let output = PredictOutput {
        material: structure.name.clone(),
        formula: structure.reduced_formula(),
        g_eff: args.g_eff,
        element_densities_cm3: element_densities(&structure).into_iter().collect(),
        prediction,
    };
    print!("{}", to_json(&output));
    Ok(())
}

fn screen(args: ScreenArgs) -> CliResult {
    if let Some(t) = args.min_t2 {
        positive("min-t2", t)?;
    }
    let corpus = load_corpus(&args.corpus)?;
    for s in &corpus.skipped {
        log::warn!("skipped {}: {}", s.source, s.reason);
    }
    let filters = ScreeningFilters {
        min_gap: args.min_gap,
        max_e_hull: args.max_e_hull,
        min_t2: args.min_t2,
    };
    let mut report = screen_corpus(
        &corpus.records,
        &IsotopeTable::bundled(),
        &ScalingConstants::default(),
        &filters,
    );
    for s in &report.skipped {
        log::warn!("skipped {}: {}", s.source, s.reason);
    }
    report.skipped.extend(corpus.skipped);
    log::info!("{} materials ranked", report.rows.len());
    match &args.out {
        Some(out) => {
            emit(Some(out), &report.to_csv())?;
            let sidecar = out.with_extension("json");
            emit(Some(&sidecar), &report.to_json())
        }
        None => emit(None, &report.to_csv()),
    }
}

fn periodic_table(args: PeriodicTableArgs) -> CliResult {
    positive("density", args.density)?;
    let rows = element_table(
        &IsotopeTable::bundled(),
        args.density,
        &ScalingConstants::default(),
    )?;
    emit(args.out.as_deref(), &element_table_csv(&rows))
}

fn decouple(args: DecoupleArgs) -> CliResult {
    if let Some(l) = args.l {
        positive("l", l)?;
    }
    let table = IsotopeTable::bundled();
    let structure = load_structure(&args.cif)?;
    let mut rows = material_decoupling(&structure, &table)?;
    if let Some(l) = args.l {
        rows = rows
            .into_iter()
            .map(|r| spinbath::scaling::decoupling_field(&r.pair.0, &r.pair.1, l))
            .collect::<Result<_, _>>()?;
    }
    let mut csv = String::from("isotope_a,isotope_b,l_A,b_dec_T\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{:e}\n",
            r.pair.0.label(),
            r.pair.1.label(),
            r.l,
            r.b_dec
        ));
    }
    emit(args.out.as_deref(), &csv)
}

#[derive(Serialize)]
struct CalibrationOutput {
    seed: u64,
    points: Vec<CalibrationPoint>,
    density_stage: Vec<DensityStage>,
    g_stage: Option<GStage>,
    report: Option<CalibrationReport>,
}

fn calibrate(args: CalibrateArgs) -> CliResult {
    let text = read_text(&args.grid)?;
    let grid: CalibrationGrid =
        toml::from_str(&text).map_err(|e| usage(format!("grid {}: {e}", args.grid.display())))?;
    if grid.isotopes.is_empty() || grid.densities.is_empty() {
        return Err(usage("grid needs at least one isotope and one density"));
    }
    for &n in &grid.densities {
        positive("densities", n)?;
    }
    positive("field_T", grid.field_t)?;
    let table = IsotopeTable::bundled();
    let constants = ScalingConstants::default();
    let mut points = Vec::new();
    for label in &grid.isotopes {
        let isotope = table.find(label).map_err(|e| usage(e.to_string()))?.clone();
        if !isotope.is_spinful() {
            return Err(usage(format!(
                "{} carries no nuclear spin",
                isotope.label()
            )));
        }
        for &density in &grid.densities {
            let (r_bath, r_pair) = scaled_cutoffs(density);
            let guess = t2_isotope(isotope.g_factor, isotope.spin.value(), density, &constants)?;
            let config = SimulationConfig {
                field_t: grid.field_t,
                t_max: 3.0 * guess,
                n_times: grid.n_times,
                n_instances: grid.instances,
                master_seed: args.seed,
                r_bath,
                r_pair,
                ..SimulationConfig::default()
            };
            config.validate().map_err(|e| usage(e.to_string()))?;
            let source = BathSource::Random {
                isotope: isotope.clone(),
                density,
                material_id: format!("{}@{density:e}", isotope.label()),
            };
            let fit = fit_stretched_exponential(&ensemble_coherence(&source, &table, &config)?)?;
            log::info!(
                "{} at {density:e} cm^-3: T2 = {:.4e} s, eta = {:.2}",
                isotope.label(),
                fit.t2,
                fit.eta
            );
            points.push(CalibrationPoint {
                isotope: isotope.clone(),
                density,
                t2: fit.t2,
                stderr: Some(fit.stderr_t2),
            });
        }
    }
    let density_stage = calibrate_density_stage(&points)?;
    let g_stage = match calibrate_g_stage(&density_stage) {
        Ok(g) => Some(g),
        Err(e) => {
            log::warn!("g-factor stage skipped: {e}");
            None
        }
    };
    let report = match calibrate_constants(&points) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("full calibration skipped: {e}");
            None
        }
    };
    let output = CalibrationOutput {
        seed: args.seed,
        points,
        density_stage,
        g_stage,
        report,
    };
    emit(args.out.as_deref(), &to_json(&output))
}

fn fetch(args: FetchArgs, file: &FileConfig) -> CliResult {
    let base_url = args
        .base_url
        .or_else(|| file.matdb.base_url.clone())
        .ok_or_else(|| {
            usage("no API base URL: pass --base-url or set matdb.base_url in --config")
        })?;
    let cache_dir = args
        .cache_dir
        .or_else(|| file.cache.dir.clone())
        .unwrap_or_else(|| PathBuf::from("cache"));
    let mut client = ClientConfig::from_env(base_url, cache_dir);
    client.refresh = args.refresh;
    let query = RemoteQuery {
        min_gap: args.min_gap,
        max_e_hull: args.max_e_hull,
        elements: args.elements,
    };
    let records = match fetch_remote(&query, &client) {
        Ok(r) => r,
        Err(ScreeningError::Config(msg)) => return Err(usage(msg)),
        Err(e) => return Err(e.into()),
    };
    log::info!(
        "{} records cached in {}",
        records.len(),
        client.materials_dir().display()
    );
    println!("{}", client.materials_dir().display());
    Ok(())
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let file = load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Predict(a) => predict(a),
        Command::Screen(a) => screen(a),
        Command::PeriodicTable(a) => periodic_table(a),
        Command::Decouple(a) => decouple(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Fetch(a) => fetch(a, &file),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
