use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ising_plfit::coupling::{
    gen_biregular, gen_er, gen_graphon, gen_regular, regime_report, scaled_adjacency, Graph, Graphon,
};
use ising_plfit::harness::{self, ExperimentKind, ExperimentSpec};
use ising_plfit::meanfield::{linspace, magnetization_root, param_curve, write_param_curve};
use ising_plfit::model::{write_trace, GlauberSampler, InitState, TraceRow};
use ising_plfit::pseudolikelihood::{FitSummary, PseudoLikelihood, SolverOptions};
use ising_plfit::{CouplingMatrix, Error, IsingParams, RegimeThresholds, SpinConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "ising-plfit", version, about = "Pseudo-likelihood fitting for the Ising model on graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Graph generation.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Draw spin configurations by Glauber dynamics.
    Sample(SampleArgs),
    /// Joint pseudo-likelihood fit of (beta, B); prints JSON.
    Fit(FitArgs),
    /// Regime statistics of a coupling matrix; prints JSON.
    Diagnose(DiagnoseArgs),
    /// Run a canned or custom Monte-Carlo experiment; writes CSV.
    Experiment(ExperimentArgs),
    /// Parameter points on the fixed-point line of magnetization m; writes CSV.
    Curve(CurveArgs),
    /// Mean-field magnetization maximizing the scalar variational problem; prints JSON.
    Magnetization(MagnetizationArgs),
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Generate a random graph.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Regular,
    Er,
    Biregular,
    Graphon,
    Complete,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphFormat {
    /// `n m` header then one `i j` line per edge.
    Edges,
    /// Scaled adjacency as `n nnz` header then `i j w` lines.
    Coupling,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// Number of vertices (all families except biregular).
    #[arg(long)]
    n: Option<usize>,
    /// Degree for `regular`; right-side degree for `biregular`.
    #[arg(long)]
    d: Option<usize>,
    /// Edge probability for `er`.
    #[arg(long)]
    p: Option<f64>,
    /// Left-side size for `biregular`.
    #[arg(long)]
    a: Option<usize>,
    /// Right-side size for `biregular`.
    #[arg(long)]
    b: Option<usize>,
    /// Left-side degree for `biregular`.
    #[arg(long)]
    c: Option<usize>,
    /// JSON grid file for `graphon`.
    #[arg(long)]
    graphon: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = GraphFormat::Edges)]
    format: GraphFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    AllPlus,
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long = "b-field", short = 'B', allow_hyphen_values = true)]
    b_field: f64,
}

impl ParamArgs {
    fn params(&self) -> Result<IsingParams, Error> {
        IsingParams::new(self.beta, self.b_field)
    }
}

#[derive(Args)]
struct SampleArgs {
    /// Coupling matrix file; an edge-list file is accepted with `--graph`.
    #[arg(long)]
    coupling: PathBuf,
    /// Treat the input as an edge list and scale it.
    #[arg(long)]
    graph: bool,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 2000)]
    burn_in: usize,
    #[arg(long, default_value_t = 50)]
    spacing: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    init: InitArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Spin lines destination (standard output when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-sweep CSV trace of magnetization and energy.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    coupling: PathBuf,
    #[arg(long)]
    graph: bool,
    /// File of spin lines.
    #[arg(long)]
    spins: PathBuf,
    /// Which non-empty line of the spins file to fit.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Start Newton from the univariate fits.
    #[arg(long)]
    warm_start: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    coupling: PathBuf,
    #[arg(long)]
    graph: bool,
    #[arg(long, default_value_t = RegimeThresholds::default().mean_field)]
    mean_field_threshold: f64,
    #[arg(long, default_value_t = RegimeThresholds::default().row_sum_variance)]
    variance_threshold: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// figure2, rates, identifiability or custom (custom needs --spec).
    name: String,
    /// Overrides the spec's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON spec replacing the bundled default.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    /// Records CSV destination (standard output when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-(n, family) summary CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Print the effective spec as JSON and exit.
    #[arg(long)]
    print_spec: bool,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long, allow_hyphen_values = true)]
    m: f64,
    #[arg(long, default_value_t = 0.2)]
    beta_min: f64,
    #[arg(long, default_value_t = 1.5)]
    beta_max: f64,
    #[arg(long, default_value_t = 30)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MagnetizationArgs {
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long = "b-field", short = 'B', allow_hyphen_values = true)]
    b_field: f64,
}

enum Failure {
    Config(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Graph(GraphCommand::Gen(args)) => graph_gen(args),
        Command::Sample(args) => sample(args),
        Command::Fit(args) => fit(args),
        Command::Diagnose(args) => diagnose(args),
        Command::Experiment(args) => experiment(args),
        Command::Curve(args) => curve(args),
        Command::Magnetization(args) => magnetization(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| Failure::Config(format!("{}: {e}", path.display()))),
        None => {
            io::stdout().lock().write_all(bytes)?;
            Ok(())
        }
    }
}

fn need<T>(value: Option<T>, flag: &str, family: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::Config(format!("--{flag} is required for family {family}")))
}

fn load_coupling(path: &Path, as_graph: bool) -> Result<CouplingMatrix, Failure> {
    let text = read(path)?;
    Ok(if as_graph {
        scaled_adjacency(&Graph::parse_edge_list(&text)?)?
    } else {
        CouplingMatrix::parse_text(&text)?
    })
}

fn graph_gen(args: GenArgs) -> CliResult {
    let g = match args.family {
        Family::Regular => gen_regular(need(args.n, "n", "regular")?, need(args.d, "d", "regular")?, args.seed)?,
        Family::Er => gen_er(need(args.n, "n", "er")?, need(args.p, "p", "er")?, args.seed)?,
        Family::Biregular => gen_biregular(
            need(args.a, "a", "biregular")?,
            need(args.b, "b", "biregular")?,
            need(args.c, "c", "biregular")?,
            need(args.d, "d", "biregular")?,
            args.seed,
        )?,
        Family::Graphon => {
            let w = Graphon::from_json(&read(&need(args.graphon, "graphon", "graphon")?)?)?;
            gen_graphon(need(args.n, "n", "graphon")?, &w, args.seed)
        }
        Family::Complete => Graph::complete(need(args.n, "n", "complete")?),
    };
    let text = match args.format {
        GraphFormat::Edges => g.to_edge_list(),
        GraphFormat::Coupling => scaled_adjacency(&g)?.to_text(),
    };
    emit(args.out.as_deref(), text.as_bytes())
}

fn sample(args: SampleArgs) -> CliResult {
    if args.count == 0 {
        return Err(Failure::Config("--count must be at least 1".into()));
    }
    let a = load_coupling(&args.coupling, args.graph)?;
    let params = args.params.params()?;
    let init = match args.init {
        InitArg::Random => InitState::Random,
        InitArg::AllPlus => InitState::AllPlus,
    };
    let mut chain = GlauberSampler::new(&a, params, init, args.seed)?;
    let mut lines = String::new();
    let mut trace = Vec::new();
    let record = |chain: &GlauberSampler, trace: &mut Vec<TraceRow>| {
        trace.push(TraceRow {
            replicate: 0,
            sweep: chain.sweeps_done(),
            magnetization: chain.state().magnetization(),
            hamiltonian: chain.hamiltonian(),
            spins: None,
        })
    };
    let advance = |chain: &mut GlauberSampler, sweeps: usize, trace: &mut Vec<TraceRow>| {
        for _ in 0..sweeps {
            chain.sweep();
            if args.trace.is_some() {
                record(chain, trace);
            }
        }
    };
    advance(&mut chain, args.burn_in.max(1), &mut trace);
    for k in 0..args.count {
        if k > 0 {
            advance(&mut chain, args.spacing.max(1), &mut trace);
        }
        lines.push_str(&chain.state().to_line());
        lines.push('\n');
    }
    if let Some(path) = &args.trace {
        let file = fs::File::create(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        write_trace(io::BufWriter::new(file), &trace)?;
    }
    emit(args.out.as_deref(), lines.as_bytes())
}

fn fit(args: FitArgs) -> CliResult {
    let a = load_coupling(&args.coupling, args.graph)?;
    let text = read(&args.spins)?;
    let line = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .nth(args.index)
        .ok_or_else(|| Failure::Config(format!("spins file has no configuration at index {}", args.index)))?;
    let x = SpinConfig::parse_line(line)?;
    let pl = PseudoLikelihood::new(&a, &x)?;
    let options = SolverOptions { tol: args.tol, max_iter: args.max_iter, warm_start: args.warm_start, ..Default::default() };
    let (summary, failure) = match pl.fit_joint(&options) {
        Ok(fit) => (FitSummary::from(&fit), None),
        Err(Error::NoEstimator(sets)) => {
            let verdict = pl.existence();
            let msg = Error::NoEstimator(sets).to_string();
            (FitSummary::without_estimate(&verdict, a.n(), pl.t_stat()), Some(msg))
        }
        Err(e) => return Err(e.into()),
    };
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Config(e.to_string()))?;
    json.push('\n');
    emit(None, json.as_bytes())?;
    match failure {
        Some(msg) => Err(Failure::Numeric(msg)),
        None => Ok(()),
    }
}

fn diagnose(args: DiagnoseArgs) -> CliResult {
    let a = load_coupling(&args.coupling, args.graph)?;
    let thresholds = RegimeThresholds {
        mean_field: args.mean_field_threshold,
        row_sum_variance: args.variance_threshold,
        ..Default::default()
    };
    let mut json = serde_json::to_string_pretty(&regime_report(&a, &thresholds)).map_err(|e| Failure::Config(e.to_string()))?;
    json.push('\n');
    emit(None, json.as_bytes())
}

fn experiment(args: ExperimentArgs) -> CliResult {
    let kind = ExperimentKind::parse(&args.name)
        .ok_or_else(|| Failure::Config(format!("unknown experiment {:?}", args.name)))?;
    let mut spec = match &args.spec {
        Some(path) => ExperimentSpec::from_json(&read(path)?)?,
        None => kind
            .default_spec()
            .ok_or_else(|| Failure::Config("the custom experiment needs --spec".into()))?,
    };
    if spec.name != kind {
        return Err(Failure::Config(format!("spec is for {}, not {}", spec.name.as_str(), kind.as_str())));
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(r) = args.replicates {
        spec.replicates = r;
    }
    if let Some(ns) = args.n_values {
        spec.n_values = ns;
    }
    spec.validate()?;
    if args.print_spec {
        let mut json = serde_json::to_string_pretty(&spec).map_err(|e| Failure::Config(e.to_string()))?;
        json.push('\n');
        return emit(None, json.as_bytes());
    }
    let records = harness::run_experiment(&spec)?;
    let mut buf = Vec::new();
    harness::write_records(&mut buf, &records)?;
    emit(args.out.as_deref(), &buf)?;
    if let Some(path) = &args.summary {
        let mut buf = Vec::new();
        harness::write_summary(&mut buf, &harness::summarize(&records))?;
        emit(Some(path), &buf)?;
    }
    Ok(())
}

fn curve(args: CurveArgs) -> CliResult {
    let points = param_curve(args.m, &linspace(args.beta_min, args.beta_max, args.points))?;
    let mut buf = Vec::new();
    write_param_curve(&mut buf, args.m, &points)?;
    emit(args.out.as_deref(), &buf)
}

fn magnetization(args: MagnetizationArgs) -> CliResult {
    let root = magnetization_root(args.beta, args.theta, args.b_field)?;
    let mut json = serde_json::to_string_pretty(&root).map_err(|e| Failure::Config(e.to_string()))?;
    json.push('\n');
    emit(None, json.as_bytes())
}
