use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use xylo_snn::dataset::{Split, SyntheticDatasetSpec};
use xylo_snn::frontend::{design_filterbank, read_wav, FilterBankSpec};
use xylo_snn::harness::{classify_segment, evaluate, EvalReport, Model};
use xylo_snn::mapper::{HardwareLimits, MappedSpec};
use xylo_snn::network::{simulate_float, NetworkSpec, PyramidConfig, WeightInit};
use xylo_snn::pipeline::{
    encode_split, map_stage, plot_stage, quantize_stage, require_file, run_pipeline, synth_stage, train_stage,
    write_float_traces, write_int_traces, PipelineManifest,
};
use xylo_snn::raster::EventRaster;
use xylo_snn::trainer::{calibrate_readout_thresholds, train_from, Checkpoint, TrainConfig};
use xylo_snn::xylo::{simulate_int, HardwareConfig};
use xylo_snn::{Error, Result};

#[derive(Parser)]
#[command(name = "xylo-snn", version, about = "Train, map, quantize and simulate spiking audio classifiers")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Directory that relative default paths resolve against.
    #[arg(long, global = true, env = "XYLO_SNN_DATA", default_value = ".")]
    data_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic acoustic-scene dataset.
    Synth(SynthArgs),
    /// Train the pyramid network and calibrate its readout thresholds.
    Train(TrainArgs),
    /// Check design rules and place a trained network onto the core.
    Map(MapArgs),
    /// Quantize a mapped network into an integer configuration.
    Quantize(QuantizeArgs),
    /// Run the float and/or integer model on a recording, raster or dataset.
    Sim(SimArgs),
    /// Evaluate one backend on a dataset split.
    Eval(EvalArgs),
    /// Render the latency histogram and readout traces.
    Plot(PlotArgs),
    /// Run every stage from a pipeline manifest.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (default: <data-dir>/dataset).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of classes, taken in order from the built-in recipes.
    #[arg(long)]
    classes: Option<usize>,
    /// Segment length in seconds.
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sample_rate: Option<u32>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Full dataset spec as TOML; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct FrontendArg {
    /// Front-end parameters as TOML (default: built-in filterbank).
    #[arg(long)]
    frontend: Option<PathBuf>,
}

impl FrontendArg {
    fn load(&self) -> Result<FilterBankSpec> {
        match &self.frontend {
            Some(p) => load_toml(p),
            None => Ok(FilterBankSpec::default()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    FanIn,
    SynapticGain,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest (default: <data-dir>/dataset/manifest.toml).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    frontend: FrontendArg,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Continue from this checkpoint instead of a fresh network.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Checkpoint output (default: <data-dir>/checkpoint.toml).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Calibrated network output (default: <data-dir>/network.toml).
    #[arg(long)]
    network: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    /// Trained network (default: <data-dir>/network.toml).
    #[arg(long)]
    network: Option<PathBuf>,
    /// Output (default: <data-dir>/mapped.toml).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Mapped network (default: <data-dir>/mapped.toml).
    #[arg(long)]
    mapped: Option<PathBuf>,
    /// Output (default: <data-dir>/config.toml).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Float,
    Int,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Float network (default: <data-dir>/network.toml).
    #[arg(long)]
    network: Option<PathBuf>,
    /// Integer configuration (default: <data-dir>/config.toml).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_enum, default_value = "both")]
    backend: BackendArg,
    #[command(flatten)]
    model: ModelArgs,
    /// A WAV recording or an event raster; without it the dataset is used.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Dataset manifest (default: <data-dir>/dataset/manifest.toml).
    #[arg(long, conflicts_with = "input")]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[command(flatten)]
    frontend: FrontendArg,
    /// Output raster path for a single input; with both backends the stem
    /// gains `-float` and `-int`.
    #[arg(long, requires = "input")]
    output: Option<PathBuf>,
    /// Dump per-step neuron states of a single input as CSV into this directory.
    #[arg(long, requires = "input")]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "int")]
    backend: BackendArg,
    #[command(flatten)]
    model: ModelArgs,
    /// Dataset manifest (default: <data-dir>/dataset/manifest.toml).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[command(flatten)]
    frontend: FrontendArg,
    /// Report output (default: <data-dir>/eval-<backend>.toml).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Evaluation report (default: <data-dir>/eval-int.toml).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Float network for the traces (default: <data-dir>/network.toml).
    #[arg(long)]
    network: Option<PathBuf>,
    /// Dataset manifest (default: <data-dir>/dataset/manifest.toml).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    frontend: FrontendArg,
    /// Output directory (default: <data-dir>/plots).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline manifest; outputs land next to it.
    #[arg(long, required_unless_present = "print_default")]
    manifest: Option<PathBuf>,
    /// Print a manifest with every default filled in and exit.
    #[arg(long)]
    print_default: bool,
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    require_file("parameter file", path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    })
}

struct Ctx {
    data: PathBuf,
}

impl Ctx {
    fn or(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.data.join(default))
    }

    fn dataset(&self, given: &Option<PathBuf>) -> PathBuf {
        self.or(given, "dataset/manifest.toml")
    }
}

fn load_network(path: &Path) -> Result<NetworkSpec> {
    require_file("network", path)?;
    NetworkSpec::load(path)
}

fn load_config(path: &Path) -> Result<HardwareConfig> {
    require_file("configuration", path)?;
    HardwareConfig::load(path)
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let mut spec: SyntheticDatasetSpec = match &a.spec {
        Some(p) => load_toml(p)?,
        None => SyntheticDatasetSpec::default(),
    };
    if let Some(n) = a.classes {
        if n == 0 || n > spec.classes.len() {
            return Err(Error::InvalidParam(format!(
                "--classes must be between 1 and {}, got {n}",
                spec.classes.len()
            )));
        }
        spec.classes.truncate(n);
    }
    if let Some(s) = a.seconds {
        spec.segment_seconds = s;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(r) = a.sample_rate {
        spec.sample_rate = r;
    }
    if let Some(n) = a.n_train {
        spec.n_train = n;
    }
    if let Some(n) = a.n_test {
        spec.n_test = n;
    }
    let out = ctx.or(&a.out, "dataset");
    let manifest = synth_stage(&spec, &out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let frontend = a.frontend.load()?;
    let dataset = ctx.dataset(&a.dataset);
    let mut cfg = TrainConfig::default();
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.adam.lr = lr;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let mut model = PyramidConfig {
        n_channels: frontend.n_channels,
        dt: frontend.bin_dt,
        seed: cfg.seed,
        ..Default::default()
    };
    if let Some(init) = a.init {
        model.init = match init {
            InitArg::FanIn => WeightInit::FanIn,
            InitArg::SynapticGain => WeightInit::SynapticGain,
        };
    }
    let resume = match &a.resume {
        Some(p) => {
            require_file("checkpoint", p)?;
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    let train_set = encode_split(&dataset, &frontend, Split::Train)?;
    model.n_classes = train_set.classes.len();

    let (checkpoint, network) = match resume {
        None => {
            let t = train_stage(&train_set.segments, &model, &cfg)?;
            (t.checkpoint, t.network)
        }
        Some(ck) => {
            let outcome = train_from(ck.net, ck.optimizer, &train_set.segments, &cfg)?;
            let mut checkpoint = Checkpoint::new(&outcome);
            checkpoint.loss_curve = ck.loss_curve.into_iter().chain(outcome.loss_curve).collect();
            checkpoint.epochs = checkpoint.loss_curve.len();
            let mut net = outcome.net;
            calibrate_readout_thresholds(&net, &train_set.segments)?.apply(&mut net)?;
            (checkpoint, net)
        }
    };
    let ck_path = ctx.or(&a.checkpoint, "checkpoint.toml");
    let net_path = ctx.or(&a.network, "network.toml");
    checkpoint.save(&ck_path)?;
    network.save(&net_path)?;
    if let (Some(first), Some(last)) = (checkpoint.loss_curve.first(), checkpoint.loss_curve.last()) {
        println!("loss {first:.4} -> {last:.4} after {} epochs", checkpoint.epochs);
    }
    println!("{}\n{}", ck_path.display(), net_path.display());
    Ok(())
}

fn map(ctx: &Ctx, a: MapArgs) -> Result<()> {
    let net = load_network(&ctx.or(&a.network, "network.toml"))?;
    let mapped = map_stage(&net, &HardwareLimits::default())?;
    let out = ctx.or(&a.out, "mapped.toml");
    mapped.save(&out)?;
    println!(
        "{} ({} inputs, {} hidden, {} readout)",
        out.display(),
        mapped.n_input(),
        mapped.n_hidden(),
        mapped.n_readout()
    );
    Ok(())
}

fn quantize(ctx: &Ctx, a: QuantizeArgs) -> Result<()> {
    let path = ctx.or(&a.mapped, "mapped.toml");
    require_file("mapped network", &path)?;
    let config = quantize_stage(&MappedSpec::load(&path)?)?;
    let out = ctx.or(&a.out, "config.toml");
    config.save(&out)?;
    println!("{}", out.display());
    Ok(())
}

fn load_input(path: &Path, frontend: &FilterBankSpec) -> Result<EventRaster> {
    require_file("input", path)?;
    let is_wav = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if !is_wav {
        return EventRaster::load(path);
    }
    let (audio, rate) = read_wav(path)?;
    if rate != frontend.sample_rate {
        return Err(Error::InvalidParam(format!(
            "{} is sampled at {rate} Hz but the front end expects {} Hz",
            path.display(),
            frontend.sample_rate
        )));
    }
    design_filterbank(frontend)?.encode(&audio)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{suffix}"),
    };
    path.with_file_name(name)
}

fn decision(output: &EventRaster) -> String {
    classify_segment(output).map_or("none".into(), |c| c.to_string())
}

fn sim(ctx: &Ctx, a: SimArgs) -> Result<()> {
    let frontend = a.frontend.load()?;
    let want_float = a.backend != BackendArg::Int;
    let want_int = a.backend != BackendArg::Float;
    let net = if want_float {
        Some(load_network(&ctx.or(&a.model.network, "network.toml"))?)
    } else {
        None
    };
    let config = if want_int {
        Some(load_config(&ctx.or(&a.model.config, "config.toml"))?)
    } else {
        None
    };

    let Some(input) = &a.input else {
        let data = encode_split(&ctx.dataset(&a.dataset), &frontend, a.split.into())?;
        let reports: Vec<EvalReport> = net
            .as_ref()
            .map(Model::Float)
            .into_iter()
            .chain(config.as_ref().map(Model::Int))
            .map(|m| evaluate(m, &data.segments))
            .collect::<Result<_>>()?;
        for r in &reports {
            println!("{} accuracy {:.4} on {} segments", r.backend, r.accuracy, r.n_segments);
        }
        if let [f, i] = reports.as_slice() {
            println!("decision agreement {:.4}", f.agreement(i)?);
        }
        return Ok(());
    };

    let raster = load_input(input, &frontend)?;
    let mut outputs = Vec::new();
    if let Some(net) = &net {
        let sim = simulate_float(net, &raster, a.record.is_some())?;
        if let (Some(dir), Some(traces)) = (&a.record, &sim.traces) {
            write_float_traces(traces, dir)?;
        }
        println!("float decision {}", decision(&sim.output));
        outputs.push(("float", sim.output));
    }
    if let Some(cfg) = &config {
        let sim = simulate_int(cfg, &raster, a.record.is_some())?;
        if let (Some(dir), Some(trace)) = (&a.record, &sim.trace) {
            write_int_traces(trace, cfg.n_hidden(), cfg.n_readout(), dir)?;
        }
        println!("int decision {}", decision(&sim.output));
        outputs.push(("int", sim.output));
    }
    if let [(_, f), (_, i)] = outputs.as_slice() {
        let same = classify_segment(f) == classify_segment(i);
        println!("decisions {}", if same { "agree" } else { "differ" });
    }
    if let Some(out) = &a.output {
        for (name, raster) in &outputs {
            let path = if outputs.len() > 1 { suffixed(out, name) } else { out.clone() };
            raster.save(&path)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    if a.backend == BackendArg::Both {
        return Err(Error::InvalidParam("eval takes one backend; use `sim` to compare".into()));
    }
    let frontend = a.frontend.load()?;
    let data = encode_split(&ctx.dataset(&a.dataset), &frontend, a.split.into())?;
    let (report, default_out) = if a.backend == BackendArg::Float {
        let net = load_network(&ctx.or(&a.model.network, "network.toml"))?;
        (evaluate(Model::Float(&net), &data.segments)?, "eval-float.toml")
    } else {
        let cfg = load_config(&ctx.or(&a.model.config, "config.toml"))?;
        (evaluate(Model::Int(&cfg), &data.segments)?, "eval-int.toml")
    };
    let out = ctx.or(&a.out, default_out);
    report.save(&out)?;
    println!(
        "{} accuracy {:.4}, median latency {}, {:.1} synops/step",
        report.backend,
        report.accuracy,
        report
            .median_latency_ms
            .map_or("n/a".into(), |m| format!("{m:.1} ms")),
        report.synops.mean_per_step
    );
    println!("{}", out.display());
    Ok(())
}

fn plot(ctx: &Ctx, a: PlotArgs) -> Result<()> {
    let frontend = a.frontend.load()?;
    let report_path = ctx.or(&a.report, "eval-int.toml");
    require_file("report", &report_path)?;
    let report = EvalReport::load(&report_path)?;
    let net = load_network(&ctx.or(&a.network, "network.toml"))?;
    let test = encode_split(&ctx.dataset(&a.dataset), &frontend, Split::Test)?;
    for p in plot_stage(&report, &net, &test, &ctx.or(&a.out, "plots"))? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    if a.print_default {
        print!("{}", PipelineManifest::default().to_toml()?);
        return Ok(());
    }
    let path = a.manifest.expect("required by clap");
    require_file("pipeline manifest", &path)?;
    let manifest = PipelineManifest::load(&path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let run = run_pipeline(&manifest, base)?;
    println!(
        "float accuracy {:.4}, int accuracy {:.4}, agreement {:.4}",
        run.float_report.accuracy, run.int_report.accuracy, run.agreement
    );
    if let Some(m) = run.float_report.median_latency_ms {
        println!("median latency {m:.1} ms");
    }
    for p in &run.outputs {
        println!("{}", p.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Runtime(format!("thread pool: {e}")))?;
    }
    let ctx = Ctx { data: cli.data_dir };
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Map(a) => map(&ctx, a),
        Command::Quantize(a) => quantize(&ctx, a),
        Command::Sim(a) => sim(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Plot(a) => plot(&ctx, a),
        Command::Run(a) => run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Drc(violations) = &e {
                for v in violations {
                    eprintln!("  {v}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
