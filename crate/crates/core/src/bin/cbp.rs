use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use compact_bilinear::classifier::TrainConfig;
use compact_bilinear::csv_io::{load_features_csv, save_features_csv};
use compact_bilinear::experiment::{
    evaluate, parse_methods, per_class_accuracy, run_bench, write_accuracy_csv, write_bench_outputs,
    write_confusion_csv, BenchConfig, ExperimentConfig, ExperimentMethod,
};
use compact_bilinear::model::{Model, ModelSeeds};
use compact_bilinear::selftest::{run_selftest, SelftestOptions};
use compact_bilinear::{generate_synthetic, FusionKind, Result, Seed, SynthConfig};

#[derive(Parser)]
#[command(name = "cbp", version, about = "Compact bilinear pooling for paired-view features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test pair of feature CSVs.
    Gen(GenArgs),
    /// Train a fusion model on a feature CSV.
    Train(TrainArgs),
    /// Evaluate a saved model on a feature CSV.
    Eval(EvalArgs),
    /// Compare fusion methods over repeated synthetic tasks.
    Bench(BenchArgs),
    /// Run the oracle suites; exits non-zero on failure.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Per-view feature dimension C.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Number of classes L.
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
}

impl SynthArgs {
    fn config(&self, seed: Seed) -> SynthConfig {
        SynthConfig {
            dim: self.dim,
            num_classes: self.classes,
            n_train: self.n_train,
            n_test: self.n_test,
            noise_sigma: self.noise,
            seed,
        }
    }
}

#[derive(Args)]
struct OptimArgs {
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Constant factor applied to both views before fusion.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Sketch dimension D for compact fusion (power of two).
    #[arg(long, default_value_t = 256)]
    sketch_dim: usize,
}

impl OptimArgs {
    fn train_config(&self, seed: Seed) -> TrainConfig {
        TrainConfig { learning_rate: self.lr, epochs: self.epochs, batch_size: self.batch_size, shuffle_seed: seed }
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature CSV to train on.
    #[arg(long)]
    data: PathBuf,
    /// concat | sum | product | full | compact
    #[arg(long, default_value = "compact")]
    method: String,
    /// Number of classes; defaults to the largest label plus one.
    #[arg(long)]
    classes: Option<usize>,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the model JSON.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory for report.csv and the confusion matrix.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Root seed; required so every bench run is reproducible.
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    synth: SynthArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Comma-separated subset of concat,sum,product,full,compact,avg-late.
    #[arg(long, default_value = "concat,sum,product,full,compact,avg-late")]
    methods: String,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value = "bench-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt one sketch sign on the fast path to check the oracle suite
    /// notices.
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

fn gen(args: GenArgs) -> Result<()> {
    let (train, test) = generate_synthetic(&args.synth.config(Seed(args.seed)))?;
    save_features_csv(&train, &args.train_out)?;
    save_features_csv(&test, &args.test_out)?;
    println!("wrote {} train and {} test samples", train.len(), test.len());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let kind: FusionKind = args.method.parse()?;
    let data = load_features_csv(&args.data, args.classes)?;
    let seed = Seed(args.seed);
    let seeds = ModelSeeds { hash: seed, init: seed, shuffle: seed };
    let cfg = args.optim.train_config(seed);
    let (model, trace) = Model::train(&data, kind, args.optim.sketch_dim, args.optim.alpha, &cfg, seeds)?;
    model.save(&args.model)?;
    println!(
        "trained {} on {} samples; final training loss {:.6}",
        kind,
        data.len(),
        trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = Model::load(&args.model)?;
    let data = load_features_csv(&args.data, Some(model.num_classes()))?;
    let confusion = evaluate(&model, &data)?;
    let correct: usize = (0..confusion.len()).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / data.len() as f64;
    let per_class = per_class_accuracy(&confusion);
    let method = ExperimentMethod::Fusion(model.method.kind());
    match args.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(&dir)?;
            write_accuracy_csv([(method, accuracy, per_class.as_slice())], model.num_classes(), std::fs::File::create(dir.join("report.csv"))?)?;
            write_confusion_csv(&confusion, std::fs::File::create(dir.join(format!("confusion_{method}.csv")))?)?;
        }
        None => write_accuracy_csv([(method, accuracy, per_class.as_slice())], model.num_classes(), std::io::stdout())?,
    }
    eprintln!("accuracy {accuracy:.4} on {} samples", data.len());
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let seed = Seed(args.seed);
    let cfg = BenchConfig {
        synth: args.synth.config(seed),
        experiment: ExperimentConfig {
            sketch_dim: args.optim.sketch_dim,
            alpha: args.optim.alpha,
            train: args.optim.train_config(seed),
            seed,
        },
        methods: parse_methods(&args.methods)?,
        repeats: args.repeats,
        seed,
    };
    let report = run_bench(&cfg)?;
    write_bench_outputs(&report, &args.out_dir)?;
    for m in &report.methods {
        println!("{:<9} {:.4} ± {:.4}", m.method.token(), m.mean_accuracy, m.std_accuracy);
    }
    eprintln!("reports written to {}", args.out_dir.display());
    Ok(())
}

fn selftest(args: SelftestArgs) -> bool {
    let report = run_selftest(&SelftestOptions { inject_sign_flip: args.inject_sign_flip, seed: args.seed });
    for s in &report.suites {
        println!("{} {:<32} {:>7.2}s  {}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.seconds, s.detail);
    }
    report.all_passed()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Selftest(a) => {
            return if selftest(a) { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
