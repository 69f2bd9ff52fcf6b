use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use laplex_bench::alloc::CountingAlloc;
use laplex_bench::density_demo::{run_density_demo, DensityOptions};
use laplex_bench::experiments::{
    run_accuracy, run_bench_matvec, run_countsketch_demo, run_gram_bench, run_rff_tradeoff, run_toeplitz_compare,
};
use laplex_bench::record::emit;
use laplex_bench::{BenchError, BenchRecord, Method, Precision, RunOptions};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser, Debug)]
#[command(name = "laplex-bench", version, about = "Timing and accuracy experiments for laplex operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Smallest size (power of two).
    #[arg(long, default_value_t = 1 << 10)]
    n_min: usize,
    /// Largest size (power of two).
    #[arg(long, default_value_t = 1 << 14)]
    n_max: usize,
    /// Second dimension; square when omitted.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 2)]
    warmups: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
    /// Comma-separated list, e.g. `laplex,dense`. Defaults per subcommand.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Worker threads for the data-parallel paths (0 = rayon default).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 2 << 30)]
    mem_cap_bytes: u64,
    #[arg(long, default_value_t = 2000)]
    time_cap_ms: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DataSource {
    Synthetic,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Batched forward product, laplex vs materialized dense.
    BenchMatvec(Common),
    /// f32 error of laplex and dense against an f64 dense reference.
    Accuracy(Common),
    /// Weighted Gram with a fixed output side, sweeping the summed side.
    BenchGram {
        #[command(flatten)]
        common: Common,
        /// Output side of the Gram.
        #[arg(long, default_value_t = 256)]
        gram_n: usize,
    },
    /// Uniform-grid products, circulant FFT vs laplex.
    ToeplitzCompare {
        #[command(flatten)]
        common: Common,
        /// Grid spacing.
        #[arg(long, default_value_t = 0.05)]
        spacing: f64,
    },
    /// Random Fourier feature estimates vs exact laplex.
    RffTradeoff {
        #[command(flatten)]
        common: Common,
        /// Feature counts to sweep.
        #[arg(long, value_delimiter = ',', default_value = "16,64,256,1024")]
        features: Vec<usize>,
    },
    /// Signed hashed aggregation, direct vs low-temperature laplex.
    CountsketchDemo(Common),
    /// Fit a factor Gaussian to synthetic data and check the Woodbury path.
    DensityDemo {
        /// Generating model JSON; written when missing. The fit goes to `<stem>.fitted.json`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 400)]
        fit_steps: usize,
        #[arg(long, default_value_t = 0.05)]
        step_size: f64,
        #[arg(long, value_enum, default_value_t = DataSource::Synthetic)]
        data: DataSource,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        rank: usize,
        #[arg(long, default_value_t = 2)]
        components: usize,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Draws for the empirical covariance check; 0 skips it.
        #[arg(long, default_value_t = 0)]
        covariance_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
}

fn init_threads(threads: usize) -> Result<(), BenchError> {
    if threads == 0 {
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| BenchError::InvalidFlag(format!("--threads: {e}")))
    }
    #[cfg(not(feature = "parallel"))]
    {
        if threads == 1 {
            Ok(())
        } else {
            Err(BenchError::InvalidFlag("built without the `parallel` feature; use --threads 1".into()))
        }
    }
}

fn options(c: &Common, default_methods: &[Method]) -> Result<RunOptions, BenchError> {
    init_threads(c.threads)?;
    let methods = match &c.methods {
        Some(list) => list.iter().map(|s| s.parse()).collect::<Result<Vec<Method>, _>>()?,
        None => default_methods.to_vec(),
    };
    eprintln!(
        "run: seed={} precision={:?} trials={} warmups={} batch={} threads={} mem_cap_bytes={} time_cap_ms={}",
        c.seed, c.precision, c.trials, c.warmups, c.batch, c.threads, c.mem_cap_bytes, c.time_cap_ms
    );
    Ok(RunOptions {
        n_min: c.n_min,
        n_max: c.n_max,
        k: c.k,
        batch: c.batch,
        trials: c.trials,
        warmups: c.warmups,
        seed: c.seed,
        precision: c.precision,
        methods,
        mem_cap_bytes: c.mem_cap_bytes,
        time_cap_ms: c.time_cap_ms,
    })
}

fn run(cli: Cli) -> Result<(), BenchError> {
    use Method::*;
    let (records, out): (Vec<BenchRecord>, Option<PathBuf>) = match cli.command {
        Command::BenchMatvec(c) => (run_bench_matvec(&options(&c, &[Laplex, Dense])?)?, c.out),
        Command::Accuracy(c) => (run_accuracy(&options(&c, &[Laplex, Dense])?)?, c.out),
        Command::BenchGram { common, gram_n } => {
            (run_gram_bench(&options(&common, &[Laplex, Dense])?, gram_n)?, common.out)
        }
        Command::ToeplitzCompare { common, spacing } => (
            run_toeplitz_compare(&options(&common, &[ToeplitzFft, Laplex])?, spacing)?,
            common.out,
        ),
        Command::RffTradeoff { common, features } => {
            (run_rff_tradeoff(&options(&common, &[Laplex, Rff])?, &features)?, common.out)
        }
        Command::CountsketchDemo(c) => (run_countsketch_demo(&options(&c, &[Countsketch, Laplex])?)?, c.out),
        Command::DensityDemo {
            model,
            fit_steps,
            step_size,
            data: DataSource::Synthetic,
            dim,
            rank,
            components,
            samples,
            covariance_samples,
            seed,
            threads,
        } => {
            init_threads(threads)?;
            let report = run_density_demo(&DensityOptions {
                model,
                fit_steps,
                step_size,
                dim,
                rank,
                components,
                samples,
                covariance_samples,
                seed,
            })?;
            for line in report.lines() {
                println!("{line}");
            }
            return Ok(());
        }
    };
    emit(out.as_deref(), &records)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
