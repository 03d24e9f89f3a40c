//! Command-line surface. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{apply_config, config_to_text};
use crate::error::{Error, Result};
use crate::ft::{init_ft_params, quartile_stats, write_quartile_csv};
use crate::harness::{cross_domain_matrix, emit_feature_projection, evaluate, write_matrix_csv, DEFAULT_TRIALS};
use crate::heads::HeadKind;
use crate::model::ModelState;
use crate::rng::RngStream;
use crate::task::{generate_synthetic_domain, load_domain, save_domain, split_classes, DatasetFormat, Domain, Split, SyntheticDomainSpec};
use crate::train::{pretrain_encoder, train_loop, OptimizerKind, TrainConfig, TrainMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "lft", version, about = "Few-shot classification with learned feature-wise transformations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic domain.
    GenDomain {
        #[command(flatten)]
        common: Common,
        /// Seed shared by domains with the same class prototypes.
        #[arg(long, default_value_t = 0)]
        master_seed: u64,
        #[arg(long, default_value_t = 20)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        latent: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long, default_value_t = 1.0)]
        warp: f64,
    },
    /// Tag classes as train/val/test and write PREFIX.{train,val,test}.<ext>.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        domain: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        train: f64,
        #[arg(long, default_value_t = 0.2)]
        val: f64,
        #[arg(long, default_value_t = 0.2)]
        test: f64,
    },
    /// Pre-train the encoder with a temporary linear classifier.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        domain: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Episodic training (baseline, ft or lft).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        seen: Vec<PathBuf>,
        #[arg(long)]
        mode: Option<TrainMode>,
        #[arg(long)]
        head: Option<HeadKind>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        optimizer: Option<OptimizerKind>,
        /// Start from this checkpoint (e.g. a pre-trained encoder).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Training log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one domain.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        domain: PathBuf,
    },
    /// Evaluate a checkpoint on several domains.
    CrossEval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, required = true)]
        domain: Vec<PathBuf>,
    },
    /// Quartiles of the feature-wise transformation hyper-parameters.
    StatsFt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CkptArg,
    },
    /// Two-component PCA of eval-mode embeddings.
    StatsProjection {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CkptArg,
        #[arg(long, required = true)]
        domain: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
}

#[derive(Args, Debug, Clone)]
struct CkptArg {
    #[arg(long)]
    ckpt: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 5)]
    way: usize,
    #[arg(long, default_value_t = 5)]
    shot: usize,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn load(path: &Path) -> Result<Domain> {
    with_path(path, load_domain(path, DatasetFormat::from_path(path)))
}

fn load_ckpt(path: &Path) -> Result<ModelState> {
    with_path(path, load_checkpoint(path)).map(|(m, _)| m)
}

fn base_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => apply_config(TrainConfig::default(), &std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn require_out(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

/// Adds or drops ft parameters so the model matches `mode`.
fn fit_to_mode(model: ModelState, cfg: &TrainConfig) -> Result<ModelState> {
    match (cfg.mode, &model.ft) {
        (TrainMode::Baseline, Some(_)) => Ok(model.with_ft(None)),
        (TrainMode::Ft | TrainMode::Lft, None) => {
            let ft = init_ft_params(&model.encoder_config().block_widths, cfg.ft_init_gamma, cfg.ft_init_beta)?;
            Ok(model.with_ft(Some(ft)))
        }
        _ => Ok(model),
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenDomain {
            common,
            master_seed,
            classes,
            dim,
            latent,
            per_class,
            noise,
            warp,
        } => {
            let out = require_out(&common)?;
            let spec = SyntheticDomainSpec {
                name: crate::task::domain_name(out),
                master_seed,
                domain_seed: common.seed.unwrap_or(0),
                num_classes: classes,
                latent_dim: latent,
                dim,
                per_class,
                noise,
                warp,
            };
            let d = generate_synthetic_domain(&spec)?;
            save_domain(&d, out, DatasetFormat::from_path(out))
        }
        Command::Split {
            common,
            domain,
            train,
            val,
            test,
        } => {
            let d = load(&domain)?;
            let tagged = split_classes(&d, (train, val, test), &mut RngStream::substream(common.seed.unwrap_or(0), "split", 0))?;
            let prefix = match &common.out {
                Some(p) => p.clone(),
                None => domain.with_extension(""),
            };
            let ext = domain.extension().and_then(|e| e.to_str()).unwrap_or("fsds");
            for split in [Split::Train, Split::Val, Split::Test] {
                let path = PathBuf::from(format!("{}.{split}.{ext}", prefix.display()));
                save_domain(&tagged.subset(split), &path, DatasetFormat::from_path(&path))?;
            }
            Ok(())
        }
        Command::Pretrain {
            common,
            domain,
            epochs,
            batch_size,
            alpha,
        } => {
            let out = require_out(&common)?;
            let mut cfg = base_config(&common)?;
            cfg.mode = TrainMode::Baseline;
            let d = load(&domain)?;
            let model = cfg.init_model(d.dim())?;
            let mut rng = RngStream::substream(cfg.master_seed, "pretrain", 0);
            let res = pretrain_encoder(&model.encoder, &d, epochs, batch_size, alpha.unwrap_or(cfg.alpha), &mut rng)?;
            for (e, l) in res.epoch_losses.iter().enumerate() {
                log::info!("pretrain epoch {e}: loss {l:.6}");
            }
            let model = ModelState {
                encoder: res.encoder,
                ..model
            };
            save_checkpoint(&model, &config_to_text(&cfg), out)
        }
        Command::Train {
            common,
            seen,
            mode,
            head,
            iterations,
            alpha,
            optimizer,
            init,
            log: log_path,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(h) = head {
                cfg.head = h;
            }
            if let Some(i) = iterations {
                cfg.iterations = i;
            }
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            if let Some(o) = optimizer {
                cfg.optimizer = o;
            }
            cfg.validate()?;
            let domains = seen.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
            let dim = domains[0].dim();
            if let Some(bad) = domains.iter().find(|d| d.dim() != dim) {
                return Err(Error::dim("train", format!("domain `{}` has dim {} vs {dim}", bad.name, bad.dim())));
            }
            let model = match &init {
                Some(p) => {
                    let m = load_ckpt(p)?;
                    let fresh = cfg.init_model(dim)?;
                    ModelState { head: fresh.head, ..m }
                }
                None => cfg.init_model(dim)?,
            };
            let model = fit_to_mode(model, &cfg)?;
            cfg.encoder_widths = model.encoder_config().block_widths.clone();
            let mut log_file = match &log_path {
                Some(p) => Some(BufWriter::new(File::create(p)?)),
                None => None,
            };
            let out = train_loop(&cfg, &domains, model, log_file.as_mut().map(|w| w as &mut dyn Write))?;
            if let Some(last) = out.log.last() {
                eprintln!("trained {} iterations, final loss_ps {:.6}", out.log.len(), last.loss_ps);
            }
            if let Some(p) = &common.out {
                save_checkpoint(&out.model, &config_to_text(&cfg), p)?;
            }
            Ok(())
        }
        Command::Eval { common, eval, domain } => {
            let model = load_ckpt(&eval.ckpt)?;
            let d = load(&domain)?;
            let report = evaluate(&model, &d, eval.way, eval.shot, eval.trials, common.seed.unwrap_or(0))?;
            let mut w = open_out(common.out.as_deref())?;
            report.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::CrossEval { common, eval, domain } => {
            let model = load_ckpt(&eval.ckpt)?;
            let ds = domain.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
            let reports = cross_domain_matrix(&model, &ds, eval.way, eval.shot, eval.trials, common.seed.unwrap_or(0))?;
            let mut w = open_out(common.out.as_deref())?;
            write_matrix_csv(&reports, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::StatsFt { common, ckpt } => {
            let model = load_ckpt(&ckpt.ckpt)?;
            let ft = model
                .ft
                .as_ref()
                .ok_or_else(|| Error::Config("checkpoint has no ft parameters".into()))?;
            let mut w = open_out(common.out.as_deref())?;
            write_quartile_csv(&quartile_stats(ft), &mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::StatsProjection {
            common,
            ckpt,
            domain,
            samples,
        } => {
            let out = require_out(&common)?;
            let model = load_ckpt(&ckpt.ckpt)?;
            let ds = domain.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
            emit_feature_projection(&model, &ds, samples, out, common.seed.unwrap_or(0))?;
            Ok(())
        }
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
