use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use nextpoi::data::Segment;
use nextpoi::pipeline::{
    cmd_evaluate, cmd_interpret, cmd_preprocess, cmd_pretrain, cmd_recommend, cmd_train,
    interpret_dir, model_path, EvalTarget, RecommendQuery, Requester, RunConfig,
};
use nextpoi::{Error, Result};

#[derive(Parser)]
#[command(name = "nextpoi", version, about = "Next-POI recommendation from check-in sequences")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Work directory holding data/, pretrain/, train/, eval/ and interpret/.
    #[arg(long, short, default_value = ".")]
    work: PathBuf,
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct ModelFlags {
    /// Drop the meta-data embeddings.
    #[arg(long)]
    no_meta: bool,
    /// Use a single transition matrix regardless of the time interval.
    #[arg(long)]
    no_interval: bool,
    /// Use a single POI-side bias regardless of the hour of day.
    #[arg(long)]
    no_timeslot: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a raw corpus and write the dataset bundle.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkins: Option<PathBuf>,
        #[arg(long)]
        pois: Option<PathBuf>,
        #[arg(long)]
        users: Option<PathBuf>,
    },
    /// Random walks plus SkipGram for POI embeddings; user embeddings from them.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Train the model with early stopping on validation MAP.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: ModelFlags,
        /// Initialize POI and user embeddings randomly.
        #[arg(long)]
        no_pretrain: bool,
    },
    /// Score a segment and write report.tsv and ranks.tsv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "test")]
        segment: SegmentArg,
        /// Model archive (default: <work>/train/model.txt).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Held-out users' check-ins, required for the coldstart segment.
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long)]
        heldout_meta: Option<PathBuf>,
    },
    /// Print the top-K POIs for one query as `rank<TAB>poi<TAB>score`.
    Recommend {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "cold_user", required_unless_present = "cold_user")]
        user: Option<String>,
        /// Recommend for a user outside the model.
        #[arg(long)]
        cold_user: bool,
        /// Comma-separated meta items of a cold user.
        #[arg(long, requires = "cold_user", value_delimiter = ',')]
        meta: Vec<String>,
        /// Previous POI id.
        #[arg(long)]
        prev: String,
        /// Query timestamp (seconds).
        #[arg(long)]
        time: i64,
        /// Timestamp of the previous check-in (default: the query time).
        #[arg(long)]
        prev_time: Option<i64>,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
    /// Write the top words of every hidden dimension to dims.txt.
    Interpret {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Output directory (default: interpret/ next to the work dir).
        #[arg(long, short, default_value = ".")]
        work: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SegmentArg {
    Validation,
    Test,
    Coldstart,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn set_path(cfg: &mut RunConfig, key: &str, p: &Option<PathBuf>) -> Result<()> {
    if let Some(p) = p {
        cfg.set(key, &p.display().to_string())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Preprocess { common, checkins, pois, users } => {
            let mut cfg = load_config(&common)?;
            set_path(&mut cfg, "checkins", &checkins)?;
            set_path(&mut cfg, "pois", &pois)?;
            set_path(&mut cfg, "users", &users)?;
            let stats = cmd_preprocess(&cfg, &common.work)?;
            print!("{}", stats.to_tsv());
        }
        Command::Pretrain { common, rho } => {
            let mut cfg = load_config(&common)?;
            if let Some(r) = rho {
                cfg.set("rho", &r.to_string())?;
            }
            let pre = cmd_pretrain(&cfg, &common.work)?;
            println!("{} POI and {} user embeddings written", pre.poi_emb.rows(), pre.user_emb.rows());
        }
        Command::Train { common, flags, no_pretrain } => {
            let mut cfg = load_config(&common)?;
            cfg.hp.use_meta &= !flags.no_meta;
            cfg.hp.use_interval &= !flags.no_interval;
            cfg.hp.use_timeslot &= !flags.no_timeslot;
            cfg.pretrain &= !no_pretrain;
            let out = cmd_train(&cfg, &common.work)?;
            let best = &out.history[out.best_epoch - 1];
            println!("best epoch {} validation MAP {:.6}", out.best_epoch, best.valid_map);
        }
        Command::Evaluate { common, segment, model, heldout, heldout_meta } => {
            let cfg = load_config(&common)?;
            let target = match segment {
                SegmentArg::Validation => EvalTarget::Segment(Segment::Validation),
                SegmentArg::Test => EvalTarget::Segment(Segment::Test),
                SegmentArg::Coldstart => EvalTarget::ColdStart {
                    checkins: heldout.ok_or_else(|| {
                        Error::Config("--segment coldstart needs --heldout <checkins file>".into())
                    })?,
                    meta: heldout_meta,
                },
            };
            let model = model.unwrap_or_else(|| model_path(&common.work));
            let report = cmd_evaluate(&cfg, &common.work, &model, &target)?;
            print!("{}", report.to_tsv());
        }
        Command::Recommend { model, user, cold_user, meta, prev, time, prev_time, k } => {
            let requester = match user {
                Some(u) if !cold_user => Requester::User(u),
                _ => Requester::Cold(meta),
            };
            let q = RecommendQuery {
                requester,
                prev_poi: prev,
                prev_time: prev_time.unwrap_or(time),
                time,
                k,
            };
            for (rank, (poi, score)) in cmd_recommend(&model, &q)?.iter().enumerate() {
                println!("{}\t{poi}\t{score}", rank + 1);
            }
        }
        Command::Interpret { model, top, work } => {
            print!("{}", cmd_interpret(&model, top, &interpret_dir(Path::new(&work)))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
