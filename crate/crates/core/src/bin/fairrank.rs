use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairrank::pipeline::{self, note, ExperimentConfig, RankSource};
use fairrank::reranker::{Preset, Target};
use fairrank::Result;

/// Fairness-aware top-K re-ranking and evaluation.
#[derive(Parser)]
#[command(name = "fairrank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RerankArgs {
    /// tPFR, LaPFR, MaPFR or HaPFR. Fixes gamma.
    #[arg(long, conflicts_with = "gamma")]
    preset: Option<Preset>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// `eq`, `prop`, or `p_a,p_b`.
    #[arg(long)]
    target: Option<Target>,
}

#[derive(Subcommand)]
enum Command {
    /// k-core filter, split, and build the item catalog.
    Prep(Common),
    /// Produce candidate lists with a built-in ranker or import them.
    Rank {
        #[command(flatten)]
        common: Common,
        /// Built-in ranker: mostpop or mf.
        #[arg(long, default_value = "mostpop", conflicts_with = "import")]
        model: String,
        /// Candidate file (user, item, score, rank) from an external ranker.
        #[arg(long)]
        import: Option<PathBuf>,
    },
    /// Re-rank a candidate file.
    Rerank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        candidates: PathBuf,
        #[command(flatten)]
        rerank: RerankArgs,
    },
    /// Evaluate a base candidate file and run directories into one report.
    Eval {
        #[arg(long, short)]
        config: PathBuf,
        /// Base candidates; their top-K becomes the `base` row.
        #[arg(long)]
        base: Option<PathBuf>,
        /// Report CSV path (JSON is written next to it).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run directories written by `rerank`.
        runs: Vec<PathBuf>,
    },
    /// Re-rank and evaluate over the configured lambda x gamma grid.
    Sweep {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        target: Option<Target>,
        /// Sweep CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &Path, out: Option<&PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(out) = out {
        cfg.output_dir = std::env::current_dir().map(|d| d.join(out)).unwrap_or(out.clone());
    }
    Ok(cfg)
}

fn cwd_relative(p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        std::env::current_dir().map(|d| d.join(&p)).unwrap_or(p)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prep(c) => {
            let cfg = load(&c.config, c.out.as_ref())?;
            let s = pipeline::cmd_prep(&cfg)?;
            println!(
                "prep: {} users, {} items, {} interactions (train {}, valid {}, test {}), item gini {:.3} -> {}",
                s.stats.n_users,
                s.stats.n_items,
                s.stats.n_ratings,
                s.train,
                s.valid,
                s.test,
                s.stats.item_gini,
                s.dir.display()
            );
        }
        Command::Rank {
            common,
            model,
            import,
        } => {
            let cfg = load(&common.config, common.out.as_ref())?;
            let source = match (import, model.as_str()) {
                (Some(p), _) => RankSource::Import(cwd_relative(p)),
                (None, "mostpop") => RankSource::MostPop,
                (None, "mf") => RankSource::Mf,
                (None, other) => {
                    return Err(fairrank::Error::Config(format!(
                        "unknown model `{other}` (expected mostpop or mf)"
                    )))
                }
            };
            let s = pipeline::cmd_rank(&cfg, &source)?;
            if s.short_lists > 0 {
                note(format!(
                    "warning: {} of {} users have fewer than {} candidates",
                    s.short_lists, s.lists, cfg.top_n
                ));
            }
            if s.seen_in_train > 0 {
                note(format!(
                    "warning: {} candidates were already interacted with in training",
                    s.seen_in_train
                ));
            }
            println!("rank: {} lists -> {}", s.lists, s.path.display());
        }
        Command::Rerank {
            common,
            candidates,
            rerank,
        } => {
            let cfg = load(&common.config, common.out.as_ref())?;
            let rc = cfg.rerank_config(rerank.preset, rerank.lambda, rerank.gamma, rerank.target)?;
            let s = pipeline::cmd_rerank(&cfg, &cwd_relative(candidates), &rc)?;
            println!(
                "rerank {}: {} users, mean deviation {:.4} -> {}",
                rc.label(),
                s.users,
                s.mean_deviation,
                s.dir.display()
            );
        }
        Command::Eval {
            config,
            base,
            out,
            runs,
        } => {
            let cfg = load(&config, None)?;
            let runs: Vec<PathBuf> = runs.into_iter().map(cwd_relative).collect();
            let s = pipeline::cmd_eval(
                &cfg,
                base.map(cwd_relative).as_deref(),
                &runs,
                out.map(cwd_relative).as_deref(),
            )?;
            for r in &s.reports {
                println!(
                    "{:<12} ndcg {:.4}  gf_eq {:.4}  gf_prop {:.4}  sgf {:.4}  all {:.4}",
                    r.meta.preset, r.ndcg, r.gf_eq, r.gf_prop, r.sgf, r.all_metric
                );
            }
            println!("report -> {}", s.report_csv.display());
        }
        Command::Sweep {
            config,
            candidates,
            target,
            out,
        } => {
            let cfg = load(&config, None)?;
            let s = pipeline::cmd_sweep(
                &cfg,
                &cwd_relative(candidates),
                target,
                out.map(cwd_relative).as_deref(),
            )?;
            if s.failed > 0 {
                note(format!("warning: {} of {} grid cells failed", s.failed, s.rows.len()));
            }
            println!("sweep: {} cells -> {}", s.rows.len(), s.path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            note(format!("error: {e}"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
