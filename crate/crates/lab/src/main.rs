use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssr2gcd_core::trainer::RepLoss;
use ssr2gcd_lab::config::{Overrides, RunConfig};
use ssr2gcd_lab::experiments::{self, SweepParam};
use ssr2gcd_lab::formats;
use ssr2gcd_lab::LabError;

const CONFIG_HELP: &str = "\
Configuration is a TOML file. Top-level keys: seed, out. Tables: [data]
(generator), [train] (trainer) with nested [train.loss_cfg],
[train.rate_cfg], [train.rta_cfg] and [train.sgd]. Missing keys take their
defaults; unknown keys are errors reported as FILE:LINE:COL. Flags override
the file. The seed drives every random stream.";

#[derive(Parser)]
#[command(name = "ssr2gcd", version, about = "Semi-supervised rate reduction for multi-modal category discovery on synthetic data")]
#[command(after_long_help = CONFIG_HELP)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Representation loss: clip, con, ssr2, clip+con, clip+ssr2, cico, cico+con, cico+ssr2 or none.
    #[arg(long, global = true, value_name = "LOSS")]
    loss: Option<RepLoss>,
    /// Weight of the auxiliary inter-modal term.
    #[arg(long, global = true, value_name = "FLOAT")]
    nu: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    epochs: Option<usize>,
    /// Classifier output width (defaults to the number of categories).
    #[arg(long, global = true, value_name = "N")]
    dcls: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and lexicon.
    #[command(after_long_help = "\
Writes OUT/dataset.txt and OUT/lexicon.txt.

dataset.txt:
  # ssr2gcd dataset v1
  samples N image_dim DI text_dim DT categories K
  old <known category ids>
  then N rows: label labeled(0|1) <DI image values> <DT text values>

lexicon.txt:
  [tags] then rows `id v1 .. vd`, [attributes] then rows `id v1 .. vd`")]
    Generate,
    /// Train one model and write its artifacts.
    #[command(after_long_help = "\
Writes into OUT:
  metrics.csv      header epoch,loss_total,loss_rep,loss_cls,loss_coteach,acc_all,acc_old,
                   acc_new,nmi,ari,rho_img,rho_txt,rank_old,rank_new; one row per epoch
                   0..epochs_total-1; empty rank fields mean no class in that group
  report.json      {config, initial, final, clustering{acc_all,acc_old,acc_new,nmi,ari,
                   matching[[cluster,class]..]}, ranks_img}
  model.ckpt       magic SSR2CKPT, u32 version, u32 tensor count, per tensor u32 rows,
                   u32 cols, row-major f64; all little-endian
  predictions.txt  fused predicted cluster per sample, one per line
On divergence the last finite model is written to OUT/model.ckpt and the exit code is 1.")]
    Train(DataFiles),
    /// Score predictions (and optionally embeddings) against ground truth.
    #[command(after_long_help = "\
Inputs: label files with one integer per line; embeddings as whitespace rows.
Prints JSON to stdout and to OUT/eval.json when --out is given:
  {samples, clustering{acc_all,acc_old,acc_new,nmi,ari,matching},
   embeddings: null | {rho, rho_per_class[[class,ratio]..], rho_capped,
   ranks{per_class_rank,effective_rank_per_class,mean_rank_old,mean_rank_new}}}")]
    Eval(EvalArgs),
    /// Train once per representation loss and tabulate final metrics.
    #[command(after_long_help = "\
Writes OUT/ablate.csv and prints it:
  loss,acc_all,acc_old,acc_new,nmi,ari,rho_img,rho_txt,rank_old,rank_new
one row per loss, in the order given.")]
    Ablate(AblateArgs),
    /// Vary one scalar and tabulate final metrics.
    #[command(after_long_help = "\
PARAM is epsilon, alpha, nu, c or d_cls. VALUES is a comma list or an
inclusive range START..END followed by `step S`, e.g.
  ssr2gcd sweep epsilon 0.1..1.0 step 0.1
Writes OUT/sweep_PARAM.csv and prints it:
  PARAM,acc_all,acc_old,acc_new,nmi,ari,rho_img,rho_txt,rank_old,rank_new")]
    Sweep(SweepArgs),
}

#[derive(Args)]
struct DataFiles {
    /// Dataset file written by `generate` (requires --lexicon).
    #[arg(long, requires = "lexicon")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    lexicon: Option<PathBuf>,
}

impl DataFiles {
    fn pair(&self) -> Option<(&Path, &Path)> {
        self.data.as_deref().zip(self.lexicon.as_deref())
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Comma-separated known category ids.
    #[arg(long, value_delimiter = ',')]
    old: Vec<usize>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Comma-separated losses; all nine by default.
    #[arg(long, value_delimiter = ',')]
    losses: Vec<RepLoss>,
    #[command(flatten)]
    files: DataFiles,
}

#[derive(Args)]
struct SweepArgs {
    param: String,
    values: String,
    /// Optional `step S` for ranges.
    rest: Vec<String>,
    #[command(flatten)]
    files: DataFiles,
}

fn load_config(c: &Common) -> Result<RunConfig, LabError> {
    let base = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    base.finish(&Overrides {
        seed: c.seed,
        out: c.out.clone(),
        loss: c.loss,
        nu: c.nu,
        epochs: c.epochs,
        d_cls: c.dcls,
    })
}

fn parse_step(rest: &[String]) -> Result<Option<f64>, LabError> {
    match rest {
        [] => Ok(None),
        [kw, s] if kw == "step" => s
            .parse()
            .map(Some)
            .map_err(|_| LabError::Usage(format!("bad step {s:?}"))),
        _ => Err(LabError::Usage("expected `step S` after the values".into())),
    }
}

fn execute(cli: Cli) -> Result<(), LabError> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Generate => {
            let (split, lex) = experiments::prepare(&cfg, None)?;
            formats::write_file(&cfg.out.join("dataset.txt"), formats::dataset_to_string(&split).as_bytes())?;
            formats::write_file(&cfg.out.join("lexicon.txt"), formats::lexicon_to_string(&lex).as_bytes())?;
        }
        Command::Train(files) => {
            let (split, lex) = experiments::prepare(&cfg, files.pair())?;
            match experiments::train(&cfg, &split, &lex) {
                Ok(out) => {
                    experiments::write_train_outputs(&cfg.out, &cfg, &out)?;
                    let last = experiments::final_record(&out);
                    eprintln!(
                        "acc_all {:.4} acc_old {:.4} acc_new {:.4} -> {}",
                        last.acc_all,
                        last.acc_old,
                        last.acc_new,
                        cfg.out.display()
                    );
                }
                Err(LabError::Diverged {
                    epoch,
                    step,
                    message,
                    last_good,
                }) => {
                    formats::write_file(&cfg.out.join("model.ckpt"), &formats::checkpoint_bytes(&last_good))?;
                    return Err(LabError::Diverged {
                        epoch,
                        step,
                        message,
                        last_good,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        Command::Eval(args) => {
            let pred = formats::read_labels(&args.pred)?;
            let truth = formats::read_labels(&args.truth)?;
            let emb = args.embeddings.as_deref().map(formats::read_matrix).transpose()?;
            let report = experiments::evaluate(&pred, &truth, &args.old, emb.as_ref())?;
            let json = formats::to_json(&report);
            print!("{json}");
            if cli.common.out.is_some() {
                formats::write_file(&cfg.out.join("eval.json"), json.as_bytes())?;
            }
        }
        Command::Ablate(args) => {
            let losses = if args.losses.is_empty() {
                RepLoss::ALL.to_vec()
            } else {
                args.losses
            };
            let (split, lex) = experiments::prepare(&cfg, args.files.pair())?;
            let rows = experiments::ablate(&cfg, &losses, &split, &lex)?;
            let table = experiments::summary_csv("loss", &rows);
            formats::write_file(&cfg.out.join("ablate.csv"), table.as_bytes())?;
            print!("{table}");
        }
        Command::Sweep(args) => {
            let param: SweepParam = args.param.parse()?;
            let values = experiments::parse_values(&args.values, parse_step(&args.rest)?)?;
            let (split, lex) = experiments::prepare(&cfg, args.files.pair())?;
            let rows = experiments::sweep(&cfg, param, &values, &split, &lex)?;
            let table = experiments::summary_csv(param.name(), &rows);
            formats::write_file(&cfg.out.join(format!("sweep_{}.csv", param.name())), table.as_bytes())?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
