use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand, ValueEnum};

use marginmine::corpus::{BlockManifest, Lang};
use marginmine::encoder::{import_embeddings, write_embeddings};
use marginmine::evalkit::{plant_corpus, read_gold, score, threshold_grid, write_gold, write_sweep};
use marginmine::miner::{read_candidates, read_pairs, select, write_pairs, MiningMode};
use marginmine::pipeline::{
    execute, filter_candidates, load_manifests, plan, plan_text, run, Dag, ExecOptions, JobOutcome, JobSpec, Layout,
    PipelineConfig, RunReport, Stage, CONFIG_KEYS,
};

/// Everything that ends the process early, mapped to an exit code.
enum Failure {
    Usage(String),
    Job(String),
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Failure::Usage(e.to_string())
    }

    fn job(e: impl std::fmt::Display) -> Self {
        Failure::Job(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

/// `--config FILE` plus one `--key VALUE` flag per config key.
#[derive(Debug, Clone, Default)]
struct ConfigArgs {
    file: Option<PathBuf>,
    overrides: Vec<(&'static str, String)>,
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut s = ConfigArgs::default();
        s.update_from_arg_matches(m)?;
        Ok(s)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        if let Some(p) = m.get_one::<PathBuf>("config") {
            self.file = Some(p.clone());
        }
        for &key in CONFIG_KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                self.overrides.push((key, v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let mut cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("Config file of `key = value` lines"),
        );
        for &key in CONFIG_KEYS {
            cmd = cmd.arg(
                Arg::new(key)
                    .long(key.replace('_', "-"))
                    .value_name("VALUE")
                    .help_heading("Config overrides")
                    .help(format!("Override `{key}`")),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<PipelineConfig> {
        let mut cfg = match &self.file {
            Some(p) => PipelineConfig::load(p).map_err(Failure::usage)?,
            None => PipelineConfig::default(),
        };
        for (key, value) in &self.overrides {
            cfg.set(key, value).map_err(Failure::usage)?;
        }
        cfg.validate().map_err(Failure::usage)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Step {
    Fwd,
    Bwd,
    Combine,
}

#[derive(Parser)]
#[command(name = "marginmine", version, about = "Margin-based bitext mining over sharded vector indexes")]
struct Cli {
    /// Threads for data parallelism inside each job (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Split, filter and deduplicate raw text into corpus blocks.
    Preprocess {
        #[arg(long)]
        lang: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Embed corpus blocks.
    Embed {
        #[arg(long)]
        lang: Option<String>,
        #[arg(long)]
        block: Option<u32>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Import raw little-endian f32 vectors as the embeddings of one block.
    ImportEmb {
        #[arg(long)]
        lang: String,
        #[arg(long)]
        block: u32,
        #[arg(short, long, value_name = "FILE")]
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the coarse quantizer and product quantizer of each language.
    IndexTrain {
        #[arg(long)]
        lang: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Encode embedding blocks into per-block index parts.
    IndexAdd {
        #[arg(long)]
        lang: Option<String>,
        #[arg(long)]
        block: Option<u32>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Merge index parts into shards.
    IndexMerge {
        #[arg(long)]
        lang: Option<String>,
        #[arg(long)]
        shard: Option<u32>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Neighbor search in one direction, or margin combination and selection.
    Mine {
        #[arg(long, value_enum)]
        step: Step,
        /// Language pair as `src-tgt`.
        #[arg(long)]
        pair: Option<String>,
        #[arg(long)]
        shard: Option<u32>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Re-select pairs from candidate files at a new threshold.
    Filter {
        #[arg(short, long = "input", value_name = "FILE", required = true)]
        inputs: Vec<PathBuf>,
        /// Output pairs TSV, `-` for stdout.
        #[arg(short, long, value_name = "FILE")]
        output: PathBuf,
        #[arg(long, default_value_t = 1.06)]
        threshold: f64,
        #[arg(long, default_value = "max-strategy")]
        mode: MiningMode,
    },
    /// Attach sentence text to mined pairs.
    Attach {
        #[arg(long)]
        pair: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write a synthetic corpus pair with known alignments as prepared input.
    Plant {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long = "pairs", default_value_t = 1000)]
        n_pairs: usize,
        #[arg(long, default_value_t = 1000)]
        distractors: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "xx")]
        src: String,
        #[arg(long, default_value = "yy")]
        tgt: String,
        #[arg(long, default_value_t = 10_000)]
        block_capacity: u64,
    },
    /// Precision, recall and F1 of a pairs TSV against gold.
    Score {
        #[arg(short, long, value_name = "FILE")]
        pairs: PathBuf,
        #[arg(short, long, value_name = "FILE")]
        gold: PathBuf,
        /// Report line, `-` for stdout.
        #[arg(short, long, value_name = "FILE")]
        output: PathBuf,
    },
    /// Score candidate files against gold over a grid of thresholds.
    Sweep {
        #[arg(short, long = "input", value_name = "FILE", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long, value_name = "FILE")]
        gold: PathBuf,
        #[arg(short, long, value_name = "FILE")]
        output: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        start: f64,
        #[arg(long, default_value_t = 1.3)]
        end: f64,
        #[arg(long, default_value_t = 31)]
        steps: usize,
        #[arg(long, default_value = "max-strategy")]
        mode: MiningMode,
    },
    /// Run the whole pipeline, skipping up-to-date jobs.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn open_output(path: &Path) -> CliResult<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(std::io::stdout().lock()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Failure::job)?;
    }
    let f = fs::File::create(path).map_err(|e| Failure::job(format!("{}: {e}", path.display())))?;
    Ok(Box::new(std::io::BufWriter::new(f)))
}

fn lang(s: &str) -> CliResult<Lang> {
    Lang::new(s).map_err(Failure::usage)
}

/// Job filter for a stage subcommand.
struct Select {
    stage: Stage,
    lang: Option<String>,
    pair: Option<String>,
    block: Option<u32>,
    shard: Option<u32>,
}

impl Select {
    fn stage(stage: Stage) -> Self {
        Select { stage, lang: None, pair: None, block: None, shard: None }
    }

    fn matches(&self, j: &JobSpec) -> bool {
        j.stage == self.stage
            && self.lang.as_ref().is_none_or(|l| j.lang.as_ref().is_some_and(|x| x.as_str() == l))
            && self.pair.as_ref().is_none_or(|p| j.pair.as_ref().is_some_and(|(s, t)| &format!("{s}-{t}") == p))
            && self.block.is_none_or(|b| j.block == Some(b))
            && self.shard.is_none_or(|s| j.shard == Some(s))
    }
}

fn summarize(report: &RunReport) -> CliResult {
    for (id, outcome) in &report.outcomes {
        match outcome {
            JobOutcome::NotSelected => {}
            JobOutcome::Failed(msg) => eprintln!("{id}: failed: {msg}"),
            o => eprintln!("{id}: {}", format!("{o:?}").to_lowercase()),
        }
    }
    let failed = report.failed().len();
    let blocked = report.blocked().len();
    eprintln!("ran {}, skipped {}, failed {failed}, blocked {blocked}", report.ran().len(), report.skipped().len());
    if report.success() {
        Ok(())
    } else {
        Err(Failure::Job(format!("{failed} job(s) failed")))
    }
}

fn run_selected(cfg: &PipelineConfig, dag: &Dag, sel: &Select) -> CliResult {
    let only: HashSet<usize> = dag.jobs.iter().enumerate().filter(|(_, j)| sel.matches(j)).map(|(i, _)| i).collect();
    if only.is_empty() {
        return Err(Failure::Usage(format!("no {} jobs match the selection", sel.stage)));
    }
    let report = execute(dag, cfg, &ExecOptions { carried: HashSet::new(), only: Some(only) }).map_err(Failure::job)?;
    summarize(&report)
}

fn full_plan(cfg: &PipelineConfig) -> CliResult<Dag> {
    let manifests = load_manifests(cfg).map_err(|e| Failure::Job(format!("corpus manifests unavailable, run preprocess first: {e}")))?;
    plan(cfg, &manifests).map_err(Failure::job)
}

fn stage_cmd(config: &ConfigArgs, sel: Select) -> CliResult {
    let cfg = config.resolve()?;
    let dag = if sel.stage == Stage::Preprocess { plan_text(&cfg).map_err(Failure::job)? } else { full_plan(&cfg)? };
    run_selected(&cfg, &dag, &sel)
}

fn dispatch(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Preprocess { lang, config } => stage_cmd(&config, Select { lang, ..Select::stage(Stage::Preprocess) }),
        Cmd::Embed { lang, block, config } => stage_cmd(&config, Select { lang, block, ..Select::stage(Stage::Embed) }),
        Cmd::IndexTrain { lang, config } => stage_cmd(&config, Select { lang, ..Select::stage(Stage::IndexTrain) }),
        Cmd::IndexAdd { lang, block, config } => stage_cmd(&config, Select { lang, block, ..Select::stage(Stage::IndexAdd) }),
        Cmd::IndexMerge { lang, shard, config } => {
            stage_cmd(&config, Select { lang, shard, ..Select::stage(Stage::IndexMerge) })
        }
        Cmd::Mine { step, pair, shard, config } => {
            let stage = match step {
                Step::Fwd => Stage::MineFwd,
                Step::Bwd => Stage::MineBwd,
                Step::Combine => Stage::MineCombine,
            };
            if matches!(step, Step::Combine) && shard.is_some() {
                return Err(Failure::usage("--shard does not apply to the combine step"));
            }
            stage_cmd(&config, Select { pair, shard, ..Select::stage(stage) })
        }
        Cmd::Attach { pair, config } => stage_cmd(&config, Select { pair, ..Select::stage(Stage::Attach) }),
        Cmd::ImportEmb { lang: l, block, input, config } => {
            let cfg = config.resolve()?;
            let l = lang(&l)?;
            let layout = Layout::new(&cfg.work_dir);
            let m = BlockManifest::load(&layout.corpus_dir(), &l).map_err(Failure::job)?;
            let entry = m.blocks.get(block as usize).ok_or_else(|| Failure::Usage(format!("{l} has no block {block}")))?;
            let emb = import_embeddings(&input, cfg.encoder_dim, entry.count, m.base_global_id(block)).map_err(Failure::job)?;
            let out = layout.emb(&l, block);
            fs::create_dir_all(layout.emb_dir()).map_err(Failure::job)?;
            write_embeddings(&emb, &out).map_err(Failure::job)?;
            eprintln!("wrote {} vectors to {}", emb.rows(), out.display());
            Ok(())
        }
        Cmd::Filter { inputs, output, threshold, mode } => {
            let pairs = filter_candidates(&inputs, mode, threshold).map_err(Failure::job)?;
            let mut out = open_output(&output)?;
            write_pairs(&pairs, &mut out).map_err(Failure::job)?;
            out.flush().map_err(Failure::job)?;
            eprintln!("accepted {} pairs at threshold {threshold}", pairs.len());
            Ok(())
        }
        Cmd::Plant { out, n_pairs, distractors, dim, sigma, seed, src, tgt, block_capacity } => {
            let (a, b) = (lang(&src)?, lang(&tgt)?);
            if a == b {
                return Err(Failure::usage("--src and --tgt must differ"));
            }
            let corpus = plant_corpus(n_pairs, distractors, dim, sigma, seed).map_err(Failure::usage)?;
            corpus.write_prepared(&out, &a, &b, block_capacity).map_err(Failure::job)?;
            write_gold(&corpus.gold, &out.join("gold.tsv")).map_err(Failure::job)?;
            eprintln!("planted {n_pairs} pairs and {distractors} distractors per side in {}", out.display());
            Ok(())
        }
        Cmd::Score { pairs, gold, output } => {
            let mined = read_pairs(&pairs).map_err(Failure::job)?;
            let gold = read_gold(&gold).map_err(Failure::job)?;
            let threshold = mined.iter().map(|p| p.margin as f64).fold(f64::INFINITY, f64::min);
            let threshold = if threshold.is_finite() { threshold } else { 0.0 };
            let mut out = open_output(&output)?;
            write_sweep(&[score(&mined, &gold, threshold)], &mut out).map_err(Failure::job)?;
            out.flush().map_err(Failure::job)
        }
        Cmd::Sweep { inputs, gold, output, start, end, steps, mode } => {
            if start > end {
                return Err(Failure::usage("--start must not exceed --end"));
            }
            let groups: Vec<_> =
                inputs.iter().map(|p| read_candidates(p)).collect::<Result<_, _>>().map_err(Failure::job)?;
            let gold = read_gold(&gold).map_err(Failure::job)?;
            let reports: Vec<_> = threshold_grid(start, end, steps)
                .into_iter()
                .map(|t| score(&select(groups.clone(), mode, t).0, &gold, t))
                .collect();
            let mut out = open_output(&output)?;
            write_sweep(&reports, &mut out).map_err(Failure::job)?;
            out.flush().map_err(Failure::job)
        }
        Cmd::Run { config } => {
            let cfg = config.resolve()?;
            summarize(&run(&cfg).map_err(Failure::job)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        marginmine::set_threads(n);
    }
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Job(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
