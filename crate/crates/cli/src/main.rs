mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prosody_core::llm::BackendConfig;

/// Exit code for bad input files, flags or mutually inconsistent data.
pub const EXIT_DATA: u8 = 2;
/// Exit code when the model's output stayed unusable after all repair attempts.
pub const EXIT_LLM_OUTPUT: u8 = 3;
/// Exit code for backend, authentication and transport failures.
pub const EXIT_BACKEND: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "prosody",
    version,
    about = "LLM-suggested prosody modification for phone-level features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute speaker statistics from raw feature files.
    Stats(StatsArgs),
    /// Print the prompt for a target text.
    Prompt(PromptArgs),
    /// Ask the model for scale values and write modification plans.
    Plan(Box<PlanArgs>),
    /// Apply plans to speaker-normalized features.
    Apply(ApplyArgs),
    /// Summarize listening-test data.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Raw feature files, all from one speaker unless --speaker is given.
    #[arg(required = true)]
    features: Vec<PathBuf>,
    /// Speaker stats file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the speaker-normalized features of every input utterance.
    #[arg(long)]
    normalized_out: Option<PathBuf>,
    /// Only use utterances of this speaker.
    #[arg(long)]
    speaker: Option<String>,
    /// Utterances shorter than this (seconds) are ignored.
    #[arg(long, default_value_t = 1.5)]
    min_duration: f64,
    #[arg(long, default_value_t = 5.0)]
    low_percentile: f64,
    #[arg(long, default_value_t = 95.0)]
    high_percentile: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Neutral,
    Style,
    Dialogue,
}

#[derive(Args, Debug)]
struct ModeArgs {
    #[arg(long, value_enum, default_value_t = Mode::Neutral)]
    mode: Mode,
    /// Target speaking style (style mode).
    #[arg(long)]
    style: Option<String>,
    /// Line the target text replies to (dialogue mode).
    #[arg(long)]
    previous_line: Option<String>,
    /// Exemplar file replacing the built-in examples.
    #[arg(long)]
    exemplars: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PromptArgs {
    #[arg(long)]
    text: String,
    #[command(flatten)]
    mode: ModeArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    /// Offline, deterministic in (prompt, --seed).
    Mock,
    /// Chat-completions endpoint at --base-url.
    Http,
}

#[derive(Args, Debug)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Http)]
    backend: BackendKind,
    /// Seed for the mock backend.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = BackendConfig::default().base_url)]
    base_url: String,
    #[arg(long, default_value_t = BackendConfig::default().model_name)]
    model: String,
    /// Environment variable that holds the API key.
    #[arg(long, default_value_t = BackendConfig::default().api_key_env)]
    api_key_env: String,
    #[arg(long, default_value_t = BackendConfig::default().temperature)]
    temperature: f64,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = BackendConfig::default().timeout_s)]
    timeout: f64,
    #[arg(long, default_value_t = BackendConfig::default().max_retries)]
    max_retries: u32,
    /// Maximum number of concurrent requests.
    #[arg(long, default_value_t = BackendConfig::default().max_parallel)]
    max_parallel: usize,
}

impl BackendArgs {
    fn config(&self) -> BackendConfig {
        BackendConfig {
            base_url: self.base_url.clone(),
            model_name: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            temperature: self.temperature,
            timeout_s: self.timeout,
            max_retries: self.max_retries,
            max_parallel: self.max_parallel,
            ..BackendConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Speaker-normalized feature file.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    /// Only plan this utterance.
    #[arg(long)]
    utterance: Option<String>,
    /// Target text; must tokenize to the utterance's words. Defaults to the
    /// utterance text.
    #[arg(long)]
    text: Option<String>,
    #[command(flatten)]
    mode: ModeArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Requests per utterance, including repairs.
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
    /// Largest word-level pitch shift as a fraction of the upward headroom.
    #[arg(long, default_value_t = 0.5)]
    local_pitch_cap: f64,
    /// Plan file for a single utterance.
    #[arg(long, conflicts_with = "out_dir", required_unless_present = "out_dir")]
    out: Option<PathBuf>,
    /// Transcript for --out; defaults to <out>.transcript.txt.
    #[arg(long, requires = "out")]
    transcript: Option<PathBuf>,
    /// Directory receiving <id>.plan.tsv and <id>.transcript.txt per utterance.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ApplyArgs {
    /// Speaker-normalized feature file.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    /// Plan file for a single utterance.
    #[arg(
        long,
        conflicts_with = "plan_dir",
        required_unless_present = "plan_dir"
    )]
    plan: Option<PathBuf>,
    /// Directory holding <id>.plan.tsv for every utterance.
    #[arg(long)]
    plan_dir: Option<PathBuf>,
    /// Only modify this utterance.
    #[arg(long)]
    utterance: Option<String>,
    /// Modified feature file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Mean opinion scores with t-based confidence intervals.
    Mos {
        /// Ratings file: stimulus_id, system_id, rater_id, score.
        ratings: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        /// Also run a paired t-test of system A against system B.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        paired: Option<Vec<String>>,
    },
    /// Preference shares over one three-system set.
    Pref {
        /// Preferences file: set_id, rater_id, chosen_system, systems_in_set.
        preferences: PathBuf,
    },
    /// Preference shares per style.
    Styles {
        preferences: PathBuf,
        /// Style labels: set_id, style.
        #[arg(long)]
        styles: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats(args) => commands::stats(args),
        Command::Prompt(args) => commands::prompt(args),
        Command::Plan(args) => commands::plan(*args),
        Command::Apply(args) => commands::apply(args),
        Command::Eval(cmd) => commands::eval(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
