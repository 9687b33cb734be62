use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use prosody_core::eval::{self, RatingRecord};
use prosody_core::features::{
    compute_speaker_stats, parse_features, serialize_features, tokenize_words, FeatureScale,
    SpeakerStats, StatsConfig, UtteranceFeatures,
};
use prosody_core::llm::{
    suggest_with_repair, CompletionBackend, HttpBackend, LlmError, MockBackend, RepairPolicy,
};
use prosody_core::mapping::{build_plan, MappingConfig, ModificationPlan};
use prosody_core::modifier::{apply_plan, normalize_utterance};
use prosody_core::prompting::{build_prompt, parse_exemplars, PromptMode, PromptSpec};
use prosody_core::response::render_diagnostics;
use rayon::prelude::*;

use crate::{
    ApplyArgs, BackendKind, EvalCommand, Mode, ModeArgs, PlanArgs, PromptArgs, StatsArgs,
    EXIT_BACKEND, EXIT_DATA, EXIT_LLM_OUTPUT,
};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

trait OrExit<T> {
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn data_error(msg: String) -> Failure {
    Failure {
        code: EXIT_DATA,
        error: anyhow!(msg),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .or_exit(EXIT_DATA)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .or_exit(EXIT_DATA)
}

fn read_features(path: &Path) -> Result<Vec<UtteranceFeatures>, Failure> {
    parse_features(&read(path)?)
        .with_context(|| format!("in {}", path.display()))
        .or_exit(EXIT_DATA)
}

fn read_stats(path: &Path) -> Result<SpeakerStats, Failure> {
    SpeakerStats::parse_file(&read(path)?)
        .with_context(|| format!("in {}", path.display()))
        .or_exit(EXIT_DATA)
}

fn select(
    utterances: Vec<UtteranceFeatures>,
    id: Option<&str>,
) -> Result<Vec<UtteranceFeatures>, Failure> {
    let Some(id) = id else {
        return Ok(utterances);
    };
    let picked: Vec<_> = utterances.into_iter().filter(|u| u.id == id).collect();
    if picked.is_empty() {
        return Err(data_error(format!("utterance '{id}' not found")));
    }
    Ok(picked)
}

fn file_stem_for(id: &str) -> Result<&str, Failure> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
        return Err(data_error(format!(
            "utterance id '{id}' cannot be used as a file name"
        )));
    }
    Ok(id)
}

pub fn stats(args: StatsArgs) -> Result<(), Failure> {
    let mut utterances = Vec::new();
    for path in &args.features {
        utterances.extend(read_features(path)?);
    }
    if let Some(speaker) = &args.speaker {
        utterances.retain(|u| &u.speaker_id == speaker);
        if utterances.is_empty() {
            return Err(data_error(format!("no utterances for speaker '{speaker}'")));
        }
    } else if let Some(first) = utterances.first() {
        if let Some(other) = utterances.iter().find(|u| u.speaker_id != first.speaker_id) {
            return Err(data_error(format!(
                "input mixes speakers '{}' and '{}'; pick one with --speaker",
                first.speaker_id, other.speaker_id
            )));
        }
    }
    let config = StatsConfig {
        min_duration_s: args.min_duration,
        range_percentiles: (args.low_percentile, args.high_percentile),
    };
    let stats = compute_speaker_stats(&utterances, &config).or_exit(EXIT_DATA)?;
    if let Some(path) = &args.normalized_out {
        let normalized = utterances
            .iter()
            .map(|u| normalize_utterance(u, &stats))
            .collect::<Result<Vec<_>, _>>()
            .or_exit(EXIT_DATA)?;
        write(path, &serialize_features(&normalized))?;
    }
    write(&args.out, &stats.to_file_string())
}

impl ModeArgs {
    fn spec(&self, text: &str) -> Result<PromptSpec, Failure> {
        let mode = match (self.mode, &self.style, &self.previous_line) {
            (Mode::Neutral, None, None) => PromptMode::Neutral,
            (Mode::Style, Some(style), None) => PromptMode::Style(style.clone()),
            (Mode::Dialogue, None, Some(line)) => PromptMode::Dialogue(line.clone()),
            (Mode::Style, None, _) => return Err(data_error("--mode style needs --style".into())),
            (Mode::Dialogue, _, None) => {
                return Err(data_error("--mode dialogue needs --previous-line".into()))
            }
            _ => return Err(data_error(
                "--style only goes with --mode style, --previous-line only with --mode dialogue"
                    .into(),
            )),
        };
        let mut spec = PromptSpec::new(mode, text);
        if let Some(path) = &self.exemplars {
            spec.exemplars = parse_exemplars(&read(path)?)
                .with_context(|| format!("in {}", path.display()))
                .or_exit(EXIT_DATA)?;
        }
        spec.validate().or_exit(EXIT_DATA)?;
        Ok(spec)
    }
}

pub fn prompt(args: PromptArgs) -> Result<(), Failure> {
    let spec = args.mode.spec(&args.text)?;
    print!("{}", build_prompt(&spec).or_exit(EXIT_DATA)?);
    Ok(())
}

struct PlanOutcome {
    plan: Option<ModificationPlan>,
    transcript: Option<String>,
    result: Result<(), Failure>,
}

fn plan_one(
    utterance: &UtteranceFeatures,
    spec: &PromptSpec,
    stats: &SpeakerStats,
    backend: &dyn CompletionBackend,
    policy: &RepairPolicy,
    config: &MappingConfig,
) -> PlanOutcome {
    let fail = |code, error, transcript| PlanOutcome {
        plan: None,
        transcript,
        result: Err(Failure { code, error }),
    };
    let suggestion = match suggest_with_repair(spec, backend, policy) {
        Ok(s) => s,
        Err(e) => {
            let transcript = e.transcript().map(|t| t.to_text());
            let (code, error) = match &e {
                LlmError::Prompt(_) => (EXIT_DATA, anyhow!(e)),
                LlmError::Backend { .. } => (EXIT_BACKEND, anyhow!(e)),
                LlmError::RepairExhausted { diagnostics, .. } => {
                    let last = diagnostics
                        .last()
                        .map(|d| render_diagnostics(d))
                        .unwrap_or_default();
                    (EXIT_LLM_OUTPUT, anyhow!("{e}; last problems:\n{last}"))
                }
            };
            return fail(
                code,
                error.context(format!("utterance '{}'", utterance.id)),
                transcript,
            );
        }
    };
    let transcript = Some(suggestion.transcript.to_text());
    match build_plan(&suggestion.suggestion, utterance, stats, config) {
        Ok(built) => {
            for c in &built.clamps {
                let word = c.word.map_or("global".to_string(), |j| format!("word {j}"));
                eprintln!(
                    "warning: utterance '{}': {word} {} {} clamped to {}",
                    utterance.id, c.field, c.original, c.clamped
                );
            }
            PlanOutcome {
                plan: Some(built.plan),
                transcript,
                result: Ok(()),
            }
        }
        Err(e) => fail(
            EXIT_DATA,
            anyhow!(e).context(format!("utterance '{}'", utterance.id)),
            transcript,
        ),
    }
}

pub fn plan(args: PlanArgs) -> Result<(), Failure> {
    let utterances = select(read_features(&args.features)?, args.utterance.as_deref())?;
    let stats = read_stats(&args.stats)?;
    if let Some(u) = utterances
        .iter()
        .find(|u| u.scale != FeatureScale::Normalized)
    {
        return Err(data_error(format!(
            "utterance '{}' is not speaker-normalized",
            u.id
        )));
    }
    if utterances.is_empty() {
        return Err(data_error("no utterances to plan".into()));
    }
    if utterances.len() > 1 && (args.out.is_some() || args.text.is_some()) {
        return Err(data_error(format!(
            "{} utterances selected; --out and --text need exactly one (use --utterance or --out-dir)",
            utterances.len()
        )));
    }
    if let Some(text) = &args.text {
        let keys: Vec<_> = tokenize_words(text).into_iter().map(|w| w.key).collect();
        let expected: Vec<_> = utterances[0].words.iter().map(|w| w.key.clone()).collect();
        if keys != expected {
            return Err(data_error(format!(
                "--text words {keys:?} do not match utterance '{}' words {expected:?}",
                utterances[0].id
            )));
        }
    }
    let specs = utterances
        .iter()
        .map(|u| args.mode.spec(args.text.as_deref().unwrap_or(&u.text)))
        .collect::<Result<Vec<_>, _>>()?;
    let mapping = MappingConfig {
        local_pitch_cap_fraction: args.local_pitch_cap,
    };
    mapping.validate().or_exit(EXIT_DATA)?;
    if args.max_attempts == 0 {
        return Err(data_error("--max-attempts must be at least 1".into()));
    }
    let policy = RepairPolicy {
        max_attempts: args.max_attempts,
        ..RepairPolicy::default()
    };

    let config = args.backend.config();
    config.validate().or_exit(EXIT_DATA)?;
    let backend: Box<dyn CompletionBackend> = match args.backend.backend {
        BackendKind::Mock => Box::new(MockBackend::new(args.backend.seed)),
        BackendKind::Http => Box::new(HttpBackend::new(config.clone()).or_exit(EXIT_BACKEND)?),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_parallel)
        .build()
        .or_exit(EXIT_DATA)?;
    let outcomes: Vec<PlanOutcome> = pool.install(|| {
        utterances
            .par_iter()
            .zip(&specs)
            .map(|(u, spec)| plan_one(u, spec, &stats, backend.as_ref(), &policy, &mapping))
            .collect()
    });

    let targets: Vec<(PathBuf, PathBuf)> = match (&args.out, &args.out_dir) {
        (Some(out), _) => {
            let transcript = args.transcript.clone().unwrap_or_else(|| {
                let mut name = out.clone().into_os_string();
                name.push(".transcript.txt");
                name.into()
            });
            vec![(out.clone(), transcript)]
        }
        (None, Some(dir)) => {
            fs::create_dir_all(dir)
                .with_context(|| format!("cannot create {}", dir.display()))
                .or_exit(EXIT_DATA)?;
            utterances
                .iter()
                .map(|u| {
                    let stem = file_stem_for(&u.id)?;
                    Ok((
                        dir.join(format!("{stem}.plan.tsv")),
                        dir.join(format!("{stem}.transcript.txt")),
                    ))
                })
                .collect::<Result<_, Failure>>()?
        }
        (None, None) => unreachable!("clap requires --out or --out-dir"),
    };

    let mut first_failure = None;
    for (outcome, (plan_path, transcript_path)) in outcomes.into_iter().zip(targets) {
        if let Some(text) = &outcome.transcript {
            write(&transcript_path, text)?;
        }
        if let Some(plan) = &outcome.plan {
            write(&plan_path, &plan.to_file_string())?;
        }
        if let Err(f) = outcome.result {
            if first_failure.is_none() {
                first_failure = Some(f);
            } else {
                eprintln!("error: {:#}", f.error);
            }
        }
    }
    first_failure.map_or(Ok(()), Err)
}

fn read_plan(path: &Path) -> Result<ModificationPlan, Failure> {
    ModificationPlan::parse_file(&read(path)?)
        .with_context(|| format!("in {}", path.display()))
        .or_exit(EXIT_DATA)
}

pub fn apply(args: ApplyArgs) -> Result<(), Failure> {
    let utterances = select(read_features(&args.features)?, args.utterance.as_deref())?;
    let stats = read_stats(&args.stats)?;
    let plans: Vec<ModificationPlan> = match (&args.plan, &args.plan_dir) {
        (Some(path), _) => {
            if utterances.len() != 1 {
                return Err(data_error(format!(
                    "--plan needs exactly one utterance, {} selected (use --utterance or --plan-dir)",
                    utterances.len()
                )));
            }
            vec![read_plan(path)?]
        }
        (None, Some(dir)) => utterances
            .iter()
            .map(|u| read_plan(&dir.join(format!("{}.plan.tsv", file_stem_for(&u.id)?))))
            .collect::<Result<_, _>>()?,
        (None, None) => unreachable!("clap requires --plan or --plan-dir"),
    };
    let modified = utterances
        .par_iter()
        .zip(&plans)
        .map(|(u, p)| apply_plan(u, &stats, p))
        .collect::<Result<Vec<_>, _>>()
        .or_exit(EXIT_DATA)?;
    write(&args.out, &serialize_features(&modified))
}

pub fn eval(cmd: EvalCommand) -> Result<(), Failure> {
    let output = match cmd {
        EvalCommand::Mos {
            ratings,
            confidence,
            paired,
        } => {
            let records = eval::parse_ratings(&read(&ratings)?)
                .with_context(|| format!("in {}", ratings.display()))
                .or_exit(EXIT_DATA)?;
            let mut out =
                eval::render_mos(&eval::mos_summary(&records, confidence).or_exit(EXIT_DATA)?);
            if let Some([a, b]) = paired.as_deref() {
                let of = |sys: &str| -> Vec<RatingRecord> {
                    records
                        .iter()
                        .filter(|r| r.system_id == sys)
                        .cloned()
                        .collect()
                };
                let test = eval::paired_t_test(&of(a), &of(b)).or_exit(EXIT_DATA)?;
                out.push_str(&eval::render_t_test(a, b, &test));
            }
            out
        }
        EvalCommand::Pref { preferences } => {
            let records = eval::parse_preferences(&read(&preferences)?)
                .with_context(|| format!("in {}", preferences.display()))
                .or_exit(EXIT_DATA)?;
            eval::render_preferences(&eval::preference_summary(&records).or_exit(EXIT_DATA)?, "")
        }
        EvalCommand::Styles {
            preferences,
            styles,
        } => {
            let records = eval::parse_preferences(&read(&preferences)?)
                .with_context(|| format!("in {}", preferences.display()))
                .or_exit(EXIT_DATA)?;
            let labels: HashMap<String, String> = eval::parse_styles(&read(&styles)?)
                .with_context(|| format!("in {}", styles.display()))
                .or_exit(EXIT_DATA)?;
            eval::render_styles(&eval::style_breakdown(&records, &labels).or_exit(EXIT_DATA)?)
        }
    };
    print!("{output}");
    Ok(())
}
