//! Phone-level acoustic features, the tab-separated feature file format,
//! word tokenization, and speaker statistics.
//!
//! A feature file holds one block per utterance:
//!
//! ```text
//! #utterance<TAB>id<TAB>speaker<TAB>raw|norm<TAB>text...
//! label<TAB>word_index|-<TAB>duration_s<TAB>log_f0|-<TAB>log_energy<TAB>voiced<TAB>pause
//! ```
//!
//! Floats are written with six decimals and `-` marks an absent field. The
//! word list of an utterance is not stored; it is always derived from the
//! header text with [`tokenize_words`].

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

const HEADER_TAG: &str = "#utterance";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("utterance '{utterance}' (line {line}): {reason}")]
    Invariant {
        utterance: String,
        line: usize,
        reason: String,
    },
    #[error("degenerate speaker statistics: {0}")]
    DegenerateStats(String),
    #[error("utterance '{0}' holds normalized features; statistics need raw log-F0/log-energy")]
    NotRaw(String),
    #[error("invalid statistics configuration: {0}")]
    InvalidConfig(String),
    #[error("speaker stats file: {0}")]
    StatsFile(String),
}

/// Whether the F0/energy columns hold raw log values or speaker-normalized ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureScale {
    Raw,
    Normalized,
}

impl FeatureScale {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureScale::Raw => "raw",
            FeatureScale::Normalized => "norm",
        }
    }
}

impl FromStr for FeatureScale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(FeatureScale::Raw),
            "norm" => Ok(FeatureScale::Normalized),
            other => Err(format!(
                "unknown feature scale '{other}' (expected raw or norm)"
            )),
        }
    }
}

impl fmt::Display for FeatureScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A token of the target text: its surface form and the lowercase key used
/// to match it against LLM output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub surface: String,
    pub key: String,
}

/// Splits on whitespace and strips leading/trailing punctuation from each
/// token. Word-internal punctuation (apostrophes, hyphens) is kept.
pub fn tokenize_words(text: &str) -> Vec<Word> {
    text.split_whitespace()
        .filter_map(|token| {
            let surface = token.trim_matches(|c: char| !c.is_alphanumeric());
            if surface.is_empty() {
                None
            } else {
                Some(Word {
                    surface: surface.to_string(),
                    key: surface.to_lowercase(),
                })
            }
        })
        .collect()
}

/// Match key for a single echoed word, using the same normalization as
/// [`tokenize_words`].
pub fn match_key(word: &str) -> String {
    word.trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhoneFeature {
    pub label: String,
    /// Index into the utterance word list; `None` for pauses.
    pub word_index: Option<usize>,
    pub duration_s: f64,
    /// Log-F0, present iff voiced. Speaker-normalized in `norm` files,
    /// natural log of Hz in `raw` files.
    pub log_f0: Option<f64>,
    /// Log-energy; speaker-normalized in `norm` files.
    pub log_energy: f64,
    pub voiced: bool,
    pub pause: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub id: String,
    pub speaker_id: String,
    pub scale: FeatureScale,
    pub text: String,
    pub words: Vec<Word>,
    pub phones: Vec<PhoneFeature>,
}

impl UtteranceFeatures {
    /// Builds an utterance, deriving the word list from `text`.
    pub fn new(
        id: impl Into<String>,
        speaker_id: impl Into<String>,
        scale: FeatureScale,
        text: impl Into<String>,
        phones: Vec<PhoneFeature>,
    ) -> Self {
        let text = text.into();
        UtteranceFeatures {
            id: id.into(),
            speaker_id: speaker_id.into(),
            scale,
            words: tokenize_words(&text),
            text,
            phones,
        }
    }

    pub fn total_duration_s(&self) -> f64 {
        self.phones.iter().map(|p| p.duration_s).sum()
    }

    /// Checks every structural invariant. On failure returns the offending
    /// phone position (if any) and a reason.
    pub fn validate(&self) -> Result<(), (Option<usize>, String)> {
        let is_token = |s: &str| !s.is_empty() && !s.contains(char::is_whitespace);
        if !is_token(&self.id) {
            return Err((
                None,
                "utterance id must be non-empty without whitespace".into(),
            ));
        }
        if !is_token(&self.speaker_id) {
            return Err((
                None,
                "speaker id must be non-empty without whitespace".into(),
            ));
        }
        if self.text.contains(['\t', '\n', '\r']) {
            return Err((None, "text must not contain tabs or line breaks".into()));
        }
        if self.words != tokenize_words(&self.text) {
            return Err((None, "word list does not match the tokenized text".into()));
        }
        if self.phones.is_empty() {
            return Err((None, "utterance has no phones".into()));
        }

        let word_count = self.words.len();
        let mut referenced = vec![false; word_count];
        let mut last_index: Option<usize> = None;
        for (i, phone) in self.phones.iter().enumerate() {
            let fail = |reason: String| Err((Some(i), reason));
            if !is_token(&phone.label) {
                return fail("phone label must be non-empty without whitespace".into());
            }
            if !(phone.duration_s.is_finite() && phone.duration_s > 0.0) {
                return fail(format!("duration must be > 0, got {}", phone.duration_s));
            }
            if !phone.log_energy.is_finite() {
                return fail("energy must be finite".into());
            }
            match (phone.voiced, phone.log_f0) {
                (true, None) => return fail(format!("voiced phone '{}' lacks F0", phone.label)),
                (false, Some(_)) => {
                    return fail(format!("unvoiced phone '{}' carries F0", phone.label))
                }
                (true, Some(f0)) if !f0.is_finite() => return fail("F0 must be finite".into()),
                _ => {}
            }
            if phone.pause {
                if phone.word_index.is_some() {
                    return fail("pause carries a word index".into());
                }
                if phone.voiced {
                    return fail("pause marked voiced".into());
                }
                continue;
            }
            let Some(index) = phone.word_index else {
                return fail(format!(
                    "non-pause phone '{}' has no word index",
                    phone.label
                ));
            };
            if index >= word_count {
                return fail(format!(
                    "word index {index} out of range for {word_count} words"
                ));
            }
            if last_index.is_some_and(|prev| index < prev) {
                return fail(format!("word index {index} decreases"));
            }
            last_index = Some(index);
            referenced[index] = true;
        }
        if let Some(j) = referenced.iter().position(|r| !r) {
            return Err((
                None,
                format!("word {j} ('{}') has no phones", self.words[j].surface),
            ));
        }
        Ok(())
    }
}

fn fmt_float(out: &mut String, value: f64) {
    let _ = write!(out, "{value:.6}");
}

/// Writes utterances in canonical feature-file form.
pub fn serialize_features(utterances: &[UtteranceFeatures]) -> String {
    let mut out = String::new();
    for utt in utterances {
        let _ = writeln!(
            out,
            "{HEADER_TAG}\t{}\t{}\t{}\t{}",
            utt.id, utt.speaker_id, utt.scale, utt.text
        );
        for phone in &utt.phones {
            out.push_str(&phone.label);
            out.push('\t');
            match phone.word_index {
                Some(j) => {
                    let _ = write!(out, "{j}");
                }
                None => out.push('-'),
            }
            out.push('\t');
            fmt_float(&mut out, phone.duration_s);
            out.push('\t');
            match phone.log_f0 {
                Some(f0) => fmt_float(&mut out, f0),
                None => out.push('-'),
            }
            out.push('\t');
            fmt_float(&mut out, phone.log_energy);
            let _ = writeln!(
                out,
                "\t{}\t{}",
                u8::from(phone.voiced),
                u8::from(phone.pause)
            );
        }
    }
    out
}

struct PendingUtterance {
    header_line: usize,
    first_phone_line: usize,
    utterance: UtteranceFeatures,
}

fn finish(pending: PendingUtterance) -> Result<UtteranceFeatures, FeatureError> {
    let PendingUtterance {
        header_line,
        first_phone_line,
        utterance,
    } = pending;
    utterance
        .validate()
        .map_err(|(phone, reason)| FeatureError::Invariant {
            utterance: utterance.id.clone(),
            line: phone.map_or(header_line, |i| first_phone_line + i),
            reason,
        })?;
    Ok(utterance)
}

fn parse_flag(field: &str, line: usize, name: &str) -> Result<bool, FeatureError> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(FeatureError::Malformed {
            line,
            reason: format!("{name} flag must be 0 or 1, got '{other}'"),
        }),
    }
}

fn parse_f64(field: &str, line: usize, name: &str) -> Result<f64, FeatureError> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| FeatureError::Malformed {
            line,
            reason: format!("{name} is not a finite number: '{field}'"),
        })
}

fn parse_phone_row(row: &str, line: usize) -> Result<PhoneFeature, FeatureError> {
    let fields: Vec<&str> = row.split('\t').collect();
    if fields.len() != 7 {
        return Err(FeatureError::Malformed {
            line,
            reason: format!("expected 7 tab-separated fields, found {}", fields.len()),
        });
    }
    let word_index = match fields[1] {
        "-" => None,
        s => Some(s.parse::<usize>().map_err(|_| FeatureError::Malformed {
            line,
            reason: format!("word index is not a non-negative integer: '{s}'"),
        })?),
    };
    let log_f0 = match fields[3] {
        "-" => None,
        s => Some(parse_f64(s, line, "F0")?),
    };
    Ok(PhoneFeature {
        label: fields[0].to_string(),
        word_index,
        duration_s: parse_f64(fields[2], line, "duration")?,
        log_f0,
        log_energy: parse_f64(fields[4], line, "energy")?,
        voiced: parse_flag(fields[5], line, "voiced")?,
        pause: parse_flag(fields[6], line, "pause")?,
    })
}

/// Parses a feature file. Errors carry 1-based line numbers.
pub fn parse_features(document: &str) -> Result<Vec<UtteranceFeatures>, FeatureError> {
    let mut utterances = Vec::new();
    let mut current: Option<PendingUtterance> = None;

    for (idx, raw_line) in document.lines().enumerate() {
        let line = idx + 1;
        let row = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if row.trim().is_empty() {
            continue;
        }
        if row.starts_with('#') {
            let fields: Vec<&str> = row.splitn(5, '\t').collect();
            if fields[0] != HEADER_TAG || fields.len() != 5 {
                return Err(FeatureError::Malformed {
                    line,
                    reason: "expected '#utterance<TAB>id<TAB>speaker<TAB>raw|norm<TAB>text'".into(),
                });
            }
            let scale = fields[3]
                .parse::<FeatureScale>()
                .map_err(|reason| FeatureError::Malformed { line, reason })?;
            if let Some(done) = current.take() {
                utterances.push(finish(done)?);
            }
            current = Some(PendingUtterance {
                header_line: line,
                first_phone_line: line + 1,
                utterance: UtteranceFeatures::new(
                    fields[1],
                    fields[2],
                    scale,
                    fields[4],
                    Vec::new(),
                ),
            });
            continue;
        }
        let Some(pending) = current.as_mut() else {
            return Err(FeatureError::Malformed {
                line,
                reason: "phone row before any '#utterance' header".into(),
            });
        };
        if pending.utterance.phones.is_empty() {
            pending.first_phone_line = line;
        } else if line != pending.first_phone_line + pending.utterance.phones.len() {
            // Blank lines inside a block would break phone -> line mapping.
            return Err(FeatureError::Malformed {
                line,
                reason: "blank line inside an utterance block".into(),
            });
        }
        pending.utterance.phones.push(parse_phone_row(row, line)?);
    }
    if let Some(done) = current.take() {
        utterances.push(finish(done)?);
    }
    Ok(utterances)
}

/// Normalization constants and natural F0 range of one speaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerStats {
    pub mu_logf0: f64,
    pub sigma_logf0: f64,
    pub mu_loge: f64,
    pub sigma_loge: f64,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
}

const STATS_KEYS: [&str; 6] = [
    "mu_logf0",
    "sigma_logf0",
    "mu_loge",
    "sigma_loge",
    "f0_min_hz",
    "f0_max_hz",
];

impl SpeakerStats {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.mu_logf0,
            self.sigma_logf0,
            self.mu_loge,
            self.sigma_loge,
            self.f0_min_hz,
            self.f0_max_hz,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err("all statistics must be finite".into());
        }
        if self.sigma_logf0 <= 0.0 || self.sigma_loge <= 0.0 {
            return Err("standard deviations must be positive".into());
        }
        if !(0.0 < self.f0_min_hz && self.f0_min_hz < self.f0_max_hz) {
            return Err(format!(
                "F0 range must satisfy 0 < min < max, got [{}, {}]",
                self.f0_min_hz, self.f0_max_hz
            ));
        }
        Ok(())
    }

    fn values(&self) -> [f64; 6] {
        [
            self.mu_logf0,
            self.sigma_logf0,
            self.mu_loge,
            self.sigma_loge,
            self.f0_min_hz,
            self.f0_max_hz,
        ]
    }

    /// `key<TAB>value` lines. Values use the shortest round-trip decimal form,
    /// so reading the file back yields identical bits.
    pub fn to_file_string(&self) -> String {
        STATS_KEYS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k}\t{v}\n"))
            .collect()
    }

    pub fn parse_file(text: &str) -> Result<Self, FeatureError> {
        let mut values: [Option<f64>; 6] = [None; 6];
        for (idx, row) in text.lines().enumerate() {
            let line = idx + 1;
            if row.trim().is_empty() {
                continue;
            }
            let (key, value) = row.split_once('\t').ok_or_else(|| {
                FeatureError::StatsFile(format!("line {line}: expected key<TAB>value"))
            })?;
            let slot = STATS_KEYS
                .iter()
                .position(|k| *k == key.trim())
                .ok_or_else(|| {
                    FeatureError::StatsFile(format!("line {line}: unknown key '{key}'"))
                })?;
            if values[slot].is_some() {
                return Err(FeatureError::StatsFile(format!(
                    "line {line}: duplicate key '{key}'"
                )));
            }
            let v = value.trim().parse::<f64>().map_err(|_| {
                FeatureError::StatsFile(format!("line {line}: value for '{key}' is not a number"))
            })?;
            values[slot] = Some(v);
        }
        if let Some(missing) = values.iter().position(Option::is_none) {
            return Err(FeatureError::StatsFile(format!(
                "missing key '{}'",
                STATS_KEYS[missing]
            )));
        }
        let v = values.map(Option::unwrap);
        let stats = SpeakerStats {
            mu_logf0: v[0],
            sigma_logf0: v[1],
            mu_loge: v[2],
            sigma_loge: v[3],
            f0_min_hz: v[4],
            f0_max_hz: v[5],
        };
        stats.validate().map_err(FeatureError::StatsFile)?;
        Ok(stats)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsConfig {
    /// Utterances shorter than this (total phone duration) are ignored.
    pub min_duration_s: f64,
    /// Percentiles (0..=100) of linear-Hz voiced F0 taken as the natural range.
    pub range_percentiles: (f64, f64),
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            min_duration_s: 1.5,
            range_percentiles: (5.0, 95.0),
        }
    }
}

fn mean_and_sample_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Linear-interpolated percentile of an ascending slice (the same rule as
/// numpy's default).
fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Computes normalization statistics from raw features.
///
/// F0 statistics use voiced phones only; energy statistics use every
/// non-pause phone. Utterances shorter than `min_duration_s` are dropped
/// before anything is accumulated.
pub fn compute_speaker_stats(
    utterances: &[UtteranceFeatures],
    config: &StatsConfig,
) -> Result<SpeakerStats, FeatureError> {
    let (low, high) = config.range_percentiles;
    if !(0.0..=100.0).contains(&low) || !(0.0..=100.0).contains(&high) || low >= high {
        return Err(FeatureError::InvalidConfig(format!(
            "percentiles must satisfy 0 <= low < high <= 100, got ({low}, {high})"
        )));
    }
    if !(config.min_duration_s >= 0.0) {
        return Err(FeatureError::InvalidConfig(
            "min duration must be >= 0".into(),
        ));
    }
    if let Some(utt) = utterances.iter().find(|u| u.scale != FeatureScale::Raw) {
        return Err(FeatureError::NotRaw(utt.id.clone()));
    }

    let mut log_f0 = Vec::new();
    let mut log_e = Vec::new();
    for utt in utterances
        .iter()
        .filter(|u| u.total_duration_s() >= config.min_duration_s)
    {
        for phone in utt.phones.iter().filter(|p| !p.pause) {
            log_e.push(phone.log_energy);
            if let Some(f0) = phone.log_f0 {
                log_f0.push(f0);
            }
        }
    }
    if log_f0.len() < 2 {
        return Err(FeatureError::DegenerateStats(format!(
            "{} voiced phones after filtering, need at least 2",
            log_f0.len()
        )));
    }
    let (mu_logf0, sigma_logf0) = mean_and_sample_sd(&log_f0);
    let (mu_loge, sigma_loge) = mean_and_sample_sd(&log_e);
    if !(sigma_logf0 > 0.0) {
        return Err(FeatureError::DegenerateStats(
            "log-F0 has zero variance".into(),
        ));
    }
    if !(sigma_loge > 0.0) {
        return Err(FeatureError::DegenerateStats(
            "log-energy has zero variance".into(),
        ));
    }

    let mut hz: Vec<f64> = log_f0.iter().map(|v| v.exp()).collect();
    hz.sort_by(f64::total_cmp);
    let stats = SpeakerStats {
        mu_logf0,
        sigma_logf0,
        mu_loge,
        sigma_loge,
        f0_min_hz: percentile_sorted(&hz, low),
        f0_max_hz: percentile_sorted(&hz, high),
    };
    stats.validate().map_err(FeatureError::DegenerateStats)?;
    Ok(stats)
}
