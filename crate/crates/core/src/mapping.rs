//! Maps LLM-scale suggestions onto clamped modification coefficients.
//!
//! The model answers on two coarse scales: `[-5, 5]` for utterance-level
//! values and `[0, 5]` for word-level values. Those are mapped onto
//!
//! * duration/energy scale factors `g ∈ [0.5, 2]` and `δ, ε ∈ [1, 2]`,
//! * an utterance F0 shift `g_pitch` plus a per-word shift `π ≥ 0`, with
//!   `g_pitch + π` kept inside per-utterance [`PitchBounds`].
//!
//! Scale value 0 always maps to "no change".

use std::fmt::Write as _;

use thiserror::Error;

use crate::features::{tokenize_words, SpeakerStats, UtteranceFeatures};
use crate::modifier::denorm_f0;

pub const GLOBAL_SCALE: (f64, f64) = (-5.0, 5.0);
pub const LOCAL_SCALE: (f64, f64) = (0.0, 5.0);
pub const GLOBAL_FACTOR_RANGE: (f64, f64) = (0.5, 2.0);
pub const LOCAL_FACTOR_RANGE: (f64, f64) = (1.0, 2.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("utterance has no voiced phones")]
    NoVoicedPhones,
    #[error("word mismatch: {0}")]
    WordMismatch(String),
    #[error("invalid mapping config: {0}")]
    InvalidConfig(String),
    #[error("plan file line {line}: {reason}")]
    PlanFile { line: usize, reason: String },
    #[error("plan violates its invariants: {0}")]
    InvalidPlan(String),
}

/// Raw values on the `[-5, 5]` / `[0, 5]` scales for one coefficient triple.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScaleValues {
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordSuggestion {
    pub index: usize,
    /// Match key of the echoed word (see [`crate::features::match_key`]).
    pub key: String,
    pub values: ScaleValues,
}

/// What the model proposed, before mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmScaleSuggestion {
    pub reasoning: String,
    pub global: ScaleValues,
    pub words: Vec<WordSuggestion>,
}

impl LlmScaleSuggestion {
    /// All-zero suggestion for the given target text.
    pub fn neutral(text: &str) -> Self {
        LlmScaleSuggestion {
            reasoning: String::new(),
            global: ScaleValues::default(),
            words: tokenize_words(text)
                .into_iter()
                .enumerate()
                .map(|(index, w)| WordSuggestion {
                    index,
                    key: w.key,
                    values: ScaleValues::default(),
                })
                .collect(),
        }
    }
}

/// Allowed uniform F0 shift (Hz) for one utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchBounds {
    pub p_min_hz: f64,
    pub p_max_hz: f64,
}

impl PitchBounds {
    pub const ZERO: PitchBounds = PitchBounds {
        p_min_hz: 0.0,
        p_max_hz: 0.0,
    };

    pub fn is_valid(&self) -> bool {
        self.p_min_hz <= 0.0 && 0.0 <= self.p_max_hz
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordCoefficients {
    pub index: usize,
    pub surface: String,
    pub delta: f64,
    pub pi_hz: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModificationPlan {
    pub g_dur: f64,
    pub g_pitch_hz: f64,
    pub g_energy: f64,
    pub words: Vec<WordCoefficients>,
    pub bounds: PitchBounds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingConfig {
    /// Fraction of `p_max_hz` a single word's shift may reach.
    pub local_pitch_cap_fraction: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            local_pitch_cap_fraction: 0.5,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<(), MappingError> {
        if (0.0..=1.0).contains(&self.local_pitch_cap_fraction) {
            Ok(())
        } else {
            Err(MappingError::InvalidConfig(format!(
                "local_pitch_cap_fraction must be in [0, 1], got {}",
                self.local_pitch_cap_fraction
            )))
        }
    }
}

/// Which suggestion value was clamped onto its scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampReport {
    /// `None` for the utterance-level triple.
    pub word: Option<usize>,
    pub field: &'static str,
    pub original: f64,
    pub clamped: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltPlan {
    pub plan: ModificationPlan,
    pub clamps: Vec<ClampReport>,
}

fn clamp_scale(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(lo, hi)
    }
}

/// `[-5, 0] -> [0.5, 1]` and `[0, 5] -> [1, 2]`, each piece linear.
pub fn map_global_scale(v: f64) -> f64 {
    let v = clamp_scale(v, GLOBAL_SCALE);
    if v <= 0.0 {
        1.0 + v / 10.0
    } else {
        1.0 + v / 5.0
    }
}

/// `[0, 5] -> [1, 2]`.
pub fn map_local_scale(v: f64) -> f64 {
    1.0 + clamp_scale(v, LOCAL_SCALE) / 5.0
}

/// Maps the pitch pair to `(g_pitch_hz, pi_hz)`.
///
/// The word shift is reduced (never below zero) when the sum would exceed
/// `p_max_hz`; the utterance shift is never touched.
pub fn map_pitch(
    v_global: f64,
    v_local: f64,
    bounds: PitchBounds,
    config: &MappingConfig,
) -> (f64, f64) {
    let v_global = clamp_scale(v_global, GLOBAL_SCALE);
    let v_local = clamp_scale(v_local, LOCAL_SCALE);
    let g = if v_global <= 0.0 {
        (-v_global / 5.0) * bounds.p_min_hz
    } else {
        (v_global / 5.0) * bounds.p_max_hz
    };
    let mut pi = (v_local / 5.0) * config.local_pitch_cap_fraction * bounds.p_max_hz;
    if g + pi > bounds.p_max_hz {
        pi = (bounds.p_max_hz - g).max(0.0);
        // p_max - g can round up by an ulp.
        while pi > 0.0 && g + pi > bounds.p_max_hz {
            pi = pi.next_down().max(0.0);
        }
    }
    (g, pi)
}

/// Uniform shift range that keeps every voiced phone inside the speaker's
/// natural F0 range. Zero shift is always admissible.
pub fn compute_pitch_bounds(
    utterance: &UtteranceFeatures,
    stats: &SpeakerStats,
) -> Result<PitchBounds, MappingError> {
    let (lo, hi) = utterance
        .phones
        .iter()
        .filter_map(|p| p.log_f0)
        .map(|f0| denorm_f0(f0, stats))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), hz| {
            (lo.min(hz), hi.max(hz))
        });
    if lo > hi {
        return Err(MappingError::NoVoicedPhones);
    }
    Ok(PitchBounds {
        p_min_hz: (stats.f0_min_hz - lo).min(0.0),
        p_max_hz: (stats.f0_max_hz - hi).max(0.0),
    })
}

/// Clamps, maps and constrains a suggestion into a plan for `utterance`.
///
/// An utterance without voiced phones gets zero pitch bounds: no F0 shift
/// can apply to it anyway.
pub fn build_plan(
    suggestion: &LlmScaleSuggestion,
    utterance: &UtteranceFeatures,
    stats: &SpeakerStats,
    config: &MappingConfig,
) -> Result<BuiltPlan, MappingError> {
    config.validate()?;
    let expected = tokenize_words(&utterance.text);
    if expected.len() != utterance.words.len() {
        return Err(MappingError::WordMismatch(format!(
            "utterance '{}' word list does not match its text",
            utterance.id
        )));
    }
    if suggestion.words.len() != expected.len() {
        return Err(MappingError::WordMismatch(format!(
            "suggestion has {} words, utterance '{}' has {}",
            suggestion.words.len(),
            utterance.id,
            expected.len()
        )));
    }
    for (j, (ws, w)) in suggestion.words.iter().zip(&expected).enumerate() {
        if ws.index != j || ws.key != w.key {
            return Err(MappingError::WordMismatch(format!(
                "word {j}: suggestion has ({}, '{}'), text has '{}'",
                ws.index, ws.key, w.key
            )));
        }
    }

    let bounds = match compute_pitch_bounds(utterance, stats) {
        Ok(b) => b,
        Err(MappingError::NoVoicedPhones) => PitchBounds::ZERO,
        Err(e) => return Err(e),
    };

    let mut clamps = Vec::new();
    let mut clamp = |word: Option<usize>, field: &'static str, v: f64, range: (f64, f64)| {
        let c = clamp_scale(v, range);
        if c != v || v.is_nan() {
            clamps.push(ClampReport {
                word,
                field,
                original: v,
                clamped: c,
            });
        }
        c
    };

    let gd = clamp(None, "duration", suggestion.global.duration, GLOBAL_SCALE);
    let gp = clamp(None, "pitch", suggestion.global.pitch, GLOBAL_SCALE);
    let ge = clamp(None, "energy", suggestion.global.energy, GLOBAL_SCALE);

    let mut g_pitch_hz = 0.0;
    let mut words = Vec::with_capacity(expected.len());
    for (ws, w) in suggestion.words.iter().zip(&expected) {
        let ld = clamp(Some(ws.index), "duration", ws.values.duration, LOCAL_SCALE);
        let lp = clamp(Some(ws.index), "pitch", ws.values.pitch, LOCAL_SCALE);
        let le = clamp(Some(ws.index), "energy", ws.values.energy, LOCAL_SCALE);
        let (g, pi) = map_pitch(gp, lp, bounds, config);
        g_pitch_hz = g;
        words.push(WordCoefficients {
            index: ws.index,
            surface: w.surface.clone(),
            delta: map_local_scale(ld),
            pi_hz: pi,
            epsilon: map_local_scale(le),
        });
    }
    if words.is_empty() {
        g_pitch_hz = map_pitch(gp, 0.0, bounds, config).0;
    }

    let plan = ModificationPlan {
        g_dur: map_global_scale(gd),
        g_pitch_hz,
        g_energy: map_global_scale(ge),
        words,
        bounds,
    };
    debug_assert!(plan.validate().is_ok());
    Ok(BuiltPlan { plan, clamps })
}

impl ModificationPlan {
    /// Identity plan over the given word surfaces, with zero pitch bounds.
    pub fn identity(surfaces: &[String]) -> Self {
        ModificationPlan {
            g_dur: 1.0,
            g_pitch_hz: 0.0,
            g_energy: 1.0,
            words: surfaces
                .iter()
                .enumerate()
                .map(|(index, s)| WordCoefficients {
                    index,
                    surface: s.clone(),
                    delta: 1.0,
                    pi_hz: 0.0,
                    epsilon: 1.0,
                })
                .collect(),
            bounds: PitchBounds::ZERO,
        }
    }

    /// Checks the coefficient ranges and the combined pitch constraint.
    pub fn validate(&self) -> Result<(), String> {
        let in_range = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !self.bounds.is_valid() {
            return Err(format!(
                "bounds must satisfy p_min <= 0 <= p_max, got [{}, {}]",
                self.bounds.p_min_hz, self.bounds.p_max_hz
            ));
        }
        if !in_range(self.g_dur, GLOBAL_FACTOR_RANGE) {
            return Err(format!("g_dur {} outside [0.5, 2]", self.g_dur));
        }
        if !in_range(self.g_energy, GLOBAL_FACTOR_RANGE) {
            return Err(format!("g_energy {} outside [0.5, 2]", self.g_energy));
        }
        let pitch_range = (self.bounds.p_min_hz, self.bounds.p_max_hz);
        if !in_range(self.g_pitch_hz, pitch_range) {
            return Err(format!("g_pitch {} outside pitch bounds", self.g_pitch_hz));
        }
        for (j, w) in self.words.iter().enumerate() {
            if w.index != j {
                return Err(format!("word {j} has index {}", w.index));
            }
            if !in_range(w.delta, LOCAL_FACTOR_RANGE) {
                return Err(format!("word {j}: delta {} outside [1, 2]", w.delta));
            }
            if !in_range(w.epsilon, LOCAL_FACTOR_RANGE) {
                return Err(format!("word {j}: epsilon {} outside [1, 2]", w.epsilon));
            }
            if !(w.pi_hz >= 0.0) {
                return Err(format!("word {j}: pi {} is negative", w.pi_hz));
            }
            if !in_range(self.g_pitch_hz + w.pi_hz, pitch_range) {
                return Err(format!(
                    "word {j}: g_pitch + pi = {} outside [{}, {}]",
                    self.g_pitch_hz + w.pi_hz,
                    self.bounds.p_min_hz,
                    self.bounds.p_max_hz
                ));
            }
        }
        Ok(())
    }

    /// Plan file text. Numbers use the shortest round-trip form so that a
    /// re-read plan is bit-identical.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "GLOBAL\t{}\t{}\t{}",
            self.g_dur, self.g_pitch_hz, self.g_energy
        );
        for w in &self.words {
            let _ = writeln!(
                out,
                "WORD\t{}\t{}\t{}\t{}\t{}",
                w.index, w.surface, w.delta, w.pi_hz, w.epsilon
            );
        }
        let _ = writeln!(
            out,
            "BOUNDS\t{}\t{}",
            self.bounds.p_min_hz, self.bounds.p_max_hz
        );
        out
    }

    pub fn parse_file(text: &str) -> Result<Self, MappingError> {
        let err = |line: usize, reason: String| MappingError::PlanFile { line, reason };
        let num = |line: usize, s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("'{s}' is not a finite number")))
        };

        let mut global: Option<(f64, f64, f64)> = None;
        let mut bounds: Option<PitchBounds> = None;
        let mut words = Vec::new();
        for (idx, row) in text.lines().enumerate() {
            let line = idx + 1;
            if row.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = row.split('\t').collect();
            if bounds.is_some() {
                return Err(err(line, "content after BOUNDS".into()));
            }
            match fields[0] {
                "GLOBAL" if fields.len() == 4 => {
                    if global.is_some() {
                        return Err(err(line, "duplicate GLOBAL line".into()));
                    }
                    global = Some((
                        num(line, fields[1])?,
                        num(line, fields[2])?,
                        num(line, fields[3])?,
                    ));
                }
                "WORD" if fields.len() == 6 => {
                    if global.is_none() {
                        return Err(err(line, "WORD before GLOBAL".into()));
                    }
                    let index = fields[1]
                        .parse::<usize>()
                        .map_err(|_| err(line, format!("bad word index '{}'", fields[1])))?;
                    words.push(WordCoefficients {
                        index,
                        surface: fields[2].to_string(),
                        delta: num(line, fields[3])?,
                        pi_hz: num(line, fields[4])?,
                        epsilon: num(line, fields[5])?,
                    });
                }
                "BOUNDS" if fields.len() == 3 => {
                    if global.is_none() {
                        return Err(err(line, "BOUNDS before GLOBAL".into()));
                    }
                    bounds = Some(PitchBounds {
                        p_min_hz: num(line, fields[1])?,
                        p_max_hz: num(line, fields[2])?,
                    });
                }
                other => return Err(err(line, format!("unexpected record '{other}'"))),
            }
        }
        let (g_dur, g_pitch_hz, g_energy) =
            global.ok_or_else(|| err(text.lines().count().max(1), "missing GLOBAL line".into()))?;
        let bounds =
            bounds.ok_or_else(|| err(text.lines().count().max(1), "missing BOUNDS line".into()))?;
        let plan = ModificationPlan {
            g_dur,
            g_pitch_hz,
            g_energy,
            words,
            bounds,
        };
        plan.validate().map_err(MappingError::InvalidPlan)?;
        Ok(plan)
    }
}
