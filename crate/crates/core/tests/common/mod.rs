#![allow(dead_code)]

use proptest::prelude::*;
use prosody_core::features::{
    tokenize_words, FeatureScale, PhoneFeature, SpeakerStats, UtteranceFeatures,
};
use prosody_core::mapping::{
    compute_pitch_bounds, LlmScaleSuggestion, ModificationPlan, PitchBounds, ScaleValues,
    WordCoefficients, WordSuggestion,
};

pub const LEXICON: [&str; 12] = [
    "the", "quick", "Brown", "fox", "doesn't", "jump", "over", "lazy", "dogs", "re-enter", "now",
    "OK",
];

pub fn stats_strategy() -> impl Strategy<Value = SpeakerStats> {
    (
        100.0..250.0f64,
        0.1..0.4f64,
        -1.0..1.0f64,
        0.3..1.0f64,
        70.0..140.0f64,
        220.0..360.0f64,
    )
        .prop_map(|(mean_hz, sf, me, se, lo, hi)| SpeakerStats {
            mu_logf0: mean_hz.ln(),
            sigma_logf0: sf,
            mu_loge: me,
            sigma_loge: se,
            f0_min_hz: lo,
            f0_max_hz: hi,
        })
}

/// (duration, voiced, position of F0 within the speaker range, energy)
type PhoneSpec = (f64, bool, f64, f64);

fn phone_spec(f0_pos: std::ops::Range<f64>) -> impl Strategy<Value = PhoneSpec> {
    (0.02..0.3f64, any::<bool>(), f0_pos, -2.5..2.5f64)
}

/// Normalized utterance for `stats`. With `in_range`, every voiced F0 lies
/// inside `[f0_min, f0_max]`; otherwise some may fall outside.
pub fn utterance_strategy(
    stats: SpeakerStats,
    in_range: bool,
) -> impl Strategy<Value = UtteranceFeatures> {
    let pos = if in_range { 0.0..1.0 } else { -0.3..1.3 };
    let word = (
        0..LEXICON.len(),
        prop::collection::vec(phone_spec(pos), 1..5),
        prop::option::weighted(0.25, 0.05..0.5f64),
        prop::sample::select(vec!["", "", ",", "."]),
    );
    prop::collection::vec(word, 1..9).prop_map(move |words| {
        let mut text = Vec::new();
        let mut phones = Vec::new();
        for (j, (lex, specs, pause, punct)) in words.into_iter().enumerate() {
            text.push(format!("{}{punct}", LEXICON[lex]));
            for (k, (dur, voiced, pos, energy)) in specs.into_iter().enumerate() {
                let hz = (stats.f0_min_hz + pos * (stats.f0_max_hz - stats.f0_min_hz)).max(20.0);
                phones.push(PhoneFeature {
                    label: format!("p{j}_{k}"),
                    word_index: Some(j),
                    duration_s: dur,
                    log_f0: voiced.then(|| (hz.ln() - stats.mu_logf0) / stats.sigma_logf0),
                    log_energy: energy,
                    voiced,
                    pause: false,
                });
            }
            if let Some(d) = pause {
                phones.push(PhoneFeature {
                    label: "sil".into(),
                    word_index: None,
                    duration_s: d,
                    log_f0: None,
                    log_energy: -3.0,
                    voiced: false,
                    pause: true,
                });
            }
        }
        UtteranceFeatures::new(
            "utt",
            "spk",
            FeatureScale::Normalized,
            text.join(" "),
            phones,
        )
    })
}

pub fn stats_and_utterance(
    in_range: bool,
) -> impl Strategy<Value = (SpeakerStats, UtteranceFeatures)> {
    stats_strategy().prop_flat_map(move |s| (Just(s), utterance_strategy(s, in_range)))
}

/// A valid plan for `utterance`, drawn directly in coefficient space.
pub fn plan_strategy(
    utterance: &UtteranceFeatures,
    stats: &SpeakerStats,
) -> impl Strategy<Value = ModificationPlan> {
    let bounds = compute_pitch_bounds(utterance, stats).unwrap_or(PitchBounds::ZERO);
    let surfaces: Vec<String> = utterance.words.iter().map(|w| w.surface.clone()).collect();
    let n = surfaces.len();
    (
        0.5..=2.0f64,
        0.0..=1.0f64,
        0.5..=2.0f64,
        prop::collection::vec((1.0..=2.0f64, 0.0..=1.0f64, 1.0..=2.0f64), n),
    )
        .prop_map(move |(g_dur, gp, g_energy, words)| {
            let g_pitch_hz = bounds.p_min_hz + gp * (bounds.p_max_hz - bounds.p_min_hz);
            let headroom = (bounds.p_max_hz - g_pitch_hz).max(0.0);
            ModificationPlan {
                g_dur,
                g_pitch_hz,
                g_energy,
                words: words
                    .into_iter()
                    .enumerate()
                    .map(|(j, (delta, pi, epsilon))| WordCoefficients {
                        index: j,
                        surface: surfaces[j].clone(),
                        delta,
                        pi_hz: pi * headroom,
                        epsilon,
                    })
                    .collect(),
                bounds,
            }
        })
}

pub fn values_strategy(range: std::ops::RangeInclusive<f64>) -> impl Strategy<Value = ScaleValues> {
    (range.clone(), range.clone(), range).prop_map(|(duration, pitch, energy)| ScaleValues {
        duration,
        pitch,
        energy,
    })
}

/// Suggestion aligned with `text`, values drawn from the given ranges.
pub fn suggestion_for(
    text: &str,
    global: std::ops::RangeInclusive<f64>,
    local: std::ops::RangeInclusive<f64>,
) -> impl Strategy<Value = LlmScaleSuggestion> {
    let words = tokenize_words(text);
    let n = words.len();
    (
        values_strategy(global),
        prop::collection::vec(values_strategy(local), n),
        "[A-Za-z ,.]{0,40}",
    )
        .prop_map(move |(global, locals, reasoning)| LlmScaleSuggestion {
            reasoning: reasoning.trim().to_string(),
            global,
            words: locals
                .into_iter()
                .enumerate()
                .map(|(index, values)| WordSuggestion {
                    index,
                    key: words[index].key.clone(),
                    values,
                })
                .collect(),
        })
}
