//! Applies a [`ModificationPlan`] to speaker-normalized phone features.
//!
//! F0 and energy are de-normalized to linear scale, modified, then
//! re-normalized. Durations are scaled directly. Pauses are never touched,
//! and unvoiced phones only receive the duration change.

use thiserror::Error;

use crate::features::{match_key, FeatureScale, SpeakerStats, UtteranceFeatures};
use crate::mapping::ModificationPlan;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModifierError {
    #[error("F0 must be positive to normalize, got {0} Hz")]
    NonPositiveF0(f64),
    #[error("energy must be positive to normalize, got {0}")]
    NonPositiveEnergy(f64),
    #[error("plan has {plan} words, utterance '{utterance}' has {expected}")]
    PlanShapeMismatch {
        utterance: String,
        plan: usize,
        expected: usize,
    },
    #[error("plan word {index} is '{plan}', utterance '{utterance}' has '{expected}'")]
    PlanWordMismatch {
        utterance: String,
        index: usize,
        plan: String,
        expected: String,
    },
    #[error("utterance '{0}' is not speaker-normalized")]
    NotNormalized(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("utterance '{0}' is already speaker-normalized")]
    AlreadyNormalized(String),
}

pub fn denorm_f0(f0_norm: f64, stats: &SpeakerStats) -> f64 {
    (f0_norm * stats.sigma_logf0 + stats.mu_logf0).exp()
}

pub fn renorm_f0(hz: f64, stats: &SpeakerStats) -> Result<f64, ModifierError> {
    if !(hz > 0.0) {
        return Err(ModifierError::NonPositiveF0(hz));
    }
    Ok((hz.ln() - stats.mu_logf0) / stats.sigma_logf0)
}

pub fn denorm_energy(energy_norm: f64, stats: &SpeakerStats) -> f64 {
    (energy_norm * stats.sigma_loge + stats.mu_loge).exp()
}

pub fn renorm_energy(energy: f64, stats: &SpeakerStats) -> Result<f64, ModifierError> {
    if !(energy > 0.0) {
        return Err(ModifierError::NonPositiveEnergy(energy));
    }
    Ok((energy.ln() - stats.mu_loge) / stats.sigma_loge)
}

/// Converts raw log-F0/log-energy into speaker-normalized values.
pub fn normalize_utterance(
    utterance: &UtteranceFeatures,
    stats: &SpeakerStats,
) -> Result<UtteranceFeatures, ModifierError> {
    if utterance.scale != FeatureScale::Raw {
        return Err(ModifierError::AlreadyNormalized(utterance.id.clone()));
    }
    let mut out = utterance.clone();
    out.scale = FeatureScale::Normalized;
    for phone in &mut out.phones {
        phone.log_f0 = phone
            .log_f0
            .map(|f| (f - stats.mu_logf0) / stats.sigma_logf0);
        phone.log_energy = (phone.log_energy - stats.mu_loge) / stats.sigma_loge;
    }
    Ok(out)
}

/// Shifts one voiced phone's F0 (Hz) and keeps it within the speaker range.
///
/// A phone that already lies outside the range is never pushed further out;
/// one inside the range always stays inside.
pub fn shift_f0(hz: f64, shift_hz: f64, stats: &SpeakerStats) -> f64 {
    let lo = stats.f0_min_hz.min(hz);
    let hi = stats.f0_max_hz.max(hz);
    (hz + shift_hz).clamp(lo, hi)
}

pub fn apply_plan(
    utterance: &UtteranceFeatures,
    stats: &SpeakerStats,
    plan: &ModificationPlan,
) -> Result<UtteranceFeatures, ModifierError> {
    if utterance.scale != FeatureScale::Normalized {
        return Err(ModifierError::NotNormalized(utterance.id.clone()));
    }
    if plan.words.len() != utterance.words.len() {
        return Err(ModifierError::PlanShapeMismatch {
            utterance: utterance.id.clone(),
            plan: plan.words.len(),
            expected: utterance.words.len(),
        });
    }
    for (j, (pw, w)) in plan.words.iter().zip(&utterance.words).enumerate() {
        if match_key(&pw.surface) != w.key {
            return Err(ModifierError::PlanWordMismatch {
                utterance: utterance.id.clone(),
                index: j,
                plan: pw.surface.clone(),
                expected: w.surface.clone(),
            });
        }
    }
    plan.validate().map_err(ModifierError::InvalidPlan)?;

    let mut out = utterance.clone();
    for phone in out.phones.iter_mut().filter(|p| !p.pause) {
        // validate() guarantees non-pause phones carry an in-range index.
        let Some(word) = phone.word_index.map(|j| &plan.words[j]) else {
            continue;
        };
        phone.duration_s = phone.duration_s * plan.g_dur * word.delta;
        if !phone.voiced {
            continue;
        }
        let energy = denorm_energy(phone.log_energy, stats) * plan.g_energy * word.epsilon;
        phone.log_energy = renorm_energy(energy, stats)?;
        if let Some(f0) = phone.log_f0 {
            let hz = shift_f0(denorm_f0(f0, stats), plan.g_pitch_hz + word.pi_hz, stats);
            phone.log_f0 = Some(renorm_f0(hz, stats)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::PhoneFeature;
    use crate::mapping::{PitchBounds, WordCoefficients};

    fn stats() -> SpeakerStats {
        SpeakerStats {
            mu_logf0: 200f64.ln(),
            sigma_logf0: 0.25,
            mu_loge: 0.5,
            sigma_loge: 0.8,
            f0_min_hz: 100.0,
            f0_max_hz: 300.0,
        }
    }

    fn utterance(st: &SpeakerStats) -> UtteranceFeatures {
        let phones = vec![
            PhoneFeature {
                label: "S".into(),
                word_index: Some(0),
                duration_s: 0.10,
                log_f0: None,
                log_energy: 0.3,
                voiced: false,
                pause: false,
            },
            PhoneFeature {
                label: "OW".into(),
                word_index: Some(0),
                duration_s: 0.12,
                log_f0: Some(renorm_f0(150.0, st).unwrap()),
                log_energy: -0.2,
                voiced: true,
                pause: false,
            },
            PhoneFeature {
                label: "sil".into(),
                word_index: None,
                duration_s: 0.3,
                log_f0: None,
                log_energy: -2.0,
                voiced: false,
                pause: true,
            },
        ];
        UtteranceFeatures::new("u", "s", FeatureScale::Normalized, "so", phones)
    }

    fn plan(g_dur: f64, g_pitch: f64, delta: f64, pi: f64) -> ModificationPlan {
        ModificationPlan {
            g_dur,
            g_pitch_hz: g_pitch,
            g_energy: 1.0,
            words: vec![WordCoefficients {
                index: 0,
                surface: "so".into(),
                delta,
                pi_hz: pi,
                epsilon: 1.0,
            }],
            bounds: PitchBounds {
                p_min_hz: -50.0,
                p_max_hz: 150.0,
            },
        }
    }

    #[test]
    fn mean_maps_to_mean() {
        let st = stats();
        assert!((denorm_f0(0.0, &st) - 200.0).abs() < 1e-9);
        assert!((denorm_energy(0.0, &st) - 0.5f64.exp()).abs() < 1e-12);
        assert!(renorm_f0(200.0, &st).unwrap().abs() < 1e-12);
    }

    #[test]
    fn renorm_rejects_non_positive() {
        assert_eq!(
            renorm_f0(0.0, &stats()),
            Err(ModifierError::NonPositiveF0(0.0))
        );
        assert!(renorm_energy(-1.0, &stats()).is_err());
    }

    #[test]
    fn duration_product() {
        let st = stats();
        let out = apply_plan(&utterance(&st), &st, &plan(1.5, 0.0, 1.2, 0.0)).unwrap();
        assert!((out.phones[0].duration_s - 0.18).abs() < 1e-12);
        assert_eq!(out.phones[2], utterance(&st).phones[2]);
    }

    #[test]
    fn pitch_sum() {
        let st = stats();
        let out = apply_plan(&utterance(&st), &st, &plan(1.0, 30.0, 1.0, 10.0)).unwrap();
        let hz = denorm_f0(out.phones[1].log_f0.unwrap(), &st);
        assert!((hz - 190.0).abs() < 1e-9, "{hz}");
        // unvoiced phone keeps energy and F0
        assert_eq!(out.phones[0].log_energy, 0.3);
        assert_eq!(out.phones[0].log_f0, None);
    }

    #[test]
    fn shift_clamps_into_range() {
        let st = stats();
        assert_eq!(shift_f0(290.0, 40.0, &st), 300.0);
        assert_eq!(shift_f0(110.0, -40.0, &st), 100.0);
        // already outside: not pulled in, not pushed further
        assert_eq!(shift_f0(320.0, 0.0, &st), 320.0);
        assert_eq!(shift_f0(320.0, 10.0, &st), 320.0);
        assert_eq!(shift_f0(320.0, -40.0, &st), 280.0);
    }

    #[test]
    fn shape_mismatch() {
        let st = stats();
        let mut p = plan(1.0, 0.0, 1.0, 0.0);
        p.words.clear();
        assert!(matches!(
            apply_plan(&utterance(&st), &st, &p),
            Err(ModifierError::PlanShapeMismatch {
                plan: 0,
                expected: 1,
                ..
            })
        ));
    }

    #[test]
    fn normalize_then_denorm() {
        let st = stats();
        let mut raw = utterance(&st);
        raw.scale = FeatureScale::Raw;
        raw.phones[1].log_f0 = Some(150f64.ln());
        let norm = normalize_utterance(&raw, &st).unwrap();
        assert!((denorm_f0(norm.phones[1].log_f0.unwrap(), &st) - 150.0).abs() < 1e-9);
        assert!(normalize_utterance(&norm, &st).is_err());
    }

    #[test]
    fn plan_for_other_words_is_rejected() {
        let st = stats();
        let mut p = plan(1.0, 0.0, 1.0, 0.0);
        p.words[0].surface = "no".into();
        assert!(matches!(
            apply_plan(&utterance(&st), &st, &p),
            Err(ModifierError::PlanWordMismatch { index: 0, .. })
        ));
    }

    #[test]
    fn raw_features_are_rejected() {
        let st = stats();
        let mut utt = utterance(&st);
        utt.scale = FeatureScale::Raw;
        assert!(matches!(
            apply_plan(&utt, &st, &plan(1.0, 0.0, 1.0, 0.0)),
            Err(ModifierError::NotNormalized(_))
        ));
    }
}
