//! Listening-test aggregation: MOS with t-based confidence intervals,
//! paired t-tests and A/B/C preference shares.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

pub const RATINGS_HEADER: [&str; 4] = ["stimulus_id", "system_id", "rater_id", "score"];
pub const PREFERENCES_HEADER: [&str; 4] = ["set_id", "rater_id", "chosen_system", "systems_in_set"];
pub const STYLES_HEADER: [&str; 2] = ["set_id", "style"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no records")]
    EmptyInput,
    #[error("system '{system}' has {n} rating(s); at least 2 are needed")]
    InsufficientData { system: String, n: usize },
    #[error("fewer than 2 complete pairs ({0} found)")]
    NoPairs(usize),
    #[error("duplicate rating for stimulus '{stimulus}' by rater '{rater}'")]
    DuplicatePair { stimulus: String, rater: String },
    #[error("set '{0}' does not use the same systems as the other records")]
    MixedSystemSets(String),
    #[error("set '{0}' has no style label")]
    UnlabeledSet(String),
    #[error("line {line}: {reason}")]
    InvalidRecord { line: usize, reason: String },
    #[error("confidence must be in (0, 1), got {0}")]
    InvalidConfidence(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RatingRecord {
    pub stimulus_id: String,
    pub system_id: String,
    pub rater_id: String,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceRecord {
    pub set_id: String,
    pub rater_id: String,
    pub chosen_system: String,
    pub systems_in_set: Vec<String>,
}

impl PreferenceRecord {
    pub fn validate(&self) -> Result<(), String> {
        let distinct: BTreeSet<&String> = self.systems_in_set.iter().collect();
        if self.systems_in_set.len() != 3 || distinct.len() != 3 {
            return Err(format!(
                "expected 3 distinct systems, got {:?}",
                self.systems_in_set
            ));
        }
        if !distinct.contains(&self.chosen_system) {
            return Err(format!(
                "chosen system '{}' is not in the set",
                self.chosen_system
            ));
        }
        Ok(())
    }
}

/// Rounds `num / den` to tenths, half-up, in exact integer arithmetic.
pub fn tenths_half_up(num: u64, den: u64) -> u64 {
    (20 * num + den) / (2 * den)
}

pub fn format_tenths(tenths: u64) -> String {
    format!("{}.{}", tenths / 10, tenths % 10)
}

/// Half-up rounding to one decimal for non-negative reals.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn t_critical(confidence: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    dist.inverse_cdf(1.0 - (1.0 - confidence) / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosSummary {
    pub system_id: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// Half-width of the t-based confidence interval at `confidence`.
    pub ci_halfwidth: f64,
    pub confidence: f64,
    /// Mean in tenths, rounded half-up from the exact rational mean.
    pub mean_tenths: u64,
}

impl MosSummary {
    pub fn display(&self) -> String {
        format!(
            "{}±{:.1}",
            format_tenths(self.mean_tenths),
            round1(self.ci_halfwidth)
        )
    }
}

/// Per-system MOS, sorted by system id.
pub fn mos_summary(
    records: &[RatingRecord],
    confidence: f64,
) -> Result<Vec<MosSummary>, EvalError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(EvalError::InvalidConfidence(confidence));
    }
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut by_system: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for r in records {
        by_system.entry(&r.system_id).or_default().push(r.score);
    }
    by_system
        .into_iter()
        .map(|(system, scores)| {
            let n = scores.len();
            if n < 2 {
                return Err(EvalError::InsufficientData {
                    system: system.into(),
                    n,
                });
            }
            // Integer sums keep the result independent of record order.
            let sum: u64 = scores.iter().map(|&s| s as u64).sum();
            let sum_sq: u64 = scores.iter().map(|&s| (s as u64).pow(2)).sum();
            let mean = sum as f64 / n as f64;
            let scatter = n as u64 * sum_sq - sum * sum;
            let sd = (scatter as f64 / (n as f64 * (n - 1) as f64)).sqrt();
            let ci_halfwidth = t_critical(confidence, (n - 1) as f64) * sd / (n as f64).sqrt();
            Ok(MosSummary {
                system_id: system.into(),
                n,
                mean,
                sd,
                ci_halfwidth,
                confidence,
                mean_tenths: tenths_half_up(sum, n as u64),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TTestFlag {
    /// Every difference is zero: t = 0, p = 1.
    AllZeroDifferences,
    /// Differences are identical and nonzero: t = ±inf, p = 0.
    ZeroVariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedTTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub mean_difference: f64,
    pub flag: Option<TTestFlag>,
}

/// Paired t-test on `a[i] - b[i]`.
pub fn paired_t_test_scores(a: &[f64], b: &[f64]) -> Result<PairedTTest, EvalError> {
    let n = a.len().min(b.len());
    if n < 2 || a.len() != b.len() {
        return Err(EvalError::NoPairs(n));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let ss: f64 = diffs.iter().map(|d| (d - mean).powi(2)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    let df = n - 1;
    if sd == 0.0 {
        let (t, p, flag) = if mean == 0.0 {
            (0.0, 1.0, TTestFlag::AllZeroDifferences)
        } else {
            (f64::INFINITY.copysign(mean), 0.0, TTestFlag::ZeroVariance)
        };
        return Ok(PairedTTest {
            t,
            p,
            df,
            mean_difference: mean,
            flag: Some(flag),
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df > 0");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(PairedTTest {
        t,
        p,
        df,
        mean_difference: mean,
        flag: None,
    })
}

/// Pairs ratings of two systems by (stimulus, rater) and runs a paired t-test
/// on `a - b`. Unmatched ratings are ignored.
pub fn paired_t_test(a: &[RatingRecord], b: &[RatingRecord]) -> Result<PairedTTest, EvalError> {
    fn index(records: &[RatingRecord]) -> Result<HashMap<(&str, &str), u8>, EvalError> {
        let mut map = HashMap::new();
        for r in records {
            if map
                .insert((r.stimulus_id.as_str(), r.rater_id.as_str()), r.score)
                .is_some()
            {
                return Err(EvalError::DuplicatePair {
                    stimulus: r.stimulus_id.clone(),
                    rater: r.rater_id.clone(),
                });
            }
        }
        Ok(map)
    }
    let b_index = index(b)?;
    index(a)?;
    let mut pairs: Vec<((&str, &str), f64, f64)> = a
        .iter()
        .filter_map(|r| {
            let key = (r.stimulus_id.as_str(), r.rater_id.as_str());
            b_index
                .get(&key)
                .map(|&sb| (key, r.score as f64, sb as f64))
        })
        .collect();
    pairs.sort_by(|x, y| x.0.cmp(&y.0));
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().map(|&(_, x, y)| (x, y)).unzip();
    paired_t_test_scores(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemShare {
    pub system_id: String,
    pub wins: u64,
    /// Exact share `wins / total`; shares sum to 1.
    pub fraction: f64,
    /// Percentage in tenths, rounded half-up.
    pub percent_tenths: u64,
}

impl SystemShare {
    pub fn percent_display(&self) -> String {
        format_tenths(self.percent_tenths)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceSummary {
    pub total: u64,
    /// Ordered by wins (descending), then system id.
    pub shares: Vec<SystemShare>,
}

pub fn preference_summary(records: &[PreferenceRecord]) -> Result<PreferenceSummary, EvalError> {
    let first = records.first().ok_or(EvalError::EmptyInput)?;
    let systems: BTreeSet<&String> = first.systems_in_set.iter().collect();
    let mut wins: BTreeMap<&str, u64> = systems.iter().map(|s| (s.as_str(), 0)).collect();
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|reason| EvalError::InvalidRecord {
            line: i + 1,
            reason,
        })?;
        if r.systems_in_set.iter().collect::<BTreeSet<_>>() != systems {
            return Err(EvalError::MixedSystemSets(r.set_id.clone()));
        }
        *wins.get_mut(r.chosen_system.as_str()).expect("validated") += 1;
    }
    let total = records.len() as u64;
    let mut shares: Vec<SystemShare> = wins
        .into_iter()
        .map(|(system, w)| SystemShare {
            system_id: system.into(),
            wins: w,
            fraction: w as f64 / total as f64,
            percent_tenths: tenths_half_up(100 * w, total),
        })
        .collect();
    shares.sort_by(|x, y| {
        y.wins
            .cmp(&x.wins)
            .then_with(|| x.system_id.cmp(&y.system_id))
    });
    Ok(PreferenceSummary { total, shares })
}

/// Groups records by the style of their set, sorted by style name.
pub fn style_breakdown(
    records: &[PreferenceRecord],
    style_of_set: &HashMap<String, String>,
) -> Result<Vec<(String, PreferenceSummary)>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut groups: BTreeMap<&str, Vec<PreferenceRecord>> = BTreeMap::new();
    for r in records {
        let style = style_of_set
            .get(&r.set_id)
            .ok_or_else(|| EvalError::UnlabeledSet(r.set_id.clone()))?;
        groups.entry(style).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|(style, recs)| Ok((style.to_string(), preference_summary(&recs)?)))
        .collect()
}

fn data_rows<'a>(
    text: &'a str,
    header: &[&str],
) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)> + 'a, EvalError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (line, head) = lines.next().ok_or(EvalError::EmptyInput)?;
    let got: Vec<&str> = head.split('\t').map(str::trim).collect();
    if got != header {
        return Err(EvalError::InvalidRecord {
            line,
            reason: format!("expected header '{}'", header.join("\\t")),
        });
    }
    let width = header.len();
    Ok(lines.map(move |(line, l)| {
        let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
        (
            line,
            if fields.len() == width {
                fields
            } else {
                Vec::new()
            },
        )
    }))
}

fn bad_width(line: usize, width: usize) -> EvalError {
    EvalError::InvalidRecord {
        line,
        reason: format!("expected {width} tab-separated fields"),
    }
}

pub fn parse_ratings(text: &str) -> Result<Vec<RatingRecord>, EvalError> {
    data_rows(text, &RATINGS_HEADER)?
        .map(|(line, f)| {
            if f.is_empty() {
                return Err(bad_width(line, RATINGS_HEADER.len()));
            }
            let score = match f[3].parse::<u8>() {
                Ok(s @ 1..=5) => s,
                _ => {
                    return Err(EvalError::InvalidRecord {
                        line,
                        reason: format!("score must be an integer 1..5, got '{}'", f[3]),
                    })
                }
            };
            if f[..3].iter().any(|s| s.is_empty()) {
                return Err(EvalError::InvalidRecord {
                    line,
                    reason: "empty id".into(),
                });
            }
            Ok(RatingRecord {
                stimulus_id: f[0].into(),
                system_id: f[1].into(),
                rater_id: f[2].into(),
                score,
            })
        })
        .collect()
}

/// `systems_in_set` is a comma-separated list.
pub fn parse_preferences(text: &str) -> Result<Vec<PreferenceRecord>, EvalError> {
    data_rows(text, &PREFERENCES_HEADER)?
        .map(|(line, f)| {
            if f.is_empty() {
                return Err(bad_width(line, PREFERENCES_HEADER.len()));
            }
            let record = PreferenceRecord {
                set_id: f[0].into(),
                rater_id: f[1].into(),
                chosen_system: f[2].into(),
                systems_in_set: f[3].split(',').map(|s| s.trim().to_string()).collect(),
            };
            record
                .validate()
                .map_err(|reason| EvalError::InvalidRecord { line, reason })?;
            Ok(record)
        })
        .collect()
}

pub fn parse_styles(text: &str) -> Result<HashMap<String, String>, EvalError> {
    let mut map = HashMap::new();
    for (line, f) in data_rows(text, &STYLES_HEADER)? {
        if f.is_empty() {
            return Err(bad_width(line, STYLES_HEADER.len()));
        }
        if map.insert(f[0].to_string(), f[1].to_string()).is_some() {
            return Err(EvalError::InvalidRecord {
                line,
                reason: format!("set '{}' labelled twice", f[0]),
            });
        }
    }
    Ok(map)
}

pub fn render_mos(summaries: &[MosSummary]) -> String {
    let mut out = String::new();
    for s in summaries {
        let _ = writeln!(
            out,
            "system\t{}\tn\t{}\tmean\t{}\tsd\t{}\tci_halfwidth\t{}\tconfidence\t{}\tdisplay\t{}",
            s.system_id,
            s.n,
            s.mean,
            s.sd,
            s.ci_halfwidth,
            s.confidence,
            s.display()
        );
    }
    out
}

pub fn render_t_test(a: &str, b: &str, test: &PairedTTest) -> String {
    let flag = match test.flag {
        None => "none",
        Some(TTestFlag::AllZeroDifferences) => "all_zero_differences",
        Some(TTestFlag::ZeroVariance) => "zero_variance",
    };
    format!(
        "paired_t_test\t{a}-{b}\tt\t{}\tp\t{}\tdf\t{}\tmean_difference\t{}\tflag\t{flag}\n",
        test.t, test.p, test.df, test.mean_difference
    )
}

pub fn render_preferences(summary: &PreferenceSummary, prefix: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{prefix}total\t{}", summary.total);
    for s in &summary.shares {
        let _ = writeln!(
            out,
            "{prefix}system\t{}\twins\t{}\tfraction\t{}\tpercent\t{}",
            s.system_id,
            s.wins,
            s.fraction,
            s.percent_display()
        );
    }
    out
}

pub fn render_styles(breakdown: &[(String, PreferenceSummary)]) -> String {
    breakdown
        .iter()
        .map(|(style, summary)| render_preferences(summary, &format!("style\t{style}\t")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rating(stim: &str, sys: &str, rater: &str, score: u8) -> RatingRecord {
        RatingRecord {
            stimulus_id: stim.into(),
            system_id: sys.into(),
            rater_id: rater.into(),
            score,
        }
    }

    fn pref(set: &str, chosen: &str) -> PreferenceRecord {
        PreferenceRecord {
            set_id: set.into(),
            rater_id: "r".into(),
            chosen_system: chosen.into(),
            systems_in_set: vec!["A".into(), "B".into(), "C".into()],
        }
    }

    #[test]
    fn constant_scores_have_zero_halfwidth() {
        let recs: Vec<_> = (0..4)
            .map(|i| rating(&i.to_string(), "x", "r", 3))
            .collect();
        let s = &mos_summary(&recs, 0.95).unwrap()[0];
        assert_eq!((s.mean, s.ci_halfwidth, s.n), (3.0, 0.0, 4));
        assert_eq!(s.display(), "3.0±0.0");
    }

    #[test]
    fn single_rating_is_insufficient() {
        let err = mos_summary(&[rating("s", "x", "r", 4)], 0.95).unwrap_err();
        assert_eq!(
            err,
            EvalError::InsufficientData {
                system: "x".into(),
                n: 1
            }
        );
        assert_eq!(mos_summary(&[], 0.95).unwrap_err(), EvalError::EmptyInput);
    }

    #[test]
    fn tenths_rounding_is_half_up() {
        assert_eq!(tenths_half_up(1, 20), 1); // 0.05
        assert_eq!(tenths_half_up(1, 40), 0); // 0.025
        assert_eq!(format_tenths(tenths_half_up(100 * 288, 560)), "51.4");
        assert_eq!(format_tenths(tenths_half_up(100 * 99, 560)), "17.7");
    }

    #[test]
    fn identical_pairs() {
        let t = paired_t_test_scores(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            (t.t, t.p, t.flag),
            (0.0, 1.0, Some(TTestFlag::AllZeroDifferences))
        );
        let t = paired_t_test_scores(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
        assert_eq!((t.p, t.flag), (0.0, Some(TTestFlag::ZeroVariance)));
        assert_eq!(
            paired_t_test_scores(&[1.0], &[2.0]),
            Err(EvalError::NoPairs(1))
        );
    }

    #[test]
    fn pairing_by_stimulus_and_rater() {
        let a = vec![
            rating("s1", "A", "r1", 4),
            rating("s2", "A", "r1", 5),
            rating("s3", "A", "r9", 5),
        ];
        let b = vec![rating("s2", "B", "r1", 3), rating("s1", "B", "r1", 3)];
        let t = paired_t_test(&a, &b).unwrap();
        assert_eq!(t.df, 1);
        assert_eq!(t.mean_difference, 1.5);
    }

    #[test]
    fn single_preference() {
        let s = preference_summary(&[pref("1", "B")]).unwrap();
        let shown: Vec<_> = s
            .shares
            .iter()
            .map(|x| (x.system_id.as_str(), x.percent_display()))
            .collect();
        assert_eq!(
            shown,
            [
                ("B", "100.0".into()),
                ("A", "0.0".into()),
                ("C", "0.0".into())
            ]
        );
    }

    #[test]
    fn mixed_sets_rejected() {
        let mut other = pref("2", "A");
        other.systems_in_set[2] = "D".into();
        assert_eq!(
            preference_summary(&[pref("1", "A"), other]),
            Err(EvalError::MixedSystemSets("2".into()))
        );
        assert_eq!(preference_summary(&[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn unlabeled_set() {
        let styles = HashMap::from([("1".to_string(), "happy".to_string())]);
        assert_eq!(
            style_breakdown(&[pref("1", "A"), pref("2", "B")], &styles),
            Err(EvalError::UnlabeledSet("2".into()))
        );
    }

    #[test]
    fn rating_file_errors_carry_lines() {
        let text = "stimulus_id\tsystem_id\trater_id\tscore\ns1\tA\tr1\t4\n\ns2\tA\tr1\t6\n";
        assert!(matches!(
            parse_ratings(text),
            Err(EvalError::InvalidRecord { line: 4, .. })
        ));
        assert_eq!(parse_ratings(""), Err(EvalError::EmptyInput));
        assert!(matches!(
            parse_ratings("a\tb\n"),
            Err(EvalError::InvalidRecord { line: 1, .. })
        ));
    }

    #[test]
    fn preference_file_round() {
        let text = "set_id\trater_id\tchosen_system\tsystems_in_set\n1\tr1\tB\tA,B,C\n";
        assert_eq!(
            parse_preferences(text).unwrap(),
            vec![PreferenceRecord {
                rater_id: "r1".into(),
                ..pref("1", "B")
            }]
        );
        let bad = "set_id\trater_id\tchosen_system\tsystems_in_set\n1\tr1\tZ\tA,B,C\n";
        assert!(matches!(
            parse_preferences(bad),
            Err(EvalError::InvalidRecord { line: 2, .. })
        ));
    }
}
