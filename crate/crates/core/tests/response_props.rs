mod common;

use common::*;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use prosody_core::features::tokenize_words;
use prosody_core::response::{parse_response, serialize_suggestion, DiagnosticKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn text_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(
        (
            prop::sample::select(LEXICON.to_vec()),
            prop::sample::select(vec!["", ",", "!"]),
        ),
        1..12,
    )
    .prop_map(|ws| {
        ws.into_iter()
            .map(|(w, p)| format!("{w}{p}"))
            .collect::<Vec<_>>()
            .join(" ")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn parse_inverts_serialize(
        (text, suggestion) in text_strategy().prop_flat_map(|t| {
            let s = suggestion_for(&t, -5.0..=5.0, 0.0..=5.0);
            (Just(t), s)
        })
    ) {
        let words = tokenize_words(&text);
        let rendered = serialize_suggestion(&suggestion, &words).unwrap();
        let parsed = parse_response(&rendered, &words).unwrap();
        prop_assert!(parsed.warnings.is_empty());
        prop_assert_eq!(parsed.suggestion, suggestion);
    }
}

#[derive(Debug, Clone, Copy)]
enum Mutation {
    SkipWord,
    RenameWord,
    ExtraWord,
    DuplicateIndex,
    NonNumeric,
}

/// Applies `m` to a valid response; returns the text and the diagnostic the
/// parser must report.
fn mutate(rendered: &str, m: Mutation, rng: &mut ChaCha8Rng) -> (String, DiagnosticKind, usize) {
    let mut lines: Vec<String> = rendered.lines().map(String::from).collect();
    let word_lines: Vec<usize> = (0..lines.len())
        .filter(|&i| lines[i].starts_with("WORD "))
        .collect();
    let k = rng.random_range(0..word_lines.len());
    let at = word_lines[k];
    let expected = match m {
        Mutation::SkipWord => {
            lines.remove(at);
            (DiagnosticKind::WordCountMismatch, at + 1)
        }
        Mutation::RenameWord => {
            let (head, values) = lines[at].split_once(':').unwrap();
            let prefix: Vec<&str> = head.splitn(3, ' ').collect();
            lines[at] = format!("{} {} zzyzx:{values}", prefix[0], prefix[1]);
            (DiagnosticKind::WordIdentityMismatch, at + 1)
        }
        Mutation::ExtraWord => {
            lines.push(format!(
                "WORD {} zzyzx: duration=0 pitch=0 energy=0",
                word_lines.len()
            ));
            (DiagnosticKind::WordCountMismatch, lines.len())
        }
        Mutation::DuplicateIndex => {
            let copy = lines[at].clone();
            lines.insert(at + 1, copy);
            (DiagnosticKind::DuplicateWordIndex, at + 2)
        }
        Mutation::NonNumeric => {
            let (head, _) = lines[at].split_once(" pitch=").unwrap();
            let tail = lines[at].split_once(" energy=").unwrap().1.to_string();
            lines[at] = format!("{head} pitch=high energy={tail}");
            (DiagnosticKind::ValueNotNumeric, at + 1)
        }
    };
    (lines.join("\n") + "\n", expected.0, expected.1)
}

#[test]
fn mutation_corpus_is_rejected_with_line_numbers() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let kinds = [
        Mutation::SkipWord,
        Mutation::RenameWord,
        Mutation::ExtraWord,
        Mutation::DuplicateIndex,
        Mutation::NonNumeric,
    ];
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let mut rejected = 0;
    for case in 0..200 {
        let text = text_strategy().new_tree(&mut runner).unwrap().current();
        let suggestion = suggestion_for(&text, -5.0..=5.0, 0.0..=5.0)
            .new_tree(&mut runner)
            .unwrap()
            .current();
        let words = tokenize_words(&text);
        let rendered = serialize_suggestion(&suggestion, &words).unwrap();
        let (bad, kind, line) = mutate(&rendered, kinds[case % kinds.len()], &mut rng);
        let failure = parse_response(&bad, &words).expect_err(&bad);
        assert!(
            failure
                .diagnostics
                .iter()
                .any(|d| d.kind == kind && d.line_number == line),
            "case {case}: expected {kind:?} at line {line}, got {:?}\n{bad}",
            failure.diagnostics
        );
        rejected += 1;
    }
    assert_eq!(rejected, 200);
}
