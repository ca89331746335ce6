use std::collections::BTreeSet;

use proptest::prelude::*;

use rarelex::augment::{augment_text, strip_annotations};
use rarelex::dataset::{Dataset, Example, Label, Split, Task};
use rarelex::evalstats::{paired_t_test, pearson, student_t_cdf};
use rarelex::fewshot::{sample_fewshot, SamplePlan};
use rarelex::freqcount::{fold, tokenize, FrequencyTable};
use rarelex::lexicon::normalize_gloss;
use rarelex::promptfmt::{prediction_to_score, render_prompt, score_to_target, PromptTemplate, MASK};
use rarelex::selector::{MapEntry, ParaphraseMap};

fn words(s: &str) -> Vec<String> {
    tokenize(s).into_iter().map(|t| t.into_string()).collect()
}

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9éÖ'’ .,;:()\\-]{0,60}"
}

fn map() -> ParaphraseMap {
    let rows = [
        ("afebrile", "having no fever", false),
        ("dyspnea", "difficult breathing", false),
        ("CHF", "congestive heart failure", true),
        ("MI", "heart attack", true),
        ("fever", "raised body temperature", false),
    ];
    ParaphraseMap::from_entries(rows.iter().map(|&(w, p, a)| {
        (
            w.to_string(),
            MapEntry {
                paraphrase: p.to_string(),
                is_abbreviation: a,
            },
        )
    }))
}

fn sentence() -> impl Strategy<Value = String> {
    let vocab = prop::sample::select(vec![
        "afebrile", "Afebrile", "AFEBRILE", "dyspnea", "CHF", "chf", "MI", "mi", "fever", "the",
        "patient", "was", "and", "(", ")", ",", ".", "-", "x-ray", "non-afebrile", "CHF's",
        "(having", "no", "fever)",
    ]);
    prop::collection::vec((vocab, prop::sample::select(vec![" ", "", "  "])), 0..25).prop_map(|parts| {
        parts.into_iter().fold(String::new(), |mut s, (w, sep)| {
            s.push_str(w);
            s.push_str(sep);
            s
        })
    })
}

fn floats(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn tokens_are_folded(s in text()) {
        for w in words(&s) {
            prop_assert_eq!(fold(&w), w);
        }
    }

    #[test]
    fn tokenize_ignores_case(s in "[a-zA-Z0-9 .,'\\-]{0,60}") {
        prop_assert_eq!(words(&s.to_uppercase()), words(&s.to_lowercase()));
    }

    #[test]
    fn tokenize_splits_on_space(a in text(), b in text()) {
        let mut expected = words(&a);
        expected.extend(words(&b));
        prop_assert_eq!(words(&format!("{a} {b}")), expected);
    }

    #[test]
    fn merge_matches_whole(lines in prop::collection::vec(text(), 0..40), cut in 0usize..40) {
        let cut = cut.min(lines.len());
        let whole = FrequencyTable::from_text("w", &lines.join("\n"));
        let left = FrequencyTable::from_text("l", &lines[..cut].join("\n"));
        let right = FrequencyTable::from_text("r", &lines[cut..].join("\n"));
        let merged = right.merge(left);
        prop_assert_eq!(merged.total_tokens(), whole.total_tokens());
        prop_assert_eq!(merged.sorted(), whole.sorted());
    }

    #[test]
    fn table_tsv_round_trip(lines in prop::collection::vec(text(), 1..20)) {
        let table = FrequencyTable::from_text("corpus", &lines.join("\n"));
        let mut buf = Vec::new();
        table.write_tsv(&mut buf).unwrap();
        let back = FrequencyTable::read_tsv(buf.as_slice(), "mem").unwrap();
        prop_assert_eq!(back.sorted(), table.sorted());
        prop_assert_eq!(back.total_tokens(), table.total_tokens());
    }

    #[test]
    fn normalize_gloss_is_idempotent(s in "[a-z \\[\\]|.]{0,40}") {
        if let Ok(n) = normalize_gloss(&s) {
            prop_assert_eq!(normalize_gloss(&n).unwrap(), n);
        }
    }

    #[test]
    fn augment_round_trips(s in sentence()) {
        let m = map();
        let (aug, spans) = augment_text(&s, &m);
        prop_assert_eq!(strip_annotations(&aug, &spans).unwrap(), s.clone());
        let (again, _) = augment_text(&aug, &m);
        prop_assert_eq!(again, aug);
        for span in &spans {
            prop_assert!(s[span.offset..].starts_with(&span.matched_surface));
        }
    }

    #[test]
    fn pearson_symmetric_and_affine(x in floats(3..30), y in floats(3..30), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let n = x.len().min(y.len());
        let (x, y) = (&x[..n], &y[..n]);
        if let Ok(r) = pearson(x, y) {
            prop_assert!((r - pearson(y, x).unwrap()).abs() < 1e-12);
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((r - pearson(&scaled, y).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn t_test_is_antisymmetric(a in floats(2..20), b in floats(2..20)) {
        let n = a.len().min(b.len());
        let ab = paired_t_test(&a[..n], &b[..n]).unwrap();
        let ba = paired_t_test(&b[..n], &a[..n]).unwrap();
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert!(ab.t == -ba.t || (ab.t.is_nan() && ba.t.is_nan()));
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn t_cdf_monotone_and_symmetric(t in -50.0f64..50.0, dt in 0.0f64..5.0, df in 1.0f64..200.0) {
        let lo = student_t_cdf(t, df);
        prop_assert!(student_t_cdf(t + dt, df) >= lo);
        prop_assert!((student_t_cdf(-t, df) - (1.0 - lo)).abs() < 1e-12);
    }

    #[test]
    fn score_round_trip(s in 0.0f64..=5.0) {
        let (y, n) = score_to_target(s).unwrap();
        prop_assert!((prediction_to_score(y, n).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn mask_offset_points_at_mask(s1 in "[a-zA-Z ]{1,30}[a-z]", s2 in "[a-zA-Z][a-zA-Z .]{0,30}") {
        let ex = Example::new("x", s1.clone(), s2.clone(), Label::Class("neutral".into()), Split::Test);
        let p = render_prompt(&ex, &PromptTemplate::mednli()).unwrap();
        prop_assert_eq!(&p.rendered[p.mask_offset..p.mask_offset + MASK.len()], MASK);
        prop_assert_eq!(p.rendered, format!("{s1}. [MASK]. {s2}"));
    }

    #[test]
    fn medsts_samples_are_disjoint(n in 32usize..120, k in 1usize..16, seed in any::<u64>()) {
        let examples = (0..n)
            .map(|i| Example::new(format!("e{i}"), "a", "b", Label::Score((i % 11) as f64 / 2.0), Split::Train))
            .collect();
        let ds = Dataset::new("sts", examples).unwrap();
        let plan = SamplePlan::new(Task::Medsts, k, vec![seed]).unwrap();
        let s = sample_fewshot(&ds, &plan, seed).unwrap();
        let train: BTreeSet<&str> = s.train_ids().into_iter().collect();
        prop_assert_eq!(train.len(), k);
        prop_assert!(s.dev_ids().iter().all(|id| !train.contains(id)));
    }
}
