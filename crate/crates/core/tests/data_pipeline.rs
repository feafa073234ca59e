mod common;

use std::io::Write;

use auglstm::data::{
    class_count, encode, load_dataset, load_embeddings, majority_label, split_dataset, synthetic_vocabulary, tokenize,
    write_dataset, SyntheticTask, Truncation, TruncateSide, Vocabulary, UNKNOWN_ID,
};
use auglstm::{Error, Rng};
use common::synthetic;
use proptest::prelude::*;

fn write(contents: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

#[test]
fn loader_reports_exactly_the_bad_lines() {
    let f = write("0\tfine text\nnolabel\n1\tok\n7\tout of range\n\n2\t  \nx\tbad label\n1\tlast one\n");
    match load_dataset(f.path(), 3) {
        Err(Error::Format { errors, .. }) => {
            let lines: Vec<usize> = errors.iter().map(|e| e.line).collect();
            assert_eq!(lines, vec![2, 4, 6, 7]);
        }
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn file_round_trip_through_vocabulary() {
    let data = synthetic(SyntheticTask::LongRangeFlag, 25, 9, 30, 3, 5);
    let vocab = synthetic_vocabulary(30);
    let f = tempfile::NamedTempFile::new().unwrap();
    write_dataset(f.path(), &data, &vocab).unwrap();
    let loaded = load_dataset(f.path(), 3).unwrap();
    let encoded = encode(&loaded, &vocab, None);
    let ids: Vec<_> = encoded.iter().map(|e| (e.token_ids.clone(), e.label)).collect();
    let expected: Vec<_> = data.iter().map(|e| (e.token_ids.clone(), e.label)).collect();
    assert_eq!(ids, expected);
}

#[test]
fn truncation_sides() {
    let f = write("1\ta b c d e\n");
    let ex = load_dataset(f.path(), 2).unwrap();
    let vocab = Vocabulary::build(ex.iter().map(|e| e.tokens.as_slice()), 1);
    let right = encode(&ex, &vocab, Some(Truncation { max_tokens: 2, side: TruncateSide::Right }));
    let left = encode(&ex, &vocab, Some(Truncation { max_tokens: 2, side: TruncateSide::Left }));
    assert_eq!(right[0].token_ids, vocab.encode(&["a", "b"]));
    assert_eq!(left[0].token_ids, vocab.encode(&["d", "e"]));
}

#[test]
fn embeddings_report_every_bad_line_and_fill_known_rows() {
    let vocab = Vocabulary::from(vec!["good".to_string(), "movie".to_string(), "rare".to_string()]);
    let bad = write("good 0.1 0.2\nmovie 0.3\nrare 1 nan\nother x y\n");
    match load_embeddings(bad.path(), &vocab, 2, &mut Rng::new(0, 0)) {
        Err(Error::Format { errors, .. }) => {
            assert_eq!(errors.iter().map(|e| e.line).collect::<Vec<_>>(), vec![2, 3, 4]);
        }
        other => panic!("expected a format error, got {other:?}"),
    }
    let ok = write("good 0.1 0.2\nunseen 9 9\nmovie 0.3 0.4\n");
    let table = load_embeddings(ok.path(), &vocab, 2, &mut Rng::new(0, 0)).unwrap();
    assert_eq!(table.coverage, 2);
    let row = |t: &str| {
        let id = vocab.id(t);
        table.matrix.data()[id * 2..id * 2 + 2].to_vec()
    };
    assert_eq!(row("good"), vec![0.1, 0.2]);
    assert_eq!(row("movie"), vec![0.3, 0.4]);
    assert!(row("rare").iter().all(|v| v.abs() <= 0.08));
}

#[test]
fn splits_partition_the_data() {
    let data: Vec<usize> = (0..50).collect();
    let (a, b) = split_dataset(&data, 30, 20, 4).unwrap();
    let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
    all.sort_unstable();
    assert_eq!(all, data);
    assert_eq!(split_dataset(&data, 30, 20, 4).unwrap(), (a, b));
    assert!(split_dataset(&data, 30, 10, 4).is_err());
}

#[test]
fn synthetic_tasks_are_balanced_and_well_formed() {
    for task in [SyntheticTask::FirstTokenClass, SyntheticTask::MajorityToken, SyntheticTask::LongRangeFlag] {
        let data = synthetic(task, 100, 8, 20, 4, 9);
        assert_eq!(class_count(&data), 4);
        let mut per_class = [0usize; 4];
        for ex in &data {
            per_class[ex.label] += 1;
            assert_eq!(ex.token_ids.len(), 8);
            assert!(ex.token_ids.iter().all(|&t| (2..20).contains(&t)));
            if task == SyntheticTask::MajorityToken {
                assert_eq!(majority_label(&ex.token_ids, 4), Some(ex.label));
            }
            if task == SyntheticTask::FirstTokenClass {
                assert_eq!(ex.token_ids[0], 2 + ex.label);
            }
        }
        assert_eq!(per_class, [25; 4], "{}", task.name());
        assert_eq!(SyntheticTask::parse(task.name()), Some(task));
    }
}

proptest! {
    #[test]
    fn tokenize_is_idempotent_on_rejoined_output(text in "[a-zA-Z .,!?'()]{0,40}") {
        let once = tokenize(&text);
        let again = tokenize(&once.join(" "));
        prop_assert_eq!(&once, &again);
        prop_assert!(once.iter().all(|t| !t.is_empty() && !t.contains(' ')));
    }

    #[test]
    fn vocabulary_survives_serialization(words in prop::collection::vec("[a-z]{1,6}", 0..30)) {
        let seqs = [words.clone()];
        let vocab = Vocabulary::build(seqs.iter().map(|s| s.as_slice()), 1);
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &vocab);
        for w in &words {
            prop_assert!(vocab.contains(w));
            prop_assert_eq!(vocab.token(vocab.id(w)), Some(w.as_str()));
        }
        prop_assert_eq!(vocab.id("never-seen-token"), UNKNOWN_ID);
    }
}
