use proptest::prelude::*;
use zotrag_core::chunker::{split_text, ChunkParams};
use zotrag_core::testkit::check_chunk_invariants;

fn text_strategy() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        4 => "[a-zA-Z]{1,12}",
        2 => Just(" ".to_string()),
        1 => Just("\n".to_string()),
        1 => Just("\n\n".to_string()),
        1 => "[ \t]{2,4}",
        1 => "[éü数据β]{1,5}",
        1 => "[a-z]{40,90}",
    ];
    proptest::collection::vec(piece, 0..200).prop_map(|v| v.concat())
}

fn params_strategy() -> impl Strategy<Value = ChunkParams> {
    let seps = prop_oneof![
        Just(vec!["\n\n", "\n", " ", ""]),
        Just(vec![" ", ""]),
        Just(vec!["\n", ""]),
        Just(vec![""]),
    ];
    (1usize..300, 0.0f64..1.0, seps).prop_map(|(size, frac, seps)| {
        let overlap = ((size as f64) * frac) as usize % size;
        ChunkParams::new(size, overlap)
            .unwrap()
            .with_separators(seps.into_iter().map(String::from).collect())
            .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn invariants_hold(text in text_strategy(), params in params_strategy()) {
        let spans = split_text(&text, &params).unwrap();
        if let Err(e) = check_chunk_invariants(&text, &params, &spans) {
            return Err(TestCaseError::fail(e));
        }
        prop_assert_eq!(spans.is_empty(), text.trim().is_empty());
    }

    #[test]
    fn deterministic(text in text_strategy(), params in params_strategy()) {
        prop_assert_eq!(split_text(&text, &params).unwrap(), split_text(&text, &params).unwrap());
    }

    #[test]
    fn halving_size_never_reduces_count(text in text_strategy(), size in 2usize..400, overlap_frac in 0.0f64..0.5) {
        let half = size / 2;
        let overlap = ((half as f64) * overlap_frac) as usize;
        prop_assume!(overlap < half);
        let big = ChunkParams::new(size, overlap).unwrap();
        let small = ChunkParams::new(half, overlap).unwrap();
        let n_big = split_text(&text, &big).unwrap().len();
        let n_small = split_text(&text, &small).unwrap().len();
        prop_assert!(n_small >= n_big, "size {size}: {n_big} chunks, size {half}: {n_small} chunks");
    }
}

#[test]
fn whitespace_only_is_empty() {
    let params = ChunkParams::default();
    assert!(split_text("   \n\n  ", &params).unwrap().is_empty());
    assert!(split_text("", &params).unwrap().is_empty());
}

#[test]
fn invalid_params_rejected() {
    assert!(ChunkParams::new(10, 10).is_err());
    assert!(ChunkParams::new(0, 0).is_err());
    assert!(ChunkParams::new(10, 2).unwrap().with_separators(vec![" ".into()]).is_err());
}
