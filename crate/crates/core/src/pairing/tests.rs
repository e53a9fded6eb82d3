use proptest::prelude::*;

use super::*;

fn set(domain: DomainTag, rows: &[Vec<f64>]) -> EmbeddingSet {
    let refs = (0..rows.len())
        .map(|i| WindowRef {
            trajectory_id: format!("t{i}"),
            start_index: i,
        })
        .collect();
    EmbeddingSet::new(domain, refs, Matrix::from_rows(rows).unwrap()).unwrap()
}

#[test]
fn cosine_examples() {
    let c = set(DomainTag::Source, &[vec![1.0, 2.0, 2.0], vec![1.0, 0.0, 0.0]]);
    let s = set(DomainTag::Target, &[vec![2.0, 1.0, 2.0], vec![0.0, 3.0, 0.0], vec![1.0, 2.0, 2.0]]);
    let m = similarity_matrix(&c, &s, Exec::Sequential).unwrap();
    assert!((m.get(0, 0) - 8.0 / 9.0).abs() < 1e-15);
    assert_eq!(m.get(1, 1), 0.0);
    assert!((m.get(0, 2) - 1.0).abs() < 1e-15);
}

#[test]
fn zero_norm_names_the_window() {
    let c = set(DomainTag::Source, &[vec![1.0, 0.0], vec![0.0, 0.0]]);
    let s = set(DomainTag::Target, &[vec![1.0, 1.0]]);
    let err = similarity_matrix(&c, &s, Exec::Sequential).unwrap_err().to_string();
    assert!(err.contains("window 1") && err.contains("t1"), "{err}");
}

#[test]
fn duplicates_tie_to_lowest_index() {
    let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let p = match_sets(&set(DomainTag::Source, &rows), &set(DomainTag::Target, &rows), Exec::Sequential).unwrap();
    assert_eq!(p.matches(), vec![0, 1, 0]);
}

#[test]
fn single_style_window_covers_everything() {
    let c = set(DomainTag::Source, &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.3]]);
    let s = set(DomainTag::Target, &[vec![0.2, 0.7]]);
    let p = match_sets(&c, &s, Exec::Sequential).unwrap();
    assert_eq!(p.matches(), vec![0, 0, 0]);
    assert_eq!(p.coverage, 1.0);
    assert_eq!(p.histogram(), vec![0, 0, 0, 1]);
}

#[test]
fn empty_sets_are_rejected() {
    let c = set(DomainTag::Source, &[]);
    let s = set(DomainTag::Target, &[vec![1.0]]);
    assert!(match_sets(&c, &s, Exec::Sequential).is_err());
}

#[test]
fn gini_values() {
    assert_eq!(gini(&[]), 0.0);
    assert_eq!(gini(&[3, 3, 3]), 0.0);
    assert!((gini(&[0, 0, 0, 4]) - 0.75).abs() < 1e-15);
    assert!((gini(&[1, 2, 3]) - 2.0 / 9.0).abs() < 1e-15);
}

#[test]
fn export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = set(DomainTag::Source, &[vec![1.0, 0.5], vec![0.1, 1.0], vec![0.9, 0.4]]);
    let s = set(DomainTag::Target, &[vec![1.0, 0.45], vec![0.0, 1.0]]);
    let p = match_sets(&c, &s, Exec::Sequential).unwrap();
    let path = dir.path().join("emb.csv");
    export_embeddings(&path, &c, &s, Some(&p)).unwrap();
    let rows = read_embeddings(&path).unwrap();
    assert_eq!(rows.len(), c.len() + s.len());
    let counts: Vec<usize> = rows.iter().filter(|r| r.domain == DomainTag::Target).map(|r| r.match_count).collect();
    assert_eq!(counts, p.match_counts);
    let matched: Vec<usize> = rows.iter().filter_map(|r| r.matched).collect();
    assert_eq!(matched, p.matches());
    assert_eq!(rows[1].embedding, vec![0.1, 1.0]);

    let empty = dir.path().join("empty.csv");
    export_embeddings(&empty, &set(DomainTag::Source, &[]), &set(DomainTag::Target, &[]), None).unwrap();
    assert!(read_embeddings(&empty).unwrap().is_empty());
    assert_eq!(std::fs::read_to_string(&empty).unwrap().lines().count(), 1);
}

#[test]
fn pairing_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = set(DomainTag::Source, &[vec![1.0, 0.5], vec![0.1, 1.0]]);
    let p = match_sets(&c, &c, Exec::Sequential).unwrap();
    let path = dir.path().join("pairing.json");
    p.save(&path).unwrap();
    assert_eq!(PairingResult::load(&path).unwrap(), p);
}

fn embeddings(max_rows: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..max_rows)
        .prop_filter("nonzero rows", |rows| rows.iter().all(|r| r.iter().any(|v| v.abs() > 1e-3)))
}

proptest! {
    #[test]
    fn identical_sets_match_themselves(rows in embeddings(12)) {
        let a = set(DomainTag::Source, &rows);
        let m = similarity_matrix(&a, &a, Exec::Sequential).unwrap();
        let p = match_from_similarity(&m).unwrap();
        for i in 0..rows.len() {
            prop_assert!((m.get(i, i) - 1.0).abs() < 1e-12);
            let first = (0..rows.len()).find(|&j| m.get(i, j) >= m.get(i, i)).unwrap();
            prop_assert_eq!(p.pairs[i].style_idx, first);
        }
    }

    #[test]
    fn similarity_is_bounded_and_counts_sum(c in embeddings(10), s in embeddings(10)) {
        let p = match_sets(&set(DomainTag::Source, &c), &set(DomainTag::Target, &s), Exec::Parallel).unwrap();
        prop_assert_eq!(p.match_counts.iter().sum::<usize>(), c.len());
        prop_assert_eq!(p.histogram().iter().enumerate().map(|(k, n)| k * n).sum::<usize>(), c.len());
        for pr in &p.pairs {
            prop_assert!((-1.0..=1.0).contains(&pr.similarity));
            prop_assert!(pr.style_idx < s.len());
        }
    }

    #[test]
    fn positive_scaling_preserves_matches(c in embeddings(10), s in embeddings(10), k in 0.01f64..100.0, row in 0usize..10) {
        let base = match_sets(&set(DomainTag::Source, &c), &set(DomainTag::Target, &s), Exec::Sequential).unwrap();
        let mut s2 = s.clone();
        let r = row % s2.len();
        s2[r].iter_mut().for_each(|v| *v *= k);
        let mut c2 = c.clone();
        c2.iter_mut().flatten().for_each(|v| *v *= k);
        let scaled = match_sets(&set(DomainTag::Source, &c2), &set(DomainTag::Target, &s2), Exec::Sequential).unwrap();
        for (a, b) in base.pairs.iter().zip(&scaled.pairs) {
            prop_assert!((a.similarity - b.similarity).abs() < 1e-12);
        }
        // Rescaling can only reorder exact ties, which random floats avoid.
        prop_assert_eq!(base.matches(), scaled.matches());
    }

    #[test]
    fn permuting_styles_permutes_matches(c in embeddings(8), s in embeddings(8), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..s.len()).collect();
        perm.shuffle(&mut crate::rng::Rng::seed_from_u64(seed));
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&j| s[j].clone()).collect();
        let cs = set(DomainTag::Source, &c);
        let a = match_sets(&cs, &set(DomainTag::Target, &s), Exec::Sequential).unwrap();
        let b = match_sets(&cs, &set(DomainTag::Target, &shuffled), Exec::Sequential).unwrap();
        for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
            prop_assert_eq!(pa.similarity, pb.similarity);
            prop_assert_eq!(s[pa.style_idx].clone(), shuffled[pb.style_idx].clone());
        }
    }
}
