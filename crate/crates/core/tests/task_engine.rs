mod common;

use std::io::Cursor;

use lft::task::{
    generate_synthetic_domain, load_domain, read_binary, read_csv, sample_episode, save_domain, split_classes, write_binary,
    write_csv, ClassData, ClassPool, DatasetFormat, Domain, Split, SyntheticDomainSpec,
};
use lft::{Error, RngStream};
use proptest::prelude::*;

/// Domain whose rows are `[class_id, item]`, so sampled rows identify themselves.
fn labelled_domain(classes: usize, per_class: usize) -> Domain {
    let cs = (0..classes)
        .map(|c| ClassData::new(c as u32, (0..per_class).flat_map(|i| [c as f64, i as f64]).collect()))
        .collect();
    Domain::new("labelled", 2, cs).unwrap()
}

#[test]
fn generated_shape_and_determinism() {
    let spec = SyntheticDomainSpec {
        master_seed: 3,
        domain_seed: 4,
        ..Default::default()
    };
    let a = generate_synthetic_domain(&spec).unwrap();
    let b = generate_synthetic_domain(&spec).unwrap();
    assert_eq!(a.num_classes(), 20);
    assert_eq!(a.dim(), 16);
    assert!((0..20).all(|c| a.class_len(c) == 50));
    assert_eq!(a, b);
    assert!(a.classes().iter().flat_map(|c| c.samples()).all(|v| v.is_finite()));
}

#[test]
fn invalid_spec_rejected() {
    let spec = SyntheticDomainSpec {
        latent_dim: 20,
        dim: 16,
        ..Default::default()
    };
    assert!(generate_synthetic_domain(&spec).is_err());
}

fn class_mean(d: &Domain, c: usize) -> Vec<f64> {
    let n = d.class_len(c) as f64;
    let mut m = vec![0.0; d.dim()];
    for i in 0..d.class_len(c) {
        for (a, v) in m.iter_mut().zip(d.sample(c, i)) {
            *a += v / n;
        }
    }
    m
}

#[test]
fn domains_are_shifted_relative_to_class_spread() {
    let gen = |seed| {
        generate_synthetic_domain(&SyntheticDomainSpec {
            master_seed: 9,
            domain_seed: seed,
            per_class: 1000,
            ..Default::default()
        })
        .unwrap()
    };
    let (d1, d2) = (gen(1), gen(2));
    let k = d1.num_classes();
    let mut between = 0.0;
    let mut within = 0.0;
    for c in 0..k {
        let (m1, m2) = (class_mean(&d1, c), class_mean(&d2, c));
        between += m1.iter().zip(&m2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / k as f64;
        // per-coordinate std, pooled over the feature dimensions
        let n = d1.class_len(c) as f64;
        let var: f64 = (0..d1.class_len(c))
            .map(|i| d1.sample(c, i).iter().zip(&m1).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / ((n - 1.0) * d1.dim() as f64);
        within += var.sqrt() / k as f64;
    }
    assert!(between > 3.0 * within, "between {between}, within {within}");
}

#[test]
fn csv_example_and_errors() {
    let text = "class_id,f0,f1\n0,1.5,2\n0,-1,0.25\n1,3,4\n";
    let d = read_csv(Cursor::new(text), "toy".into()).unwrap();
    assert_eq!(d.num_classes(), 2);
    assert_eq!(d.dim(), 2);
    assert_eq!(d.class_len(0), 2);
    assert_eq!(d.sample(0, 1), &[-1.0, 0.25]);

    let bad = "class_id,f0,f1\n0,1,2\n1,1,2,3\n";
    match read_csv(Cursor::new(bad), "bad".into()) {
        Err(Error::Parse { line, detail }) => {
            assert_eq!(line, 3);
            assert!(detail.contains("row 3"), "{detail}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    assert!(matches!(read_csv(Cursor::new("x,f0\n"), "h".into()), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(read_csv(Cursor::new("class_id,f0\nz,1\n"), "h".into()), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn serialization_round_trips_exactly() {
    let d = generate_synthetic_domain(&SyntheticDomainSpec::default()).unwrap();
    let mut bin = Vec::new();
    write_binary(&d, &mut bin).unwrap();
    let back = read_binary(Cursor::new(&bin), d.name.clone()).unwrap();
    assert_eq!(back, d);
    assert!(d
        .classes()
        .iter()
        .zip(back.classes())
        .all(|(a, b)| a.samples().iter().zip(b.samples()).all(|(x, y)| x.to_bits() == y.to_bits())));

    let mut csv = Vec::new();
    write_csv(&d, &mut csv).unwrap();
    assert_eq!(read_csv(Cursor::new(&csv), d.name.clone()).unwrap(), d);

    let dir = tempfile::tempdir().unwrap();
    for (file, fmt) in [("dom.fsds", DatasetFormat::Binary), ("dom.csv", DatasetFormat::Csv)] {
        let p = dir.path().join(file);
        save_domain(&d, &p, fmt).unwrap();
        assert_eq!(DatasetFormat::from_path(&p), fmt);
        let l = load_domain(&p, fmt).unwrap();
        assert_eq!(l.name, "dom");
        assert!(l.same_content(&d));
    }
}

#[test]
fn binary_header_errors() {
    let d = labelled_domain(2, 3);
    let mut bin = Vec::new();
    write_binary(&d, &mut bin).unwrap();
    let mut bad = bin.clone();
    bad[..4].copy_from_slice(b"NOPE");
    assert!(matches!(read_binary(Cursor::new(&bad), "x".into()), Err(Error::Format(_))));
    let mut v = bin.clone();
    v[4] = 7;
    assert!(read_binary(Cursor::new(&v), "x".into()).is_err());
    let cut = &bin[..bin.len() - 5];
    assert!(matches!(read_binary(Cursor::new(cut), "x".into()), Err(Error::Length(_))));
}

#[test]
fn episode_sizes_and_labels() {
    let d = labelled_domain(20, 30);
    let ep = sample_episode(&d, ClassPool::All, 5, 1, 16, &mut RngStream::new(1)).unwrap();
    assert_eq!(ep.support_x.shape(), &[5, 2]);
    assert_eq!(ep.query_x.shape(), &[80, 2]);
    for k in 0..5 {
        assert_eq!(ep.support_y.iter().filter(|&&y| y == k).count(), 1);
        assert_eq!(ep.query_y.iter().filter(|&&y| y == k).count(), 16);
    }
    assert_eq!(ep.joint_batch().shape(), &[85, 2]);
}

#[test]
fn capacity_errors() {
    let d = labelled_domain(3, 30);
    assert!(matches!(
        sample_episode(&d, ClassPool::All, 5, 1, 16, &mut RngStream::new(1)),
        Err(Error::Capacity(_))
    ));
    let small = labelled_domain(6, 10);
    assert!(matches!(
        sample_episode(&small, ClassPool::All, 5, 5, 16, &mut RngStream::new(1)),
        Err(Error::Capacity(_))
    ));
}

#[test]
fn support_and_query_are_disjoint() {
    let d = labelled_domain(12, 25);
    let mut rng = RngStream::new(5);
    for _ in 0..10_000 {
        let ep = sample_episode(&d, ClassPool::All, 4, 3, 5, &mut rng).unwrap();
        let mut seen = std::collections::HashSet::new();
        for r in 0..ep.support_y.len() {
            let row = ep.support_x.row(r);
            assert_eq!(row[0] as u32, ep.class_ids[ep.support_y[r]]);
            assert!(seen.insert((row[0] as u32, row[1] as u32)));
        }
        for r in 0..ep.query_y.len() {
            let row = ep.query_x.row(r);
            assert_eq!(row[0] as u32, ep.class_ids[ep.query_y[r]]);
            assert!(seen.insert((row[0] as u32, row[1] as u32)));
        }
    }
}

#[test]
fn class_selection_is_uniform() {
    let d = labelled_domain(20, 2);
    let mut rng = RngStream::new(77);
    let mut counts = [0usize; 20];
    const DRAWS: usize = 50_000;
    for _ in 0..DRAWS {
        let ep = sample_episode(&d, ClassPool::All, 5, 1, 1, &mut rng).unwrap();
        for id in ep.class_ids {
            counts[id as usize] += 1;
        }
    }
    for c in counts {
        let freq = c as f64 / DRAWS as f64;
        assert!((freq / 0.25 - 1.0).abs() < 0.05, "{freq}");
    }
}

#[test]
fn split_sizes_and_pools() {
    let d = labelled_domain(20, 20);
    let s = split_classes(&d, (0.5, 0.25, 0.25), &mut RngStream::new(3)).unwrap();
    let count = |sp| s.classes().iter().filter(|c| c.split == Some(sp)).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (10, 5, 5));
    assert!(s.classes().iter().all(|c| c.split.is_some()));
    let again = split_classes(&d, (0.5, 0.25, 0.25), &mut RngStream::new(3)).unwrap();
    assert_eq!(s, again);
    assert_eq!(s.training_pool(), ClassPool::Only(Split::Train));
    assert_eq!(s.evaluation_pool(), ClassPool::Only(Split::Test));
    assert_eq!(d.evaluation_pool(), ClassPool::All);
    let test = s.subset(Split::Test);
    assert_eq!(test.num_classes(), 5);
    let ep = sample_episode(&s, s.evaluation_pool(), 5, 1, 2, &mut RngStream::new(1)).unwrap();
    let test_ids: Vec<u32> = test.classes().iter().map(|c| c.id).collect();
    assert!(ep.class_ids.iter().all(|id| test_ids.contains(id)));
    assert!(matches!(
        split_classes(&d, (0.5, 0.3, 0.3), &mut RngStream::new(1)),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        split_classes(&labelled_domain(4, 2), (0.8, 0.1, 0.1), &mut RngStream::new(1)),
        Err(Error::Capacity(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episodes_are_well_formed(seed in any::<u64>(), way in 2usize..8, shot in 1usize..4, query in 1usize..5) {
        let d = labelled_domain(10, 12);
        let ep = sample_episode(&d, ClassPool::All, way, shot, query, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(ep.support_y.len(), way * shot);
        prop_assert_eq!(ep.query_y.len(), way * query);
        let mut ids = ep.class_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), way);
        let again = sample_episode(&d, ClassPool::All, way, shot, query, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(ep, again);
    }

    #[test]
    fn splits_partition_classes(seed in any::<u64>(), k in 3usize..40) {
        let d = labelled_domain(k, 1);
        let s = split_classes(&d, (0.6, 0.2, 0.2), &mut RngStream::new(seed));
        if let Ok(s) = s {
            let total: usize = [Split::Train, Split::Val, Split::Test]
                .iter()
                .map(|&sp| s.classes().iter().filter(|c| c.split == Some(sp)).count())
                .sum();
            prop_assert_eq!(total, k);
        }
    }
}
