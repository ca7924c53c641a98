use std::io::Write;

use ldpopt::objectives::{derive_profiles, ingest_csv, IngestOptions, Link, ObjectiveSpec};
use ldpopt::{Error, Matrix, ObjectiveKind};
use nalgebra::DMatrix;
use proptest::prelude::*;

const KINDS: [ObjectiveKind; 5] = [
    ObjectiveKind::LogisticL2,
    ObjectiveKind::RidgeQuadratic,
    ObjectiveKind::GeneralizedLinear(Link::Logistic),
    ObjectiveKind::GeneralizedLinear(Link::Squared),
    ObjectiveKind::GeneralizedLinear(Link::Huber { delta: 0.5 }),
];

fn instance() -> impl Strategy<Value = (ObjectiveSpec<f64>, Vec<f64>, Vec<f64>)> {
    (0usize..KINDS.len(), 2usize..6, 1usize..6).prop_flat_map(|(kind, d, rows)| {
        (
            proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, d), rows),
            proptest::collection::vec(0u8..2, rows),
            0.0f64..1.0,
            proptest::collection::vec(-2.0f64..2.0, d),
            proptest::collection::vec(-2.0f64..2.0, d),
        )
            .prop_map(move |(data, labels, reg, x, y)| {
                let kind = KINDS[kind];
                let labels = labels.into_iter().map(f64::from).collect();
                let f = ObjectiveSpec::new(kind, Matrix::from_rows(&data).unwrap(), labels, reg).unwrap();
                (f, x, y)
            })
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn gradient_matches_central_differences((f, x, _) in instance()) {
        let g = f.gradient(&x).unwrap();
        let h = 1e-6;
        for l in 0..x.len() {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[l] += h;
            dn[l] -= h;
            let fd = (f.evaluate(&up).unwrap() - f.evaluate(&dn).unwrap()) / (2.0 * h);
            prop_assert!((g[l] - fd).abs() <= 1e-5 * g[l].abs().max(1e-2), "coordinate {l}: {} vs {fd}", g[l]);
        }
    }

    #[test]
    fn midpoint_convexity((f, x, y) in instance()) {
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let lhs = f.evaluate(&mid).unwrap();
        let rhs = 0.5 * f.evaluate(&x).unwrap() + 0.5 * f.evaluate(&y).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn smoothness_certificate_and_ordering((f, x, y) in instance()) {
        let (c, _) = derive_profiles(&f, false).unwrap();
        prop_assert!(c.strong_convexity <= c.smoothness);
        let gx = f.gradient(&x).unwrap();
        let gy = f.gradient(&y).unwrap();
        let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
        let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&dg) <= c.smoothness * norm(&dx) * (1.0 + 1e-10) + 1e-12);
    }
}

#[test]
fn ridge_profile_matches_dense_eigen_oracle() {
    let rows = vec![
        vec![0.3, -1.2, 0.5],
        vec![1.1, 0.4, -0.7],
        vec![-0.2, 0.9, 1.3],
        vec![0.8, -0.5, 0.1],
        vec![-1.4, 0.2, 0.6],
    ];
    let f = ObjectiveSpec::new(ObjectiveKind::RidgeQuadratic, Matrix::from_rows(&rows).unwrap(), vec![0.0; 5], 1.0).unwrap();
    let a = DMatrix::from_fn(5, 3, |i, j| rows[i][j]);
    let h = a.transpose() * &a + DMatrix::identity(3, 3);
    let eig = h.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let (c, _) = derive_profiles(&f, false).unwrap();
    assert!((c.strong_convexity - lo).abs() < 1e-8 && (c.smoothness - hi).abs() < 1e-8);
}

#[test]
fn hundred_normalized_rows_give_sensitivity_one_hundredth() {
    let rows: Vec<Vec<f64>> = (0..100).map(|i| {
        let t = i as f64 * 0.1;
        let v = [t.cos(), t.sin(), 0.5];
        let n = (v[0] * v[0] + v[1] * v[1] + 0.25f64).sqrt();
        v.iter().map(|a| a / n).collect()
    }).collect();
    let labels = (0..100).map(|i| f64::from(i % 2)).collect();
    let f = ObjectiveSpec::new(ObjectiveKind::LogisticL2, Matrix::from_rows(&rows).unwrap(), labels, 0.5).unwrap();
    let (_, s) = derive_profiles(&f, true).unwrap();
    assert!((s.b_inf - 0.01).abs() < 1e-12, "B∞ = {}", s.b_inf);
}

fn fixture() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/adult_fixture.csv")
}

#[test]
fn fixture_ingests_with_unit_rows() {
    let mut opts = IngestOptions::new("income", 2);
    opts.per_agent = Some(23);
    let specs = ingest_csv(fixture(), &opts).unwrap();
    assert_eq!(specs.len(), 2);
    for s in &specs {
        assert_eq!(s.sample_count(), 23);
        for i in 0..s.sample_count() {
            let n = norm(s.samples.row(i));
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        }
        assert!(s.labels.iter().all(|&y| y == 0.0 || y == 1.0));
    }
}

#[test]
fn rows_with_missing_token_are_dropped() {
    let opts = IngestOptions::new("income", 1);
    let spec = &ingest_csv(fixture(), &opts).unwrap()[0];
    assert_eq!(spec.sample_count(), 46);
}

#[test]
fn minimal_file_ingests() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "x,y\n1.0,0\n3.0,1").unwrap();
    let specs = ingest_csv(file.path(), &IngestOptions::new("y", 1)).unwrap();
    assert_eq!(specs[0].sample_count(), 2);
}

#[test]
fn ingestion_errors_are_typed() {
    let missing = ingest_csv("/definitely/not/here.csv", &IngestOptions::new("y", 1));
    assert!(matches!(missing, Err(Error::Ingestion(_))));
    let wrong = ingest_csv(fixture(), &IngestOptions::new("salary", 1));
    assert!(matches!(wrong, Err(Error::Ingestion(_))));
    let too_many = ingest_csv(fixture(), &IngestOptions::new("income", 100));
    assert!(matches!(too_many, Err(Error::Ingestion(_))));
}

#[test]
fn single_precision_agrees_with_double() {
    let rows = vec![vec![0.6, 0.8], vec![-0.28, 0.96], vec![1.0, 0.0]];
    let f64s = ObjectiveSpec::new(ObjectiveKind::LogisticL2, Matrix::from_rows(&rows).unwrap(), vec![1.0, 0.0, 1.0], 0.5).unwrap();
    let rows32: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
    let f32s = ObjectiveSpec::<f32>::new(
        ObjectiveKind::LogisticL2,
        ldpopt::linalg::Matrix::from_rows(&rows32).unwrap(),
        vec![1.0, 0.0, 1.0],
        0.5,
    )
    .unwrap();
    let g64 = f64s.gradient(&[0.3, -0.2]).unwrap();
    let g32 = f32s.gradient(&[0.3, -0.2]).unwrap();
    for (a, b) in g64.iter().zip(&g32) {
        assert!((a - f64::from(*b)).abs() < 1e-6);
    }
}
