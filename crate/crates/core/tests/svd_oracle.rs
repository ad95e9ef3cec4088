use decompnet::linalg::{self, dot, Matrix};
use decompnet::svd::*;
use decompnet::*;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

#[test]
fn singular_values_match_eigenvalues_of_gram() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..10 {
        let a = random_matrix(&mut rng, 4, 4);
        let na = to_nalgebra(&a);
        let mut eig: Vec<f64> = (&na * na.transpose()).symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|x, y| y.total_cmp(x));
        let res = svd_deflation(&a, 4, 20_000, 1e-13).unwrap();
        for (s, l) in res.singular_values().iter().zip(&eig) {
            assert!((s * s - l).abs() <= 1e-8 * l.max(1.0), "{} vs {l}", s * s);
        }
    }
}

#[test]
fn singular_values_of_diagonal_by_hand() {
    // A A^T = diag(4, 9, 1); its characteristic polynomial has roots 9, 4, 1
    let a = Matrix::from_vec(3, 3, vec![0.0, 2.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, -1.0]).unwrap();
    let res = svd_deflation(&a, 3, 1000, 1e-14).unwrap();
    let s = res.singular_values();
    for (got, want) in s.iter().zip([3.0, 2.0, 1.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    let u = &res.triplets[0].u;
    assert!((u[1] - 1.0).abs() < 1e-12 && u[0].abs() < 1e-12 && u[2].abs() < 1e-12);
}

#[test]
fn left_vectors_match_nalgebra_up_to_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a = random_matrix(&mut rng, 6, 9);
    let svd = to_nalgebra(&a).svd(true, false);
    let u = svd.u.unwrap();
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let res = svd_deflation(&a, 3, 50_000, 1e-13).unwrap();
    for (k, t) in res.triplets.iter().enumerate() {
        let col: Vec<f64> = u.column(idx[k]).iter().copied().collect();
        assert!(dot(&col, &t.u).abs() > 1.0 - 1e-9);
    }
}

#[test]
fn deflation_energy_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let a = random_matrix(&mut rng, 5, 8);
    let total: f64 = a.as_slice().iter().map(|v| v * v).sum();
    for k in 1..=5 {
        let res = svd_deflation(&a, k, 50_000, 1e-14).unwrap();
        let approx = res.reconstruct(5, 8);
        let rest: f64 = a.as_slice().iter().zip(approx.as_slice()).map(|(x, y)| (x - y).powi(2)).sum();
        let captured: f64 = res.singular_values().iter().map(|s| s * s).sum();
        assert!((total - captured - rest).abs() <= 1e-8 * total, "k = {k}");
    }
}

#[test]
fn rank_deficiency_is_noted() {
    let u = [1.0, 2.0, 2.0];
    let v = [1.0, -1.0];
    let mut a = Matrix::zeros(3, 2);
    a.add_outer(1.0, &u, &v);
    let res = svd_deflation(&a, 2, 1000, 1e-12).unwrap();
    assert_eq!(res.triplets.len(), 1);
    assert!(res.note.is_some());
    assert!((res.triplets[0].s - 3.0 * 2f64.sqrt()).abs() < 1e-12);
}

/// cos of the angle between unit `a` and `span(q)` for orthonormal `q`.
fn cos_to_span(a: &[f64], q: &[Vec<f64>]) -> f64 {
    q.iter().map(|b| dot(a, b).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn principal_angles_match_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..5 {
        let a: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let qa = linalg::gram_schmidt(&a, 1e-10).unwrap();
        let qb = linalg::gram_schmidt(&b, 1e-10).unwrap();
        // extremes of the cosine over unit vectors of span(a) give the
        // smallest and largest principal angles
        let (mut hi, mut lo) = (0.0f64, 1.0f64);
        let steps = 200_000;
        for k in 0..steps {
            let th = std::f64::consts::PI * k as f64 / steps as f64;
            let v: Vec<f64> = qa[0].iter().zip(&qa[1]).map(|(x, y)| th.cos() * x + th.sin() * y).collect();
            let c = cos_to_span(&v, &qb);
            hi = hi.max(c);
            lo = lo.min(c);
        }
        let angles = principal_angles(&a, &b).unwrap();
        assert!((angles[0] - hi.min(1.0).acos().to_degrees()).abs() < 1e-3);
        assert!((angles[1] - lo.min(1.0).acos().to_degrees()).abs() < 1e-3);
    }
}

#[test]
fn principal_angles_of_equal_spans_vanish() {
    let a = vec![vec![1.0, 2.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]];
    let b = vec![vec![1.0, 3.0, 1.0, 1.0], vec![-1.0, 0.0, 2.0, -1.0]];
    for angle in principal_angles(&a, &b).unwrap() {
        assert!(angle < 1e-6);
    }
}

#[test]
fn branch_comparison_uses_each_oracle_vector_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let data = random_matrix(&mut rng, 5, 30);
    let oracle = svd_deflation(&data, 3, 10_000, 1e-12).unwrap();
    let config = ModelConfig {
        n_branches: 3,
        ..ModelConfig::default()
    };
    let mut model = DecomposerModel::new(config, 5).unwrap();
    let us = oracle.left_vectors();
    model.branches = vec![
        BranchParams::Rank1Tied { u: us[2].iter().map(|v| -v).collect() },
        BranchParams::Rank1Tied { u: us[0].iter().map(|v| 4.0 * v).collect() },
        BranchParams::Rank1Tied { u: us[1].clone() },
    ];
    let report = compare_branches_to_svd(&model, &oracle).unwrap();
    let idx: Vec<usize> = report.matches.iter().map(|m| m.oracle_index).collect();
    assert_eq!(idx, vec![2, 0, 1]);
    assert!(report.min_abs_cos() > 1.0 - 1e-12);
    assert!(report.max_angle_deg() < 1e-6);
}

#[test]
fn non_rank1_model_rejected() {
    let config = ModelConfig {
        n_branches: 1,
        branch_kind: BranchKind::LinearAe { code_dim: 2 },
        ..ModelConfig::default()
    };
    let model = DecomposerModel::new(config, 4).unwrap();
    let oracle = svd_deflation(&Matrix::identity(4), 1, 100, 1e-12).unwrap();
    assert!(matches!(compare_branches_to_svd(&model, &oracle), Err(Error::Usage(_))));
}
