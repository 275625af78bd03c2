use dufm_core::linalg::{nuclear_norm, relu, singular_values};
use dufm_core::model::loss;
use dufm_core::theory::theoretical_optimum;
use dufm_core::{DenseMatrix, DufmDims, DufmParams, InitScale, RegConfig, Rng};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| DenseMatrix::from_vec(rows, cols, v).unwrap())
}

fn sized_matrix() -> impl Strategy<Value = DenseMatrix> {
    (1usize..7, 1usize..7).prop_flat_map(|(r, c)| matrix(r, c))
}

/// Householder reflector `I − 2vvᵀ/‖v‖²`.
fn reflector(v: &[f64]) -> DenseMatrix {
    let nsq: f64 = v.iter().map(|x| x * x).sum();
    let n = v.len();
    DenseMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - 2.0 * v[i] * v[j] / nsq)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn singular_values_are_orthogonally_invariant(
        m in sized_matrix(),
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let u: Vec<f64> = (0..m.rows()).map(|_| rng.normal()).collect();
        let v: Vec<f64> = (0..m.cols()).map(|_| rng.normal()).collect();
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let rotated = reflector(&u).matmul(&m).unwrap().matmul(&reflector(&v)).unwrap();
        let a = singular_values(&m);
        let b = singular_values(&rotated);
        let scale = a.first().copied().unwrap_or(0.0).max(1.0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12 * scale, "{} vs {}", x, y);
        }
    }

    #[test]
    fn singular_values_are_sorted_and_nonnegative(m in sized_matrix()) {
        let s = singular_values(&m);
        prop_assert_eq!(s.len(), m.rows().min(m.cols()));
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.iter().all(|&x| x >= 0.0));
        let fro: f64 = s.iter().map(|x| x * x).sum();
        prop_assert!((fro - m.frobenius_sq()).abs() < 1e-11 * m.frobenius_sq().max(1.0));
    }

    #[test]
    fn relu_is_idempotent(m in sized_matrix()) {
        let once = relu(&m);
        prop_assert_eq!(relu(&once), once.clone());
        prop_assert!(once.data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn relu_does_not_increase_two_column_nuclear_norm(m in (1usize..8).prop_flat_map(|r| matrix(r, 2))) {
        prop_assert!(nuclear_norm(&relu(&m)) <= nuclear_norm(&m) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn optimum_is_monotone_in_regularization(
        layers in 2usize..6,
        n in 1usize..20,
        lam in 1e-4f64..5e-2,
        factor in 1.01f64..3.0,
    ) {
        let dims = DufmDims::uniform(layers, 4, n).unwrap();
        let lo = theoretical_optimum(&dims, &RegConfig::uniform(layers, lam).unwrap()).unwrap();
        let hi = theoretical_optimum(&dims, &RegConfig::uniform(layers, lam * factor).unwrap()).unwrap();
        prop_assert!(lo.optimal_loss <= hi.optimal_loss * (1.0 + 1e-12));
        prop_assert!(hi.optimal_loss <= 0.5 + 1e-15);
    }

    #[test]
    fn random_parameters_never_beat_the_optimum(
        layers in 2usize..5,
        seed in any::<u64>(),
        lam in 1e-3f64..5e-2,
    ) {
        let dims = DufmDims::uniform(layers, 3, 2).unwrap();
        let reg = RegConfig::uniform(layers, lam).unwrap();
        let opt = theoretical_optimum(&dims, &reg).unwrap().optimal_loss;
        let params = DufmParams::random(&dims, &mut Rng::new(seed), InitScale::default());
        prop_assert!(loss(&params, &dims, &reg).unwrap().total >= opt * (1.0 - 1e-12));
    }
}
