use proptest::prelude::*;

use mpirecon_core::bound::{balanced_alpha, quadratic_bound_rhs, tikhonov_svd};
use mpirecon_core::calib::{
    background_correct, normalize_operator, project_acquisition, select_rows, FrequencyIndexSet, SnrMeasure,
};
use mpirecon_core::direct::FilterKind;
use mpirecon_core::io_formats::{
    decode_matrix, decode_vector, encode_matrix, encode_vector, vector_from_csv, vector_to_csv,
};
use mpirecon_core::linalg::{gaussian_vec, seeded_rng, singular_values};
use mpirecon_core::noise::{estimate_covariance, whitening_from, CovarianceKind};
use mpirecon_core::param::{alpha_grid, discrepancy_select, quasi_opt_select};
use mpirecon_core::rsvd::{reduce_problem, rsvd};
use mpirecon_core::synth::{cone_phantom, synth_operator, ConeSpec, SpectrumSpec};
use mpirecon_core::{kaczmarz_solve, Axis, KaczmarzConfig, Matrix, SystemMatrix, VoxelGrid};

fn gaussian(n: usize, m: usize, seed: u64) -> Matrix {
    Matrix::new(n, m, gaussian_vec(n * m, &mut seeded_rng(seed))).unwrap()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        d
    } else {
        d / n
    }
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e300..1e300f64,
        -1.0..1.0f64,
        Just(0.0),
        Just(f64::MIN_POSITIVE),
        Just(-0.0)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_and_csv_round_trips_are_exact(rows in 1usize..6, cols in 1usize..6, vals in prop::collection::vec(finite(), 36)) {
        let data = vals[..rows * cols].to_vec();
        let a = Matrix::new(rows, cols, data.clone()).unwrap();
        let back = decode_matrix(&encode_matrix(&a).unwrap()).unwrap();
        prop_assert_eq!(back.shape(), (rows, cols));
        prop_assert!(back.as_slice().iter().zip(&data).all(|(x, y)| x.to_bits() == y.to_bits()));
        let v = decode_vector(&encode_vector(&data).unwrap()).unwrap();
        prop_assert!(v.iter().zip(&data).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = vector_from_csv(&vector_to_csv(&data)).unwrap();
        prop_assert!(c.iter().zip(&data).all(|(x, y)| x == y));
    }

    #[test]
    fn projection_is_linear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let ns = 12;
        let mut rng = seeded_rng(seed);
        let (u, v) = (gaussian_vec(2 * ns, &mut rng), gaussian_vec(2 * ns, &mut rng));
        let w: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + b * q).collect();
        let idx = FrequencyIndexSet::uniform(2, vec![-2, 1, 3, 5]);
        let q = |s: &[f64]| project_acquisition(&[&s[..ns], &s[ns..]], 0.5, &idx).unwrap();
        let (qu, qv, qw) = (q(&u), q(&v), q(&w));
        for i in 0..qw.len() {
            let want = a * qu[i] + b * qv[i];
            prop_assert!((qw[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn background_correction_removes_a_constant_column(seed in any::<u64>()) {
        let b = gaussian(6, 4, seed);
        let s0 = gaussian_vec(6, &mut seeded_rng(seed ^ 1));
        let s = Matrix::from_fn(6, 4, |i, j| b.get(i, j) + s0[i]);
        let v = gaussian_vec(6, &mut seeded_rng(seed ^ 2));
        let (a, y) = background_correct(&SystemMatrix::raw(s), &s0, &v, &v).unwrap();
        prop_assert!(a.matrix.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= 1e-12));
        prop_assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn raising_the_threshold_keeps_a_subset(vals in prop::collection::vec(0.0..10.0f64, 8), t1 in 0.0..10.0f64, t2 in 0.0..10.0f64) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let band = vec![-2, -1, 1, 2];
        let d = SnrMeasure { candidates: band.clone(), values: vec![vals[..4].to_vec(), vals[4..].to_vec()], degenerate: vec![] };
        let (a, b) = (select_rows(&d, &band, lo).unwrap(), select_rows(&d, &band, hi).unwrap());
        prop_assert!(a.mask.iter().zip(&b.mask).all(|(x, y)| *x || !*y));
        let pairs = vals.iter().filter(|v| **v >= lo).count();
        prop_assert_eq!(a.kept_rows(), 2 * pairs);
        prop_assert_eq!(a.indices.n_rows(), a.kept_rows());
    }

    #[test]
    fn normalization_is_scale_free(seed in any::<u64>(), c in 1e-3..1e3f64) {
        let a = gaussian(10, 5, seed);
        let y = gaussian_vec(10, &mut seeded_rng(seed ^ 3));
        let n1 = normalize_operator(&SystemMatrix::raw(a.clone()), &y).unwrap();
        let cy: Vec<f64> = y.iter().map(|v| c * v).collect();
        let n2 = normalize_operator(&SystemMatrix::raw(a.scaled(c)), &cy).unwrap();
        prop_assert!((singular_values(&n1.matrix.matrix).unwrap()[0] - 1.0).abs() < 1e-8);
        prop_assert!(rel(n2.matrix.matrix.as_slice(), n1.matrix.matrix.as_slice()) < 1e-8);
        prop_assert!(rel(&n2.data, &n1.data) < 1e-8);
        prop_assert!((n2.scale / n1.scale - c).abs() < 1e-8 * c);
    }

    #[test]
    fn equal_variance_whitening_rescales_alpha(seed in any::<u64>(), sigma in 0.05..20.0f64, alpha in 1e-3..1.0f64) {
        let a = gaussian(8, 5, seed);
        let y = gaussian_vec(8, &mut seeded_rng(seed ^ 4));
        let aw = a.scaled(1.0 / sigma);
        let yw: Vec<f64> = y.iter().map(|v| v / sigma).collect();
        let x1 = tikhonov_svd(&aw, &yw, alpha).unwrap();
        let x2 = tikhonov_svd(&a, &y, alpha * sigma * sigma).unwrap();
        prop_assert!(rel(&x1, &x2) < 1e-9);
    }

    #[test]
    fn full_whitening_decorrelates(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let mix = gaussian(4, 4, seed ^ 5);
        let samples: Vec<Vec<f64>> = (0..50).map(|_| mix.matvec(&gaussian_vec(4, &mut rng))).collect();
        let model = estimate_covariance(&samples, CovarianceKind::Full).unwrap();
        let w = whitening_from(&model, 1e-12).unwrap();
        let white: Vec<Vec<f64>> = samples.iter().map(|s| w.apply(s)).collect();
        let again = estimate_covariance(&white, CovarianceKind::Full).unwrap();
        let var = again.variances();
        prop_assert!(var.iter().all(|v| (v - 1.0).abs() < 1e-8), "{:?}", var);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rsvd_cannot_beat_the_best_rank_k_error(seed in any::<u64>(), k in 1usize..8) {
        let a = synth_operator(30, 15, &SpectrumSpec::Algebraic { rate: 1.0 }, seed).unwrap().matrix;
        let s = singular_values(&a).unwrap();
        let f = rsvd(&a, k, 5, 1, seed).unwrap();
        let err = singular_values(&a.sub(&f.to_matrix()).unwrap()).unwrap()[0];
        prop_assert!(err >= s[k] * (1.0 - 1e-10), "error {err} below σ_k+1 {}", s[k]);
        let g = rsvd(&a, k, 5, 1, seed).unwrap();
        prop_assert_eq!(f.s, g.s);
    }

    #[test]
    fn exact_rank_reduction_keeps_the_tikhonov_solution(seed in any::<u64>(), alpha in 1e-3..1.0f64) {
        let a = gaussian(20, 4, seed).matmul(&gaussian(4, 10, seed ^ 6)).unwrap();
        let y = gaussian_vec(20, &mut seeded_rng(seed ^ 7));
        let f = rsvd(&a, 4, 4, 1, seed).unwrap();
        prop_assert!(rel(f.to_matrix().as_slice(), a.as_slice()) < 1e-10);
        let r = reduce_problem(&f, &y).unwrap();
        let full = tikhonov_svd(&a, &y, alpha).unwrap();
        let reduced = tikhonov_svd(&r.b, &r.z, alpha).unwrap();
        prop_assert!(rel(&reduced, &full) < 1e-9);
    }

    #[test]
    fn kaczmarz_is_nonnegative_and_scale_consistent(seed in any::<u64>(), alpha in 1e-2..1.0f64) {
        let a = gaussian(12, 6, seed);
        let y = gaussian_vec(12, &mut seeded_rng(seed ^ 8));
        let cfg = KaczmarzConfig::new(alpha).sweeps(30);
        let x = kaczmarz_solve(&a, &y, &cfg).unwrap().x;
        prop_assert!(x.iter().all(|v| *v >= 0.0));
        let s = 7.0;
        let sy: Vec<f64> = y.iter().map(|v| s * v).collect();
        let xs = kaczmarz_solve(&a.scaled(s), &sy, &KaczmarzConfig::new(alpha * s * s).sweeps(30)).unwrap().x;
        prop_assert!(rel(&xs, &x) < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn filter_decreases_in_alpha(s in 1e-3..10.0f64, a1 in 1e-6..10.0f64, a2 in 1e-6..10.0f64) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        for kind in [FilterKind::Squared, FilterKind::Classic] {
            prop_assert!(kind.value(s, hi) <= kind.value(s, lo));
            prop_assert!(kind.value(s, lo) <= (1.0 + 1e-15) / s);
            prop_assert!((kind.value(s, 0.0) * s - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn grid_is_geometric(alpha0 in 1e-4..1e4f64, q in 0.05..0.95f64, count in 2usize..30) {
        let g = alpha_grid(alpha0, q, count).unwrap();
        prop_assert_eq!(g.len(), count);
        prop_assert_eq!(g.get(0), alpha0);
        prop_assert!(g.values.windows(2).all(|w| (w[1] / w[0] - q).abs() < 1e-12));
    }

    #[test]
    fn looser_discrepancy_bound_stops_no_later(res in prop::collection::vec(0.01..10.0f64, 2..20), b1 in 0.01..10.0f64, b2 in 0.01..10.0f64) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let tight = discrepancy_select(&res, lo).unwrap();
        let loose = discrepancy_select(&res, hi).unwrap();
        if let Some(t) = tight.selected() {
            let l = loose.selected().expect("a looser bound admits at least as much");
            prop_assert!(l.index <= t.index);
            prop_assert!(res[t.index] <= lo);
        }
    }

    #[test]
    fn quasi_optimality_ignores_a_common_shift(seed in any::<u64>(), n in 3usize..12, shift in -5.0..5.0f64) {
        let mut rng = seeded_rng(seed);
        let sols: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(4, &mut rng)).collect();
        let moved: Vec<Vec<f64>> = sols.iter().map(|s| s.iter().map(|v| v + shift).collect()).collect();
        let (a, b) = (quasi_opt_select(&sols).unwrap(), quasi_opt_select(&moved).unwrap());
        let d = &a.diagnostics;
        prop_assert!(d.iter().all(|v| *v >= d[a.index]));
        // a shift can only reorder distances that agree to rounding
        prop_assert!((d[b.index] - d[a.index]).abs() <= 1e-12 * (1.0 + d[a.index]));
    }

    #[test]
    fn balanced_alpha_minimizes_the_quadratic_estimate(eps in 0.0..0.5f64, delta in 1e-4..1.0f64, nx in 0.1..10.0f64, nw in 0.1..10.0f64, alpha in 1e-4..10.0f64) {
        let star = balanced_alpha(eps, delta, nx, nw);
        let best = quadratic_bound_rhs(star, eps, delta, nx, nw).unwrap();
        prop_assert!(best <= quadratic_bound_rhs(alpha, eps, delta, nx, nw).unwrap() * (1.0 + 1e-12));
        let t = eps * nx + delta;
        prop_assert!((best - (8.0 * t * nw + 4.0 * eps * eps * nw * nw)).abs() <= 1e-10 * best);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cone_phantom_is_binary(dims in prop::array::uniform3(4usize..12), c in 0.1..5.0f64, axis in 0usize..3, angle in 0.0..40.0f64) {
        let grid = VoxelGrid::new(dims, [2.0, 2.0, 3.0], [0.0; 3]).unwrap();
        let cone = ConeSpec { apex_angle_deg: angle, height: 10.0, ..ConeSpec::shape_phantom() }.along([Axis::X, Axis::Y, Axis::Z][axis]);
        let x = cone_phantom(&grid, &cone, c).unwrap();
        prop_assert_eq!(x.len(), grid.len());
        prop_assert!(x.iter().all(|v| *v == 0.0 || *v == c));
    }

    #[test]
    fn synthetic_operator_has_the_requested_spectrum(seed in any::<u64>(), n in 5usize..30, m in 5usize..30, rho in 0.3..0.95f64) {
        for spec in [SpectrumSpec::Algebraic { rate: 1.5 }, SpectrumSpec::Exponential { rho }] {
            let a = synth_operator(n, m, &spec, seed).unwrap().matrix;
            let got = singular_values(&a).unwrap();
            let want = spec.values(n.min(m)).unwrap();
            prop_assert!(got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 1e-10), "{:?} vs {:?}", got, want);
        }
    }
}
