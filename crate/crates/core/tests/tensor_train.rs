mod common;

use chebcal::chebyshev::{ChebyshevGrid, FullChebyshevTensor, Interval};
use chebcal::format::{decode_full, decode_tt, encode_full, encode_tt};
use chebcal::tensor_train::{tt_entry, tt_inner_product, tt_svd};
use common::{all_indices, brute_entry, random_tt};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, u64)> {
    (prop::collection::vec(1usize..5, 1..5), any::<u64>()).prop_flat_map(|(modes, seed)| {
        let d = modes.len();
        (
            Just(modes),
            prop::collection::vec(1usize..4, d - 1).prop_map(|inner| {
                let mut r = vec![1];
                r.extend(inner);
                r.push(1);
                r
            }),
            Just(seed),
        )
    })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn entry_is_the_matrix_chain((modes, ranks, seed) in shape()) {
        let t = random_tt(&modes, &ranks, &mut ChaCha8Rng::seed_from_u64(seed));
        for idx in all_indices(&modes) {
            let (a, b) = (tt_entry(&t, &idx).unwrap(), brute_entry(&t, &idx));
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        prop_assert!(t.storage_len() <= modes.len() * modes.iter().max().unwrap() * t.max_rank().pow(2));
    }

    #[test]
    fn inner_product_properties((modes, ranks, seed) in shape()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tt(&modes, &ranks, &mut rng);
        let b = random_tt(&modes, &ranks.iter().map(|&r| r.min(2)).collect::<Vec<_>>(), &mut rng);
        let ab = tt_inner_product(&a, &b).unwrap();
        let ba = tt_inner_product(&b, &a).unwrap();
        prop_assert!(rel_close(ab, ba, 1e-12) || (ab - ba).abs() < 1e-12);
        prop_assert!(tt_inner_product(&a, &a).unwrap() >= 0.0);
        let brute: f64 = all_indices(&modes).iter().map(|i| brute_entry(&a, i) * brute_entry(&b, i)).sum();
        prop_assert!((ab - brute).abs() <= 1e-11 * brute.abs().max(1.0), "{} vs {}", ab, brute);
    }

    #[test]
    fn svd_reconstructs_within_tolerance((modes, ranks, seed) in shape(), tol in prop::sample::select(vec![0.0, 1e-8, 1e-3, 0.1])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tt(&modes, &ranks, &mut rng);
        let noisy: Vec<f64> = t.to_dense().unwrap().iter().map(|v| v + 1e-2 * rng.random_range(-1.0..1.0)).collect();
        let approx = tt_svd(&noisy, &modes, tol).unwrap().to_dense().unwrap();
        let norm = noisy.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = noisy.iter().zip(&approx).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= (tol + 1e-12) * norm, "{} > {} * {}", err, tol, norm);
    }

    #[test]
    fn tt_files_round_trip((modes, ranks, seed) in shape(), with_grid in any::<bool>()) {
        let mut t = random_tt(&modes, &ranks, &mut ChaCha8Rng::seed_from_u64(seed));
        if with_grid {
            let grid = ChebyshevGrid::new(modes.iter().map(|&n| (Interval::new(-1.0, 3.0).unwrap(), n)).collect());
            if let Ok(grid) = grid {
                t = t.with_grid(grid).unwrap();
            }
        }
        let bytes = encode_tt(&t);
        let back = decode_tt(&bytes).unwrap();
        prop_assert_eq!(encode_tt(&back), bytes);
        prop_assert_eq!(back.cores(), t.cores());
    }

    #[test]
    fn full_files_round_trip(counts in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = counts.iter().map(|&n| (Interval::new(rng.random_range(-2.0..0.0), rng.random_range(0.5..2.0)).unwrap(), n)).collect();
        let grid = match ChebyshevGrid::new(dims) {
            Ok(g) => g,
            Err(_) => return Ok(()),
        };
        let values = (0..grid.dense_len().unwrap()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let t = FullChebyshevTensor::from_values(grid, values).unwrap();
        let back = decode_full(&encode_full(&t)).unwrap();
        prop_assert_eq!(back, t);
    }
}

#[test]
fn worked_examples() {
    use chebcal::tensor_train::{TtCore, TtTensor};
    let r1 = TtTensor::new(vec![
        TtCore::from_vector(&[1.6, 2.1, -3.2, 8.4]).unwrap(),
        TtCore::from_vector(&[7.4, -6.1, 9.5]).unwrap(),
    ])
    .unwrap();
    assert_eq!(tt_entry(&r1, &[1, 2]).unwrap(), 2.1 * 9.5);

    let m = |rows: &[&[f64]]| rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    let r2 = TtTensor::new(vec![
        TtCore::from_matrices(&[m(&[&[1.3, -2.8]]), m(&[&[9.7, 4.8]]), m(&[&[-2.4, 6.9]]), m(&[&[8.5, -2.1]])]).unwrap(),
        TtCore::from_matrices(&[
            m(&[&[9.7, -9.5, -7.5], &[4.9, -9.2, 3.8]]),
            m(&[&[4.8, 8.2, 6.5], &[-8.9, -2.6, -8.3]]),
            m(&[&[4.2, -2.7, -4.9], &[1.9, 2.2, 1.3]]),
        ])
        .unwrap(),
        TtCore::from_matrices(&[m(&[&[-3.7], &[-2.5], &[7.9]]), m(&[&[2.5], &[6.8], &[-5.4]])]).unwrap(),
    ])
    .unwrap();
    let v = tt_entry(&r2, &[1, 2, 1]).unwrap();
    assert!((v - 241.332).abs() < 1e-12, "{v}");
    assert!((v - brute_entry(&r2, &[1, 2, 1])).abs() < 1e-12);
}
