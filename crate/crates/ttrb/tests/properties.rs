//! Property tests for the tensor and sparse primitives.

use proptest::prelude::*;

use ttrb::sparse::{kron_sparse, truncated_svd, SparseMatrix};
use ttrb::tensors::{contract, inverse_perm, merge_axes, permute_axes, KronMap, Tensor};

fn small_dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 1..4)
}

fn tensor_for(dims: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let len: usize = dims.iter().product();
    prop::collection::vec(-10.0f64..10.0, len..=len)
        .prop_map(move |data| Tensor::new(dims.clone(), data).unwrap())
}

proptest! {
    #[test]
    fn permute_round_trips_bit_exact(
        (t, perm) in small_dims().prop_flat_map(|dims| {
            let n = dims.len();
            (tensor_for(dims), Just(()).prop_perturb(move |_, mut rng| {
                let mut p: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    let j = (rng.next_u32() as usize) % (i + 1);
                    p.swap(i, j);
                }
                p
            }))
        })
    ) {
        let fwd = permute_axes(&t, &perm).unwrap();
        let back = permute_axes(&fwd, &inverse_perm(&perm)).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn merge_split_round_trips_bit_exact(t in small_dims().prop_flat_map(tensor_for)) {
        let order = t.order();
        let merged = merge_axes(&t, &[order]).unwrap();
        let back = merged.reshape(t.dims().to_vec()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn contraction_is_bilinear(
        (r1, r2, s, alpha, beta) in (2usize..5, 2usize..5).prop_flat_map(|(m, c)| {
            (
                tensor_for(vec![m, c]),
                tensor_for(vec![m, c]),
                tensor_for(vec![c, 3]),
                -3.0f64..3.0,
                -3.0f64..3.0,
            )
        })
    ) {
        let mut combo = Tensor::zeros(r1.dims().to_vec());
        for (k, v) in combo.data_mut().iter_mut().enumerate() {
            *v = alpha * r1.data()[k] + beta * r2.data()[k];
        }
        let lhs = contract(&combo, 1, &s, 0).unwrap();
        let a = contract(&r1, 1, &s, 0).unwrap();
        let b = contract(&r2, 1, &s, 0).unwrap();
        for k in 0..lhs.len() {
            let rhs = alpha * a.data()[k] + beta * b.data()[k];
            let scale = lhs.data()[k].abs().max(rhs.abs()).max(1.0);
            prop_assert!((lhs.data()[k] - rhs).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn kron_index_is_a_bijection(na in 1usize..8, nb in 1usize..8) {
        let map = KronMap::new(na, nb).unwrap();
        let mut seen = vec![false; na * nb];
        for i in 0..na {
            for j in 0..nb {
                let m = map.index(i, j).unwrap();
                prop_assert!(!seen[m]);
                seen[m] = true;
                prop_assert_eq!(map.index_inv(m).unwrap(), (i, j));
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn kron_product_entries_factor_exactly(
        (a_vals, b_vals) in (
            prop::collection::vec(-5.0f64..5.0, 9),
            prop::collection::vec(-5.0f64..5.0, 4),
        )
    ) {
        let mut a_triplets = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                a_triplets.push((i, j, a_vals[i * 3 + j]));
            }
        }
        let mut b_triplets = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                b_triplets.push((i, j, b_vals[i * 2 + j]));
            }
        }
        let a = SparseMatrix::from_triplets(3, 3, &a_triplets, false).unwrap();
        let b = SparseMatrix::from_triplets(2, 2, &b_triplets, false).unwrap();
        let k = kron_sparse(&a, &b).unwrap();
        let rows = KronMap::new(3, 2).unwrap();
        for ia in 0..3 {
            for ib in 0..2 {
                for jc in 0..3 {
                    for jd in 0..2 {
                        let r = rows.index(ia, ib).unwrap();
                        let c = rows.index(jc, jd).unwrap();
                        prop_assert_eq!(k.get(r, c), a.get(ia, jc) * b.get(ib, jd));
                    }
                }
            }
        }
    }

    #[test]
    fn svd_rank_monotone_in_tolerance(
        data in prop::collection::vec(-5.0f64..5.0, 48),
        e1 in 1e-6f64..1e-1,
        e2 in 1e-6f64..1e-1,
    ) {
        let a = Tensor::new(vec![8, 6], data).unwrap();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let r_lo = truncated_svd(&a, lo).unwrap().rank;
        let r_hi = truncated_svd(&a, hi).unwrap().rank;
        prop_assert!(r_lo >= r_hi);
    }

    #[test]
    fn svd_truncation_respects_energy_budget(
        data in prop::collection::vec(-5.0f64..5.0, 40),
        eps in 1e-4f64..0.5,
    ) {
        let a = Tensor::new(vec![8, 5], data).unwrap();
        let out = truncated_svd(&a, eps).unwrap();
        let rec = contract(&out.phi, 1, &out.remainder, 0).unwrap();
        let err = rec.sub(&a).unwrap().frobenius_norm();
        prop_assert!(err <= eps * a.frobenius_norm() * (1.0 + 1e-10) + 1e-12);
    }
}
