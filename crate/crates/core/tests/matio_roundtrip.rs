use dmdmpc_core::matio::{decode_matrix, encode_matrix, read_matrix, split_snapshots, write_matrix};
use dmdmpc_core::{RealMatrix, SnapshotDataset};
use proptest::prelude::*;
use std::path::Path;

fn matrix() -> impl Strategy<Value = RealMatrix> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
        prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, r * c)
            .prop_map(move |v| RealMatrix::from_vec(r, c, v))
    })
}

proptest! {
    #[test]
    fn encoding_is_bit_exact(m in matrix()) {
        let bytes = encode_matrix(&m).unwrap();
        let back = decode_matrix(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (a, b) in back.iter().zip(m.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(encode_matrix(&back).unwrap(), bytes);
    }

    #[test]
    fn split_shifts_by_one(m in 2usize..20, n in 1usize..5, q in 1usize..4) {
        let states = RealMatrix::from_fn(n, m, |i, k| (i * 100 + k) as f64);
        let inputs = RealMatrix::from_fn(q, m, |i, k| (i * 1000 + k) as f64);
        let ds = SnapshotDataset::new(states.clone(), inputs.clone(), 1.0).unwrap();
        let s = split_snapshots(&ds).unwrap();
        for k in 0..m - 1 {
            prop_assert_eq!(s.x.column(k), states.column(k));
            prop_assert_eq!(s.y.column(k), states.column(k + 1));
            prop_assert_eq!(s.ups.column(k), inputs.column(k));
        }
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = RealMatrix::from_fn(3, 4, |i, j| (i as f64 - 1.5) * (j as f64).exp());
    let p = dir.path().join("m.dmdmat");
    write_matrix(&p, &m).unwrap();
    assert_eq!(read_matrix(&p).unwrap(), m);
    let ds = SnapshotDataset::new(m.clone(), m.rows(0, 2).into_owned(), 0.5).unwrap();
    ds.save(dir.path().join("ds")).unwrap();
    assert_eq!(SnapshotDataset::load(dir.path().join("ds")).unwrap(), ds);
}
