mod common;

use cbtnet_core::mvcodec::*;
use cbtnet_core::{MvFieldSet, RefDir};
use common::*;
use rand::Rng;

fn q(u: i32, v: i32) -> QuarterPelMv {
    QuarterPelMv { u_q4: u, v_q4: v }
}

#[test]
fn quantization_examples() {
    assert_eq!(quantize_mv(0.0, 0.0).unwrap(), q(0, 0));
    assert_eq!(quantize_mv(1.25, -2.5).unwrap(), q(5, -10));
    assert_eq!(quantize_mv(0.126, -0.126).unwrap(), q(1, -1));
    assert_eq!(quantize_mv(0.125, -0.125).unwrap(), q(1, -1));
    assert_eq!(quantize_mv(127.0, -127.0).unwrap(), q(508, -508));
    assert!(quantize_mv(127.5, 0.0).is_err());
    assert!(quantize_mv(0.0, f32::NAN).is_err());
}

#[test]
fn quantization_error_is_at_most_an_eighth() {
    // Sweep in 1/64 steps; the rounding rule is checked against a
    // sign-symmetric floor formula.
    for i in -127 * 64..=127 * 64 {
        let u = i as f32 / 64.0;
        let got = quantize_mv(u, 0.0).unwrap().u_q4;
        let want = (u.abs() as f64 * 4.0 + 0.5).floor() as i32 * if u < 0.0 { -1 } else { 1 };
        assert_eq!(got, want, "u={u}");
        assert!((got as f64 / 4.0 - u as f64).abs() <= 0.125 + 1e-12);
    }
}

#[test]
fn packing_examples() {
    assert_eq!(pack_mv(q(0, 0)).unwrap(), 0);
    assert_eq!(pack_mv(q(-10, 5)).unwrap(), 0xFFF6_0005);
    assert_eq!(unpack_mv(0xFFF6_0005), q(-10, 5));
    assert!(pack_mv(q(40_000, 0)).is_err());
}

#[test]
fn pack_unpack_full_sweep() {
    for u in -508..=508 {
        for v in -508..=508 {
            assert_eq!(unpack_mv(pack_mv(q(u, v)).unwrap()), q(u, v));
        }
    }
}

#[test]
fn slot_order_is_size_major_raster() {
    assert_eq!(slot_position(0), (0, 0, 0));
    assert_eq!(slot_position(1), (1, 0, 0));
    assert_eq!(slot_position(2), (1, 0, 1));
    assert_eq!(slot_position(4), (1, 1, 1));
    assert_eq!(slot_position(5), (2, 0, 0));
    assert_eq!(slot_position(20), (2, 3, 3));
    assert_eq!(slot_position(21), (3, 0, 0));
    assert_eq!(slot_position(84), (3, 7, 7));
}

fn random_set(w: usize, h: usize, seed: u64) -> MvFieldSet {
    let mut r = rng(seed);
    let mut s = MvFieldSet::zeros(w, h).unwrap();
    for f in &mut s.fields {
        for x in &mut f.data {
            *x = r.gen_range(-127.0..=127.0f32);
        }
    }
    s
}

#[test]
fn zero_fields_give_zero_matrix() {
    let p = assemble_superblocks(&MvFieldSet::zeros(128, 64).unwrap()).unwrap();
    assert_eq!(p.dims(), [2, 2, 1, 85]);
    assert!(p.words.iter().all(|&w| w == 0));
}

#[test]
fn single_superblock_entries_reproduce_fields() {
    let mut s = MvFieldSet::zeros(64, 64).unwrap();
    for (si, f) in s.fields.iter_mut().enumerate() {
        for r in 0..f.rows {
            for c in 0..f.cols {
                let tag = (si * 100 + r * 10 + c) as f32 / 8.0;
                f.set_mv(r, c, RefDir::Past, (tag, -tag));
                f.set_mv(r, c, RefDir::Future, (-tag / 2.0, tag / 2.0));
            }
        }
    }
    let p = assemble_superblocks(&s).unwrap();
    for k in 0..85 {
        let (si, r, c) = slot_position(k);
        let tag = (si * 100 + r * 10 + c) as f32 / 8.0;
        assert_eq!(unpack_mv(p.get(0, 0, 0, k)), quantize_mv(tag, -tag).unwrap());
        assert_eq!(
            unpack_mv(p.get(1, 0, 0, k)),
            quantize_mv(-tag / 2.0, tag / 2.0).unwrap()
        );
    }
    assert_eq!(scatter_superblocks(&p).unwrap(), quantize_fields(&s).unwrap());
}

#[test]
fn assemble_scatter_round_trip() {
    let s = random_set(192, 128, 3);
    let quantized = quantize_fields(&s).unwrap();
    let p = assemble_superblocks(&s).unwrap();
    assert_eq!(scatter_superblocks(&p).unwrap(), quantized);
    assert_eq!(assemble_superblocks(&quantized).unwrap(), p);
}

#[test]
fn full_hd_dims() {
    let p = assemble_superblocks(&MvFieldSet::zeros(1920, 1088).unwrap()).unwrap();
    assert_eq!(p.dims(), [2, 30, 17, 85]);
    assert_eq!(p.words.len(), 2 * 30 * 17 * 85);
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<_> = (0..3)
        .map(|i| assemble_superblocks(&random_set(128, 192, i)).unwrap())
        .collect();
    let header = MvFileHeader {
        width: 128,
        height: 192,
        ordering: ORDER_SIZE_MAJOR_RASTER,
    };
    let path = dir.path().join("m.cbmv");
    write_mv_file(&path, &header, &frames).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"CBMV");
    assert_eq!(bytes.len(), 24 + 3 * 2 * 2 * 3 * 85 * 4);
    let (h, back) = read_mv_file(&path).unwrap();
    assert_eq!(h, header);
    assert_eq!(back, frames);
    assert_eq!(encode_mv_file(&h, &back).unwrap(), bytes);
}

#[test]
fn empty_file_is_valid() {
    let header = MvFileHeader {
        width: 64,
        height: 64,
        ordering: ORDER_SIZE_MAJOR_RASTER,
    };
    let bytes = encode_mv_file(&header, &[]).unwrap();
    let (h, frames) = decode_mv_file(&bytes, std::path::Path::new("mem")).unwrap();
    assert_eq!(h, header);
    assert!(frames.is_empty());
}

#[test]
fn inconsistent_payload_is_rejected() {
    let header = MvFileHeader {
        width: 64,
        height: 64,
        ordering: ORDER_SIZE_MAJOR_RASTER,
    };
    let frame = assemble_superblocks(&MvFieldSet::zeros(64, 64).unwrap()).unwrap();
    let mut bytes = encode_mv_file(&header, &[frame.clone()]).unwrap();
    bytes.extend([0, 0, 0, 0]);
    assert!(decode_mv_file(&bytes, std::path::Path::new("mem")).is_err());
    bytes.truncate(bytes.len() - 12);
    assert!(decode_mv_file(&bytes, std::path::Path::new("mem")).is_err());
    let mut bad = encode_mv_file(&header, &[frame.clone()]).unwrap();
    bad[0] = b'X';
    assert!(decode_mv_file(&bad, std::path::Path::new("mem")).is_err());
    // A frame whose grid disagrees with the header.
    let big = assemble_superblocks(&MvFieldSet::zeros(128, 64).unwrap()).unwrap();
    assert!(encode_mv_file(&header, &[big]).is_err());
}
