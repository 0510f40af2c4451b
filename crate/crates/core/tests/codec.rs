use half::f16;
use palm_engine::codec::{compress, decompress, template_size, CompressedTemplate};
use palm_engine::embedding::Embedding;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent f64 -> binary16 encoder, round to nearest, ties to even.
fn f16_bits(x: f64) -> u16 {
    let sign = if x.is_sign_negative() { 0x8000u16 } else { 0 };
    let a = x.abs();
    if a == 0.0 {
        return sign;
    }
    // Work in units of the smallest subnormal (2^-24) or the value's ulp.
    let mut e = a.log2().floor() as i32;
    if 2f64.powi(e) > a {
        e -= 1;
    }
    if e < -14 {
        // Subnormal: value = m * 2^-24.
        let m = round_even(a * 2f64.powi(24));
        return sign | m as u16; // m == 1024 rolls into the smallest normal
    }
    let mut m = round_even((a / 2f64.powi(e) - 1.0) * 1024.0);
    if m == 1024 {
        m = 0;
        e += 1;
    }
    assert!(e <= 15, "overflow");
    sign | (((e + 15) as u16) << 10) | m as u16
}

fn round_even(v: f64) -> u64 {
    let f = v.floor();
    let d = v - f;
    let f = f as u64;
    if d > 0.5 || (d == 0.5 && f % 2 == 1) {
        f + 1
    } else {
        f
    }
}

#[test]
fn independent_half_encoder_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20_000 {
        let x: f64 = rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-7..4));
        assert_eq!(f16_bits(x), f16::from_f64(x).to_bits(), "{x}");
    }
    for x in [0.0, 1.0, -2.0, 0.5, 65504.0, 6.103515625e-5, 5.960464477539063e-8, 2.9802322387695312e-8] {
        assert_eq!(f16_bits(x), f16::from_f64(x).to_bits(), "{x}");
    }
}

#[test]
fn single_code_byte_layout() {
    let min = f16::from_bits(f16_bits(0.0));
    let max = f16::from_bits(f16_bits(1.0));
    let t = CompressedTemplate::from_parts(vec![0x7f], min, max);
    assert_eq!(t.to_bytes(), [0x00, 0x00, 0x00, 0x3c, 0x7f]);
    assert_eq!(CompressedTemplate::from_bytes(&[0x00, 0x00, 0x00, 0x3c, 0x7f]).unwrap(), t);
}

#[test]
fn header_holds_half_precision_extrema() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let v: Vec<f64> = (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bytes = compress(&Embedding::new(v).unwrap()).unwrap().to_bytes();
        assert_eq!(u16::from_le_bytes([bytes[0], bytes[1]]), f16_bits(lo));
        assert_eq!(u16::from_le_bytes([bytes[2], bytes[3]]), f16_bits(hi));
    }
}

#[test]
fn template_of_512_is_516_bytes() {
    let e = Embedding::new((0..512).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    assert_eq!(compress(&e).unwrap().to_bytes().len(), 516);
    assert_eq!(template_size(512), 516);
}

#[test]
fn codes_match_scalar_quantizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let v: Vec<f64> = (0..384).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let expected: Vec<u8> = v.iter().map(|x| round_even((x - lo) / (hi - lo) * 255.0) as u8).collect();
        assert_eq!(compress(&Embedding::new(v).unwrap()).unwrap().codes(), expected.as_slice());
    }
}

#[test]
fn round_trip_error_bound_over_1000_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let v: Vec<f64> = (0..384).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let half_err = |x: f64| (f64::from(f16::from_bits(f16_bits(x))) - x).abs();
        let bound = (hi - lo) / 255.0 / 2.0 + half_err(lo).max(half_err(hi)) + 1e-12;
        let back = decompress(&compress(&Embedding::new(v.clone()).unwrap()).unwrap()).unwrap();
        for (a, b) in v.iter().zip(back.values()) {
            assert!((a - b).abs() <= bound, "{a} -> {b}, bound {bound}");
        }
    }
}

#[test]
fn recompression_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        let dim = rng.gen_range(2..600);
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let first = compress(&Embedding::new(v).unwrap()).unwrap();
        let second = compress(&decompress(&first).unwrap()).unwrap();
        assert_eq!(first.codes(), second.codes());
    }
}

proptest! {
    #[test]
    fn bytes_round_trip(codes in prop::collection::vec(any::<u8>(), 1..300), a in -100.0f32..100.0, b in -100.0f32..100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t = CompressedTemplate::from_parts(codes, f16::from_f32(lo), f16::from_f32(hi));
        let bytes = t.to_bytes();
        prop_assert_eq!(bytes.len(), template_size(t.dim()));
        prop_assert_eq!(CompressedTemplate::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn decompressed_values_stay_within_stored_bounds(v in prop::collection::vec(-50.0f64..50.0, 1..200)) {
        let t = compress(&Embedding::new(v).unwrap()).unwrap();
        let (lo, hi) = (t.min_val().to_f64(), t.max_val().to_f64());
        for x in decompress(&t).unwrap().values() {
            prop_assert!(*x >= lo - 1e-9 && *x <= hi + 1e-9);
        }
    }

    #[test]
    fn truncated_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..8)) {
        let _ = CompressedTemplate::from_bytes(&bytes);
    }
}
