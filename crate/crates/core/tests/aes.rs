//! S-box tables against an independent GF(2^8) derivation.

use proptest::prelude::*;
use scaforge_core::aes::{hypothesis_labels, inv_sbox, sbox, sbox_label, verify_tables};

fn gf_mul(mut a: u8, mut b: u8) -> u8 {
    let mut r = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            r ^= a;
        }
        let carry = a & 0x80 != 0;
        a <<= 1;
        if carry {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    r
}

fn gf_inv(x: u8) -> u8 {
    if x == 0 {
        return 0;
    }
    (1..=255u8).find(|&y| gf_mul(x, y) == 1).unwrap()
}

/// Multiplicative inverse followed by the FIPS-197 affine map.
fn sbox_oracle(x: u8) -> u8 {
    let b = gf_inv(x);
    b ^ b.rotate_left(1) ^ b.rotate_left(2) ^ b.rotate_left(3) ^ b.rotate_left(4) ^ 0x63
}

#[test]
fn forward_table_matches_field_oracle() {
    for x in 0..=255u8 {
        assert_eq!(sbox(x), sbox_oracle(x), "x = {x:#04x}");
    }
    verify_tables().unwrap();
}

#[test]
fn bijective_and_inverse() {
    let mut image: Vec<u8> = (0..=255u8).map(sbox).collect();
    image.sort_unstable();
    assert_eq!(image, (0..=255u8).collect::<Vec<_>>());
    for x in 0..=255u8 {
        assert_eq!(inv_sbox(sbox(x)), x);
        assert_eq!(sbox(inv_sbox(x)), x);
    }
}

#[test]
fn label_is_injective_in_key() {
    for pt in [0u8, 0x5a, 0xff] {
        let mut seen = [false; 256];
        for k in 0..=255u8 {
            let y = sbox_label(pt, k) as usize;
            assert!(!seen[y]);
            seen[y] = true;
        }
    }
}

proptest! {
    #[test]
    fn hypothesis_labels_match_loop(pts in proptest::collection::vec(any::<u8>(), 1..64), k in any::<u8>()) {
        let got = hypothesis_labels(&pts, k);
        let mut want = Vec::new();
        for &p in &pts {
            want.push(sbox_oracle(p ^ k));
        }
        prop_assert_eq!(got, want);
    }
}
