//! Textbook RSA over arbitrary-precision integers and the payload frame.
//!
//! This is not production cryptography: there is no OAEP, only a random
//! non-zero pad in front of each block. Key generation is deterministic for a
//! given seed.

use std::fmt;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::HistogramMap;

pub const SUPPORTED_BITS: [usize; 4] = [64, 512, 1024, 2048];
pub const MAGIC: &[u8; 4] = b"STG1";
pub const VERSION: u8 = 1;
const DEFAULT_E: u32 = 65537;

const SMALL_PRIMES: [u32; 54] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233, 239,
    241, 251, 257,
];

/// Miller-Rabin with `rounds` random bases.
pub fn is_probable_prime(n: &BigUint, rounds: usize, rng: &mut impl Rng) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for &p in &SMALL_PRIMES {
        let p = BigUint::from(p);
        if *n == p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return *n == two;
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn random_prime(bits: u64, rng: &mut impl Rng) -> BigUint {
    loop {
        let mut c = rng.gen_biguint(bits);
        // top two bits set so the product has exactly 2*bits bits
        c.set_bit(bits - 1, true);
        c.set_bit(bits - 2, true);
        c.set_bit(0, true);
        if is_probable_prime(&c, 32, rng) {
            return c;
        }
    }
}

fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    a.modinv(m)
}

#[derive(Clone, PartialEq, Eq)]
pub struct RsaKeyPair {
    pub n: BigUint,
    pub e: BigUint,
    pub d: BigUint,
    pub p: BigUint,
    pub q: BigUint,
    pub bits: usize,
}

impl fmt::Debug for RsaKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RsaKeyPair").field("bits", &self.bits).field("n", &self.n).field("e", &self.e).finish_non_exhaustive()
    }
}

impl RsaKeyPair {
    pub fn public_key(&self) -> RsaKey {
        RsaKey { n: self.n.clone(), exponent: self.e.clone() }
    }

    pub fn private_key(&self) -> RsaKey {
        RsaKey { n: self.n.clone(), exponent: self.d.clone() }
    }
}

/// Deterministic key generation from `seed`. The public exponent is 65537
/// unless it shares a factor with lambda(n), in which case the next odd
/// candidate that does not is used.
pub fn keygen(bits: usize, seed: u64) -> Result<RsaKeyPair> {
    if !SUPPORTED_BITS.contains(&bits) {
        return Err(Error::UnsupportedKeySize(bits));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let half = (bits / 2) as u64;
    loop {
        let p = random_prime(half, &mut rng);
        let q = random_prime(half, &mut rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let lambda = (&p - 1u32).lcm(&(&q - 1u32));
        let mut e = BigUint::from(DEFAULT_E);
        while !e.gcd(&lambda).is_one() {
            e += 2u32;
        }
        if e >= lambda {
            continue;
        }
        let d = mod_inverse(&e, &lambda).expect("e is coprime to lambda");
        return Ok(RsaKeyPair { n, e, d, p, q, bits });
    }
}

/// One half of a key pair: the modulus and either exponent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsaKey {
    pub n: BigUint,
    pub exponent: BigUint,
}

impl RsaKey {
    /// Ciphertext block width in bytes.
    pub fn block_bytes(&self) -> usize {
        (self.n.bits() as usize).div_ceil(8)
    }

    fn pad_len(&self) -> usize {
        if self.block_bytes() <= 8 {
            2
        } else {
            8
        }
    }

    /// Plaintext bytes carried per ciphertext block.
    pub fn data_per_block(&self) -> usize {
        self.block_bytes().saturating_sub(2 + self.pad_len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.bits() < 32 || self.n.is_even() {
            return Err(Error::InvalidKey("modulus too small or even".into()));
        }
        if self.exponent.is_zero() || self.exponent >= self.n {
            return Err(Error::InvalidKey("exponent out of range".into()));
        }
        if self.data_per_block() == 0 {
            return Err(Error::InvalidKey("modulus too small to carry data".into()));
        }
        Ok(())
    }

    /// `m^exponent mod n` without any padding.
    pub fn apply_raw(&self, m: &BigUint) -> BigUint {
        m.modpow(&self.exponent, &self.n)
    }

    /// Two decimal lines: modulus, exponent.
    pub fn to_text(&self) -> String {
        format!("{}\n{}\n", self.n, self.exponent)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut next = |what: &str| -> Result<BigUint> {
            let line = lines.next().ok_or_else(|| Error::InvalidKey(format!("missing {what}")))?;
            line.parse::<BigUint>().map_err(|_| Error::InvalidKey(format!("{what} is not a decimal integer")))
        };
        let n = next("modulus")?;
        let exponent = next("exponent")?;
        if lines.next().is_some() {
            return Err(Error::InvalidKey("trailing data after exponent".into()));
        }
        let key = Self { n, exponent };
        key.validate()?;
        Ok(key)
    }

    /// 64-bit digest of the modulus, shared by both halves of a pair.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a
        self.n.to_bytes_be().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    }
}

/// Encrypts `plaintext` in fixed-width blocks, each `0x01 || pad || data`
/// with a non-zero random pad.
pub fn encrypt(plaintext: &[u8], key: &RsaKey, rng: &mut impl Rng) -> Result<Vec<Vec<u8>>> {
    key.validate()?;
    let width = key.block_bytes();
    let mut out = Vec::new();
    for chunk in plaintext.chunks(key.data_per_block()) {
        let mut m = Vec::with_capacity(width);
        m.push(1u8);
        m.extend((0..key.pad_len()).map(|_| rng.gen_range(1..=255u8)));
        m.extend_from_slice(chunk);
        let c = key.apply_raw(&BigUint::from_bytes_be(&m));
        out.push(left_pad(&c.to_bytes_be(), width));
    }
    Ok(out)
}

fn left_pad(bytes: &[u8], width: usize) -> Vec<u8> {
    let mut v = vec![0u8; width.saturating_sub(bytes.len())];
    v.extend_from_slice(bytes);
    v
}

/// Inverse of [`encrypt`]. A block that does not decode to a well-formed pad
/// (typically a wrong key) is reported as corruption.
pub fn decrypt(blocks: &[Vec<u8>], key: &RsaKey) -> Result<Vec<u8>> {
    key.validate()?;
    let width = key.block_bytes();
    let mut out = Vec::new();
    for block in blocks {
        if block.len() != width {
            return Err(Error::NotAPayload(format!("ciphertext block of {} bytes, expected {width}", block.len())));
        }
        let c = BigUint::from_bytes_be(block);
        if c >= key.n {
            return Err(Error::PayloadCorrupted);
        }
        let m = key.apply_raw(&c).to_bytes_be();
        let pad = key.pad_len();
        if m.len() < 1 + pad || m[0] != 1 || m[1..1 + pad].contains(&0) || m.len() > width - 1 {
            return Err(Error::PayloadCorrupted);
        }
        out.extend_from_slice(&m[1 + pad..]);
    }
    Ok(out)
}

/// Framed, encrypted payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub version: u8,
    pub plaintext_len: u32,
    pub crc: u32,
    pub histogram: HistogramMap,
    pub blocks: Vec<Vec<u8>>,
}

impl Payload {
    /// Bytes of header that precede the histogram map.
    pub const FIXED_HEADER: usize = 4 + 1 + 4 + 4;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.plaintext_len.to_be_bytes());
        out.extend_from_slice(&self.crc.to_be_bytes());
        out.extend_from_slice(&self.histogram.to_bytes());
        for b in &self.blocks {
            out.extend_from_slice(b);
        }
        out
    }

    /// Parses a frame from the front of `bytes` for a key with the given
    /// block geometry. Returns the payload and the bytes consumed.
    pub fn parse(bytes: &[u8], key: &RsaKey) -> Result<(Self, usize)> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(Error::NoPayload);
        }
        let header = bytes.get(..Self::FIXED_HEADER).ok_or_else(|| Error::NotAPayload("truncated header".into()))?;
        let version = header[4];
        if version != VERSION {
            return Err(Error::NotAPayload(format!("unsupported version {version}")));
        }
        let plaintext_len = u32::from_be_bytes(header[5..9].try_into().expect("4 bytes"));
        let crc = u32::from_be_bytes(header[9..13].try_into().expect("4 bytes"));
        let (histogram, used) = HistogramMap::from_bytes(&bytes[Self::FIXED_HEADER..])
            .ok_or_else(|| Error::NotAPayload("truncated histogram map".into()))?;
        let mut pos = Self::FIXED_HEADER + used;
        let per = key.data_per_block();
        if per == 0 {
            return Err(Error::InvalidKey("modulus too small to carry data".into()));
        }
        let count = (plaintext_len as usize).div_ceil(per);
        let width = key.block_bytes();
        let body_len = count.checked_mul(width).ok_or_else(|| Error::NotAPayload("length overflow".into()))?;
        let body = bytes
            .get(pos..pos.saturating_add(body_len))
            .ok_or_else(|| Error::NotAPayload("truncated ciphertext".into()))?;
        let blocks = body.chunks_exact(width).map(<[u8]>::to_vec).collect();
        pos += body_len;
        Ok((Self { version, plaintext_len, crc, histogram, blocks }, pos))
    }

    /// Length in bytes of a frame for `plaintext_len` bytes under `key`.
    pub fn framed_len(plaintext_len: usize, histogram: &HistogramMap, key: &RsaKey) -> usize {
        let per = key.data_per_block().max(1);
        Self::FIXED_HEADER + histogram.to_bytes().len() + plaintext_len.div_ceil(per) * key.block_bytes()
    }
}

/// Encrypts and frames a message.
pub fn seal(plaintext: &[u8], histogram: HistogramMap, key: &RsaKey, rng: &mut impl Rng) -> Result<Payload> {
    let len = u32::try_from(plaintext.len()).map_err(|_| Error::InvalidParam("plaintext longer than 4 GiB".into()))?;
    Ok(Payload {
        version: VERSION,
        plaintext_len: len,
        crc: crc32fast::hash(plaintext),
        histogram,
        blocks: encrypt(plaintext, key, rng)?,
    })
}

/// Decrypts a payload and verifies its length and checksum.
pub fn open(payload: &Payload, key: &RsaKey) -> Result<Vec<u8>> {
    let plain = decrypt(&payload.blocks, key)?;
    if plain.len() != payload.plaintext_len as usize || crc32fast::hash(&plain) != payload.crc {
        return Err(Error::PayloadCorrupted);
    }
    Ok(plain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn test_pair() -> RsaKeyPair {
        keygen(64, 7).unwrap()
    }

    // Square-and-multiply in u128, independent of the big-integer path.
    fn modpow_u128(mut b: u128, mut e: u128, m: u128) -> u128 {
        let mut r = 1u128;
        b %= m;
        while e > 0 {
            if e & 1 == 1 {
                r = mulmod(r, b, m);
            }
            b = mulmod(b, b, m);
            e >>= 1;
        }
        r
    }

    fn mulmod(a: u128, b: u128, m: u128) -> u128 {
        // operands are < 2^64, so the product fits
        (a * b) % m
    }

    fn gcd_u128(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            gcd_u128(b, a % b)
        }
    }

    fn to_u128(x: &BigUint) -> u128 {
        x.to_u64_digits().iter().rev().fold(0u128, |acc, &d| (acc << 64) | d as u128)
    }

    #[test]
    fn keygen_is_deterministic_and_consistent() {
        let a = test_pair();
        assert_eq!(a, keygen(64, 7).unwrap());
        assert_ne!(a.n, keygen(64, 8).unwrap().n);
        assert_eq!(a.n.bits(), 64);
        assert!(matches!(keygen(100, 1), Err(Error::UnsupportedKeySize(100))));
    }

    #[test]
    fn public_exponent_rule() {
        let mut bumped = 0;
        for seed in 0..40 {
            let k = keygen(64, seed).unwrap();
            let (p, q) = (to_u128(&k.p), to_u128(&k.q));
            assert_eq!(p * q, to_u128(&k.n));
            let lambda = (p - 1) / gcd_u128(p - 1, q - 1) * (q - 1);
            let e = to_u128(&k.e);
            assert_eq!(gcd_u128(e, lambda), 1);
            let mut c = 65537;
            while c < e {
                assert_ne!(gcd_u128(c, lambda), 1, "skipped usable exponent {c}");
                c += 2;
            }
            bumped += usize::from(e != 65537);
            assert_eq!(mulmod(e, to_u128(&k.d), lambda), 1);
        }
        assert!(bumped < 40);
    }

    #[test]
    fn raw_block_matches_independent_modpow() {
        let k = test_pair();
        let n = to_u128(&k.n);
        let e = to_u128(&k.e);
        for m in [0u128, 1, 0x41, 0xff, 0x01_41] {
            let big = k.public_key().apply_raw(&BigUint::from(m as u64));
            assert_eq!(to_u128(&big), modpow_u128(m, e, n));
        }
    }

    #[test]
    fn raw_round_trip_many_blocks() {
        let k = test_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c = rng.gen_biguint_below(&k.n);
            let m = k.private_key().apply_raw(&c);
            assert_eq!(k.public_key().apply_raw(&m), c);
        }
    }

    #[test]
    fn encrypt_decrypt_round_trip() {
        let k = test_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(encrypt(&[], &k.public_key(), &mut rng).unwrap().is_empty());
        for len in [1usize, 3, 4, 5, 100, 10_240] {
            let msg: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let blocks = encrypt(&msg, &k.public_key(), &mut rng).unwrap();
            assert!(blocks.iter().all(|b| b.len() == 8));
            assert_eq!(decrypt(&blocks, &k.private_key()).unwrap(), msg);
        }
    }

    #[test]
    fn frame_round_trip_and_errors() {
        let k = test_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = HistogramMap { low_cut: 4, high_cut: 251, relocated: vec![(3, 0), (9, 255)] };
        for len in [0usize, 1, 17, 300] {
            let msg: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let p = seal(&msg, map.clone(), &k.public_key(), &mut rng).unwrap();
            let bytes = p.to_bytes();
            assert_eq!(bytes.len(), Payload::framed_len(len, &map, &k.public_key()));
            let mut padded = bytes.clone();
            padded.extend_from_slice(&[0xaa; 7]);
            let (q, used) = Payload::parse(&padded, &k.private_key()).unwrap();
            assert_eq!(used, bytes.len());
            assert_eq!(q, p);
            assert_eq!(open(&q, &k.private_key()).unwrap(), msg);
            for cut in 0..bytes.len() {
                assert!(Payload::parse(&bytes[..cut], &k.private_key()).is_err());
            }
        }
        assert_eq!(Payload::parse(b"JUNKJUNKJUNKJUNK", &k.private_key()), Err(Error::NoPayload));
        let mut bad = seal(b"x", HistogramMap::default(), &k.public_key(), &mut rng).unwrap().to_bytes();
        bad[4] = 9;
        assert!(matches!(Payload::parse(&bad, &k.private_key()), Err(Error::NotAPayload(_))));
    }

    #[test]
    fn tampering_is_detected() {
        let k = test_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let msg = b"patient 42: all clear".to_vec();
        let p = seal(&msg, HistogramMap::default(), &k.public_key(), &mut rng).unwrap();
        for bit in 0..p.blocks.len() * 64 {
            let mut q = p.clone();
            q.blocks[bit / 64][(bit % 64) / 8] ^= 1 << (bit % 8);
            assert!(matches!(open(&q, &k.private_key()), Err(Error::PayloadCorrupted)), "bit {bit}");
        }
    }

    #[test]
    fn wrong_key_is_rejected() {
        let k = test_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let msg = b"secret".to_vec();
        let p = seal(&msg, HistogramMap::default(), &k.public_key(), &mut rng).unwrap();
        for seed in 100..200 {
            let other = keygen(64, seed).unwrap();
            let res = open(&p, &other.private_key());
            assert!(matches!(res, Err(Error::PayloadCorrupted)), "seed {seed}: {res:?}");
        }
    }

    #[test]
    fn key_text_round_trip() {
        let k = test_pair();
        let text = k.public_key().to_text();
        assert_eq!(RsaKey::from_text(&text).unwrap(), k.public_key());
        assert!(RsaKey::from_text("12\n").is_err());
        assert!(RsaKey::from_text("abc\n3\n").is_err());
        assert_eq!(k.public_key().fingerprint(), k.private_key().fingerprint());
    }

    #[test]
    fn larger_keys() {
        let k = keygen(512, 1).unwrap();
        assert_eq!(k.n.bits(), 512);
        assert_eq!(k.public_key().data_per_block(), 54);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let msg: Vec<u8> = (0..500).map(|_| rng.gen()).collect();
        let blocks = encrypt(&msg, &k.public_key(), &mut rng).unwrap();
        assert_eq!(decrypt(&blocks, &k.private_key()).unwrap(), msg);
    }
}
