use super::RankId;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over `bytes`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Maps `key` onto one of `n` shards: `fnv1a64(key) mod n`.
///
/// # Panics
///
/// Panics if `n == 0`.
pub fn hash_shard(key: &[u8], n: u32) -> RankId {
    assert!(n >= 1, "hash_shard needs at least one shard");
    RankId((fnv1a64(key) % u64::from(n)) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_shard_is_always_zero() {
        for key in [&b""[..], b"a", b"corona", b"\xff\x00"] {
            assert_eq!(hash_shard(key, 1), RankId(0));
        }
    }

    // Published FNV-1a 64 test vectors.
    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    // Frozen from an independent Python implementation:
    //   h = 0xcbf29ce484222325
    //   for c in b"corona": h = ((h ^ c) * 0x100000001b3) % 2**64
    #[test]
    fn corona_on_four_shards() {
        assert_eq!(fnv1a64(b"corona"), CORONA_FNV);
        assert_eq!(hash_shard(b"corona", 4), RankId(1));
    }

    const CORONA_FNV: u64 = 0x8fd3_01da_b88f_73d1;

    proptest! {
        #[test]
        fn shard_is_pure_and_in_range(key in proptest::collection::vec(any::<u8>(), 0..32), n in 1u32..64) {
            let a = hash_shard(&key, n);
            let b = hash_shard(&key, n);
            prop_assert_eq!(a, b);
            prop_assert!(a.0 < n);
        }
    }
}
