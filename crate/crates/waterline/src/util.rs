//! Small shared helpers: hashing and seed derivation.

/// FNV-1a 64-bit hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive a role-specific seed from one master seed, so a single --seed flag
/// reproduces every randomized stage.
pub fn derive_seed(master: u64, role: &str) -> u64 {
    let mut bytes = master.to_le_bytes().to_vec();
    bytes.extend_from_slice(role.as_bytes());
    fnv1a64(&bytes)
}

/// CRC-32 (IEEE 802.3, reflected) over a byte slice.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}
