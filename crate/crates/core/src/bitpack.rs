//! Fixed-width field packing.
//!
//! Fields are laid out back to back in a little-endian bit stream: stream bit
//! `k` is bit `k % 8` of byte `k / 8`, and a field's bit `j` sits at stream
//! position `index * width + j`, so the most significant bit of each field is
//! the highest stream position it occupies. Widths are 1..=57 bits.

#[inline]
pub fn packed_len(count: usize, width: u32) -> usize {
    (count * width as usize).div_ceil(8)
}

#[inline]
fn load_u64(bytes: &[u8], at: usize) -> u64 {
    if at + 8 <= bytes.len() {
        u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
    } else {
        let mut w = [0u8; 8];
        let avail = bytes.len().saturating_sub(at);
        w[..avail].copy_from_slice(&bytes[at..at + avail]);
        u64::from_le_bytes(w)
    }
}

/// Reads field `index` of width `width`.
#[inline]
pub fn read_field(bytes: &[u8], index: usize, width: u32) -> u64 {
    debug_assert!((1..=57).contains(&width));
    let bit = index * width as usize;
    let word = load_u64(bytes, bit / 8);
    (word >> (bit % 8)) & ((1u64 << width) - 1)
}

/// Writes field `index`; `value` must fit in `width` bits.
pub fn write_field(bytes: &mut [u8], index: usize, width: u32, value: u64) {
    debug_assert!(value < (1u64 << width));
    let mut bit = index * width as usize;
    let mut v = value;
    let mut left = width;
    while left > 0 {
        let byte = bit / 8;
        let off = (bit % 8) as u32;
        let take = left.min(8 - off);
        let mask = (((1u16 << take) - 1) as u8) << off;
        bytes[byte] = (bytes[byte] & !mask) | (((v as u8) << off) & mask);
        v >>= take;
        left -= take;
        bit += take as usize;
    }
}

pub fn pack_fields(values: &[u64], width: u32) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(values.len(), width)];
    for (i, &v) in values.iter().enumerate() {
        write_field(&mut out, i, width, v);
    }
    out
}

pub fn unpack_fields(bytes: &[u8], count: usize, width: u32) -> Vec<u64> {
    (0..count).map(|i| read_field(bytes, i, width)).collect()
}
