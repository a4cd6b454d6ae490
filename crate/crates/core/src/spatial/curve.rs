//! Morton (Z-order) and Hilbert codecs for 3-D integer cells.
//!
//! Morton interleave convention: bit `t` of x, y, z lands on code bits
//! `3t`, `3t+1`, `3t+2`. Hilbert uses Skilling's transpose form, with x
//! contributing the most significant bit of each 3-bit group.

use crate::error::{invalid, Result};

pub type CellCoord = [u32; 3];

/// Codes must fit in 64 bits.
pub const MAX_BITS: u32 = 21;

fn check_bits(bits: u32) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(invalid(format!("bits per axis must be in 1..={MAX_BITS}, got {bits}")));
    }
    Ok(())
}

fn check_cell(cell: CellCoord, bits: u32) -> Result<()> {
    check_bits(bits)?;
    if cell.iter().any(|&c| (c as u64) >> bits != 0) {
        return Err(invalid(format!("cell {cell:?} out of range for {bits} bits per axis")));
    }
    Ok(())
}

fn check_code(code: u64, bits: u32) -> Result<()> {
    check_bits(bits)?;
    if code >> (3 * bits) != 0 {
        return Err(invalid(format!("code {code} out of range for {bits} bits per axis")));
    }
    Ok(())
}

fn spread(x: u32) -> u64 {
    let mut x = x as u64 & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

fn compact(x: u64) -> u32 {
    let mut x = x & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

pub fn morton_encode(cell: CellCoord, bits: u32) -> Result<u64> {
    check_cell(cell, bits)?;
    Ok(spread(cell[0]) | (spread(cell[1]) << 1) | (spread(cell[2]) << 2))
}

pub fn morton_decode(code: u64, bits: u32) -> Result<CellCoord> {
    check_code(code, bits)?;
    Ok([compact(code), compact(code >> 1), compact(code >> 2)])
}

pub fn hilbert_encode(cell: CellCoord, bits: u32) -> Result<u64> {
    check_cell(cell, bits)?;
    let mut x = cell;
    // Inverse undo of excess work.
    let m = 1u32 << (bits - 1);
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode.
    for i in 1..3 {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in &mut x {
        *v ^= t;
    }
    let mut code = 0u64;
    for b in (0..bits).rev() {
        for v in &x {
            code = (code << 1) | ((v >> b) & 1) as u64;
        }
    }
    Ok(code)
}

pub fn hilbert_decode(code: u64, bits: u32) -> Result<CellCoord> {
    check_code(code, bits)?;
    let mut x = [0u32; 3];
    for b in (0..bits).rev() {
        for (i, v) in x.iter_mut().enumerate() {
            let shift = 3 * b + (2 - i as u32);
            *v |= (((code >> shift) & 1) as u32) << b;
        }
    }
    // Gray decode.
    let n = 2u32 << (bits - 1);
    let t = x[2] >> 1;
    for i in (1..3).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    // Undo excess work.
    let mut q = 2u32;
    while q != n {
        let p = q - 1;
        for i in (0..3).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
    Ok(x)
}
