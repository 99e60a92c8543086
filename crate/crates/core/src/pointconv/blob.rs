//! Binary weight interchange.
//!
//! A model blob is `MODEL_MAGIC`, a `u64` record count, then that many kernel
//! records. Each record is:
//!
//! ```text
//! KERNEL_MAGIC  4 bytes
//! k             u64
//! c_in          u64
//! c_out         u64
//! n_weights     u64   (= k^3 * c_in * c_out)
//! n_bias        u64   (= c_out)
//! weights       n_weights x f32, layout [ix][iy][iz][c_in][c_out]
//! bias          n_bias x f32
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use super::ConvKernel;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"PWCM";
pub const KERNEL_MAGIC: [u8; 4] = *b"PWCK";

/// Refuse records claiming more values than this.
const MAX_VALUES: u64 = 1 << 32;

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_magic<R: Read>(r: &mut R, want: [u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if m != want {
        return Err(Error::Blob(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(&want)
        )));
    }
    Ok(())
}

fn get_f32s<R: Read>(r: &mut R, n: u64) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n as usize * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

impl ConvKernel {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&KERNEL_MAGIC)?;
        for v in [self.k, self.c_in, self.c_out, self.weights.len(), self.bias.len()] {
            put_u64(w, v as u64)?;
        }
        let mut buf = Vec::with_capacity((self.weights.len() + self.bias.len()) * 4);
        for v in self.weights.iter().chain(&self.bias) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        get_magic(r, KERNEL_MAGIC)?;
        let k = get_u64(r)?;
        let c_in = get_u64(r)?;
        let c_out = get_u64(r)?;
        let n_w = get_u64(r)?;
        let n_b = get_u64(r)?;
        let expected = k
            .checked_pow(3)
            .and_then(|v| v.checked_mul(c_in))
            .and_then(|v| v.checked_mul(c_out));
        if expected != Some(n_w) || n_b != c_out || n_w > MAX_VALUES {
            return Err(Error::Blob(format!(
                "inconsistent kernel header: k={k} c_in={c_in} c_out={c_out} n_weights={n_w} n_bias={n_b}"
            )));
        }
        let weights = get_f32s(r, n_w)?;
        let bias = get_f32s(r, n_b)?;
        ConvKernel::new(k as usize, c_in as usize, c_out as usize, weights, bias)
    }
}

/// Write a model blob holding `kernels` in order.
pub fn write_kernels<'a, W: Write>(w: &mut W, kernels: impl IntoIterator<Item = &'a ConvKernel>) -> Result<()> {
    let kernels: Vec<&ConvKernel> = kernels.into_iter().collect();
    w.write_all(&MODEL_MAGIC)?;
    put_u64(w, kernels.len() as u64)?;
    for k in kernels {
        k.write_to(w)?;
    }
    Ok(())
}

pub fn read_kernels<R: Read>(r: &mut R) -> Result<Vec<ConvKernel>> {
    get_magic(r, MODEL_MAGIC)?;
    let n = get_u64(r)?;
    (0..n).map(|_| ConvKernel::read_from(r)).collect()
}
