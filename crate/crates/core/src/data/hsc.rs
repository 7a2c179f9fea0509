//! The HSC container: a little-endian header followed by raw `f32` samples.
//!
//! ```text
//! "HSCB" | version u32 = 1 | H u32 | W u32 | C u32 | flags u32
//! [C × f64 wavelengths if flags bit 0] | H·W·C × f32, row-major H, W, C
//! ```

use std::fs;
use std::path::Path;

use crate::data::ImageCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HSCB";
pub const VERSION: u32 = 1;
const FLAG_WAVELENGTHS: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode(cube: &ImageCube) -> Vec<u8> {
    let (h, w, c) = cube.dims();
    let wl = cube.wavelengths();
    let mut out = Vec::with_capacity(HEADER_LEN + wl.map_or(0, |v| v.len() * 8) + h * w * c * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, h as u32, w as u32, c as u32, if wl.is_some() { FLAG_WAVELENGTHS } else { 0 }] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(wl) = wl {
        for v in wl {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in cube.tensor().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ImageCube> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("truncated header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, h, w, c, flags) = (word(0), word(1) as usize, word(2) as usize, word(3) as usize, word(4));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Format(format!("empty dimensions {h}x{w}x{c}")));
    }
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let mut off = HEADER_LEN;
    let wavelengths = if flags & FLAG_WAVELENGTHS != 0 {
        let end = off + 8 * c;
        if bytes.len() < end {
            return Err(Error::Format("truncated payload".into()));
        }
        let wl = bytes[off..end].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        off = end;
        Some(wl)
    } else {
        None
    };
    if bytes.len() - off != count * 4 {
        return Err(Error::Format(if bytes.len() - off < count * 4 {
            "truncated payload".into()
        } else {
            "trailing bytes after payload".into()
        }));
    }
    let data: Vec<f32> = bytes[off..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    ImageCube::new(Tensor::from_vec(&[h, w, c], data)?, wavelengths)
}

pub fn save_hsc(cube: &ImageCube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(cube)).map_err(|e| Error::io(path, e))
}

pub fn load_hsc(path: impl AsRef<Path>) -> Result<ImageCube> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> ImageCube {
        let t = Tensor::from_fn(&[4, 4, 3], |i| (i as f32 * 0.137).fract());
        ImageCube::new(t, Some(vec![450.0, 550.0, 650.0])).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = cube();
        let back = decode(&encode(&c)).unwrap();
        assert_eq!(back, c);
        let bits = |c: &ImageCube| c.tensor().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&c));
    }

    #[test]
    fn zero_bytes_is_bad_magic() {
        let err = decode(&[]).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn inconsistent_header_is_truncated_payload() {
        let mut bytes = encode(&ImageCube::from_tensor(Tensor::zeros(&[4, 4, 3])).unwrap());
        bytes[8..12].copy_from_slice(&5u32.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
    }

    #[test]
    fn overflowing_dimensions_rejected() {
        let mut bytes = encode(&ImageCube::from_tensor(Tensor::zeros(&[1, 1, 1])).unwrap());
        for i in 1..4 {
            bytes[4 + 4 * i..8 + 4 * i].copy_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }
}
