//! `QFBK` feature container: `"QFBK" | frames u32 | dim u32 | f32 × frames·dim`.

use std::fs;
use std::path::Path;

use super::binary::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"QFBK";

pub fn features_to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let (frames, dim) = t.dims2()?;
    let mut w = Writer::default();
    w.buf.extend_from_slice(FEATURE_MAGIC);
    w.len_u32(frames)?;
    w.len_u32(dim)?;
    let data: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
    w.f32s(&data);
    Ok(w.buf)
}

pub fn features_from_bytes(buf: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(buf);
    r.magic(FEATURE_MAGIC)?;
    let frames = r.u32("frame count")? as usize;
    let dim = r.u32("feature dim")? as usize;
    let want = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(4, "frame count × dim overflows"))?;
    if r.remaining() != want {
        return Err(Error::format(
            12,
            format!("payload is {} bytes, expected {want} for {frames}×{dim}", r.remaining()),
        ));
    }
    let data = r.f32s(frames * dim, "features")?;
    Tensor::new(vec![frames, dim], data.into_iter().map(f64::from).collect())
}

pub fn write_features(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, features_to_bytes(t)?)?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Tensor> {
    features_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let t = Tensor::new(vec![3, 2], vec![0.5, -1.25, 3.0, 0.0, 1e-3f32 as f64, 7.0]).unwrap();
        let b = features_to_bytes(&t).unwrap();
        assert_eq!(b.len(), 12 + 24);
        assert_eq!(features_from_bytes(&b).unwrap(), t);
        let err = features_from_bytes(&b[..b.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("21 bytes, expected 24"), "{err}");
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(features_from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn empty_file_is_valid() {
        let t = Tensor::new(vec![0, 80], vec![]).unwrap();
        let back = features_from_bytes(&features_to_bytes(&t).unwrap()).unwrap();
        assert_eq!(back.shape(), &[0, 80]);
        assert!(back.is_empty());
    }
}
