//! SPT1 binary tensor format.
//!
//! Layout: ASCII magic `SPT1`, one dtype byte (0 = u8, 1 = f64, 2 = u32),
//! one ndim byte, `ndim` little-endian u32 dimensions, then the raw
//! little-endian payload in row-major order. Round-trips are bit-exact.
//!
//! The u32 dtype exists for superpixel-id grids, whose ids routinely exceed
//! 255; writers use u8 whenever the values fit.

use std::fs;
use std::path::Path;

use crate::error::{Result, SpError};
use crate::grid::{GridShape, LabelGrid, ProbGrid};

const MAGIC: &[u8; 4] = b"SPT1";

/// An n-dimensional tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    U8 { dims: Vec<u32>, data: Vec<u8> },
    F64 { dims: Vec<u32>, data: Vec<f64> },
    U32 { dims: Vec<u32>, data: Vec<u32> },
}

impl Tensor {
    pub fn dims(&self) -> &[u32] {
        match self {
            Tensor::U8 { dims, .. } => dims,
            Tensor::F64 { dims, .. } => dims,
            Tensor::U32 { dims, .. } => dims,
        }
    }

    fn element_count(dims: &[u32]) -> usize {
        dims.iter().map(|&d| d as usize).product()
    }
}

fn format_err(offset: usize, message: impl Into<String>) -> SpError {
    SpError::Format {
        offset,
        message: message.into(),
    }
}

/// Serialize a tensor to bytes.
pub fn tensor_to_bytes(tensor: &Tensor) -> Result<Vec<u8>> {
    let dims = tensor.dims();
    if dims.iter().any(|&d| d == 0) {
        return Err(SpError::InvalidParameter("zero-sized dimension".into()));
    }
    if dims.len() > 255 {
        return Err(SpError::InvalidParameter("too many dimensions".into()));
    }
    let count = Tensor::element_count(dims);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let dtype = match tensor {
        Tensor::U8 { .. } => 0u8,
        Tensor::F64 { .. } => 1,
        Tensor::U32 { .. } => 2,
    };
    out.push(dtype);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match tensor {
        Tensor::U8 { data, .. } => {
            if data.len() != count {
                return Err(SpError::InvalidParameter("dims/data length mismatch".into()));
            }
            out.extend_from_slice(data);
        }
        Tensor::F64 { data, .. } => {
            if data.len() != count {
                return Err(SpError::InvalidParameter("dims/data length mismatch".into()));
            }
            for &v in data {
                if !v.is_finite() {
                    return Err(SpError::InvalidParameter("non-finite value in tensor".into()));
                }
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor::U32 { data, .. } => {
            if data.len() != count {
                return Err(SpError::InvalidParameter("dims/data length mismatch".into()));
            }
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parse a tensor from bytes. Errors carry the byte offset of the problem.
pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 6 {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let dtype = bytes[4];
    let ndim = bytes[5] as usize;
    let mut offset = 6;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        if offset + 4 > bytes.len() {
            return Err(format_err(offset, "truncated dimension list"));
        }
        let d = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
        if d == 0 {
            return Err(format_err(offset, "zero-sized dimension"));
        }
        dims.push(d);
        offset += 4;
    }
    let count = Tensor::element_count(&dims);
    let elem_size = match dtype {
        0 => 1,
        1 => 8,
        2 => 4,
        other => return Err(format_err(4, format!("unknown dtype code {other}"))),
    };
    let need = count
        .checked_mul(elem_size)
        .ok_or_else(|| format_err(offset, "payload size overflow"))?;
    if bytes.len() - offset != need {
        return Err(format_err(
            offset,
            format!("payload is {} bytes, expected {}", bytes.len() - offset, need),
        ));
    }
    let payload = &bytes[offset..];
    Ok(match dtype {
        0 => Tensor::U8 {
            dims,
            data: payload.to_vec(),
        },
        1 => {
            let mut data = Vec::with_capacity(count);
            for (i, chunk) in payload.chunks_exact(8).enumerate() {
                let v = f64::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(format_err(offset + i * 8, "non-finite value"));
                }
                data.push(v);
            }
            Tensor::F64 { dims, data }
        }
        _ => {
            let data = payload
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::U32 { dims, data }
        }
    })
}

pub fn tensor_write(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    fs::write(path, tensor_to_bytes(tensor)?)?;
    Ok(())
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor> {
    tensor_from_bytes(&fs::read(path)?)
}

/// Conversions between the grid types and on-disk tensors. The class count is
/// not stored for 2-D grids, so readers supply it.
impl LabelGrid {
    pub fn to_tensor(&self) -> Tensor {
        let s = self.shape();
        Tensor::U8 {
            dims: vec![s.height as u32, s.width as u32],
            data: self.values().to_vec(),
        }
    }

    pub fn from_tensor(tensor: &Tensor, classes: usize) -> Result<Self> {
        match tensor {
            Tensor::U8 { dims, data } if dims.len() == 2 => {
                let shape = GridShape::new(dims[0] as usize, dims[1] as usize, classes)?;
                LabelGrid::from_values(shape, data.clone())
            }
            other => Err(SpError::Format {
                offset: 4,
                message: format!("expected 2-D u8 tensor for labels, got {:?} dims", other.dims()),
            }),
        }
    }
}

impl ProbGrid {
    pub fn to_tensor(&self) -> Tensor {
        let s = self.shape();
        Tensor::F64 {
            dims: vec![s.height as u32, s.width as u32, s.classes as u32],
            data: self.data().to_vec(),
        }
    }

    pub fn from_tensor(tensor: &Tensor) -> Result<Self> {
        match tensor {
            Tensor::F64 { dims, data } if dims.len() == 3 => {
                let shape = GridShape::new(dims[0] as usize, dims[1] as usize, dims[2] as usize)?;
                ProbGrid::from_data(shape, data.clone())
            }
            other => Err(SpError::Format {
                offset: 4,
                message: format!(
                    "expected 3-D f64 tensor for probabilities, got {:?} dims",
                    other.dims()
                ),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::IGNORE;
    use proptest::prelude::*;

    #[test]
    fn label_roundtrip_is_identity() {
        let shape = GridShape::new(3, 3, 4).unwrap();
        let grid = LabelGrid::from_values(
            shape,
            vec![0, 1, 2, 3, IGNORE, 0, 1, IGNORE, 2],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.spt");
        tensor_write(&path, &grid.to_tensor()).unwrap();
        let back = LabelGrid::from_tensor(&tensor_read(&path).unwrap(), 4).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let shape = GridShape::new(2, 2, 2).unwrap();
        let grid = LabelGrid::filled(shape, 0).unwrap();
        let mut bytes = tensor_to_bytes(&grid.to_tensor()).unwrap();
        bytes[0] = b'X';
        match tensor_from_bytes(&bytes) {
            Err(SpError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let shape = GridShape::new(2, 2, 2).unwrap();
        let grid = LabelGrid::filled(shape, 1).unwrap();
        let mut bytes = tensor_to_bytes(&grid.to_tensor()).unwrap();
        bytes.pop();
        assert!(matches!(tensor_from_bytes(&bytes), Err(SpError::Format { .. })));
    }

    #[test]
    fn probgrid_roundtrip_preserves_simplex() {
        let shape = GridShape::new(2, 2, 3).unwrap();
        let data = vec![
            0.2, 0.3, 0.5, 0.1, 0.8, 0.1, 1.0, 0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0,
        ];
        let grid = ProbGrid::from_data(shape, data).unwrap();
        let bytes = tensor_to_bytes(&grid.to_tensor()).unwrap();
        let back = ProbGrid::from_tensor(&tensor_from_bytes(&bytes).unwrap()).unwrap();
        // from_data re-validates per-pixel sums; equality means bit-exact payload
        assert_eq!(back, grid);
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let t = Tensor::F64 { dims: vec![2, 2], data: vec![0.0; 4] };
        let bytes = tensor_to_bytes(&t).unwrap();
        let read = tensor_from_bytes(&bytes).unwrap();
        assert!(LabelGrid::from_tensor(&read, 2).is_err());
    }

    proptest! {
        #[test]
        fn u8_roundtrip(h in 1usize..9, w in 1usize..9, seed in 0u64..1000) {
            let mut rng = crate::util::derive_rng(seed, 0);
            use rand::Rng;
            let data: Vec<u8> = (0..h * w).map(|_| rng.gen::<u8>()).collect();
            let t = Tensor::U8 { dims: vec![h as u32, w as u32], data };
            let bytes = tensor_to_bytes(&t).unwrap();
            prop_assert_eq!(tensor_from_bytes(&bytes).unwrap(), t);
        }

        #[test]
        fn f64_roundtrip(n in 1usize..64, seed in 0u64..1000) {
            let mut rng = crate::util::derive_rng(seed, 1);
            use rand::Rng;
            let data: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let t = Tensor::F64 { dims: vec![n as u32], data };
            let bytes = tensor_to_bytes(&t).unwrap();
            prop_assert_eq!(tensor_from_bytes(&bytes).unwrap(), t);
        }

        #[test]
        fn u32_roundtrip(n in 1usize..64, seed in 0u64..1000) {
            let mut rng = crate::util::derive_rng(seed, 2);
            use rand::Rng;
            let data: Vec<u32> = (0..n).map(|_| rng.gen::<u32>()).collect();
            let t = Tensor::U32 { dims: vec![n as u32], data };
            let bytes = tensor_to_bytes(&t).unwrap();
            prop_assert_eq!(tensor_from_bytes(&bytes).unwrap(), t);
        }
    }
}
