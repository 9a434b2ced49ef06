//! Binary model format: `ESNN`, u32 version, u32 layer count, then per layer
//! u32 rows, u32 cols and the row-major entries as f32. Little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::network::{Activation, LayeredNetwork};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"ESNN";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_model<T: Scalar, W: Write>(net: &LayeredNetwork<T>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    out.write_u32::<LittleEndian>(dim_u32(net.depth())?)?;
    for w in net.layers() {
        out.write_u32::<LittleEndian>(dim_u32(w.rows())?)?;
        out.write_u32::<LittleEndian>(dim_u32(w.cols())?)?;
        for v in w.to_row_major() {
            out.write_f32::<LittleEndian>(v.as_f64() as f32)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn dim_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::domain(format!("dimension {n} does not fit the model format")))
}

/// Reads `len` bytes without trusting `len` for the allocation size, so a
/// corrupt header cannot request a huge buffer.
pub(crate) fn read_exact_len(input: &mut impl Read, len: usize, field: &'static str) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    input.take(len as u64).read_to_end(&mut bytes)?;
    if bytes.len() != len {
        return Err(Error::parse(field, "file ends early"));
    }
    Ok(bytes)
}

fn truncated(field: &'static str) -> impl Fn(io::Error) -> Error {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::parse(field, "file ends early")
        } else {
            Error::Io(e)
        }
    }
}

/// Reads a model. The format does not store activations, so the caller
/// chooses the final one.
pub fn read_model<T: Scalar, R: Read>(mut input: R, final_activation: Activation) -> Result<LayeredNetwork<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(truncated("magic"))?;
    if &magic != MAGIC {
        return Err(Error::parse("magic", format!("expected \"ESNN\", found {magic:?}")));
    }
    let version = input.read_u32::<LittleEndian>().map_err(truncated("version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::parse("version", format!("unsupported version {version}")));
    }
    let depth = input.read_u32::<LittleEndian>().map_err(truncated("layer count"))? as usize;
    let mut layers = Vec::with_capacity(depth.min(1024));
    for _ in 0..depth {
        let rows = input.read_u32::<LittleEndian>().map_err(truncated("rows"))? as usize;
        let cols = input.read_u32::<LittleEndian>().map_err(truncated("cols"))? as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::parse("rows", "layer size overflows"))?;
        let bytes = read_exact_len(&mut input, len.saturating_mul(4), "weights")?;
        let entries = bytes
            .chunks_exact(4)
            .map(|c| T::of(f64::from(LittleEndian::read_f32(c))))
            .collect();
        layers.push(
            DenseMatrix::from_row_major(rows, cols, entries)
                .map_err(|e| Error::parse("weights", e.to_string()))?,
        );
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::parse("layer count", "trailing bytes after the last layer"));
    }
    LayeredNetwork::new(layers, final_activation)
}

pub fn save_model<T: Scalar>(net: &LayeredNetwork<T>, path: impl AsRef<Path>) -> Result<()> {
    write_model(net, BufWriter::new(File::create(path)?))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>, final_activation: Activation) -> Result<LayeredNetwork<T>> {
    read_model(BufReader::new(File::open(path)?), final_activation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn net32(seed: u64) -> LayeredNetwork<f32> {
        let mut r = rng::seeded(seed);
        let layers = [(5usize, 4usize), (4, 3)]
            .iter()
            .map(|&(a, b)| {
                DenseMatrix::from_row_major(a, b, (0..a * b).map(|_| r.random_range(-2.0f32..2.0)).collect())
                    .unwrap()
            })
            .collect();
        LayeredNetwork::new(layers, Activation::Identity).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = net32(3);
        let mut buf = Vec::new();
        write_model(&net, &mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 8 + 20 * 4 + 8 + 12 * 4);
        assert_eq!(&buf[..4], b"ESNN");
        let back: LayeredNetwork<f32> = read_model(&buf[..], Activation::Identity).unwrap();
        for (a, b) in net.layers().iter().zip(back.layers()) {
            let bits = |m: &DenseMatrix<f32>| m.to_row_major().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn header_layout() {
        let net = LayeredNetwork::new(vec![DenseMatrix::<f64>::identity(2)], Activation::Relu).unwrap();
        let mut buf = Vec::new();
        write_model(&net, &mut buf).unwrap();
        let expected: Vec<u8> = [
            &b"ESNN"[..],
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &2u32.to_le_bytes(),
            &2u32.to_le_bytes(),
            &1f32.to_le_bytes(),
            &0f32.to_le_bytes(),
            &0f32.to_le_bytes(),
            &1f32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(buf, expected);
    }

    #[test]
    fn malformed_files() {
        let mut buf = Vec::new();
        write_model(&net32(1), &mut buf).unwrap();
        let bad_magic = [&b"ESNX"[..], &buf[4..]].concat();
        assert!(matches!(
            read_model::<f32, _>(&bad_magic[..], Activation::Relu),
            Err(Error::Parse { field: "magic", .. })
        ));
        assert!(matches!(
            read_model::<f32, _>(&buf[..buf.len() - 3], Activation::Relu),
            Err(Error::Parse { field: "weights", .. })
        ));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_model::<f32, _>(&extra[..], Activation::Relu).is_err());
        let mut chain = buf.clone();
        chain[12..16].copy_from_slice(&6u32.to_le_bytes());
        assert!(read_model::<f32, _>(&chain[..], Activation::Relu).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.esnn");
        let net = net32(9);
        save_model(&net, &path).unwrap();
        let back: LayeredNetwork<f32> = load_model(&path, Activation::Identity).unwrap();
        assert_eq!(back, net);
    }
}
