use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result, Shape};
use crate::tensor::Tensor;

const MAGIC: &str = "FTZ1";

/// Writes `FTZ1 c h w\n` followed by little-endian f64 values in (c, y, x) order.
pub fn encode_ftz(tensor: &Tensor, out: &mut impl Write) -> Result<()> {
    let s = tensor.shape();
    writeln!(out, "{MAGIC} {} {} {}", s.channels, s.height, s.width)?;
    let mut buf = Vec::with_capacity(tensor.data().len() * 8);
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn decode_ftz(input: &mut impl BufRead) -> Result<Tensor> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let header = header
        .strip_suffix('\n')
        .ok_or_else(|| Error::Format("FTZ header is not newline-terminated".into()))?;
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(Error::Format(format!("bad FTZ magic in header {header:?}")));
    }
    let dims: Vec<usize> = parts
        .map(|p| p.parse().map_err(|_| Error::Format(format!("bad FTZ dimension {p:?}"))))
        .collect::<Result<_>>()?;
    let [c, h, w] = dims[..] else {
        return Err(Error::Format(format!("FTZ header needs 3 dimensions, got {}", dims.len())));
    };
    let shape = Shape::new(c, h, w);
    let mut bytes = vec![0u8; shape.len() * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("FTZ payload shorter than {shape}")))?;
    let data = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn write_ftz(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    encode_ftz(tensor, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_ftz(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let t = decode_ftz(&mut input)?;
    if input.fill_buf()?.is_empty() {
        Ok(t)
    } else {
        Err(Error::Format("trailing bytes after FTZ payload".into()))
    }
}
