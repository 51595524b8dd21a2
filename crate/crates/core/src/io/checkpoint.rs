//! Checkpoints: a header line naming the module configuration, then for
//! every parameter a manifest line `<name> <out> <in> <kh> <kw>` followed by
//! an FTZ block holding the values as `(out, in, kh*kw)`.

use std::io::{BufRead, Write};
use std::path::Path;

use super::ftz::{decode_ftz, encode_ftz};
use crate::error::{Error, Result, Shape};
use crate::flow::CorrConfig;
use crate::iff::{IffConfig, IffModule};
use crate::tensor::Tensor;

const MAGIC: &str = "IFFCKPT1";

pub fn encode_checkpoint(module: &IffModule, out: &mut impl Write) -> Result<()> {
    let c = module.config();
    writeln!(
        out,
        "{MAGIC} {} {} {} {} {} {}",
        c.variant.as_str(),
        c.in_channels,
        c.mid_channels,
        c.fuse_channels,
        c.corr.max_displacement,
        c.corr.stride
    )?;
    for layer in module.layers() {
        for (suffix, p) in [("weight", &layer.weight), ("bias", &layer.bias)] {
            let [o, i, kh, kw] = p.dims();
            writeln!(out, "{}.{suffix} {o} {i} {kh} {kw}", layer.name)?;
            let t = Tensor::from_vec(Shape::new(o, i, kh * kw), p.value().to_vec())?;
            encode_ftz(&t, out)?;
        }
    }
    Ok(())
}

fn read_line(input: &mut impl BufRead) -> Result<String> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(Error::Format("unexpected end of checkpoint".into()));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Format(format!("bad integer {s:?} in checkpoint")))
}

pub fn decode_checkpoint(input: &mut impl BufRead) -> Result<IffModule> {
    let header = read_line(input)?;
    let fields: Vec<&str> = header.split(' ').collect();
    let [MAGIC, variant, cin, mid, fuse, dmax, stride] = fields[..] else {
        return Err(Error::Format(format!("bad checkpoint header {header:?}")));
    };
    let config = IffConfig {
        variant: variant.parse()?,
        in_channels: parse_usize(cin)?,
        mid_channels: parse_usize(mid)?,
        fuse_channels: parse_usize(fuse)?,
        corr: CorrConfig {
            max_displacement: parse_usize(dmax)?,
            stride: parse_usize(stride)?,
        },
    };
    let mut module = IffModule::build(config, 0)?;
    for layer in module.layers_mut() {
        let name = layer.name.clone();
        for (suffix, p) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
            let manifest = read_line(input)?;
            let [o, i, kh, kw] = p.dims();
            let expected = format!("{name}.{suffix} {o} {i} {kh} {kw}");
            if manifest != expected {
                return Err(Error::Format(format!(
                    "checkpoint manifest {manifest:?} does not match expected {expected:?}"
                )));
            }
            let t = decode_ftz(input)?;
            if t.shape() != Shape::new(o, i, kh * kw) {
                return Err(Error::Format(format!("block {name}.{suffix} has shape {}", t.shape())));
            }
            p.value_mut().copy_from_slice(t.data());
        }
    }
    if !input.fill_buf()?.is_empty() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(module)
}

pub fn write_checkpoint(path: impl AsRef<Path>, module: &IffModule) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    encode_checkpoint(module, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<IffModule> {
    decode_checkpoint(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}
