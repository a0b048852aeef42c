//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      8 bytes  "MINCKPT1"
//! layers     u32
//! input      u32 x 3  (C, H, W)
//! classes    u32
//! per layer:
//!   tag      u8
//!   name     u32 length + UTF-8 bytes
//!   spec     tag-specific fields
//!   params   u32 count, then per parameter u32 length + f32 values
//! bn count   u32
//! per batch-norm state (network order):
//!   updates  u64
//!   channels u32
//!   mean     f32 x channels
//!   var      f32 x channels
//! ```
//!
//! Parameters are stored at 32-bit precision; loading widens them back.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{NamedLayer, Network};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv, Dropout, Layer, Maxout, MlpConv, Pool, PoolMode, PoolSpec};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MINCKPT1";

const TAG_CONV: u8 = 1;
const TAG_BN: u8 = 2;
const TAG_MAXOUT: u8 = 3;
const TAG_RELU: u8 = 4;
const TAG_MLPCONV: u8 = 5;
const TAG_POOL: u8 = 6;
const TAG_DROPOUT: u8 = 7;

// guards allocations driven by header fields
const MAX_DIM: u32 = 1 << 20;
const MAX_LEN: u32 = 1 << 28;

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit the checkpoint format")))?;
    w.write_u32::<LE>(v)?;
    Ok(())
}

fn put_f32s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for &v in values {
        w.write_f32::<LE>(v as f32)?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(net: &Network, w: &mut W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, net.layers().len())?;
    for d in net.input_shape() {
        put_u32(w, d)?;
    }
    put_u32(w, net.classes())?;
    for l in net.layers() {
        write_layer(w, l)?;
    }
    let bns = net.batch_norms();
    put_u32(w, bns.len())?;
    for bn in bns {
        w.write_u64::<LE>(bn.updates)?;
        put_u32(w, bn.channels())?;
        put_f32s(w, &bn.running_mean)?;
        put_f32s(w, &bn.running_var)?;
    }
    Ok(())
}

fn write_layer<W: Write>(w: &mut W, l: &NamedLayer) -> Result<()> {
    let conv_spec = |w: &mut W, c: &Conv| -> Result<()> {
        let (kh, kw) = c.kernel();
        for v in [c.in_channels(), c.units(), kh, kw, c.stride, c.pad] {
            put_u32(w, v)?;
        }
        Ok(())
    };
    let tag = match &l.layer {
        Layer::Conv(_) => TAG_CONV,
        Layer::BatchNorm(_) => TAG_BN,
        Layer::Maxout(_) => TAG_MAXOUT,
        Layer::Relu => TAG_RELU,
        Layer::MlpConv(_) => TAG_MLPCONV,
        Layer::Pool(_) => TAG_POOL,
        Layer::Dropout(_) => TAG_DROPOUT,
    };
    w.write_u8(tag)?;
    put_u32(w, l.name.len())?;
    w.write_all(l.name.as_bytes())?;
    match &l.layer {
        Layer::Conv(c) => conv_spec(w, c)?,
        Layer::BatchNorm(bn) => {
            put_u32(w, bn.channels())?;
            w.write_f64::<LE>(bn.epsilon)?;
            w.write_f64::<LE>(bn.momentum)?;
        }
        Layer::Maxout(m) => {
            for v in [m.in_channels(), m.units(), m.pieces_count()] {
                put_u32(w, v)?;
            }
            w.write_f64::<LE>(m.pieces[0].bn.epsilon)?;
            w.write_f64::<LE>(m.pieces[0].bn.momentum)?;
        }
        Layer::Relu => {}
        Layer::MlpConv(m) => {
            for v in [m.first.in_channels(), m.first.units(), m.second.units()] {
                put_u32(w, v)?;
            }
        }
        Layer::Pool(p) => {
            w.write_u8(match p.spec.mode {
                PoolMode::Avg => 0,
                PoolMode::Max => 1,
                PoolMode::GlobalAvg => 2,
            })?;
            put_u32(w, p.spec.size)?;
            put_u32(w, p.spec.stride)?;
        }
        Layer::Dropout(d) => {
            w.write_f64::<LE>(d.rate)?;
            w.write_u64::<LE>(d.seed)?;
        }
    }
    let params = l.layer.params();
    put_u32(w, params.len())?;
    for (_, p) in params {
        put_u32(w, p.value.len())?;
        put_f32s(w, p.value.data())?;
    }
    Ok(())
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::format("checkpoint is truncated")
    } else {
        Error::Io(e)
    }
}

struct Reader<'a, R: Read>(&'a mut R);

impl<R: Read> Reader<'_, R> {
    fn u8(&mut self) -> Result<u8> {
        self.0.read_u8().map_err(truncated)
    }

    fn u32(&mut self) -> Result<usize> {
        let v = self.0.read_u32::<LE>().map_err(truncated)?;
        if v > MAX_LEN {
            return Err(Error::format(format!("implausible size {v} in checkpoint")));
        }
        Ok(v as usize)
    }

    fn dim(&mut self) -> Result<usize> {
        let v = self.u32()?;
        if v as u32 > MAX_DIM {
            return Err(Error::format(format!("implausible dimension {v} in checkpoint")));
        }
        Ok(v)
    }

    fn u64(&mut self) -> Result<u64> {
        self.0.read_u64::<LE>().map_err(truncated)
    }

    fn f64(&mut self) -> Result<f64> {
        self.0.read_f64::<LE>().map_err(truncated)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut buf = vec![0f32; n];
        self.0.read_f32_into::<LE>(&mut buf).map_err(truncated)?;
        Ok(buf.into_iter().map(f64::from).collect())
    }
}

fn spec_error(e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::Format(format!("bad layer spec: {m}")),
        other => other,
    }
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Network> {
    let mut r = Reader(r);
    let mut magic = [0u8; 8];
    r.0.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format("not a checkpoint: bad magic"));
    }
    let count = r.u32()?;
    let input = [r.dim()?, r.dim()?, r.dim()?];
    let classes = r.dim()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        layers.push(read_layer(&mut r)?);
    }
    let mut net = Network::new(input, classes, layers).map_err(spec_error)?;
    let bn_count = r.u32()?;
    let mut bns = net.batch_norms_mut();
    if bn_count != bns.len() {
        return Err(Error::format(format!(
            "checkpoint has {bn_count} batch-norm states, architecture has {}",
            bns.len()
        )));
    }
    for bn in bns.iter_mut() {
        let updates = r.u64()?;
        let channels = r.dim()?;
        if channels != bn.channels() {
            return Err(Error::format("batch-norm channel count mismatch"));
        }
        bn.running_mean = r.f32s(channels)?;
        bn.running_var = r.f32s(channels)?;
        bn.updates = updates;
    }
    let mut rest = [0u8; 1];
    if r.0.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after checkpoint"));
    }
    Ok(net)
}

fn read_layer<R: Read>(r: &mut Reader<'_, R>) -> Result<NamedLayer> {
    let tag = r.u8()?;
    let len = r.u32()?;
    let mut name = vec![0u8; len.min(4096)];
    if len > name.len() {
        return Err(Error::format("layer name too long"));
    }
    r.0.read_exact(&mut name).map_err(truncated)?;
    let name = String::from_utf8(name).map_err(|_| Error::format("layer name is not UTF-8"))?;
    let mut layer = match tag {
        TAG_CONV => {
            let [cin, units, kh, kw, stride, pad] =
                [r.dim()?, r.dim()?, r.dim()?, r.dim()?, r.dim()?, r.dim()?];
            Layer::Conv(Conv::new(cin, units, kh, kw, stride, pad).map_err(spec_error)?)
        }
        TAG_BN => {
            let channels = r.dim()?;
            let mut bn = BatchNorm::new(channels).with_epsilon(r.f64()?).map_err(spec_error)?;
            bn.momentum = r.f64()?;
            Layer::BatchNorm(bn)
        }
        TAG_MAXOUT => {
            let [cin, units, k] = [r.dim()?, r.dim()?, r.dim()?];
            let mut m = Maxout::new(cin, units, k).map_err(spec_error)?;
            let (eps, momentum) = (r.f64()?, r.f64()?);
            for p in &mut m.pieces {
                p.bn = BatchNorm::new(units).with_epsilon(eps).map_err(spec_error)?;
                p.bn.momentum = momentum;
            }
            Layer::Maxout(m)
        }
        TAG_RELU => Layer::Relu,
        TAG_MLPCONV => {
            let [cin, hidden, out] = [r.dim()?, r.dim()?, r.dim()?];
            Layer::MlpConv(MlpConv::new(cin, hidden, out).map_err(spec_error)?)
        }
        TAG_POOL => {
            let mode = match r.u8()? {
                0 => PoolMode::Avg,
                1 => PoolMode::Max,
                2 => PoolMode::GlobalAvg,
                m => return Err(Error::format(format!("unknown pool mode {m}"))),
            };
            let spec = PoolSpec::new(mode, r.dim()?, r.dim()?).map_err(spec_error)?;
            Layer::Pool(Pool::new(spec))
        }
        TAG_DROPOUT => {
            let rate = r.f64()?;
            Layer::Dropout(Dropout::new(rate, r.u64()?).map_err(spec_error)?)
        }
        t => return Err(Error::format(format!("unknown layer tag {t}"))),
    };
    let count = r.u32()?;
    let mut params = layer.params_mut();
    if count != params.len() {
        return Err(Error::format(format!(
            "layer `{name}` stores {count} parameters, its spec implies {}",
            params.len()
        )));
    }
    for (pname, p) in params.iter_mut() {
        let len = r.u32()?;
        if len != p.value.len() {
            return Err(Error::format(format!("layer `{name}` parameter `{pname}` has the wrong length")));
        }
        p.value.data_mut().copy_from_slice(&r.f32s(len)?);
    }
    Ok(NamedLayer { name, layer })
}
