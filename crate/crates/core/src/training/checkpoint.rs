//! `ESFC` checkpoint files.
//!
//! ```text
//! "ESFC" | version u32 | base_scale u32 | base_channels u32 | fpb_count u32
//!        | wtconv_levels u32 | flags u32 | tensor count u32
//! per tensor: name_len u32 | name utf-8 | rank u32 | dims u32... | f32 payload
//! ```
//! All integers and floats are little-endian. Batch-norm running statistics
//! are stored as `<layer>.running_mean` and `<layer>.running_var`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::ops::RunningStats;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ESFC";
pub const VERSION: u32 = 1;

const FLAG_LARGE: u32 = 1;
const FLAG_SMALL: u32 = 2;
const FLAG_WAVELET: u32 = 4;
const FLAG_CDC: u32 = 8;

fn put(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put(out, t.rank() as u32);
    for &d in t.shape() {
        put(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(params: &ModelParams<f32>) -> Vec<u8> {
    let c = &params.config;
    let mut out = MAGIC.to_vec();
    put(&mut out, VERSION);
    for v in [c.base_scale, c.base_channels, c.fpb_count, c.wtconv_levels] {
        put(&mut out, v as u32);
    }
    let flags = [
        (c.use_large_scale, FLAG_LARGE),
        (c.use_small_scale, FLAG_SMALL),
        (c.wavelet_branch, FLAG_WAVELET),
        (c.central_conv, FLAG_CDC),
    ]
    .iter()
    .filter(|(on, _)| *on)
    .fold(0, |acc, (_, f)| acc | f);
    put(&mut out, flags);
    put(&mut out, (params.params.len() + 2 * params.stats.len()) as u32);
    for (name, t) in &params.params {
        put_tensor(&mut out, name, t);
    }
    for (layer, s) in &params.stats {
        put_tensor(&mut out, &format!("{layer}.running_mean"), &s.mean);
        put_tensor(&mut out, &format!("{layer}.running_var"), &s.var);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelParams<f32>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "not an ESFC checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let [base_scale, base_channels, fpb_count, wtconv_levels] =
        [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
    let flags = r.u32()?;
    let config = ModelConfig {
        base_scale,
        base_channels,
        fpb_count,
        wtconv_levels,
        use_large_scale: flags & FLAG_LARGE != 0,
        use_small_scale: flags & FLAG_SMALL != 0,
        wavelet_branch: flags & FLAG_WAVELET != 0,
        central_conv: flags & FLAG_CDC != 0,
    };
    let mut params = ModelParams::<f32>::zeros(&config).map_err(|e| Error::format(path, e.to_string()))?;
    let count = r.u32()? as usize;
    let expected = params.params.len() + 2 * params.stats.len();
    if count != expected {
        return Err(Error::format(path, format!("{count} tensors, configuration needs {expected}")));
    }
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(path, format!("'{name}': {e}")))?;
        let slot: &mut Tensor<f32> = if let Some(layer) = name.strip_suffix(".running_mean") {
            &mut stats_slot(&mut params, layer, path)?.mean
        } else if let Some(layer) = name.strip_suffix(".running_var") {
            &mut stats_slot(&mut params, layer, path)?.var
        } else {
            params
                .params
                .get_mut(&name)
                .ok_or_else(|| Error::format(path, format!("unexpected tensor '{name}'")))?
        };
        if slot.shape() != t.shape() {
            return Err(Error::format(
                path,
                format!("'{name}' has shape {:?}, expected {:?}", t.shape(), slot.shape()),
            ));
        }
        *slot = t;
        if !seen.insert(name.clone()) {
            return Err(Error::format(path, format!("duplicate tensor '{name}'")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    params.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(params)
}

fn stats_slot<'a>(params: &'a mut ModelParams<f32>, layer: &str, path: &Path) -> Result<&'a mut RunningStats<f32>> {
    params
        .stats
        .get_mut(layer)
        .ok_or_else(|| Error::format(path, format!("unexpected batch-norm layer '{layer}'")))
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelParams<f32> {
        let cfg = ModelConfig {
            base_channels: 4,
            use_small_scale: false,
            ..ModelConfig::with_scale(32)
        };
        let mut p = ModelParams::init(&cfg, 5).unwrap();
        p.stats.get_mut("spb2.bn1").unwrap().mean.data_mut()[2] = 0.25;
        p
    }

    #[test]
    fn roundtrip_is_exact() {
        let p = sample();
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..4], b"ESFC");
        let q = decode_checkpoint(&bytes, Path::new("m.esfc")).unwrap();
        assert_eq!(q, p);
        assert_eq!(encode_checkpoint(&q), bytes);
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = encode_checkpoint(&sample());
        let p = Path::new("bad.esfc");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], p).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint(&wrong, p).is_err());
        let mut extra = bytes;
        extra.push(0);
        let err = decode_checkpoint(&extra, p).unwrap_err();
        assert!(err.to_string().contains("bad.esfc"));
    }
}
