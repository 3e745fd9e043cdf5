//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "MDFC"  version:u32  variant:u8  domains:u16  resolution:u16  heads:u16
//! trunk_layers:u16  head_layers:u16
//! layer table, trunk then head: kind:u8 in out kh kw stride pad (u16 each)
//! f32 blobs: for each weighted layer of the trunk, then of every head in
//!            order, its weights followed by its biases
//! crc32 of all preceding bytes: u32
//! ```

use std::path::Path;

use super::params::{ModelParams, Variant};
use crate::error::{Error, Result};
use crate::nn::{Layer, LayerKind, LayerSpec, Tensor};

pub const MAGIC: &[u8; 4] = b"MDFC";
pub const VERSION: u32 = 1;

fn put_u16(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u16::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit in 16 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_spec(out: &mut Vec<u8>, s: &LayerSpec) -> Result<()> {
    out.push(s.kind.tag());
    for v in [
        s.in_channels,
        s.out_channels,
        s.kernel_h,
        s.kernel_w,
        s.stride,
        s.padding,
    ] {
        put_u16(out, v, "layer dimension")?;
    }
    Ok(())
}

fn put_layer(out: &mut Vec<u8>, l: &Layer) {
    if let Some(w) = &l.weights {
        for v in w.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in &l.bias {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialise `params` to bytes.
pub fn encode(params: &ModelParams) -> Result<Vec<u8>> {
    params.validate()?;
    let mut out = Vec::with_capacity(64 + 4 * params.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(params.variant.tag());
    put_u16(&mut out, params.num_domains, "domain count")?;
    put_u16(&mut out, params.working_resolution, "working resolution")?;
    put_u16(&mut out, params.heads.len(), "head count")?;
    put_u16(&mut out, params.trunk.len(), "trunk length")?;
    put_u16(&mut out, params.heads[0].len(), "head length")?;
    for l in params.trunk.iter().chain(&params.heads[0]) {
        put_spec(&mut out, &l.spec)?;
    }
    for l in params.trunk.iter().chain(params.heads.iter().flatten()) {
        put_layer(&mut out, l);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<usize> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]) as usize)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.take(4 * n, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn spec(&mut self) -> Result<LayerSpec> {
        let at = self.pos;
        let kind =
            LayerKind::from_tag(self.u8("layer kind")?).ok_or_else(|| Error::format(at, "unknown layer kind"))?;
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = self.u16("layer dimensions")?;
        }
        let [in_channels, out_channels, kernel_h, kernel_w, stride, padding] = dims;
        let spec = LayerSpec {
            kind,
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
        };
        spec.validate().map_err(|e| Error::format(at, e.to_string()))?;
        Ok(spec)
    }

    fn layer(&mut self, spec: LayerSpec) -> Result<Layer> {
        let weights = match spec.weight_shape() {
            Some(shape) => Some(Tensor::from_vec(&shape, self.f32s(shape.iter().product(), "weights")?)?),
            None => None,
        };
        let bias = if spec.has_weights() {
            self.f32s(spec.out_channels, "biases")?
        } else {
            Vec::new()
        };
        Ok(Layer { spec, weights, bias })
    }
}

/// Parse a checkpoint produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, not a checkpoint"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let variant = Variant::from_tag(r.u8("variant")?).ok_or_else(|| Error::format(8, "unknown variant tag"))?;
    let num_domains = r.u16("domain count")?;
    let working_resolution = r.u16("working resolution")?;
    let n_heads = r.u16("head count")?;
    let n_trunk = r.u16("trunk length")?;
    let n_head = r.u16("head length")?;
    let trunk_specs = (0..n_trunk).map(|_| r.spec()).collect::<Result<Vec<_>>>()?;
    let head_specs = (0..n_head).map(|_| r.spec()).collect::<Result<Vec<_>>>()?;
    let trunk = trunk_specs.iter().map(|&s| r.layer(s)).collect::<Result<Vec<_>>>()?;
    let heads = (0..n_heads)
        .map(|_| head_specs.iter().map(|&s| r.layer(s)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, "trailing bytes after checksum"));
    }
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(Error::format(body_end, "checksum mismatch"));
    }
    let params = ModelParams {
        variant,
        num_domains,
        working_resolution,
        trunk,
        heads,
    };
    params.validate().map_err(|e| Error::format(0, e.to_string()))?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, forward, ArchPreset};

    fn input() -> Tensor {
        Tensor::from_vec(&[1, 16, 16], (0..256).map(|i| ((i * 29) % 53) as f32 / 53.0).collect()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for (variant, d) in [(Variant::Md, 3), (Variant::Sd, 1), (Variant::Ml, 2)] {
            let m = build_model(variant, d, ArchPreset::Tiny, 16, 9).unwrap();
            let bytes = encode(&m).unwrap();
            let back = decode(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode(&back).unwrap(), bytes);
            let (a, b) = (forward(&m, 0, &input()).unwrap(), forward(&back, 0, &input()).unwrap());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn header_declares_head_count() {
        let m = build_model(Variant::Md, 3, ArchPreset::Default, 64, 0).unwrap();
        let bytes = encode(&m).unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(bytes[8], Variant::Md.tag());
        assert_eq!(u16::from_le_bytes([bytes[9], bytes[10]]), 3);
        assert_eq!(u16::from_le_bytes([bytes[13], bytes[14]]), 3);
        let table = 19 + 13 * (m.trunk.len() + m.heads[0].len());
        assert_eq!(bytes.len(), table + 4 * m.param_count() + 4);
    }

    #[test]
    fn corruption_is_reported_with_an_offset() {
        let m = build_model(Variant::Md, 2, ArchPreset::Tiny, 16, 1).unwrap();
        let good = encode(&m).unwrap();

        let mut bad = good.clone();
        bad[1] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 0, .. })));

        let mut bad = good.clone();
        bad[4] = 7;
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 4, .. })));

        let cut = good.len() - 10;
        assert!(matches!(decode(&good[..cut]), Err(Error::Format { offset, .. }) if offset <= cut));

        let mut bad = good.clone();
        let mid = good.len() / 2;
        bad[mid] ^= 0x40;
        assert!(matches!(decode(&bad), Err(Error::Format { offset, .. }) if offset == good.len() - 4));

        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Format { .. })));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = build_model(Variant::Ml, 3, ArchPreset::Tiny, 8, 2).unwrap();
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
        assert!(matches!(
            load_checkpoint(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
