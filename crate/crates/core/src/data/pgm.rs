//! Binary PGM (P5) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    pub pixels: Vec<u8>,
}

impl Pgm {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Pgm> {
        let mut pos = 0;
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(Error::format(0, "missing P5 magic"));
        }
        pos += 2;
        let mut fields = [0usize; 3];
        for f in fields.iter_mut() {
            // whitespace and comments
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format(pos, "expected a decimal header field"));
            }
            *f = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(start, "header field out of range"))?;
        }
        let [width, height, maxval] = fields;
        if !(1..=255).contains(&maxval) {
            return Err(Error::format(pos, format!("unsupported maxval {maxval}")));
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::format(pos, "expected whitespace after header"));
        }
        pos += 1;
        let n = width * height;
        if bytes.len() < pos + n {
            return Err(Error::format(bytes.len(), format!("truncated raster: need {n} bytes")));
        }
        Ok(Pgm {
            width,
            height,
            maxval: maxval as u8,
            pixels: bytes[pos..pos + n].to_vec(),
        })
    }

    pub fn read(path: &Path) -> Result<Pgm> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Pgm::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn from_image(image: &Tensor) -> Result<Pgm> {
        let (c, height, width) = image.chw()?;
        if c != 1 {
            return Err(Error::dim("image channels", 1, c));
        }
        Ok(Pgm {
            width,
            height,
            maxval: 255,
            pixels: image
                .data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        })
    }

    /// Foreground as 255.
    pub fn from_mask(mask: &Mask) -> Pgm {
        Pgm {
            width: mask.width(),
            height: mask.height(),
            maxval: 255,
            pixels: mask.data().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect(),
        }
    }

    /// Intensities scaled to `[0, 1]` by `maxval`.
    pub fn to_image(&self) -> Tensor {
        let m = self.maxval as f32;
        Tensor::from_vec(
            &[1, self.height, self.width],
            self.pixels.iter().map(|&p| p as f32 / m).collect(),
        )
        .expect("raster length checked on decode")
    }

    /// Nonzero pixels are foreground.
    pub fn to_mask(&self) -> Mask {
        Mask::from_vec(
            self.width,
            self.height,
            self.pixels.iter().map(|&p| (p != 0) as u8).collect(),
        )
        .expect("raster length checked on decode")
    }
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    Ok(Pgm::read(path)?.to_image())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    Ok(Pgm::read(path)?.to_mask())
}

pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    Pgm::from_image(image)?.write(path)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    Pgm::from_mask(mask).write(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let p = Pgm {
            width: 3,
            height: 2,
            maxval: 255,
            pixels: vec![0, 1, 2, 128, 254, 255],
        };
        assert_eq!(Pgm::decode(&p.encode()).unwrap(), p);
        assert!(p.encode().starts_with(b"P5\n3 2\n255\n"));
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5 # made by hand\n2 1\n# depth\n255\n\x07\x09";
        let p = Pgm::decode(bytes).unwrap();
        assert_eq!((p.width, p.height, p.pixels.clone()), (2, 1, vec![7, 9]));
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        assert!(matches!(
            Pgm::decode(b"P2\n1 1\n255\n0"),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            Pgm::decode(b"P5\n4 4\n255\n\0\0"),
            Err(Error::Format { offset: 13, .. })
        ));
        assert!(matches!(Pgm::decode(b"P5\n1 1\n999\n\0"), Err(Error::Format { .. })));
    }

    #[test]
    fn quantized_images_survive_exactly() {
        let img = Tensor::from_vec(&[1, 1, 4], vec![0.0, 17.0 / 255.0, 128.0 / 255.0, 1.0]).unwrap();
        let back = Pgm::decode(&Pgm::from_image(&img).unwrap().encode())
            .unwrap()
            .to_image();
        assert_eq!(back, img);
    }

    #[test]
    fn masks_use_0_and_255() {
        let m = Mask::from_fn(3, 1, |x, _| x == 1);
        let p = Pgm::from_mask(&m);
        assert_eq!(p.pixels, vec![0, 255, 0]);
        assert_eq!(p.to_mask(), m);
    }
}
