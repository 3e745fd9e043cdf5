use crate::error::{Error, Result};

/// Per-pixel class labels on a `height × width` grid, row-major.
///
/// Binary masks use `{0, 1}`; the multi-label variant stores class indices
/// `0..=D`. Metric functions treat any nonzero value as foreground.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim(
                "mask length",
                format!("{} ({width}x{height})", width * height),
                data.len(),
            ));
        }
        Ok(Mask { width, height, data })
    }

    /// Full mask: every pixel labelled 1.
    pub fn filled(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Mask { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn is_fg(&self, x: usize, y: usize) -> bool {
        self.get(x, y) != 0
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    /// Collapse to `{0, 1}`: 1 wherever the label equals `class`.
    pub fn select(&self, class: u8) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v == class) as u8).collect(),
        }
    }

    /// Collapse to `{0, 1}`: 1 wherever the label is nonzero.
    pub fn binarized(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| (v != 0) as u8).collect(),
        }
    }

    /// Map every nonzero label to `label`.
    pub fn relabel_foreground(&self, label: u8) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v != 0 { label } else { 0 }).collect(),
        }
    }

    pub(crate) fn ensure_same_dims(&self, other: &Mask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dim(
                "mask (height, width)",
                format!("({}, {})", self.height, self.width),
                format!("({}, {})", other.height, other.width),
            ));
        }
        Ok(())
    }

    /// 4-connected foreground components as flat pixel indices, in the order
    /// their first pixel appears in a row-major scan.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let (w, h) = (self.width, self.height);
        let mut seen = vec![false; w * h];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if seen[start] || self.data[start] == 0 {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let mut comp = Vec::new();
            while let Some(i) = stack.pop() {
                comp.push(i);
                let (x, y) = (i % w, i / w);
                let mut visit = |j: usize| {
                    if !seen[j] && self.data[j] != 0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Axis-aligned sub-region copy.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Mask {
        let mut out = Mask::new(width, height);
        for y in 0..height {
            let src = (y0 + y) * self.width + x0;
            out.data[y * width..(y + 1) * width].copy_from_slice(&self.data[src..src + width]);
        }
        out
    }

    /// Nearest-neighbour resize with corner-aligned sampling.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Mask {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let xs: Vec<usize> = (0..width)
            .map(|x| aligned_source(x, width, self.width).round() as usize)
            .collect();
        let mut out = Mask::new(width, height);
        for y in 0..height {
            let sy = aligned_source(y, height, self.height).round() as usize;
            for (x, &sx) in xs.iter().enumerate() {
                out.data[y * width + x] = self.data[sy * self.width + sx];
            }
        }
        out
    }
}

/// Corner-aligned source coordinate of destination index `i`.
///
/// The first and last destination samples land exactly on the first and last
/// source samples. A single destination sample reads the source centre.
#[inline]
pub(crate) fn aligned_source(i: usize, dst: usize, src: usize) -> f64 {
    if dst == 1 {
        (src - 1) as f64 / 2.0
    } else {
        i as f64 * (src - 1) as f64 / (dst - 1) as f64
    }
}
