//! Grayscale 28×28 digit sources: IDX files (optionally gzip-compressed)
//! and a procedural stroke renderer for when no dataset is at hand.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DIGIT_SIDE: usize = 28;
const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Labeled grayscale digits, stored as `count × height × width` bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayDigits {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl GrayDigits {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != labels.len() * height * width {
            return Err(Error::MalformedSource(format!(
                "{} pixel bytes do not hold {} images of {height}×{width}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::MalformedSource(format!("digit label {l} outside 0..=9")));
        }
        Ok(Self { height, width, pixels, labels })
    }

    /// Reads an image file and a label file in IDX format. Files ending in
    /// `.gz` are decompressed on the fly.
    pub fn from_idx(images: &Path, labels: &Path) -> Result<Self> {
        let img = read_maybe_gz(images)?;
        let lab = read_maybe_gz(labels)?;
        let (count, height, width, pixels) = parse_images(&img).map_err(|m| malformed(images, m))?;
        let labels_vec = parse_labels(&lab).map_err(|m| malformed(labels, m))?;
        if labels_vec.len() != count {
            return Err(Error::MalformedSource(format!("{count} images but {} labels", labels_vec.len())));
        }
        Self::new(height, width, pixels.to_vec(), labels_vec.to_vec())
    }

    /// Loads the standard MNIST layout: training and test files in one
    /// directory, concatenated train first (70,000 digits in total).
    pub fn from_mnist_dir(dir: &Path) -> Result<Self> {
        let find = |stem: &str| -> Result<PathBuf> {
            [stem.to_string(), format!("{stem}.gz")]
                .iter()
                .map(|n| dir.join(n))
                .find(|p| p.exists())
                .ok_or_else(|| Error::MalformedSource(format!("{} has no {stem}[.gz]", dir.display())))
        };
        let mut train = Self::from_idx(&find("train-images-idx3-ubyte")?, &find("train-labels-idx1-ubyte")?)?;
        let test = Self::from_idx(&find("t10k-images-idx3-ubyte")?, &find("t10k-labels-idx1-ubyte")?)?;
        if (train.height, train.width) != (test.height, test.width) {
            return Err(Error::MalformedSource("train and test image sizes differ".into()));
        }
        train.pixels.extend(test.pixels);
        train.labels.extend(test.labels);
        Ok(train)
    }

    /// Renders `count` stroke-drawn digits with random pose, thickness and
    /// stroke jitter. Labels are drawn uniformly from 0..=9.
    pub fn synthetic(count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pixels = Vec::with_capacity(count * DIGIT_SIDE * DIGIT_SIDE);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let digit = rng.gen_range(0..10u8);
            render_digit(digit, &mut rng, &mut pixels);
            labels.push(digit);
        }
        Self { height: DIGIT_SIDE, width: DIGIT_SIDE, pixels, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The first `n` digits (or all of them if fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let per = self.height * self.width;
        Self {
            height: self.height,
            width: self.width,
            pixels: self.pixels[..n * per].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn malformed(path: &Path, msg: String) -> Error {
    Error::MalformedSource(format!("{}: {msg}", path.display()))
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let file = File::open(path).map_err(|e| Error::MalformedSource(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes).map_err(|e| malformed(path, e.to_string()))?;
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize) -> std::result::Result<u32, String> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| "header cut short".to_string())
}

fn parse_images(bytes: &[u8]) -> std::result::Result<(usize, usize, usize, &[u8]), String> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"));
    }
    let (count, h, w) = (be_u32(bytes, 4)? as usize, be_u32(bytes, 8)? as usize, be_u32(bytes, 12)? as usize);
    let body = &bytes[16..];
    if body.len() != count * h * w {
        return Err(format!("expected {} pixel bytes, found {}", count * h * w, body.len()));
    }
    Ok((count, h, w, body))
}

fn parse_labels(bytes: &[u8]) -> std::result::Result<&[u8], String> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(format!("expected {count} labels, found {}", body.len()));
    }
    Ok(body)
}

// Seven-segment strokes in a unit box: top, upper right, lower right,
// bottom, lower left, upper left, middle.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 0.5)),
    ((1.0, 0.5), (1.0, 1.0)),
    ((0.0, 1.0), (1.0, 1.0)),
    ((0.0, 0.5), (0.0, 1.0)),
    ((0.0, 0.0), (0.0, 0.5)),
    ((0.0, 0.5), (1.0, 0.5)),
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 4, 3, 2, 6],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[6, 5, 0, 1, 2, 3],
];

fn render_digit<R: Rng>(digit: u8, rng: &mut R, out: &mut Vec<u8>) {
    let side = DIGIT_SIDE as f64;
    let (w, h) = (rng.gen_range(8.0..12.0), rng.gen_range(15.0..19.0));
    let shear = rng.gen_range(-0.25..0.25);
    let (cx, cy) = (side / 2.0 + rng.gen_range(-1.5..1.5), side / 2.0 + rng.gen_range(-1.5..1.5));
    let thickness = rng.gen_range(1.0..2.2);
    let mut jitter = || rng.gen_range(-0.05..0.05);
    let strokes: Vec<((f64, f64), (f64, f64))> = DIGIT_SEGMENTS[digit as usize]
        .iter()
        .map(|&s| {
            let ((x0, y0), (x1, y1)) = SEGMENTS[s];
            let place = |x: f64, y: f64| {
                let (u, v) = ((x - 0.5) * w, (y - 0.5) * h);
                (cx + u - shear * v, cy + v)
            };
            (place(x0 + jitter(), y0 + jitter()), place(x1 + jitter(), y1 + jitter()))
        })
        .collect();
    for r in 0..DIGIT_SIDE {
        for c in 0..DIGIT_SIDE {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = strokes.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min);
            let ink = (thickness + 0.5 - d).clamp(0.0, 1.0);
            out.push((ink * 255.0).round() as u8);
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(count: u32, h: u32, w: u32) -> (Vec<u8>, Vec<u8>) {
        let mut img = IMAGE_MAGIC.to_be_bytes().to_vec();
        for v in [count, h, w] {
            img.extend(v.to_be_bytes());
        }
        img.extend((0..count * h * w).map(|i| i as u8));
        let mut lab = LABEL_MAGIC.to_be_bytes().to_vec();
        lab.extend(count.to_be_bytes());
        lab.extend((0..count).map(|i| (i % 10) as u8));
        (img, lab)
    }

    #[test]
    fn parses_idx_headers() {
        let (img, lab) = idx_bytes(3, 2, 2);
        let (count, h, w, body) = parse_images(&img).unwrap();
        assert_eq!((count, h, w, body.len()), (3, 2, 2, 12));
        assert_eq!(parse_labels(&lab).unwrap(), &[0, 1, 2]);
    }

    #[test]
    fn rejects_bad_idx() {
        let (mut img, lab) = idx_bytes(3, 2, 2);
        assert!(parse_images(&lab).is_err());
        img.pop();
        assert!(parse_images(&img).is_err());
        assert!(parse_images(&[0, 0]).is_err());
    }

    #[test]
    fn synthetic_digits_are_deterministic_and_inked() {
        let a = GrayDigits::synthetic(50, 4);
        assert_eq!(a, GrayDigits::synthetic(50, 4));
        assert_eq!(a.len(), 50);
        for i in 0..a.len() {
            let ink = a.image(i).iter().filter(|&&p| p > 128).count();
            assert!(ink > 20 && ink < 400, "digit {i} has {ink} inked pixels");
        }
        assert_eq!(a.take(10).len(), 10);
    }
}
