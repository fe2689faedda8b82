//! 8-bit RGB images, binary PPM (P6) I/O, and the resize/crop policy used
//! to prepare network inputs.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;

use super::{stream_rng, SynthError};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height * 3] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, SynthError> {
        if data.len() != width * height * 3 {
            return Err(SynthError::Format(format!(
                "{}x{} image needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), SynthError> {
        let mut buf = Vec::with_capacity(self.data.len() + 20);
        self.write_ppm(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| SynthError::io(path, e))
    }

    pub fn read_ppm<R: Read>(r: R) -> Result<Self, SynthError> {
        let mut r = BufReader::new(r);
        let mut header = Vec::new();
        // magic, width, height, maxval; '#' comments allowed between tokens
        while header.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(SynthError::Format("truncated PPM header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            header.extend(content.split_whitespace().map(str::to_string));
        }
        if header.len() != 4 || header[0] != "P6" {
            return Err(SynthError::Format(format!("unsupported PPM header {header:?}")));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| SynthError::Format(format!("bad PPM field {s:?}")));
        let (w, h, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval != 255 {
            return Err(SynthError::Format(format!("only 8-bit PPM supported, maxval {maxval}")));
        }
        let mut data = vec![0; w * h * 3];
        r.read_exact(&mut data).map_err(|_| SynthError::Format("truncated PPM pixel data".into()))?;
        Self::from_raw(w, h, data)
    }

    pub fn load_ppm(path: &Path) -> Result<Self, SynthError> {
        let f = std::fs::File::open(path).map_err(|e| SynthError::io(path, e))?;
        Self::read_ppm(f)
    }

    /// Bilinear resize with pixel-center alignment and edge clamping.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Self::new(width, height);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let mut rgb = [0u8; 3];
                for (c, v) in rgb.iter_mut().enumerate() {
                    let p = |xx: usize, yy: usize| self.data[(yy * self.width + xx) * 3 + c] as f64;
                    let top = p(x0, y0) * (1.0 - wx) + p(x1, y0) * wx;
                    let bot = p(x0, y1) * (1.0 - wx) + p(x1, y1) * wx;
                    *v = (top * (1.0 - wy) + bot * wy).round().clamp(0.0, 255.0) as u8;
                }
                out.put_pixel(x, y, rgb);
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self, SynthError> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(SynthError::ImageTooSmall {
                width: self.width,
                height: self.height,
                required: width.max(height),
            });
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        Self::from_raw(width, height, data)
    }

    /// Network input `[1, 3, H, W]` with values `px / 255 - 0.5`.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f64 / 255.0 - 0.5;
            }
        }
        Tensor::new(vec![1, 3, self.height, self.width], data).expect("consistent size")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Center,
    /// Uniform random offset drawn from the given seed.
    Random(u64),
}

/// Aspect-preserving resize of the shorter side to `resize_short`, then a
/// square `crop x crop` window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropPolicy {
    pub resize_short: usize,
    pub crop: usize,
    pub mode: CropMode,
}

impl CropPolicy {
    pub fn center(resize_short: usize, crop: usize) -> Self {
        Self { resize_short, crop, mode: CropMode::Center }
    }

    pub fn random(resize_short: usize, crop: usize, seed: u64) -> Self {
        Self { resize_short, crop, mode: CropMode::Random(seed) }
    }
}

/// Size after scaling the shorter side to `short`; `(width, height)`.
pub fn resized_dims(width: usize, height: usize, short: usize) -> (usize, usize) {
    if width <= height {
        (short, ((height as f64) * short as f64 / width as f64).round() as usize)
    } else {
        (((width as f64) * short as f64 / height as f64).round() as usize, short)
    }
}

pub fn resize_and_crop(image: &RgbImage, policy: &CropPolicy) -> Result<RgbImage, SynthError> {
    let (w, h) = resized_dims(image.width(), image.height(), policy.resize_short);
    if w < policy.crop || h < policy.crop || image.width() == 0 || image.height() == 0 {
        return Err(SynthError::ImageTooSmall { width: w, height: h, required: policy.crop });
    }
    let resized = image.resize(w, h);
    let (x0, y0) = match policy.mode {
        CropMode::Center => ((w - policy.crop) / 2, (h - policy.crop) / 2),
        CropMode::Random(seed) => {
            let mut rng = stream_rng(seed, 0);
            (rng.random_range(0..=w - policy.crop), rng.random_range(0..=h - policy.crop))
        }
    };
    resized.crop(x0, y0, policy.crop, policy.crop)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.put_pixel(x, y, [(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]);
            }
        }
        img
    }

    #[test]
    fn ppm_round_trip_and_errors() {
        let img = gradient_image(5, 3);
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n5 3\n255\n"));
        assert_eq!(RgbImage::read_ppm(buf.as_slice()).unwrap(), img);
        assert!(RgbImage::read_ppm(&buf[..buf.len() - 1]).is_err());
        assert!(RgbImage::read_ppm(&b"P3\n1 1\n255\n"[..]).is_err());
        let commented = b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03";
        assert_eq!(RgbImage::read_ppm(&commented[..]).unwrap().pixel(0, 0), [1, 2, 3]);
    }

    #[test]
    fn resize_then_center_crop() {
        assert_eq!(resized_dims(800, 646, 323), (400, 323));
        let img = gradient_image(800, 646);
        let out = resize_and_crop(&img, &CropPolicy::center(323, 227)).unwrap();
        assert_eq!((out.width(), out.height()), (227, 227));
        let resized = img.resize(400, 323);
        // columns 86..=312, rows 48..=274
        assert_eq!(out.pixel(0, 0), resized.pixel(86, 48));
        assert_eq!(out.pixel(226, 226), resized.pixel(312, 274));
    }

    #[test]
    fn square_input_unchanged() {
        let img = gradient_image(323, 323);
        let out = resize_and_crop(&img, &CropPolicy::center(323, 323)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn random_crop_reproducible() {
        let img = gradient_image(120, 90);
        let a = resize_and_crop(&img, &CropPolicy::random(80, 50, 11)).unwrap();
        let b = resize_and_crop(&img, &CropPolicy::random(80, 50, 11)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            resize_and_crop(&img, &CropPolicy::center(40, 64)),
            Err(SynthError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn tensor_layout() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(1, 0, [255, 0, 51]);
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data()[1], 0.5);
        assert_eq!(t.data()[3], -0.5);
        assert!((t.data()[5] - (51.0 / 255.0 - 0.5)).abs() < 1e-15);
    }
}
