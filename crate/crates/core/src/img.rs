//! RGB and depth buffers plus their on-disk forms: 8-bit PNG for viewing
//! and raw little-endian float32 sidecars, which are the authoritative
//! values for every metric and prompt.

use crate::error::Error;
use crate::Result;
use std::path::Path;

/// H x W x 3 image, values in [0, 1], row-major, f64 in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>,
}

impl ImageF {
    pub fn new(width: usize, height: usize) -> Self {
        ImageF {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                "ImageF::from_data",
                format!("{}x{}x3 != {}", width, height, data.len()),
            ));
        }
        Ok(ImageF {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let i = (v * self.width + u) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_size(&self, other: &ImageF) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Round every channel through f32. Persisted images live on the f32
    /// grid, so anything that will be saved and reloaded is rounded first —
    /// that makes save/load round-trips exact.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

/// H x W depth map in scene units with a per-pixel validity flag (false
/// where the ray saw too little density for expected depth to mean much).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthF {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthF {
    pub fn new(width: usize, height: usize) -> Self {
        DepthF {
            width,
            height,
            data: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> (f64, bool) {
        let i = v * self.width + u;
        (self.data[i], self.valid[i])
    }

    pub fn set(&mut self, u: usize, v: usize, depth: f64, is_valid: bool) {
        let i = v * self.width + u;
        self.data[i] = depth;
        self.valid[i] = is_valid;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

/// Write the 8-bit PNG copy.
pub fn save_png(image: &ImageF, path: &Path) -> Result<()> {
    let mut buf = image::RgbImage::new(image.width as u32, image.height as u32);
    for v in 0..image.height {
        for u in 0..image.width {
            let px = image.pixel(u, v);
            let to8 = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(u as u32, v as u32, image::Rgb([to8(px[0]), to8(px[1]), to8(px[2])]));
        }
    }
    buf.save(path)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<ImageF> {
    let img = image::open(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = ImageF::new(w, h);
    for v in 0..h {
        for u in 0..w {
            let p = img.get_pixel(u as u32, v as u32);
            out.set_pixel(
                u,
                v,
                [
                    p[0] as f64 / 255.0,
                    p[1] as f64 / 255.0,
                    p[2] as f64 / 255.0,
                ],
            );
        }
    }
    Ok(out)
}

/// Raw row-major H x W x 3 little-endian f32. Authoritative pixel values.
pub fn save_image_f32(image: &ImageF, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(image.data.len() * 4);
    for &v in &image.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_image_f32(path: &Path, width: usize, height: usize) -> Result<ImageF> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != width * height * 3 * 4 {
        return Err(Error::parse(
            path.display().to_string(),
            format!(
                "expected {} bytes for {}x{}x3 f32, found {}",
                width * height * 12,
                width,
                height,
                bytes.len()
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ImageF::from_data(width, height, data)
}

/// Depth sidecar: H x W f32 values then H x W validity bytes.
pub fn save_depth_f32(depth: &DepthF, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(depth.data.len() * 5);
    for &v in &depth.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes.extend(depth.valid.iter().map(|&b| b as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_depth_f32(path: &Path, width: usize, height: usize) -> Result<DepthF> {
    let bytes = std::fs::read(path)?;
    let n = width * height;
    if bytes.len() != n * 5 {
        return Err(Error::parse(
            path.display().to_string(),
            format!("expected {} bytes for {}x{} depth, found {}", n * 5, width, height, bytes.len()),
        ));
    }
    let data: Vec<f64> = bytes[..n * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let valid = bytes[n * 4..].iter().map(|&b| b != 0).collect();
    Ok(DepthF {
        width,
        height,
        data,
        valid,
    })
}
