//! Depth images: pinhole back-projection, depth-gradient feature
//! extraction, and the flat binary on-disk format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Intrinsics for a sensor of `width` x `height` pixels with the given
    /// horizontal field of view, square pixels, principal point at the
    /// image center.
    pub fn from_fov(width: usize, height: usize, hfov_rad: f64) -> Intrinsics {
        let fx = (width as f64 / 2.0) / (hfov_rad / 2.0).tan();
        Intrinsics {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }
}

/// Per-pixel range image (meters along the optical axis), row-major, NaN
/// where the sensor returned nothing.
#[derive(Debug, Clone)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub intrinsics: Intrinsics,
}

impl DepthImage {
    pub fn new_invalid(width: usize, height: usize, intrinsics: Intrinsics) -> DepthImage {
        DepthImage { width, height, depth: vec![f32::NAN; width * height], intrinsics }
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> f32 {
        self.depth[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: f32) {
        self.depth[row * self.width + col] = value;
    }

    #[inline]
    pub fn is_valid(d: f32) -> bool {
        d.is_finite() && d > 0.0
    }

    pub fn valid_pixel_count(&self) -> usize {
        self.depth.iter().filter(|&&d| Self::is_valid(d)).count()
    }

    /// Back-projects pixel (col, row) at depth `d` into the camera frame:
    /// x right, y down, z along the optical axis.
    pub fn back_project(&self, col: usize, row: usize, d: f64) -> Vector3<f64> {
        let i = &self.intrinsics;
        Vector3::new(
            (col as f64 - i.cx) * d / i.fx,
            (row as f64 - i.cy) * d / i.fy,
            d,
        )
    }
}

/// Back-projects every valid pixel; one point per valid pixel, with
/// (row, col) provenance retained.
pub fn depth_to_cloud(img: &DepthImage) -> PointCloud {
    let mut points = Vec::with_capacity(img.width * img.height);
    let mut grid = Vec::with_capacity(img.width * img.height);
    for row in 0..img.height {
        for col in 0..img.width {
            let d = img.at(col, row);
            if DepthImage::is_valid(d) {
                points.push(img.back_project(col, row, d as f64));
                grid.push((row as u32, col as u32));
            }
        }
    }
    PointCloud { points, grid: Some(grid) }
}

/// Extracts the sub-cloud of pixels adjoining a depth jump larger than
/// `jump_threshold` between two successive values along a row; both pixels
/// of a jump are included. Depth sensors scan row by row, so horizontal
/// gradients are the cheap ones; set `vertical` to also scan columns.
pub fn extract_depth_gradient_points(
    img: &DepthImage,
    jump_threshold: f64,
    vertical: bool,
) -> PointCloud {
    let mut mask = vec![false; img.width * img.height];
    for row in 0..img.height {
        for col in 0..img.width.saturating_sub(1) {
            let d0 = img.at(col, row);
            let d1 = img.at(col + 1, row);
            if DepthImage::is_valid(d0)
                && DepthImage::is_valid(d1)
                && (d1 as f64 - d0 as f64).abs() > jump_threshold
            {
                mask[row * img.width + col] = true;
                mask[row * img.width + col + 1] = true;
            }
        }
    }
    if vertical {
        for col in 0..img.width {
            for row in 0..img.height.saturating_sub(1) {
                let d0 = img.at(col, row);
                let d1 = img.at(col, row + 1);
                if DepthImage::is_valid(d0)
                    && DepthImage::is_valid(d1)
                    && (d1 as f64 - d0 as f64).abs() > jump_threshold
                {
                    mask[row * img.width + col] = true;
                    mask[(row + 1) * img.width + col] = true;
                }
            }
        }
    }
    let mut points = Vec::new();
    let mut grid = Vec::new();
    for row in 0..img.height {
        for col in 0..img.width {
            if mask[row * img.width + col] {
                points.push(img.back_project(col, row, img.at(col, row) as f64));
                grid.push((row as u32, col as u32));
            }
        }
    }
    PointCloud { points, grid: Some(grid) }
}

/// Writes the flat binary format: 8-byte header (width, height as 32-bit
/// little-endian unsigned) followed by row-major 32-bit float meters, NaN
/// sentinel.
pub fn write_depth_binary(img: &DepthImage, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(img.width as u32).to_le_bytes())?;
    w.write_all(&(img.height as u32).to_le_bytes())?;
    for d in &img.depth {
        w.write_all(&d.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the flat binary format; intrinsics are not stored in the file and
/// must be supplied by the caller.
pub fn read_depth_binary(path: &Path, intrinsics: Intrinsics) -> Result<DepthImage> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 8];
    r.read_exact(&mut header)?;
    let width = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; width * height * 4];
    r.read_exact(&mut payload).map_err(|_| Error::Parse {
        what: "depth binary",
        line: 0,
        message: format!("truncated payload for {width}x{height} image"),
    })?;
    let depth = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(DepthImage { width, height, depth, intrinsics })
}
