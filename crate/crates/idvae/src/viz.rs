//! PNG grids for image samples and scatter plots for 2-D point clouds.

use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GAP: u32 = 2;
const BG: u8 = 128;

/// Tile a batch of single-channel images [n, 1, h, w] (values in [0,1])
/// into a grid PNG with `cols` tiles per row, row-major.
pub fn write_image_grid(path: &Path, tiles: &Tensor, cols: usize) -> Result<()> {
    let shape = tiles.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::invalid("grid", format!("expected [n,1,h,w] tiles, got {shape:?}")));
    }
    if cols == 0 {
        return Err(Error::invalid("grid", "cols must be >= 1"));
    }
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let rows = n.div_ceil(cols);
    let width = cols as u32 * (w as u32 + GAP) + GAP;
    let height = rows as u32 * (h as u32 + GAP) + GAP;
    let mut img = GrayImage::from_pixel(width, height, image::Luma([BG]));
    let data = tiles.value();
    for t in 0..n {
        let (r, c) = (t / cols, t % cols);
        let y0 = GAP + r as u32 * (h as u32 + GAP);
        let x0 = GAP + c as u32 * (w as u32 + GAP);
        for i in 0..h {
            for j in 0..w {
                let v = (data[t * h * w + i * w + j].clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel(x0 + j as u32, y0 + i as u32, image::Luma([v]));
            }
        }
    }
    img.save(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Expected pixel size of a grid with n tiles of (h, w): used by tests and
/// documented as the layout contract.
pub fn grid_dimensions(n: usize, h: usize, w: usize, cols: usize) -> (u32, u32) {
    let rows = n.div_ceil(cols);
    (
        cols as u32 * (w as u32 + GAP) + GAP,
        rows as u32 * (h as u32 + GAP) + GAP,
    )
}

/// Scatter plot of [n, 2] points (black) with optional reference centers
/// (red crosses). Axis range is the symmetric bounding square of the data
/// and centers, padded 10%.
pub fn write_scatter(path: &Path, points: &Tensor, centers: &[(f32, f32)]) -> Result<()> {
    let shape = points.shape();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(Error::invalid("scatter", format!("expected [n,2] points, got {shape:?}")));
    }
    let size: u32 = 480;
    let v = points.value();
    let mut extent = 1e-3f32;
    for &x in v.iter().chain(centers.iter().flat_map(|(a, b)| [a, b])) {
        extent = extent.max(x.abs());
    }
    let extent = extent * 1.1;
    let to_px = |x: f32| -> i64 { (((x / extent) + 1.0) * 0.5 * (size - 1) as f32).round() as i64 };
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let dot = |cx: i64, cy: i64, r: i64, color: Rgb<u8>, img: &mut RgbImage| {
        for dy in -r..=r {
            for dx in -r..=r {
                let (px, py) = (cx + dx, cy + dy);
                if px >= 0 && py >= 0 && (px as u32) < size && (py as u32) < size {
                    img.put_pixel(px as u32, py as u32, color);
                }
            }
        }
    };
    for p in v.chunks(2) {
        // image y axis points down
        dot(to_px(p[0]), to_px(-p[1]), 1, Rgb([20, 20, 20]), &mut img);
    }
    for (cx, cy) in centers {
        let (px, py) = (to_px(*cx), to_px(-*cy));
        for d in -4i64..=4 {
            for (qx, qy) in [(px + d, py), (px, py + d)] {
                if qx >= 0 && qy >= 0 && (qx as u32) < size && (qy as u32) < size {
                    img.put_pixel(qx as u32, qy as u32, Rgb([220, 30, 30]));
                }
            }
        }
    }
    img.save(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Write [n, 2] points as CSV with the given column header.
pub fn write_points_csv(path: &Path, points: &Tensor, header: &str) -> Result<()> {
    let v = points.value();
    let mut s = String::from(header);
    s.push('\n');
    for p in v.chunks(2) {
        s.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_grid_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.png");
        let tiles = Tensor::from_vec(&[16, 1, 8, 8], vec![0.5; 16 * 64]);
        write_image_grid(&path, &tiles, 4).unwrap();
        let img = image::open(&path).unwrap();
        let (w, h) = grid_dimensions(16, 8, 8, 4);
        assert_eq!((img.width(), img.height()), (w, h));
        assert_eq!((w, h), (4 * 10 + 2, 4 * 10 + 2));
    }

    #[test]
    fn ragged_last_row_rounds_up() {
        let (_, h) = grid_dimensions(10, 8, 8, 4);
        assert_eq!(h, 3 * 10 + 2);
    }

    #[test]
    fn scatter_writes_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.png");
        let pts = Tensor::from_vec(&[3, 2], vec![0.0, 0.0, 1.0, 1.0, -1.0, 0.5]);
        write_scatter(&path, &pts, &[(2.0, 0.0)]).unwrap();
        assert!(path.exists());
    }

    #[test]
    fn points_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        let pts = Tensor::from_vec(&[2, 2], vec![0.5, -0.25, 1.0, 2.0]);
        write_points_csv(&path, &pts, "x,y").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "x,y\n0.5,-0.25\n1,2\n");
    }
}
