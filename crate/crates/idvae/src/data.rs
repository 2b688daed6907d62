//! Dataset providers: synthetic 2-D Gaussian mixtures, IDX image files
//! (gzip accepted), one-hot label batches, and latent prior sampling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::bufread::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A k-mode isotropic Gaussian mixture in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub centers: Vec<(f32, f32)>,
    pub sigma: f32,
}

impl MixtureSpec {
    /// Modes equally spaced on a circle.
    pub fn ring(k: usize, radius: f32, sigma: f32) -> MixtureSpec {
        let centers = (0..k)
            .map(|i| {
                let a = 2.0 * std::f32::consts::PI * i as f32 / k as f32;
                (radius * a.cos(), radius * a.sin())
            })
            .collect();
        MixtureSpec { centers, sigma }
    }

    /// The canonical mode-collapse probe: 8 modes, radius 2, sigma 0.02.
    pub fn default_ring() -> MixtureSpec {
        MixtureSpec::ring(8, 2.0, 0.02)
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::Data("mixture needs at least one mode".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Data(format!("mixture sigma must be > 0, got {}", self.sigma)));
        }
        for i in 0..self.centers.len() {
            for j in i + 1..self.centers.len() {
                if self.centers[i] == self.centers[j] {
                    return Err(Error::Data(format!("duplicate mixture centers at {i} and {j}")));
                }
            }
        }
        Ok(())
    }
}

/// Draw n points: uniform mode choice, isotropic Gaussian noise around the
/// chosen center. Returns the points and their mode indices.
pub fn sample_mixture(spec: &MixtureSpec, n: usize, rng: &mut Rng) -> (Tensor, Vec<usize>) {
    let k = spec.k();
    let mut pts = Vec::with_capacity(n * 2);
    let mut modes = Vec::with_capacity(n);
    for _ in 0..n {
        let m = rng.below(k);
        let (cx, cy) = spec.centers[m];
        pts.push(cx + spec.sigma * rng.normal_f32());
        pts.push(cy + spec.sigma * rng.normal_f32());
        modes.push(m);
    }
    (Tensor::from_vec(&[n, 2], pts), modes)
}

/// Standard-normal latent batch [n, latent_dim].
pub fn sample_prior(n: usize, latent_dim: usize, rng: &mut Rng) -> Tensor {
    let mut data = vec![0.0f32; n * latent_dim];
    rng.fill_normal(&mut data);
    Tensor::from_vec(&[n, latent_dim], data)
}

/// An in-memory dataset: data tensor plus optional integer labels.
pub struct Dataset {
    /// [n, 2] for point data or [n, c, h, w] for images.
    pub x: Tensor,
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample flattened width (product of non-batch dims).
    pub fn sample_numel(&self) -> usize {
        self.x.numel() / self.len().max(1)
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        self.x.shape()[1..].to_vec()
    }

    /// Gather rows by index into a batch, with one-hot labels when present.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let shape = self.x.shape();
        let stride = self.sample_numel();
        let src = self.x.value();
        let mut out = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            out.extend_from_slice(&src[i * stride..(i + 1) * stride]);
        }
        let mut bshape = shape.clone();
        bshape[0] = indices.len();
        let y = self.labels.as_ref().map(|ls| {
            let mut oh = vec![0.0f32; indices.len() * self.num_classes];
            for (row, &i) in indices.iter().enumerate() {
                oh[row * self.num_classes + ls[i]] = 1.0;
            }
            Tensor::from_vec(&[indices.len(), self.num_classes], oh)
        });
        Batch { x: Tensor::from_vec(&bshape, out), y }
    }

    /// First n rows (deterministic probe batches).
    pub fn head(&self, n: usize) -> Batch {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.gather(&idx)
    }

    /// Keep only the first n examples.
    pub fn truncate(&mut self, n: usize) {
        if n >= self.len() {
            return;
        }
        let stride = self.sample_numel();
        let mut shape = self.x.shape();
        shape[0] = n;
        let data = self.x.value()[..n * stride].to_vec();
        self.x = Tensor::from_vec(&shape, data);
        if let Some(l) = self.labels.as_mut() {
            l.truncate(n);
        }
    }
}

/// One mini-batch: data plus optional one-hot conditioning rows.
pub struct Batch {
    pub x: Tensor,
    pub y: Option<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cond(&self) -> Option<&Tensor> {
        self.y.as_ref()
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

fn read_u32_be(r: &mut dyn Read, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Data(format!("{}: truncated {what}: {e}", path.display())))?;
    Ok(u32::from_be_bytes(buf))
}

/// Load an IDX image file into [n, 1, h, w] floats in [0, 1] (byte / 255).
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let mut r = open_maybe_gz(path)?;
    let magic = read_u32_be(&mut r, path, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            path.display()
        )));
    }
    let n = read_u32_be(&mut r, path, "count")? as usize;
    let h = read_u32_be(&mut r, path, "rows")? as usize;
    let w = read_u32_be(&mut r, path, "cols")? as usize;
    let mut bytes = vec![0u8; n * h * w];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Data(format!("{}: truncated pixel data: {e}", path.display())))?;
    let data: Vec<f32> = bytes.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Tensor::from_vec(&[n, 1, h, w], data))
}

/// Load an IDX label file into integer labels.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let mut r = open_maybe_gz(path)?;
    let magic = read_u32_be(&mut r, path, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            path.display()
        )));
    }
    let n = read_u32_be(&mut r, path, "count")? as usize;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Data(format!("{}: truncated label data: {e}", path.display())))?;
    Ok(bytes.into_iter().map(|b| b as usize).collect())
}

/// Load a paired IDX image/label dataset; counts must agree.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let x = load_idx_images(images)?;
    let ls = load_idx_labels(labels)?;
    if x.shape()[0] != ls.len() {
        return Err(Error::Data(format!(
            "{} has {} images but {} has {} labels",
            images.display(),
            x.shape()[0],
            labels.display(),
            ls.len()
        )));
    }
    let num_classes = ls.iter().max().map_or(0, |m| m + 1);
    Ok(Dataset { x, labels: Some(ls), num_classes })
}

fn make_writer(path: &Path) -> Result<Box<dyn Write>> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let writer = BufWriter::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzEncoder::new(writer, Compression::default())))
    } else {
        Ok(Box::new(writer))
    }
}

/// Write raw bytes as an IDX image file (gzip if path ends in .gz).
pub fn write_idx_images(path: &Path, n: usize, h: usize, w: usize, bytes: &[u8]) -> Result<()> {
    if bytes.len() != n * h * w {
        return Err(Error::Data(format!("pixel buffer {} != {n}x{h}x{w}", bytes.len())));
    }
    let mut out = make_writer(path)?;
    let mut run = || -> std::io::Result<()> {
        out.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
        out.write_all(&(n as u32).to_be_bytes())?;
        out.write_all(&(h as u32).to_be_bytes())?;
        out.write_all(&(w as u32).to_be_bytes())?;
        out.write_all(bytes)?;
        out.flush()
    };
    run().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write labels as an IDX label file (gzip if path ends in .gz).
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = make_writer(path)?;
    let mut run = || -> std::io::Result<()> {
        out.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
        out.write_all(&(labels.len() as u32).to_be_bytes())?;
        out.write_all(labels)?;
        out.flush()
    };
    run().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Build a ring-mixture dataset with mode indices as labels.
pub fn ring_dataset(spec: &MixtureSpec, n: usize, rng: &mut Rng) -> Result<Dataset> {
    spec.validate()?;
    let (x, modes) = sample_mixture(spec, n, rng);
    let k = spec.k();
    Ok(Dataset { x, labels: Some(modes), num_classes: k })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_zero_limit_puts_points_on_centers() {
        // smallest positive sigma: points within a hair of their center
        let spec = MixtureSpec::ring(4, 1.0, 1e-12);
        let mut rng = Rng::new(1);
        let (pts, modes) = sample_mixture(&spec, 100, &mut rng);
        let v = pts.value();
        for (i, &m) in modes.iter().enumerate() {
            let (cx, cy) = spec.centers[m];
            assert!((v[2 * i] - cx).abs() < 1e-5);
            assert!((v[2 * i + 1] - cy).abs() < 1e-5);
        }
    }

    #[test]
    fn mode_frequencies_are_uniform() {
        let spec = MixtureSpec::default_ring();
        let mut rng = Rng::new(7);
        let n = 100_000;
        let (_, modes) = sample_mixture(&spec, n, &mut rng);
        let mut counts = vec![0usize; spec.k()];
        for m in modes {
            counts[m] += 1;
        }
        let expect = n as f64 / spec.k() as f64;
        for (i, c) in counts.iter().enumerate() {
            let rel = (*c as f64 - expect).abs() / expect;
            assert!(rel < 0.03, "mode {i}: count {c} vs {expect}");
        }
    }

    #[test]
    fn per_mode_covariance_is_isotropic() {
        let spec = MixtureSpec::ring(3, 2.0, 0.1);
        let mut rng = Rng::new(9);
        let n = 30_000;
        let (pts, modes) = sample_mixture(&spec, n, &mut rng);
        let v = pts.value();
        for mode in 0..3 {
            let sel: Vec<usize> = (0..n).filter(|&i| modes[i] == mode).collect();
            let (cx, cy) = spec.centers[mode];
            let mut sxx = 0.0f64;
            let mut syy = 0.0f64;
            let mut sxy = 0.0f64;
            for &i in &sel {
                let dx = (v[2 * i] - cx) as f64;
                let dy = (v[2 * i + 1] - cy) as f64;
                sxx += dx * dx;
                syy += dy * dy;
                sxy += dx * dy;
            }
            let m = sel.len() as f64;
            let var = (spec.sigma as f64).powi(2);
            assert!((sxx / m - var).abs() / var < 0.05, "xx {}", sxx / m);
            assert!((syy / m - var).abs() / var < 0.05, "yy {}", syy / m);
            assert!((sxy / m).abs() / var < 0.05, "xy {}", sxy / m);
        }
    }

    #[test]
    fn prior_moments() {
        let mut rng = Rng::new(11);
        let z = sample_prior(10_000, 10, &mut rng);
        let v = z.value();
        let n = v.len() as f64;
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn prior_same_seed_identical() {
        let a = sample_prior(16, 4, &mut Rng::new(3));
        let b = sample_prior(16, 4, &mut Rng::new(3));
        assert_eq!(a.value(), b.value());
    }

    #[test]
    fn idx_roundtrip_synthetic_zero_images() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("imgs.idx");
        let lab = dir.path().join("labs.idx");
        write_idx_images(&img, 2, 3, 3, &[0u8; 18]).unwrap();
        write_idx_labels(&lab, &[0, 1]).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.x.shape(), vec![2, 1, 3, 3]);
        assert!(ds.x.value().iter().all(|&v| v == 0.0));
        assert_eq!(ds.labels.as_ref().unwrap(), &vec![0, 1]);
    }

    #[test]
    fn idx_gzip_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("imgs.idx.gz");
        let bytes: Vec<u8> = (0..=255u8).cycle().take(2 * 4 * 4).collect();
        write_idx_images(&img, 2, 4, 4, &bytes).unwrap();
        let x = load_idx_images(&img).unwrap();
        assert_eq!(x.shape(), vec![2, 1, 4, 4]);
        // byte -> float -> byte is lossless
        let back: Vec<u8> = x.value().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(back, bytes);
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("imgs.idx");
        // write a LABEL file then read it as images
        write_idx_labels(&img, &[1, 2, 3]).unwrap();
        let err = load_idx_images(&img).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("imgs.idx");
        write_idx_images(&img, 2, 3, 3, &[7u8; 18]).unwrap();
        let full = std::fs::read(&img).unwrap();
        std::fs::write(&img, &full[..full.len() - 5]).unwrap();
        let err = load_idx_images(&img).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("imgs.idx");
        let lab = dir.path().join("labs.idx");
        write_idx_images(&img, 2, 3, 3, &[0u8; 18]).unwrap();
        write_idx_labels(&lab, &[0, 1, 2]).unwrap();
        assert!(load_idx(&img, &lab).is_err());
    }

    #[test]
    fn gather_one_hot_rows_sum_to_one() {
        let ds = Dataset {
            x: Tensor::from_vec(&[3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]),
            labels: Some(vec![2, 0, 1]),
            num_classes: 3,
        };
        let b = ds.gather(&[2, 0]);
        assert_eq!(b.x.value(), vec![4.0, 5.0, 0.0, 1.0]);
        let y = b.y.unwrap().value();
        assert_eq!(y, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn bundled_digits_fixtures_parse() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/digits");
        if !root.exists() {
            eprintln!("skipping: bundled digits not present");
            return;
        }
        let ds = load_idx(
            &root.join("train-images-idx3-ubyte.gz"),
            &root.join("train-labels-idx1-ubyte.gz"),
        )
        .unwrap();
        assert_eq!(ds.x.shape()[2], 8);
        assert_eq!(ds.num_classes, 10);
        assert!(ds.len() > 1000);
    }
}
