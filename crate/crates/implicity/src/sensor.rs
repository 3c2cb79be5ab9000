//! Photogrammetric point cloud simulation and point cloud I/O.
//!
//! The simulator draws surface-biased samples: plan positions are uniform
//! over the scene, heights come from the analytic surface, and matcher-like
//! noise perturbs both. A fraction of points is replaced by gross outliers,
//! and forest regions get inflated vertical noise.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::scene::SceneModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SensorConfig {
    /// Mean point density, points per square meter.
    pub density: f64,
    pub noise_sigma_z: f64,
    pub noise_sigma_xy: f64,
    /// Fraction of points replaced by gross outliers.
    pub outlier_fraction: f64,
    /// Outlier heights are uniform in +-outlier_z_range/2 around the surface.
    pub outlier_z_range: f64,
    /// Extra vertical noise added in forest regions.
    pub forest_extra_sigma: f64,
    pub seed: u64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            density: 4.0,
            noise_sigma_z: 0.5,
            noise_sigma_xy: 0.25,
            outlier_fraction: 0.02,
            outlier_z_range: 40.0,
            forest_extra_sigma: 1.5,
            seed: 0,
        }
    }
}

impl SensorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.density > 0.0) {
            return Err(Error::InvalidConfig(format!("density {} not positive", self.density)));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidConfig(format!(
                "outlier fraction {} outside [0,1]",
                self.outlier_fraction
            )));
        }
        for (name, v) in [
            ("noise_sigma_z", self.noise_sigma_z),
            ("noise_sigma_xy", self.noise_sigma_xy),
            ("outlier_z_range", self.outlier_z_range),
            ("forest_extra_sigma", self.forest_extra_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} {v} invalid")));
            }
        }
        Ok(())
    }
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).unwrap().sample(rng)
}

pub fn simulate_point_cloud(scene: &SceneModel, cfg: &SensorConfig) -> Result<PointCloud> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let area = scene.extent.0 * scene.extent.1;
    let mean = cfg.density * area;
    let n = Poisson::new(mean)
        .map_err(|e| Error::InvalidConfig(format!("bad point count rate {mean}: {e}")))?
        .sample(&mut rng) as usize;
    if n == 0 {
        return Err(Error::EmptyPointSet(format!(
            "density {} over {:.1} m^2 produced no points",
            cfg.density, area
        )));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = rng.gen::<f64>() * scene.extent.0;
        let y0 = rng.gen::<f64>() * scene.extent.1;
        let surface = scene.surface_height(x0, y0);
        let x = (x0 + gauss(&mut rng, cfg.noise_sigma_xy)).clamp(0.0, scene.extent.0);
        let y = (y0 + gauss(&mut rng, cfg.noise_sigma_xy)).clamp(0.0, scene.extent.1);
        let sigma_z = if scene.in_forest(x0, y0) {
            cfg.noise_sigma_z + cfg.forest_extra_sigma
        } else {
            cfg.noise_sigma_z
        };
        // Fixed draw order per point so config changes do not reshuffle
        // the remaining stream.
        let dz = gauss(&mut rng, sigma_z);
        let u = rng.gen::<f64>();
        let z = if u < cfg.outlier_fraction {
            surface + (rng.gen::<f64>() - 0.5) * cfg.outlier_z_range
        } else {
            let _ = rng.gen::<f64>();
            surface + dz
        };
        points.push([x, y, z]);
    }
    Ok(PointCloud { points })
}

const IPC1_MAGIC: &[u8; 4] = b"IPC1";

impl PointCloud {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "x,y,z")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p[0], p[1], p[2])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<PointCloud> {
        let ctx = "point cloud csv";
        let mut points = Vec::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with('x')) {
                continue;
            }
            let mut it = line.split(',');
            let mut p = [0.0f64; 3];
            for v in &mut p {
                let tok = it
                    .next()
                    .ok_or_else(|| Error::parse(ctx, format!("row {i}: too few fields")))?;
                *v = tok
                    .trim()
                    .parse()
                    .map_err(|e| Error::parse(ctx, format!("row {i}: {e}")))?;
            }
            if it.next().is_some() {
                return Err(Error::parse(ctx, format!("row {i}: too many fields")));
            }
            points.push(p);
        }
        if points.is_empty() {
            return Err(Error::EmptyPointSet("csv has no data rows".into()));
        }
        Ok(PointCloud { points })
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(IPC1_MAGIC)?;
        w.write_all(&(self.points.len() as u64).to_le_bytes())?;
        for p in &self.points {
            for v in p {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<PointCloud> {
        let ctx = "point cloud binary";
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != IPC1_MAGIC {
            return Err(Error::parse(ctx, format!("bad magic {magic:?}")));
        }
        let mut nb = [0u8; 8];
        r.read_exact(&mut nb)?;
        let n = u64::from_le_bytes(nb) as usize;
        if n == 0 {
            return Err(Error::EmptyPointSet("binary cloud has zero points".into()));
        }
        let mut points = Vec::with_capacity(n);
        let mut buf = [0u8; 24];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            let mut p = [0.0f64; 3];
            for (k, v) in p.iter_mut().enumerate() {
                *v = f64::from_le_bytes(buf[8 * k..8 * k + 8].try_into().unwrap());
            }
            points.push(p);
        }
        Ok(PointCloud { points })
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv_file(path: &Path) -> Result<PointCloud> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_binary_file(&self, path: &Path) -> Result<()> {
        self.write_binary(std::fs::File::create(path)?)
    }

    pub fn read_binary_file(path: &Path) -> Result<PointCloud> {
        Self::read_binary(std::fs::File::open(path)?)
    }

    /// Pick the format from the extension: `.csv` is text, anything else binary.
    pub fn read_file_auto(path: &Path) -> Result<PointCloud> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::read_csv_file(path),
            _ => Self::read_binary_file(path),
        }
    }

    pub fn write_file_auto(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => self.write_csv_file(path),
            _ => self.write_binary_file(path),
        }
    }
}
