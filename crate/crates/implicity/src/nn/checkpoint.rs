//! Checkpoint container: the model config as key=value text plus named
//! tensor records (little-endian f32).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;

use super::grad::Module;
use super::model::{Model, ModelConfig, Variant};
use super::scalar::Scalar;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"IMPCKPT1";

impl ModelConfig {
    pub fn to_kv_string(&self) -> String {
        format!(
            "d={}\npsi_res={}\npsi_cell={}\nimg_res={}\nimg_cell={}\nunet_depth={}\nhourglass_stacks={}\nvariant={}\nimg_mean={}\nimg_std={}\n",
            self.d,
            self.psi_res,
            self.psi_cell,
            self.img_res,
            self.img_cell,
            self.unet_depth,
            self.hourglass_stacks,
            self.variant.as_str(),
            self.img_mean,
            self.img_std
        )
    }

    pub fn from_kv_str(s: &str) -> Result<ModelConfig> {
        let ctx = "model config";
        let mut map = BTreeMap::new();
        for line in s.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(ctx, format!("expected key=value: {line}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> {
            map.get(k).ok_or_else(|| Error::parse(ctx, format!("missing key {k}")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|e| Error::parse(ctx, format!("bad {k}: {e}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|e| Error::parse(ctx, format!("bad {k}: {e}")))
        };
        let cfg = ModelConfig {
            d: int("d")?,
            psi_res: int("psi_res")?,
            psi_cell: num("psi_cell")?,
            img_res: int("img_res")?,
            img_cell: num("img_cell")?,
            unet_depth: int("unet_depth")?,
            hourglass_stacks: int("hourglass_stacks")?,
            variant: Variant::parse(get("variant")?)?,
            img_mean: num("img_mean")?,
            img_std: num("img_std")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn save_checkpoint<F: Scalar, W: Write>(model: &Model<F>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    let cfg = model.cfg.to_kv_string();
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    let mut records: Vec<(String, ArrayD<F>)> = Vec::new();
    model.visit(&mut |name, t| records.push((name.to_string(), t.clone())));
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &s in t.shape() {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for &v in t.iter() {
            w.write_all(&(<F as Scalar>::to_f64(v) as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar, R: Read>(mut r: R) -> Result<Model<F>> {
    let ctx = "checkpoint";
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::parse(ctx, format!("bad magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let cfg_len = u32::from_le_bytes(u32buf) as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)?;
    let cfg_text = String::from_utf8(cfg_bytes)
        .map_err(|e| Error::parse(ctx, format!("config not utf8: {e}")))?;
    let cfg = ModelConfig::from_kv_str(&cfg_text)?;

    r.read_exact(&mut u32buf)?;
    let n_records = u32::from_le_bytes(u32buf) as usize;
    let mut tensors: BTreeMap<String, ArrayD<F>> = BTreeMap::new();
    for _ in 0..n_records {
        r.read_exact(&mut u32buf)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::parse(ctx, format!("tensor name not utf8: {e}")))?;
        r.read_exact(&mut u32buf)?;
        let ndim = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut u32buf)?;
            let v = f32::from_le_bytes(u32buf);
            if !v.is_finite() {
                return Err(Error::parse(ctx, format!("non-finite value in {name}")));
            }
            data.push(F::cast(v as f64));
        }
        let t = ArrayD::from_shape_vec(shape, data)
            .map_err(|e| Error::parse(ctx, format!("bad shape for {name}: {e}")))?;
        tensors.insert(name, t);
    }

    let mut model = Model::<F>::init(&cfg, 0)?;
    let mut problem: Option<String> = None;
    let mut used = 0usize;
    model.visit_mut(&mut |name, t| {
        if problem.is_some() {
            return;
        }
        match tensors.get(name) {
            Some(loaded) if loaded.shape() == t.shape() => {
                *t = loaded.clone();
                used += 1;
            }
            Some(loaded) => {
                problem = Some(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    t.shape(),
                    loaded.shape()
                ));
            }
            None => problem = Some(format!("missing tensor {name}")),
        }
    });
    if let Some(p) = problem {
        return Err(Error::parse(ctx, p));
    }
    if used != tensors.len() {
        return Err(Error::parse(
            ctx,
            format!("checkpoint has {} tensors, model uses {used}", tensors.len()),
        ));
    }
    Ok(model)
}

pub fn save_checkpoint_file<F: Scalar>(model: &Model<F>, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    save_checkpoint(model, std::io::BufWriter::new(f))
}

pub fn load_checkpoint_file<F: Scalar>(path: &Path) -> Result<Model<F>> {
    let f = std::fs::File::open(path)?;
    load_checkpoint(std::io::BufReader::new(f))
}
