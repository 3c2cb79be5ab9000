//! Deterministic text serialization of scenes: versioned key=value blocks.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::{Error, Result};

use super::building::{Building, Dormer, Roof};
use super::terrain::{Hill, SineWave, Terrain};
use super::{MaskRect, SceneModel};

const MAGIC: &str = "implicity-scene v1";

impl SceneModel {
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "extent={} {}", self.extent.0, self.extent.1);
        let _ = writeln!(s, "[terrain]");
        let _ = writeln!(s, "base={}", self.terrain.base);
        for wv in &self.terrain.waves {
            let _ = writeln!(s, "wave={} {} {} {}", wv.amp, wv.fx, wv.fy, wv.phase);
        }
        for h in &self.terrain.hills {
            let _ = writeln!(s, "hill={} {} {} {}", h.amp, h.cx, h.cy, h.radius);
        }
        for b in &self.buildings {
            let _ = writeln!(s, "[building]");
            let _ = writeln!(s, "center={} {}", b.center.0, b.center.1);
            let _ = writeln!(s, "half_len={}", b.half_len);
            let _ = writeln!(s, "half_wid={}", b.half_wid);
            let _ = writeln!(s, "angle={}", b.angle);
            let _ = writeln!(s, "eave_z={}", b.eave_z);
            let _ = writeln!(s, "albedo={}", b.albedo);
            match &b.roof {
                Roof::Flat => {
                    let _ = writeln!(s, "roof=flat");
                }
                Roof::Gable { ridge_rise, dormers } => {
                    let _ = writeln!(s, "roof=gable {ridge_rise}");
                    for d in dormers {
                        let _ = writeln!(
                            s,
                            "dormer={} {} {} {} {} {}",
                            d.face, d.u_center, d.v_center, d.half_u, d.half_v, d.top_z
                        );
                    }
                }
            }
        }
        for r in &self.forest {
            let _ = writeln!(s, "[forest]");
            let _ = writeln!(s, "rect={} {} {} {}", r.x_min, r.y_min, r.x_max, r.y_max);
        }
        for r in &self.water {
            let _ = writeln!(s, "[water]");
            let _ = writeln!(s, "rect={} {} {} {}", r.x_min, r.y_min, r.x_max, r.y_max);
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn write_text_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_text(std::io::BufWriter::new(f))
    }

    pub fn read_text<R: Read>(r: R) -> Result<SceneModel> {
        let ctx = "scene text";
        let mut lines = BufReader::new(r).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::parse(ctx, "empty file"))??;
        if first.trim() != MAGIC {
            return Err(Error::parse(ctx, format!("bad magic line: {first}")));
        }
        let mut seed = 0u64;
        let mut extent = (0.0, 0.0);
        let mut terrain = Terrain::flat(0.0);
        let mut buildings: Vec<Building> = Vec::new();
        let mut forest = Vec::new();
        let mut water = Vec::new();

        #[derive(PartialEq)]
        enum Section {
            Head,
            Terrain,
            Building,
            Forest,
            Water,
        }
        let mut section = Section::Head;

        let parse_floats = |v: &str, n: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = v
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(ctx, format!("bad number in '{v}': {e}")))?;
            if vals.len() != n {
                return Err(Error::parse(ctx, format!("expected {n} numbers in '{v}'")));
            }
            Ok(vals)
        };

        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "[terrain]" => {
                    section = Section::Terrain;
                    continue;
                }
                "[building]" => {
                    section = Section::Building;
                    buildings.push(Building {
                        center: (0.0, 0.0),
                        half_len: 1.0,
                        half_wid: 1.0,
                        angle: 0.0,
                        eave_z: 0.0,
                        roof: Roof::Flat,
                        albedo: 0.5,
                    });
                    continue;
                }
                "[forest]" => {
                    section = Section::Forest;
                    continue;
                }
                "[water]" => {
                    section = Section::Water;
                    continue;
                }
                _ => {}
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(ctx, format!("expected key=value: {line}")))?;
            match (&section, key) {
                (Section::Head, "seed") => {
                    seed = val
                        .parse()
                        .map_err(|e| Error::parse(ctx, format!("bad seed: {e}")))?;
                }
                (Section::Head, "extent") => {
                    let v = parse_floats(val, 2)?;
                    extent = (v[0], v[1]);
                }
                (Section::Terrain, "base") => terrain.base = parse_floats(val, 1)?[0],
                (Section::Terrain, "wave") => {
                    let v = parse_floats(val, 4)?;
                    terrain.waves.push(SineWave { amp: v[0], fx: v[1], fy: v[2], phase: v[3] });
                }
                (Section::Terrain, "hill") => {
                    let v = parse_floats(val, 4)?;
                    terrain.hills.push(Hill { amp: v[0], cx: v[1], cy: v[2], radius: v[3] });
                }
                (Section::Building, k) => {
                    let b = buildings.last_mut().unwrap();
                    match k {
                        "center" => {
                            let v = parse_floats(val, 2)?;
                            b.center = (v[0], v[1]);
                        }
                        "half_len" => b.half_len = parse_floats(val, 1)?[0],
                        "half_wid" => b.half_wid = parse_floats(val, 1)?[0],
                        "angle" => b.angle = parse_floats(val, 1)?[0],
                        "eave_z" => b.eave_z = parse_floats(val, 1)?[0],
                        "albedo" => b.albedo = parse_floats(val, 1)?[0],
                        "roof" => {
                            let mut it = val.split_whitespace();
                            match it.next() {
                                Some("flat") => b.roof = Roof::Flat,
                                Some("gable") => {
                                    let rise: f64 = it
                                        .next()
                                        .ok_or_else(|| Error::parse(ctx, "gable needs rise"))?
                                        .parse()
                                        .map_err(|e| {
                                            Error::parse(ctx, format!("bad ridge rise: {e}"))
                                        })?;
                                    b.roof = Roof::Gable { ridge_rise: rise, dormers: vec![] };
                                }
                                other => {
                                    return Err(Error::parse(
                                        ctx,
                                        format!("unknown roof kind {other:?}"),
                                    ))
                                }
                            }
                        }
                        "dormer" => {
                            let v = parse_floats(val, 6)?;
                            let d = Dormer {
                                face: v[0] as i8,
                                u_center: v[1],
                                v_center: v[2],
                                half_u: v[3],
                                half_v: v[4],
                                top_z: v[5],
                            };
                            match &mut b.roof {
                                Roof::Gable { dormers, .. } => dormers.push(d),
                                Roof::Flat => {
                                    return Err(Error::parse(ctx, "dormer on flat roof"))
                                }
                            }
                        }
                        other => {
                            return Err(Error::parse(ctx, format!("unknown building key {other}")))
                        }
                    }
                }
                (Section::Forest, "rect") | (Section::Water, "rect") => {
                    let v = parse_floats(val, 4)?;
                    let r = MaskRect { x_min: v[0], y_min: v[1], x_max: v[2], y_max: v[3] };
                    if section == Section::Forest {
                        forest.push(r);
                    } else {
                        water.push(r);
                    }
                }
                _ => return Err(Error::parse(ctx, format!("unexpected line: {line}"))),
            }
        }
        SceneModel::assemble(seed, extent, terrain, buildings, forest, water)
    }

    pub fn read_text_file(path: &Path) -> Result<SceneModel> {
        let f = std::fs::File::open(path)?;
        SceneModel::read_text(BufReader::new(f))
    }
}
