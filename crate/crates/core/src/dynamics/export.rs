//! CSV export and a compact binary cache for simulated paths.
//!
//! Binary layout (little endian): magic `RSBC`, `u32` version, `u64` S, N, d,
//! `u32` array count, then per array a `u32` name length, the UTF-8 name, a
//! `u64` element count and the `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::TrajectoryBundle;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"RSBC";
pub const CACHE_VERSION: u32 = 1;

/// Writes one row per (scenario, step): `scenario,step,t,x,y,dB_1..dB_d`.
/// The increment columns are empty on the terminal row.
pub fn write_trajectories_csv<W: Write>(bundle: &TrajectoryBundle, out: W) -> Result<()> {
    let d = bundle.scenarios.noise.dim();
    let n = bundle.steps();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scenario".to_string(), "step".into(), "t".into(), "x".into(), "y".into()];
    header.extend((1..=d).map(|i| format!("dB_{i}")));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for s in 0..bundle.count() {
        for k in 0..=n {
            row.clear();
            row.push(s.to_string());
            row.push(k.to_string());
            row.push(bundle.time.time(k).to_string());
            row.push(bundle.x(s, k).to_string());
            row.push(bundle.y(s, k).to_string());
            if k < n {
                row.extend(bundle.increment(s, k).iter().map(|v| v.to_string()));
            } else {
                row.extend(std::iter::repeat_n(String::new(), d));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Contents of a binary cache file.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheFile {
    pub scenarios: u64,
    pub steps: u64,
    pub dim: u64,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl CacheFile {
    pub fn from_bundle(bundle: &TrajectoryBundle) -> Self {
        CacheFile {
            scenarios: bundle.count() as u64,
            steps: bundle.steps() as u64,
            dim: bundle.scenarios.noise.dim() as u64,
            arrays: vec![
                ("x".into(), bundle.x.clone()),
                ("y".into(), bundle.y.clone()),
                ("dB".into(), bundle.scenarios.noise.raw().to_vec()),
            ],
        }
    }

    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        for v in [self.scenarios, self.steps, self.dim] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, values) in &self.arrays {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(values.len() as u64).to_le_bytes())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |reason: &str| Error::invalid("cache file", reason.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != CACHE_VERSION {
            return Err(bad("unsupported version"));
        }
        let scenarios = read_u64(&mut r)?;
        let steps = read_u64(&mut r)?;
        let dim = read_u64(&mut r)?;
        let count = read_u32(&mut r)?;
        let mut arrays = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("array name is not UTF-8"))?;
            let n = read_u64(&mut r)? as usize;
            let mut values = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            arrays.push((name, values));
        }
        Ok(CacheFile {
            scenarios,
            steps,
            dim,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        CacheFile::read_from(std::io::BufReader::new(f))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Hex SHA-256 over the given byte strings, each length-prefixed.
pub fn cache_key(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::super::testkit::constant_problem;
    use super::super::{simulate_forward, Scenarios};
    use super::*;
    use crate::measures::{RelaxedControl, SingularControl};

    fn bundle() -> TrajectoryBundle {
        let p = constant_problem(5, 0.1, 0.2, 0.3, 0.4);
        let sc = Scenarios::generate(&p, 3, 7).unwrap();
        simulate_forward(&p, sc, &RelaxedControl::uniform(5, 1), &SingularControl::zeros(5, 1)).unwrap()
    }

    #[test]
    fn csv_has_one_row_per_scenario_step() {
        let b = bundle();
        let mut buf = Vec::new();
        write_trajectories_csv(&b, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "scenario,step,t,x,y,dB_1");
        assert_eq!(lines.len(), 1 + 3 * 6);
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let rec = rd.records().nth(7).unwrap().unwrap();
        assert_eq!(rec[3].parse::<f64>().unwrap(), b.x(1, 1));
    }

    #[test]
    fn binary_cache_round_trips() {
        let b = bundle();
        let c = CacheFile::from_bundle(&b);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"RSBC");
        let back = CacheFile::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.array("x").unwrap(), b.x.as_slice());
        buf[0] = b'X';
        assert!(CacheFile::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn cache_key_separates_parts() {
        assert_ne!(cache_key(&[b"ab", b"c"]), cache_key(&[b"a", b"bc"]));
        assert_eq!(cache_key(&[b"x"]).len(), 64);
    }
}
