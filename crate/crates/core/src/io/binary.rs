//! Little-endian binary reservoirs: `TSR1` for ordinal-model draws and
//! `TVR1` for VAR draws, one file per site, plus a JSON manifest per
//! directory.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariate::{VarReservoir, VarSiteParams};
use crate::error::{Error, Result};
use crate::io::Provenance;
use crate::model::SiteParams;
use crate::stage1::Reservoir;

pub const FORMAT_VERSION: u32 = 1;
const TSR_MAGIC: &[u8; 4] = b"TSR1";
const TVR_MAGIC: &[u8; 4] = b"TVR1";

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated record".into()))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(|_| Error::Format("file too short".into()))?;
    if &m != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&m)
        )));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    Ok(())
}

fn ensure_at_end<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after the last record".into()));
    }
    Ok(())
}

/// Header `TSR1, version, site_id, T, P, n_draws`, then per draw
/// `beta_0..beta_P, gamma, sigma2, z_1..z_T`.
pub fn write_reservoir<W: Write>(w: &mut W, res: &Reservoir) -> Result<()> {
    let t = res.t_len();
    let n_coef = res.n_coef();
    if n_coef == 0 {
        return Err(Error::EmptyReservoir(res.site_id));
    }
    w.write_all(TSR_MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, res.site_id)?;
    put_u32(w, t as u32)?;
    put_u32(w, (n_coef - 1) as u32)?;
    put_u32(w, res.n_draws() as u32)?;
    for d in &res.draws {
        if d.beta.len() != n_coef || d.z.len() != t {
            return Err(Error::DimensionMismatch(format!("ragged draws in reservoir {}", res.site_id)));
        }
        for &v in d.beta.iter().chain([d.gamma, d.sigma2].iter()).chain(&d.z) {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

pub fn read_reservoir<R: Read>(r: &mut R) -> Result<Reservoir> {
    check_magic(r, TSR_MAGIC)?;
    let site_id = get_u32(r)?;
    let t = get_u32(r)? as usize;
    let n_coef = get_u32(r)? as usize + 1;
    let n = get_u32(r)? as usize;
    let width = n_coef + 2 + t;
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let v = get_f64s(r, width)?;
        draws.push(SiteParams {
            beta: v[..n_coef].to_vec(),
            gamma: v[n_coef],
            sigma2: v[n_coef + 1],
            z: v[n_coef + 2..].to_vec(),
        });
    }
    ensure_at_end(r)?;
    Ok(Reservoir { site_id, draws })
}

/// Header `TVR1, version, site_id, J, n_draws`, then per draw
/// `delta_1..delta_J` and the lower triangle of `Sigma` row by row.
pub fn write_var_reservoir<W: Write>(w: &mut W, res: &VarReservoir) -> Result<()> {
    let j = res.n_cov();
    w.write_all(TVR_MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, res.site_id)?;
    put_u32(w, j as u32)?;
    put_u32(w, res.draws.len() as u32)?;
    for d in &res.draws {
        if d.delta.len() != j || d.sigma.nrows() != j || d.sigma.ncols() != j {
            return Err(Error::DimensionMismatch(format!("ragged draws in VAR reservoir {}", res.site_id)));
        }
        for &v in &d.delta {
            put_f64(w, v)?;
        }
        for a in 0..j {
            for b in 0..=a {
                put_f64(w, d.sigma[(a, b)])?;
            }
        }
    }
    Ok(())
}

pub fn read_var_reservoir<R: Read>(r: &mut R) -> Result<VarReservoir> {
    check_magic(r, TVR_MAGIC)?;
    let site_id = get_u32(r)?;
    let j = get_u32(r)? as usize;
    let n = get_u32(r)? as usize;
    let width = j + j * (j + 1) / 2;
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let v = get_f64s(r, width)?;
        let mut sigma = DMatrix::zeros(j, j);
        let mut k = j;
        for a in 0..j {
            for b in 0..=a {
                sigma[(a, b)] = v[k];
                sigma[(b, a)] = v[k];
                k += 1;
            }
        }
        draws.push(VarSiteParams { delta: v[..j].to_vec(), sigma });
    }
    ensure_at_end(r)?;
    Ok(VarReservoir { site_id, draws })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub site_id: u32,
    pub file: String,
    pub sha256: String,
}

/// Index of a directory of per-site binaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub sites: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

fn site_file(site_id: u32, ext: &str) -> String {
    format!("site_{site_id:05}.{ext}")
}

fn write_dir<T>(
    dir: &Path,
    items: &[T],
    format: &str,
    ext: &str,
    prov: &Provenance,
    id: impl Fn(&T) -> u32,
    encode: impl Fn(&mut Vec<u8>, &T) -> Result<()>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut sites = Vec::with_capacity(items.len());
    for item in items {
        let mut bytes = Vec::new();
        encode(&mut bytes, item)?;
        let file = site_file(id(item), ext);
        fs::write(dir.join(&file), &bytes)?;
        sites.push(ManifestEntry {
            site_id: id(item),
            file,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest {
        format: format.into(),
        config_hash: prov.config_hash.clone(),
        seed: prov.seed,
        sites,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", dir.join(MANIFEST).display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_dir_files<T>(dir: &Path, format: &str, decode: impl Fn(&mut &[u8]) -> Result<T>) -> Result<Vec<T>> {
    let manifest = read_manifest(dir)?;
    if manifest.format != format {
        return Err(Error::Format(format!("{} holds {} files, expected {format}", dir.display(), manifest.format)));
    }
    manifest
        .sites
        .iter()
        .map(|e| {
            let path: PathBuf = dir.join(&e.file);
            let bytes = fs::read(&path)?;
            if hex::encode(Sha256::digest(&bytes)) != e.sha256 {
                return Err(Error::Format(format!("checksum mismatch for {}", path.display())));
            }
            decode(&mut bytes.as_slice())
        })
        .collect()
}

/// Write one `TSR1` file per reservoir and the manifest.
pub fn write_reservoir_dir(dir: &Path, reservoirs: &[Reservoir], prov: &Provenance) -> Result<()> {
    write_dir(dir, reservoirs, "TSR1", "tsr", prov, |r| r.site_id, |w, r| write_reservoir(w, r))
}

pub fn read_reservoir_dir(dir: &Path) -> Result<Vec<Reservoir>> {
    read_dir_files(dir, "TSR1", |r| read_reservoir(r))
}

pub fn write_var_reservoir_dir(dir: &Path, reservoirs: &[VarReservoir], prov: &Provenance) -> Result<()> {
    write_dir(dir, reservoirs, "TVR1", "tvr", prov, |r| r.site_id, |w, r| write_var_reservoir(w, r))
}

pub fn read_var_reservoir_dir(dir: &Path) -> Result<Vec<VarReservoir>> {
    read_dir_files(dir, "TVR1", |r| read_var_reservoir(r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Reservoir {
        Reservoir {
            site_id: 7,
            draws: (0..3)
                .map(|k| SiteParams {
                    beta: vec![k as f64, -0.25, 1e-300],
                    gamma: 0.1 * k as f64,
                    sigma2: 2.0,
                    z: vec![0.5, f64::MIN_POSITIVE, -3.0, 1.5],
                })
                .collect(),
        }
    }

    #[test]
    fn tsr_round_trip_and_layout() {
        let res = sample();
        let mut bytes = Vec::new();
        write_reservoir(&mut bytes, &res).unwrap();
        assert_eq!(&bytes[..4], b"TSR1");
        assert_eq!(bytes.len(), 4 + 5 * 4 + 3 * (3 + 2 + 4) * 8);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        let back = read_reservoir(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, res);
    }

    #[test]
    fn corrupt_files_rejected() {
        let mut bytes = Vec::new();
        write_reservoir(&mut bytes, &sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_reservoir(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(read_reservoir(&mut &short[..]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_reservoir(&mut long.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn tvr_round_trip() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.5, 0.25, 0.25, 0.75]);
        let res = VarReservoir {
            site_id: 3,
            draws: vec![VarSiteParams { delta: vec![0.5, -0.1], sigma: sigma.clone() }; 2],
        };
        let mut bytes = Vec::new();
        write_var_reservoir(&mut bytes, &res).unwrap();
        assert_eq!(bytes.len(), 4 + 4 * 4 + 2 * 5 * 8);
        assert_eq!(read_var_reservoir(&mut bytes.as_slice()).unwrap(), res);
    }

    #[test]
    fn directory_round_trip_with_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let prov = Provenance { config_hash: "abc".into(), seed: 4 };
        write_reservoir_dir(dir.path(), &[sample()], &prov).unwrap();
        assert_eq!(read_reservoir_dir(dir.path()).unwrap(), vec![sample()]);
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!((m.seed, m.sites[0].file.as_str()), (4, "site_00007.tsr"));
        fs::write(dir.path().join("site_00007.tsr"), b"TSR1").unwrap();
        assert!(read_reservoir_dir(dir.path()).is_err());
        assert!(read_var_reservoir_dir(dir.path()).is_err());
    }
}
