//! File formats.
//!
//! MVPM1 is a little-endian binary container for dense f64 tensors:
//!
//! ```text
//! offset  size        field
//! 0       5           magic "MVPM1"
//! 5       4           u32 rank
//! 9       8 * rank    u64 dims
//! ...     8 * prod    f64 payload, row-major
//! ```
//!
//! 2-D matrices can also be read and written as headerless CSV. Epochs are a
//! rank-3 tensor `(n_epochs, m, n_times)` with a JSON sidecar `<file>.json`
//! holding `sfreq` and `t0`. A scenario is a directory of MVPM1 files plus
//! `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovKind, Covariance, Epochs, LeadField, Scenario, SourceSet};
use crate::numerics::Mat;

pub const MAGIC: &[u8; 5] = b"MVPM1";
pub const MANIFEST: &str = "manifest.json";

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if expected != Some(data.len()) {
            return Err(Error::Format(format!(
                "dims {dims:?} do not match payload length {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_matrix(m: &Mat) -> Self {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(m.row(i).iter());
        }
        Self {
            dims: vec![r, c],
            data,
        }
    }

    pub fn into_matrix(self) -> Result<Mat> {
        match self.dims[..] {
            [r, c] => Ok(Mat::from_row_slice(r, c, &self.data)),
            _ => Err(Error::Format(format!("expected a 2-D matrix, found dims {:?}", self.dims))),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 8 * t.dims.len() + 8 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in &t.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let short = || Error::Format("truncated MVPM1 container".into());
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(Error::Format("missing MVPM1 magic".into()));
    }
    let rank = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let header = 9 + 8 * rank;
    if bytes.len() < header {
        return Err(short());
    }
    let dims: Vec<usize> = bytes[9..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))?;
    let payload = &bytes[header..];
    if payload.len() != 8 * count {
        return Err(Error::Format(format!(
            "payload has {} bytes, dims {dims:?} need {}",
            payload.len(),
            8 * count
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| io_err(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode(&bytes).map_err(|e| io_err(path, e))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn write_matrix_csv(path: &Path, m: &Mat) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|x| format!("{x:e}")))
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Mat> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| io_err(path, format!("line {}: {e}", rows.len() + 1)))?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(io_err(path, "empty matrix"));
    }
    Ok(Mat::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

/// Reads a 2-D matrix; `.csv` files are parsed as CSV, anything else as MVPM1.
pub fn read_matrix(path: &Path) -> Result<Mat> {
    if is_csv(path) {
        read_matrix_csv(path)
    } else {
        read_tensor(path)?.into_matrix().map_err(|e| io_err(path, e))
    }
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    if is_csv(path) {
        write_matrix_csv(path, m)
    } else {
        write_tensor(path, &Tensor::from_matrix(m))
    }
}

pub fn read_covariance(path: &Path, kind: CovKind) -> Result<Covariance> {
    Covariance::new(read_matrix(path)?, kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochsSidecar {
    pub sfreq: f64,
    pub t0: f64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn epochs_to_tensor(epochs: &Epochs) -> Tensor {
    let (e, m, t) = (epochs.n_epochs(), epochs.n_channels(), epochs.n_times());
    let mut data = Vec::with_capacity(e * m * t);
    for ep in epochs.data() {
        for i in 0..m {
            data.extend(ep.row(i).iter());
        }
    }
    Tensor {
        dims: vec![e, m, t],
        data,
    }
}

pub fn epochs_from_tensor(t: &Tensor, sidecar: EpochsSidecar) -> Result<Epochs> {
    let [e, m, n] = t.dims[..] else {
        return Err(Error::Format(format!("expected a 3-D epochs tensor, found dims {:?}", t.dims)));
    };
    let block = m * n;
    let data = (0..e)
        .map(|k| Mat::from_row_slice(m, n, &t.data[k * block..(k + 1) * block]))
        .collect();
    Epochs::new(data, sidecar.sfreq, sidecar.t0)
}

pub fn write_epochs(path: &Path, epochs: &Epochs) -> Result<()> {
    write_tensor(path, &epochs_to_tensor(epochs))?;
    let side = EpochsSidecar {
        sfreq: epochs.sfreq(),
        t0: epochs.t0(),
    };
    write_json(&sidecar_path(path), &side)
}

pub fn read_epochs(path: &Path) -> Result<Epochs> {
    let t = read_tensor(path)?;
    let side: EpochsSidecar = read_json(&sidecar_path(path))?;
    epochs_from_tensor(&t, side).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Contents of `manifest.json` in a scenario directory. Matrix fields are file names relative to the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub leadfield: String,
    pub true_sources: Vec<usize>,
    #[serde(rename = "Q0")]
    pub q0: String,
    #[serde(rename = "N")]
    pub n: String,
    #[serde(rename = "R")]
    pub r: String,
    pub seed: u64,
}

pub fn save_scenario(dir: &Path, sc: &Scenario) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest = ScenarioManifest {
        leadfield: "leadfield.mvpm".into(),
        true_sources: sc.true_sources.indices().to_vec(),
        q0: "Q0.mvpm".into(),
        n: "N.mvpm".into(),
        r: "R.mvpm".into(),
        seed: sc.seed,
    };
    write_matrix(&dir.join(&manifest.leadfield), sc.leadfield.gains())?;
    write_matrix(&dir.join(&manifest.q0), &sc.q0)?;
    write_matrix(&dir.join(&manifest.n), sc.noise.matrix())?;
    write_matrix(&dir.join(&manifest.r), sc.data.matrix())?;
    write_json(&dir.join(MANIFEST), &manifest)
}

/// Loads a scenario directory. `R` is taken from its file as stored.
pub fn load_scenario(dir: &Path) -> Result<Scenario> {
    let manifest: ScenarioManifest = read_json(&dir.join(MANIFEST))?;
    let leadfield = LeadField::new(read_matrix(&dir.join(&manifest.leadfield))?)?;
    let true_sources = SourceSet::new(manifest.true_sources.clone(), leadfield.n_sources())?;
    let q0 = read_matrix(&dir.join(&manifest.q0))?;
    let noise = read_covariance(&dir.join(&manifest.n), CovKind::Noise)?;
    let data = read_covariance(&dir.join(&manifest.r), CovKind::Data)?;
    let mut sc = Scenario::assemble(leadfield, true_sources, q0, noise, manifest.seed)?;
    if data.dim() != sc.data.dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("{0}x{0} R", sc.data.dim()),
            found: format!("{0}x{0}", data.dim()),
        });
    }
    sc.data = data;
    Ok(sc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synth_scenario, ScenarioSpec};

    #[test]
    fn container_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..5], b"MVPM1");
        assert_eq!(&b[5..9], &2u32.to_le_bytes());
        assert_eq!(&b[9..17], &2u64.to_le_bytes());
        assert_eq!(&b[17..25], &1u64.to_le_bytes());
        assert_eq!(&b[25..33], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 41);
        assert_eq!(decode(&b).unwrap(), t);
    }

    #[test]
    fn malformed_containers() {
        assert!(decode(b"MVPM2\0\0\0\0").is_err());
        let mut b = encode(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        b.pop();
        assert!(decode(&b).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn matrix_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 0.1 + 0.2]);
        for name in ["m.mvpm", "m.csv"] {
            let p = dir.path().join(name);
            write_matrix(&p, &m).unwrap();
            assert_eq!(read_matrix(&p).unwrap(), m);
        }
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Io { .. })));
    }

    #[test]
    fn scenario_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sc = synth_scenario(&ScenarioSpec::new(6, 8, vec![1.0, 0.5], 9)).unwrap();
        save_scenario(dir.path(), &sc).unwrap();
        let manifest: serde_json::Value = read_json(&dir.path().join(MANIFEST)).unwrap();
        for key in ["leadfield", "true_sources", "Q0", "N", "R", "seed"] {
            assert!(manifest.get(key).is_some(), "{key}");
        }
        assert_eq!(load_scenario(dir.path()).unwrap(), sc);
    }

    #[test]
    fn epochs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = vec![Mat::from_fn(3, 4, |i, j| (i + 10 * j) as f64), Mat::from_fn(3, 4, |i, j| (i * j) as f64)];
        let ep = Epochs::new(data, 250.0, -0.2).unwrap();
        let p = dir.path().join("ep.mvpm");
        write_epochs(&p, &ep).unwrap();
        assert!(sidecar_path(&p).exists());
        assert_eq!(read_epochs(&p).unwrap(), ep);
    }
}
