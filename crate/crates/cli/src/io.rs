//! On-disk formats: JSON matrix files, CSV measurement records, PNG and raw
//! phase screens.

use std::fs;
use std::io::Write;
use std::path::Path;

use quditqpt::channels::{ChiMatrix, KrausChannel};
use quditqpt::numkernel::{c, ComplexMatrix};
use quditqpt::qudit::DensityMatrix;
use quditqpt::tomography::{MeasurementRecord, Shots};
use quditqpt::turbulence::PhaseScreen;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    /// `shape = [count, d, d]`
    Kraus,
    /// `shape = [d^2, d^2]`
    Chi,
    /// `shape = [d, d]`
    Density,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

/// Matrix file: entries are the row-major `[re, im]` pairs of every matrix,
/// concatenated. Floats are written in shortest round-trip form (at most 17
/// significant digits), so reading back is exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    pub kind: MatrixKind,
    pub d: usize,
    pub shape: Vec<usize>,
    pub entries: Vec<[f64; 2]>,
    pub metadata: Metadata,
}

fn entries_of<'a>(ms: impl IntoIterator<Item = &'a ComplexMatrix>) -> Vec<[f64; 2]> {
    ms.into_iter()
        .flat_map(|m| m.data().iter().map(|z| [z.re, z.im]))
        .collect()
}

impl MatrixFile {
    pub fn from_kraus(ch: &KrausChannel, metadata: Metadata) -> Self {
        let d = ch.dim();
        Self {
            kind: MatrixKind::Kraus,
            d,
            shape: vec![ch.operators().len(), d, d],
            entries: entries_of(ch.operators()),
            metadata,
        }
    }

    pub fn from_chi(chi: &ChiMatrix, metadata: Metadata) -> Self {
        let n = chi.dim() * chi.dim();
        Self {
            kind: MatrixKind::Chi,
            d: chi.dim(),
            shape: vec![n, n],
            entries: entries_of([chi.matrix()]),
            metadata,
        }
    }

    pub fn from_density(rho: &DensityMatrix, metadata: Metadata) -> Self {
        let d = rho.dim();
        Self {
            kind: MatrixKind::Density,
            d,
            shape: vec![d, d],
            entries: entries_of([rho.matrix()]),
            metadata,
        }
    }

    fn expect(&self, kind: MatrixKind) -> std::result::Result<(), String> {
        if self.kind != kind {
            return Err(format!("expected a {kind:?} file, found {:?}", self.kind));
        }
        let want = match kind {
            MatrixKind::Kraus => {
                let count = self.shape.first().copied().unwrap_or(0);
                vec![count, self.d, self.d]
            }
            MatrixKind::Chi => vec![self.d * self.d; 2],
            MatrixKind::Density => vec![self.d; 2],
        };
        if self.shape != want || (kind == MatrixKind::Kraus && want[0] == 0) {
            return Err(format!(
                "shape {:?} does not fit d = {}",
                self.shape, self.d
            ));
        }
        let n: usize = self.shape.iter().product();
        if self.entries.len() != n {
            return Err(format!(
                "{} entries for shape {:?}",
                self.entries.len(),
                self.shape
            ));
        }
        Ok(())
    }

    fn matrices(&self, size: usize) -> std::result::Result<Vec<ComplexMatrix>, String> {
        self.entries
            .chunks(size * size)
            .map(|chunk| {
                let data = chunk.iter().map(|&[re, im]| c(re, im)).collect();
                ComplexMatrix::new(size, size, data).map_err(|e| e.to_string())
            })
            .collect()
    }

    pub fn to_kraus(&self) -> std::result::Result<KrausChannel, String> {
        self.expect(MatrixKind::Kraus)?;
        KrausChannel::new(self.d, self.matrices(self.d)?).map_err(|e| e.to_string())
    }

    pub fn to_chi(&self) -> std::result::Result<ChiMatrix, String> {
        self.expect(MatrixKind::Chi)?;
        let m = self.matrices(self.d * self.d)?.remove(0);
        ChiMatrix::from_reconstruction(self.d, m).map_err(|e| e.to_string())
    }

    pub fn to_density(&self) -> std::result::Result<DensityMatrix, String> {
        self.expect(MatrixKind::Density)?;
        DensityMatrix::new(self.matrices(self.d)?.remove(0)).map_err(|e| e.to_string())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("matrix file serializes");
        text.push('\n');
        write_bytes(path, text.as_bytes())
    }
}

pub fn read_kraus(path: &Path) -> Result<KrausChannel> {
    MatrixFile::read(path)?
        .to_kraus()
        .map_err(|e| CliError::format(path, e))
}

pub fn read_chi(path: &Path) -> Result<ChiMatrix> {
    MatrixFile::read(path)?
        .to_chi()
        .map_err(|e| CliError::format(path, e))
}

pub fn read_density(path: &Path) -> Result<DensityMatrix> {
    MatrixFile::read(path)?
        .to_density()
        .map_err(|e| CliError::format(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    prep_index: usize,
    basis: usize,
    outcome: usize,
    probability: f64,
    shots: String,
}

/// CSV with header `prep_index,basis,outcome,probability,shots`; the shots
/// column is a count or `exact`.
pub fn write_records(path: &Path, records: &[MeasurementRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        let shots = match r.shots {
            Shots::Exact => "exact".to_string(),
            Shots::Sampled(n) => n.to_string(),
        };
        w.serialize(RecordRow {
            prep_index: r.prep,
            basis: r.basis,
            outcome: r.outcome,
            probability: r.probability,
            shots,
        })
        .map_err(|e| CliError::format(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::format(path, e))?;
    write_bytes(path, &bytes)
}

pub fn read_records(path: &Path, d: usize) -> Result<Vec<MeasurementRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e))?;
    let header = rdr
        .headers()
        .map_err(|e| CliError::format(path, e))?
        .clone();
    if header.iter().collect::<Vec<_>>()
        != ["prep_index", "basis", "outcome", "probability", "shots"]
    {
        return Err(CliError::format(
            path,
            format!("unexpected header {header:?}"),
        ));
    }
    rdr.deserialize::<RecordRow>()
        .map(|row| {
            let row = row.map_err(|e| CliError::format(path, e))?;
            let shots = if row.shots == "exact" {
                Shots::Exact
            } else {
                Shots::Sampled(row.shots.parse().map_err(|_| {
                    CliError::format(path, format!("bad shots value '{}'", row.shots))
                })?)
            };
            Ok(MeasurementRecord {
                dim: d,
                prep: row.prep_index,
                basis: row.basis,
                outcome: row.outcome,
                probability: row.probability,
                shots,
            })
        })
        .collect()
}

pub fn write_screen_png(path: &Path, screen: &PhaseScreen) -> Result<()> {
    let n = screen.size() as u32;
    let img = image::GrayImage::from_raw(n, n, screen.to_gray8()).expect("buffer matches size");
    let mut bytes = std::io::Cursor::new(Vec::new());
    img.write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| CliError::format(path, e))?;
    write_bytes(path, bytes.get_ref())
}

/// Raw screen magic.
pub const SCREEN_MAGIC: &[u8; 8] = b"QPSCREEN";

/// Little-endian: magic, `u32` N, `f64` spacing, `f64` r0, `u64` seed, then
/// `N * N` `f64` phases in row-major order.
pub fn write_screen_raw(path: &Path, screen: &PhaseScreen) -> Result<()> {
    let mut buf = Vec::with_capacity(36 + 8 * screen.grid().len());
    buf.write_all(SCREEN_MAGIC).unwrap();
    buf.write_all(&(screen.size() as u32).to_le_bytes())
        .unwrap();
    buf.write_all(&screen.spacing().to_le_bytes()).unwrap();
    buf.write_all(&screen.r0().to_le_bytes()).unwrap();
    buf.write_all(&screen.seed().to_le_bytes()).unwrap();
    for v in screen.grid() {
        buf.write_all(&v.to_le_bytes()).unwrap();
    }
    write_bytes(path, &buf)
}

pub fn read_screen_raw(path: &Path) -> Result<PhaseScreen> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let bad = |m: &str| CliError::format(path, m);
    if bytes.len() < 36 || &bytes[..8] != SCREEN_MAGIC {
        return Err(bad("not a raw phase screen"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let n = u32_at(8) as usize;
    let dx = f64_at(12);
    let r0 = f64_at(20);
    let seed = u64::from_le_bytes(bytes[28..36].try_into().unwrap());
    if bytes.len() != 36 + 8 * n * n {
        return Err(bad("truncated grid"));
    }
    let grid = (0..n * n).map(|k| f64_at(36 + 8 * k)).collect();
    PhaseScreen::from_grid(n, dx, r0, seed, grid).map_err(|e| CliError::format(path, e))
}
