//! Snapshot sets `(t_i, x_i, y_i)` and their CSV persistence.
//!
//! Rows are stored flat (`x` is `n * d`, `y` is `n * q`) so ten million
//! one-dimensional snapshots stay a few hundred megabytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::polybasis::{PolyError, PolyInBasis};

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot set is empty")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },
    #[error("time increment must be positive, got {0}")]
    BadTau(f64),
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("sidecar {path}: {msg}")]
    Sidecar { path: PathBuf, msg: String },
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// What `y` holds: the state one step later, or sampled Lie-derivative
/// values of each element of the target dictionary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotKind {
    Koopman,
    Generator,
}

/// Provenance written next to the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub system: String,
    pub mode: String,
    pub tau: f64,
    pub n: usize,
    pub seed: Option<u64>,
    pub snapshot_kind: SnapshotKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    d: usize,
    q: usize,
    tau: f64,
    kind: SnapshotKind,
    t: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    pub system: String,
    pub mode: String,
    pub seed: Option<u64>,
}

impl SnapshotSet {
    /// Validates and wraps flat row data.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        q: usize,
        tau: f64,
        kind: SnapshotKind,
        t: Vec<f64>,
        x: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self, SnapshotError> {
        let n = t.len();
        if n == 0 {
            return Err(SnapshotError::Empty);
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(SnapshotError::BadTau(tau));
        }
        if d == 0 || q == 0 {
            return Err(SnapshotError::Dimension(format!("d = {d}, q = {q}")));
        }
        if kind == SnapshotKind::Koopman && q != d {
            return Err(SnapshotError::Dimension(format!(
                "koopman snapshots need q = d, got q = {q}, d = {d}"
            )));
        }
        if x.len() != n * d || y.len() != n * q {
            return Err(SnapshotError::Dimension(format!(
                "{n} rows need {} x and {} y values, got {} and {}",
                n * d,
                n * q,
                x.len(),
                y.len()
            )));
        }
        for i in 0..n {
            let row_ok = t[i].is_finite()
                && x[i * d..(i + 1) * d].iter().all(|v| v.is_finite())
                && y[i * q..(i + 1) * q].iter().all(|v| v.is_finite());
            if !row_ok {
                return Err(SnapshotError::NonFinite { row: i });
            }
        }
        Ok(Self {
            d,
            q,
            tau,
            kind,
            t,
            x,
            y,
            system: String::from("custom"),
            mode: String::from("custom"),
            seed: None,
        })
    }

    pub fn with_provenance(mut self, system: &str, mode: &str, seed: Option<u64>) -> Self {
        self.system = system.to_owned();
        self.mode = mode.to_owned();
        self.seed = seed;
        self
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn obs_dim(&self) -> usize {
        self.q
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn kind(&self) -> SnapshotKind {
        self.kind
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t[i]
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.y[i * self.q..(i + 1) * self.q]
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn meta(&self) -> SnapshotMeta {
        SnapshotMeta {
            system: self.system.clone(),
            mode: self.mode.clone(),
            tau: self.tau,
            n: self.len(),
            seed: self.seed,
            snapshot_kind: self.kind,
        }
    }

    /// Rows `idx[0], idx[1], ...` as a new set.
    pub fn select(&self, idx: &[usize]) -> Result<Self, SnapshotError> {
        let mut t = Vec::with_capacity(idx.len());
        let mut x = Vec::with_capacity(idx.len() * self.d);
        let mut y = Vec::with_capacity(idx.len() * self.q);
        for &i in idx {
            t.push(self.t[i]);
            x.extend_from_slice(self.x(i));
            y.extend_from_slice(self.y(i));
        }
        let mut out = Self::new(self.d, self.q, self.tau, self.kind, t, x, y)?;
        out.system.clone_from(&self.system);
        out.mode.clone_from(&self.mode);
        out.seed = self.seed;
        Ok(out)
    }

    /// First `n` rows.
    pub fn prefix(&self, n: usize) -> Result<Self, SnapshotError> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// `(1/n) sum_i g(x_i)`.
    pub fn empirical_average(&self, g: &PolyInBasis) -> Result<f64, SnapshotError> {
        if self.is_empty() {
            return Err(SnapshotError::Empty);
        }
        let mut ev = g.dictionary.evaluator();
        let mut vals = vec![0.0; g.dictionary.len()];
        let mut sum = 0.0;
        let mut comp = 0.0;
        for i in 0..self.len() {
            ev.evaluate_into(self.x(i), &mut vals)?;
            let gi: f64 = vals.iter().zip(&g.coeffs).map(|(v, c)| v * c).sum();
            // Kahan
            let yk = gi - comp;
            let tk = sum + yk;
            comp = (tk - sum) - yk;
            sum = tk;
        }
        Ok(sum / self.len() as f64)
    }

    /// SHA-256 over the raw little-endian contents (dimensions, tau, kind, rows).
    pub fn data_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.d as u64).to_le_bytes());
        h.update((self.q as u64).to_le_bytes());
        h.update(self.tau.to_le_bytes());
        h.update([self.kind as u8]);
        for v in self.t.iter().chain(&self.x).chain(&self.y) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// Writes the CSV and its JSON sidecar.
    pub fn save_csv(&self, path: &Path) -> Result<(), SnapshotError> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let mut header = vec![String::from("t")];
        header.extend((1..=self.d).map(|k| format!("x_{k}")));
        header.extend((1..=self.q).map(|k| format!("y_{k}")));
        w.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(1 + self.d + self.q);
        for i in 0..self.len() {
            rec.clear();
            rec.push(fmt17(self.t[i]));
            rec.extend(self.x(i).iter().map(|v| fmt17(*v)));
            rec.extend(self.y(i).iter().map(|v| fmt17(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let side = Self::sidecar_path(path);
        let mut f = BufWriter::new(File::create(&side)?);
        serde_json::to_writer_pretty(&mut f, &self.meta()).map_err(|e| SnapshotError::Sidecar {
            path: side.clone(),
            msg: e.to_string(),
        })?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a CSV written by [`SnapshotSet::save_csv`]; the sidecar is required
    /// since it carries `tau` and the snapshot kind.
    pub fn load_csv(path: &Path) -> Result<Self, SnapshotError> {
        let side = Self::sidecar_path(path);
        let meta: SnapshotMeta = {
            let f = File::open(&side).map_err(|e| SnapshotError::Sidecar {
                path: side.clone(),
                msg: e.to_string(),
            })?;
            serde_json::from_reader(BufReader::new(f)).map_err(|e| SnapshotError::Sidecar {
                path: side.clone(),
                msg: e.to_string(),
            })?
        };
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(BufReader::new(File::open(path)?));
        let header = r.headers()?.clone();
        let (d, q) = parse_header(&header)?;
        if q == 0 {
            return Err(SnapshotError::Dimension(format!(
                "{:?} snapshots need y columns, header has none",
                meta.snapshot_kind
            )));
        }
        let mut t = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, rec) in r.records().enumerate() {
            // header is row 1 of the file; data rows are numbered from 1
            let row = i + 1;
            let rec = rec.map_err(|e| SnapshotError::Parse {
                row,
                msg: e.to_string(),
            })?;
            if rec.len() != 1 + d + q {
                return Err(SnapshotError::Parse {
                    row,
                    msg: format!("expected {} fields, found {}", 1 + d + q, rec.len()),
                });
            }
            let mut vals = rec.iter().map(|s| {
                s.trim().parse::<f64>().map_err(|e| SnapshotError::Parse {
                    row,
                    msg: format!("{s:?}: {e}"),
                })
            });
            t.push(vals.next().unwrap()?);
            for _ in 0..d {
                x.push(vals.next().unwrap()?);
            }
            for _ in 0..q {
                y.push(vals.next().unwrap()?);
            }
        }
        if t.len() != meta.n {
            return Err(SnapshotError::Dimension(format!(
                "sidecar declares {} rows, file has {}",
                meta.n,
                t.len()
            )));
        }
        let mut set = Self::new(d, q, meta.tau, meta.snapshot_kind, t, x, y)?;
        set.system = meta.system;
        set.mode = meta.mode;
        set.seed = meta.seed;
        Ok(set)
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_header(h: &csv::StringRecord) -> Result<(usize, usize), SnapshotError> {
    let bad = |msg: String| SnapshotError::Parse { row: 0, msg };
    let cols: Vec<&str> = h.iter().map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(bad("header must start with `t`".into()));
    }
    let d = cols.iter().filter(|c| c.starts_with("x_")).count();
    let q = cols.iter().filter(|c| c.starts_with("y_")).count();
    if d == 0 || cols.len() != 1 + d + q {
        return Err(bad(format!("malformed header {cols:?}")));
    }
    for k in 0..d {
        if cols[1 + k] != format!("x_{}", k + 1) {
            return Err(bad(format!("expected x_{} in column {}", k + 1, 2 + k)));
        }
    }
    for k in 0..q {
        if cols[1 + d + k] != format!("y_{}", k + 1) {
            return Err(bad(format!("expected y_{} in column {}", k + 1, 2 + d + k)));
        }
    }
    Ok((d, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polybasis::{total_degree_dictionary, Family};

    fn two_rows() -> SnapshotSet {
        SnapshotSet::new(
            1,
            1,
            1.0,
            SnapshotKind::Koopman,
            vec![0.0, 1.0],
            vec![0.0, 2.0],
            vec![2.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn averages() {
        let s = two_rows();
        let dict = total_degree_dictionary(Family::Monomial, 1, 1);
        let one = PolyInBasis::new(dict.clone(), vec![1.0, 0.0]).unwrap();
        let x = PolyInBasis::new(dict, vec![0.0, 1.0]).unwrap();
        assert_eq!(s.empirical_average(&one).unwrap(), 1.0);
        assert_eq!(s.empirical_average(&x).unwrap(), 1.0);
    }

    #[test]
    fn validation() {
        assert!(matches!(
            SnapshotSet::new(1, 1, 1.0, SnapshotKind::Koopman, vec![], vec![], vec![]),
            Err(SnapshotError::Empty)
        ));
        assert!(matches!(
            SnapshotSet::new(
                2,
                1,
                1.0,
                SnapshotKind::Koopman,
                vec![0.0],
                vec![0.0, 0.0],
                vec![0.0]
            ),
            Err(SnapshotError::Dimension(_))
        ));
        assert!(matches!(
            SnapshotSet::new(
                1,
                1,
                1.0,
                SnapshotKind::Koopman,
                vec![0.0],
                vec![f64::NAN],
                vec![0.0]
            ),
            Err(SnapshotError::NonFinite { row: 0 })
        ));
        assert!(matches!(
            SnapshotSet::new(
                1,
                1,
                0.0,
                SnapshotKind::Koopman,
                vec![0.0],
                vec![0.0],
                vec![0.0]
            ),
            Err(SnapshotError::BadTau(_))
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = two_rows();
        let mut b = two_rows();
        assert_eq!(a.data_hash(), b.data_hash());
        b.x[1] = 2.0000000000000004;
        assert_ne!(a.data_hash(), b.data_hash());
    }

    #[test]
    fn fmt17_round_trips() {
        for v in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02214076e23,
            f64::MIN_POSITIVE,
            -0.0,
            0.30000000000000004,
        ] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
