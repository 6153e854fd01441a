//! CSV tables, the per-directory manifest and SVG plots.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rome_core::artifact::{sha256_hex, to_sorted_json};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// A CSV cell; floats use Rust's shortest round-trip formatting.
pub enum Cell {
    Str(String),
    Int(u64),
    Float(f64),
    Empty,
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Str(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Str(s)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Str(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v}"),
            Cell::Empty => String::new(),
        }
    }
}

#[derive(Default)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row.iter().map(Cell::render).collect());
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::config(format!("csv buffer: {e}")))
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<String, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(bytes))
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub commands: BTreeMap<String, CommandRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandRecord {
    pub status: String,
    pub config_hash: String,
    pub config: Value,
    /// Hashes of artifacts read by the command.
    pub inputs: BTreeMap<String, String>,
    /// Hashes of files written by the command.
    pub outputs: BTreeMap<String, String>,
    pub flags: BTreeMap<String, Value>,
    pub notes: Vec<String>,
    pub started_unix_ms: u128,
    pub elapsed_ms: Option<u128>,
}

/// Tracks one command's entry in the directory manifest. The entry is written
/// with status `running` before any result file, then completed.
pub struct ManifestWriter {
    path: PathBuf,
    name: String,
    record: CommandRecord,
    start: Instant,
}

impl ManifestWriter {
    pub fn begin(
        dir: &Path,
        name: &str,
        config_hash: String,
        config: &impl Serialize,
        flags: BTreeMap<String, Value>,
    ) -> Result<Self, CliError> {
        let started_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        let record = CommandRecord {
            status: "running".into(),
            config_hash,
            config: serde_json::to_value(config).map_err(rome_core::Error::from)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            flags,
            notes: Vec::new(),
            started_unix_ms,
            elapsed_ms: None,
        };
        let w = Self { path: dir.join(MANIFEST), name: name.to_string(), record, start: Instant::now() };
        w.flush()?;
        Ok(w)
    }

    pub fn input(&mut self, label: &str, hash: String) {
        self.record.inputs.insert(label.to_string(), hash);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.record.notes.push(note.into());
    }

    /// Write `bytes` to `dir/file` and record its hash.
    pub fn output(&mut self, file: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path.with_file_name(file);
        let hash = write_file(&path, bytes)?;
        self.record.outputs.insert(file.to_string(), hash);
        Ok(path)
    }

    pub fn finish(mut self, status: &str) -> Result<(), CliError> {
        self.record.status = status.to_string();
        self.record.elapsed_ms = Some(self.start.elapsed().as_millis());
        self.flush()
    }

    fn flush(&self) -> Result<(), CliError> {
        let mut manifest = match fs::read_to_string(&self.path) {
            Ok(text) => serde_json::from_str::<Manifest>(&text).unwrap_or_else(|_| {
                log::warn!("replacing unreadable manifest {}", self.path.display());
                Manifest::default()
            }),
            Err(_) => Manifest::default(),
        };
        manifest.tool = "rome".into();
        manifest.tool_version = env!("CARGO_PKG_VERSION").into();
        manifest.commands.insert(self.name.clone(), self.record.clone());
        write_file(&self.path, to_sorted_json(&manifest)?.as_bytes())?;
        Ok(())
    }
}

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dashed: bool,
}

pub struct Band {
    pub x: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub color: &'static str,
}

/// Minimal line plot with optional shaded band and log-scaled x axis.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], band: Option<&Band>, log_x: bool) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 150.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let xs = series.iter().flat_map(|s| s.x.iter()).chain(band.iter().flat_map(|b| b.x.iter())).map(|&x| tx(x));
    let ys = series
        .iter()
        .flat_map(|s| s.y.iter().copied())
        .chain(band.iter().flat_map(|b| b.lo.iter().chain(b.hi.iter()).copied()))
        .filter(|v| v.is_finite());
    let (x0, x1) = bounds(xs);
    let (y0, y1) = bounds(ys);
    let px = |x: f64| L + (tx(x) - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        (W - R + L) / 2.0,
        escape(title)
    );
    if let Some(b) = band {
        let mut pts: Vec<String> = b.x.iter().zip(&b.hi).map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        pts.extend(b.x.iter().zip(&b.lo).rev().map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y))));
        s += &format!("<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.2\"/>\n", pts.join(" "), b.color);
    }
    s += &format!(
        "<line x1=\"{L}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n<line x1=\"{L}\" y1=\"{T}\" x2=\"{L}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - B,
        W - R
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let xv = if log_x { 10f64.powf(fx) } else { fx };
        s += &format!(
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            px(xv),
            H - B + 16.0,
            tick(xv),
            L - 6.0,
            py(fy) + 4.0,
            tick(fy)
        );
    }
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (W - R + L) / 2.0,
        H - 12.0,
        escape(xlabel),
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .x
            .iter()
            .zip(&ser.y)
            .filter(|(_, y)| y.is_finite())
            .map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let dash = if ser.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        s += &format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{dash}/>\n",
            pts.join(" "),
            ser.color
        );
        let ly = T + 16.0 * i as f64 + 8.0;
        s += &format!(
            "<line x1=\"{0}\" y1=\"{ly}\" x2=\"{1}\" y2=\"{ly}\" stroke=\"{2}\" stroke-width=\"2\"{dash}/>\n<text x=\"{3}\" y=\"{4}\">{5}</text>\n",
            W - R + 10.0,
            W - R + 30.0,
            ser.color,
            W - R + 35.0,
            ly + 4.0,
            escape(ser.label)
        );
    }
    s += "</svg>\n";
    s
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_lf_and_round_trip_floats() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.push(vec![1usize.into(), 0.1f64.into(), Cell::Empty]);
        t.push(vec!["x".into(), (1.0f64 / 3.0).into(), Some(2.5f64).into()]);
        let text = String::from_utf8(t.to_bytes().unwrap()).unwrap();
        assert_eq!(text, "a,b,c\n1,0.1,\nx,0.3333333333333333,2.5\n");
    }

    #[test]
    fn manifest_merges_commands() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ManifestWriter::begin(dir.path(), "probe", "h1".into(), &1, BTreeMap::new()).unwrap();
        a.output("x.csv", b"1\n").unwrap();
        a.finish("ok").unwrap();
        let b = ManifestWriter::begin(dir.path(), "optimize", "h2".into(), &2, BTreeMap::new()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        let m: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(m.commands["probe"].status, "ok");
        assert_eq!(m.commands["probe"].outputs["x.csv"], sha256_hex(b"1\n"));
        assert_eq!(m.commands["optimize"].status, "running");
        b.finish("ok").unwrap();
    }

    #[test]
    fn svg_is_well_formed() {
        let s = line_plot(
            "t",
            "k",
            "MF",
            &[Series { label: "a<b", color: "red", x: vec![1.0, 2.0], y: vec![0.5, 0.2], dashed: false }],
            Some(&Band { x: vec![1.0, 2.0], lo: vec![0.1, 0.0], hi: vec![0.3, 0.2], color: "blue" }),
            false,
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b"));
    }
}
