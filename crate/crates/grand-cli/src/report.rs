//! Run manifests, CSV emission, and the hand-rolled SVG line chart.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use grand_core::Result;

#[derive(serde::Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(serde::Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Content hash over the input dataset files, empty for synthetic runs.
    pub input_hash: String,
    pub wall_clock_s: f64,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Hash of the canonical dataset files under a directory, in fixed order.
pub fn hash_dataset_dir(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in ["edges.tsv", "features.csv", "labels.txt", "splits.json"] {
        let path = dir.join(name);
        if path.exists() {
            hasher.update(name.as_bytes());
            hasher.update(std::fs::read(&path)?);
        }
    }
    Ok(format!("{:x}", hasher.finalize()))
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seed: u64,
    input_hash: String,
    started: std::time::Instant,
    outputs: Vec<PathBuf>,
    out_dir: PathBuf,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, out_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            input_hash: String::new(),
            started: std::time::Instant::now(),
            outputs: Vec::new(),
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn with_input_hash(mut self, hash: String) -> Self {
        self.input_hash = hash;
        self
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `<out>/manifest.json`; exactly one per run.
    pub fn finish(self) -> Result<()> {
        let mut outputs = Vec::new();
        for path in &self.outputs {
            let bytes = std::fs::read(path)?;
            let rel = path
                .strip_prefix(&self.out_dir)
                .unwrap_or(path)
                .display()
                .to_string();
            outputs.push(OutputEntry { path: rel, sha256: sha256_hex(&bytes) });
        }
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            input_hash: self.input_hash,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            outputs,
        };
        std::fs::write(
            self.out_dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Minimal SVG line chart: labelled axes, one polyline per series. The CSV
/// next to it is the authoritative artifact.
pub fn write_line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    log_x: bool,
    log_y: bool,
) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const M: f64 = 60.0;
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

    let tx = |v: f64| if log_x { v.max(1e-300).log10() } else { v };
    let ty = |v: f64| if log_y { v.max(1e-300).log10() } else { v };

    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|&(x, y)| (tx(x), ty(y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if all.is_empty() {
        std::fs::write(path, format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\"><text x=\"20\" y=\"40\">{title}: no data</text></svg>"))?;
        return Ok(());
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| M + (tx(x) - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (ty(y) - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!("<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", W / 2.0, title));
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M
    ));
    svg.push_str(&format!("<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n", H - M));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        H - 16.0,
        x_label
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        H / 2.0,
        H / 2.0,
        y_label
    ));
    // corner tick labels
    svg.push_str(&format!(
        "<text x=\"{M}\" y=\"{}\" font-size=\"10\">{:.4}</text>\n",
        H - M + 14.0,
        if log_x { 10f64.powf(x0) } else { x0 }
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{:.4}</text>\n",
        W - M,
        H - M + 14.0,
        if log_x { 10f64.powf(x1) } else { x1 }
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{:.4}</text>\n",
        M - 4.0,
        H - M,
        if log_y { 10f64.powf(y0) } else { y0 }
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{:.4}</text>\n",
        M - 4.0,
        M + 4.0,
        if log_y { 10f64.powf(y1) } else { y1 }
    ));

    for (s, (name, pts)) in series.iter().enumerate() {
        let color = palette[s % palette.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| tx(*x).is_finite() && ty(*y).is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if coords.len() > 1 {
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                coords.join(" ")
            ));
        }
        for c in &coords {
            let mut it = c.split(',');
            let x: f64 = it.next().unwrap().parse().unwrap();
            let y: f64 = it.next().unwrap().parse().unwrap();
            svg.push_str(&format!("<circle cx=\"{x}\" cy=\"{y}\" r=\"2.5\" fill=\"{color}\"/>\n"));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
            W - M + 6.0,
            M + 16.0 * s as f64,
            name
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Round-trip-safe float formatting for CSV cells.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}
