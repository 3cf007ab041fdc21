//! CSV and SVG report writers.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use sargnn::accel::{CycleReport, KernelKind};

/// Report preamble: command, optional timestamp, effective config.
pub fn preamble(command: &str, config_header: &str, timestamp: bool) -> String {
    let mut out = format!("# sargnn {command}\n");
    if timestamp {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let _ = writeln!(out, "# generated_unix = {secs}");
    }
    out.push_str(config_header);
    out
}

/// Writes `preamble`, a header row and the rows.
pub fn write_csv<I, R>(path: &Path, preamble: &str, columns: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(preamble.as_bytes().to_vec());
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub const CYCLE_COLUMNS: [&str; 9] = [
    "image",
    "kernel_index",
    "layer_name",
    "kind",
    "label",
    "work_items",
    "cycles",
    "latency_us",
    "preprocessing_us",
];

/// Per-kernel rows followed by summary rows (one per kernel kind, then the
/// overall total carrying latency and preprocessing time).
pub fn cycle_rows(image: &str, r: &CycleReport) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = r
        .kernels
        .iter()
        .map(|k| {
            vec![
                image.to_string(),
                k.index.to_string(),
                k.layer_name.clone(),
                k.kind.name().to_string(),
                k.label.to_string(),
                k.work_items.to_string(),
                k.cycles.to_string(),
                String::new(),
                String::new(),
            ]
        })
        .collect();
    for kind in [
        KernelKind::Vak,
        KernelKind::Vuk,
        KernelKind::Mtu,
        KernelKind::Elementwise,
    ] {
        let work: usize = r
            .kernels
            .iter()
            .filter(|k| k.kind == kind)
            .map(|k| k.work_items)
            .sum();
        rows.push(vec![
            image.to_string(),
            "summary".into(),
            String::new(),
            kind.name().into(),
            "total".into(),
            work.to_string(),
            r.cycles_of(kind).to_string(),
            String::new(),
            String::new(),
        ]);
    }
    rows.push(vec![
        image.to_string(),
        "summary".into(),
        String::new(),
        "ALL".into(),
        "total".into(),
        r.kernels
            .iter()
            .map(|k| k.work_items)
            .sum::<usize>()
            .to_string(),
        r.total_cycles().to_string(),
        format!("{:.6}", r.latency_us()),
        format!("{:.3}", r.preprocessing_us),
    ]);
    rows
}

fn kind_color(kind: KernelKind) -> &'static str {
    match kind {
        KernelKind::Vak => "#4c72b0",
        KernelKind::Vuk => "#dd8452",
        KernelKind::Mtu => "#55a868",
        KernelKind::Elementwise => "#8172b3",
    }
}

/// Horizontal bar chart of per-kernel cycles.
pub fn cycle_svg(title: &str, r: &CycleReport) -> String {
    let (bar_h, gap, left, width) = (14.0, 4.0, 220.0, 520.0);
    let top = 40.0;
    let height = top + r.kernels.len() as f64 * (bar_h + gap) + 40.0;
    let max = r.kernels.iter().map(|k| k.cycles).max().unwrap_or(0).max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="monospace" font-size="11">"#,
        left + width + 80.0
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    for (i, k) in r.kernels.iter().enumerate() {
        let y = top + i as f64 * (bar_h + gap);
        let w = width * k.cycles as f64 / max;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{} {} {}</text>"#,
            left - 6.0,
            y + bar_h - 3.0,
            k.index,
            escape(&k.layer_name),
            k.label
        );
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{y}" width="{w:.2}" height="{bar_h}" fill="{}"><title>{} {}</title></rect>"#,
            kind_color(k.kind),
            k.kind.name(),
            k.cycles
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}">{}</text>"#,
            left + w + 4.0,
            y + bar_h - 3.0,
            k.cycles
        );
    }
    let legend_y = height - 16.0;
    for (j, kind) in [
        KernelKind::Vak,
        KernelKind::Vuk,
        KernelKind::Mtu,
        KernelKind::Elementwise,
    ]
    .iter()
    .enumerate()
    {
        let x = 10.0 + j as f64 * 90.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#,
            legend_y - 9.0,
            kind_color(*kind)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{legend_y}">{}</text>"#,
            x + 14.0,
            kind.name()
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{legend_y}">total {} cycles</text>"#,
        10.0 + 4.0 * 90.0,
        r.total_cycles()
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
