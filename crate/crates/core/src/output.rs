//! Artifact emission. Each file is first written as `<name>.partial` and
//! renamed into place once complete, so a crash leaves a visibly marked
//! fragment rather than a silently truncated file.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;

use crate::cluster::NOISE;
use crate::error::{Error, Result};

pub const PARTIAL_SUFFIX: &str = ".partial";

pub fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(PARTIAL_SUFFIX);
    PathBuf::from(s)
}

pub fn write_artifact_file(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = partial_path(path);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `dir/name` atomically and returns its path.
pub fn write_artifact(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    write_artifact_file(&path, contents)?;
    Ok(path)
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

/// `doc_id, z0, z1, ...` rows of latent embeddings.
pub fn embeddings_csv(doc_ids: &[&str], latent: ArrayView2<f64>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["doc_id".to_string()];
    header.extend((0..latent.ncols()).map(|j| format!("z{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (id, row) in doc_ids.iter().zip(latent.rows()) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(csv_err)?).expect("utf-8"))
}

/// One point of the 2-D scatter.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScatterPoint {
    pub doc_id: String,
    pub x: f64,
    pub y: f64,
    pub cluster: i64,
    pub flagged: bool,
}

pub fn tsne_csv(points: &[ScatterPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).map_err(csv_err)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(csv_err)?).expect("utf-8"))
}

const ORANGE: &str = "#ff8c00";

fn cluster_fill(label: i64) -> String {
    if label == NOISE {
        "#b0b0b0".to_string()
    } else {
        // Golden-angle hue steps keep neighbouring labels apart.
        let hue = (label as f64 * 137.508) % 360.0;
        format!("hsl({hue:.1},65%,45%)")
    }
}

/// Scatter plot: fill colour by cluster (noise grey), minority reports drawn
/// last with an orange ring.
pub fn scatter_svg(points: &[ScatterPoint], title: &str) -> String {
    const SIZE: f64 = 800.0;
    const MARGIN: f64 = 40.0;
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let px = |x: f64| MARGIN + (x - x0) * scale;
    let py = |y: f64| SIZE - MARGIN - (y - y0) * scale;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="16">{}</text>"#,
        xml_escape(title)
    );
    let mut ordered: Vec<&ScatterPoint> = points.iter().collect();
    ordered.sort_by_key(|p| p.flagged);
    for p in ordered {
        let stroke = if p.flagged {
            format!(r#" stroke="{ORANGE}" stroke-width="2.5""#)
        } else {
            String::new()
        };
        let r = if p.flagged { 6.0 } else { 3.5 };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{}" fill-opacity="0.8"{stroke}><title>{}</title></circle>"#,
            px(p.x),
            py(p.y),
            cluster_fill(p.cluster),
            xml_escape(&p.doc_id)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn artifact_is_renamed_into_place() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_artifact(dir.path(), "x.json", b"{}").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"{}");
        assert!(!partial_path(&p).exists());
    }

    #[test]
    fn failed_write_reports_io_error() {
        let err = write_artifact(Path::new("/nonexistent/dir"), "x", b"1").unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn embeddings_csv_layout() {
        let z = array![[0.5, 0.25], [1.0, 0.0]];
        assert_eq!(
            embeddings_csv(&["a", "b"], z.view()).unwrap(),
            "doc_id,z0,z1\na,0.5,0.25\nb,1,0\n"
        );
    }

    #[test]
    fn scatter_marks_minority_reports() {
        let pts = vec![
            ScatterPoint {
                doc_id: "a<1>".into(),
                x: 0.0,
                y: 0.0,
                cluster: 0,
                flagged: false,
            },
            ScatterPoint {
                doc_id: "b".into(),
                x: 1.0,
                y: 2.0,
                cluster: NOISE,
                flagged: true,
            },
        ];
        let svg = scatter_svg(&pts, "t");
        assert!(svg.contains(ORANGE));
        assert!(svg.contains("#b0b0b0"));
        assert!(svg.contains("a&lt;1&gt;"));
        assert_eq!(svg.matches("<circle").count(), 2);
        let csv = tsne_csv(&pts).unwrap();
        assert!(csv.starts_with("doc_id,x,y,cluster,flagged\n"));
    }
}
