//! JSON model checkpoints.
//!
//! Every real number is written in scientific notation with 17 significant
//! digits, which round-trips any `f64` exactly. Matrices are row-major nested
//! arrays, one row per line.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::Deserialize;

use crate::corpus::Vocabulary;
use crate::dbm::{DbmModel, RbmParams};
use crate::error::{Error, Result};
use crate::output::write_artifact_file;
use crate::rsm::{EpochRecord, RsmParams};

pub const FORMAT_VERSION: u32 = 1;

/// A loaded checkpoint: the model and the configuration it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: DbmModel,
    pub config: Option<serde_json::Value>,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_vec(out: &mut String, xs: impl IntoIterator<Item = f64>) {
    out.push('[');
    for (i, x) in xs.into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&num(x));
    }
    out.push(']');
}

fn write_layer(
    out: &mut String,
    name: &str,
    w: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    last: bool,
) {
    let _ = writeln!(out, "  \"{name}\": {{");
    out.push_str("    \"w\": [\n");
    for (i, row) in w.rows().into_iter().enumerate() {
        out.push_str("      ");
        write_vec(out, row.iter().copied());
        out.push_str(if i + 1 < w.nrows() { ",\n" } else { "\n" });
    }
    out.push_str("    ],\n    \"a\": ");
    write_vec(out, a.iter().copied());
    out.push_str(",\n    \"b\": ");
    write_vec(out, b.iter().copied());
    out.push_str(if last { "\n  }\n" } else { "\n  },\n" });
}

/// Renders the checkpoint text. Fails on non-finite parameters, which JSON
/// cannot represent.
pub fn checkpoint_json(model: &DbmModel, config: Option<&serde_json::Value>) -> Result<String> {
    model.validate()?;
    if !model.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{{\n  \"format_version\": {FORMAT_VERSION},");
    let _ = writeln!(
        out,
        "  \"vocab\": {},",
        serde_json::to_string(model.vocab.terms()).expect("strings serialize")
    );
    let l1 = &model.layer1;
    write_layer(&mut out, "layer1", &l1.w, &l1.a, &l1.b, false);
    let l2 = &model.layer2;
    write_layer(&mut out, "layer2", &l2.w, &l2.a, &l2.b, false);
    let config = config.map_or_else(|| "null".to_string(), |c| c.to_string());
    let _ = writeln!(out, "  \"config\": {config},");
    out.push_str("  \"training_log\": [");
    for (i, r) in model.training_log.iter().enumerate() {
        out.push_str(if i > 0 { ",\n    " } else { "\n    " });
        let _ = write!(
            out,
            "{{\"epoch\": {}, \"layer\": {}, \"statistic\": {}}}",
            r.epoch,
            r.layer,
            num(r.statistic)
        );
    }
    out.push_str(if model.training_log.is_empty() {
        "]\n}\n"
    } else {
        "\n  ]\n}\n"
    });
    Ok(out)
}

pub fn save_checkpoint(
    model: &DbmModel,
    config: Option<&serde_json::Value>,
    path: &Path,
) -> Result<()> {
    let text = checkpoint_json(model, config)?;
    write_artifact_file(path, text.as_bytes())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    w: Vec<Vec<f64>>,
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCheckpoint {
    #[serde(rename = "format_version")]
    _format_version: u32,
    vocab: Vec<String>,
    layer1: RawLayer,
    layer2: RawLayer,
    config: Option<serde_json::Value>,
    training_log: Vec<EpochRecord>,
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> std::result::Result<Array2<f64>, String> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(format!("{what} is not rectangular"));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).map_err(|e| e.to_string())
}

/// Parses checkpoint text; never returns a partially populated model.
pub fn parse_checkpoint(text: &str, path: &Path) -> Result<Checkpoint> {
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| malformed("missing format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: version.min(u64::from(u32::MAX)) as u32,
            expected: FORMAT_VERSION,
        });
    }
    let raw: RawCheckpoint = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    let vocab = Vocabulary::from_terms(raw.vocab).map_err(|e| malformed(e.to_string()))?;
    let layer1 = RsmParams {
        w: matrix(raw.layer1.w, "layer1.w").map_err(malformed)?,
        a: Array1::from(raw.layer1.a),
        b: Array1::from(raw.layer1.b),
    };
    let mut w2 = matrix(raw.layer2.w, "layer2.w").map_err(malformed)?;
    if w2.nrows() == 0 {
        // An empty nested array carries no column count.
        w2 = Array2::zeros((0, raw.layer2.b.len()));
    }
    let layer2 = RbmParams {
        w: w2,
        a: Array1::from(raw.layer2.a),
        b: Array1::from(raw.layer2.b),
    };
    let model = DbmModel {
        vocab,
        layer1,
        layer2,
        training_log: raw.training_log,
    };
    model.validate().map_err(|e| malformed(e.to_string()))?;
    Ok(Checkpoint {
        format_version: FORMAT_VERSION,
        model,
        config: raw.config,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}
