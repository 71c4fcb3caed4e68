//! JSON Lines trace files.
//!
//! Line 1 is the header object; every following line is one step record.
//! Keys are written in a fixed order and floats in shortest round-trip form,
//! so `save(load(f)) == f` for any file this module wrote.
//!
//! Hidden states are either inline (`"hidden": [...]`) or stored in a `.rgt`
//! sidecar of shape `(rows, d_hid)` named by the header's `hidden_sidecar`,
//! in which case each step carries `"hidden_row": n` instead.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rgt;
use crate::steering::StepClass;
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceRole {
    Srm,
    Lrm,
    Calibration,
}

/// Precision the values were recorded in upstream. `f32` traces are parsed
/// as single precision and widened, and written back as single precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub schema_version: u64,
    pub model_tag: String,
    pub d_hid: usize,
    pub layer_index: i64,
    pub entropy_k: usize,
    pub delimiter: String,
    pub role: TraceRole,
    pub precision: Precision,
}

impl TraceHeader {
    pub fn new(model_tag: impl Into<String>, d_hid: usize, entropy_k: usize, role: TraceRole) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model_tag: model_tag.into(),
            d_hid,
            layer_index: 0,
            entropy_k,
            delimiter: "\n\n".into(),
            role,
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step_index: u64,
    pub hidden: Vec<f64>,
    pub topk_logits: Vec<f64>,
    pub text: String,
    pub is_boundary: bool,
    pub gold_class: Option<StepClass>,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub final_answer_correct: Option<bool>,
}

impl Trace {
    pub fn validate(&self) -> Result<()> {
        validate_header(&self.header)?;
        for (pos, step) in self.steps.iter().enumerate() {
            validate_step(&self.header, step, pos, pos + 2)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    schema_version: u64,
    model_tag: String,
    d_hid: usize,
    layer_index: i64,
    entropy_k: usize,
    delimiter: String,
    role: TraceRole,
    #[serde(default)]
    precision: Precision,
    #[serde(default)]
    final_answer_correct: Option<bool>,
    #[serde(default)]
    hidden_sidecar: Option<String>,
}

#[derive(Serialize)]
struct StepLineOut {
    step_index: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<Numbers>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_row: Option<usize>,
    topk_logits: Numbers,
    text: String,
    is_boundary: bool,
    gold_class: Option<StepClass>,
    correct: Option<bool>,
}

/// Float arrays are decoded separately at the header's precision.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepLineIn {
    step_index: u64,
    #[serde(default)]
    #[allow(dead_code)]
    hidden: Option<IgnoredAny>,
    #[serde(default)]
    hidden_row: Option<usize>,
    #[allow(dead_code)]
    topk_logits: IgnoredAny,
    text: String,
    is_boundary: bool,
    #[serde(default)]
    gold_class: Option<StepClass>,
    #[serde(default)]
    correct: Option<bool>,
}

/// Float array that serializes at the trace's declared precision.
#[derive(Serialize)]
#[serde(untagged)]
enum Numbers {
    Single(Vec<f32>),
    Double(Vec<f64>),
}

impl Numbers {
    fn encode(values: &[f64], precision: Precision) -> Self {
        match precision {
            Precision::F64 => Numbers::Double(values.to_vec()),
            Precision::F32 => Numbers::Single(values.iter().map(|&x| x as f32).collect()),
        }
    }
}

fn decode_numbers(raw: &Value, precision: Precision, field: &'static str, line: usize) -> Result<Vec<f64>> {
    let arr = raw.as_array().ok_or_else(|| Error::TraceFormat {
        line,
        message: format!("`{field}` must be an array of numbers"),
    })?;
    arr.iter()
        .map(|v| {
            let x = v.as_f64().ok_or_else(|| Error::TraceFormat {
                line,
                message: format!("`{field}` contains a non-number"),
            })?;
            Ok(match precision {
                Precision::F64 => x,
                Precision::F32 => f64::from(x as f32),
            })
        })
        .collect()
}

fn validate_header(h: &TraceHeader) -> Result<()> {
    if h.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersionUnsupported(h.schema_version));
    }
    if h.d_hid == 0 {
        return Err(Error::InvariantViolation {
            field: "d_hid",
            line: 1,
            message: "must be at least 1".into(),
        });
    }
    if h.entropy_k == 0 {
        return Err(Error::InvariantViolation {
            field: "entropy_k",
            line: 1,
            message: "must be at least 1".into(),
        });
    }
    Ok(())
}

fn validate_step(h: &TraceHeader, s: &StepRecord, pos: usize, line: usize) -> Result<()> {
    let violation = |field: &'static str, message: String| Error::InvariantViolation { field, line, message };
    if s.step_index != pos as u64 {
        return Err(violation(
            "step_index",
            format!("expected {pos}, found {}", s.step_index),
        ));
    }
    if s.hidden.len() != h.d_hid {
        return Err(violation(
            "hidden",
            format!("length {} differs from d_hid {}", s.hidden.len(), h.d_hid),
        ));
    }
    if s.hidden.iter().any(|x| !x.is_finite()) {
        return Err(violation("hidden", "non-finite entry".into()));
    }
    if s.topk_logits.len() != h.entropy_k {
        return Err(violation(
            "topk_logits",
            format!("length {} differs from entropy_k {}", s.topk_logits.len(), h.entropy_k),
        ));
    }
    if s.topk_logits.iter().any(|x| !x.is_finite()) {
        return Err(violation("topk_logits", "non-finite entry".into()));
    }
    if let Some(i) = s.topk_logits.windows(2).position(|w| w[0] < w[1]) {
        return Err(violation(
            "topk_logits",
            format!("not sorted non-increasing at position {}", i + 1),
        ));
    }
    Ok(())
}

/// Parses trace text. `sidecar_dir` resolves a `hidden_sidecar` reference.
pub fn parse_trace(text: &str, sidecar_dir: Option<&Path>) -> Result<Trace> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().filter(|(_, l)| !l.trim().is_empty()).ok_or(Error::TraceFormat {
        line: 1,
        message: "missing header line".into(),
    })?;
    let raw: Value = serde_json::from_str(first).map_err(|e| Error::TraceFormat {
        line: 1,
        message: e.to_string(),
    })?;
    let version = raw
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::TraceFormat {
            line: 1,
            message: "header lacks an integer `schema_version`".into(),
        })?;
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaVersionUnsupported(version));
    }
    let hl: HeaderLine = serde_json::from_value(raw).map_err(|e| Error::TraceFormat {
        line: 1,
        message: e.to_string(),
    })?;
    let header = TraceHeader {
        schema_version: hl.schema_version,
        model_tag: hl.model_tag,
        d_hid: hl.d_hid,
        layer_index: hl.layer_index,
        entropy_k: hl.entropy_k,
        delimiter: hl.delimiter,
        role: hl.role,
        precision: hl.precision,
    };
    validate_header(&header)?;

    let sidecar = match &hl.hidden_sidecar {
        Some(name) => {
            let dir = sidecar_dir.unwrap_or_else(|| Path::new("."));
            let t = rgt::load_rgt(dir.join(name))?;
            if t.ndims() != 2 || t.dims()[1] != header.d_hid {
                return Err(Error::InvariantViolation {
                    field: "hidden_sidecar",
                    line: 1,
                    message: format!("sidecar shape {:?} is not (rows, {})", t.dims(), header.d_hid),
                });
            }
            Some(t)
        }
        None => None,
    };

    let mut steps = Vec::new();
    let mut pending_blank: Option<usize> = None;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            pending_blank.get_or_insert(line_no);
            continue;
        }
        if let Some(blank) = pending_blank {
            return Err(Error::TraceFormat {
                line: blank,
                message: "blank line inside trace".into(),
            });
        }
        let raw: Value = serde_json::from_str(line).map_err(|e| Error::TraceFormat {
            line: line_no,
            message: e.to_string(),
        })?;
        let topk = raw
            .get("topk_logits")
            .map(|v| decode_numbers(v, header.precision, "topk_logits", line_no))
            .transpose()?;
        let inline_hidden = raw
            .get("hidden")
            .map(|v| decode_numbers(v, header.precision, "hidden", line_no))
            .transpose()?;
        let sl: StepLineIn = serde_json::from_value(raw).map_err(|e| Error::TraceFormat {
            line: line_no,
            message: e.to_string(),
        })?;
        let hidden = match (inline_hidden, sl.hidden_row, &sidecar) {
            (Some(h), None, _) => h,
            (None, Some(row), Some(t)) => {
                if row >= t.dims()[0] {
                    return Err(Error::InvariantViolation {
                        field: "hidden_row",
                        line: line_no,
                        message: format!("row {row} outside sidecar with {} rows", t.dims()[0]),
                    });
                }
                t.data()[row * header.d_hid..(row + 1) * header.d_hid].to_vec()
            }
            (None, Some(_), None) => {
                return Err(Error::InvariantViolation {
                    field: "hidden_row",
                    line: line_no,
                    message: "hidden_row given but header names no sidecar".into(),
                })
            }
            (Some(_), Some(_), _) => {
                return Err(Error::InvariantViolation {
                    field: "hidden",
                    line: line_no,
                    message: "both `hidden` and `hidden_row` present".into(),
                })
            }
            (None, None, _) => {
                return Err(Error::InvariantViolation {
                    field: "hidden",
                    line: line_no,
                    message: "step has neither `hidden` nor `hidden_row`".into(),
                })
            }
        };
        let step = StepRecord {
            step_index: sl.step_index,
            hidden,
            topk_logits: topk.expect("deserialization succeeded so the field exists"),
            text: sl.text,
            is_boundary: sl.is_boundary,
            gold_class: sl.gold_class,
            correct: sl.correct,
        };
        validate_step(&header, &step, steps.len(), line_no)?;
        steps.push(step);
    }

    Ok(Trace {
        header,
        steps,
        final_answer_correct: hl.final_answer_correct,
    })
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, path.parent())
}

fn header_line(trace: &Trace, sidecar: Option<&str>) -> HeaderLine {
    let h = &trace.header;
    HeaderLine {
        schema_version: h.schema_version,
        model_tag: h.model_tag.clone(),
        d_hid: h.d_hid,
        layer_index: h.layer_index,
        entropy_k: h.entropy_k,
        delimiter: h.delimiter.clone(),
        role: h.role,
        precision: h.precision,
        final_answer_correct: trace.final_answer_correct,
        hidden_sidecar: sidecar.map(str::to_string),
    }
}

fn render(trace: &Trace, sidecar: Option<&str>) -> Result<String> {
    trace.validate()?;
    let mut out = to_json(&header_line(trace, sidecar))?;
    out.push('\n');
    let precision = trace.header.precision;
    for (row, s) in trace.steps.iter().enumerate() {
        let line = StepLineOut {
            step_index: s.step_index,
            hidden: sidecar.is_none().then(|| Numbers::encode(&s.hidden, precision)),
            hidden_row: sidecar.is_some().then_some(row),
            topk_logits: Numbers::encode(&s.topk_logits, precision),
            text: s.text.clone(),
            is_boundary: s.is_boundary,
            gold_class: s.gold_class,
            correct: s.correct,
        };
        out.push_str(&to_json(&line)?);
        out.push('\n');
    }
    Ok(out)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Serialize(e.to_string()))
}

/// Canonical JSONL text of a trace with inline hidden states.
pub fn trace_to_string(trace: &Trace) -> Result<String> {
    render(trace, None)
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = trace_to_string(trace)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes the hidden states to `<stem>.rgt` next to `path` and references
/// them by row from the JSONL.
pub fn save_trace_with_sidecar(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("cannot derive sidecar name from {}", path.display())))?;
    let sidecar_name = format!("{stem}.rgt");
    let text = render(trace, Some(&sidecar_name))?;
    let rows = trace.steps.len().max(1);
    let mut data = Vec::with_capacity(rows * trace.header.d_hid);
    for s in &trace.steps {
        data.extend_from_slice(&s.hidden);
    }
    if trace.steps.is_empty() {
        data.resize(trace.header.d_hid, 0.0);
    }
    let tensor = Tensor::from_vec(vec![rows, trace.header.d_hid], data)?;
    let sidecar_path = path.with_file_name(&sidecar_name);
    rgt::save_rgt(&tensor, &sidecar_path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
