//! CSV rendering and artifact (de)serialization.
//!
//! All tabular output is CSV with a '.' decimal separator, newline-terminated
//! rows, and the header first. Floats are printed with Rust's shortest
//! round-trip formatting, so parsing a value back yields the exact same bits
//! and repeated runs produce byte-identical files.
//!
//! File formats (field order is normative):
//!
//! * **Theory report** — three `key,value` header rows `expected`, `delta`,
//!   `bound`, then a `trial_id,sparsity` table.
//! * **Training trace** — `step,task_loss,cmr_frob,cmr_l1,total_loss`.
//! * **Evaluation report** — `task_id,mse,score` rows (`source_<i>`,
//!   `target`), aggregate rows `Source`/`Target`/`Avg` (score column only),
//!   then a `layer_idx,structural_sparsity,expected_sparsity` table.
//! * **Adapter container** (text, line oriented): `lorasculpt-adapter v1`,
//!   `rows`, `cols`, `rank`, `gamma`, `masked`, optional `s_b`/`s_a`, one
//!   line per row of `B` then `A` (space-separated entries), and, when
//!   masked, one 0/1 string per row of `mask_B` then `mask_A`.
//! * **Base-model container** (text): `lorasculpt-base v1`, `dims`, then
//!   each pretrained weight matrix as `weight <p> <q>` followed by its rows.

use crate::adapter::LoraAdapter;
use crate::error::{Result, SculptError};
use crate::matrix::Matrix;
use crate::theory::TheoryReport;
use crate::trainer::{EvalReport, TraceRow};

/// Shortest round-trip decimal form of an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn theory_csv(report: &TheoryReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("expected,{}\n", fmt_f64(report.expected_sparsity)));
    out.push_str(&format!("delta,{}\n", fmt_f64(report.delta)));
    out.push_str(&format!("bound,{}\n", fmt_f64(report.bound)));
    out.push_str("trial_id,sparsity\n");
    for (i, v) in report.per_trial.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt_f64(*v)));
    }
    out
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,task_loss,cmr_frob,cmr_l1,total_loss\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step,
            fmt_f64(row.task_loss),
            fmt_f64(row.cmr_frob),
            fmt_f64(row.cmr_l1),
            fmt_f64(row.total_loss)
        ));
    }
    out
}

pub fn eval_csv(report: &EvalReport) -> String {
    let mut out = String::from("task_id,mse,score\n");
    for (i, (mse, score)) in report
        .source_mses
        .iter()
        .zip(&report.source_scores)
        .enumerate()
    {
        out.push_str(&format!("source_{i},{},{}\n", fmt_f64(*mse), fmt_f64(*score)));
    }
    out.push_str(&format!(
        "target,{},{}\n",
        fmt_f64(report.target_mse),
        fmt_f64(report.target_score)
    ));
    out.push_str(&format!("Source,,{}\n", fmt_f64(report.source)));
    out.push_str(&format!("Target,,{}\n", fmt_f64(report.target)));
    out.push_str(&format!("Avg,,{}\n", fmt_f64(report.avg)));
    out.push_str("layer_idx,structural_sparsity,expected_sparsity\n");
    for row in &report.layer_sparsity {
        out.push_str(&format!(
            "{},{},{}\n",
            row.layer,
            fmt_f64(row.actual),
            fmt_f64(row.expected)
        ));
    }
    out
}

/// Parses the layer table and aggregates back out of an evaluation CSV.
pub struct ParsedEval {
    pub source: f64,
    pub target: f64,
    pub avg: f64,
    pub layers: Vec<(usize, f64, f64)>,
}

pub fn parse_eval_csv(text: &str) -> Result<ParsedEval> {
    let mut source = None;
    let mut target = None;
    let mut avg = None;
    let mut layers = Vec::new();
    let mut in_layers = false;
    for line in text.lines() {
        if line == "layer_idx,structural_sparsity,expected_sparsity" {
            in_layers = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if in_layers {
            if fields.len() != 3 {
                return Err(SculptError::Parse(format!("bad layer row: {line}")));
            }
            let idx = fields[0]
                .parse::<usize>()
                .map_err(|e| SculptError::Parse(format!("layer index: {e}")))?;
            let actual = parse_f64(fields[1])?;
            let expected = parse_f64(fields[2])?;
            layers.push((idx, actual, expected));
        } else if fields.len() == 3 {
            match fields[0] {
                "Source" => source = Some(parse_f64(fields[2])?),
                "Target" => target = Some(parse_f64(fields[2])?),
                "Avg" => avg = Some(parse_f64(fields[2])?),
                _ => {}
            }
        }
    }
    match (source, target, avg) {
        (Some(source), Some(target), Some(avg)) => Ok(ParsedEval {
            source,
            target,
            avg,
            layers,
        }),
        _ => Err(SculptError::Parse(
            "evaluation CSV lacks Source/Target/Avg rows".to_string(),
        )),
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|e| SculptError::Parse(format!("bad float {s:?}: {e}")))
}

fn matrix_rows_to_lines(m: &Matrix, out: &mut String) {
    for i in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|j| fmt_f64(m.get(i, j))).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

fn mask_rows_to_lines(m: &Matrix, out: &mut String) {
    for i in 0..m.rows() {
        let row: String = (0..m.cols())
            .map(|j| if m.get(i, j) != 0.0 { '1' } else { '0' })
            .collect();
        out.push_str(&row);
        out.push('\n');
    }
}

pub fn adapter_to_text(adapter: &LoraAdapter) -> String {
    let (p, q) = adapter.shape();
    let mut out = String::from("lorasculpt-adapter v1\n");
    out.push_str(&format!("rows {p}\n"));
    out.push_str(&format!("cols {q}\n"));
    out.push_str(&format!("rank {}\n", adapter.rank()));
    out.push_str(&format!("gamma {}\n", fmt_f64(adapter.scaling())));
    let masked = adapter.has_masks();
    out.push_str(&format!("masked {}\n", u8::from(masked)));
    if let Some((s_b, s_a)) = adapter.retained_densities() {
        out.push_str(&format!("s_b {}\n", fmt_f64(s_b)));
        out.push_str(&format!("s_a {}\n", fmt_f64(s_a)));
    }
    matrix_rows_to_lines(adapter.b(), &mut out);
    matrix_rows_to_lines(adapter.a(), &mut out);
    if masked {
        mask_rows_to_lines(adapter.mask_b().unwrap(), &mut out);
        mask_rows_to_lines(adapter.mask_a().unwrap(), &mut out);
    }
    out
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        LineReader {
            lines: text.lines(),
            line_no: 0,
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| SculptError::Parse(format!("unexpected end of input at line {}", self.line_no)))
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| SculptError::Parse(format!("expected `{key} <value>`, got {line:?}")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next()?;
            for tok in line.split_whitespace() {
                data.push(parse_f64(tok)?);
            }
        }
        Matrix::from_vec(rows, cols, data)
    }

    fn mask(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next()?;
            for ch in line.chars() {
                match ch {
                    '0' => data.push(0.0),
                    '1' => data.push(1.0),
                    other => {
                        return Err(SculptError::Parse(format!("bad mask bit {other:?}")));
                    }
                }
            }
        }
        Matrix::from_vec(rows, cols, data)
    }
}

pub fn adapter_from_text(text: &str) -> Result<LoraAdapter> {
    let mut r = LineReader::new(text);
    let header = r.next()?;
    if header != "lorasculpt-adapter v1" {
        return Err(SculptError::Parse(format!("bad adapter header {header:?}")));
    }
    let p: usize = r.keyed("rows")?.parse().map_err(|e| SculptError::Parse(format!("rows: {e}")))?;
    let q: usize = r.keyed("cols")?.parse().map_err(|e| SculptError::Parse(format!("cols: {e}")))?;
    let rank: usize = r.keyed("rank")?.parse().map_err(|e| SculptError::Parse(format!("rank: {e}")))?;
    let gamma = parse_f64(r.keyed("gamma")?)?;
    let masked = r.keyed("masked")? == "1";
    if masked {
        // densities recomputed from the mask bits on load
        let _ = parse_f64(r.keyed("s_b")?)?;
        let _ = parse_f64(r.keyed("s_a")?)?;
    }
    let b = r.matrix(p, rank)?;
    let a = r.matrix(rank, q)?;
    let mut adapter = LoraAdapter::new(b, a, gamma)?;
    if masked {
        let mask_b = r.mask(p, rank)?;
        let mask_a = r.mask(rank, q)?;
        adapter.set_masks(mask_b, mask_a)?;
    }
    Ok(adapter)
}

/// Serializes the pretrained weight stack for reuse across runs.
pub fn base_to_text(dims: &[usize], weights: &[&Matrix]) -> String {
    let mut out = String::from("lorasculpt-base v1\n");
    let dims_s: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    out.push_str(&format!("dims {}\n", dims_s.join(",")));
    for w in weights {
        out.push_str(&format!("weight {} {}\n", w.rows(), w.cols()));
        matrix_rows_to_lines(w, &mut out);
    }
    out
}

pub fn base_from_text(text: &str) -> Result<(Vec<usize>, Vec<Matrix>)> {
    let mut r = LineReader::new(text);
    let header = r.next()?;
    if header != "lorasculpt-base v1" {
        return Err(SculptError::Parse(format!("bad base header {header:?}")));
    }
    let dims: Vec<usize> = r
        .keyed("dims")?
        .split(',')
        .map(|t| t.parse::<usize>().map_err(|e| SculptError::Parse(format!("dims: {e}"))))
        .collect::<Result<_>>()?;
    let mut weights = Vec::with_capacity(dims.len().saturating_sub(1));
    for _ in 0..dims.len().saturating_sub(1) {
        let spec = r.keyed("weight")?;
        let mut it = spec.split_whitespace();
        let p: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| SculptError::Parse("weight rows".to_string()))?;
        let q: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| SculptError::Parse("weight cols".to_string()))?;
        weights.push(r.matrix(p, q)?);
    }
    Ok((dims, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -0.0, 123456789.123456789, 2f64.powi(-52)] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "value {v} via {s}");
        }
    }

    #[test]
    fn adapter_text_round_trip_unmasked() {
        let mut rng = RandomStream::new(10, 0);
        let b = rng.sample_gaussian(5, 3, 1.0);
        let a = rng.sample_gaussian(3, 7, 1.0);
        let adapter = LoraAdapter::new(b, a, 2.0).unwrap();
        let text = adapter_to_text(&adapter);
        let back = adapter_from_text(&text).unwrap();
        assert!(back.b().bit_eq(adapter.b()));
        assert!(back.a().bit_eq(adapter.a()));
        assert_eq!(back.scaling(), 2.0);
        assert!(!back.has_masks());
    }

    #[test]
    fn adapter_text_round_trip_masked() {
        let mut rng = RandomStream::new(11, 0);
        let b = rng.sample_gaussian(6, 2, 1.0);
        let a = rng.sample_gaussian(2, 4, 1.0);
        let mut adapter = LoraAdapter::new(b, a, 1.0).unwrap();
        adapter.build_masks(0.25, 0.5).unwrap();
        adapter.apply_masks().unwrap();
        let text = adapter_to_text(&adapter);
        let back = adapter_from_text(&text).unwrap();
        assert!(back.b().bit_eq(adapter.b()));
        assert!(back.a().bit_eq(adapter.a()));
        assert!(back.mask_b().unwrap().bit_eq(adapter.mask_b().unwrap()));
        assert!(back.mask_a().unwrap().bit_eq(adapter.mask_a().unwrap()));
        // Serializing again is byte-stable.
        assert_eq!(text, adapter_to_text(&back));
    }

    #[test]
    fn base_text_round_trip() {
        let mut rng = RandomStream::new(12, 0);
        let w1 = rng.sample_gaussian(4, 3, 1.0);
        let w2 = rng.sample_gaussian(2, 4, 1.0);
        let text = base_to_text(&[3, 4, 2], &[&w1, &w2]);
        let (dims, weights) = base_from_text(&text).unwrap();
        assert_eq!(dims, vec![3, 4, 2]);
        assert!(weights[0].bit_eq(&w1));
        assert!(weights[1].bit_eq(&w2));
    }

    #[test]
    fn adapter_parse_rejects_garbage() {
        assert!(adapter_from_text("not an adapter\n").is_err());
        assert!(adapter_from_text("lorasculpt-adapter v1\nrows x\n").is_err());
    }
}
