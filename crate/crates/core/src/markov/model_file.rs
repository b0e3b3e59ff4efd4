//! Text format for model files.
//!
//! ```text
//! # full transition table
//! model table
//! alphabet 2 2 1
//! order 1
//! row 0.25 0.25 0.25 0.25
//! ...                       (|A×B×C|^order rows, contexts in base-|A×B×C| order)
//! initial 0.5 0.5 0 0       (optional, one weight per context)
//! ```
//!
//! ```text
//! # structural recipe
//! model structural
//! alphabet 2 2 2
//! source_order 2
//! source_row 0.3 0.7        (|A|^source_order rows, oldest symbol most significant)
//! ...
//! confounder 0.5 0.5
//! target x[0] + z[3]        (terms x[lag], y[lag >= 1], z[lag], summed mod |B|)
//! noise 0.01
//! ```
//!
//! Blank lines and `#` comments are ignored. Keywords may appear in any
//! order except that `row` and `source_row` lines are read in sequence.

use std::str::FromStr;

use super::{MarkovModel, Process, StructuralModel, TargetRule, Term};
use crate::blocks::AlphabetSpec;
use crate::error::{Error, Result};

/// A parsed model file.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Table(MarkovModel),
    Structural(StructuralModel),
}

impl ModelSpec {
    pub fn compile(&self) -> Result<MarkovModel> {
        match self {
            ModelSpec::Table(m) => Ok(m.clone()),
            ModelSpec::Structural(s) => s.compile(),
        }
    }

    pub fn alphabet(&self) -> AlphabetSpec {
        match self {
            ModelSpec::Table(m) => m.alphabet(),
            ModelSpec::Structural(s) => s.alphabet(),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        parse(text)
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn numbers<T: FromStr>(line: usize, fields: &[&str]) -> Result<Vec<T>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<T>()
                .map_err(|_| parse_err(line, format!("cannot parse {f:?} as a number")))
        })
        .collect()
}

fn row_sum_ok(line: usize, what: &str, row: &[f64]) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
        return Err(parse_err(line, format!("{what}: probabilities sum to {sum} (must be nonnegative and sum to 1)")));
    }
    Ok(())
}

pub fn parse(text: &str) -> Result<ModelSpec> {
    let mut kind: Option<String> = None;
    let mut alphabet: Option<(usize, AlphabetSpec)> = None;
    let mut order: Option<usize> = None;
    let mut rows: Vec<f64> = Vec::new();
    let mut row_count = 0usize;
    let mut initial: Option<Vec<f64>> = None;
    let mut source_order: Option<usize> = None;
    let mut source_rows: Vec<f64> = Vec::new();
    let mut source_row_count = 0usize;
    let mut confounder: Option<Vec<f64>> = None;
    let mut target: Option<Vec<Term>> = None;
    let mut noise: Option<f64> = None;
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let (key, args) = (fields[0], &fields[1..]);
        match key {
            "model" => {
                let k = args
                    .first()
                    .filter(|k| matches!(**k, "table" | "structural"))
                    .ok_or_else(|| parse_err(line, "expected `model table` or `model structural`"))?;
                kind = Some(k.to_string());
            }
            "alphabet" => {
                let v: Vec<usize> = numbers(line, args)?;
                if v.len() != 3 {
                    return Err(parse_err(line, "alphabet needs three sizes (source, target, confounder)"));
                }
                let a = AlphabetSpec::new(v[0], v[1], v[2]).map_err(|e| parse_err(line, e.to_string()))?;
                alphabet = Some((line, a));
            }
            "order" | "source_order" => {
                let v: Vec<usize> = numbers(line, args)?;
                let [k] = v[..] else {
                    return Err(parse_err(line, format!("{key} takes one integer")));
                };
                if key == "order" {
                    order = Some(k);
                } else {
                    source_order = Some(k);
                }
            }
            "row" => {
                let v: Vec<f64> = numbers(line, args)?;
                let (_, a) = alphabet.ok_or_else(|| parse_err(line, "`alphabet` must precede rows"))?;
                if v.len() != a.joint() {
                    return Err(parse_err(line, format!("row {row_count} has {} entries, expected {}", v.len(), a.joint())));
                }
                row_sum_ok(line, &format!("row {row_count}"), &v)?;
                rows.extend(v);
                row_count += 1;
            }
            "source_row" => {
                let v: Vec<f64> = numbers(line, args)?;
                let (_, a) = alphabet.ok_or_else(|| parse_err(line, "`alphabet` must precede rows"))?;
                if v.len() != a.x {
                    return Err(parse_err(line, format!("source row {source_row_count} has {} entries, expected {}", v.len(), a.x)));
                }
                row_sum_ok(line, &format!("source row {source_row_count}"), &v)?;
                source_rows.extend(v);
                source_row_count += 1;
            }
            "initial" => initial = Some(numbers(line, args)?),
            "confounder" => confounder = Some(numbers(line, args)?),
            "noise" => {
                let v: Vec<f64> = numbers(line, args)?;
                let [p] = v[..] else {
                    return Err(parse_err(line, "noise takes one probability"));
                };
                noise = Some(p);
            }
            "target" => target = Some(parse_target(line, &content["target".len()..])?),
            other => return Err(parse_err(line, format!("unknown keyword {other:?}"))),
        }
    }

    let missing = |what: &str| parse_err(last_line, format!("missing `{what}`"));
    let (alphabet_line, alphabet) = alphabet.ok_or_else(|| missing("alphabet"))?;
    match kind.as_deref() {
        Some("table") => {
            let k = order.ok_or_else(|| missing("order"))?;
            let model = MarkovModel::new(k, alphabet, rows, initial)
                .map_err(|e| parse_err(alphabet_line, e.to_string()))?;
            Ok(ModelSpec::Table(model))
        }
        Some("structural") => {
            let rule = TargetRule {
                terms: target.ok_or_else(|| missing("target"))?,
                noise: noise.unwrap_or(0.0),
            };
            let model = StructuralModel::new(
                alphabet,
                source_order.ok_or_else(|| missing("source_order"))?,
                source_rows,
                confounder.ok_or_else(|| missing("confounder"))?,
                rule,
            )
            .map_err(|e| parse_err(alphabet_line, e.to_string()))?;
            Ok(ModelSpec::Structural(model))
        }
        _ => Err(missing("model table|structural")),
    }
}

fn parse_target(line: usize, expr: &str) -> Result<Vec<Term>> {
    let mut terms = Vec::new();
    for piece in expr.split('+') {
        let t = piece.trim();
        let bad = || parse_err(line, format!("bad target term {t:?}; expected x[lag], y[lag] or z[lag]"));
        let (name, rest) = t.split_at_checked(1).ok_or_else(bad)?;
        let source = match name {
            "x" | "X" => Process::X,
            "y" | "Y" => Process::Y,
            "z" | "Z" => Process::Z,
            _ => return Err(bad()),
        };
        let lag = rest
            .trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .and_then(|r| r.trim().parse::<usize>().ok())
            .ok_or_else(bad)?;
        terms.push(Term { source, lag });
    }
    Ok(terms)
}

/// Renders a structural model back into the text format.
pub fn render_structural(model: &StructuralModel) -> String {
    let a = model.alphabet;
    let mut out = String::from("model structural\n");
    out += &format!("alphabet {} {} {}\n", a.x, a.y, a.z);
    out += &format!("source_order {}\n", model.x_order);
    for row in model.x_rows.chunks(a.x) {
        out += &format!("source_row {}\n", join(row));
    }
    out += &format!("confounder {}\n", join(&model.z_law));
    let terms: Vec<String> = model
        .rule
        .terms
        .iter()
        .map(|t| {
            let name = match t.source {
                Process::X => "x",
                Process::Y => "y",
                Process::Z => "z",
            };
            format!("{name}[{}]", t.lag)
        })
        .collect();
    out += &format!("target {}\n", terms.join(" + "));
    out += &format!("noise {}\n", model.rule.noise);
    out
}

fn join(v: &[f64]) -> String {
    v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ")
}
