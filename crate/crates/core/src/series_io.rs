//! Series files: one integer symbol per line, with optional `# key: value`
//! header comments. An `alphabet` header fixes the cardinality; without one
//! the caller's expected cardinality is used.
//!
//! ```text
//! # alphabet: 2
//! # process: x
//! 0
//! 1
//! 1
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::blocks::SymbolSeries;
use crate::error::{Error, Result};

/// Parses a series file. `expected` is the configured alphabet size; it is
/// checked against the `alphabet` header when both are present.
pub fn parse_series(text: &str, expected: Option<usize>) -> Result<SymbolSeries> {
    let mut declared: Option<(usize, usize)> = None;
    let mut values = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if let Some((key, value)) = rest.split_once(':') {
                if key.trim() == "alphabet" {
                    let a = value.trim().parse::<usize>().map_err(|_| Error::Parse {
                        line,
                        msg: format!("cannot parse alphabet size {:?}", value.trim()),
                    })?;
                    declared = Some((line, a));
                }
            }
            continue;
        }
        let v = t.parse::<u32>().map_err(|_| Error::Parse {
            line,
            msg: format!("malformed symbol {t:?}"),
        })?;
        values.push(v);
        lines.push(line);
    }
    let cardinality = match (declared, expected) {
        (Some((line, d)), Some(e)) if d != e => {
            return Err(Error::Parse {
                line,
                msg: format!("file declares alphabet {d} but {e} was configured"),
            })
        }
        (Some((_, d)), _) => d,
        (None, Some(e)) => e,
        (None, None) => values.iter().max().map_or(1, |&m| m as usize + 1),
    };
    if let Some(pos) = values.iter().position(|&v| v as usize >= cardinality) {
        return Err(Error::Parse {
            line: lines[pos],
            msg: format!("symbol {} outside alphabet 0..{cardinality}", values[pos]),
        });
    }
    if values.is_empty() {
        return Err(Error::Series("series file has no symbols".into()));
    }
    SymbolSeries::new(values, cardinality)
}

pub fn read_series(path: &Path, expected: Option<usize>) -> Result<SymbolSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::Series(format!("{}: {e}", path.display())))?;
    parse_series(&text, expected).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn render_series(series: &SymbolSeries, headers: &[(&str, String)]) -> String {
    let mut out = String::with_capacity(series.len() * 2 + 64);
    out.push_str(&format!("# alphabet: {}\n", series.cardinality()));
    for (k, v) in headers {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    for v in series.values() {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp = PathBuf::from(dir);
    tmp.push(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let s = SymbolSeries::new(vec![0, 2, 1, 1], 3).unwrap();
        let text = render_series(&s, &[("process", "x".into())]);
        assert_eq!(parse_series(&text, Some(3)).unwrap(), s);
        assert_eq!(parse_series(&text, None).unwrap(), s);
    }

    #[test]
    fn header_must_match_configuration() {
        let text = "# alphabet: 2\n0\n1\n";
        assert!(matches!(parse_series(text, Some(3)), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn malformed_symbol_names_its_line() {
        match parse_series("0\n1\n\nx\n", Some(2)) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("\"x\""));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_series("0\n2\n", Some(2)), Err(Error::Parse { line: 2, .. })));
        assert!(parse_series("# only a comment\n", Some(2)).is_err());
    }
}
