//! Line-delimited JSON records.
//!
//! Every record is a single JSON object carrying `schema` (the version
//! below) and `record` (its kind) ahead of the payload fields.

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub fn json_line<T: Serialize>(kind: &str, payload: &T) -> Result<String> {
    let mut object = Map::new();
    object.insert("schema".into(), Value::from(SCHEMA_VERSION));
    object.insert("record".into(), Value::from(kind));
    match serde_json::to_value(payload).map_err(|e| Error::Internal(e.to_string()))? {
        Value::Object(fields) => object.extend(fields),
        other => {
            object.insert("value".into(), other);
        }
    }
    serde_json::to_string(&Value::Object(object)).map_err(|e| Error::Internal(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Point {
        n: u64,
        p: f64,
    }

    #[test]
    fn header_fields_come_first() {
        let line = json_line("point", &Point { n: 3, p: 0.5 }).unwrap();
        assert_eq!(line, r#"{"schema":1,"record":"point","n":3,"p":0.5}"#);
    }
}
