//! Canonical JSON: sorted keys, floats rounded to 9 significant digits,
//! two-space indentation and a trailing newline.

use serde::Serialize;
use serde_json::{Map, Number, Value};

/// Rounds to 9 significant digits; zero, negative zero and non-finite values
/// map to themselves except that `-0.0` becomes `0.0`.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Float text for plot-data files, using the same rounding as JSON.
pub fn format_float(x: f64) -> String {
    let r = round_sig(x);
    if r.is_finite() && r == r.trunc() && r.abs() < 1e15 {
        format!("{r:.1}")
    } else {
        format!("{r}")
    }
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().expect("f64 number"));
            Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, canonicalize(v));
            }
            Value::Object(out)
        }
        other => other,
    }
}

pub fn to_canonical_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = canonicalize(serde_json::to_value(value)?);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}
