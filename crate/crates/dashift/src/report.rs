//! Deterministic rendering. Every emitter here is a pure function of the
//! report value: keys are emitted in sorted order and floats through one
//! shared 12-significant-digit formatter, so equal reports serialize to
//! equal bytes on every platform.

use serde::Serialize;
use serde_json::Value;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Context block embedded in every emitted report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportMeta {
    pub scenario: String,
    pub schema_version: u32,
    pub extension: String,
    pub log_base: String,
    pub tool_version: String,
}

impl ReportMeta {
    pub fn new(scenario: &str, extension: String) -> ReportMeta {
        ReportMeta {
            scenario: scenario.to_string(),
            schema_version: crate::scenarios::SCHEMA_VERSION,
            extension,
            log_base: "e".to_string(),
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    pub fn with_base_2(mut self) -> ReportMeta {
        self.log_base = "2".to_string();
        self
    }
}

/// 12 significant digits, trailing zeros trimmed, positional notation for
/// moderate exponents and scientific outside them. Total order on the
/// output: equal floats format equally, which the byte-determinism checks
/// rely on.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let neg = x < 0.0;
    let sci = format!("{:.11e}", x.abs());
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    debug_assert_eq!(digits.len(), 12);
    let body = if (-4..=14).contains(&exp) {
        if exp >= 0 {
            let int_len = exp as usize + 1;
            if digits.len() <= int_len {
                format!("{digits}{}", "0".repeat(int_len - digits.len()))
            } else {
                let (int_part, frac) = digits.split_at(int_len);
                let frac = frac.trim_end_matches('0');
                if frac.is_empty() {
                    int_part.to_string()
                } else {
                    format!("{int_part}.{frac}")
                }
            }
        } else {
            let frac = format!("{}{digits}", "0".repeat((-exp - 1) as usize));
            format!("0.{}", frac.trim_end_matches('0'))
        }
    } else {
        let (first, rest) = digits.split_at(1);
        let rest = rest.trim_end_matches('0');
        if rest.is_empty() {
            format!("{first}e{exp}")
        } else {
            format!("{first}.{rest}e{exp}")
        }
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

fn write_json(out: &mut String, value: &Value) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format_sig(n.as_f64().expect("number is a float")));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serializes"));
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_json(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push(':');
                write_json(out, &map[key]);
            }
            out.push('}');
        }
    }
}

/// Single-line JSON with sorted keys and the shared float formatting.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_json(&mut out, value);
    out
}

/// Report plus its meta block, canonically serialized.
pub fn json_report<T: Serialize>(meta: &ReportMeta, report: &T) -> String {
    let value = serde_json::json!({
        "meta": serde_json::to_value(meta).expect("meta serializes"),
        "report": serde_json::to_value(report).expect("report serializes"),
    });
    canonical_json(&value)
}

fn scalar_text(value: &Value) -> String {
    match value {
        Value::Null => "-".to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.to_string()
            } else if let Some(u) = n.as_u64() {
                u.to_string()
            } else {
                format_sig(n.as_f64().expect("number is a float"))
            }
        }
        Value::String(s) => s.clone(),
        _ => canonical_json(value),
    }
}

fn is_scalar(value: &Value) -> bool {
    !matches!(value, Value::Array(_) | Value::Object(_))
}

fn sorted_keys(map: &serde_json::Map<String, Value>) -> Vec<&String> {
    let mut keys: Vec<&String> = map.keys().collect();
    keys.sort();
    keys
}

/// Uniform key set over an array of objects, if it is one.
fn table_columns(items: &[Value]) -> Option<Vec<String>> {
    let first = items.first()?.as_object()?;
    let columns: Vec<String> = sorted_keys(first).into_iter().cloned().collect();
    let uniform = items.iter().all(|item| {
        item.as_object().is_some_and(|m| {
            m.len() == columns.len() && columns.iter().all(|c| m.contains_key(c))
        })
    });
    let flat = items
        .iter()
        .all(|item| item.as_object().unwrap().values().all(is_scalar));
    (uniform && flat).then_some(columns)
}

fn push_md_table(out: &mut String, items: &[Value], columns: &[String]) {
    out.push_str(&format!("| {} |\n", columns.join(" | ")));
    out.push_str(&format!(
        "|{}\n",
        columns.iter().map(|_| " --- |").collect::<String>()
    ));
    for item in items {
        let cells: Vec<String> = columns
            .iter()
            .map(|c| scalar_text(&item[c]).replace('|', "\\|"))
            .collect();
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
}

fn push_md_value(out: &mut String, value: &Value, indent: usize, label: Option<&str>) {
    let pad = "  ".repeat(indent);
    match value {
        Value::Object(map) => {
            if let Some(label) = label {
                out.push_str(&format!("{pad}- {label}:\n"));
            }
            let next = if label.is_some() { indent + 1 } else { indent };
            for key in sorted_keys(map) {
                push_md_value(out, &map[key], next, Some(key));
            }
        }
        Value::Array(items) => {
            let label = label.unwrap_or("items");
            if items.is_empty() {
                out.push_str(&format!("{pad}- {label}: (none)\n"));
            } else if let Some(columns) = table_columns(items) {
                out.push_str(&format!("{pad}- {label}:\n\n"));
                push_md_table(out, items, &columns);
                out.push('\n');
            } else if items.iter().all(is_scalar) {
                let cells: Vec<String> = items.iter().map(scalar_text).collect();
                out.push_str(&format!("{pad}- {label}: {}\n", cells.join(", ")));
            } else {
                out.push_str(&format!("{pad}- {label}:\n"));
                for (i, item) in items.iter().enumerate() {
                    push_md_value(out, item, indent + 1, Some(&i.to_string()));
                }
            }
        }
        scalar => {
            let label = label.unwrap_or("value");
            out.push_str(&format!("{pad}- {label}: {}\n", scalar_text(scalar)));
        }
    }
}

/// Bulleted markdown with tables for uniform object arrays.
pub fn markdown_report<T: Serialize>(title: &str, meta: &ReportMeta, report: &T) -> String {
    let value = serde_json::to_value(report).expect("report serializes");
    let meta = serde_json::to_value(meta).expect("meta serializes");
    let mut out = format!("# {title}\n\n");
    push_md_value(&mut out, &meta, 0, Some("meta"));
    out.push('\n');
    push_md_value(&mut out, &value, 0, None);
    out
}

pub(crate) fn csv_escape(cell: &str) -> String {
    if cell.contains(',') || cell.contains('"') || cell.contains('\n') {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

fn push_csv_scalars(out: &mut String, prefix: &str, value: &Value, tables: &mut Vec<(String, Vec<Value>)>) {
    match value {
        Value::Object(map) => {
            for key in sorted_keys(map) {
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                push_csv_scalars(out, &path, &map[key], tables);
            }
        }
        Value::Array(items) => {
            if table_columns(items).is_some() {
                tables.push((prefix.to_string(), items.clone()));
            } else {
                let joined: Vec<String> = items.iter().map(scalar_text).collect();
                out.push_str(&format!(
                    "{},{}\n",
                    csv_escape(prefix),
                    csv_escape(&joined.join("; "))
                ));
            }
        }
        scalar => {
            out.push_str(&format!(
                "{},{}\n",
                csv_escape(prefix),
                csv_escape(&scalar_text(scalar))
            ));
        }
    }
}

/// Key-value rows for scalars followed by one block per embedded table.
pub fn csv_report<T: Serialize>(meta: &ReportMeta, report: &T) -> String {
    let value = serde_json::json!({
        "meta": serde_json::to_value(meta).expect("meta serializes"),
        "report": serde_json::to_value(report).expect("report serializes"),
    });
    let mut out = String::from("field,value\n");
    let mut tables: Vec<(String, Vec<Value>)> = Vec::new();
    push_csv_scalars(&mut out, "", &value, &mut tables);
    for (name, items) in tables {
        let columns = table_columns(&items).expect("collected as table");
        out.push('\n');
        out.push_str(&format!("{}\n", csv_escape(&name)));
        out.push_str(&format!(
            "{}\n",
            columns
                .iter()
                .map(|c| csv_escape(c))
                .collect::<Vec<_>>()
                .join(",")
        ));
        for item in &items {
            let cells: Vec<String> = columns
                .iter()
                .map(|c| csv_escape(&scalar_text(&item[c])))
                .collect();
            out.push_str(&format!("{}\n", cells.join(",")));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_has_twelve_significant_digits() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(-0.0), "0");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(0.45), "0.45");
        assert_eq!(format_sig(-0.45), "-0.45");
        // the 12th significant digit of ln 2 is a zero and gets trimmed
        assert_eq!(format_sig(2.0f64.ln()), "0.69314718056");
        assert_eq!(format_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_sig(123456.0), "123456");
        assert_eq!(format_sig(1e-7), "1e-7");
        assert_eq!(format_sig(1.5e-7), "1.5e-7");
        assert_eq!(format_sig(1e15), "1e15");
        assert_eq!(format_sig(1e13), "10000000000000");
        assert_eq!(format_sig(0.0001), "0.0001");
        // one past the positional window in either direction goes scientific
        assert_eq!(format_sig(0.00001), "1e-5");
    }

    #[test]
    fn rounding_carries_across_the_exponent_boundary() {
        // 0.99999999999995 rounds up to 1 at 12 significant digits
        assert_eq!(format_sig(0.99999999999995), "1");
        assert_eq!(format_sig(9.99999999999951e-5), "0.0001");
    }

    #[test]
    fn canonical_json_sorts_keys_and_reuses_the_float_format() {
        let value = serde_json::json!({
            "b": 0.5,
            "a": [1, 2.25, "x"],
            "c": {"z": true, "y": null},
        });
        assert_eq!(
            canonical_json(&value),
            r#"{"a":[1,2.25,"x"],"b":0.5,"c":{"y":null,"z":true}}"#
        );
    }

    #[test]
    fn infinities_arrive_as_strings_from_the_extended_reals() {
        let value = serde_json::to_value(crate::ext::ExtReal::PosInf).unwrap();
        assert_eq!(canonical_json(&value), r#""inf""#);
    }

    #[test]
    fn uniform_object_arrays_render_as_tables() {
        #[derive(Serialize)]
        struct Row {
            name: String,
            value: f64,
        }
        #[derive(Serialize)]
        struct Report {
            rows: Vec<Row>,
            total: f64,
        }
        let report = Report {
            rows: vec![
                Row {
                    name: "a".to_string(),
                    value: 0.25,
                },
                Row {
                    name: "b".to_string(),
                    value: 0.75,
                },
            ],
            total: 1.0,
        };
        let meta = ReportMeta::new("demo", "uniform".to_string());
        let md = markdown_report("Demo", &meta, &report);
        assert!(md.contains("| name | value |"));
        assert!(md.contains("| a | 0.25 |"));
        assert!(md.contains("- total: 1"));
        let csv = csv_report(&meta, &report);
        assert!(csv.contains("report.total,1\n"));
        assert!(csv.contains("report.rows\nname,value\na,0.25\nb,0.75\n"));
    }
}
