#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn ofo() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ofo"));
    for (key, _) in std::env::vars() {
        if key.starts_with("OFO_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    ofo().current_dir(dir).args(args).output().expect("spawn ofo")
}

pub fn write_config(dir: &Path, name: &str, config: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(format!("{name}.schema.json"));
    read_json(&path)
}

/// Validates `value` against the subset of JSON Schema used by the shipped schema files.
pub fn validate(schema: &Value, value: &Value) -> Result<(), String> {
    check(schema, schema, value, "$")
}

fn resolve<'a>(root: &'a Value, reference: &str) -> &'a Value {
    let name = reference.strip_prefix("#/$defs/").unwrap_or_else(|| panic!("unsupported $ref {reference}"));
    &root["$defs"][name]
}

fn type_matches(ty: &str, v: &Value) -> bool {
    match ty {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64(),
        other => panic!("unsupported type {other}"),
    }
}

fn check(root: &Value, s: &Value, v: &Value, at: &str) -> Result<(), String> {
    let obj = s.as_object().expect("schema is an object");
    for key in obj.keys() {
        assert!(
            matches!(
                key.as_str(),
                "$schema" | "$id" | "title" | "$defs" | "$ref" | "type" | "required" | "properties" | "additionalProperties"
                    | "items" | "minItems" | "maxItems" | "enum" | "const" | "oneOf" | "minimum" | "exclusiveMinimum"
                    | "exclusiveMaximum"
            ),
            "unsupported schema keyword {key}"
        );
    }
    if let Some(r) = obj.get("$ref") {
        check(root, resolve(root, r.as_str().unwrap()), v, at)?;
    }
    if let Some(ty) = obj.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(t, v),
            Value::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)),
            _ => panic!("bad type keyword"),
        };
        if !ok {
            return Err(format!("{at}: expected type {ty}, found {v}"));
        }
    }
    if let Some(options) = obj.get("enum") {
        if !options.as_array().unwrap().contains(v) {
            return Err(format!("{at}: {v} not in {options}"));
        }
    }
    if let Some(c) = obj.get("const") {
        if c != v {
            return Err(format!("{at}: expected {c}, found {v}"));
        }
    }
    if let Some(branches) = obj.get("oneOf") {
        let matched = branches.as_array().unwrap().iter().filter(|b| check(root, b, v, at).is_ok()).count();
        if matched != 1 {
            return Err(format!("{at}: {matched} oneOf branches matched"));
        }
    }
    if let Some(x) = v.as_f64() {
        if let Some(lo) = obj.get("minimum").and_then(Value::as_f64) {
            if x < lo {
                return Err(format!("{at}: {x} < minimum {lo}"));
            }
        }
        if let Some(lo) = obj.get("exclusiveMinimum").and_then(Value::as_f64) {
            if x <= lo {
                return Err(format!("{at}: {x} <= exclusive minimum {lo}"));
            }
        }
        if let Some(hi) = obj.get("exclusiveMaximum").and_then(Value::as_f64) {
            if x >= hi {
                return Err(format!("{at}: {x} >= exclusive maximum {hi}"));
            }
        }
    }
    if let Value::Object(map) = v {
        if let Some(req) = obj.get("required") {
            for key in req.as_array().unwrap() {
                if !map.contains_key(key.as_str().unwrap()) {
                    return Err(format!("{at}: missing required key {key}"));
                }
            }
        }
        let props = obj.get("properties").and_then(Value::as_object);
        for (key, child) in map {
            match props.and_then(|p| p.get(key)) {
                Some(sub) => check(root, sub, child, &format!("{at}.{key}"))?,
                None if obj.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{at}: unexpected key {key}"));
                }
                None => {}
            }
        }
    }
    if let Value::Array(items) = v {
        if let Some(n) = obj.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < n {
                return Err(format!("{at}: {} items, minimum {n}", items.len()));
            }
        }
        if let Some(n) = obj.get("maxItems").and_then(Value::as_u64) {
            if (items.len() as u64) > n {
                return Err(format!("{at}: {} items, maximum {n}", items.len()));
            }
        }
        if let Some(sub) = obj.get("items") {
            for (i, item) in items.iter().enumerate() {
                check(root, sub, item, &format!("{at}[{i}]"))?;
            }
        }
    }
    Ok(())
}
