//! Lenient extraction of structured values from chat replies.

use serde_json::Value;

use crate::error::{Result, XpError};

fn malformed(msg: impl Into<String>) -> XpError {
    XpError::LlmMalformedOutput(msg.into())
}

/// Find the single JSON object or array embedded in `text`.
///
/// Markdown fences and surrounding prose are ignored. Every `{` / `[` is
/// tried as the start of a value; a successfully parsed value is skipped
/// over as a whole. Exactly one top-level value must be found.
pub fn extract_json(text: &str) -> Result<Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        if v.is_object() || v.is_array() {
            return Ok(v);
        }
    }

    let mut found = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let b = text.as_bytes()[i];
        if b == b'{' || b == b'[' {
            let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
            if let Some(Ok(v)) = stream.next() {
                i += stream.byte_offset();
                found.push(v);
                continue;
            }
        }
        i += 1;
    }
    match found.len() {
        1 => Ok(found.pop().unwrap()),
        0 => Err(malformed("no JSON value in reply")),
        n => Err(malformed(format!("{n} JSON values in reply, expected one"))),
    }
}

/// Parse a list of strings written either as JSON or as a Python literal
/// (`['a', "b"]`).
pub fn extract_string_list(text: &str) -> Result<Vec<String>> {
    if let Ok(Value::Array(items)) = extract_json(text) {
        return items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(malformed(format!("non-string list entry {other}"))),
            })
            .collect();
    }
    parse_python_list(text).ok_or_else(|| malformed("no string list in reply"))
}

fn parse_python_list(text: &str) -> Option<Vec<String>> {
    let start = text.find('[')?;
    let mut chars = text[start + 1..].chars().peekable();
    let mut out = Vec::new();
    loop {
        while chars.peek().map_or(false, |c| c.is_whitespace() || *c == ',') {
            chars.next();
        }
        match chars.next()? {
            ']' => return Some(out),
            q @ ('\'' | '"') => {
                let mut s = String::new();
                loop {
                    match chars.next()? {
                        '\\' => {
                            let c = chars.next()?;
                            s.push(match c {
                                'n' => '\n',
                                't' => '\t',
                                other => other,
                            });
                        }
                        c if c == q => break,
                        c => s.push(c),
                    }
                }
                out.push(s);
            }
            _ => return None,
        }
    }
}

pub fn get_str<'a>(obj: &'a Value, key: &str) -> Result<&'a str> {
    obj.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(format!("missing string key `{key}`")))
}

pub fn get_string_list(obj: &Value, key: &str) -> Result<Vec<String>> {
    let arr = obj
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(format!("missing list key `{key}`")))?;
    arr.iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| malformed(format!("non-string entry in `{key}`")))
        })
        .collect()
}

/// Numeric `score`; numeric strings are accepted.
pub fn get_score(obj: &Value) -> Result<f64> {
    match obj.get("score") {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| malformed("score not representable")),
        Some(Value::String(s)) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| malformed(format!("score `{s}` is not a number"))),
        Some(other) => Err(malformed(format!("score has wrong type: {other}"))),
        None => Err(malformed("missing key `score`")),
    }
}

/// Strip markdown emphasis and list numbering from a line.
pub fn clean_label(s: &str) -> String {
    let s = s.trim();
    let s = s
        .trim_start_matches(|c: char| c.is_ascii_digit())
        .trim_start_matches(['.', ')'])
        .trim();
    s.replace("**", "").replace('*', "").trim().to_string()
}
