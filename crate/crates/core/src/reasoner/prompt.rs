//! Prompt templates, the candidate line format and reply parsers.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::scene::{AxisAlignedBox, Vec3};

pub const SCHEMA_NAMING: &str = "naming_v1";
pub const SCHEMA_SPATIAL: &str = "spatial_v1";
pub const SCHEMA_CORRECTION: &str = "correction_v1";
pub const SCHEMA_COMBINED: &str = "combined_v1";

/// Template text for a schema id.
pub fn template(schema: &str) -> Option<&'static str> {
    match schema {
        SCHEMA_NAMING => Some(include_str!("../../prompts/naming_v1.txt")),
        SCHEMA_SPATIAL => Some(include_str!("../../prompts/spatial_v1.txt")),
        SCHEMA_CORRECTION => Some(include_str!("../../prompts/correction_v1.txt")),
        SCHEMA_COMBINED => Some(include_str!("../../prompts/combined_v1.txt")),
        _ => None,
    }
}

/// Replaces every `{{key}}`. Unknown placeholders are left as they are.
pub fn fill(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

pub fn render(schema: &str, vars: &[(&str, String)]) -> String {
    fill(template(schema).expect("known schema"), vars)
}

pub fn candidate_line(id: u32, name: Option<&str>, aabb: &AxisAlignedBox) -> String {
    let (c, s) = (aabb.center(), aabb.size());
    let name = name.map(|n| format!(" name \"{}\";", n.replace('"', "'"))).unwrap_or_default();
    format!(
        "id {id}:{name} center ({:.3}, {:.3}, {:.3}); size ({:.3}, {:.3}, {:.3})",
        c.x, c.y, c.z, s.x, s.y, s.z
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLine {
    pub id: u32,
    pub name: Option<String>,
    pub center: Vec3,
    pub size: Vec3,
}

fn parse_triple(s: &str) -> Option<Vec3> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse().ok()).collect::<Option<_>>()?;
    (v.len() == 3).then(|| Vec3::new(v[0], v[1], v[2]))
}

pub fn parse_candidate_lines(text: &str) -> Vec<CandidateLine> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r#"^id (\d+):(?: name "([^"]*)";)? center \(([^)]*)\); size \(([^)]*)\)"#).expect("valid regex")
    });
    text.lines()
        .filter_map(|l| {
            let c = re.captures(l.trim())?;
            Some(CandidateLine {
                id: c[1].parse().ok()?,
                name: c.get(2).map(|m| m.as_str().to_string()),
                center: parse_triple(&c[3])?,
                size: parse_triple(&c[4])?,
            })
        })
        .collect()
}

pub fn query_line(text: &str) -> String {
    format!("Query: \"{}\"", text.replace('\n', " "))
}

pub fn parse_query_line(text: &str) -> Option<String> {
    text.lines().find_map(|l| {
        let rest = l.trim().strip_prefix("Query: \"")?;
        rest.strip_suffix('"').map(str::to_string)
    })
}

/// Body of the first fenced block, else the whole reply.
pub fn extract_json_block(reply: &str) -> &str {
    if let Some(start) = reply.find("```") {
        let after = &reply[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let tag = after[..body_start].trim();
        // Tolerate an inline block such as ```{"a": 1}```.
        let body = if tag.chars().all(|c| c.is_ascii_alphanumeric()) {
            &after[body_start..]
        } else {
            after
        };
        return match body.find("```") {
            Some(end) => body[..end].trim(),
            None => body.trim(),
        };
    }
    reply.trim()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialAnswer {
    pub selected_id: i64,
    pub relations: Vec<Relation>,
    pub explanation: String,
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses a spatial, correction or combined reply. The error text is fed
/// back to the model on re-prompt.
pub fn parse_spatial(reply: &str) -> Result<SpatialAnswer, String> {
    let v: Value = serde_json::from_str(extract_json_block(reply)).map_err(|e| format!("not valid JSON ({e})"))?;
    let obj = v.as_object().ok_or("the reply must be a JSON object")?;
    let selected_id = obj
        .get("selected_id")
        .and_then(Value::as_i64)
        .ok_or("selected_id must be an integer")?;
    let rels = obj
        .get("relations")
        .and_then(Value::as_array)
        .ok_or("relations must be a list")?;
    let relations = rels
        .iter()
        .map(|r| {
            let get = |k: &str| r.get(k).and_then(scalar_text);
            Some(Relation {
                subject: get("subject")?,
                relation: get("relation")?,
                object: get("object")?,
            })
        })
        .collect::<Option<Vec<_>>>()
        .ok_or("each relation needs subject, relation and object")?;
    let explanation = obj
        .get("explanation")
        .and_then(Value::as_str)
        .ok_or("explanation must be a string")?
        .to_string();
    Ok(SpatialAnswer {
        selected_id,
        relations,
        explanation,
    })
}

/// A naming reply must carry one short single-line noun phrase.
pub fn parse_naming(reply: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(extract_json_block(reply)).map_err(|e| format!("not valid JSON ({e})"))?;
    let name = v
        .get("name")
        .and_then(Value::as_str)
        .ok_or("name must be a string")?
        .trim()
        .to_lowercase();
    let words = name.split_whitespace().count();
    if words == 0 || words > 8 || name.contains('\n') {
        return Err(format!("expected a short noun phrase, got {name:?}"));
    }
    Ok(name)
}
