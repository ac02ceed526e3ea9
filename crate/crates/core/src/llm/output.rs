//! Extraction of structured payloads from free-form model output.

use serde::de::DeserializeOwned;

/// Finds the first balanced JSON object or array in `text` and decodes it.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let candidate = extract_json(text).ok_or_else(|| format!("no JSON payload in output: {}", excerpt(text)))?;
    serde_json::from_str(candidate).map_err(|e| format!("{e} in {}", excerpt(candidate)))
}

pub fn extract_json(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(|&b| b == b'{' || b == b'[')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Pulls SQL out of a reply, unwrapping a fenced block when present.
/// Returns an empty string when the model left the output empty.
pub fn extract_sql(text: &str) -> String {
    let trimmed = text.trim();
    if let Some(start) = trimmed.find("```") {
        let after = &trimmed[start + 3..];
        let after = after
            .strip_prefix("sql")
            .or_else(|| after.strip_prefix("SQL"))
            .unwrap_or(after);
        let body = after.find("```").map(|end| &after[..end]).unwrap_or(after);
        return clean_sql(body);
    }
    clean_sql(trimmed)
}

fn clean_sql(sql: &str) -> String {
    sql.trim().trim_end_matches(';').trim().to_string()
}

fn excerpt(text: &str) -> String {
    let t: String = text.chars().take(120).collect();
    if text.chars().count() > 120 {
        format!("{t}...")
    } else {
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_inside_prose_and_fences() {
        let text = "Sure!\n```json\n{\"a\": [1, 2], \"b\": \"x}y\"}\n```\nDone";
        let v: serde_json::Value = parse_json(text).unwrap();
        assert_eq!(v["b"], "x}y");
        assert!(parse_json::<serde_json::Value>("nothing here").is_err());
    }

    #[test]
    fn sql_fences() {
        assert_eq!(extract_sql("```sql\nSELECT 1;\n```"), "SELECT 1");
        assert_eq!(extract_sql("  SELECT `a` FROM `t`; "), "SELECT `a` FROM `t`");
        assert_eq!(extract_sql("   "), "");
    }
}
