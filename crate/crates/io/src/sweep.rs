//! Parameter sweeps: set one field of a scenario, addressed by a dotted path
//! like `units[0].sensors[1].yaw_deg`, to a series of values.

use crate::scenario::{build, Scenario, ScenarioDoc};
use crate::DocError;

#[derive(Debug, Clone, PartialEq)]
enum Step {
    Key(String),
    Index(usize),
}

fn parse_path(path: &str) -> Result<Vec<Step>, DocError> {
    let bad = || DocError::invalid("sweep path", format!("cannot parse {path:?}"));
    let mut steps = Vec::new();
    for part in path.split('.') {
        let (name, mut rest) = match part.find('[') {
            Some(p) => (&part[..p], &part[p..]),
            None => (part, ""),
        };
        if name.is_empty() {
            return Err(bad());
        }
        steps.push(Step::Key(name.to_string()));
        while !rest.is_empty() {
            let close = rest.find(']').ok_or_else(bad)?;
            if !rest.starts_with('[') {
                return Err(bad());
            }
            steps.push(Step::Index(rest[1..close].parse().map_err(|_| bad())?));
            rest = &rest[close + 1..];
        }
    }
    Ok(steps)
}

/// Reads a command-line value as TOML (`3`, `1.5`, `true`, `[1, 2]`), falling
/// back to a plain string.
pub fn parse_value(text: &str) -> toml::Value {
    let wrapped = format!("v = {text}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(text.to_string())),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Sets the value at `path`, creating missing table keys on the way.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), DocError> {
    let steps = parse_path(path)?;
    let mut cur = root;
    for (n, step) in steps.iter().enumerate() {
        let last = n + 1 == steps.len();
        cur = match step {
            Step::Key(k) => {
                let table = cur
                    .as_table_mut()
                    .ok_or_else(|| DocError::invalid(path, format!("{k:?} is not inside a table")))?;
                if last {
                    table.insert(k.clone(), value);
                    return Ok(());
                }
                table
                    .entry(k.clone())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            Step::Index(i) => {
                let array = cur
                    .as_array_mut()
                    .ok_or_else(|| DocError::invalid(path, "index applied to a non-array"))?;
                let len = array.len();
                let slot = array
                    .get_mut(*i)
                    .ok_or_else(|| DocError::invalid(path, format!("index {i} out of range (len {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
        };
    }
    Ok(())
}

/// Derives one scenario per value. The map is reused, so map fields cannot
/// be swept.
pub fn sweep(base: &Scenario, path: &str, values: &[String]) -> Result<Vec<(String, Scenario)>, DocError> {
    if path == "map" || path.starts_with("map.") || path.starts_with("map[") {
        return Err(DocError::invalid("sweep path", "map fields cannot be swept"));
    }
    let root = toml::Value::try_from(&base.doc).expect("scenario documents always serialize");
    values
        .iter()
        .map(|text| {
            let mut v = root.clone();
            set_path(&mut v, path, parse_value(text))?;
            let doc: ScenarioDoc = v
                .try_into()
                .map_err(|e: toml::de::Error| DocError::invalid(path, e.message()))?;
            let s = build(doc, base.map_doc.clone(), base.map.clone(), base.map_path.clone())
                .map_err(|e| match e {
                    DocError::Validation(m) => DocError::Validation(format!("{path}={text}: {m}")),
                    other => other,
                })?;
            Ok((text.clone(), s))
        })
        .collect()
}
