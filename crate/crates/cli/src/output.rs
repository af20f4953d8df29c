//! Output files with embedded provenance. The timestamp is the only field that
//! changes between identical runs and sits alone on the first line.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::CliError;

/// Keys added to every JSON output; stripped again when reading inputs.
pub const META_KEYS: [&str; 2] = ["generated_at", "provenance"];

#[derive(Clone, Debug)]
pub struct Provenance {
    pub command: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(argv: &[String], seed: Option<u64>) -> Self {
        let mut words = vec!["panelalts".to_string()];
        words.extend(argv.iter().skip(1).map(|a| shell_word(a)));
        Self {
            command: words.join(" "),
            seed,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "command": self.command,
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
        })
    }
}

fn shell_word(s: &str) -> String {
    let plain = !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_./:=,+@%".contains(c));
    if plain {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn render_json(prov: &Provenance, body: Value) -> String {
    let mut obj = Map::new();
    let mut provenance = prov.to_json();
    obj.insert("provenance".into(), Value::Null);
    match body {
        Value::Object(m) => {
            for (k, v) in m {
                match (k.as_str(), v) {
                    // Results carry their own provenance (algorithm, config);
                    // merge it under ours.
                    ("provenance", Value::Object(inner)) => {
                        let outer = provenance.as_object_mut().expect("object");
                        for (ik, iv) in inner {
                            outer.entry(ik).or_insert(iv);
                        }
                    }
                    (_, v) => {
                        obj.insert(k, v);
                    }
                }
            }
        }
        other => {
            obj.insert("result".into(), other);
        }
    }
    obj["provenance"] = provenance;
    let pretty = serde_json::to_string_pretty(&Value::Object(obj)).expect("json serializes");
    // `pretty` opens with "{\n"; the timestamp goes on that first line.
    format!("{{\"generated_at\": {},\n{}\n", json!(timestamp()), &pretty[2..])
}

/// `#` comment lines followed by `body`. Used for CSV and solution files.
pub fn render_commented(prov: &Provenance, body: &str) -> String {
    format!(
        "# generated_at: {}\n# provenance: {}\n{body}",
        timestamp(),
        serde_json::to_string(&prov.to_json()).expect("json serializes")
    )
}

/// Writes to `path`, or standard output when there is none.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Reads a JSON file, dropping the provenance keys this tool adds.
pub fn read_payload(path: &Path) -> Result<String, CliError> {
    let text = read_text(path)?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if let Value::Object(m) = &mut value {
        for k in META_KEYS {
            m.shift_remove(k);
        }
    }
    Ok(value.to_string())
}
