//! Instances: feature schema, agents, quotas, budget; CSV and JSON ingestion.

use std::collections::{HashMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::DataError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Feature {
    pub name: String,
    pub values: Vec<String>,
}

/// Ordered features with ordered value sets. Feature-values are flattened in
/// declaration order: all values of the first feature, then the second, ...
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    features: Vec<Feature>,
    offsets: Vec<usize>,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        let mut offsets = Vec::with_capacity(features.len());
        let mut total = 0;
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate feature `{}`", f.name)));
            }
            if f.values.is_empty() {
                return Err(DataError::Schema(format!("feature `{}` has no values", f.name)));
            }
            let mut vals = HashSet::new();
            for v in &f.values {
                if !vals.insert(v.as_str()) {
                    return Err(DataError::Schema(format!(
                        "duplicate value `{v}` in feature `{}`",
                        f.name
                    )));
                }
            }
            offsets.push(total);
            total += f.values.len();
        }
        Ok(Self { features, offsets })
    }

    /// Convenience constructor from `(name, [values])` pairs.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, &[S])]) -> Result<Self, DataError> {
        Self::new(
            pairs
                .iter()
                .map(|(n, vs)| Feature {
                    name: n.as_ref().to_string(),
                    values: vs.iter().map(|v| v.as_ref().to_string()).collect(),
                })
                .collect(),
        )
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    /// |FV|.
    pub fn num_fv(&self) -> usize {
        self.offsets
            .last()
            .map_or(0, |o| o + self.features.last().unwrap().values.len())
    }

    pub fn fv_index(&self, feature: usize, value: usize) -> usize {
        self.offsets[feature] + value
    }

    /// Range of flattened indices belonging to `feature`.
    pub fn fv_range(&self, feature: usize) -> std::ops::Range<usize> {
        self.offsets[feature]..self.offsets[feature] + self.features[feature].values.len()
    }

    /// `(feature index, value index)` of a flattened index.
    pub fn fv_pair(&self, fv: usize) -> (usize, usize) {
        let f = self.offsets.partition_point(|&o| o <= fv) - 1;
        (f, fv - self.offsets[f])
    }

    pub fn fv_label(&self, fv: usize) -> (&str, &str) {
        let (f, v) = self.fv_pair(fv);
        (&self.features[f].name, &self.features[f].values[v])
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn value_index(&self, feature: usize, value: &str) -> Option<usize> {
        self.features[feature].values.iter().position(|v| v == value)
    }

    /// Ordered map representation used in JSON files.
    pub fn to_map(&self) -> IndexMap<String, Vec<String>> {
        self.features
            .iter()
            .map(|f| (f.name.clone(), f.values.clone()))
            .collect()
    }

    pub fn from_map(map: IndexMap<String, Vec<String>>) -> Result<Self, DataError> {
        Self::new(map.into_iter().map(|(name, values)| Feature { name, values }).collect())
    }
}

/// An agent: opaque id and one value index per feature, in schema order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Agent {
    pub id: String,
    pub values: Vec<usize>,
}

impl Agent {
    pub fn new(id: impl Into<String>, values: Vec<usize>) -> Self {
        Self { id: id.into(), values }
    }

    /// Flattened feature-value indices, one per feature.
    pub fn fvs<'a>(&'a self, schema: &'a FeatureSchema) -> impl Iterator<Item = usize> + 'a {
        self.values.iter().enumerate().map(|(f, &v)| schema.fv_index(f, v))
    }

    pub fn conforms(&self, schema: &FeatureSchema) -> bool {
        self.values.len() == schema.num_features()
            && self
                .values
                .iter()
                .zip(schema.features())
                .all(|(&v, f)| v < f.values.len())
    }

    /// Number of features on which two agents differ.
    pub fn hamming(&self, other: &Agent) -> usize {
        self.values.iter().zip(&other.values).filter(|(a, b)| a != b).count()
    }
}

/// Lower and upper quotas per flattened feature-value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quotas {
    pub lower: Vec<i64>,
    pub upper: Vec<i64>,
}

impl Quotas {
    pub fn new(lower: Vec<i64>, upper: Vec<i64>) -> Self {
        Self { lower, upper }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Invariant violations: length mismatch, negative lower, `u < l`, `u = 0`.
    pub fn problems(&self, schema: &FeatureSchema) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.lower.len() != schema.num_fv() || self.upper.len() != schema.num_fv() {
            out.push(Violation::QuotaShape {
                expected: schema.num_fv(),
            });
            return out;
        }
        for fv in 0..schema.num_fv() {
            let (f, v) = schema.fv_label(fv);
            let (l, u) = (self.lower[fv], self.upper[fv]);
            if l < 0 {
                out.push(Violation::NegativeLower {
                    feature: f.into(),
                    value: v.into(),
                });
            }
            if u <= 0 {
                out.push(Violation::NonPositiveUpper {
                    feature: f.into(),
                    value: v.into(),
                });
            }
            if u < l {
                out.push(Violation::LowerAboveUpper {
                    feature: f.into(),
                    value: v.into(),
                });
            }
        }
        out
    }

    pub fn to_json_value(&self, schema: &FeatureSchema) -> serde_json::Value {
        let mut root = serde_json::Map::new();
        for (fi, f) in schema.features().iter().enumerate() {
            let mut vals = serde_json::Map::new();
            for (vi, v) in f.values.iter().enumerate() {
                let j = schema.fv_index(fi, vi);
                vals.insert(
                    v.clone(),
                    serde_json::json!({"min": self.lower[j], "max": self.upper[j]}),
                );
            }
            root.insert(f.name.clone(), serde_json::Value::Object(vals));
        }
        serde_json::Value::Object(root)
    }
}

#[derive(Deserialize)]
struct QuotaBounds {
    min: i64,
    max: i64,
}

type QuotaDoc = IndexMap<String, IndexMap<String, QuotaBounds>>;

/// Reads `{feature: {value: {"min": l, "max": u}}}`.
///
/// Without a schema, the document's key order defines one. With a schema,
/// every feature-value must be present and nothing else.
pub fn load_quotas(text: &str, schema: Option<&FeatureSchema>) -> Result<(FeatureSchema, Quotas), DataError> {
    let doc: QuotaDoc = serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))?;
    let schema = match schema {
        Some(s) => s.clone(),
        None => FeatureSchema::new(
            doc.iter()
                .map(|(f, vals)| Feature {
                    name: f.clone(),
                    values: vals.keys().cloned().collect(),
                })
                .collect(),
        )?,
    };
    let mut lower = vec![0; schema.num_fv()];
    let mut upper = vec![0; schema.num_fv()];
    let mut filled = vec![false; schema.num_fv()];
    for (fname, vals) in &doc {
        let f = schema
            .feature_index(fname)
            .ok_or_else(|| DataError::Quota(format!("unknown feature `{fname}`")))?;
        for (vname, b) in vals {
            let v = schema
                .value_index(f, vname)
                .ok_or_else(|| DataError::Quota(format!("unknown value `{fname}={vname}`")))?;
            let j = schema.fv_index(f, v);
            lower[j] = b.min;
            upper[j] = b.max;
            filled[j] = true;
        }
    }
    if let Some(j) = filled.iter().position(|x| !x) {
        let (f, v) = schema.fv_label(j);
        return Err(DataError::Quota(format!("no quota for `{f}={v}`")));
    }
    let quotas = Quotas { lower, upper };
    if let Some(p) = quotas.problems(&schema).into_iter().next() {
        return Err(DataError::Quota(p.to_string()));
    }
    Ok((schema, quotas))
}

/// One training row for the dropout model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutcomeRow {
    pub agent: Agent,
    pub dropped: bool,
}

/// The tuple (N, K, l, u, a).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub schema: FeatureSchema,
    pub panel: Vec<Agent>,
    pub pool: Vec<Agent>,
    pub quotas: Quotas,
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    DuplicateId(String),
    PanelPoolOverlap(String),
    BadVector(String),
    QuotaShape {
        expected: usize,
    },
    NegativeLower {
        feature: String,
        value: String,
    },
    NonPositiveUpper {
        feature: String,
        value: String,
    },
    LowerAboveUpper {
        feature: String,
        value: String,
    },
    PanelBelowLower {
        feature: String,
        value: String,
        count: i64,
        lower: i64,
    },
    PanelAboveUpper {
        feature: String,
        value: String,
        count: i64,
        upper: i64,
    },
    BudgetExceedsPool {
        budget: usize,
        pool: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "duplicate agent id `{id}`"),
            Violation::PanelPoolOverlap(id) => write!(f, "agent `{id}` is in both panel and pool"),
            Violation::BadVector(id) => write!(f, "agent `{id}` does not match the schema"),
            Violation::QuotaShape { expected } => {
                write!(f, "quotas must cover exactly {expected} feature-values")
            }
            Violation::NegativeLower { feature, value } => {
                write!(f, "negative lower quota for {feature}={value}")
            }
            Violation::NonPositiveUpper { feature, value } => {
                write!(f, "upper quota for {feature}={value} must be positive")
            }
            Violation::LowerAboveUpper { feature, value } => {
                write!(f, "lower quota exceeds upper quota for {feature}={value}")
            }
            Violation::PanelBelowLower {
                feature,
                value,
                count,
                lower,
            } => {
                write!(f, "panel has {count} with {feature}={value}, below lower quota {lower}")
            }
            Violation::PanelAboveUpper {
                feature,
                value,
                count,
                upper,
            } => {
                write!(f, "panel has {count} with {feature}={value}, above upper quota {upper}")
            }
            Violation::BudgetExceedsPool { budget, pool } => {
                write!(f, "budget exceeds pool ({budget} > {pool})")
            }
        }
    }
}

/// All invariant violations of `instance`; empty means valid.
pub fn validate_instance(instance: &Instance) -> Vec<Violation> {
    let schema = &instance.schema;
    let mut out = Vec::new();
    let mut panel_ids = HashSet::new();
    for a in &instance.panel {
        if !panel_ids.insert(a.id.as_str()) {
            out.push(Violation::DuplicateId(a.id.clone()));
        }
    }
    let mut pool_ids = HashSet::new();
    for a in &instance.pool {
        if panel_ids.contains(a.id.as_str()) {
            out.push(Violation::PanelPoolOverlap(a.id.clone()));
        } else if !pool_ids.insert(a.id.as_str()) {
            out.push(Violation::DuplicateId(a.id.clone()));
        }
    }
    let mut vectors_ok = true;
    for a in instance.panel.iter().chain(&instance.pool) {
        if !a.conforms(schema) {
            vectors_ok = false;
            out.push(Violation::BadVector(a.id.clone()));
        }
    }
    let quota_problems = instance.quotas.problems(schema);
    let quotas_ok = quota_problems.is_empty();
    out.extend(quota_problems);
    if vectors_ok && quotas_ok {
        let counts = crate::deviation::feature_value_counts(&instance.panel, schema);
        for (j, &c) in counts.iter().enumerate() {
            let (f, v) = schema.fv_label(j);
            if c < instance.quotas.lower[j] {
                out.push(Violation::PanelBelowLower {
                    feature: f.into(),
                    value: v.into(),
                    count: c,
                    lower: instance.quotas.lower[j],
                });
            }
            if c > instance.quotas.upper[j] {
                out.push(Violation::PanelAboveUpper {
                    feature: f.into(),
                    value: v.into(),
                    count: c,
                    upper: instance.quotas.upper[j],
                });
            }
        }
    }
    if instance.budget > instance.pool.len() {
        out.push(Violation::BudgetExceedsPool {
            budget: instance.budget,
            pool: instance.pool.len(),
        });
    }
    out
}

impl Instance {
    pub fn k(&self) -> usize {
        self.panel.len()
    }

    pub fn n(&self) -> usize {
        self.pool.len()
    }

    pub fn with_budget(&self, budget: usize) -> Instance {
        Instance { budget, ..self.clone() }
    }

    pub fn pool_index(&self) -> HashMap<&str, usize> {
        self.pool.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect()
    }

    pub fn panel_index(&self) -> HashMap<&str, usize> {
        self.panel.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let agents = |list: &[Agent]| -> Vec<AgentDoc> { list.iter().map(|a| agent_doc(a, &self.schema)).collect() };
        serde_json::to_value(InstanceDoc {
            schema: self.schema.to_map(),
            quotas: self.quotas.to_json_value(&self.schema),
            budget: self.budget,
            panel: agents(&self.panel),
            pool: agents(&self.pool),
        })
        .expect("instance serializes")
    }

    /// Parses the bundled instance JSON and validates it.
    pub fn from_json(text: &str) -> Result<Instance, DataError> {
        let doc: InstanceDoc = serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))?;
        let schema = FeatureSchema::from_map(doc.schema)?;
        let (_, quotas) = load_quotas(&doc.quotas.to_string(), Some(&schema))?;
        let parse = |list: Vec<AgentDoc>| -> Result<Vec<Agent>, DataError> {
            list.into_iter().map(|d| parse_agent_doc(d, &schema)).collect()
        };
        let instance = Instance {
            panel: parse(doc.panel)?,
            pool: parse(doc.pool)?,
            quotas,
            budget: doc.budget,
            schema,
        };
        let problems = validate_instance(&instance);
        if problems.is_empty() {
            Ok(instance)
        } else {
            Err(DataError::Invalid(problems))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    schema: IndexMap<String, Vec<String>>,
    quotas: serde_json::Value,
    budget: usize,
    panel: Vec<AgentDoc>,
    pool: Vec<AgentDoc>,
}

#[derive(Serialize, Deserialize)]
struct AgentDoc {
    id: String,
    values: IndexMap<String, String>,
}

fn agent_doc(a: &Agent, schema: &FeatureSchema) -> AgentDoc {
    AgentDoc {
        id: a.id.clone(),
        values: schema
            .features()
            .iter()
            .zip(&a.values)
            .map(|(f, &v)| (f.name.clone(), f.values[v].clone()))
            .collect(),
    }
}

fn parse_agent_doc(d: AgentDoc, schema: &FeatureSchema) -> Result<Agent, DataError> {
    let mut values = Vec::with_capacity(schema.num_features());
    for (fi, f) in schema.features().iter().enumerate() {
        let raw = d
            .values
            .get(&f.name)
            .ok_or_else(|| DataError::Json(format!("agent `{}` has no value for `{}`", d.id, f.name)))?;
        let v = schema
            .value_index(fi, raw)
            .ok_or_else(|| DataError::Json(format!("agent `{}`: unknown value `{}={raw}`", d.id, f.name)))?;
        values.push(v);
    }
    if d.values.len() != schema.num_features() {
        return Err(DataError::Json(format!("agent `{}` has unknown features", d.id)));
    }
    Ok(Agent { id: d.id, values })
}

/// Result of reading an agents CSV.
#[derive(Clone, Debug, Default)]
pub struct AgentTable {
    pub panel: Vec<Agent>,
    pub pool: Vec<Agent>,
    pub outcomes: Vec<OutcomeRow>,
    pub warnings: Vec<String>,
}

/// Reads `id,role,<feature...>[,dropped]`. Lines starting with `#` are
/// comments.
///
/// Rows with an empty feature cell are skipped with a warning, or rejected in
/// `strict` mode. Line numbers in errors count the header as line 1.
pub fn load_agents_csv(text: &str, schema: &FeatureSchema, strict: bool) -> Result<AgentTable, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| DataError::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let bad_header = |message: String| DataError::Csv { line: 1, message };
    let col = |name: &str| header.iter().position(|h| h == name);
    let id_col = col("id").ok_or_else(|| bad_header("missing `id` column".into()))?;
    let role_col = col("role").ok_or_else(|| bad_header("missing `role` column".into()))?;
    let dropped_col = col("dropped");
    let mut feature_cols = Vec::with_capacity(schema.num_features());
    for f in schema.features() {
        feature_cols.push(col(&f.name).ok_or_else(|| bad_header(format!("missing feature column `{}`", f.name)))?);
    }
    let known = header.len();
    let expected = 2 + schema.num_features() + usize::from(dropped_col.is_some());
    if known != expected {
        let extra = header
            .iter()
            .find(|h| *h != "id" && *h != "role" && *h != "dropped" && schema.feature_index(h).is_none())
            .unwrap_or("?");
        return Err(bad_header(format!("unexpected column `{extra}`")));
    }

    let mut table = AgentTable::default();
    let mut ids = HashSet::new();
    for (idx, record) in reader.records().enumerate() {
        let line = match &record {
            Ok(r) => r.position().map_or(idx + 2, |p| p.line() as usize),
            Err(e) => e.position().map_or(idx + 2, |p| p.line() as usize),
        };
        let record = record.map_err(|e| DataError::Csv {
            line,
            message: e.to_string(),
        })?;
        let err = |message: String| DataError::Csv { line, message };
        let id = record.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(err("empty id".into()));
        }
        let role = record.get(role_col).unwrap_or("");
        if role != "panel" && role != "pool" {
            return Err(err(format!("role must be `panel` or `pool`, got `{role}`")));
        }
        let mut values = Vec::with_capacity(schema.num_features());
        let mut missing = None;
        for (fi, &c) in feature_cols.iter().enumerate() {
            let cell = record.get(c).unwrap_or("");
            if cell.is_empty() {
                missing = Some(schema.features()[fi].name.clone());
                break;
            }
            let v = schema.value_index(fi, cell).ok_or_else(|| {
                err(format!(
                    "unknown value `{cell}` for feature `{}`",
                    schema.features()[fi].name
                ))
            })?;
            values.push(v);
        }
        if let Some(feature) = missing {
            let msg = format!("line {line}: agent `{id}` has no `{feature}` value; row skipped");
            if strict {
                return Err(err(msg));
            }
            log::warn!("{msg}");
            table.warnings.push(msg);
            continue;
        }
        if !ids.insert(id.clone()) {
            return Err(err(format!("duplicate id `{id}`")));
        }
        let agent = Agent { id, values };
        if let Some(c) = dropped_col {
            match record.get(c).unwrap_or("") {
                "" => {}
                "0" => table.outcomes.push(OutcomeRow {
                    agent: agent.clone(),
                    dropped: false,
                }),
                "1" => table.outcomes.push(OutcomeRow {
                    agent: agent.clone(),
                    dropped: true,
                }),
                other => return Err(err(format!("`dropped` must be 0 or 1, got `{other}`"))),
            }
        }
        if role == "panel" {
            table.panel.push(agent);
        } else {
            table.pool.push(agent);
        }
    }
    Ok(table)
}

/// Writes agents in the format read by [`load_agents_csv`]. `dropped` maps
/// agent ids to outcomes; the column is omitted when it is empty.
pub fn write_agents_csv(
    schema: &FeatureSchema,
    panel: &[Agent],
    pool: &[Agent],
    dropped: &HashMap<String, bool>,
) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "role".to_string()];
    header.extend(schema.features().iter().map(|f| f.name.clone()));
    if !dropped.is_empty() {
        header.push("dropped".into());
    }
    w.write_record(&header).expect("in-memory write");
    for (role, list) in [("panel", panel), ("pool", pool)] {
        for a in list {
            let mut row = vec![a.id.clone(), role.to_string()];
            row.extend(
                schema
                    .features()
                    .iter()
                    .zip(&a.values)
                    .map(|(f, &v)| f.values[v].clone()),
            );
            if !dropped.is_empty() {
                row.push(match dropped.get(&a.id) {
                    Some(true) => "1".into(),
                    Some(false) => "0".into(),
                    None => String::new(),
                });
            }
            w.write_record(&row).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn party_schema() -> FeatureSchema {
        FeatureSchema::from_pairs(&[("party", &["dem", "rep", "und"][..])]).unwrap()
    }

    #[test]
    fn flattened_order() {
        let s = FeatureSchema::from_pairs(&[("a", &["x", "y"][..]), ("b", &["p", "q", "r"][..])]).unwrap();
        assert_eq!(s.num_fv(), 5);
        assert_eq!(s.fv_index(1, 2), 4);
        assert_eq!(s.fv_pair(2), (1, 0));
        assert_eq!(s.fv_label(4), ("b", "r"));
        assert_eq!(s.fv_range(1), 2..5);
    }

    #[test]
    fn schema_rejects_duplicates() {
        assert!(FeatureSchema::from_pairs(&[("a", &["x", "x"][..])]).is_err());
        assert!(FeatureSchema::from_pairs(&[("a", &["x"][..]), ("a", &["y"][..])]).is_err());
        assert!(FeatureSchema::from_pairs::<&str>(&[("a", &[][..])]).is_err());
    }

    #[test]
    fn assembly_quotas() {
        let text = r#"{"party": {"dem": {"min":40,"max":44}, "rep": {"min":40,"max":44}, "und": {"min":12,"max":20}}}"#;
        let (schema, q) = load_quotas(text, None).unwrap();
        assert_eq!(schema, party_schema());
        assert_eq!(q.lower, vec![40, 40, 12]);
        assert_eq!(q.upper, vec![44, 44, 20]);
    }

    #[test]
    fn quota_errors() {
        let zero = r#"{"party": {"dem": {"min":0,"max":0}, "rep": {"min":1,"max":2}, "und": {"min":1,"max":1}}}"#;
        assert!(matches!(load_quotas(zero, None), Err(DataError::Quota(_))));
        let inverted = r#"{"party": {"dem": {"min":3,"max":2}, "rep": {"min":1,"max":2}, "und": {"min":1,"max":1}}}"#;
        assert!(load_quotas(inverted, None).is_err());
        let partial = r#"{"party": {"dem": {"min":1,"max":2}}}"#;
        assert!(load_quotas(partial, Some(&party_schema())).is_err());
        let tight = r#"{"party": {"dem": {"min":2,"max":2}, "rep": {"min":2,"max":2}, "und": {"min":1,"max":1}}}"#;
        assert!(load_quotas(tight, None).is_ok());
    }

    fn tiny() -> Instance {
        let schema = FeatureSchema::from_pairs(&[("g", &["x", "y"][..])]).unwrap();
        Instance {
            schema,
            panel: vec![Agent::new("p1", vec![0]), Agent::new("p2", vec![1])],
            pool: vec![Agent::new("a1", vec![0]), Agent::new("a2", vec![1])],
            quotas: Quotas::new(vec![1, 1], vec![1, 1]),
            budget: 1,
        }
    }

    #[test]
    fn validation_reports() {
        assert!(validate_instance(&tiny()).is_empty());
        let mut short = tiny();
        short.panel.pop();
        let v = validate_instance(&short);
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], Violation::PanelBelowLower { value, .. } if value == "y"));
        let big = tiny().with_budget(3);
        let v = validate_instance(&big);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("budget exceeds pool"));
    }

    #[test]
    fn instance_json_round_trip() {
        let inst = tiny();
        let text = inst.to_json().to_string();
        assert_eq!(Instance::from_json(&text).unwrap(), inst);
    }

    #[test]
    fn csv_basic() {
        let schema = FeatureSchema::from_pairs(&[("age", &["young", "old"][..])]).unwrap();
        let text = "id,role,age\np1,panel,young\np2,panel,old\na1,pool,old\na2,pool,young\n";
        let t = load_agents_csv(text, &schema, false).unwrap();
        assert_eq!((t.panel.len(), t.pool.len()), (2, 2));
        assert!(t.outcomes.is_empty());
    }

    #[test]
    fn csv_missing_cell_skips_row() {
        let schema = FeatureSchema::from_pairs(&[("age", &["young", "old"][..])]).unwrap();
        let text = "id,role,age,dropped\np1,panel,young,1\np2,panel,,0\na1,pool,old,\n";
        let t = load_agents_csv(text, &schema, false).unwrap();
        assert_eq!(t.warnings.len(), 1);
        assert_eq!(t.panel.len(), 1);
        assert_eq!(t.outcomes.len(), 1);
        assert!(load_agents_csv(text, &schema, true).is_err());
    }

    #[test]
    fn csv_errors_name_lines() {
        let schema = FeatureSchema::from_pairs(&[("age", &["young", "old"][..])]).unwrap();
        let dup = "id,role,age\np1,panel,young\np1,pool,old\n";
        assert!(matches!(
            load_agents_csv(dup, &schema, false),
            Err(DataError::Csv { line: 3, .. })
        ));
        let unknown = "id,role,age\np1,panel,middle\n";
        assert!(matches!(
            load_agents_csv(unknown, &schema, false),
            Err(DataError::Csv { line: 2, .. })
        ));
        let header = "id,age\np1,young\n";
        assert!(matches!(
            load_agents_csv(header, &schema, false),
            Err(DataError::Csv { line: 1, .. })
        ));
        let extra = "id,role,age,colour\np1,panel,young,red\n";
        assert!(load_agents_csv(extra, &schema, false).is_err());
    }
}
