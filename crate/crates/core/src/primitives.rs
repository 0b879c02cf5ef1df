//! Action-primitive catalog, call wire format, parsing, and validation.
//!
//! The catalog is closed: `get_observation` (perception), `pick_place_at` and
//! `pick_place_on` (execution), and `finish` (control). Calls travel as JSON
//! objects `{"primitive": <name>, "args": {...}}`; `parse_call` tolerates
//! prose and code fences around that object but is strict about the schema
//! inside it.

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

use crate::world::{ObjectId, ObjectKind, SceneState, Settled, Support, Vec3, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimitiveCategory {
    Perception,
    Execution,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemanticType {
    ObjectRef,
    Position,
    Status,
    Text,
}

/// Schema entry for one primitive in the (closed) catalog.
#[derive(Debug, Clone)]
pub struct PrimitiveSpec {
    pub name: &'static str,
    pub category: PrimitiveCategory,
    pub params: &'static [(&'static str, SemanticType)],
    pub doc: &'static str,
}

pub const GET_OBSERVATION: &str = "get_observation";
pub const PICK_PLACE_AT: &str = "pick_place_at";
pub const PICK_PLACE_ON: &str = "pick_place_on";
pub const FINISH: &str = "finish";

const CATALOG: &[PrimitiveSpec] = &[
    PrimitiveSpec {
        name: GET_OBSERVATION,
        category: PrimitiveCategory::Perception,
        params: &[],
        doc: "look at the table and get the current list of objects with their ids, kinds, colors, and positions",
    },
    PrimitiveSpec {
        name: PICK_PLACE_AT,
        category: PrimitiveCategory::Execution,
        params: &[("object", SemanticType::ObjectRef), ("target", SemanticType::Position)],
        doc: "pick up <object> and place it at <target> = [x, y, z] in meters",
    },
    PrimitiveSpec {
        name: PICK_PLACE_ON,
        category: PrimitiveCategory::Execution,
        params: &[("object", SemanticType::ObjectRef), ("base", SemanticType::ObjectRef)],
        doc: "pick up <object> and place it on top of <base> (into it, when <base> is a bowl)",
    },
    PrimitiveSpec {
        name: FINISH,
        category: PrimitiveCategory::Control,
        params: &[("status", SemanticType::Status), ("message", SemanticType::Text)],
        doc: "end the task with <status> one of \"success\", \"failure\", \"infeasible\" and a short <message>",
    },
];

pub fn catalog() -> &'static [PrimitiveSpec] {
    CATALOG
}

pub fn primitive_spec(name: &str) -> Option<&'static PrimitiveSpec> {
    CATALOG.iter().find(|p| p.name == name)
}

/// One line per primitive, for prompt assembly.
pub fn catalog_docs() -> String {
    let mut out = String::new();
    for spec in CATALOG {
        let params: Vec<&str> = spec.params.iter().map(|(n, _)| *n).collect();
        let category = match spec.category {
            PrimitiveCategory::Perception => "perception",
            PrimitiveCategory::Execution => "execution",
            PrimitiveCategory::Control => "control",
        };
        out.push_str(&format!("- {}({}) [{}]: {}\n", spec.name, params.join(", "), category, spec.doc));
    }
    out
}

/// Terminal status carried by a `finish` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Success,
    Failure,
    Infeasible,
}

impl TaskStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskStatus::Success => "success",
            TaskStatus::Failure => "failure",
            TaskStatus::Infeasible => "infeasible",
        }
    }

    pub fn parse(s: &str) -> Option<TaskStatus> {
        match s {
            "success" => Some(TaskStatus::Success),
            "failure" => Some(TaskStatus::Failure),
            "infeasible" => Some(TaskStatus::Infeasible),
            _ => None,
        }
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A typed argument value, post-parse.
#[derive(Debug, Clone, PartialEq)]
pub enum ArgValue {
    ObjectRef(ObjectId),
    Position(Vec3),
    Status(TaskStatus),
    Text(String),
}

impl ArgValue {
    fn to_wire(&self) -> Value {
        match self {
            ArgValue::ObjectRef(id) => Value::String(id.as_str().to_string()),
            ArgValue::Position(p) => serde_json::json!([p.x, p.y, p.z]),
            ArgValue::Status(s) => Value::String(s.as_str().to_string()),
            ArgValue::Text(t) => Value::String(t.clone()),
        }
    }
}

/// One parsed action request from the reasoner.
///
/// Serialized as the wire form plus `raw_text`; deserialization re-types the
/// arguments against the catalog schema, so round trips are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveCall {
    pub primitive: String,
    pub args: BTreeMap<String, ArgValue>,
    pub raw_text: String,
}

impl Serialize for PrimitiveCall {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("primitive", &self.primitive)?;
        let args: BTreeMap<&String, Value> = self.args.iter().map(|(k, v)| (k, v.to_wire())).collect();
        map.serialize_entry("args", &args)?;
        map.serialize_entry("raw_text", &self.raw_text)?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for PrimitiveCall {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct WireForm {
            primitive: String,
            args: serde_json::Map<String, Value>,
            #[serde(default)]
            raw_text: String,
        }
        let wire = WireForm::deserialize(deserializer)?;
        let call = build_call(&wire.primitive, &wire.args, "").map_err(serde::de::Error::custom)?;
        Ok(PrimitiveCall { raw_text: wire.raw_text, ..call })
    }
}

impl PrimitiveCall {
    pub fn new(primitive: &str, args: BTreeMap<String, ArgValue>) -> Self {
        let mut call = Self { primitive: primitive.to_string(), args, raw_text: String::new() };
        call.raw_text = call.wire_json();
        call
    }

    pub fn finish(status: TaskStatus, message: &str) -> Self {
        let mut args = BTreeMap::new();
        args.insert("status".to_string(), ArgValue::Status(status));
        args.insert("message".to_string(), ArgValue::Text(message.to_string()));
        Self::new(FINISH, args)
    }

    pub fn get_observation() -> Self {
        Self::new(GET_OBSERVATION, BTreeMap::new())
    }

    pub fn pick_place_at(object: ObjectId, target: Vec3) -> Self {
        let mut args = BTreeMap::new();
        args.insert("object".to_string(), ArgValue::ObjectRef(object));
        args.insert("target".to_string(), ArgValue::Position(target));
        Self::new(PICK_PLACE_AT, args)
    }

    pub fn pick_place_on(object: ObjectId, base: ObjectId) -> Self {
        let mut args = BTreeMap::new();
        args.insert("object".to_string(), ArgValue::ObjectRef(object));
        args.insert("base".to_string(), ArgValue::ObjectRef(base));
        Self::new(PICK_PLACE_ON, args)
    }

    pub fn object_ref(&self, name: &str) -> Option<&ObjectId> {
        match self.args.get(name) {
            Some(ArgValue::ObjectRef(id)) => Some(id),
            _ => None,
        }
    }

    pub fn position(&self, name: &str) -> Option<Vec3> {
        match self.args.get(name) {
            Some(ArgValue::Position(p)) => Some(*p),
            _ => None,
        }
    }

    pub fn is_movement(&self) -> bool {
        self.primitive == PICK_PLACE_AT || self.primitive == PICK_PLACE_ON
    }

    pub fn category(&self) -> PrimitiveCategory {
        primitive_spec(&self.primitive).map(|s| s.category).unwrap_or(PrimitiveCategory::Control)
    }

    /// Canonical wire form: `{"primitive": <name>, "args": {...}}`.
    pub fn wire_json(&self) -> String {
        serde_json::to_string(&WireCall { call: self }).expect("wire serialization cannot fail")
    }
}

struct WireCall<'a> {
    call: &'a PrimitiveCall,
}

impl Serialize for WireCall<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(2))?;
        map.serialize_entry("primitive", &self.call.primitive)?;
        let args: BTreeMap<&String, Value> =
            self.call.args.iter().map(|(k, v)| (k, v.to_wire())).collect();
        map.serialize_entry("args", &args)?;
        map.end()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("no call found")]
    NoCallFound,
    #[error("unknown primitive {0}")]
    UnknownPrimitive(String),
    #[error("bad arguments: {0}")]
    BadArguments(String),
}

/// Extracts the first JSON object shaped `{"primitive": ..., "args": {...}}`
/// from `text` (which may wrap it in prose or code fences) and type-checks the
/// arguments against the catalog schema.
pub fn parse_call(text: &str) -> Result<PrimitiveCall, ParseError> {
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        let value = match stream.next() {
            Some(Ok(v)) => v,
            _ => continue,
        };
        let obj = match value.as_object() {
            Some(o) => o,
            None => continue,
        };
        let name = match obj.get("primitive").and_then(Value::as_str) {
            Some(n) => n,
            None => continue,
        };
        let args = match obj.get("args").and_then(Value::as_object) {
            Some(a) => a,
            None => continue,
        };
        return build_call(name, args, text);
    }
    Err(ParseError::NoCallFound)
}

fn build_call(
    name: &str,
    args: &serde_json::Map<String, Value>,
    raw_text: &str,
) -> Result<PrimitiveCall, ParseError> {
    let spec = primitive_spec(name).ok_or_else(|| ParseError::UnknownPrimitive(name.to_string()))?;

    for key in args.keys() {
        if !spec.params.iter().any(|(p, _)| p == key) {
            return Err(ParseError::BadArguments(format!(
                "unexpected argument '{key}' for {name}"
            )));
        }
    }

    let mut typed = BTreeMap::new();
    for (param, ty) in spec.params {
        let value = args.get(*param).ok_or_else(|| {
            ParseError::BadArguments(format!("missing argument '{param}' for {name}"))
        })?;
        let arg = match ty {
            SemanticType::ObjectRef => match value.as_str() {
                Some(s) if !s.is_empty() => ArgValue::ObjectRef(ObjectId::new(s)),
                _ => {
                    return Err(ParseError::BadArguments(format!(
                        "argument '{param}' must be an object id string"
                    )))
                }
            },
            SemanticType::Position => parse_position(param, value)?,
            SemanticType::Status => match value.as_str().and_then(TaskStatus::parse) {
                Some(s) => ArgValue::Status(s),
                None => {
                    return Err(ParseError::BadArguments(format!(
                        "argument '{param}' must be one of \"success\", \"failure\", \"infeasible\""
                    )))
                }
            },
            SemanticType::Text => match value.as_str() {
                Some(s) => ArgValue::Text(s.to_string()),
                None => {
                    return Err(ParseError::BadArguments(format!(
                        "argument '{param}' must be a string"
                    )))
                }
            },
        };
        typed.insert((*param).to_string(), arg);
    }

    Ok(PrimitiveCall { primitive: name.to_string(), args: typed, raw_text: raw_text.to_string() })
}

fn parse_position(param: &str, value: &Value) -> Result<ArgValue, ParseError> {
    let arr = value.as_array().ok_or_else(|| {
        ParseError::BadArguments(format!("argument '{param}' must be a [x, y, z] array"))
    })?;
    if arr.len() < 2 || arr.len() > 3 {
        return Err(ParseError::BadArguments(format!(
            "argument '{param}' must have 2 or 3 coordinates, got {}",
            arr.len()
        )));
    }
    let mut coords = [0.0f64; 3];
    for (i, v) in arr.iter().enumerate() {
        coords[i] = v.as_f64().ok_or_else(|| {
            ParseError::BadArguments(format!("argument '{param}' coordinate {i} is not a number"))
        })?;
        if !coords[i].is_finite() {
            return Err(ParseError::BadArguments(format!(
                "argument '{param}' coordinate {i} is not finite"
            )));
        }
    }
    Ok(ArgValue::Position(Vec3::new(coords[0], coords[1], coords[2])))
}

/// Outcome of a pre-execution check. Rejection is a verdict, not an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ValidationVerdict {
    Valid,
    Rejected { reason: String },
}

impl ValidationVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, ValidationVerdict::Valid)
    }
}

/// Checks a parsed call against the scene without mutating it.
pub fn validate_call(
    call: &PrimitiveCall,
    scene: &SceneState,
    config: &WorldConfig,
) -> ValidationVerdict {
    let reject = |reason: String| ValidationVerdict::Rejected { reason };

    if call.category() == PrimitiveCategory::Execution {
        if let Some(held) = scene.held() {
            return reject(format!("already holding {held}; cannot start another pick-and-place"));
        }
    }

    for (name, value) in &call.args {
        match value {
            ArgValue::ObjectRef(id) => {
                if scene.object(id).is_none() {
                    return reject(format!("unknown object {id} (argument '{name}')"));
                }
            }
            ArgValue::Position(p) => {
                if !config.workspace.contains(p.x, p.y) {
                    return reject(format!(
                        "argument '{name}' target out of workspace: ({:.3}, {:.3})",
                        p.x, p.y
                    ));
                }
                if !p.is_finite() {
                    return reject(format!("argument '{name}' has non-finite coordinates"));
                }
            }
            ArgValue::Status(_) | ArgValue::Text(_) => {}
        }
    }

    if call.is_movement() {
        let object = call.object_ref("object").expect("schema guarantees 'object'");
        if let Some(blocker) = scene
            .objects()
            .iter()
            .find(|o| o.supported_by == Support::Object(object.clone()))
        {
            return reject(format!(
                "object {object} is buried: {} rests on it",
                blocker.id
            ));
        }
        if call.primitive == PICK_PLACE_ON {
            let base = call.object_ref("base").expect("schema guarantees 'base'");
            if base == object {
                return reject(format!("cannot place {object} on itself (argument 'base')"));
            }
        }
    }

    ValidationVerdict::Valid
}

/// Result of executing a validated call. World errors surface as `Failed`
/// outcomes; execution never panics the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExecutionOutcome {
    Observed { observation: crate::world::Observation },
    Moved { object: ObjectId, intended: Vec3, achieved: Vec3, dropped: bool },
    Finished { status: TaskStatus, message: String },
    Failed { reason: String },
}

/// Executes a validated call against the scene.
///
/// Movement primitives run pick-then-place atomically; `intended` is the pose
/// the placement settles to when nothing goes wrong, so a zero drop
/// probability always yields `achieved == intended`.
pub fn execute_call(
    call: &PrimitiveCall,
    scene: &mut SceneState,
    config: &WorldConfig,
) -> ExecutionOutcome {
    match call.primitive.as_str() {
        GET_OBSERVATION => ExecutionOutcome::Observed { observation: scene.observe(0.0) },
        FINISH => {
            let status = match call.args.get("status") {
                Some(ArgValue::Status(s)) => *s,
                _ => TaskStatus::Failure,
            };
            let message = match call.args.get("message") {
                Some(ArgValue::Text(t)) => t.clone(),
                _ => String::new(),
            };
            ExecutionOutcome::Finished { status, message }
        }
        PICK_PLACE_AT => {
            let object = call.object_ref("object").expect("schema guarantees 'object'").clone();
            let target = call.position("target").expect("schema guarantees 'target'");
            pick_and_place(scene, config, object, target)
        }
        PICK_PLACE_ON => {
            let object = call.object_ref("object").expect("schema guarantees 'object'").clone();
            let base = call.object_ref("base").expect("schema guarantees 'base'").clone();
            let base_pose = match scene.object(&base) {
                Some(o) => o.pose,
                None => return ExecutionOutcome::Failed { reason: format!("unknown object {base}") },
            };
            pick_and_place(scene, config, object, Vec3::new(base_pose.x, base_pose.y, 0.0))
        }
        other => ExecutionOutcome::Failed { reason: format!("unknown primitive {other}") },
    }
}

fn pick_and_place(
    scene: &mut SceneState,
    config: &WorldConfig,
    object: ObjectId,
    target: Vec3,
) -> ExecutionOutcome {
    let prev_support = match scene.object(&object) {
        Some(o) => o.supported_by.clone(),
        None => return ExecutionOutcome::Failed { reason: format!("unknown object {object}") },
    };
    let kind = scene.object(&object).expect("checked above").kind;

    if let Err(e) = scene.step_pick(&object) {
        return ExecutionOutcome::Failed { reason: e.to_string() };
    }
    // With the object in hand, settling the target against the rest of the
    // scene gives the pose a fault-free placement would reach.
    let intended = scene.settle_for_kind(config, target, kind).pose;
    match scene.step_place(config, target) {
        Ok(result) => ExecutionOutcome::Moved {
            object,
            intended,
            achieved: result.achieved,
            dropped: result.dropped,
        },
        Err(e) => {
            scene.abort_pick(&object, prev_support);
            ExecutionOutcome::Failed { reason: e.to_string() }
        }
    }
}

impl SceneState {
    /// Settle a placement for a specific object kind (bowls rest at z = 0 on
    /// the table; everything else follows the block rules).
    pub fn settle_for_kind(&self, config: &WorldConfig, pose: Vec3, kind: ObjectKind) -> Settled {
        match kind {
            ObjectKind::Block => self.resolve_support(config, pose),
            ObjectKind::Bowl => {
                let mut settled = self.resolve_support(config, pose);
                if settled.support == Support::Table {
                    settled.pose.z = ObjectKind::Bowl.table_rest_z();
                }
                settled
            }
        }
    }
}
