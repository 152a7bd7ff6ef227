use std::collections::BTreeMap;

use sds_core::dsl::ParseError;
use sds_core::expr::{ZeroStatus, ZeroVerdict};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const SCHEMA: &str = "sds-report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Inconclusive,
    Fail,
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Inconclusive => 2,
            Status::Error => 3,
        }
    }
}

/// One claim the command decided, with the evidence behind the decision.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub claim: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Value>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

impl Verdict {
    pub fn new(claim: impl Into<String>, pass: bool) -> Self {
        Verdict {
            claim: claim.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            witness: None,
            detail: Value::Null,
        }
    }

    /// A zero test. A numeric zero is inconclusive when `symbolic` is demanded.
    pub fn zero(claim: impl Into<String>, v: &ZeroVerdict, symbolic: bool) -> Self {
        let status = match v.status {
            ZeroStatus::SymbolicZero => Status::Pass,
            ZeroStatus::NumericZero if symbolic => Status::Inconclusive,
            ZeroStatus::NumericZero => Status::Pass,
            ZeroStatus::NonZero => Status::Fail,
        };
        Verdict {
            claim: claim.into(),
            status,
            witness: v.witness.as_ref().map(|w| json!(w)),
            detail: json!({
                "zero_status": v.status,
                "max_residual": v.max_residual,
                "samples": v.samples,
            }),
        }
    }

    pub fn with_witness(mut self, w: Value) -> Self {
        self.witness = Some(w);
        self
    }

    pub fn with_detail(mut self, d: Value) -> Self {
        self.detail = d;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Inputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub document: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    pub seed: u64,
    pub params: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub command: String,
    pub inputs: Inputs,
    pub status: Status,
    pub verdicts: Vec<Verdict>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub result: Value,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<ParseError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Report {
    pub fn new(command: &str, seed: u64) -> Self {
        Report {
            schema: SCHEMA,
            command: command.to_string(),
            inputs: Inputs {
                document: None,
                sha256: None,
                seed,
                params: BTreeMap::new(),
            },
            status: Status::Pass,
            verdicts: Vec::new(),
            result: Value::Null,
            diagnostics: Vec::new(),
            error: None,
        }
    }

    pub fn document(&mut self, path: &str, bytes: &[u8]) {
        self.inputs.document = Some(path.to_string());
        self.inputs.sha256 = Some(hex::encode(Sha256::digest(bytes)));
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.inputs.params.insert(key.to_string(), json!(value));
        self
    }

    pub fn push(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }

    /// The overall status is the worst verdict; no verdicts at all is a pass.
    pub fn settle(&mut self) {
        if self.status != Status::Error {
            self.status = self.verdicts.iter().map(|v| v.status).max().unwrap_or(Status::Pass);
        }
    }

    pub fn fail_with(&mut self, message: String) {
        self.status = Status::Error;
        self.error = Some(message);
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
