//! JSON interchange records for structures and distributions.
//!
//! ```json
//! {"schema_version": 1, "domain": "linear_chain", "params": {"len": 3, "tags": 2},
//!  "bits": [0, 0, 1, 0, 0, 1, 0, 0]}
//! ```
//!
//! Distributions carry `support` (a list of bit vectors) and `weights` instead
//! of `bits`.

use serde::{Deserialize, Serialize};

use super::{SparseDist, StructDomain, Structure};
use crate::error::{param_err, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureRecord {
    pub schema_version: u32,
    pub domain: String,
    pub params: serde_json::Value,
    pub bits: Vec<u8>,
}

impl StructureRecord {
    pub fn new<D: StructDomain + ?Sized>(d: &D, z: &Structure) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            domain: d.tag().to_string(),
            params: d.params(),
            bits: z.bits.clone(),
        }
    }

    /// Reads the structure back, checking it belongs to `d`.
    pub fn into_structure<D: StructDomain + ?Sized>(self, d: &D) -> Result<Structure> {
        check_header(d, self.schema_version, &self.domain, &self.params)?;
        let z = Structure { bits: self.bits };
        if !d.is_valid(&z) {
            return Err(param_err("bits", "not a valid structure of the domain"));
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistRecord {
    pub schema_version: u32,
    pub domain: String,
    pub params: serde_json::Value,
    pub support: Vec<Vec<u8>>,
    pub weights: Vec<f64>,
}

impl DistRecord {
    pub fn new<D: StructDomain + ?Sized>(d: &D, dist: &SparseDist) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            domain: d.tag().to_string(),
            params: d.params(),
            support: dist.support.iter().map(|z| z.bits.clone()).collect(),
            weights: dist.weights.clone(),
        }
    }

    pub fn into_dist<D: StructDomain + ?Sized>(self, d: &D) -> Result<SparseDist> {
        check_header(d, self.schema_version, &self.domain, &self.params)?;
        let support: Vec<Structure> = self
            .support
            .into_iter()
            .map(|bits| Structure { bits })
            .collect();
        if support.len() != self.weights.len() || !support.iter().all(|z| d.is_valid(z)) {
            return Err(param_err("support", "invalid structures or weight count"));
        }
        let dist = SparseDist {
            support,
            weights: self.weights,
        };
        if !dist.is_valid(1e-9) {
            return Err(param_err(
                "weights",
                "not a distribution over distinct structures",
            ));
        }
        Ok(dist)
    }
}

fn check_header<D: StructDomain + ?Sized>(
    d: &D,
    version: u32,
    domain: &str,
    params: &serde_json::Value,
) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(param_err(
            "schema_version",
            format!("expected {SCHEMA_VERSION}, got {version}"),
        ));
    }
    if domain != d.tag() || *params != d.params() {
        return Err(param_err(
            "domain",
            format!("record is for {domain} {params}"),
        ));
    }
    Ok(())
}
