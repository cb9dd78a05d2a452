//! Named parameters and their checkpoint encoding.
//!
//! Checkpoint format (JSON, version 1):
//!
//! ```json
//! {
//!   "format": "dear-params",
//!   "version": 1,
//!   "params": { "<name>": { "shape": [rows, cols], "values": [row-major...] }, ... }
//! }
//! ```
//!
//! Names are unique; order in the object is the registration order.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;
use crate::scalar::Scalar;

pub const PARAMS_FORMAT: &str = "dear-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Adds `scale · g` into each named gradient.
    pub fn accumulate(&mut self, grads: &[(ParamId, Tensor<T>)], scale: T) {
        for (id, g) in grads {
            self.params[id.0].grad.axpy(scale, g);
        }
    }

    pub fn to_record(&self) -> ParamsRecord {
        ParamsRecord {
            format: PARAMS_FORMAT.to_string(),
            version: PARAMS_VERSION,
            params: self
                .params
                .iter()
                .map(|p| {
                    (
                        p.name.clone(),
                        TensorRecord {
                            shape: p.value.shape().to_vec(),
                            values: p.value.data().iter().map(|v| v.to_f64_lossy()).collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Overwrites values from a record. Every parameter must be present with a
    /// matching shape; extra names are rejected.
    pub fn load_record(&mut self, record: &ParamsRecord) -> Result<()> {
        if record.format != PARAMS_FORMAT || record.version != PARAMS_VERSION {
            return Err(Error::Data(format!(
                "unsupported parameter format {} v{}",
                record.format, record.version
            )));
        }
        if record.params.len() != self.params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} parameters, model expects {}",
                record.params.len(),
                self.params.len()
            )));
        }
        for p in &mut self.params {
            let rec = record
                .params
                .iter()
                .find(|(n, _)| *n == p.name)
                .map(|(_, r)| r)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter {}", p.name)))?;
            if rec.shape != p.value.shape() {
                return Err(Error::Data(format!(
                    "parameter {}: checkpoint shape {:?}, model shape {:?}",
                    p.name,
                    rec.shape,
                    p.value.shape()
                )));
            }
            let values = rec.values.iter().map(|&v| T::from_f64_lossy(v)).collect();
            p.value = Tensor::new(rec.shape.clone(), values)?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and the little-endian f64 bytes of values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &s in p.value.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_f64_lossy().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsRecord {
    pub format: String,
    pub version: u32,
    #[serde(with = "ordered_map")]
    pub params: Vec<(String, TensorRecord)>,
}

/// Serializes `(name, tensor)` pairs as a JSON object preserving order.
mod ordered_map {
    use std::fmt;

    use serde::de::{MapAccess, Visitor};
    use serde::ser::SerializeMap;
    use serde::{Deserializer, Serializer};

    use super::TensorRecord;

    pub fn serialize<S: Serializer>(v: &[(String, TensorRecord)], s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(v.len()))?;
        for (k, t) in v {
            map.serialize_entry(k, t)?;
        }
        map.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(String, TensorRecord)>, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Vec<(String, TensorRecord)>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of parameter name to tensor")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> Result<Self::Value, A::Error> {
                let mut out: Vec<(String, TensorRecord)> = Vec::new();
                while let Some((k, v)) = m.next_entry::<String, TensorRecord>()? {
                    if out.iter().any(|(n, _)| *n == k) {
                        return Err(serde::de::Error::custom(format!("duplicate parameter {k}")));
                    }
                    out.push((k, v));
                }
                Ok(out)
            }
        }
        d.deserialize_map(V)
    }
}
