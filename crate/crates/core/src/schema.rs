//! Domain function specifications and the registry that serves them.
//!
//! A domain (restaurant, hotel, ...) is modelled as a callable function whose
//! arguments are the domain's slots. The registry always contains exactly one
//! null function, selected when no domain is active.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the null function in every registry.
pub const NULL_FUNCTION: &str = "null";

/// Slots with this prefix carry booking details and never constrain a database query.
pub const BOOKING_PREFIX: &str = "book_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Categorical,
    FreeText,
    Integer,
    Time,
    Boolean,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Categorical => "categorical",
            ValueType::FreeText => "free_text",
            ValueType::Integer => "integer",
            ValueType::Time => "time",
            ValueType::Boolean => "boolean",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub slot_name: String,
    #[serde(rename = "type")]
    pub value_type: ValueType,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub possible_values: Option<Vec<String>>,
}

impl SlotSpec {
    pub fn free_text(name: &str) -> Self {
        SlotSpec {
            slot_name: name.to_string(),
            value_type: ValueType::FreeText,
            description: String::new(),
            possible_values: None,
        }
    }

    /// Booking slots are carried in calls but ignored by database lookups.
    pub fn is_queryable(&self) -> bool {
        !self.slot_name.starts_with(BOOKING_PREFIX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub name: String,
    pub description: String,
    pub arguments: Vec<SlotSpec>,
}

impl FunctionSpec {
    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.arguments.iter().find(|s| s.slot_name == name)
    }

    pub fn is_null(&self) -> bool {
        self.name == NULL_FUNCTION
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    Parse(String),
    #[error("duplicate function name `{0}`")]
    DuplicateFunction(String),
    #[error("function `{function}` declares slot `{slot}` more than once")]
    DuplicateSlot { function: String, slot: String },
    #[error("function `{function}` has an empty slot name")]
    EmptySlotName { function: String },
    #[error("categorical slot `{function}.{slot}` is missing possible_values")]
    MissingPossibleValues { function: String, slot: String },
    #[error("slot `{function}.{slot}` has an empty possible_values list")]
    EmptyPossibleValues { function: String, slot: String },
    #[error("slot `{function}.{slot}` lists `{value}` more than once")]
    DuplicatePossibleValue {
        function: String,
        slot: String,
        value: String,
    },
    #[error("function name must not be empty")]
    EmptyFunctionName,
    #[error("schema has no null function named `{NULL_FUNCTION}`")]
    MissingNullFunction,
    #[error("null function must not take arguments")]
    NullFunctionHasArguments,
}

/// Immutable, validated set of function specs in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionRegistry {
    functions: Vec<FunctionSpec>,
    null_index: usize,
}

fn fold(name: &str) -> String {
    name.trim().to_lowercase()
}

impl FunctionRegistry {
    pub fn new(functions: Vec<FunctionSpec>) -> Result<Self, SchemaError> {
        let mut names = BTreeSet::new();
        let mut null_index = None;
        for (i, f) in functions.iter().enumerate() {
            let folded = fold(&f.name);
            if folded.is_empty() {
                return Err(SchemaError::EmptyFunctionName);
            }
            if !names.insert(folded.clone()) {
                return Err(SchemaError::DuplicateFunction(f.name.clone()));
            }
            if folded == NULL_FUNCTION {
                if !f.arguments.is_empty() {
                    return Err(SchemaError::NullFunctionHasArguments);
                }
                null_index = Some(i);
            }
            validate_slots(f)?;
        }
        let null_index = null_index.ok_or(SchemaError::MissingNullFunction)?;
        Ok(FunctionRegistry {
            functions,
            null_index,
        })
    }

    /// Parses the schema JSON document: a top-level array of function objects.
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let functions: Vec<FunctionSpec> =
            serde_json::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        Self::new(functions)
    }

    /// The bundled MultiWOZ schema: seven domains plus the null function.
    pub fn multiwoz() -> Self {
        Self::from_json(include_str!("../data/multiwoz_schema.json"))
            .expect("bundled schema is valid")
    }

    pub fn functions(&self) -> &[FunctionSpec] {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn null_function(&self) -> &FunctionSpec {
        &self.functions[self.null_index]
    }

    /// Case-insensitive, whitespace-trimmed lookup.
    pub fn resolve(&self, name: &str) -> Option<&FunctionSpec> {
        let wanted = fold(name);
        self.functions.iter().find(|f| fold(&f.name) == wanted)
    }

    /// Looks up a slot spec across the registry, used when only `(domain, slot)` is known.
    pub fn slot(&self, function: &str, slot: &str) -> Option<&SlotSpec> {
        self.resolve(function).and_then(|f| f.slot(slot))
    }

    /// Renders every spec as a JSON array, in registry order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.functions).expect("specs serialize")
    }
}

fn validate_slots(f: &FunctionSpec) -> Result<(), SchemaError> {
    let mut seen = BTreeSet::new();
    for slot in &f.arguments {
        if slot.slot_name.trim().is_empty() {
            return Err(SchemaError::EmptySlotName {
                function: f.name.clone(),
            });
        }
        if !seen.insert(slot.slot_name.as_str()) {
            return Err(SchemaError::DuplicateSlot {
                function: f.name.clone(),
                slot: slot.slot_name.clone(),
            });
        }
        match (&slot.possible_values, slot.value_type) {
            (None, ValueType::Categorical) => {
                return Err(SchemaError::MissingPossibleValues {
                    function: f.name.clone(),
                    slot: slot.slot_name.clone(),
                })
            }
            (Some(values), _) => {
                if values.is_empty() {
                    return Err(SchemaError::EmptyPossibleValues {
                        function: f.name.clone(),
                        slot: slot.slot_name.clone(),
                    });
                }
                let mut uniq = BTreeSet::new();
                for v in values {
                    if !uniq.insert(fold(v)) {
                        return Err(SchemaError::DuplicatePossibleValue {
                            function: f.name.clone(),
                            slot: slot.slot_name.clone(),
                            value: v.clone(),
                        });
                    }
                }
            }
            (None, _) => {}
        }
    }
    Ok(())
}

/// Deterministic pretty JSON rendering with fields ordered name, description, arguments.
pub fn render_spec(spec: &FunctionSpec) -> String {
    serde_json::to_string_pretty(spec).expect("spec serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec(name: &str, args: Vec<SlotSpec>) -> FunctionSpec {
        FunctionSpec {
            name: name.into(),
            description: String::new(),
            arguments: args,
        }
    }

    #[test]
    fn three_function_file() {
        let reg = FunctionRegistry::new(vec![
            spec("restaurant", vec![SlotSpec::free_text("food")]),
            spec("hotel", vec![]),
            spec("null", vec![]),
        ])
        .unwrap();
        assert_eq!(reg.len(), 3);
        assert_eq!(reg.null_function().name, "null");
    }

    #[test]
    fn duplicate_name_is_reported() {
        let err = FunctionRegistry::new(vec![
            spec("hotel", vec![]),
            spec("hotel", vec![]),
            spec("null", vec![]),
        ])
        .unwrap_err();
        assert_eq!(err, SchemaError::DuplicateFunction("hotel".into()));
        assert!(err.to_string().contains("hotel"));
    }

    #[test]
    fn categorical_needs_values() {
        let mut slot = SlotSpec::free_text("area");
        slot.value_type = ValueType::Categorical;
        let err = FunctionRegistry::new(vec![spec("restaurant", vec![slot]), spec("null", vec![])])
            .unwrap_err();
        assert!(matches!(err, SchemaError::MissingPossibleValues { .. }));
    }

    #[test]
    fn missing_null() {
        let err = FunctionRegistry::new(vec![spec("hotel", vec![])]).unwrap_err();
        assert_eq!(err, SchemaError::MissingNullFunction);
    }

    #[test]
    fn bundled_multiwoz_schema() {
        let reg = FunctionRegistry::multiwoz();
        assert_eq!(reg.len(), 8);
        assert_eq!(reg.resolve("Restaurant ").unwrap().name, "restaurant");
        assert!(reg.resolve("bank").is_none());
        assert!(reg.resolve("null").unwrap().arguments.is_empty());
    }

    #[test]
    fn null_rendering_has_empty_arguments() {
        let reg = FunctionRegistry::multiwoz();
        let text = render_spec(reg.null_function());
        assert!(text.contains("\"arguments\": []"));
        let name_at = text.find("\"name\"").unwrap();
        let desc_at = text.find("\"description\"").unwrap();
        assert!(name_at < desc_at);
    }
}
