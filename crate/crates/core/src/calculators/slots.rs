use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One filled parameter: a number (or enum index) plus its unit tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotValue {
    pub value: f64,
    pub unit: Option<String>,
}

impl SlotValue {
    /// `"null"` and blank unit strings are treated as no unit.
    pub fn new(value: f64, unit: Option<&str>) -> Self {
        SlotValue {
            value,
            unit: clean_unit(unit),
        }
    }
}

pub(crate) fn clean_unit(unit: Option<&str>) -> Option<String> {
    let u = unit?.trim();
    if u.is_empty() || u.eq_ignore_ascii_case("null") || u.eq_ignore_ascii_case("none") {
        None
    } else {
        Some(u.to_string())
    }
}

/// Integral values print without a fractional part; everything else uses the
/// shortest representation that round-trips.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Serialize, Deserialize)]
struct Wire {
    #[serde(rename = "Value")]
    value: serde_json::Value,
    #[serde(rename = "Unit", default)]
    unit: Option<String>,
}

impl Serialize for SlotValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let value = if self.value.fract() == 0.0 && self.value.abs() < 1e15 {
            serde_json::Value::from(self.value as i64)
        } else {
            serde_json::Value::from(self.value)
        };
        Wire {
            value,
            unit: self.unit.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SlotValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = Wire::deserialize(d)?;
        let value = match &wire.value {
            serde_json::Value::Number(n) => n.as_f64(),
            serde_json::Value::String(s) => s.trim().parse().ok(),
            _ => None,
        }
        .ok_or_else(|| serde::de::Error::custom(format!("non-numeric Value {}", wire.value)))?;
        Ok(SlotValue::new(value, wire.unit.as_deref()))
    }
}

/// Ordered parameter fills, keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotMap(IndexMap<String, SlotValue>);

impl SlotMap {
    pub fn get(&self, name: &str) -> Option<&SlotValue> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: SlotValue) {
        self.0.insert(name.into(), value);
    }

    pub fn remove(&mut self, name: &str) -> Option<SlotValue> {
        self.0.shift_remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SlotValue)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Pretty JSON in the parameter-list format used by the prompts.
    pub fn to_prompt_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("slot map serializes")
    }
}

impl<K: Into<String>> FromIterator<(K, SlotValue)> for SlotMap {
    fn from_iter<I: IntoIterator<Item = (K, SlotValue)>>(iter: I) -> Self {
        SlotMap(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}
