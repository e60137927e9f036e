//! Name-keyed lookup tables for interchangeable strategies.
//!
//! Steppers, coefficient kinds and interpolants are all selected from
//! configuration by name. Each family keeps one [`Registry`] of its
//! built-in entries; callers may register more before handing the registry
//! to the code that resolves names.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub struct Registry<T> {
    kind: &'static str,
    entries: BTreeMap<String, T>,
}

impl<T> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Insert `entry` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: impl Into<String>, entry: T) -> &mut Self {
        self.entries.insert(name.into(), entry);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: self.kind,
            name: name.to_string(),
            known: self.names().collect::<Vec<_>>().join(", "),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_lists_known_entries() {
        let mut reg = Registry::new("widget");
        reg.register("b", 2).register("a", 1);
        assert_eq!(*reg.get("a").unwrap(), 1);
        let err = reg.get("c").unwrap_err().to_string();
        assert!(err.contains("unknown widget `c`"), "{err}");
        assert!(err.contains("a, b"), "{err}");
    }
}
