//! Name-keyed registry of interchangeable strategies.
//!
//! Pattern families, pattern scorers and optimization techniques are all
//! trait objects looked up by name from the CLI or a config file.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Anything that can be registered under a stable name.
pub trait Named {
    fn name(&self) -> &str;
}

pub struct Registry<T: ?Sized + Named> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `item`, replacing any previous entry with the same name.
    pub fn register(&mut self, item: Arc<T>) {
        log::debug!("registering {} `{}`", self.kind, item.name());
        self.entries.insert(item.name().to_string(), item);
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<T>> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
