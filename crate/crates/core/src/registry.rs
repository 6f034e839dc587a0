//! Name-keyed registries of interchangeable strategies.
//!
//! Solvers, exploration schemes, baselines and environment builders are each
//! kept behind a trait object and looked up by the name a user passes on the
//! command line or in a sweep config.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown {kind} `{name}` (available: {available})")]
pub struct UnknownEntry {
    pub kind: &'static str,
    pub name: String,
    pub available: String,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, Box<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds an entry. Panics on a duplicate name; registries are built once
    /// from static tables.
    pub fn register(&mut self, name: &'static str, item: Box<T>) -> &mut Self {
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate {} `{name}`",
            self.kind
        );
        self.entries.push((name, item));
        self
    }

    pub fn get(&self, name: &str) -> Result<&T, UnknownEntry> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, item)| item.as_ref())
            .ok_or_else(|| UnknownEntry {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &T)> {
        self.entries.iter().map(|(n, item)| (*n, item.as_ref()))
    }
}
