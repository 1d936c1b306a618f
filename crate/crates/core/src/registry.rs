//! Name → constructor tables for the runtime-selectable strategies.

use crate::error::{CoreError, Result};

pub struct Registry<C> {
    kind: &'static str,
    entries: Vec<(&'static str, C)>,
}

impl<C: Copy> Registry<C> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds or replaces the constructor for `name`.
    pub fn register(&mut self, name: &'static str, ctor: C) -> &mut Self {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = ctor,
            None => self.entries.push((name, ctor)),
        }
        self
    }

    pub fn get(&self, name: &str) -> Result<C> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, c)| *c)
            .ok_or_else(|| CoreError::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().map(str::to_string).collect(),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|(n, _)| *n)
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}
