//! Name-keyed registry of interchangeable strategies.

use std::collections::BTreeMap;
use std::sync::Arc;

/// A strategy that can be looked up by name.
pub trait Named {
    fn name(&self) -> &'static str;
}

pub struct Registry<S: ?Sized + Named> {
    entries: BTreeMap<&'static str, Arc<S>>,
}

impl<S: ?Sized + Named> Default for Registry<S> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }
}

impl<S: ?Sized + Named> Registry<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a strategy, replacing any previous entry with the same name.
    pub fn register(&mut self, strategy: Arc<S>) -> Option<Arc<S>> {
        let name = strategy.name();
        let previous = self.entries.insert(name, strategy);
        if previous.is_some() {
            log::warn!("registry: replacing strategy `{name}`");
        }
        previous
    }

    pub fn get(&self, name: &str) -> Option<Arc<S>> {
        self.entries.get(name).cloned()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct A;
    struct B;
    trait Strat: Named {
        fn value(&self) -> u32;
    }
    impl Named for A {
        fn name(&self) -> &'static str {
            "a"
        }
    }
    impl Strat for A {
        fn value(&self) -> u32 {
            1
        }
    }
    impl Named for B {
        fn name(&self) -> &'static str {
            "b"
        }
    }
    impl Strat for B {
        fn value(&self) -> u32 {
            2
        }
    }

    #[test]
    fn lookup_by_name() {
        let mut reg: Registry<dyn Strat> = Registry::new();
        reg.register(Arc::new(A));
        reg.register(Arc::new(B));
        assert_eq!(reg.get("b").unwrap().value(), 2);
        assert!(reg.get("c").is_none());
        assert_eq!(reg.names(), vec!["a", "b"]);
    }

    #[test]
    fn re_registering_replaces() {
        let mut reg: Registry<dyn Strat> = Registry::new();
        assert!(reg.register(Arc::new(A)).is_none());
        assert!(reg.register(Arc::new(A)).is_some());
        assert_eq!(reg.names().len(), 1);
    }
}
