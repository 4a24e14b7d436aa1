use std::collections::HashMap;

use super::{Bindings, Term, Var, VarId};

/// Prefix of names handed out to unnamed variables: `_A1`, `_A2`, ...
pub const GENERATED_PREFIX: &str = "_A";

/// Per-thread association between variable names and cells.
///
/// Interning the same name twice yields the same cell until [`clear`] is
/// called, which is what links variables across separately received
/// messages.
///
/// [`clear`]: VarRegistry::clear
#[derive(Clone, Debug, Default)]
pub struct VarRegistry {
    by_name: HashMap<String, VarId>,
    by_id: HashMap<VarId, String>,
    counter: u64,
}

impl VarRegistry {
    pub fn new() -> VarRegistry {
        VarRegistry::default()
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn clear(&mut self) {
        self.by_name.clear();
        self.by_id.clear();
    }

    pub fn get(&self, name: &str) -> Option<VarId> {
        self.by_name.get(name).copied()
    }

    pub fn name_of(&self, id: VarId) -> Option<&str> {
        self.by_id.get(&id).map(String::as_str)
    }

    /// The thread-local variable for `name`, created on first sight.
    pub fn intern(&mut self, name: &str) -> Var {
        if let Some(&id) = self.by_name.get(name) {
            return Var::with_id(id, Some(name));
        }
        let id = VarId::fresh();
        self.insert(name.to_string(), id);
        Var::with_id(id, Some(name))
    }

    fn insert(&mut self, name: String, id: VarId) {
        self.by_id.entry(id).or_insert_with(|| name.clone());
        self.by_name.insert(name, id);
    }

    /// The name already given to `id`, or a newly generated one that does
    /// not collide with any registered name.
    fn name_for(&mut self, id: VarId) -> String {
        if let Some(name) = self.by_id.get(&id) {
            return name.clone();
        }
        let name = loop {
            self.counter += 1;
            let candidate = format!("{GENERATED_PREFIX}{}", self.counter);
            if !self.by_name.contains_key(&candidate) {
                break candidate;
            }
        };
        self.insert(name.clone(), id);
        name
    }
}

/// Bindings and name registry owned by one thread.
#[derive(Clone, Debug, Default)]
pub struct ThreadVars {
    pub bindings: Bindings,
    pub registry: VarRegistry,
}

impl ThreadVars {
    pub fn new() -> ThreadVars {
        ThreadVars::default()
    }

    pub fn resolve(&self, t: &Term) -> Term {
        self.bindings.resolve(t)
    }

    pub fn unify(&mut self, a: &Term, b: &Term) -> bool {
        self.bindings.unify(a, b)
    }
}

/// Gives every unnamed variable of `t` a name registered in `reg`. The same
/// cell always receives the same name, in this and later messages.
pub fn name_unnamed(t: &Term, reg: &mut VarRegistry) -> Term {
    t.map_vars(&mut |v| match v.name() {
        Some(_) => Term::Var(v.clone()),
        None => {
            let name = reg.name_for(v.id());
            Term::Var(Var::with_id(v.id(), Some(&name)))
        }
    })
}

/// Replaces each named variable with the cell `reg` associates with that
/// name. Unnamed variables become fresh cells, shared within `t`.
pub fn intern_named(t: &Term, reg: &mut VarRegistry) -> Term {
    let mut unnamed = HashMap::new();
    t.map_vars(&mut |v| match v.name() {
        Some(name) => Term::Var(reg.intern(name)),
        None => Term::Var(unnamed.entry(v.id()).or_insert_with(Var::fresh).clone()),
    })
}

/// Copies `t` with every variable replaced by a brand-new cell. Names are
/// kept; sharing within `t` is preserved.
pub fn fresh_copy(t: &Term) -> Term {
    let mut map: HashMap<VarId, Var> = HashMap::new();
    t.map_vars(&mut |v| Term::Var(map.entry(v.id()).or_insert_with(|| Var::with_id(VarId::fresh(), v.name())).clone()))
}
