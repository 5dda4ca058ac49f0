//! Specifications: labeled output regions, deterministic finite automata and
//! bounded-horizon safety / reachability / reach-avoid objectives.
//!
//! All objectives are evaluated as "DFA over the label sequence
//! `L(y(0)), L(y(1)), …, L(y(T_d))`". The label of the initial output is the
//! first letter read, so a horizon of `T_d` steps spans `T_d + 1` letters.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::Region;

pub type Letter = usize;

/// Deterministic finite automaton with a total transition table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dfa {
    locations: Vec<String>,
    alphabet: Vec<String>,
    initial: usize,
    accepting: Vec<bool>,
    // trans[loc * |Σ| + letter]
    trans: Vec<usize>,
}

impl Dfa {
    /// Builds a DFA from named transition triples `(from, letter, to)`.
    /// Every `(location, letter)` pair must be covered exactly once.
    pub fn from_triples(
        locations: &[&str],
        alphabet: &[&str],
        initial: &str,
        accepting: &[&str],
        triples: &[(&str, &str, &str)],
    ) -> Result<Self> {
        let loc_idx = index_of(locations, "location")?;
        let let_idx = index_of(alphabet, "letter")?;
        let find = |map: &HashMap<&str, usize>, name: &str, what: &str| {
            map.get(name)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("unknown {what} '{name}'")))
        };
        let initial = find(&loc_idx, initial, "location")?;
        let mut acc = vec![false; locations.len()];
        for a in accepting {
            acc[find(&loc_idx, a, "location")?] = true;
        }
        let mut trans = vec![usize::MAX; locations.len() * alphabet.len()];
        for (from, letter, to) in triples {
            let f = find(&loc_idx, from, "location")?;
            let l = find(&let_idx, letter, "letter")?;
            let t = find(&loc_idx, to, "location")?;
            let slot = &mut trans[f * alphabet.len() + l];
            if *slot != usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "duplicate transition from '{from}' on '{letter}'"
                )));
            }
            *slot = t;
        }
        if let Some(pos) = trans.iter().position(|t| *t == usize::MAX) {
            return Err(Error::InvalidArgument(format!(
                "transition table is not total: missing ('{}', '{}')",
                locations[pos / alphabet.len()],
                alphabet[pos % alphabet.len()]
            )));
        }
        Ok(Dfa {
            locations: locations.iter().map(|s| s.to_string()).collect(),
            alphabet: alphabet.iter().map(|s| s.to_string()).collect(),
            initial,
            accepting: acc,
            trans,
        })
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn is_accepting(&self, loc: usize) -> bool {
        self.accepting[loc]
    }

    pub fn letter(&self, name: &str) -> Result<Letter> {
        self.alphabet
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown letter '{name}'")))
    }

    #[inline]
    pub fn next(&self, loc: usize, letter: Letter) -> usize {
        self.trans[loc * self.alphabet.len() + letter]
    }

    /// Runs the automaton; `accepted[k]` is true iff the run sits in an
    /// accepting location after reading `k + 1` letters.
    pub fn run(&self, word: &[Letter]) -> Result<(usize, Vec<bool>)> {
        let mut loc = self.initial;
        let mut accepted = Vec::with_capacity(word.len());
        for &l in word {
            if l >= self.alphabet.len() {
                return Err(Error::InvalidArgument(format!("letter index {l} outside alphabet")));
            }
            loc = self.next(loc, l);
            accepted.push(self.accepting[loc]);
        }
        Ok((loc, accepted))
    }

    pub fn run_named(&self, word: &[&str]) -> Result<(usize, Vec<bool>)> {
        let letters = word.iter().map(|w| self.letter(w)).collect::<Result<Vec<_>>>()?;
        self.run(&letters)
    }

    /// A location that only loops to itself.
    pub fn is_absorbing(&self, loc: usize) -> bool {
        (0..self.alphabet.len()).all(|l| self.next(loc, l) == loc)
    }

    /// Same automaton with the accepting set complemented.
    pub fn complement(&self) -> Dfa {
        let mut d = self.clone();
        d.accepting.iter_mut().for_each(|a| *a = !*a);
        d
    }
}

fn index_of<'a>(names: &[&'a str], what: &str) -> Result<HashMap<&'a str, usize>> {
    let mut map = HashMap::new();
    for (i, n) in names.iter().enumerate() {
        if map.insert(*n, i).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate {what} '{n}'")));
        }
    }
    Ok(map)
}

/// Reach-avoid automaton for `a U b`: stay on `a` until `b`; `c` is fatal.
///
/// Three locations: `q0` (waiting), `accept` (absorbing, accepting) and
/// `reject` (absorbing sink).
pub fn reach_avoid_dfa(safe: &str, target: &str, other: &str) -> Result<Dfa> {
    if safe == target || safe == other || target == other {
        return Err(Error::InvalidArgument("reach-avoid letters must be distinct".into()));
    }
    Dfa::from_triples(
        &["q0", "accept", "reject"],
        &[safe, target, other],
        "q0",
        &["accept"],
        &[
            ("q0", safe, "q0"),
            ("q0", target, "accept"),
            ("q0", other, "reject"),
            ("accept", safe, "accept"),
            ("accept", target, "accept"),
            ("accept", other, "accept"),
            ("reject", safe, "reject"),
            ("reject", target, "reject"),
            ("reject", other, "reject"),
        ],
    )
}

/// Maps outputs to letters: first matching region in declaration order,
/// default letter otherwise. Boxes are closed.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    entries: Vec<(String, Region)>,
    default: String,
}

impl LabelMap {
    /// Regions must not share interior points; shared faces are resolved by
    /// declaration order.
    pub fn new(entries: Vec<(String, Region)>, default: impl Into<String>) -> Result<Self> {
        for i in 0..entries.len() {
            for j in (i + 1)..entries.len() {
                if entries[i].1.overlaps_interior(&entries[j].1) {
                    return Err(Error::InvalidArgument(format!(
                        "label regions '{}' and '{}' overlap",
                        entries[i].0, entries[j].0
                    )));
                }
            }
        }
        Ok(Self::with_priority(entries, default))
    }

    /// Overlaps allowed; earlier entries take priority (set-difference style).
    pub fn with_priority(entries: Vec<(String, Region)>, default: impl Into<String>) -> Self {
        LabelMap {
            entries,
            default: default.into(),
        }
    }

    pub fn label(&self, y: &[f64]) -> &str {
        self.entries
            .iter()
            .find(|(_, r)| r.contains(y))
            .map(|(l, _)| l.as_str())
            .unwrap_or(&self.default)
    }

    pub fn entries(&self) -> &[(String, Region)] {
        &self.entries
    }

    pub fn default_letter(&self) -> &str {
        &self.default
    }

    /// Letter index of `y` in the DFA alphabet.
    pub fn letter_for(&self, dfa: &Dfa, y: &[f64]) -> Result<Letter> {
        dfa.letter(self.label(y))
    }

    /// Checks that every letter this map can emit is in the alphabet.
    pub fn check_alphabet(&self, dfa: &Dfa) -> Result<()> {
        dfa.letter(&self.default)?;
        for (l, _) in &self.entries {
            dfa.letter(l)?;
        }
        Ok(())
    }
}

/// How accepting locations are read over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acceptance {
    /// Satisfied as soon as an accepting location is visited (co-safe).
    Reach,
    /// Satisfied iff every visited location is accepting (safety).
    Invariant,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpecKind {
    Safety { safe: Region },
    Reachability { target: Region },
    ReachAvoid { safe: Region, target: Region },
    Dfa { dfa: Dfa, labels: LabelMap, acceptance: Acceptance },
}

/// Bounded-horizon objective over `horizon + 1` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSpec {
    pub kind: SpecKind,
    pub horizon: usize,
}

/// Automaton form of a [`HorizonSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Automaton {
    pub dfa: Dfa,
    pub labels: LabelMap,
    pub acceptance: Acceptance,
}

pub const SAFE: &str = "safe";
pub const TARGET: &str = "target";
pub const UNSAFE: &str = "unsafe";
pub const OTHER: &str = "other";

impl HorizonSpec {
    pub fn safety(safe: Region, horizon: usize) -> Self {
        HorizonSpec {
            kind: SpecKind::Safety { safe },
            horizon,
        }
    }

    pub fn reachability(target: Region, horizon: usize) -> Self {
        HorizonSpec {
            kind: SpecKind::Reachability { target },
            horizon,
        }
    }

    pub fn reach_avoid(safe: Region, target: Region, horizon: usize) -> Self {
        HorizonSpec {
            kind: SpecKind::ReachAvoid { safe, target },
            horizon,
        }
    }

    pub fn dfa(dfa: Dfa, labels: LabelMap, acceptance: Acceptance, horizon: usize) -> Result<Self> {
        labels.check_alphabet(&dfa)?;
        Ok(HorizonSpec {
            kind: SpecKind::Dfa { dfa, labels, acceptance },
            horizon,
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            SpecKind::Safety { .. } => "safety",
            SpecKind::Reachability { .. } => "reachability",
            SpecKind::ReachAvoid { .. } => "reach-avoid",
            SpecKind::Dfa { .. } => "dfa",
        }
    }

    pub fn automaton(&self) -> Result<Automaton> {
        Ok(match &self.kind {
            SpecKind::Safety { safe } => Automaton {
                dfa: Dfa::from_triples(
                    &["ok", "violated"],
                    &[SAFE, UNSAFE],
                    "ok",
                    &["ok"],
                    &[
                        ("ok", SAFE, "ok"),
                        ("ok", UNSAFE, "violated"),
                        ("violated", SAFE, "violated"),
                        ("violated", UNSAFE, "violated"),
                    ],
                )?,
                labels: LabelMap::with_priority(vec![(SAFE.into(), safe.clone())], UNSAFE),
                acceptance: Acceptance::Invariant,
            },
            SpecKind::Reachability { target } => Automaton {
                dfa: Dfa::from_triples(
                    &["q0", "reached"],
                    &[TARGET, OTHER],
                    "q0",
                    &["reached"],
                    &[
                        ("q0", TARGET, "reached"),
                        ("q0", OTHER, "q0"),
                        ("reached", TARGET, "reached"),
                        ("reached", OTHER, "reached"),
                    ],
                )?,
                labels: LabelMap::with_priority(vec![(TARGET.into(), target.clone())], OTHER),
                acceptance: Acceptance::Reach,
            },
            SpecKind::ReachAvoid { safe, target } => Automaton {
                dfa: reach_avoid_dfa(SAFE, TARGET, UNSAFE)?,
                labels: LabelMap::with_priority(
                    vec![(TARGET.into(), target.clone()), (SAFE.into(), safe.clone())],
                    UNSAFE,
                ),
                acceptance: Acceptance::Reach,
            },
            SpecKind::Dfa { dfa, labels, acceptance } => Automaton {
                dfa: dfa.clone(),
                labels: labels.clone(),
                acceptance: *acceptance,
            },
        })
    }

    /// Negated objective over the same horizon: complemented accepting set
    /// with the dual acceptance mode.
    pub fn negation(&self) -> Result<HorizonSpec> {
        let a = self.automaton()?;
        let acceptance = match a.acceptance {
            Acceptance::Reach => Acceptance::Invariant,
            Acceptance::Invariant => Acceptance::Reach,
        };
        HorizonSpec::dfa(a.dfa.complement(), a.labels, acceptance, self.horizon)
    }
}

impl Automaton {
    /// Whether a full label word (of length `horizon + 1`) satisfies the
    /// objective, evaluated directly on the run.
    pub fn accepts_word(&self, word: &[Letter]) -> Result<bool> {
        let (_, flags) = self.dfa.run(word)?;
        Ok(match self.acceptance {
            Acceptance::Reach => flags.iter().any(|f| *f),
            Acceptance::Invariant => flags.iter().all(|f| *f),
        })
    }
}
