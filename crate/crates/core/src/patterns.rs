//! Forbidden patterns in divisor graphs and the admissibility predicate.
//!
//! Containment is non-induced: a copy only needs the pattern's edges to be
//! present among the chosen integers, extra divisibilities are ignored. A
//! directed pattern edge `a -> b` asks for `image(a) | image(b)`, an undirected
//! one for divisibility in either direction.

use std::fmt;
use std::path::Path;

use fixedbitset::FixedBitSet;
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numtheory::DivisorGraph;

pub const MAX_PATTERN_VERTICES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatternEdge {
    pub from: usize,
    pub to: usize,
    pub directed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Relation {
    /// the new vertex must be a proper multiple of the placed one
    Multiple,
    /// the new vertex must be a proper divisor of the placed one
    Divisor,
    Either,
}

/// Matching order when one given pattern vertex is placed first.
#[derive(Clone, Debug)]
struct MatchPlan {
    order: Vec<usize>,
    // constraints[k]: (position j < k in `order`, relation of order[k] to order[j])
    constraints: Vec<Vec<(usize, Relation)>>,
}

/// A small connected graph whose edges may be oriented (divisor -> multiple)
/// or unoriented.
#[derive(Clone, Debug)]
pub struct Pattern {
    vertex_count: usize,
    edges: Vec<PatternEdge>,
    plans: Vec<MatchPlan>,
    widest: usize,
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.vertex_count == other.vertex_count && self.edges == other.edges
    }
}

impl Eq for Pattern {}

impl Pattern {
    /// Validates and builds a pattern. Edges are stored sorted.
    pub fn new(vertex_count: usize, edges: Vec<PatternEdge>) -> Result<Self> {
        Self::with_index(0, vertex_count, edges)
    }

    fn with_index(index: usize, vertex_count: usize, mut edges: Vec<PatternEdge>) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidPattern { index, reason };
        if vertex_count == 0 || vertex_count > MAX_PATTERN_VERTICES {
            return Err(invalid(format!(
                "vertex count {vertex_count} outside 1..={MAX_PATTERN_VERTICES}"
            )));
        }
        let mut seen_pairs = std::collections::HashSet::new();
        for e in &edges {
            if e.from >= vertex_count || e.to >= vertex_count {
                return Err(invalid(format!(
                    "edge ({}, {}) references a vertex outside 0..{vertex_count}",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(invalid(format!("self-loop at vertex {}", e.from)));
            }
            if !seen_pairs.insert((e.from.min(e.to), e.from.max(e.to))) {
                return Err(invalid(format!("duplicate edge between {} and {}", e.from, e.to)));
            }
        }
        edges.sort_unstable();

        let mut uf = UnionFind::<usize>::new(vertex_count);
        for e in &edges {
            uf.union(e.from, e.to);
        }
        if (1..vertex_count).any(|v| !uf.equiv(0, v)) {
            return Err(invalid(
                "pattern is disconnected; forbidden patterns must be connected, otherwise \
                 admissibility does not decompose over divisor-graph components"
                    .to_string(),
            ));
        }

        let degree = |v: usize| edges.iter().filter(|e| e.from == v || e.to == v).count();
        let plans = (0..vertex_count)
            .map(|start| {
                let mut order = vec![start];
                let mut placed = vec![false; vertex_count];
                placed[start] = true;
                let mut head = 0;
                while head < order.len() {
                    let v = order[head];
                    head += 1;
                    let mut next: Vec<usize> = edges
                        .iter()
                        .filter_map(|e| {
                            if e.from == v {
                                Some(e.to)
                            } else if e.to == v {
                                Some(e.from)
                            } else {
                                None
                            }
                        })
                        .filter(|&u| !placed[u])
                        .collect();
                    next.sort_by_key(|&u| (std::cmp::Reverse(degree(u)), u));
                    next.dedup();
                    for u in next {
                        if !placed[u] {
                            placed[u] = true;
                            order.push(u);
                        }
                    }
                }
                let position = |v: usize| order.iter().position(|&x| x == v).unwrap();
                let constraints = order
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        edges
                            .iter()
                            .filter_map(|e| {
                                let (other, rel) = if e.to == v {
                                    (e.from, if e.directed { Relation::Multiple } else { Relation::Either })
                                } else if e.from == v {
                                    (e.to, if e.directed { Relation::Divisor } else { Relation::Either })
                                } else {
                                    return None;
                                };
                                let j = position(other);
                                (j < k).then_some((j, rel))
                            })
                            .collect()
                    })
                    .collect();
                MatchPlan { order, constraints }
            })
            .collect();
        let widest = (0..vertex_count).max_by_key(|&v| (degree(v), std::cmp::Reverse(v))).unwrap_or(0);
        Ok(Self {
            vertex_count,
            edges,
            plans,
            widest,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[PatternEdge] {
        &self.edges
    }

    /// `r`-fork: one vertex dividing `r` others.
    pub fn out_star(r: usize) -> Result<Self> {
        Self::new(
            r + 1,
            (1..=r)
                .map(|j| PatternEdge {
                    from: 0,
                    to: j,
                    directed: true,
                })
                .collect(),
        )
    }

    /// `r`-in-fork: one vertex that is a multiple of `r` others.
    pub fn in_star(r: usize) -> Result<Self> {
        Self::new(
            r + 1,
            (1..=r)
                .map(|j| PatternEdge {
                    from: j,
                    to: 0,
                    directed: true,
                })
                .collect(),
        )
    }

    /// Directed path on `k` vertices.
    pub fn directed_path(k: usize) -> Result<Self> {
        Self::new(
            k,
            (0..k.saturating_sub(1))
                .map(|j| PatternEdge {
                    from: j,
                    to: j + 1,
                    directed: true,
                })
                .collect(),
        )
    }

    /// Whether `chosen` contains a copy of the pattern. With `anchor`, only copies
    /// using that vertex are searched for (`anchor` must be in `chosen`).
    /// Vertices of some copy inside `within` that uses `anchor`, if there is one.
    pub fn copy_through(&self, g: &DivisorGraph, within: &FixedBitSet, anchor: usize) -> Option<Vec<usize>> {
        if !within.contains(anchor) || within.count_ones(..) < self.vertex_count {
            return None;
        }
        let mut images = vec![usize::MAX; self.vertex_count];
        let mut used = g.empty_set();
        images[0] = anchor;
        used.insert(anchor);
        self.plans
            .iter()
            .find(|plan| self.extend(g, within, plan, 1, &mut images, &mut used))
            .map(|_| images)
    }

    pub fn embeds(&self, g: &DivisorGraph, chosen: &FixedBitSet, anchor: Option<usize>) -> bool {
        if chosen.count_ones(..) < self.vertex_count {
            return false;
        }
        let mut images = vec![usize::MAX; self.vertex_count];
        let mut used = g.empty_set();
        match anchor {
            Some(a) => self.plans.iter().any(|plan| {
                images[0] = a;
                used.insert(a);
                let found = self.extend(g, chosen, plan, 1, &mut images, &mut used);
                used.set(a, false);
                found
            }),
            None => {
                let plan = &self.plans[self.widest];
                chosen.ones().any(|c| {
                    images[0] = c;
                    used.insert(c);
                    let found = self.extend(g, chosen, plan, 1, &mut images, &mut used);
                    used.set(c, false);
                    found
                })
            }
        }
    }

    fn extend(
        &self,
        g: &DivisorGraph,
        chosen: &FixedBitSet,
        plan: &MatchPlan,
        k: usize,
        images: &mut [usize],
        used: &mut FixedBitSet,
    ) -> bool {
        if k == plan.order.len() {
            return true;
        }
        let mut candidates = chosen.clone();
        candidates.difference_with(used);
        for &(j, rel) in &plan.constraints[k] {
            let img = images[j];
            match rel {
                Relation::Multiple => candidates.intersect_with(g.multiples(img)),
                Relation::Divisor => candidates.intersect_with(g.divisors(img)),
                Relation::Either => candidates.intersect_with(g.neighbours(img)),
            }
        }
        for c in candidates.ones() {
            images[k] = c;
            used.insert(c);
            let found = self.extend(g, chosen, plan, k + 1, images, used);
            used.set(c, false);
            if found {
                return true;
            }
        }
        false
    }

    fn content_string(&self) -> String {
        let edges: Vec<String> = self
            .edges
            .iter()
            .map(|e| format!("{}{}{}", e.from, if e.directed { ">" } else { "-" }, e.to))
            .collect();
        format!("v{}[{}]", self.vertex_count, edges.join(","))
    }
}

/// A decidable, downward-closed, component-decomposable and dilation-invariant
/// family of finite integer sets: the sets avoiding every listed pattern and,
/// when `forest` is set, whose divisor graph has no cycle.
#[derive(Clone, Debug)]
pub struct AdmissibleFamily {
    name: String,
    patterns: Vec<Pattern>,
    forest: bool,
    hash: String,
}

impl PartialEq for AdmissibleFamily {
    fn eq(&self, other: &Self) -> bool {
        self.hash == other.hash
    }
}

/// Named families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    TwoFork,
    Fork(usize),
    InFork(usize),
    Chain(usize),
    Forest,
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Builtin::TwoFork => write!(f, "two-fork"),
            Builtin::Fork(r) => write!(f, "r-fork:{r}"),
            Builtin::InFork(r) => write!(f, "in-fork:{r}"),
            Builtin::Chain(k) => write!(f, "chain:{k}"),
            Builtin::Forest => write!(f, "forest"),
        }
    }
}

impl std::str::FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_arg = |arg: &str| {
            arg.parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("bad family parameter in {s:?}")))
        };
        match s.split_once(':') {
            None if s == "two-fork" => Ok(Builtin::TwoFork),
            None if s == "forest" => Ok(Builtin::Forest),
            Some(("r-fork", r)) => Ok(Builtin::Fork(parse_arg(r)?)),
            Some(("in-fork", r)) => Ok(Builtin::InFork(parse_arg(r)?)),
            Some(("chain", k)) => Ok(Builtin::Chain(parse_arg(k)?)),
            _ => Err(Error::InvalidParameter(format!("unknown family {s:?}"))),
        }
    }
}

/// Every builtin family exercised by the verification suites.
pub const VERIFIED_BUILTINS: [Builtin; 8] = [
    Builtin::TwoFork,
    Builtin::Fork(3),
    Builtin::InFork(2),
    Builtin::InFork(3),
    Builtin::Chain(2),
    Builtin::Chain(3),
    Builtin::Chain(4),
    Builtin::Forest,
];

pub fn builtin_family(which: Builtin) -> Result<AdmissibleFamily> {
    let check = |v: usize, what: &str| {
        if v < 2 {
            Err(Error::InvalidParameter(format!("{what} must be at least 2, got {v}")))
        } else {
            Ok(())
        }
    };
    let (patterns, forest) = match which {
        Builtin::TwoFork => (vec![Pattern::out_star(2)?], false),
        Builtin::Fork(r) => {
            check(r, "r")?;
            if r + 1 > MAX_PATTERN_VERTICES {
                return Err(Error::InvalidParameter(format!("r = {r} exceeds the pattern size cap")));
            }
            (vec![Pattern::out_star(r)?], false)
        }
        Builtin::InFork(r) => {
            check(r, "r")?;
            if r + 1 > MAX_PATTERN_VERTICES {
                return Err(Error::InvalidParameter(format!("r = {r} exceeds the pattern size cap")));
            }
            (vec![Pattern::in_star(r)?], false)
        }
        Builtin::Chain(k) => {
            check(k, "k")?;
            if k > MAX_PATTERN_VERTICES {
                return Err(Error::InvalidParameter(format!("k = {k} exceeds the pattern size cap")));
            }
            (vec![Pattern::directed_path(k)?], false)
        }
        Builtin::Forest => (Vec::new(), true),
    };
    Ok(AdmissibleFamily::new(which.to_string(), patterns, forest))
}

#[derive(Debug, Deserialize, Serialize)]
struct FamilyFile {
    #[serde(default)]
    patterns: Vec<PatternFile>,
    #[serde(default)]
    forest: bool,
}

#[derive(Debug, Deserialize, Serialize)]
struct PatternFile {
    vertices: usize,
    #[serde(default)]
    edges: Vec<PatternEdge>,
}

impl AdmissibleFamily {
    pub fn new(name: impl Into<String>, patterns: Vec<Pattern>, forest: bool) -> Self {
        let mut parts: Vec<String> = patterns.iter().map(Pattern::content_string).collect();
        parts.sort();
        parts.dedup();
        let content = format!("patterns=[{}];forest={}", parts.join(";"), forest);
        let digest = Sha256::digest(content.as_bytes());
        let hash = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Self {
            name: name.into(),
            patterns,
            forest,
            hash,
        }
    }

    /// Parses the JSON pattern-file format
    /// `{"patterns":[{"vertices":V,"edges":[{"from":i,"to":j,"directed":b}]}],"forest":b}`.
    pub fn from_json(name: impl Into<String>, text: &str) -> Result<Self> {
        let file: FamilyFile = serde_json::from_str(text)?;
        let patterns = file
            .patterns
            .into_iter()
            .enumerate()
            .map(|(index, p)| Pattern::with_index(index, p.vertices, p.edges))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(name, patterns, file.forest))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(format!("file:{}", path.display()), &text)
    }

    /// Parses a command-line family spec: a builtin name or `file:PATH`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.strip_prefix("file:") {
            Some(path) => Self::from_file(Path::new(path)),
            None => builtin_family(spec.parse()?),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn forest(&self) -> bool {
        self.forest
    }

    /// Stable content hash (hex) used to key cached block values.
    pub fn family_hash(&self) -> &str {
        &self.hash
    }

    /// Whether the chosen vertices of `g` form an admissible set.
    pub fn admits(&self, g: &DivisorGraph, chosen: &FixedBitSet) -> bool {
        if self.patterns.iter().any(|p| p.embeds(g, chosen, None)) {
            return false;
        }
        !self.forest || is_forest(g, chosen)
    }

    /// Whether `chosen ∪ {x}` is admissible, assuming `chosen` is. Only
    /// structures through `x` are examined.
    pub fn admits_with(&self, g: &DivisorGraph, chosen: &FixedBitSet, x: usize) -> bool {
        let mut with = chosen.clone();
        with.insert(x);
        if self.patterns.iter().any(|p| p.embeds(g, &with, Some(x))) {
            return false;
        }
        !self.forest || !closes_cycle(g, chosen, x)
    }

    /// A non-admissible subset of `within` containing `x`, if there is one: a
    /// pattern copy or, for forest families, the vertex set of a cycle.
    pub fn violation_through(&self, g: &DivisorGraph, within: &FixedBitSet, x: usize) -> Option<Vec<usize>> {
        if let Some(copy) = self.patterns.iter().find_map(|p| p.copy_through(g, within, x)) {
            return Some(copy);
        }
        if self.forest {
            return cycle_through(g, within, x);
        }
        None
    }
}

// Breadth-first search from the neighbours of x, avoiding x; the first edge
// joining two different search trees closes a cycle through x.
fn cycle_through(g: &DivisorGraph, within: &FixedBitSet, x: usize) -> Option<Vec<usize>> {
    let mut parent = vec![usize::MAX; g.len()];
    let mut tree = vec![usize::MAX; g.len()];
    let mut queue = std::collections::VecDeque::new();
    for n in g.neighbours(x).intersection(within) {
        tree[n] = n;
        parent[n] = x;
        queue.push_back(n);
    }
    let path_to_x = |mut v: usize, parent: &[usize]| {
        let mut path = Vec::new();
        while v != x {
            path.push(v);
            v = parent[v];
        }
        path
    };
    while let Some(u) = queue.pop_front() {
        for v in g.neighbours(u).intersection(within) {
            if v == x || v == parent[u] {
                continue;
            }
            if tree[v] == usize::MAX {
                tree[v] = tree[u];
                parent[v] = u;
                queue.push_back(v);
            } else if tree[v] != tree[u] {
                let mut cycle = path_to_x(u, &parent);
                cycle.extend(path_to_x(v, &parent));
                cycle.push(x);
                return Some(cycle);
            }
        }
    }
    None
}

fn is_forest(g: &DivisorGraph, chosen: &FixedBitSet) -> bool {
    let mut uf = UnionFind::<usize>::new(g.len());
    for u in chosen.ones() {
        for v in g.multiples(u).intersection(chosen) {
            if !uf.union(u, v) {
                return false;
            }
        }
    }
    true
}

// Adding x closes a cycle iff two of its chosen neighbours already share a
// component of the chosen subgraph.
fn closes_cycle(g: &DivisorGraph, chosen: &FixedBitSet, x: usize) -> bool {
    let mut visited = g.empty_set();
    let mut stack = Vec::new();
    for n in g.neighbours(x).intersection(chosen) {
        if visited.contains(n) {
            return true;
        }
        visited.insert(n);
        stack.push(n);
        while let Some(u) = stack.pop() {
            for v in g.neighbours(u).intersection(chosen) {
                if v != x && !visited.contains(v) {
                    visited.insert(v);
                    stack.push(v);
                }
            }
        }
    }
    false
}

fn whole_set(values: &[u64]) -> (DivisorGraph, FixedBitSet) {
    let g = DivisorGraph::new(values.to_vec());
    let all = g.full_set();
    (g, all)
}

/// Non-induced containment of `p` in the divisor graph of `set`.
pub fn contains_pattern(set: &[u64], p: &Pattern) -> bool {
    let (g, all) = whole_set(set);
    p.embeds(&g, &all, None)
}

pub fn is_admissible(set: &[u64], fam: &AdmissibleFamily) -> bool {
    let (g, all) = whole_set(set);
    fam.admits(&g, &all)
}

/// `is_admissible(set ∪ {x})` for an admissible `set` not containing `x`.
pub fn is_admissible_with(set: &[u64], x: u64, fam: &AdmissibleFamily) -> bool {
    let mut values = set.to_vec();
    values.push(x);
    let g = DivisorGraph::new(values);
    let xi = g.index_of(x).expect("x was inserted");
    let mut chosen = g.full_set();
    chosen.set(xi, false);
    fam.admits_with(&g, &chosen, xi)
}
