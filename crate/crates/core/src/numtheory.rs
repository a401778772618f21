//! Number-theoretic plumbing: smooth numbers, Euler factors, divisor graphs
//! on intervals and finite sets, rooted components and their scaling-invariant
//! keys.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;

use fixedbitset::FixedBitSet;
use num_integer::Integer;
use serde::{Deserialize, Serialize};

/// Largest prime factor of `d`, with the convention that it is 1 for `d = 1`.
pub fn largest_prime_factor(d: u64) -> u64 {
    assert!(d >= 1, "largest_prime_factor of zero");
    let mut n = d;
    let mut largest = 1;
    let mut p = 2u64;
    while p * p <= n {
        while n % p == 0 {
            largest = p;
            n /= p;
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        largest = n;
    }
    largest
}

/// Primes `p <= n` by the sieve of Eratosthenes.
pub fn primes_up_to(n: u64) -> Vec<u64> {
    if n < 2 {
        return Vec::new();
    }
    let n = n as usize;
    let mut composite = vec![false; n + 1];
    let mut primes = Vec::new();
    for p in 2..=n {
        if composite[p] {
            continue;
        }
        primes.push(p as u64);
        let mut m = p * p;
        while m <= n {
            composite[m] = true;
            m += p;
        }
    }
    primes
}

/// Ascending stream of the integers `d <= limit` whose prime factors are all
/// at most `bound`.
///
/// Each value is generated exactly once: a value is only ever extended by
/// primes at least as large as its own largest prime factor.
pub struct SmoothNumbers {
    primes: Vec<u64>,
    limit: u64,
    // (value, index of the largest prime allowed to be appended)
    heap: BinaryHeap<Reverse<(u64, usize)>>,
}

impl Iterator for SmoothNumbers {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        let Reverse((value, first)) = self.heap.pop()?;
        for (j, &p) in self.primes.iter().enumerate().skip(first) {
            match value.checked_mul(p) {
                Some(next) if next <= self.limit => self.heap.push(Reverse((next, j))),
                _ => break,
            }
        }
        Some(value)
    }
}

pub fn smooth_numbers(bound: u64, limit: u64) -> SmoothNumbers {
    let mut heap = BinaryHeap::new();
    if limit >= 1 {
        heap.push(Reverse((1, 0)));
    }
    SmoothNumbers {
        primes: primes_up_to(bound),
        limit,
        heap,
    }
}

/// Table of the Euler factors `prod_{p <= i} (p - 1) / p` for `i = 0..=max_i`.
#[derive(Clone, Debug)]
pub struct EulerFactors {
    factors: Vec<f64>,
    // number of primes <= i, used for the rounding-error budget
    prime_counts: Vec<u32>,
}

impl EulerFactors {
    pub fn new(max_i: u64) -> Self {
        let primes = primes_up_to(max_i);
        let mut factors = Vec::with_capacity(max_i as usize + 1);
        let mut prime_counts = Vec::with_capacity(max_i as usize + 1);
        let mut acc = 1.0f64;
        let mut count = 0u32;
        let mut next = primes.iter().peekable();
        for i in 0..=max_i {
            if next.peek() == Some(&&i) {
                next.next();
                acc *= (i - 1) as f64 / i as f64;
                count += 1;
            }
            factors.push(acc);
            prime_counts.push(count);
        }
        Self {
            factors,
            prime_counts,
        }
    }

    pub fn get(&self, i: u64) -> f64 {
        self.factors[i as usize]
    }

    pub fn prime_count(&self, i: u64) -> u32 {
        self.prime_counts[i as usize]
    }
}

/// Divisor graph on the integer interval `[lo, hi]`, edges oriented from divisor
/// to multiple. Built by sieving multiples.
#[derive(Clone, Debug)]
pub struct IntervalGraph {
    lo: u64,
    hi: u64,
    multiples: Vec<Vec<u64>>,
    divisors: Vec<Vec<u64>>,
}

impl IntervalGraph {
    pub fn new(lo: u64, hi: u64) -> Self {
        assert!(1 <= lo && lo <= hi, "IntervalGraph needs 1 <= lo <= hi");
        let len = (hi - lo + 1) as usize;
        let mut multiples = vec![Vec::new(); len];
        let mut divisors = vec![Vec::new(); len];
        for u in lo..=hi {
            let mut v = 2 * u;
            while v <= hi {
                multiples[(u - lo) as usize].push(v);
                divisors[(v - lo) as usize].push(u);
                v += u;
            }
        }
        Self {
            lo,
            hi,
            multiples,
            divisors,
        }
    }

    pub fn lo(&self) -> u64 {
        self.lo
    }

    pub fn hi(&self) -> u64 {
        self.hi
    }

    /// Out-neighbours (proper multiples inside the interval).
    pub fn multiples_of(&self, v: u64) -> &[u64] {
        &self.multiples[(v - self.lo) as usize]
    }

    /// In-neighbours (proper divisors inside the interval).
    pub fn divisors_of(&self, v: u64) -> &[u64] {
        &self.divisors[(v - self.lo) as usize]
    }

    /// All oriented edges `(divisor, multiple)`.
    pub fn edges(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        (self.lo..=self.hi).flat_map(move |u| self.multiples_of(u).iter().map(move |&v| (u, v)))
    }

    /// Sorted connected component containing `v`.
    pub fn component_of(&self, v: u64) -> Vec<u64> {
        let mut seen = vec![false; (self.hi - self.lo + 1) as usize];
        let mut out = Vec::new();
        let mut queue = VecDeque::from([v]);
        seen[(v - self.lo) as usize] = true;
        while let Some(x) = queue.pop_front() {
            out.push(x);
            for &y in self.multiples_of(x).iter().chain(self.divisors_of(x)) {
                let slot = &mut seen[(y - self.lo) as usize];
                if !*slot {
                    *slot = true;
                    queue.push_back(y);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Connected components, ordered by their smallest element.
    pub fn components(&self) -> Vec<Vec<u64>> {
        let mut covered = vec![false; (self.hi - self.lo + 1) as usize];
        let mut comps = Vec::new();
        for v in self.lo..=self.hi {
            if covered[(v - self.lo) as usize] {
                continue;
            }
            let comp = self.component_of(v);
            for &x in &comp {
                covered[(x - self.lo) as usize] = true;
            }
            comps.push(comp);
        }
        comps
    }
}

/// A connected set of integers with one distinguished element.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RootedComponent {
    elements: Vec<u64>,
    root_index: usize,
}

impl RootedComponent {
    /// `elements` must be strictly increasing and contain `root`.
    pub fn new(elements: Vec<u64>, root: u64) -> Option<Self> {
        if elements.is_empty() || elements.windows(2).any(|w| w[0] >= w[1]) || elements[0] == 0 {
            return None;
        }
        let root_index = elements.binary_search(&root).ok()?;
        Some(Self {
            elements,
            root_index,
        })
    }

    pub fn elements(&self) -> &[u64] {
        &self.elements
    }

    pub fn root(&self) -> u64 {
        self.elements[self.root_index]
    }

    pub fn root_index(&self) -> usize {
        self.root_index
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn is_connected(&self) -> bool {
        DivisorGraph::new(self.elements.clone()).is_connected()
    }

    /// The same component multiplied through by `m`.
    pub fn dilate(&self, m: u64) -> Self {
        Self {
            elements: self.elements.iter().map(|&x| x * m).collect(),
            root_index: self.root_index,
        }
    }
}

/// Connected component of `d` in the divisor graph on `{d, ..., t}`, rooted at `d`.
///
/// Neighbours are generated on the fly (`k * x` and `x / k`) so the cost does not
/// depend on the width of the interval, only on the component and on `t / d`.
pub fn rooted_component(d: u64, t: u64) -> RootedComponent {
    assert!(1 <= d && d <= t, "rooted_component needs 1 <= d <= t");
    let mut seen = std::collections::HashSet::new();
    let mut queue = VecDeque::from([d]);
    seen.insert(d);
    while let Some(x) = queue.pop_front() {
        let mut y = x + x;
        while y <= t {
            if seen.insert(y) {
                queue.push_back(y);
            }
            y += x;
        }
        let max_k = x / d;
        for k in 2..=max_k {
            if x % k == 0 {
                let y = x / k;
                if seen.insert(y) {
                    queue.push_back(y);
                }
            }
        }
    }
    let mut elements: Vec<u64> = seen.into_iter().collect();
    elements.sort_unstable();
    RootedComponent {
        elements,
        root_index: 0,
    }
}

/// Normal form of a rooted component under multiplication by positive rationals:
/// every element (and the root) divided by the gcd of the elements.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanonicalKey {
    pub elements: Vec<u64>,
    pub root: u64,
}

impl CanonicalKey {
    pub fn root_index(&self) -> usize {
        self.elements
            .binary_search(&self.root)
            .expect("canonical key root is an element")
    }

    pub fn to_component(&self) -> RootedComponent {
        RootedComponent {
            elements: self.elements.clone(),
            root_index: self.root_index(),
        }
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, x) in self.elements.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, "}} root {}", self.root)
    }
}

pub fn canonical_key(c: &RootedComponent) -> CanonicalKey {
    let g = c.elements.iter().fold(0u64, |acc, &x| acc.gcd(&x));
    CanonicalKey {
        elements: c.elements.iter().map(|&x| x / g).collect(),
        root: c.root() / g,
    }
}

/// Divisor graph of an arbitrary finite set, indexed by position in the sorted
/// value list. Neighbourhoods are bitsets so that the pattern matcher and the
/// solver can intersect them cheaply.
#[derive(Clone, Debug)]
pub struct DivisorGraph {
    values: Vec<u64>,
    multiples: Vec<FixedBitSet>,
    divisors: Vec<FixedBitSet>,
    neighbours: Vec<FixedBitSet>,
}

impl DivisorGraph {
    /// Builds the graph; the input is sorted and deduplicated.
    pub fn new(mut values: Vec<u64>) -> Self {
        values.sort_unstable();
        values.dedup();
        assert!(values.first().map_or(true, |&v| v > 0), "divisor graph of zero");
        let n = values.len();
        let mut multiples = vec![FixedBitSet::with_capacity(n); n];
        let mut divisors = vec![FixedBitSet::with_capacity(n); n];
        for i in 0..n {
            for j in i + 1..n {
                if values[j] % values[i] == 0 {
                    multiples[i].insert(j);
                    divisors[j].insert(i);
                }
            }
        }
        let neighbours = multiples
            .iter()
            .zip(&divisors)
            .map(|(m, d)| {
                let mut b = m.clone();
                b.union_with(d);
                b
            })
            .collect();
        Self {
            values,
            multiples,
            divisors,
            neighbours,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> u64 {
        self.values[i]
    }

    pub fn index_of(&self, v: u64) -> Option<usize> {
        self.values.binary_search(&v).ok()
    }

    pub fn multiples(&self, i: usize) -> &FixedBitSet {
        &self.multiples[i]
    }

    pub fn divisors(&self, i: usize) -> &FixedBitSet {
        &self.divisors[i]
    }

    pub fn neighbours(&self, i: usize) -> &FixedBitSet {
        &self.neighbours[i]
    }

    pub fn empty_set(&self) -> FixedBitSet {
        FixedBitSet::with_capacity(self.len())
    }

    pub fn full_set(&self) -> FixedBitSet {
        let mut b = self.empty_set();
        b.insert_range(..);
        b
    }

    /// Connected components of the subgraph induced by `live`, each as a bitset,
    /// ordered by smallest member.
    pub fn components_within(&self, live: &FixedBitSet) -> Vec<FixedBitSet> {
        let mut unvisited = live.clone();
        let mut comps = Vec::new();
        let mut stack = Vec::new();
        while let Some(start) = unvisited.minimum() {
            let mut comp = self.empty_set();
            unvisited.set(start, false);
            comp.insert(start);
            stack.push(start);
            while let Some(x) = stack.pop() {
                for y in self.neighbours[x].intersection(&unvisited).collect::<Vec<_>>() {
                    unvisited.set(y, false);
                    comp.insert(y);
                    stack.push(y);
                }
            }
            comps.push(comp);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.len() <= 1 || self.components_within(&self.full_set()).len() == 1
    }
}
