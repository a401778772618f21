//! Exact Φ (largest admissible subset), Q (number of admissible subsets) and
//! the partition function Z on finite sets, and the local increments of rooted
//! components.
//!
//! All three quantities share one search. A search state is a pair of disjoint
//! vertex sets `(forced, open)`: the value of the state ranges over admissible
//! sets `B` with `forced ⊆ B ⊆ forced ∪ open`. Each state is
//!
//! 1. pruned: an open vertex that cannot join `forced` is dropped for good,
//!    which is sound because admissibility is downward closed;
//! 2. split into the connected components of the divisor graph on
//!    `forced ∪ open`, whose values combine independently (sum for Φ, product
//!    for Q and Z) since admissibility decomposes over components;
//! 3. per component, branched on the open vertex of largest degree (ties to the
//!    smaller value), with results memoized under the gcd-normalized vertex
//!    values, which is valid because admissibility is invariant under dilation.
//!
//! For Φ the exclude branch is skipped once the include branch already matches
//! the number of remaining open vertices, and a greedy incumbent (largest values
//! first) settles components that are one vertex short of fully admissible.

use std::sync::atomic::{AtomicU64, Ordering};

use dashmap::DashMap;
use fixedbitset::FixedBitSet;
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::numtheory::{canonical_key, CanonicalKey, DivisorGraph, RootedComponent};
use crate::patterns::AdmissibleFamily;

/// Which local statistic a series evaluation accumulates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Φ increments, bracketing the extremal density.
    Density,
    /// log Q increments, bracketing the log of the counting rate.
    Counting,
    /// log Z(·, z) increments for activity `z`, bracketing the pressure at log z.
    Partition(Activity),
}

/// A positive activity `z`, kept exactly as the decimal it was written as.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Activity {
    text: String,
    value: BigRational,
}

impl Activity {
    /// Parses a positive decimal such as `2`, `0.75` or `1.5e-2` into an exact rational.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("activity must be a positive decimal, got {text:?}"));
        let (mantissa, exponent) = match text.split_once(['e', 'E']) {
            Some((m, e)) => (m, e.parse::<i32>().map_err(|_| bad())?),
            None => (text, 0),
        };
        let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        if int_part.is_empty() && frac_part.is_empty()
            || !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let digits: BigInt = format!("{int_part}{frac_part}").parse().map_err(|_| bad())?;
        let scale = exponent - frac_part.len() as i32;
        let ten = BigInt::from(10u32);
        let value = if scale >= 0 {
            BigRational::from_integer(digits * num_traits::pow(ten, scale as usize))
        } else {
            BigRational::new(digits, num_traits::pow(ten, (-scale) as usize))
        };
        if !value.is_positive() {
            return Err(bad());
        }
        Ok(Self {
            text: text.to_string(),
            value,
        })
    }

    pub fn value(&self) -> &BigRational {
        &self.value
    }

    pub fn as_f64(&self) -> f64 {
        self.value.to_f64().unwrap_or(f64::INFINITY)
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

impl Mode {
    /// Upper bound M on the local increment: 1, log 2, log(1+z).
    pub fn increment_bound(&self) -> f64 {
        match self {
            Mode::Density => 1.0,
            Mode::Counting => std::f64::consts::LN_2,
            Mode::Partition(z) => z.as_f64().ln_1p(),
        }
    }

    /// Label used in cache files and reports.
    pub fn label(&self) -> String {
        match self {
            Mode::Density => "density".to_string(),
            Mode::Counting => "counting".to_string(),
            Mode::Partition(z) => format!("partition:{}", z.text()),
        }
    }

    pub fn parse_label(label: &str) -> Result<Self> {
        match label {
            "density" => Ok(Mode::Density),
            "counting" => Ok(Mode::Counting),
            other => match other.strip_prefix("partition:") {
                Some(z) => Ok(Mode::Partition(Activity::parse(z)?)),
                None => Err(Error::InvalidParameter(format!("unknown mode {label:?}"))),
            },
        }
    }
}

/// Exact values for a rooted component and for the component with its root deleted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockValues {
    Density { phi_full: u32, phi_deleted: u32 },
    Counting { q_full: BigUint, q_deleted: BigUint },
    Partition { z_full: BigRational, z_deleted: BigRational },
}

/// The cacheable unit of a series evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockRecord {
    pub key: CanonicalKey,
    pub values: BlockValues,
}

impl BlockRecord {
    /// Checks the bounds implied by downward closure:
    /// `phi_deleted <= phi_full <= phi_deleted + 1`, `q_deleted <= q_full <= 2 q_deleted`,
    /// `z_deleted <= z_full <= (1 + z) z_deleted`.
    pub fn satisfies_bounds(&self, mode: &Mode) -> bool {
        match (&self.values, mode) {
            (BlockValues::Density { phi_full, phi_deleted }, Mode::Density) => {
                phi_deleted <= phi_full && *phi_full <= phi_deleted + 1
            }
            (BlockValues::Counting { q_full, q_deleted }, Mode::Counting) => {
                !q_full.is_zero() && q_deleted <= q_full && *q_full <= q_deleted * 2u32
            }
            (BlockValues::Partition { z_full, z_deleted }, Mode::Partition(z)) => {
                let one = BigRational::one();
                *z_full >= one
                    && z_deleted <= z_full
                    && *z_full <= (one + z.value()) * z_deleted
            }
            _ => false,
        }
    }
}

/// Local increment g (density), h (counting) or log Z ratio (partition).
pub fn local_increment(rec: &BlockRecord) -> f64 {
    match &rec.values {
        BlockValues::Density { phi_full, phi_deleted } => (*phi_full as f64) - (*phi_deleted as f64),
        BlockValues::Counting { q_full, q_deleted } => {
            let excess = BigRational::new(
                BigInt::from(q_full.clone()) - BigInt::from(q_deleted.clone()),
                BigInt::from(q_deleted.clone()),
            );
            excess.to_f64().unwrap_or(f64::INFINITY).ln_1p()
        }
        BlockValues::Partition { z_full, z_deleted } => {
            let excess = (z_full - z_deleted) / z_deleted;
            excess.to_f64().unwrap_or(f64::INFINITY).ln_1p()
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    /// Maximum number of expanded (non-memoized) component nodes per solve.
    pub node_limit: u64,
    /// Memo tables stop growing beyond this many entries each.
    pub memo_capacity: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            node_limit: 1_000_000,
            memo_capacity: 4_000_000,
        }
    }
}

type Memo<T> = DashMap<Box<[u64]>, T>;

/// Exact solver bound to one admissible family. Memo tables are shared by all
/// calls (and threads) and are insert-only.
pub struct Solver {
    family: AdmissibleFamily,
    config: SolverConfig,
    best_memo: Memo<Best>,
    count_memo: Memo<BigUint>,
    poly_memo: Memo<SizePolynomial>,
    expanded: AtomicU64,
}

impl Solver {
    pub fn new(family: AdmissibleFamily) -> Self {
        Self::with_config(family, SolverConfig::default())
    }

    pub fn with_config(family: AdmissibleFamily, config: SolverConfig) -> Self {
        Self {
            family,
            config,
            best_memo: DashMap::new(),
            count_memo: DashMap::new(),
            poly_memo: DashMap::new(),
            expanded: AtomicU64::new(0),
        }
    }

    pub fn family(&self) -> &AdmissibleFamily {
        &self.family
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Total number of component nodes expanded so far, across all calls.
    pub fn expanded_nodes(&self) -> u64 {
        self.expanded.load(Ordering::Relaxed)
    }

    /// Largest admissible subset size of `set`.
    pub fn phi(&self, set: &[u64]) -> Result<u32> {
        let g = DivisorGraph::new(set.to_vec());
        self.solve::<Best>(&g, g.full_set()).map(|b| b.0)
    }

    /// Number of admissible subsets of `set` (the empty set included).
    pub fn count_admissible(&self, set: &[u64]) -> Result<BigUint> {
        let g = DivisorGraph::new(set.to_vec());
        self.solve::<BigUint>(&g, g.full_set())
    }

    /// Coefficient `k` is the number of admissible subsets of size `k`.
    pub fn size_polynomial(&self, set: &[u64]) -> Result<Vec<BigUint>> {
        let g = DivisorGraph::new(set.to_vec());
        self.solve::<SizePolynomial>(&g, g.full_set()).map(|p| p.0)
    }

    /// `Z(set, z) = sum over admissible B of z^|B|`, evaluated in floating point
    /// from the exact size polynomial.
    pub fn partition_function(&self, set: &[u64], z: f64) -> Result<f64> {
        let coeffs = self.size_polynomial(set)?;
        Ok(coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * z + c.to_f64().unwrap_or(f64::INFINITY)))
    }

    /// Exact `Z(set, z)` for rational `z`.
    pub fn partition_function_exact(&self, set: &[u64], z: &BigRational) -> Result<BigRational> {
        let coeffs = self.size_polynomial(set)?;
        Ok(evaluate_exact(&coeffs, z))
    }

    /// Exact values for `c` and `c` minus its root, as required by `mode`.
    pub fn solve_block(&self, c: &RootedComponent, mode: &Mode) -> Result<BlockRecord> {
        let key = canonical_key(c);
        // dilation invariance: solve on the normalized elements
        let g = DivisorGraph::new(key.elements.clone());
        let full = g.full_set();
        let mut deleted = full.clone();
        deleted.set(key.root_index(), false);
        let attach = |e: Error| match e {
            Error::ResourceLimit { limit, .. } => Error::ResourceLimit {
                key: key.clone(),
                limit,
            },
            other => other,
        };
        let values = match mode {
            Mode::Density => BlockValues::Density {
                phi_full: self.solve::<Best>(&g, full).map_err(attach)?.0,
                phi_deleted: self.solve::<Best>(&g, deleted).map_err(attach)?.0,
            },
            Mode::Counting => BlockValues::Counting {
                q_full: self.solve::<BigUint>(&g, full).map_err(attach)?,
                q_deleted: self.solve::<BigUint>(&g, deleted).map_err(attach)?,
            },
            Mode::Partition(z) => BlockValues::Partition {
                z_full: evaluate_exact(&self.solve::<SizePolynomial>(&g, full).map_err(attach)?.0, z.value()),
                z_deleted: evaluate_exact(
                    &self.solve::<SizePolynomial>(&g, deleted).map_err(attach)?.0,
                    z.value(),
                ),
            },
        };
        let record = BlockRecord { key, values };
        debug_assert!(record.satisfies_bounds(mode), "increment bounds violated: {record:?}");
        Ok(record)
    }

    fn solve<T: Tally>(&self, g: &DivisorGraph, open: FixedBitSet) -> Result<T> {
        let mut run = Run {
            solver: self,
            g,
            expanded: 0,
        };
        let forced = g.empty_set();
        let result = run.state(&forced, open, true);
        self.expanded.fetch_add(run.expanded, Ordering::Relaxed);
        result.map_err(|limit| {
            let elements = g.values().to_vec();
            let root = elements.first().copied().unwrap_or(1);
            Error::ResourceLimit {
                key: canonical_key(&RootedComponent::new(elements, root).unwrap_or_else(|| {
                    RootedComponent::new(vec![1], 1).expect("singleton component")
                })),
                limit,
            }
        })
    }
}

fn evaluate_exact(coeffs: &[BigUint], z: &BigRational) -> BigRational {
    coeffs.iter().rev().fold(BigRational::zero(), |acc, c| {
        acc * z + BigRational::from_integer(BigInt::from(c.clone()))
    })
}

/// Quantity accumulated by the search: a commutative semiring where `plus`
/// merges the two branches and `times` combines independent components.
trait Tally: Clone + Send + Sync + 'static {
    fn unit() -> Self;
    fn times(&self, other: &Self) -> Self;
    fn plus(self, other: Self) -> Self;
    /// Accounts for one more chosen vertex.
    fn grow(self) -> Self;
    fn memo(solver: &Solver) -> &Memo<Self>;

    /// A value for the component that makes branching unnecessary.
    fn shortcut(_run: &Run<'_>, _forced: &FixedBitSet, _open: &FixedBitSet, _open_count: usize) -> Option<Self> {
        None
    }

    /// Whether this include-branch value can't be beaten by the exclude branch
    /// `(forced, rest)`.
    fn covers(&self, _run: &Run<'_>, _forced: &FixedBitSet, _rest: &FixedBitSet) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Best(u32);

impl Tally for Best {
    fn unit() -> Self {
        Best(0)
    }

    fn times(&self, other: &Self) -> Self {
        Best(self.0 + other.0)
    }

    fn plus(self, other: Self) -> Self {
        Best(self.0.max(other.0))
    }

    fn grow(self) -> Self {
        Best(self.0 + 1)
    }

    fn memo(solver: &Solver) -> &Memo<Self> {
        &solver.best_memo
    }

    // a greedy set that meets the packing bound is optimal
    fn shortcut(run: &Run<'_>, forced: &FixedBitSet, open: &FixedBitSet, open_count: usize) -> Option<Self> {
        let taken = run.greedy(forced, open);
        (taken == open_count || taken >= run.packing_bound(forced, open)).then_some(Best(taken as u32))
    }

    fn covers(&self, run: &Run<'_>, forced: &FixedBitSet, rest: &FixedBitSet) -> bool {
        let here = self.0 as usize;
        here >= rest.count_ones(..) || here >= run.packing_bound(forced, rest)
    }
}

impl Tally for BigUint {
    fn unit() -> Self {
        BigUint::one()
    }

    fn times(&self, other: &Self) -> Self {
        self * other
    }

    fn plus(self, other: Self) -> Self {
        self + other
    }

    fn grow(self) -> Self {
        self
    }

    fn memo(solver: &Solver) -> &Memo<Self> {
        &solver.count_memo
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct SizePolynomial(Vec<BigUint>);

impl Tally for SizePolynomial {
    fn unit() -> Self {
        SizePolynomial(vec![BigUint::one()])
    }

    fn times(&self, other: &Self) -> Self {
        let mut out = vec![BigUint::zero(); self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        SizePolynomial(out)
    }

    fn plus(self, other: Self) -> Self {
        let (mut long, short) = if self.0.len() >= other.0.len() {
            (self.0, other.0)
        } else {
            (other.0, self.0)
        };
        for (a, b) in long.iter_mut().zip(short) {
            *a += b;
        }
        SizePolynomial(long)
    }

    fn grow(mut self) -> Self {
        self.0.insert(0, BigUint::zero());
        self
    }

    fn memo(solver: &Solver) -> &Memo<Self> {
        &solver.poly_memo
    }
}

struct Run<'a> {
    solver: &'a Solver,
    g: &'a DivisorGraph,
    expanded: u64,
}

impl Run<'_> {
    /// Value of the state; `Err(limit)` when the node budget runs out.
    fn state<T: Tally>(&mut self, forced: &FixedBitSet, mut open: FixedBitSet, prune: bool) -> Result<T, u64> {
        let family = &self.solver.family;
        if prune {
            let blocked: Vec<usize> = open.ones().filter(|&u| !family.admits_with(self.g, forced, u)).collect();
            for u in blocked {
                open.set(u, false);
            }
        }
        if open.is_clear() {
            return Ok(T::unit());
        }
        let mut live = forced.clone();
        live.union_with(&open);
        let mut acc = T::unit();
        for comp in self.g.components_within(&live) {
            let mut comp_open = open.clone();
            comp_open.intersect_with(&comp);
            if comp_open.is_clear() {
                continue;
            }
            let mut comp_forced = forced.clone();
            comp_forced.intersect_with(&comp);
            let value = self.component::<T>(&comp_forced, comp_open, &comp)?;
            acc = acc.times(&value);
        }
        Ok(acc)
    }

    fn component<T: Tally>(&mut self, forced: &FixedBitSet, open: FixedBitSet, live: &FixedBitSet) -> Result<T, u64> {
        let key = self.memo_key(forced, live);
        if let Some(v) = T::memo(self.solver).get(&key) {
            return Ok(v.clone());
        }
        self.expanded += 1;
        if self.expanded > self.solver.config.node_limit {
            return Err(self.solver.config.node_limit);
        }
        let open_count = open.count_ones(..);

        let value = match T::shortcut(self, forced, &open, open_count) {
            Some(v) => v,
            None => {
                let pivot = open
                    .ones()
                    .max_by_key(|&v| (self.g.neighbours(v).intersection(live).count(), std::cmp::Reverse(v)))
                    .expect("open set is nonempty");
                let mut rest = open;
                rest.set(pivot, false);
                let mut with_pivot = forced.clone();
                with_pivot.insert(pivot);
                let include = self.state::<T>(&with_pivot, rest.clone(), true)?.grow();
                if include.covers(self, forced, &rest) {
                    include
                } else {
                    let exclude = self.state::<T>(forced, rest, false)?;
                    include.plus(exclude)
                }
            }
        };

        let memo = T::memo(self.solver);
        if memo.len() < self.solver.config.memo_capacity {
            memo.entry(key).or_insert_with(|| value.clone());
        }
        Ok(value)
    }

    /// Upper bound on the number of open vertices an admissible set can add to
    /// `forced`: each forbidden structure in `forced ∪ open` costs at least one
    /// open vertex, so structures with disjoint open parts cost one each.
    fn packing_bound(&self, forced: &FixedBitSet, open: &FixedBitSet) -> usize {
        let family = &self.solver.family;
        let mut within = forced.clone();
        within.union_with(open);
        let mut lost = 0;
        for v in open.ones() {
            if !within.contains(v) {
                continue;
            }
            if let Some(structure) = family.violation_through(self.g, &within, v) {
                lost += 1;
                for u in structure {
                    if open.contains(u) {
                        within.set(u, false);
                    }
                }
            }
        }
        open.count_ones(..) - lost
    }

    /// Greedy pass over the open vertices, largest value first.
    fn greedy(&self, forced: &FixedBitSet, open: &FixedBitSet) -> usize {
        let family = &self.solver.family;
        let mut chosen = forced.clone();
        let mut taken = 0;
        let mut order: Vec<usize> = open.ones().collect();
        order.reverse();
        for v in order {
            if family.admits_with(self.g, &chosen, v) {
                chosen.insert(v);
                taken += 1;
            }
        }
        taken
    }

    fn memo_key(&self, forced: &FixedBitSet, live: &FixedBitSet) -> Box<[u64]> {
        let g = live.ones().fold(0u64, |acc, i| acc.gcd(&self.g.value(i)));
        live.ones()
            .map(|i| (self.g.value(i) / g) << 1 | u64::from(forced.contains(i)))
            .collect()
    }
}

/// Φ of `set` under `fam`.
pub fn phi(set: &[u64], fam: &AdmissibleFamily) -> Result<u32> {
    Solver::new(fam.clone()).phi(set)
}

/// Q of `set` under `fam`.
pub fn count_admissible(set: &[u64], fam: &AdmissibleFamily) -> Result<BigUint> {
    Solver::new(fam.clone()).count_admissible(set)
}

/// Z(set, z) under `fam`.
pub fn partition_function(set: &[u64], fam: &AdmissibleFamily, z: f64) -> Result<f64> {
    Solver::new(fam.clone()).partition_function(set, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numtheory::rooted_component;
    use crate::patterns::{builtin_family, is_admissible, Builtin, VERIFIED_BUILTINS};
    use proptest::prelude::*;

    fn fam(b: Builtin) -> AdmissibleFamily {
        builtin_family(b).unwrap()
    }

    /// Exhaustive scan over all subsets: (max size, count, size histogram).
    fn enumerate(set: &[u64], f: &AdmissibleFamily) -> (u32, BigUint, Vec<BigUint>) {
        let n = set.len();
        let mut best = 0;
        let mut count = BigUint::zero();
        let mut hist = vec![BigUint::zero(); n + 1];
        for mask in 0u64..1 << n {
            let sub: Vec<u64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| set[i]).collect();
            if is_admissible(&sub, f) {
                best = best.max(sub.len() as u32);
                count += 1u32;
                hist[sub.len()] += 1u32;
            }
        }
        while hist.len() > 1 && hist.last().unwrap().is_zero() {
            hist.pop();
        }
        (best, count, hist)
    }

    #[test]
    fn phi_examples() {
        let two = fam(Builtin::TwoFork);
        assert_eq!(phi(&[1, 2, 3], &two).unwrap(), 2);
        assert_eq!(phi(&[1, 2, 3, 4, 5, 6], &two).unwrap(), 4);
        assert_eq!(phi(&[], &two).unwrap(), 0);
        assert_eq!(phi(&[], &fam(Builtin::Forest)).unwrap(), 0);
    }

    #[test]
    fn count_examples() {
        let two = fam(Builtin::TwoFork);
        assert_eq!(count_admissible(&[1, 2], &two).unwrap(), BigUint::from(4u32));
        assert_eq!(count_admissible(&[1, 2, 3], &two).unwrap(), BigUint::from(7u32));
        assert_eq!(count_admissible(&[1, 2, 3], &fam(Builtin::Chain(2))).unwrap(), BigUint::from(5u32));
        assert_eq!(count_admissible(&[], &two).unwrap(), BigUint::one());
    }

    #[test]
    fn partition_examples() {
        let two = fam(Builtin::TwoFork);
        assert_eq!(partition_function(&[], &two, 3.5).unwrap(), 1.0);
        assert_eq!(partition_function(&[1, 2], &two, 2.0).unwrap(), 9.0);
        assert_eq!(partition_function(&[1, 2, 3], &two, 1.0).unwrap(), 7.0);
        let s = Solver::new(two);
        let half = BigRational::new(BigInt::from(1), BigInt::from(2));
        // 1 + 3/2 + 3/4 = 13/4 (the full set is excluded)
        assert_eq!(
            s.partition_function_exact(&[1, 2, 3], &half).unwrap(),
            BigRational::new(BigInt::from(13), BigInt::from(4))
        );
    }

    #[test]
    fn solve_block_examples() {
        let two = Solver::new(fam(Builtin::TwoFork));
        let rec = two.solve_block(&rooted_component(2, 5), &Mode::Density).unwrap();
        assert_eq!(rec.values, BlockValues::Density { phi_full: 2, phi_deleted: 1 });
        assert_eq!(local_increment(&rec), 1.0);

        let rec = two.solve_block(&rooted_component(1, 3), &Mode::Density).unwrap();
        assert_eq!(rec.values, BlockValues::Density { phi_full: 2, phi_deleted: 2 });
        assert_eq!(local_increment(&rec), 0.0);

        let rec = two.solve_block(&rooted_component(1, 1), &Mode::Counting).unwrap();
        assert_eq!(
            rec.values,
            BlockValues::Counting { q_full: 2u32.into(), q_deleted: 1u32.into() }
        );
        assert_eq!(local_increment(&rec), std::f64::consts::LN_2);

        let rec = two.solve_block(&rooted_component(1, 3), &Mode::Counting).unwrap();
        assert_eq!(
            rec.values,
            BlockValues::Counting { q_full: 7u32.into(), q_deleted: 4u32.into() }
        );
        assert!((local_increment(&rec) - (7.0f64 / 4.0).ln()).abs() < 1e-15);

        let z = Mode::Partition(Activity::parse("2").unwrap());
        let rec = two.solve_block(&rooted_component(1, 1), &z).unwrap();
        assert!((local_increment(&rec) - 3.0f64.ln()).abs() < 1e-15);
        assert!(rec.satisfies_bounds(&z));
    }

    #[test]
    fn activity_parsing() {
        let r = |n: i64, d: i64| BigRational::new(BigInt::from(n), BigInt::from(d));
        assert_eq!(Activity::parse("2").unwrap().value(), &r(2, 1));
        assert_eq!(Activity::parse("0.75").unwrap().value(), &r(3, 4));
        assert_eq!(Activity::parse("1.5e-2").unwrap().value(), &r(3, 200));
        assert_eq!(Activity::parse("3E2").unwrap().value(), &r(300, 1));
        assert!(Activity::parse("0").is_err());
        assert!(Activity::parse("-1").is_err());
        assert!(Activity::parse("abc").is_err());
        assert!(Activity::parse(".").is_err());
        assert_eq!(Mode::parse_label("partition:0.5").unwrap().label(), "partition:0.5");
    }

    #[test]
    fn node_limit_surfaces_as_resource_error() {
        let s = Solver::with_config(
            fam(Builtin::TwoFork),
            SolverConfig { node_limit: 2, memo_capacity: 100 },
        );
        let c = rooted_component(1, 30);
        match s.solve_block(&c, &Mode::Counting) {
            Err(Error::ResourceLimit { key, limit }) => {
                assert_eq!(limit, 2);
                assert_eq!(key, canonical_key(&c));
            }
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn agrees_with_enumeration_on_initial_segments() {
        for b in VERIFIED_BUILTINS {
            let f = fam(b);
            let s = Solver::new(f.clone());
            for n in 0..=14u64 {
                let set: Vec<u64> = (1..=n).collect();
                let (best, count, hist) = enumerate(&set, &f);
                assert_eq!(s.phi(&set).unwrap(), best, "{b} n={n}");
                assert_eq!(s.count_admissible(&set).unwrap(), count, "{b} n={n}");
                assert_eq!(s.size_polynomial(&set).unwrap(), hist, "{b} n={n}");
            }
        }
    }

    fn any_builtin() -> impl Strategy<Value = Builtin> {
        prop::sample::select(VERIFIED_BUILTINS.to_vec())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn agrees_with_enumeration_on_random_sets(
            b in any_builtin(),
            set in prop::collection::btree_set(1u64..=40, 0..13),
        ) {
            let f = fam(b);
            let set: Vec<u64> = set.into_iter().collect();
            let (best, count, _) = enumerate(&set, &f);
            prop_assert_eq!(phi(&set, &f).unwrap(), best);
            prop_assert_eq!(count_admissible(&set, &f).unwrap(), count);
        }

        #[test]
        fn additive_and_multiplicative_over_components(
            b in any_builtin(),
            left in prop::collection::btree_set(1u64..=40, 0..9),
            right in prop::collection::btree_set(1u64..=40, 0..9),
        ) {
            let f = fam(b);
            let left: Vec<u64> = left.into_iter().collect();
            let right: Vec<u64> = right
                .into_iter()
                .filter(|&y| left.iter().all(|&x| x % y != 0 && y % x != 0))
                .collect();
            let union: Vec<u64> = left.iter().chain(&right).copied().collect();
            prop_assert_eq!(phi(&union, &f).unwrap(), phi(&left, &f).unwrap() + phi(&right, &f).unwrap());
            prop_assert_eq!(
                count_admissible(&union, &f).unwrap(),
                count_admissible(&left, &f).unwrap() * count_admissible(&right, &f).unwrap()
            );
        }

        #[test]
        fn increments_are_dilation_invariant_and_bounded(
            b in any_builtin(),
            d in 1u64..=20,
            extra in 0u64..=25,
            m in 1u64..=5,
        ) {
            let s = Solver::new(fam(b));
            let c = rooted_component(d, d + extra);
            let scaled = c.dilate(m);
            for mode in [Mode::Density, Mode::Counting] {
                let a = s.solve_block(&c, &mode).unwrap();
                let z = s.solve_block(&scaled, &mode).unwrap();
                prop_assert!(a.satisfies_bounds(&mode));
                prop_assert_eq!(local_increment(&a), local_increment(&z));
                let g = local_increment(&a);
                prop_assert!((0.0..=mode.increment_bound()).contains(&g));
            }
        }

        #[test]
        fn partition_at_one_is_count(
            b in any_builtin(),
            set in prop::collection::btree_set(1u64..=50, 0..16),
        ) {
            let s = Solver::new(fam(b));
            let set: Vec<u64> = set.into_iter().collect();
            let exact = s.partition_function_exact(&set, &BigRational::one()).unwrap();
            let count = s.count_admissible(&set).unwrap();
            prop_assert_eq!(exact, BigRational::from_integer(BigInt::from(count)));
        }
    }
}
