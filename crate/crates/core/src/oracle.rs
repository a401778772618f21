//! Brute-force ground truth on `{1, ..., n}` for small `n`, and the checks that
//! tie the local increments back to it.
//!
//! Admissible subsets are enumerated by extending sorted prefixes one element
//! at a time. Every test is a direct search over integer assignments and
//! divisibility; nothing here goes through the solver's pruned search, except
//! [`cross_f`], which is only semi-independent and says so.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use petgraph::unionfind::UnionFind;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numtheory::rooted_component;
use crate::patterns::{AdmissibleFamily, Pattern};
use crate::series::{term_weight_exact, TruncationParams};
use crate::solver::{local_increment, BlockRecord, BlockValues, Mode, Solver};

/// Largest `n` handled by exhaustive enumeration.
pub const MAX_EXHAUSTIVE: u64 = 24;
/// Largest `n` for the semi-independent [`cross_f`].
pub const MAX_CROSS: u64 = 60;
/// Largest budget accepted by [`exact_reference_series`].
pub const MAX_REFERENCE_BUDGET: f64 = 1e4;

fn check_exhaustive(len: usize) -> Result<()> {
    if len as u64 > MAX_EXHAUSTIVE {
        return Err(Error::TooLarge(format!(
            "{len} elements, at most {MAX_EXHAUSTIVE} are enumerated exhaustively"
        )));
    }
    Ok(())
}

// Copy of `p` among `vals` that uses the last entry.
fn copy_through_last(p: &Pattern, vals: &[u64]) -> bool {
    let k = p.vertex_count();
    if vals.len() < k {
        return false;
    }
    let last = vals.len() - 1;
    let edge_ok = |e: &crate::PatternEdge, img: &[usize]| {
        let (a, b) = (vals[img[e.from]], vals[img[e.to]]);
        if e.directed {
            b % a == 0
        } else {
            b % a == 0 || a % b == 0
        }
    };
    fn assign(
        p: &Pattern,
        order: &[usize],
        pos: usize,
        img: &mut [usize],
        used: &mut [bool],
        edge_ok: &dyn Fn(&crate::PatternEdge, &[usize]) -> bool,
    ) -> bool {
        if pos == order.len() {
            return true;
        }
        let v = order[pos];
        for cand in 0..used.len() {
            if used[cand] {
                continue;
            }
            img[v] = cand;
            let fits = p.edges().iter().all(|e| {
                let placed = |u: usize| u == v || order[..pos].contains(&u);
                !(placed(e.from) && placed(e.to) && (e.from == v || e.to == v)) || edge_ok(e, img)
            });
            if fits {
                used[cand] = true;
                let found = assign(p, order, pos + 1, img, used, edge_ok);
                used[cand] = false;
                if found {
                    return true;
                }
            }
        }
        false
    }
    (0..k).any(|v0| {
        // v0 goes to the new element, the rest in breadth-first order from v0
        let mut order = vec![v0];
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for e in p.edges() {
                for (a, b) in [(e.from, e.to), (e.to, e.from)] {
                    if a == u && !order.contains(&b) {
                        order.push(b);
                    }
                }
            }
        }
        let mut img = vec![0; k];
        img[v0] = last;
        let mut used = vec![false; vals.len()];
        used[last] = true;
        assign(p, &order, 1, &mut img, &mut used, &edge_ok)
    })
}

// Two neighbours of the last entry already joined through the others.
fn closes_cycle_through_last(vals: &[u64]) -> bool {
    let (x, rest) = vals.split_last().expect("non-empty");
    let related = |a: u64, b: u64| a % b == 0 || b % a == 0;
    let mut uf = UnionFind::<usize>::new(rest.len());
    for a in 0..rest.len() {
        for b in a + 1..rest.len() {
            if related(rest[a], rest[b]) {
                uf.union(a, b);
            }
        }
    }
    let mut seen = Vec::new();
    for (a, &v) in rest.iter().enumerate() {
        if related(v, *x) {
            let root = uf.find(a);
            if seen.contains(&root) {
                return true;
            }
            seen.push(root);
        }
    }
    false
}

/// Whether `vals` is admissible, given that `vals` minus its last entry is.
pub fn extends_admissibly(vals: &[u64], fam: &AdmissibleFamily) -> bool {
    if vals.is_empty() {
        return true;
    }
    if fam.patterns().iter().any(|p| copy_through_last(p, vals)) {
        return false;
    }
    !fam.forest() || !closes_cycle_through_last(vals)
}

/// Number of admissible subsets of `set` of each size (index = size).
///
/// Subsets are grown in increasing order of elements; a prefix that is not
/// admissible is not extended, which loses nothing because no superset of it
/// is admissible either.
pub fn admissible_size_counts(set: &[u64], fam: &AdmissibleFamily) -> Result<Vec<BigUint>> {
    let mut values = set.to_vec();
    values.sort_unstable();
    values.dedup();
    check_exhaustive(values.len())?;
    let mut counts = vec![0u64; values.len() + 1];
    let mut chosen = Vec::with_capacity(values.len());
    grow(&values, 0, &mut chosen, fam, &mut counts);
    let last = counts.iter().rposition(|&c| c > 0).unwrap_or(0);
    Ok(counts[..=last].iter().map(|&c| BigUint::from(c)).collect())
}

fn grow(values: &[u64], from: usize, chosen: &mut Vec<u64>, fam: &AdmissibleFamily, counts: &mut [u64]) {
    counts[chosen.len()] += 1;
    for k in from..values.len() {
        chosen.push(values[k]);
        if extends_admissibly(chosen, fam) {
            grow(values, k + 1, chosen, fam, counts);
        }
        chosen.pop();
    }
}

/// Literal scan of all `2^len` subsets with a from-scratch admissibility test
/// per subset. Only practical for about 16 elements; used to validate
/// [`admissible_size_counts`].
pub fn scan_all_subsets(set: &[u64], fam: &AdmissibleFamily) -> Result<Vec<BigUint>> {
    check_exhaustive(set.len())?;
    let mut counts = vec![0u64; set.len() + 1];
    for mask in 0u32..(1 << set.len()) {
        let subset: Vec<u64> = (0..set.len()).filter(|b| mask >> b & 1 == 1).map(|b| set[b]).collect();
        // admissible iff every prefix extends admissibly
        if (1..=subset.len()).all(|k| extends_admissibly(&subset[..k], fam)) {
            counts[subset.len()] += 1;
        }
    }
    let last = counts.iter().rposition(|&c| c > 0).unwrap_or(0);
    Ok(counts[..=last].iter().map(|&c| BigUint::from(c)).collect())
}

fn interval(a: u64, n: u64) -> Vec<u64> {
    (a..=n).collect()
}

fn max_size(counts: &[BigUint]) -> u32 {
    (counts.len() - 1) as u32
}

fn total(counts: &[BigUint]) -> BigUint {
    counts.iter().sum()
}

/// `f(n)`: largest admissible subset of `{1, ..., n}`, exhaustively.
pub fn brute_f(n: u64, fam: &AdmissibleFamily) -> Result<u32> {
    check_exhaustive(n as usize)?;
    Ok(max_size(&admissible_size_counts(&interval(1, n), fam)?))
}

/// `q(n)`: number of admissible subsets of `{1, ..., n}`, exhaustively.
pub fn brute_q(n: u64, fam: &AdmissibleFamily) -> Result<BigUint> {
    check_exhaustive(n as usize)?;
    Ok(total(&admissible_size_counts(&interval(1, n), fam)?))
}

/// `f(n)` for `n <= 60` from the solver. Semi-independent: it shares the
/// pattern matcher and the search with the series evaluation.
pub fn cross_f(n: u64, fam: &AdmissibleFamily) -> Result<u32> {
    if n > MAX_CROSS {
        return Err(Error::TooLarge(format!("n = {n} exceeds {MAX_CROSS}")));
    }
    Solver::new(fam.clone()).phi(&interval(1, n))
}

/// Outcome of [`telescope_check`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TelescopeReport {
    pub n: u64,
    pub family: String,
    pub f: u32,
    pub q_decimal: String,
    /// `g(a, n)` for `a = 1..=n`.
    pub g_sequence: Vec<u32>,
    /// `h(a, n)` for `a = 1..=n`.
    pub h_sequence: Vec<f64>,
    pub pass: bool,
    /// Smallest `a` whose increments disagree with the exhaustive differences.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<u64>,
}

/// Solves the rooted component of every `a` in `{a, ..., n}` and checks
/// `sum g = f(n)` exactly and `sum h = log q(n)` to within `1e-9`.
///
/// Each increment is also compared with the exhaustive difference
/// `Φ([a, n]) - Φ([a+1, n])` (and the ratio `Q([a, n]) / Q([a+1, n])`), which
/// pins down the first offending `a`.
pub fn telescope_check(n: u64, fam: &AdmissibleFamily) -> Result<TelescopeReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    check_exhaustive(n as usize)?;
    let solver = Solver::new(fam.clone());
    // suffix[a - 1] = counts for [a, n]; suffix[n] = counts for the empty set
    let mut suffix = Vec::with_capacity(n as usize + 1);
    for a in 1..=n {
        suffix.push(admissible_size_counts(&interval(a, n), fam)?);
    }
    suffix.push(vec![BigUint::from(1u32)]);

    let mut g_sequence = Vec::new();
    let mut h_sequence = Vec::new();
    let mut first_failure = None;
    for a in 1..=n {
        let c = rooted_component(a, n);
        let density = solver.solve_block(&c, &Mode::Density)?;
        let counting = solver.solve_block(&c, &Mode::Counting)?;
        let (BlockValues::Density { phi_full, phi_deleted }, BlockValues::Counting { q_full, q_deleted }) =
            (&density.values, &counting.values)
        else {
            unreachable!("solve_block returns values of the requested mode")
        };
        let g = phi_full - phi_deleted;
        let (here, next) = (&suffix[a as usize - 1], &suffix[a as usize]);
        let g_ok = g as i64 == max_size(here) as i64 - max_size(next) as i64;
        let h_ok = q_full * total(next) == q_deleted * total(here);
        if !(g_ok && h_ok) && first_failure.is_none() {
            first_failure = Some(a);
        }
        g_sequence.push(g);
        h_sequence.push(local_increment(&counting));
    }

    let f = max_size(&suffix[0]);
    let q = total(&suffix[0]);
    let log_q = q.to_f64().unwrap_or(f64::INFINITY).ln();
    let g_sum: u32 = g_sequence.iter().sum();
    let h_sum: f64 = h_sequence.iter().sum();
    let pass = first_failure.is_none() && g_sum == f && (h_sum - log_q).abs() <= 1e-9;
    Ok(TelescopeReport {
        n,
        family: fam.name().to_string(),
        f,
        q_decimal: q.to_string(),
        g_sequence,
        h_sequence,
        pass,
        first_failure,
    })
}

/// The truncated series recomputed triple by triple in exact arithmetic.
#[derive(Clone, Debug)]
pub struct ExactReference {
    /// Retained weight.
    pub w: BigRational,
    /// Exact partial sum; only density increments are rational.
    pub s_exact: Option<BigRational>,
    /// Distinct block records with their exact total weight, in order of first appearance.
    pub groups: Vec<(BlockRecord, BigRational)>,
    pub terms: u64,
}

impl ExactReference {
    /// Partial sum with each group's increment evaluated in floating point.
    pub fn s(&self) -> f64 {
        match &self.s_exact {
            Some(s) => s.to_f64().unwrap_or(f64::NAN),
            None => self
                .groups
                .iter()
                .map(|(rec, weight)| weight.to_f64().unwrap_or(f64::NAN) * local_increment(rec))
                .sum(),
        }
    }

    pub fn w_f64(&self) -> f64 {
        self.w.to_f64().unwrap_or(f64::NAN)
    }
}

/// Every retained triple `(i, d, t)` with its own exact weight and its own
/// component of `d` in `{d, ..., t}`; no segments, no floating point.
pub fn exact_reference_series(
    fam: &AdmissibleFamily,
    mode: &Mode,
    params: TruncationParams,
) -> Result<ExactReference> {
    if params.budget > MAX_REFERENCE_BUDGET {
        return Err(Error::InvalidParameter(format!(
            "the exact reference is limited to budget <= {MAX_REFERENCE_BUDGET}"
        )));
    }
    let solver = Solver::new(fam.clone());
    let mut w = BigRational::zero();
    let mut index: HashMap<crate::CanonicalKey, usize> = HashMap::new();
    let mut groups: Vec<(BlockRecord, BigRational)> = Vec::new();
    let mut terms = 0u64;
    for (i, d) in params.id_pairs() {
        for t in i * d..(i + 1) * d {
            let weight = term_weight_exact(i, d, t);
            let record = solver.solve_block(&rooted_component(d, t), mode)?;
            w += &weight;
            terms += 1;
            match index.get(&record.key) {
                Some(&k) => groups[k].1 += weight,
                None => {
                    index.insert(record.key.clone(), groups.len());
                    groups.push((record, weight));
                }
            }
        }
    }
    let s_exact = matches!(mode, Mode::Density).then(|| {
        groups.iter().fold(BigRational::zero(), |acc, (rec, weight)| match rec.values {
            BlockValues::Density { phi_full, phi_deleted } => {
                acc + weight * BigRational::from_integer(BigInt::from(phi_full - phi_deleted))
            }
            _ => unreachable!("density mode"),
        })
    });
    Ok(ExactReference {
        w,
        s_exact,
        groups,
        terms,
    })
}

/// `(1/n) log Z({1, ..., n}, e^t)`.
pub fn finite_pressure(solver: &Solver, n: u64, t: f64) -> Result<f64> {
    Ok(solver.partition_function(&interval(1, n), t.exp())?.ln() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{builtin_family, is_admissible, Builtin, VERIFIED_BUILTINS};
    use proptest::prelude::*;

    fn fam(b: Builtin) -> AdmissibleFamily {
        builtin_family(b).unwrap()
    }

    #[test]
    fn brute_examples() {
        let two = fam(Builtin::TwoFork);
        assert_eq!(brute_f(3, &two).unwrap(), 2);
        assert_eq!(brute_f(6, &two).unwrap(), 4);
        assert_eq!(brute_q(3, &two).unwrap(), BigUint::from(7u32));
        assert_eq!(brute_q(2, &two).unwrap(), BigUint::from(4u32));
        for b in VERIFIED_BUILTINS {
            assert_eq!(brute_q(1, &fam(b)).unwrap(), BigUint::from(2u32));
            assert_eq!(brute_f(1, &fam(b)).unwrap(), 1);
        }
        assert_eq!(brute_f(12, &fam(Builtin::Chain(2))).unwrap(), 6);
        assert!(matches!(brute_f(25, &two), Err(Error::TooLarge(_))));
    }

    #[test]
    fn pruned_walk_matches_literal_scan() {
        for b in VERIFIED_BUILTINS {
            let f = fam(b);
            for n in [5u64, 9, 13] {
                let set = interval(1, n);
                assert_eq!(admissible_size_counts(&set, &f).unwrap(), scan_all_subsets(&set, &f).unwrap(), "{b} n={n}");
            }
        }
    }

    #[test]
    fn incremental_test_matches_pattern_module() {
        for b in VERIFIED_BUILTINS {
            let f = fam(b);
            for mask in 0u32..(1 << 10) {
                let set: Vec<u64> = (0..10).filter(|k| mask >> k & 1 == 1).map(|k| k + 2).collect();
                let naive = (1..=set.len()).all(|k| extends_admissibly(&set[..k], &f));
                assert_eq!(naive, is_admissible(&set, &f), "{b} {set:?}");
            }
        }
    }

    #[test]
    fn interval_lower_bounds() {
        for n in 1..=16u64 {
            for r in [2u64, 3] {
                let bound = (r * n).div_ceil(r + 1) as u32;
                assert!(brute_f(n, &fam(Builtin::Fork(r as usize))).unwrap() >= bound);
                assert!(brute_f(n, &fam(Builtin::InFork(r as usize))).unwrap() >= bound);
            }
            for k in [2u32, 3, 4] {
                let bound = (n - n / 2u64.pow(k - 1)) as u32;
                assert!(brute_f(n, &fam(Builtin::Chain(k as usize))).unwrap() >= bound);
            }
            assert_eq!(brute_f(n, &fam(Builtin::Chain(2))).unwrap() as u64, n.div_ceil(2));
        }
    }

    #[test]
    fn q_at_least_two_to_the_f() {
        for b in VERIFIED_BUILTINS {
            for n in 1..=14 {
                let f = brute_f(n, &fam(b)).unwrap();
                assert!(brute_q(n, &fam(b)).unwrap() >= BigUint::from(1u32) << f);
            }
        }
    }

    #[test]
    fn cross_mode_agrees() {
        for b in VERIFIED_BUILTINS {
            for n in [10u64, 17] {
                assert_eq!(cross_f(n, &fam(b)).unwrap(), brute_f(n, &fam(b)).unwrap());
            }
        }
        assert!(cross_f(61, &fam(Builtin::TwoFork)).is_err());
    }

    #[test]
    fn telescope_examples() {
        let two = fam(Builtin::TwoFork);
        let r = telescope_check(3, &two).unwrap();
        assert_eq!(r.g_sequence, vec![0, 1, 1]);
        assert_eq!((r.f, r.q_decimal.as_str(), r.pass), (2, "7", true));
        let r = telescope_check(2, &two).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!(r.h_sequence.iter().all(|h| (h - ln2).abs() < 1e-15));
        assert!(r.pass);
        for b in VERIFIED_BUILTINS {
            let r = telescope_check(1, &fam(b)).unwrap();
            assert_eq!((r.g_sequence, r.f, r.pass), (vec![1], 1, true));
        }
        let json = serde_json::to_value(telescope_check(3, &two).unwrap()).unwrap();
        for field in ["n", "family", "f", "q_decimal", "g_sequence", "h_sequence", "pass"] {
            assert!(json.get(field).is_some(), "{field}");
        }
    }

    #[test]
    fn telescoping_up_to_twelve() {
        for b in VERIFIED_BUILTINS {
            for n in 1..=12 {
                let r = telescope_check(n, &fam(b)).unwrap();
                assert!(r.pass, "{b} n={n}: {r:?}");
            }
        }
    }

    #[test]
    fn exact_reference_examples() {
        let two = fam(Builtin::TwoFork);
        let one = TruncationParams::new(10.0, 1.0).unwrap();
        let r = exact_reference_series(&two, &Mode::Density, one).unwrap();
        let half = BigRational::new(1.into(), 2.into());
        assert_eq!(r.w, half);
        assert_eq!(r.s_exact, Some(half.clone()));
        let r = exact_reference_series(&two, &Mode::Counting, one).unwrap();
        assert_eq!(r.groups.len(), 1);
        let (rec, weight) = &r.groups[0];
        assert_eq!(
            rec.values,
            BlockValues::Counting {
                q_full: 2u32.into(),
                q_deleted: 1u32.into()
            }
        );
        assert_eq!(weight, &half);
        assert!((r.s() - std::f64::consts::LN_2 / 2.0).abs() < 1e-16);

        let params = TruncationParams::new(10.0, 100.0).unwrap();
        let r = exact_reference_series(&two, &Mode::Density, params).unwrap();
        let blocks = params
            .id_pairs()
            .into_iter()
            .fold(BigRational::zero(), |acc, (i, d)| acc + crate::series::block_weight_exact(i, d));
        assert_eq!(r.w, blocks);
        assert!(exact_reference_series(&two, &Mode::Density, TruncationParams::new(10.0, 2e4).unwrap()).is_err());
    }

    #[test]
    fn pressure_is_convex_and_one_lipschitz() {
        let solver = Solver::new(fam(Builtin::TwoFork));
        let grid: Vec<f64> = (0..=24).map(|k| -3.0 + 0.25 * k as f64).collect();
        let kappa: Vec<f64> = grid.iter().map(|&t| finite_pressure(&solver, 12, t).unwrap()).collect();
        for w in kappa.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-9);
        }
        for w in kappa.windows(2) {
            assert!((w[1] - w[0]).abs() <= 0.25 + 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn size_counts_agree_with_solver(values in proptest::collection::btree_set(1u64..80, 1..13), which in 0usize..8) {
            let f = fam(VERIFIED_BUILTINS[which]);
            let set: Vec<u64> = values.into_iter().collect();
            let counts = admissible_size_counts(&set, &f).unwrap();
            prop_assert_eq!(counts, Solver::new(f).size_polynomial(&set).unwrap());
        }
    }
}
