//! Truncated evaluation of the local-statistics series
//!
//! ```text
//! C = sum_{i >= 1} prod_{p <= i} (p-1)/p  sum_{d : P+(d) <= i}  sum_{id <= t < (i+1)d}  g(d, t) / (t (t+1))
//! ```
//!
//! over the triples with `d * i^alpha <= budget`. With `S` the retained partial
//! sum, `W` the retained weight and `M` a bound on the increments, the limit lies
//! in `[S, S + M (1 - W)]` because the weights sum to one and every increment is
//! in `[0, M]`.
//!
//! For fixed `(i, d)` the rooted component of `d` in `{d, ..., t}` only changes
//! when `t` reaches an element of the component of `d` in `{d, ..., (i+1)d - 1}`.
//! The `t`-range is therefore cut into a few segments, each carrying one
//! component and the telescoped weight `1/a - 1/b` of its `t`-interval `[a, b)`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use dashmap::mapref::entry::Entry;
use dashmap::DashMap;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numtheory::{
    canonical_key, largest_prime_factor, primes_up_to, rooted_component, smooth_numbers, CanonicalKey,
    EulerFactors,
};
use crate::patterns::AdmissibleFamily;
use crate::solver::{local_increment, BlockRecord, BlockValues, Mode, Solver};

/// Retain the triples `(i, d, t)` with `d * i^alpha <= budget`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationParams {
    pub alpha: f64,
    pub budget: f64,
}

impl Default for TruncationParams {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            budget: 1e8,
        }
    }
}

impl TruncationParams {
    pub fn new(alpha: f64, budget: f64) -> Result<Self> {
        if !(alpha >= 1.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be >= 1, got {alpha}")));
        }
        // (i+1) d must stay well inside u64
        if !(budget >= 1.0 && budget <= 1e17) {
            return Err(Error::InvalidParameter(format!(
                "budget must lie in [1, 1e17], got {budget}"
            )));
        }
        Ok(Self { alpha, budget })
    }

    fn exact_integers(&self) -> Option<(u32, u128)> {
        (self.alpha.fract() == 0.0 && self.budget.fract() == 0.0 && self.alpha <= 64.0)
            .then(|| (self.alpha as u32, self.budget as u128))
    }

    /// Largest `d` with `d * i^alpha <= budget` (0 when even `d = 1` fails).
    pub fn max_d(&self, i: u64) -> u64 {
        match self.exact_integers() {
            Some((alpha, budget)) => {
                let mut power: u128 = 1;
                for _ in 0..alpha {
                    power = power.saturating_mul(i as u128);
                    if power > budget {
                        return 0;
                    }
                }
                (budget / power) as u64
            }
            None => {
                let power = (i as f64).powf(self.alpha);
                let mut d = (self.budget / power).floor() as u64;
                while d > 0 && d as f64 * power > self.budget {
                    d -= 1;
                }
                while (d + 1) as f64 * power <= self.budget {
                    d += 1;
                }
                d
            }
        }
    }

    /// Largest retained `i`.
    pub fn max_i(&self) -> u64 {
        let mut i = 1;
        while self.max_d(i + 1) >= 1 {
            i += 1;
        }
        i
    }

    /// Retained `(i, d)` pairs: `i` ascending, then `d` ascending.
    pub fn id_pairs(&self) -> Vec<(u64, u64)> {
        (1..=self.max_i())
            .flat_map(|i| smooth_numbers(i, self.max_d(i)).map(move |d| (i, d)))
            .collect()
    }
}

/// `prod_{p <= i} (p-1)/p` as an exact rational.
pub fn euler_factor_exact(i: u64) -> BigRational {
    primes_up_to(i).into_iter().fold(BigRational::one(), |acc, p| {
        acc * BigRational::new(BigInt::from(p - 1), BigInt::from(p))
    })
}

fn assert_triple(i: u64, d: u64, t: u64) {
    assert!(i >= 1 && d >= 1, "i and d must be positive");
    assert!(largest_prime_factor(d) <= i, "P+({d}) exceeds {i}");
    assert!(i * d <= t && t < (i + 1) * d, "t = {t} outside [{}, {})", i * d, (i + 1) * d);
}

/// Coefficient `prod_{p <= i} (p-1)/p / (t (t+1))` of the triple `(i, d, t)`.
pub fn term_weight(i: u64, d: u64, t: u64) -> f64 {
    assert_triple(i, d, t);
    let euler = EulerFactors::new(i).get(i);
    euler / (t as f64 * (t + 1) as f64)
}

pub fn term_weight_exact(i: u64, d: u64, t: u64) -> BigRational {
    assert_triple(i, d, t);
    euler_factor_exact(i) / BigRational::from_integer(BigInt::from(t) * BigInt::from(t + 1))
}

/// Total weight `prod_{p <= i} (p-1)/p / (i (i+1) d)` of the `(i, d)` block.
pub fn block_weight(i: u64, d: u64) -> f64 {
    assert!(largest_prime_factor(d) <= i, "P+({d}) exceeds {i}");
    EulerFactors::new(i).get(i) / (i as f64 * (i + 1) as f64 * d as f64)
}

pub fn block_weight_exact(i: u64, d: u64) -> BigRational {
    assert!(largest_prime_factor(d) <= i, "P+({d}) exceeds {i}");
    euler_factor_exact(i) / BigRational::from_integer(BigInt::from(i) * BigInt::from(i + 1) * BigInt::from(d))
}

/// Every retained triple, in order `i`, then `d`, then `t`.
pub fn enumerate_triples(params: TruncationParams) -> impl Iterator<Item = (u64, u64, u64)> {
    params
        .id_pairs()
        .into_iter()
        .flat_map(|(i, d)| (i * d..(i + 1) * d).map(move |t| (i, d, t)))
}

/// A maximal `t`-interval `[start, end)` of one `(i, d)` block on which the
/// rooted component of `d` in `{d, ..., t}` stays the same.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub i: u64,
    pub d: u64,
    pub start: u64,
    pub end: u64,
    pub key: CanonicalKey,
}

pub fn segments(i: u64, d: u64) -> Vec<Segment> {
    let (lo, hi) = (i * d, (i + 1) * d);
    let span = rooted_component(d, hi - 1);
    let cuts: Vec<u64> = std::iter::once(lo)
        .chain(span.elements().iter().copied().filter(|&x| x > lo))
        .collect();
    let mut out: Vec<Segment> = Vec::new();
    for (k, &start) in cuts.iter().enumerate() {
        let end = cuts.get(k + 1).copied().unwrap_or(hi);
        let key = canonical_key(&rooted_component(d, start));
        match out.last_mut() {
            Some(last) if last.key == key => last.end = end,
            _ => out.push(Segment { i, d, start, end, key }),
        }
    }
    out
}

/// Block values shared across evaluations, keyed by family hash, mode and
/// canonical key. Optionally mirrored to an append-only tab-separated file:
///
/// `family_hash  mode  elements  root  phi_full  phi_deleted  q_full  q_deleted`
///
/// Columns a mode does not use hold `-`; partition mode stores its exact Z
/// values as `num/den` in the two `q` columns. Unreadable lines are skipped and
/// file errors fall back to memory-only operation, both with a warning.
pub struct BlockCache {
    entries: DashMap<(String, String, CanonicalKey), BlockRecord>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
    hits: AtomicU64,
    misses: AtomicU64,
    skipped_lines: usize,
}

impl Default for BlockCache {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl BlockCache {
    pub fn in_memory() -> Self {
        Self {
            entries: DashMap::new(),
            file: None,
            path: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            skipped_lines: 0,
        }
    }

    pub fn open(path: &Path) -> Self {
        let mut cache = Self::in_memory();
        cache.path = Some(path.to_path_buf());
        if path.exists() {
            match File::open(path) {
                Ok(f) => {
                    for (lineno, line) in BufReader::new(f).lines().enumerate() {
                        let parsed = line.ok().and_then(|l| parse_line(&l));
                        match parsed {
                            Some((hash, mode, record)) => {
                                cache.entries.insert((hash, mode, record.key.clone()), record);
                            }
                            None => {
                                cache.skipped_lines += 1;
                                log::warn!("{}:{}: skipping unreadable cache line", path.display(), lineno + 1);
                            }
                        }
                    }
                }
                Err(e) => log::warn!("cannot read block cache {}: {e}", path.display()),
            }
        }
        match OpenOptions::new().create(true).append(true).read(true).open(path) {
            Ok(mut f) => {
                // never glue a new record onto a torn last line
                let needs_newline = f.seek(SeekFrom::End(-1)).is_ok() && {
                    let mut last = [0u8; 1];
                    f.read_exact(&mut last).is_ok() && last[0] != b'\n'
                };
                if needs_newline && writeln!(f).is_err() {
                    log::warn!("block cache {} is not writable; keeping results in memory", path.display());
                } else {
                    cache.file = Some(Mutex::new(f));
                }
            }
            Err(e) => log::warn!(
                "cannot open block cache {} for appending ({e}); keeping results in memory",
                path.display()
            ),
        }
        cache
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn is_persistent(&self) -> bool {
        self.file.is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Lines skipped while loading the file.
    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    /// Cached record for `key`, solving and storing it on a miss.
    pub fn lookup_or_solve(&self, solver: &Solver, key: &CanonicalKey, mode: &Mode) -> Result<BlockRecord> {
        let slot = (
            solver.family().family_hash().to_string(),
            mode.label(),
            key.clone(),
        );
        if let Some(rec) = self.entries.get(&slot) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(rec.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let record = solver.solve_block(&key.to_component(), mode)?;
        if let Entry::Vacant(v) = self.entries.entry(slot) {
            v.insert(record.clone());
            self.append(solver.family().family_hash(), mode, &record);
        }
        Ok(record)
    }

    fn append(&self, family_hash: &str, mode: &Mode, record: &BlockRecord) {
        let Some(file) = &self.file else { return };
        let line = format_line(family_hash, mode, record);
        let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
            log::warn!("failed to append to block cache: {e}");
        }
    }
}

fn format_line(family_hash: &str, mode: &Mode, record: &BlockRecord) -> String {
    let elements: Vec<String> = record.key.elements.iter().map(u64::to_string).collect();
    let ratio = |r: &BigRational| format!("{}/{}", r.numer(), r.denom());
    let [pf, pd, qf, qd] = match &record.values {
        BlockValues::Density { phi_full, phi_deleted } => {
            [phi_full.to_string(), phi_deleted.to_string(), "-".into(), "-".into()]
        }
        BlockValues::Counting { q_full, q_deleted } => ["-".into(), "-".into(), q_full.to_string(), q_deleted.to_string()],
        BlockValues::Partition { z_full, z_deleted } => ["-".into(), "-".into(), ratio(z_full), ratio(z_deleted)],
    };
    format!(
        "{family_hash}\t{}\t{}\t{}\t{pf}\t{pd}\t{qf}\t{qd}\n",
        mode.label(),
        elements.join(","),
        record.key.root
    )
}

fn parse_line(line: &str) -> Option<(String, String, BlockRecord)> {
    let cols: Vec<&str> = line.split('\t').collect();
    let [hash, mode_label, elements, root, pf, pd, qf, qd] = cols.as_slice() else {
        return None;
    };
    let mode = Mode::parse_label(mode_label).ok()?;
    let elements: Vec<u64> = elements.split(',').map(|x| x.parse().ok()).collect::<Option<_>>()?;
    let root: u64 = root.parse().ok()?;
    let component = crate::numtheory::RootedComponent::new(elements, root)?;
    let key = canonical_key(&component);
    if key.elements != component.elements() || !component.is_connected() {
        return None;
    }
    let rational = |s: &str| -> Option<BigRational> {
        let (n, d) = s.split_once('/')?;
        let (n, d): (BigInt, BigInt) = (n.parse().ok()?, d.parse().ok()?);
        (!d.is_zero()).then(|| BigRational::new(n, d))
    };
    let values = match mode {
        Mode::Density => BlockValues::Density {
            phi_full: pf.parse().ok()?,
            phi_deleted: pd.parse().ok()?,
        },
        Mode::Counting => BlockValues::Counting {
            q_full: qf.parse::<BigUint>().ok()?,
            q_deleted: qd.parse::<BigUint>().ok()?,
        },
        Mode::Partition(_) => BlockValues::Partition {
            z_full: rational(qf)?,
            z_deleted: rational(qd)?,
        },
    };
    let record = BlockRecord { key, values };
    record.satisfies_bounds(&mode).then(|| (hash.to_string(), mode_label.to_string(), record))
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Result of a truncated evaluation. `lower <= limit <= upper`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesEstimate {
    pub family: String,
    pub mode: String,
    pub alpha: f64,
    pub budget: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub lower: f64,
    pub upper: f64,
    /// Distinct canonical components solved.
    pub blocks: usize,
    /// Retained `(i, d)` pairs.
    pub id_pairs: usize,
    /// Retained `(i, d, t)` triples.
    pub terms: u64,
    /// Constant-component `t`-intervals actually summed.
    pub segments: usize,
    /// Rounding allowance added to `upper`.
    pub slack: f64,
    /// Blocks whose exact values broke the increment bounds (always 0 for a sound family).
    pub bound_violations: usize,
}

/// One distinct component with its total retained weight and increment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockSummary {
    pub key: CanonicalKey,
    pub weight: f64,
    pub increment: f64,
}

/// Evaluation with a fresh solver for `family`.
pub fn evaluate(
    family: &AdmissibleFamily,
    mode: &Mode,
    params: TruncationParams,
    cache: &BlockCache,
) -> Result<SeriesEstimate> {
    evaluate_with(&Solver::new(family.clone()), mode, params, cache).map(|(est, _)| est)
}

/// Evaluation that also returns the per-component weights, ordered by first
/// appearance in the enumeration.
///
/// Block solves run on the current rayon pool; the final reduction is
/// sequential in enumeration order, so the result does not depend on the
/// number of workers.
pub fn evaluate_with(
    solver: &Solver,
    mode: &Mode,
    params: TruncationParams,
    cache: &BlockCache,
) -> Result<(SeriesEstimate, Vec<BlockSummary>)> {
    let pairs = params.id_pairs();
    let euler = EulerFactors::new(params.max_i());

    let per_pair: Vec<Vec<Segment>> = pairs.par_iter().map(|&(i, d)| segments(i, d)).collect();

    let mut key_index: HashMap<&CanonicalKey, usize> = HashMap::new();
    let mut keys: Vec<&CanonicalKey> = Vec::new();
    for seg in per_pair.iter().flatten() {
        key_index.entry(&seg.key).or_insert_with(|| {
            keys.push(&seg.key);
            keys.len() - 1
        });
    }

    let solved: Vec<Result<BlockRecord>> = keys
        .par_iter()
        .map(|key| cache.lookup_or_solve(solver, key, mode))
        .collect();
    let records = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let bound_violations = records.iter().filter(|r| !r.satisfies_bounds(mode)).count();
    let increments: Vec<f64> = records.iter().map(local_increment).collect();

    let m = mode.increment_bound();
    let unit = f64::EPSILON / 2.0;
    let mut s = CompensatedSum::default();
    let mut w = CompensatedSum::default();
    let mut term_error = 0.0;
    let mut key_weights = vec![0.0; keys.len()];
    let mut segment_count = 0usize;
    for seg in per_pair.iter().flatten() {
        let k = key_index[&seg.key];
        let (a, b) = (seg.start as f64, seg.end as f64);
        let weight = euler.get(seg.i) * ((b - a) / (a * b));
        let term = weight * increments[k];
        s.add(term);
        w.add(weight);
        key_weights[k] += weight;
        segment_count += 1;
        // relative error of each product: Euler factor (two roundings per
        // prime), the segment width and the increment itself
        let ops = 2.0 * euler.prime_count(seg.i) as f64 + 8.0;
        term_error += ops * unit * (term + m * weight);
    }
    let (s_val, w_val) = (s.value(), w.value());
    let n = segment_count as f64;
    let slack = term_error + 4.0 * unit * (s_val + m) + 2.0 * n * unit * unit * (s_val + m * w_val);
    // every increment is at most M and the weights sum to one
    let upper = (s_val + m * (1.0 - w_val) + slack).min(m);
    debug_assert!(w_val <= 1.0 + slack, "retained mass {w_val} exceeds one");

    let terms = pairs.iter().map(|&(_, d)| d).sum();
    let estimate = SeriesEstimate {
        family: solver.family().name().to_string(),
        mode: mode.label(),
        alpha: params.alpha,
        budget: params.budget,
        s: s_val,
        w: w_val,
        m,
        lower: s_val,
        upper,
        blocks: keys.len(),
        id_pairs: pairs.len(),
        terms,
        segments: segment_count,
        slack,
        bound_violations,
    };
    let summaries = keys
        .iter()
        .zip(key_weights)
        .zip(increments)
        .map(|((key, weight), increment)| BlockSummary {
            key: (*key).clone(),
            weight,
            increment,
        })
        .collect();
    Ok((estimate, summaries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{builtin_family, Builtin, VERIFIED_BUILTINS};
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn two_fork() -> AdmissibleFamily {
        builtin_family(Builtin::TwoFork).unwrap()
    }

    #[test]
    fn weight_examples() {
        assert_eq!(term_weight_exact(1, 1, 1), q(1, 2));
        assert_eq!(term_weight_exact(2, 1, 2), q(1, 12));
        assert_eq!(term_weight_exact(2, 2, 4), q(1, 40));
        assert_eq!(block_weight_exact(1, 1), q(1, 2));
        assert_eq!(block_weight_exact(2, 1), q(1, 12));
        assert_eq!(block_weight_exact(2, 2), q(1, 24));
        assert_eq!(term_weight(1, 1, 1), 0.5);
        assert!((block_weight(2, 2) - 1.0 / 24.0).abs() < 1e-17);
        assert_eq!(euler_factor_exact(6), q(4, 15));
    }

    #[test]
    #[should_panic]
    fn weight_rejects_rough_d() {
        block_weight(2, 3);
    }

    #[test]
    fn block_weight_is_sum_of_term_weights() {
        for i in 1..=12u64 {
            for d in smooth_numbers(i, 60) {
                let sum = (i * d..(i + 1) * d).fold(BigRational::zero(), |acc, t| acc + term_weight_exact(i, d, t));
                assert_eq!(sum, block_weight_exact(i, d), "i={i} d={d}");
            }
        }
    }

    #[test]
    fn truncation_examples() {
        let p = |b| TruncationParams::new(10.0, b).unwrap();
        assert_eq!(enumerate_triples(p(1.0)).collect::<Vec<_>>(), vec![(1, 1, 1)]);
        assert_eq!(enumerate_triples(p(1024.0)).collect::<Vec<_>>(), vec![(1, 1, 1), (2, 1, 2)]);
        assert_eq!(p(1e10).max_i(), 10);
        assert_eq!(p(2048.0).max_d(2), 2);
        assert_eq!(p(3.0).max_d(1), 3);
        let fractional = TruncationParams::new(2.5, 1000.0).unwrap();
        for i in 1..20 {
            let d = fractional.max_d(i);
            assert!(d as f64 * (i as f64).powf(2.5) <= 1000.0);
            assert!((d + 1) as f64 * (i as f64).powf(2.5) > 1000.0);
        }
        assert!(TruncationParams::new(0.5, 10.0).is_err());
        assert!(TruncationParams::new(10.0, 0.5).is_err());
        assert!(TruncationParams::new(10.0, f64::NAN).is_err());
    }

    #[test]
    fn segments_match_per_t_components() {
        for i in 1..=8u64 {
            for d in smooth_numbers(i, 40) {
                let segs = segments(i, d);
                assert_eq!(segs.first().unwrap().start, i * d);
                assert_eq!(segs.last().unwrap().end, (i + 1) * d);
                for w in segs.windows(2) {
                    assert_eq!(w[0].end, w[1].start);
                    assert_ne!(w[0].key, w[1].key);
                }
                for s in &segs {
                    for t in s.start..s.end {
                        assert_eq!(canonical_key(&rooted_component(d, t)), s.key, "i={i} d={d} t={t}");
                    }
                }
            }
        }
    }

    #[test]
    fn smallest_budgets() {
        let one = TruncationParams::new(10.0, 1.0).unwrap();
        let cache = BlockCache::in_memory();
        let est = evaluate(&two_fork(), &Mode::Density, one, &cache).unwrap();
        assert_eq!((est.s, est.w, est.lower, est.upper), (0.5, 0.5, 0.5, 1.0));
        let est = evaluate(&two_fork(), &Mode::Counting, one, &cache).unwrap();
        assert!((est.s - std::f64::consts::LN_2 / 2.0).abs() < 1e-16);
        assert_eq!(est.blocks, 1);
        let est = evaluate(&two_fork(), &Mode::Partition(crate::solver::Activity::parse("3").unwrap()), one, &cache)
            .unwrap();
        assert!((est.m - 4f64.ln()).abs() < 1e-15);
        assert!((est.s - 4f64.ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn refinement_is_monotone() {
        for b in [Builtin::TwoFork, Builtin::Chain(3), Builtin::Forest] {
            let fam = builtin_family(b).unwrap();
            for mode in [Mode::Density, Mode::Counting] {
                let cache = BlockCache::in_memory();
                let mut last: Option<SeriesEstimate> = None;
                for budget in [1.0, 1e2, 1e4, 1e5, 1e6, 1e7] {
                    let est = evaluate(&fam, &mode, TruncationParams::new(10.0, budget).unwrap(), &cache).unwrap();
                    assert!(est.lower <= est.upper);
                    assert_eq!(est.bound_violations, 0);
                    if let Some(prev) = &last {
                        assert!(est.lower >= prev.lower - 1e-15, "{b} {budget}");
                        assert!(est.upper <= prev.upper + 1e-15, "{b} {budget}");
                        assert!(est.w >= prev.w);
                    }
                    last = Some(est);
                }
            }
        }
    }

    #[test]
    fn float_path_matches_exact_weights() {
        let params = TruncationParams::new(10.0, 1e6).unwrap();
        let exact = params
            .id_pairs()
            .into_iter()
            .fold(BigRational::zero(), |acc, (i, d)| acc + block_weight_exact(i, d));
        let est = evaluate(&two_fork(), &Mode::Density, params, &BlockCache::in_memory()).unwrap();
        assert!((est.w - exact.to_f64().unwrap()).abs() < 1e-14);
    }

    #[test]
    fn cache_sharing_and_hits() {
        let cache = BlockCache::in_memory();
        let params = TruncationParams::new(10.0, 1e5).unwrap();
        let first = evaluate(&two_fork(), &Mode::Density, params, &cache).unwrap();
        let misses = cache.misses();
        assert_eq!(misses as usize, first.blocks);
        let second = evaluate(&two_fork(), &Mode::Density, params, &cache).unwrap();
        assert_eq!(first, second);
        assert_eq!(cache.misses(), misses);
        assert_eq!(cache.hits() as usize, first.blocks);
        // other mode and other family are separate entries
        evaluate(&two_fork(), &Mode::Counting, params, &cache).unwrap();
        assert!(cache.misses() > misses);
        let before = cache.misses();
        evaluate(&builtin_family(Builtin::InFork(2)).unwrap(), &Mode::Density, params, &cache).unwrap();
        assert!(cache.misses() > before);
        // dilates share a key
        let solver = Solver::new(two_fork());
        let a = cache.lookup_or_solve(&solver, &canonical_key(&rooted_component(3, 20)), &Mode::Density).unwrap();
        let b = cache.lookup_or_solve(&solver, &canonical_key(&rooted_component(3, 20).dilate(5)), &Mode::Density);
        assert_eq!(a, b.unwrap());
    }

    #[test]
    fn cache_file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blocks.tsv");
        let params = TruncationParams::new(10.0, 1e5).unwrap();
        let z = Mode::Partition(crate::solver::Activity::parse("0.5").unwrap());
        let mut fresh = Vec::new();
        {
            let cache = BlockCache::open(&path);
            assert!(cache.is_persistent());
            for mode in [Mode::Density, Mode::Counting, z.clone()] {
                fresh.push(evaluate(&two_fork(), &mode, params, &cache).unwrap());
            }
        }
        let mut text = std::fs::read_to_string(&path).unwrap();
        let records = text.lines().count();
        text.push_str("garbage\n");
        text.push_str(&format!("{}\tcounting\t1,2\t1\t-\t-\t9\t1\n", two_fork().family_hash()));
        text.push_str(&format!("{}\tdensity\t2,4\t2\t1\t0\t-\t-\n", two_fork().family_hash()));
        text.push_str("torn\tdens");
        std::fs::write(&path, text).unwrap();

        let cache = BlockCache::open(&path);
        assert_eq!(cache.len(), records);
        assert_eq!(cache.skipped_lines(), 4);
        for (mode, before) in [Mode::Density, Mode::Counting, z].iter().zip(&fresh) {
            assert_eq!(&evaluate(&two_fork(), mode, params, &cache).unwrap(), before);
        }
        assert_eq!(cache.misses(), 0);
        drop(cache);
        // the torn line is terminated so later appends start on a fresh line
        assert!(std::fs::read_to_string(&path).unwrap().ends_with("torn\tdens\n"));
    }

    #[test]
    fn unwritable_cache_degrades_to_memory() {
        let dir = tempfile::tempdir().unwrap();
        let cache = BlockCache::open(&dir.path().join("missing").join("blocks.tsv"));
        assert!(!cache.is_persistent());
        let est = evaluate(&two_fork(), &Mode::Density, TruncationParams::new(10.0, 1e3).unwrap(), &cache).unwrap();
        assert_eq!(cache.len(), est.blocks);
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let params = TruncationParams::new(10.0, 1e7).unwrap();
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| evaluate(&two_fork(), &Mode::Counting, params, &BlockCache::in_memory()).unwrap())
        };
        let one = run(1);
        let many = run(4);
        assert_eq!(one.s.to_bits(), many.s.to_bits());
        assert_eq!(one.w.to_bits(), many.w.to_bits());
        assert_eq!(one.upper.to_bits(), many.upper.to_bits());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn bounds_bracket_every_family(which in 0usize..8, exp in 0u32..7) {
            let fam = builtin_family(VERIFIED_BUILTINS[which]).unwrap();
            let params = TruncationParams::new(10.0, 10f64.powi(exp as i32)).unwrap();
            let est = evaluate(&fam, &Mode::Density, params, &BlockCache::in_memory()).unwrap();
            prop_assert!(0.0 <= est.lower && est.lower <= est.upper && est.upper <= 1.0);
            prop_assert!(est.w <= 1.0 && est.w >= 0.5);
        }
    }
}
