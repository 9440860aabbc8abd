//! Erasure channel realizations and the peeling decoder.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{rng_from_seed, TannerGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Each bit erased independently with this probability.
    Iid(f64),
    /// Exactly this many bits erased, uniformly at random.
    FixedWeight(usize),
}

/// Set of erased variable nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErasurePattern {
    n: usize,
    words: Vec<u64>,
    weight: usize,
    seed: u64,
}

impl ErasurePattern {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            words: vec![0; n.div_ceil(64)],
            weight: 0,
            seed: 0,
        }
    }

    pub fn from_indices(n: usize, erased: impl IntoIterator<Item = usize>) -> Self {
        let mut p = Self::empty(n);
        for i in erased {
            p.insert(i);
        }
        p
    }

    /// Pattern from the low `n` bits of `mask` (bit `i` erases variable `i`).
    pub fn from_mask(n: usize, mask: u64) -> Self {
        assert!(n <= 64);
        Self::from_indices(n, (0..n).filter(|&i| mask >> i & 1 == 1))
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.n, "variable {i} out of range");
        let (w, b) = (i / 64, i % 64);
        if self.words[w] >> b & 1 == 0 {
            self.words[w] |= 1 << b;
            self.weight += 1;
        }
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self) -> usize {
        self.weight
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &bits)| {
            let mut bits = bits;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(w * 64 + b)
            })
        })
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.n == other.n && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }
}

/// Realizes the channel on `n` variables. Deterministic in `seed`.
pub fn erase(n: usize, channel: Channel, seed: u64) -> Result<ErasurePattern> {
    let mut rng = rng_from_seed(seed);
    let mut p = ErasurePattern::empty(n);
    p.seed = seed;
    match channel {
        Channel::Iid(eps) => {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::InvalidArgument(format!(
                    "erasure probability {eps} outside [0, 1]"
                )));
            }
            if eps == 0.0 {
                return Ok(p);
            }
            for i in 0..n {
                if rng.random::<f64>() < eps {
                    p.insert(i);
                }
            }
        }
        Channel::FixedWeight(w) => {
            if w > n {
                return Err(Error::InvalidArgument(format!(
                    "erasure weight {w} exceeds blocklength {n}"
                )));
            }
            for i in rand::seq::index::sample(&mut rng, n, w) {
                p.insert(i);
            }
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeStatus {
    Success,
    Stalled,
}

/// Decoder state after `step` removals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u32,
    /// Undecoded variables.
    pub v: u32,
    /// Degree-one checks.
    pub s: u32,
    /// Checks of residual degree two or more.
    pub t: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub status: DecodeStatus,
    pub residual_size: usize,
    pub iterations: usize,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

const NOT_LISTED: u32 = u32::MAX;

/// Peeling decoder with reusable buffers; one instance per worker.
///
/// A check's residual neighbourhood is summarized by its degree and the
/// sum of attached variable indices, so the lone neighbour of a degree-one
/// check is read off directly. Degree-one checks live in an index registry
/// with O(1) insert, remove and uniform sampling.
#[derive(Debug, Default)]
pub struct Peeler {
    degree: Vec<u32>,
    index_sum: Vec<u64>,
    slot: Vec<u32>,
    degree_one: Vec<u32>,
    undecoded: Vec<bool>,
    high_degree: u32,
    edges: u64,
    check_invariants: bool,
}

impl Peeler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Recomputes edge totals after every step; O(m) per step, for tests.
    pub fn with_invariant_checks(mut self, on: bool) -> Self {
        self.check_invariants = on;
        self
    }

    fn reset(&mut self, g: &TannerGraph) {
        let m = g.m();
        self.degree.clear();
        self.degree.resize(m, 0);
        self.index_sum.clear();
        self.index_sum.resize(m, 0);
        self.slot.clear();
        self.slot.resize(m, NOT_LISTED);
        self.degree_one.clear();
        self.undecoded.clear();
        self.undecoded.resize(g.n(), false);
        self.high_degree = 0;
        self.edges = 0;
    }

    #[inline]
    fn list(&mut self, c: u32) {
        self.slot[c as usize] = self.degree_one.len() as u32;
        self.degree_one.push(c);
    }

    #[inline]
    fn unlist(&mut self, c: u32) {
        let pos = self.slot[c as usize] as usize;
        let last = *self.degree_one.last().expect("registry nonempty");
        self.degree_one.swap_remove(pos);
        if last != c {
            self.slot[last as usize] = pos as u32;
        }
        self.slot[c as usize] = NOT_LISTED;
    }

    fn point(&self, step: usize, v: usize) -> TrajectoryPoint {
        TrajectoryPoint {
            step: step as u32,
            v: v as u32,
            s: self.degree_one.len() as u32,
            t: self.high_degree,
        }
    }

    fn verify(&self, g: &TannerGraph) {
        let total: u64 = self.degree.iter().map(|&d| d as u64).sum();
        assert_eq!(total, self.edges, "edge count drifted from residual degrees");
        let var_edges: u64 = (0..g.n())
            .filter(|&v| self.undecoded[v])
            .map(|v| g.checks_of(v).len() as u64)
            .sum();
        assert_eq!(var_edges, self.edges, "variable and check sides disagree");
        let ones = self.degree.iter().filter(|&&d| d == 1).count();
        assert_eq!(ones, self.degree_one.len());
        let high = self.degree.iter().filter(|&&d| d >= 2).count() as u32;
        assert_eq!(high, self.high_degree);
    }

    /// Runs the decoder. `seed` drives the choice among degree-one checks.
    pub fn run(
        &mut self,
        g: &TannerGraph,
        pattern: &ErasurePattern,
        seed: u64,
        record: bool,
    ) -> DecodeOutcome {
        assert_eq!(pattern.n(), g.n(), "pattern and graph blocklengths differ");
        self.reset(g);
        let mut remaining = 0usize;
        for v in pattern.iter() {
            self.undecoded[v] = true;
            remaining += 1;
            for &c in g.checks_of(v) {
                self.degree[c as usize] += 1;
                self.index_sum[c as usize] += v as u64;
                self.edges += 1;
            }
        }
        for c in 0..g.m() as u32 {
            match self.degree[c as usize] {
                0 => {}
                1 => self.list(c),
                _ => self.high_degree += 1,
            }
        }
        let mut trajectory = record.then(|| vec![self.point(0, remaining)]);
        if self.check_invariants {
            self.verify(g);
        }

        let mut rng = rng_from_seed(seed);
        let mut iterations = 0usize;
        while !self.degree_one.is_empty() {
            let pick = rng.random_range(0..self.degree_one.len());
            let c = self.degree_one[pick];
            let v = self.index_sum[c as usize] as usize;
            debug_assert!(self.undecoded[v]);
            self.undecoded[v] = false;
            remaining -= 1;
            for &d in g.checks_of(v) {
                let d = d as usize;
                let before = self.degree[d];
                self.degree[d] = before - 1;
                self.index_sum[d] -= v as u64;
                self.edges -= 1;
                match before {
                    1 => self.unlist(d as u32),
                    2 => {
                        self.high_degree -= 1;
                        self.list(d as u32);
                    }
                    _ => {}
                }
            }
            iterations += 1;
            if let Some(t) = trajectory.as_mut() {
                t.push(self.point(iterations, remaining));
            }
            if self.check_invariants {
                self.verify(g);
            }
        }
        DecodeOutcome {
            status: if remaining == 0 {
                DecodeStatus::Success
            } else {
                DecodeStatus::Stalled
            },
            residual_size: remaining,
            iterations,
            trajectory,
        }
    }

    /// Variables left undecoded by the last [`Peeler::run`]: the maximal
    /// stopping set inside the erasure pattern.
    pub fn residual(&self) -> Vec<usize> {
        self.undecoded
            .iter()
            .enumerate()
            .filter_map(|(i, &u)| u.then_some(i))
            .collect()
    }
}

/// One-shot convenience wrapper around [`Peeler`].
pub fn peel(g: &TannerGraph, pattern: &ErasurePattern, seed: u64, record: bool) -> DecodeOutcome {
    Peeler::new().run(g, pattern, seed, record)
}

/// Writes `step,v,s,t` rows.
pub fn write_trajectory_csv<W: std::io::Write>(mut w: W, points: &[TrajectoryPoint]) -> Result<()> {
    writeln!(w, "step,v,s,t")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.step, p.v, p.s, p.t)?;
    }
    Ok(())
}
