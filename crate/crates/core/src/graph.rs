//! Configuration-model sampling of Tanner multigraphs.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Rng = Xoshiro256PlusPlus;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-derived seed: stream `counter` of base seed `base`.
#[inline]
pub fn mix_seed(base: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(base) ^ counter.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// A sampled Tanner graph. Variable sockets are numbered consecutively by
/// variable; `check_of_socket[i]` is the check attached to variable socket `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TannerGraph {
    var_degrees: Vec<u32>,
    check_degrees: Vec<u32>,
    /// CSR offsets into the socket arrays, length `n + 1`.
    var_offsets: Vec<u32>,
    /// Matched check socket for every variable socket.
    check_socket: Vec<u32>,
    check_of_socket: Vec<u32>,
    seed: u64,
}

impl TannerGraph {
    /// Builds a graph from explicit degree lists and a socket matching.
    pub fn from_matching(
        var_degrees: Vec<u32>,
        check_degrees: Vec<u32>,
        check_socket: Vec<u32>,
        seed: u64,
    ) -> Result<Self> {
        let ev: u64 = var_degrees.iter().map(|&d| d as u64).sum();
        let ec: u64 = check_degrees.iter().map(|&d| d as u64).sum();
        if ev != ec || ev != check_socket.len() as u64 {
            return Err(Error::UnrealizableDegreeSequence(format!(
                "{ev} variable sockets, {ec} check sockets, {} matched",
                check_socket.len()
            )));
        }
        if ev > u32::MAX as u64 {
            return Err(Error::InvalidArgument("graph too large".into()));
        }
        let mut seen = vec![false; check_socket.len()];
        for &c in &check_socket {
            let slot = seen.get_mut(c as usize).ok_or_else(|| {
                Error::InvalidArgument(format!("check socket {c} out of range"))
            })?;
            if *slot {
                return Err(Error::InvalidArgument(format!("check socket {c} matched twice")));
            }
            *slot = true;
        }
        let mut owner = Vec::with_capacity(ec as usize);
        for (c, &d) in check_degrees.iter().enumerate() {
            owner.extend(std::iter::repeat(c as u32).take(d as usize));
        }
        let check_of_socket = check_socket.iter().map(|&cs| owner[cs as usize]).collect();
        let mut var_offsets = Vec::with_capacity(var_degrees.len() + 1);
        let mut acc = 0u32;
        var_offsets.push(0);
        for &d in &var_degrees {
            acc += d;
            var_offsets.push(acc);
        }
        Ok(Self {
            var_degrees,
            check_degrees,
            var_offsets,
            check_socket,
            check_of_socket,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.var_degrees.len()
    }

    pub fn m(&self) -> usize {
        self.check_degrees.len()
    }

    pub fn edge_count(&self) -> usize {
        self.check_socket.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn var_degrees(&self) -> &[u32] {
        &self.var_degrees
    }

    pub fn check_degrees(&self) -> &[u32] {
        &self.check_degrees
    }

    /// Checks adjacent to variable `v`, with multiplicity.
    #[inline]
    pub fn checks_of(&self, v: usize) -> &[u32] {
        let lo = self.var_offsets[v] as usize;
        let hi = self.var_offsets[v + 1] as usize;
        &self.check_of_socket[lo..hi]
    }

    /// Paired sockets `(variable socket, check socket)`.
    pub fn socket_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.check_socket
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as u32, c))
    }

    /// `(variable, check)` per edge, in variable-socket order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n()).flat_map(move |v| self.checks_of(v).iter().map(move |&c| (v as u32, c)))
    }

    /// Text dump: header `n m E seed`, then one `var check` line per edge.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {} {}", self.n(), self.m(), self.edge_count(), self.seed)?;
        for (v, c) in self.edges() {
            writeln!(w, "{v} {c}")?;
        }
        Ok(())
    }

    /// Reads a dump written by [`TannerGraph::write_dump`]. Socket order
    /// within each check follows edge order in the file.
    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty graph dump".into()))??;
        let head: Vec<u64> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header field {t:?}"))))
            .collect::<Result<_>>()?;
        let [n, m, e, seed] = head[..] else {
            return Err(Error::Parse("header must be `n m E seed`".into()));
        };
        let mut edges = Vec::with_capacity(e as usize);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace().map(|t| t.parse::<u32>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(v)), Some(Ok(c)), None) if (v as u64) < n && (c as u64) < m => {
                    edges.push((v, c))
                }
                _ => return Err(Error::Parse(format!("bad edge line {line:?}"))),
            }
        }
        if edges.len() as u64 != e {
            return Err(Error::Parse(format!("header says {e} edges, found {}", edges.len())));
        }
        if edges.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(Error::Parse("edges must be sorted by variable".into()));
        }
        let mut var_degrees = vec![0u32; n as usize];
        let mut check_degrees = vec![0u32; m as usize];
        for &(v, c) in &edges {
            var_degrees[v as usize] += 1;
            check_degrees[c as usize] += 1;
        }
        let mut next = Vec::with_capacity(m as usize);
        let mut acc = 0u32;
        for &d in &check_degrees {
            next.push(acc);
            acc += d;
        }
        let check_socket = edges
            .iter()
            .map(|&(_, c)| {
                let s = next[c as usize];
                next[c as usize] += 1;
                s
            })
            .collect();
        Self::from_matching(var_degrees, check_degrees, check_socket, seed)
    }
}

/// Rounds `total * fractions` to integers summing to `total`, giving the
/// leftover units to the largest fractional parts (ties to lower index).
pub fn largest_remainder(total: u64, fractions: &[f64]) -> Vec<u64> {
    let scaled: Vec<f64> = fractions.iter().map(|&f| f * total as f64).collect();
    let mut counts: Vec<u64> = scaled.iter().map(|&x| x.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// `(degree, node count)` pairs.
pub type DegreeCounts = Vec<(u32, u64)>;

/// Per-degree node counts `(variable, check)` realizing an ensemble at
/// blocklength `n`.
///
/// Variable counts use largest-remainder rounding. Check counts start from
/// largest-remainder rounding of the ideal check population and may move
/// each degree's count by at most one so that both sides have the same
/// number of sockets; among valid adjustments the one with fewest changes
/// wins, and check-side changes are preferred over moving variables.
pub fn degree_counts<T: Scalar>(
    e: &Ensemble<T>,
    n: usize,
) -> Result<(DegreeCounts, DegreeCounts)> {
    let vfrac: Vec<(u32, f64)> = e
        .lambda()
        .node_fractions()
        .into_iter()
        .map(|(d, f)| (d, f.as_f64()))
        .collect();
    let vcounts = largest_remainder(n as u64, &vfrac.iter().map(|x| x.1).collect::<Vec<_>>());
    let edges: u64 = vfrac
        .iter()
        .zip(&vcounts)
        .map(|(&(d, _), &c)| d as u64 * c)
        .sum();

    let cfrac: Vec<(u32, f64)> = e
        .rho()
        .node_fractions()
        .into_iter()
        .map(|(d, f)| (d, f.as_f64()))
        .collect();
    let ideal_m = edges as f64 * e.rho().integral().as_f64();
    let m = ideal_m.round() as u64;
    let base = largest_remainder(m, &cfrac.iter().map(|x| x.1).collect::<Vec<_>>());
    let base_edges: i64 = cfrac
        .iter()
        .zip(&base)
        .map(|(&(d, _), &c)| d as i64 * c as i64)
        .sum();
    let deficit = edges as i64 - base_edges;

    // Cheapest adjustment of at most one node per degree that balances the
    // edge totals. Check-side moves are preferred; a variable-side move shifts
    // one node between two degrees so that n is preserved.
    let unrealizable = || {
        Error::UnrealizableDegreeSequence(format!(
            "{edges} variable sockets cannot be matched by check degrees {:?} within one node per degree",
            cfrac.iter().map(|x| x.0).collect::<Vec<_>>()
        ))
    };
    const VAR_MOVE_COST: u32 = 1000;
    // (node delta on variable side, edge offset) -> (cost, choices)
    type Table = BTreeMap<(i64, i64), (u32, Vec<i8>)>;
    let mut table: Table = BTreeMap::new();
    table.insert((0, 0), (0, Vec::new()));
    let items: Vec<(bool, u32, u64)> = vfrac
        .iter()
        .zip(&vcounts)
        .map(|(&(d, _), &c)| (true, d, c))
        .chain(cfrac.iter().zip(&base).map(|(&(d, _), &c)| (false, d, c)))
        .collect();
    for &(is_var, d, count) in &items {
        let mut next: Table = BTreeMap::new();
        for (&(nodes, offset), (cost, choice)) in &table {
            for delta in [0i8, -1, 1] {
                if delta < 0 && count == 0 {
                    continue;
                }
                let step = delta as i64 * d as i64;
                let key = if is_var {
                    (nodes + delta as i64, offset + step)
                } else {
                    (nodes, offset - step)
                };
                let c = cost
                    + delta.unsigned_abs() as u32 * if is_var { VAR_MOVE_COST } else { 1 };
                let better = next.get(&key).map_or(true, |(old, _)| c < *old);
                if better {
                    let mut ch = choice.clone();
                    ch.push(delta);
                    next.insert(key, (c, ch));
                }
            }
        }
        table = next;
    }
    let (_, choice) = table.get(&(0, -deficit)).ok_or_else(unrealizable)?;
    let adjusted: Vec<u64> = items
        .iter()
        .zip(choice)
        .map(|(&(_, _, c), &delta)| (c as i64 + delta as i64) as u64)
        .collect();
    let (vadj, cadj) = adjusted.split_at(vfrac.len());
    let ccounts: Vec<(u32, u64)> = cfrac.iter().map(|x| x.0).zip(cadj.iter().copied()).collect();
    let vcounts: Vec<(u32, u64)> = vfrac.iter().map(|x| x.0).zip(vadj.iter().copied()).collect();
    debug_assert_eq!(
        vcounts.iter().map(|&(d, c)| d as u64 * c).sum::<u64>(),
        ccounts.iter().map(|&(d, c)| d as u64 * c).sum::<u64>()
    );
    Ok((vcounts, ccounts))
}

/// Samples a graph from the configuration model: degree sequences from
/// [`degree_counts`], then a uniformly random matching of sockets.
pub fn sample_graph<T: Scalar>(e: &Ensemble<T>, n: usize, seed: u64) -> Result<TannerGraph> {
    let max_deg = e.lambda().max_degree() as usize;
    if n < max_deg.max(1) {
        return Err(Error::InvalidArgument(format!(
            "blocklength {n} below maximum variable degree {max_deg}"
        )));
    }
    let (vcounts, ccounts) = degree_counts(e, n)?;
    let expand = |counts: &[(u32, u64)]| -> Vec<u32> {
        counts
            .iter()
            .flat_map(|&(d, c)| std::iter::repeat(d).take(c as usize))
            .collect()
    };
    let var_degrees = expand(&vcounts);
    let check_degrees = expand(&ccounts);
    let edges: usize = var_degrees.iter().map(|&d| d as usize).sum();
    let mut perm: Vec<u32> = (0..edges as u32).collect();
    let mut rng = rng_from_seed(seed);
    perm.shuffle(&mut rng);
    TannerGraph::from_matching(var_degrees, check_degrees, perm, seed)
}

/// Node counts per degree on both sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeCensus {
    pub variable: BTreeMap<u32, usize>,
    pub check: BTreeMap<u32, usize>,
}

pub fn degree_census(g: &TannerGraph) -> DegreeCensus {
    let count = |degs: &[u32]| {
        let mut m = BTreeMap::new();
        for &d in degs {
            *m.entry(d).or_insert(0) += 1;
        }
        m
    };
    DegreeCensus {
        variable: count(g.var_degrees()),
        check: count(g.check_degrees()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::make_regular;

    fn e36() -> Ensemble<f64> {
        make_regular(3, 6).unwrap()
    }

    #[test]
    fn regular_small_graph() {
        let g = sample_graph(&e36(), 12, 99).unwrap();
        assert_eq!(g.n(), 12);
        assert_eq!(g.m(), 6);
        assert_eq!(g.edge_count(), 36);
        let census = degree_census(&g);
        assert_eq!(census.variable, BTreeMap::from([(3, 12)]));
        assert_eq!(census.check, BTreeMap::from([(6, 6)]));
    }

    #[test]
    fn unrealizable_regular() {
        assert!(matches!(
            sample_graph(&e36(), 13, 1),
            Err(Error::UnrealizableDegreeSequence(_))
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = sample_graph(&e36(), 120, 5).unwrap();
        let b = sample_graph(&e36(), 120, 5).unwrap();
        let c = sample_graph(&e36(), 120, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn irregular_counts_balance() {
        let e: Ensemble<f64> = "3:0.5,4:0.5/6:0.3,7:0.7".parse().unwrap();
        let mut realized = 0;
        for n in [100, 101, 997, 1000, 1001, 1002] {
            match sample_graph(&e, n, 3) {
                Ok(g) => {
                    let ev: usize = g.var_degrees().iter().map(|&d| d as usize).sum();
                    let ec: usize = g.check_degrees().iter().map(|&d| d as usize).sum();
                    assert_eq!(ev, ec);
                    assert_eq!(g.n(), n);
                    realized += 1;
                }
                Err(err) => assert!(matches!(err, Error::UnrealizableDegreeSequence(_))),
            }
        }
        assert!(realized >= 3);
    }

    #[test]
    fn census_matches_independent_rounding() {
        // lambda = 0.5 x^2 + 0.5 x^3: node fractions proportional to 0.5/3 and 0.5/4
        let e: Ensemble<f64> = "3:0.5,4:0.5/6:1".parse().unwrap();
        let f3 = (0.5 / 3.0) / (0.5 / 3.0 + 0.5 / 4.0);
        let mut checked = 0;
        for n in 600usize..660 {
            let exact3 = f3 * n as f64;
            let exact4 = (1.0 - f3) * n as f64;
            let (mut c3, mut c4) = (exact3.floor() as usize, exact4.floor() as usize);
            if c3 + c4 < n {
                if exact3.fract() >= exact4.fract() {
                    c3 += 1;
                } else {
                    c4 += 1;
                }
            }
            let Ok(g) = sample_graph(&e, n, 11) else { continue };
            let census = degree_census(&g);
            assert_eq!(census.variable.values().sum::<usize>(), n);
            assert_eq!(census.check.values().sum::<usize>(), g.m());
            if (3 * c3 + 4 * c4) % 6 == 0 {
                assert_eq!(census.variable.get(&3).copied().unwrap_or(0), c3);
                assert_eq!(census.variable.get(&4).copied().unwrap_or(0), c4);
                checked += 1;
            }
        }
        assert!(checked >= 5);
    }

    #[test]
    fn largest_remainder_sums() {
        assert_eq!(largest_remainder(10, &[0.25, 0.25, 0.5]), vec![3, 2, 5]);
        assert_eq!(largest_remainder(7, &[4.0 / 7.0, 3.0 / 7.0]), vec![4, 3]);
    }

    #[test]
    fn dump_roundtrip() {
        let g = sample_graph(&e36(), 24, 11).unwrap();
        let mut buf = Vec::new();
        g.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("24 12 72 11\n"));
        let back = TannerGraph::read_dump(buf.as_slice()).unwrap();
        assert_eq!(back.n(), g.n());
        assert_eq!(back.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
        let mut again = Vec::new();
        back.write_dump(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn seeds_are_well_mixed() {
        let s: std::collections::HashSet<u64> = (0..10_000).map(|t| mix_seed(7, t)).collect();
        assert_eq!(s.len(), 10_000);
        assert_ne!(mix_seed(7, 0), mix_seed(8, 0));
    }
}
