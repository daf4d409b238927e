//! Network generators for the families used in the experiments.
//!
//! Node ids are dense integers `0..n`. Neighbor lists are kept sorted ascending, so any
//! protocol choice that resolves ties by "lowest id" only has to take the first match.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Generator family a [`Topology`] was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Path,
    Cycle,
    Grid { rows: usize, cols: usize },
    KLink { k: usize },
    Complete,
}

impl Family {
    /// Short lowercase name used in CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            Family::Path => "path",
            Family::Cycle => "cycle",
            Family::Grid { .. } => "grid",
            Family::KLink { .. } => "klink",
            Family::Complete => "complete",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Grid { rows, cols } => write!(f, "grid({rows}x{cols})"),
            Family::KLink { k } => write!(f, "klink({k})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Immutable undirected connected graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    family: Family,
    /// Normalized `(u, v)` with `u < v`, sorted lexicographically.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from an arbitrary edge list, validating it.
    ///
    /// Rejects self-loops, duplicate edges, out-of-range endpoints and disconnected graphs.
    pub fn from_edges(
        n: usize,
        family: Family,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!(
                "topology needs at least 2 nodes, got {n}"
            )));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::NodeOutOfRange { node: a.max(b), n });
            }
            if a == b {
                return Err(Error::InvalidParameter(format!("self-loop at node {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate edge ({a}, {b})"
                )));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &set {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let topo = Topology {
            n,
            family,
            edges: set.into_iter().collect(),
            adjacency,
        };
        if !topo.is_connected() {
            return Err(Error::InvalidParameter(format!(
                "{family} topology on {n} nodes is not connected"
            )));
        }
        Ok(topo)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Sorted neighbor list of `i`.
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::NodeOutOfRange { node: i, n: self.n })
    }

    /// Unchecked variant of [`Topology::neighbors`] for hot loops; panics on a bad id.
    pub(crate) fn adj(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.n && self.adjacency[a].binary_search(&b).is_ok()
    }

    /// BFS from node 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        reached == self.n
    }

    /// Writes the edge list: a `# family n k seed` header followed by one `u v` pair per line.
    pub fn write_edge_list<W: Write>(&self, mut w: W, seed: u64) -> std::io::Result<()> {
        let k = match self.family {
            Family::KLink { k } => k,
            _ => 0,
        };
        writeln!(w, "# {} {} {} {}", self.family.name(), self.n, k, seed)?;
        for &(u, v) in &self.edges {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    }
}

pub fn make_path(n: usize) -> Result<Topology> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("path needs n >= 2, got {n}")));
    }
    Topology::from_edges(n, Family::Path, (0..n - 1).map(|i| (i, i + 1)))
}

pub fn make_cycle(n: usize) -> Result<Topology> {
    if n < 3 {
        return Err(Error::InvalidSize(format!("cycle needs n >= 3, got {n}")));
    }
    Topology::from_edges(n, Family::Cycle, cycle_edges(n))
}

fn cycle_edges(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n - 1)
        .map(|i| (i, i + 1))
        .chain(std::iter::once((n - 1, 0)))
}

/// Picks `rows` as the largest divisor of `n` not exceeding `sqrt(n)`, requiring both sides >= 2.
pub fn grid_dimensions(n: usize) -> Option<(usize, usize)> {
    if n < 4 {
        return None;
    }
    let mut rows = (n as f64).sqrt() as usize;
    while rows * rows > n {
        rows -= 1;
    }
    while (rows + 1) * (rows + 1) <= n {
        rows += 1;
    }
    (2..=rows).rev().find(|&r| n.is_multiple_of(r)).map(|r| (r, n / r))
}

/// Row-major `rows x cols` lattice with 4-neighborhoods.
pub fn make_grid(n: usize) -> Result<Topology> {
    let (rows, cols) = grid_dimensions(n).ok_or_else(|| {
        let below = (4..n).rev().find(|&m| grid_dimensions(m).is_some());
        let above = (n.max(4)..).find(|&m| grid_dimensions(m).is_some()).unwrap_or(4);
        let hint = match below {
            Some(b) if n - b <= above - n => b,
            _ => above,
        };
        Error::InvalidSize(format!(
            "grid needs n = rows*cols with rows, cols >= 2; {n} has no such factorization (nearest valid n: {hint})"
        ))
    })?;
    let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            if c + 1 < cols {
                edges.push((id, id + 1));
            }
            if r + 1 < rows {
                edges.push((id, id + cols));
            }
        }
    }
    Topology::from_edges(n, Family::Grid { rows, cols }, edges)
}

/// Largest chord count a k-link graph on `n` nodes can take.
pub fn max_chords(n: usize) -> usize {
    if n < 3 {
        0
    } else {
        n * (n - 1) / 2 - n
    }
}

/// Cycle on `n` nodes plus `k` distinct chords drawn uniformly without replacement
/// from the pairs that are not cycle edges.
pub fn make_klink<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Topology> {
    if n < 3 {
        return Err(Error::InvalidSize(format!(
            "k-link graph needs n >= 3, got {n}"
        )));
    }
    let available = max_chords(n);
    if k > available {
        return Err(Error::InvalidSize(format!(
            "k = {k} chords exceeds the {available} non-cycle pairs of a {n}-node graph"
        )));
    }
    let is_cycle_pair = |u: usize, v: usize| v == u + 1 || (u == 0 && v == n - 1);

    let chords: Vec<(usize, usize)> = if 2 * k > available {
        // Dense request: enumerate the complement of the cycle and sample indices.
        let pool: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !is_cycle_pair(u, v))
            .collect();
        let mut picked: Vec<usize> = index::sample(rng, pool.len(), k).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| pool[i]).collect()
    } else {
        // Sparse request: rejection sampling over unordered pairs stays uniform.
        let mut set = BTreeSet::new();
        while set.len() < k {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b {
                continue;
            }
            let (u, v) = (a.min(b), a.max(b));
            if !is_cycle_pair(u, v) {
                set.insert((u, v));
            }
        }
        set.into_iter().collect()
    };
    Topology::from_edges(n, Family::KLink { k }, cycle_edges(n).chain(chords))
}

pub fn make_complete(n: usize) -> Result<Topology> {
    if n < 2 {
        return Err(Error::InvalidSize(format!(
            "complete graph needs n >= 2, got {n}"
        )));
    }
    Topology::from_edges(
        n,
        Family::Complete,
        (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))),
    )
}

/// Family selector independent of node count, as used by configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilySpec {
    Path,
    Cycle,
    Grid,
    /// Cycle plus `floor(n / divisor)` chords.
    KLink {
        divisor: KDivisor,
    },
    Complete,
}

/// Divisor `d` in `k = floor(n / d)`, stored by bit pattern so [`FamilySpec`] can derive `Eq` and `Hash`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KDivisor(u64);

impl KDivisor {
    pub fn new(v: f64) -> Self {
        KDivisor(v.to_bits())
    }

    pub fn get(self) -> f64 {
        f64::from_bits(self.0)
    }
}

impl FamilySpec {
    /// The sparse k-link graph, `k = floor(n / 10)`.
    pub fn klink_sparse() -> Self {
        FamilySpec::KLink {
            divisor: KDivisor::new(10.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilySpec::Path => "path",
            FamilySpec::Cycle => "cycle",
            FamilySpec::Grid => "grid",
            FamilySpec::KLink { .. } => "klink",
            FamilySpec::Complete => "complete",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "path" => Ok(FamilySpec::Path),
            "cycle" => Ok(FamilySpec::Cycle),
            "grid" => Ok(FamilySpec::Grid),
            "klink" => Ok(FamilySpec::klink_sparse()),
            "complete" => Ok(FamilySpec::Complete),
            _ => {
                // `klink/<divisor>`, e.g. `klink/1.2` for the dense variant.
                if let Some(d) = s.strip_prefix("klink/") {
                    let divisor: f64 = d
                        .parse()
                        .map_err(|_| Error::Config(format!("bad k-link divisor in {s:?}")))?;
                    if divisor.is_finite() && divisor >= 1.0 {
                        return Ok(FamilySpec::KLink {
                            divisor: KDivisor::new(divisor),
                        });
                    }
                }
                Err(Error::Config(format!(
                    "unknown topology {s:?} (expected path, cycle, grid, klink, klink/<divisor>, complete)"
                )))
            }
        }
    }

    /// Chord count for the k-link family at size `n`.
    pub fn chords(&self, n: usize) -> usize {
        match self {
            FamilySpec::KLink { divisor } => ((n as f64) / divisor.get()).floor() as usize,
            _ => 0,
        }
    }

    pub fn build<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Topology> {
        match self {
            FamilySpec::Path => make_path(n),
            FamilySpec::Cycle => make_cycle(n),
            FamilySpec::Grid => make_grid(n),
            FamilySpec::KLink { .. } => make_klink(n, self.chords(n).min(max_chords(n)), rng),
            FamilySpec::Complete => make_complete(n),
        }
    }
}

impl fmt::Display for FamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilySpec::KLink { divisor } if divisor.get() != 10.0 => {
                write!(f, "klink/{}", divisor.get())
            }
            other => f.write_str(other.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn path_edges_and_neighbors() {
        let p = make_path(6).unwrap();
        assert_eq!(p.edges(), &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        assert_eq!(make_path(2).unwrap().edges(), &[(0, 1)]);
        let p4 = make_path(4).unwrap();
        assert_eq!(p4.neighbors(0).unwrap(), &[1]);
        assert_eq!(p4.neighbors(1).unwrap(), &[0, 2]);
        assert_eq!(p4.neighbors(2).unwrap(), &[1, 3]);
        assert_eq!(p4.neighbors(3).unwrap(), &[2]);
        assert!(matches!(make_path(1), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn cycle_shapes() {
        let c3 = make_cycle(3).unwrap();
        assert_eq!(c3.edge_count(), 3);
        assert!((0..3).all(|i| c3.degree(i) == 2));

        let c6 = make_cycle(6).unwrap();
        let mut expected = make_path(6).unwrap().edges().to_vec();
        expected.push((0, 5));
        expected.sort_unstable();
        assert_eq!(c6.edges(), expected.as_slice());

        let c100 = make_cycle(100).unwrap();
        assert_eq!(c100.edge_count(), 100);
        assert!(c100.is_connected());
        assert_eq!(make_cycle(5).unwrap().neighbors(0).unwrap(), &[1, 4]);
        assert!(make_cycle(2).is_err());
    }

    #[test]
    fn grid_dimension_rule() {
        // Oracle: enumerate every divisor of 300 and keep the largest one <= sqrt(300).
        let n = 300usize;
        let best = (1..=n).filter(|&d| n.is_multiple_of(d) && d * d <= n).max().unwrap();
        assert_eq!(best, 15);
        assert_eq!(grid_dimensions(300), Some((15, 20)));

        let g4 = make_grid(4).unwrap();
        assert_eq!(g4.edge_count(), 4);

        let g9 = make_grid(9).unwrap();
        assert_eq!(g9.family(), Family::Grid { rows: 3, cols: 3 });
        assert_eq!(g9.degree(4), 4);
        for corner in [0, 2, 6, 8] {
            assert_eq!(g9.degree(corner), 2);
        }
    }

    #[test]
    fn grid_rejects_primes_with_hint() {
        let err = make_grid(13).unwrap_err().to_string();
        assert!(err.contains("nearest valid n: 12"), "{err}");
        assert!(make_grid(3).is_err());
        assert!(make_grid(7).is_err());
    }

    #[test]
    fn grid_edge_formula() {
        for n in [4, 6, 8, 12, 50, 100, 300, 500] {
            let g = make_grid(n).unwrap();
            let Family::Grid { rows, cols } = g.family() else {
                unreachable!()
            };
            assert_eq!(rows * cols, n);
            assert_eq!(g.edge_count(), rows * (cols - 1) + cols * (rows - 1));
        }
    }

    #[test]
    fn klink_counts_and_saturation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k0 = make_klink(10, 0, &mut rng).unwrap();
        assert_eq!(k0.edges(), make_cycle(10).unwrap().edges());

        let k5 = make_klink(50, 5, &mut rng).unwrap();
        assert_eq!(k5.edge_count(), 55);

        let full = make_klink(12, max_chords(12), &mut rng).unwrap();
        assert_eq!(full.edges(), make_complete(12).unwrap().edges());

        assert!(make_klink(12, max_chords(12) + 1, &mut rng).is_err());
    }

    #[test]
    fn klink_is_reproducible() {
        let a = make_klink(80, 8, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = make_klink(80, 8, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let c = make_klink(80, 8, &mut ChaCha8Rng::seed_from_u64(43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn complete_counts() {
        assert_eq!(
            make_complete(3).unwrap().edges(),
            make_cycle(3).unwrap().edges()
        );
        assert_eq!(make_complete(5).unwrap().edge_count(), 10);
        assert_eq!(make_complete(500).unwrap().edge_count(), 124_750);
        assert_eq!(make_complete(4).unwrap().neighbors(2).unwrap(), &[0, 1, 3]);
    }

    #[test]
    fn neighbors_out_of_range() {
        let p = make_path(3).unwrap();
        assert!(matches!(
            p.neighbors(3),
            Err(Error::NodeOutOfRange { node: 3, n: 3 })
        ));
    }

    #[test]
    fn from_edges_validation() {
        assert!(Topology::from_edges(3, Family::Path, [(0, 0), (1, 2)]).is_err());
        assert!(Topology::from_edges(3, Family::Path, [(0, 1), (1, 0), (1, 2)]).is_err());
        assert!(Topology::from_edges(4, Family::Path, [(0, 1), (2, 3)]).is_err());
        assert!(Topology::from_edges(3, Family::Path, [(0, 5)]).is_err());
    }

    #[test]
    fn edge_list_dump() {
        let mut buf = Vec::new();
        make_path(3).unwrap().write_edge_list(&mut buf, 9).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# path 3 0 9\n0 1\n1 2\n");
    }

    #[test]
    fn family_spec_parsing() {
        assert_eq!(FamilySpec::parse("grid").unwrap(), FamilySpec::Grid);
        let dense = FamilySpec::parse("klink/1.2").unwrap();
        assert_eq!(dense.chords(300), 250);
        assert_eq!(FamilySpec::klink_sparse().chords(300), 30);
        assert_eq!(dense.to_string(), "klink/1.2");
        assert!(FamilySpec::parse("star").is_err());
    }
}
