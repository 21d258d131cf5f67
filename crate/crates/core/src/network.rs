//! Graphs, consensus and distributed linear-equation problems.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::flows::{check_consistent, Flow};
use crate::linalg;
use crate::objective::{least_squares_objective, quadratic_objective_with_constant, Objective};
use crate::protocols::ProtocolSum;

/// Weighted undirected graph with Laplacian `D − W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    laplacian: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct GraphSpec {
    nodes: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl TryFrom<GraphSpec> for Graph {
    type Error = Error;

    fn try_from(s: GraphSpec) -> Result<Self> {
        Graph::new(s.nodes, s.edges)
    }
}

impl From<Graph> for GraphSpec {
    fn from(g: Graph) -> Self {
        GraphSpec { nodes: g.n, edges: g.edges }
    }
}

impl Graph {
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(validation("graph needs at least one node"));
        }
        let mut w = DMatrix::zeros(n, n);
        for &(i, j, wt) in &edges {
            if i >= n || j >= n {
                return Err(validation(format!("edge ({i}, {j}) is out of range for {n} nodes")));
            }
            if i == j {
                return Err(validation(format!("self loop at node {i}")));
            }
            if !(wt > 0.0 && wt.is_finite()) {
                return Err(validation(format!("edge ({i}, {j}) has weight {wt}")));
            }
            w[(i, j)] += wt;
            w[(j, i)] += wt;
        }
        let mut laplacian = -w;
        for i in 0..n {
            let s: f64 = laplacian.row(i).sum();
            laplacian[(i, i)] = -s;
        }
        Ok(Self { n, edges, laplacian })
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0))).collect();
        Self::new(n, edges)
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Self::path(n);
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect())
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i, 1.0)).collect())
    }

    /// Lines `i,j` or `i,j,w` (zero-based); a non-numeric first line is a header.
    pub fn from_csv(path: &Path, n: usize) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).flexible(true).from_path(path)?;
        let mut edges = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.iter().all(str::is_empty) {
                continue;
            }
            let idx = |c: usize| rec.get(c).and_then(|s| s.parse::<usize>().ok());
            match (idx(0), idx(1)) {
                (Some(i), Some(j)) => {
                    let w = match rec.get(2) {
                        Some(s) => s.parse::<f64>().map_err(|e| validation(format!("bad weight {s:?}: {e}")))?,
                        None => 1.0,
                    };
                    edges.push((i, j, w));
                }
                _ if k == 0 => continue,
                _ => return Err(validation(format!("bad edge line {}", k + 1))),
            }
        }
        Self::new(n, edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Algebraic connectivity; 0 for a disconnected graph.
    pub fn lambda2(&self) -> f64 {
        if self.n == 1 {
            return 0.0;
        }
        let ev = linalg::sym_eigenvalues(&self.laplacian);
        let cut = linalg::RANK_CUTOFF * ev.last().copied().unwrap_or(0.0).max(1.0);
        let v = ev[1];
        if v > cut {
            v
        } else {
            0.0
        }
    }

    pub fn is_connected(&self) -> bool {
        self.hop_distances(0).iter().all(Option::is_some)
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| j != i && self.laplacian[(i, j)] != 0.0).collect()
    }

    /// Breadth-first hop counts from `src`.
    pub fn hop_distances(&self, src: usize) -> Vec<Option<usize>> {
        let mut d = vec![None; self.n];
        d[src] = Some(0);
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            for v in self.neighbors(u) {
                if d[v].is_none() {
                    d[v] = Some(d[u].unwrap() + 1);
                    q.push_back(v);
                }
            }
        }
        d
    }

    fn require_connected(&self) -> Result<()> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(validation("graph is not connected"))
        }
    }
}

fn require_componentwise(g: &ProtocolSum) -> Result<()> {
    if g.is_componentwise() {
        Ok(())
    } else {
        Err(Error::DistributednessViolation(g.to_string()))
    }
}

/// `½xᵀLx` with `μ = λ₂(L)`, `f* = 0` and minimizers `span{1}`.
pub fn consensus_objective(graph: &Graph) -> Result<Objective> {
    graph.require_connected()?;
    let n = graph.node_count();
    let obj = quadratic_objective_with_constant(graph.laplacian().clone(), DVector::zeros(n), 0.0)?
        .with_optimal_value(0.0)
        .with_minimizer_projection(move |x| DVector::from_element(x.len(), x.mean()));
    if n > 1 {
        obj.with_pl_constant(graph.lambda2())
    } else {
        Ok(obj)
    }
}

/// `ẋ = −g(Lx)`; agent `i` reads only its neighbors.
pub fn consensus_flow(graph: &Graph, g: ProtocolSum) -> Result<Flow> {
    require_componentwise(&g)?;
    graph.require_connected()?;
    let l = graph.laplacian().clone();
    Ok(Flow::new(format!("consensus[{g}]"), graph.node_count(), move |x, _t, s| {
        Ok(-g.eval_regularized(&(&l * x), s))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Agent `i` holds `Aᵢ ∈ ℝ^{mᵢ×n}`, `bᵢ ∈ ℝ^{mᵢ}`.
    Rows,
    /// Agent `i` holds `Aᵢ ∈ ℝ^{m×nᵢ}`, `bᵢ ∈ ℝ^m` with `Σ Aᵢxᵢ = Σ bᵢ`.
    Columns,
}

/// A linear system split across agents.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedSystem {
    pub kind: PartitionKind,
    pub a_blocks: Vec<DMatrix<f64>>,
    pub b_blocks: Vec<DVector<f64>>,
    /// Penalty weight of the row form.
    pub delta: f64,
}

impl PartitionedSystem {
    /// Splits the rows of `Ax = b` into the given groups.
    pub fn by_rows(a: &DMatrix<f64>, b: &DVector<f64>, groups: &[Vec<usize>], delta: f64) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(validation("A and b disagree in row count"));
        }
        let mut seen = vec![false; a.nrows()];
        for g in groups {
            if g.is_empty() {
                return Err(validation("empty row group"));
            }
            for &r in g {
                if r >= a.nrows() || std::mem::replace(&mut seen[r], true) {
                    return Err(validation(format!("row {r} is out of range or repeated")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(validation("row groups do not cover every row"));
        }
        let a_blocks = groups.iter().map(|g| a.select_rows(g.iter())).collect();
        let b_blocks = groups.iter().map(|g| DVector::from_iterator(g.len(), g.iter().map(|&r| b[r]))).collect();
        Self::rows(a_blocks, b_blocks, delta)
    }

    pub fn rows(a_blocks: Vec<DMatrix<f64>>, b_blocks: Vec<DVector<f64>>, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(validation(format!("delta must be positive, got {delta}")));
        }
        let s = Self { kind: PartitionKind::Rows, a_blocks, b_blocks, delta };
        s.validate()?;
        Ok(s)
    }

    pub fn columns(a_blocks: Vec<DMatrix<f64>>, b_blocks: Vec<DVector<f64>>) -> Result<Self> {
        let s = Self { kind: PartitionKind::Columns, a_blocks, b_blocks, delta: 1.0 };
        s.validate()?;
        Ok(s)
    }

    /// Reads `Aᵢ` and `bᵢ` from matrix and vector CSV files.
    pub fn from_block_files(kind: PartitionKind, blocks: &[(impl AsRef<Path>, impl AsRef<Path>)], delta: f64) -> Result<Self> {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (pa, pb) in blocks {
            a.push(crate::io::read_matrix_csv(pa.as_ref())?);
            b.push(crate::io::read_vector_csv(pb.as_ref())?);
        }
        match kind {
            PartitionKind::Rows => Self::rows(a, b, delta),
            PartitionKind::Columns => Self::columns(a, b),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.a_blocks.is_empty() || self.a_blocks.len() != self.b_blocks.len() {
            return Err(validation("need one (A_i, b_i) pair per agent"));
        }
        let a0 = &self.a_blocks[0];
        for (i, (a, b)) in self.a_blocks.iter().zip(&self.b_blocks).enumerate() {
            if a.nrows() != b.len() {
                return Err(validation(format!("agent {i}: A_i has {} rows, b_i has {}", a.nrows(), b.len())));
            }
            let same = match self.kind {
                PartitionKind::Rows => a.ncols() == a0.ncols(),
                PartitionKind::Columns => a.nrows() == a0.nrows(),
            };
            if !same || a.is_empty() {
                return Err(validation(format!("agent {i}: block shape does not conform")));
            }
        }
        Ok(())
    }

    pub fn agents(&self) -> usize {
        self.a_blocks.len()
    }

    /// The centralized system: stacked rows, or `[A₁ … A_N]x = Σ bᵢ`.
    pub fn assembled(&self) -> (DMatrix<f64>, DVector<f64>) {
        match self.kind {
            PartitionKind::Rows => {
                let n = self.a_blocks[0].ncols();
                let m: usize = self.a_blocks.iter().map(|a| a.nrows()).sum();
                let mut a = DMatrix::zeros(m, n);
                let mut r = 0;
                for blk in &self.a_blocks {
                    a.rows_mut(r, blk.nrows()).copy_from(blk);
                    r += blk.nrows();
                }
                (a, linalg::stack_vectors(&self.b_blocks))
            }
            PartitionKind::Columns => {
                let m = self.a_blocks[0].nrows();
                let n: usize = self.a_blocks.iter().map(|a| a.ncols()).sum();
                let mut a = DMatrix::zeros(m, n);
                let mut c = 0;
                for blk in &self.a_blocks {
                    a.columns_mut(c, blk.ncols()).copy_from(blk);
                    c += blk.ncols();
                }
                let b = self.b_blocks.iter().fold(DVector::zeros(m), |acc, b| acc + b);
                (a, b)
            }
        }
    }

    pub fn check_consistent(&self) -> Result<()> {
        let (a, b) = self.assembled();
        check_consistent(&a, &b)
    }

    fn block_a(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.a_blocks)
    }

    fn stacked_b(&self) -> DVector<f64> {
        linalg::stack_vectors(&self.b_blocks)
    }

    fn require(&self, kind: PartitionKind, graph: &Graph) -> Result<()> {
        if self.kind != kind {
            return Err(validation(format!("expected a {kind:?} partition")));
        }
        if graph.node_count() != self.agents() {
            return Err(validation(format!(
                "graph has {} nodes but the system has {} agents",
                graph.node_count(),
                self.agents()
            )));
        }
        graph.require_connected()
    }
}

/// `½𝐱ᵀL̂𝐱 + (δ/2)‖Â𝐱 − b̂‖²` on `ℝ^{Nn}` with `μ = λ₂(L̂ + δÂᵀÂ)`.
pub fn row_partition_objective(sys: &PartitionedSystem, graph: &Graph) -> Result<Objective> {
    sys.require(PartitionKind::Rows, graph)?;
    sys.check_consistent()?;
    let n = sys.a_blocks[0].ncols();
    let lh = linalg::kron_identity(graph.laplacian(), n);
    let ah = sys.block_a();
    let bh = sys.stacked_b();
    let d = sys.delta;
    let q = lh + ah.tr_mul(&ah) * d;
    let c = -ah.tr_mul(&bh) * d;
    Ok(quadratic_objective_with_constant(q, c, 0.5 * d * bh.norm_squared())?.with_optimal_value(0.0))
}

/// `𝐱̇ = −g(L̂𝐱 + δÂᵀ(Â𝐱 − b̂))` with componentwise `g`.
pub fn row_partition_flow(sys: &PartitionedSystem, graph: &Graph, g: ProtocolSum) -> Result<Flow> {
    require_componentwise(&g)?;
    let obj = row_partition_objective(sys, graph)?;
    let name = format!("row_partition[{g}]");
    Ok(crate::flows::first_order_flow(&obj, g).renamed(name))
}

/// Sizes of the `(𝐱, 𝐲, 𝐳)` blocks of the column form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnLayout {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl ColumnLayout {
    pub fn total(&self) -> usize {
        self.x + self.y + self.z
    }
}

fn column_parts(sys: &PartitionedSystem, graph: &Graph) -> Result<(DMatrix<f64>, DVector<f64>, ColumnLayout)> {
    sys.require(PartitionKind::Columns, graph)?;
    sys.check_consistent()?;
    let m = sys.a_blocks[0].nrows();
    let na = sys.agents();
    let ah = sys.block_a();
    let lh = linalg::kron_identity(graph.laplacian(), m);
    let lay = ColumnLayout { x: ah.ncols(), y: na * m, z: na * m };
    // residuals [𝐲 + Â𝐱 − b̂; 𝐲 + L̂𝐳]
    let mut big = DMatrix::zeros(2 * lay.y, lay.total());
    big.view_mut((0, 0), (lay.y, lay.x)).copy_from(&ah);
    big.view_mut((0, lay.x), (lay.y, lay.y)).fill_diagonal(1.0);
    big.view_mut((lay.y, lay.x), (lay.y, lay.y)).fill_diagonal(1.0);
    big.view_mut((lay.y, lay.x + lay.y), (lay.z, lay.z)).copy_from(&lh);
    let mut rhs = DVector::zeros(2 * lay.y);
    rhs.rows_mut(0, lay.y).copy_from(&sys.stacked_b());
    Ok((big, rhs, lay))
}

/// `½‖𝐲 + Â𝐱 − b̂‖² + ½‖𝐲 + L̂𝐳‖²` on the stacked `(𝐱, 𝐲, 𝐳)`.
pub fn column_partition_objective(sys: &PartitionedSystem, graph: &Graph) -> Result<(Objective, ColumnLayout)> {
    let (big, rhs, lay) = column_parts(sys, graph)?;
    Ok((least_squares_objective(&big, &rhs)?.with_optimal_value(0.0), lay))
}

/// `ẋ = −g_x(Âᵀ(𝐲 + Â𝐱 − b̂))`, `ẏ = −g_y(2𝐲 + Â𝐱 − b̂ + L̂𝐳)`,
/// `ż = −g_z(L̂(𝐲 + L̂𝐳))`.
pub fn column_partition_flow(
    sys: &PartitionedSystem,
    graph: &Graph,
    gx: ProtocolSum,
    gy: ProtocolSum,
    gz: ProtocolSum,
) -> Result<(Flow, ColumnLayout)> {
    for g in [&gx, &gy, &gz] {
        require_componentwise(g)?;
    }
    let (obj, lay) = column_partition_objective(sys, graph)?;
    let flow = Flow::new("column_partition", lay.total(), move |v, _t, s| {
        let grad = obj.gradient(v);
        let mut out = DVector::zeros(lay.total());
        out.rows_mut(0, lay.x).copy_from(&-gx.eval_regularized(&grad.rows(0, lay.x).into_owned(), s));
        out.rows_mut(lay.x, lay.y).copy_from(&-gy.eval_regularized(&grad.rows(lay.x, lay.y).into_owned(), s));
        out.rows_mut(lay.x + lay.y, lay.z)
            .copy_from(&-gz.eval_regularized(&grad.rows(lay.x + lay.y, lay.z).into_owned(), s));
        Ok(out)
    });
    Ok((flow, lay))
}

/// A zero-row-sum matrix used as `P` for the balance constraint `1ᵀx = c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchProjection {
    pub p: DMatrix<f64>,
    /// `λ₂(P)` when `P` is symmetric.
    pub lambda2_p: Option<f64>,
    /// `λ₂(PᵀP)`, the quantity in the projected bound.
    pub lambda2_ptp: f64,
    pub norm: f64,
}

pub fn dispatch_projection(p: DMatrix<f64>) -> Result<DispatchProjection> {
    if !p.is_square() || p.nrows() < 2 {
        return Err(validation("P must be square with at least two rows"));
    }
    let norm = linalg::spectral_norm(&p);
    let worst = p.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
    if worst > 1e-12 * norm.max(1.0) {
        return Err(validation(format!("P rows must sum to zero (largest |row sum| = {worst:e})")));
    }
    let lambda2_p = if linalg::is_symmetric(&p, 1e-12) { Some(linalg::lambda2(&p)?) } else { None };
    let lambda2_ptp = linalg::lambda2(&(p.transpose() * &p))?;
    Ok(DispatchProjection { p, lambda2_p, lambda2_ptp, norm })
}

/// Agent `i`'s state slots in a block layout of `width` entries per agent.
pub fn agent_slots(i: usize, width: usize) -> std::ops::Range<usize> {
    i * width..(i + 1) * width
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, IntegratorConfig};
    use crate::protocols::Protocol;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cw(alpha: f64, beta: f64) -> ProtocolSum {
        ProtocolSum::pair(Protocol::componentwise_power(alpha).unwrap(), Protocol::componentwise_power(beta).unwrap())
    }

    #[test]
    fn laplacian_and_connectivity() {
        let g = Graph::cycle(4).unwrap();
        assert!((g.lambda2() - 2.0).abs() < 1e-12);
        assert!((Graph::complete(4).unwrap().lambda2() - 4.0).abs() < 1e-12);
        assert!((Graph::path(2).unwrap().lambda2() - 2.0).abs() < 1e-12);
        let l = g.laplacian();
        assert!(linalg::is_symmetric(l, 0.0));
        for i in 0..4 {
            assert_eq!(l.row(i).sum(), 0.0);
        }
        let split = Graph::new(4, vec![(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert!(!split.is_connected());
        assert_eq!(split.lambda2(), 0.0);
        assert!(consensus_objective(&split).is_err());
        assert!(Graph::new(2, vec![(0, 0, 1.0)]).is_err());
        assert!(Graph::new(2, vec![(0, 1, -1.0)]).is_err());
    }

    #[test]
    fn graph_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "i,j,w\n0,1,2.0\n1,2\n").unwrap();
        let g = Graph::from_csv(&p, 3).unwrap();
        assert_eq!(g.laplacian()[(0, 0)], 2.0);
        assert_eq!(g.laplacian()[(1, 1)], 3.0);
        let back: Graph = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
        std::fs::write(&p, "0,1\nx,y\n").unwrap();
        assert!(Graph::from_csv(&p, 3).is_err());
    }

    #[test]
    fn consensus_examples() {
        let g = Graph::path(2).unwrap();
        let obj = consensus_objective(&g).unwrap();
        let x = dvector![1.0, -1.0];
        assert_eq!(obj.value(&x), 2.0);
        assert_eq!(obj.gradient(&x), dvector![2.0, -2.0]);
        assert_eq!(obj.pl_mu(), Some(2.0));
        let c = dvector![3.0, 3.0];
        assert_eq!(obj.value(&c), 0.0);
        let f = consensus_flow(&g, Protocol::identity().into()).unwrap();
        assert_eq!(f.eval(&x, 0.0).unwrap(), dvector![-2.0, 2.0]);
        assert_eq!(f.eval(&c, 0.0).unwrap(), dvector![0.0, 0.0]);
        assert_eq!(obj.project_to_minimizers(&x).unwrap(), dvector![0.0, 0.0]);
        let bad = ProtocolSum::from(Protocol::rescaled(0.5, 2.0).unwrap());
        assert!(matches!(consensus_flow(&g, bad), Err(Error::DistributednessViolation(_))));
    }

    #[test]
    fn consensus_settles_within_bound_on_k4() {
        let g = Graph::complete(4).unwrap();
        let obj = consensus_objective(&g).unwrap();
        let proto = cw(0.5, 2.0);
        let fc = proto.fxt_constants(4).unwrap();
        let bound = crate::bounds::consensus_bound(
            g.lambda2(),
            crate::bounds::ConsensusForm::Power { sigma: fc.sigma, rho: fc.rho, p: fc.p, q: fc.q },
        )
        .unwrap()
        .value;
        let flow = consensus_flow(&g, proto).unwrap();
        let cfg = IntegratorConfig { dt: 1e-4, t_max: 2.0 * bound, settle_tol: 1e-6, ..Default::default() };
        let tr = integrate(&flow, &dvector![3.0, -1.0, 0.5, 2.0], &obj, &Default::default(), &cfg).unwrap();
        let ts = tr.settling_time.expect("settles");
        assert!(ts <= bound * 1.05 + 0.01, "{ts} > {bound}");
    }

    fn case3_like() -> (DMatrix<f64>, DVector<f64>) {
        let a = dmatrix![
            3.0, 4.0, -3.0, -2.0, -2.0;
            1.0, -2.0, -4.0, -5.0, 3.0;
            4.0, 5.0, -2.0, -2.0, -2.0;
            0.0, -4.0, 4.0, 4.0, 4.0;
            3.0, -4.0, -3.0, 4.0, 2.0;
            5.0, -3.0, -5.0, -5.0, 2.0
        ];
        let b = dvector![2.0, 0.0, 5.0, 4.0, -5.0, -4.0];
        (a, b)
    }

    #[test]
    fn row_partition_single_agent_is_centralized() {
        let (a, b) = case3_like();
        let sys = PartitionedSystem::by_rows(&a, &b, &[(0..6).collect()], 1.0).unwrap();
        let g = Graph::new(1, vec![]).unwrap();
        let proto = cw(0.5, 1.5);
        let f = row_partition_flow(&sys, &g, proto.clone()).unwrap();
        let x = dvector![0.3, -1.0, 2.0, 0.0, 1.5];
        let want = -proto.eval(&a.tr_mul(&(&a * &x - &b)));
        assert!((f.eval(&x, 0.0).unwrap() - want).norm() < 1e-12);
    }

    #[test]
    fn row_partition_optimum_and_mu() {
        let (a, b) = case3_like();
        let groups = vec![vec![0, 1], vec![2, 3], vec![4], vec![5]];
        let sys = PartitionedSystem::by_rows(&a, &b, &groups, 1.0).unwrap();
        let g = Graph::cycle(4).unwrap();
        let obj = row_partition_objective(&sys, &g).unwrap();
        let xs = linalg::pseudo_inverse(&a) * &b;
        let stacked = linalg::stack_vectors(&vec![xs; 4]);
        assert!(obj.gradient(&stacked).norm() < 1e-9);
        assert!(obj.value(&stacked).abs() < 1e-12);
        let mu = obj.pl_mu().unwrap();
        assert!(mu > 0.0 && mu.is_finite());
        let bad = PartitionedSystem::by_rows(&a, &dvector![1.0, 0.0, 0.0, 0.0, 0.0, 9.0], &groups, 1.0).unwrap();
        assert!(matches!(row_partition_objective(&bad, &g), Err(Error::Infeasible(_))));
    }

    #[test]
    fn column_partition_single_agent_equilibrium() {
        let a = dmatrix![1.0, 2.0; 0.0, 1.0];
        let sys = PartitionedSystem::columns(vec![a.clone()], vec![dvector![3.0, 1.0]]).unwrap();
        let g = Graph::new(1, vec![]).unwrap();
        let id: ProtocolSum = Protocol::identity().into();
        let (f, lay) = column_partition_flow(&sys, &g, id.clone(), id.clone(), id).unwrap();
        // x = (1, 1) solves A x = b with y = 0; z is free because L̂ = 0
        let mut v = DVector::zeros(lay.total());
        v.rows_mut(0, 2).copy_from(&dvector![1.0, 1.0]);
        v[4] = 0.7;
        assert!(f.eval(&v, 0.0).unwrap().norm() < 1e-15);
        v[2] = 0.1;
        assert!(f.eval(&v, 0.0).unwrap().norm() > 0.0);
    }

    #[test]
    fn column_partition_converges_to_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a1 = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let a2 = DMatrix::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0));
        let b1 = dvector![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let b2 = dvector![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let sys = PartitionedSystem::columns(vec![a1.clone(), a2.clone()], vec![b1.clone(), b2.clone()]).unwrap();
        let g = Graph::path(2).unwrap();
        let proto = cw(0.7, 1.5);
        let (f, lay) = column_partition_flow(&sys, &g, proto.clone(), proto.clone(), proto).unwrap();
        let (obj, _) = column_partition_objective(&sys, &g).unwrap();
        let cfg = IntegratorConfig { dt: 1e-3, t_max: 60.0, settle_tol: 1e-8, ..Default::default() };
        let tr = integrate(&f, &DVector::zeros(lay.total()), &obj, &Default::default(), &cfg).unwrap();
        let v = tr.final_state().unwrap();
        let r = &a1 * v.rows(0, 2) + &a2 * v.rows(2, 1) - &b1 - &b2;
        assert!(r.norm() <= 1e-5, "residual {}", r.norm());
    }

    #[test]
    fn dispatch_examples() {
        let l1 = dmatrix![
            2.0, -1.0, 0.0, -1.0;
            -1.0, 2.0, -1.0, 0.0;
            0.0, -1.0, 2.0, -1.0;
            -1.0, 0.0, -1.0, 2.0
        ] / 4.0;
        let l2 = dmatrix![
            3.0, -1.0, -1.0, -1.0;
            -1.0, 3.0, -1.0, -1.0;
            -1.0, -1.0, 3.0, -1.0;
            -1.0, -1.0, -1.0, 3.0
        ] / 4.0;
        let d1 = dispatch_projection(l1).unwrap();
        assert!((d1.lambda2_p.unwrap() - 0.5).abs() < 1e-12);
        assert!((d1.norm - 1.0).abs() < 1e-12);
        let d2 = dispatch_projection(l2).unwrap();
        assert!((d2.lambda2_p.unwrap() - 1.0).abs() < 1e-12);
        assert!((d2.norm - 1.0).abs() < 1e-12);
        let pa = crate::flows::orthogonal_projector(&DMatrix::from_element(1, 4, 1.0)).unwrap();
        assert!((dispatch_projection(pa).unwrap().lambda2_p.unwrap() - 1.0).abs() < 1e-12);
        assert!(dispatch_projection(DMatrix::identity(3, 3)).is_err());
    }

    fn random_connected(n: usize, rng: &mut ChaCha8Rng) -> Graph {
        let mut edges: Vec<_> = (1..n).map(|i| (rng.random_range(0..i), i, 1.0)).collect();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.2) && !edges.iter().any(|&(a, b, _)| (a, b) == (i, j)) {
                    edges.push((i, j, rng.random_range(0.5..2.0)));
                }
            }
        }
        Graph::new(n, edges).unwrap()
    }

    /// Agent `i`'s output block must not move when an agent farther than
    /// `radius` hops is perturbed.
    fn assert_local(flow: &Flow, g: &Graph, slots: &dyn Fn(usize) -> Vec<usize>, radius: usize, x: &DVector<f64>) {
        let base = flow.eval(x, 0.3).unwrap();
        for j in 0..g.node_count() {
            let mut y = x.clone();
            for k in slots(j) {
                y[k] += 0.77;
            }
            let out = flow.eval(&y, 0.3).unwrap();
            let dist = g.hop_distances(j);
            for i in 0..g.node_count() {
                if dist[i].map_or(true, |d| d > radius) {
                    for k in slots(i) {
                        assert_eq!(out[k], base[k], "agent {i} reacts to agent {j}");
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn flows_are_structurally_local(seed in 0u64..10_000, n in 3usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_connected(n, &mut rng);
            let proto = cw(0.5, 1.5);

            let x = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let f = consensus_flow(&g, proto.clone()).unwrap();
            assert_local(&f, &g, &|i| vec![i], 1, &x);

            let dim = 3;
            let xs = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let mut a = Vec::new();
            let mut b = Vec::new();
            for _ in 0..n {
                let ai = DMatrix::from_fn(1, dim, |_, _| rng.random_range(-2.0..2.0));
                b.push(&ai * &xs);
                a.push(ai);
            }
            let sys = PartitionedSystem::rows(a, b, 1.0).unwrap();
            let f = row_partition_flow(&sys, &g, proto.clone()).unwrap();
            let x = DVector::from_fn(n * dim, |_, _| rng.random_range(-3.0..3.0));
            assert_local(&f, &g, &|i| agent_slots(i, dim).collect(), 1, &x);

            let m = 2;
            let mut a = Vec::new();
            let mut b = Vec::new();
            for _ in 0..n {
                let ai = DMatrix::from_fn(m, 1, |_, _| rng.random_range(-2.0..2.0));
                b.push(&ai * DVector::from_element(1, rng.random_range(-1.0..1.0)));
                a.push(ai);
            }
            let sys = PartitionedSystem::columns(a, b).unwrap();
            let (f, lay) = column_partition_flow(&sys, &g, proto.clone(), proto.clone(), proto).unwrap();
            let x = DVector::from_fn(lay.total(), |_, _| rng.random_range(-3.0..3.0));
            let slots = move |i: usize| {
                let mut s = vec![i];
                s.extend(agent_slots(i, m).map(|k| lay.x + k));
                s.extend(agent_slots(i, m).map(|k| lay.x + lay.y + k));
                s
            };
            // ż needs two exchanges
            assert_local(&f, &g, &slots, 2, &x);
        }
    }
}
