//! Homogeneous self-dual primal–dual interior-point method.
//!
//! The embedding adds `τ, κ ≥ 0` to the primal–dual pair so a single path
//! following run ends either at an optimal pair (`τ > 0`) or at a ray
//! certifying primal or dual infeasibility (`κ > 0`). Directions use
//! Nesterov–Todd scaling with a Mehrotra predictor–corrector.
//!
//! The normal equations `A W A*` are block diagonal over groups of
//! constraints that share PSD blocks; coefficient-matching rows of different
//! SOS constraints never share a Gram matrix, so each group is factored on
//! its own and the coupling through free variables is resolved by a small
//! dense saddle-point system.

use log::{debug, info};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, LU, SVD};

use super::{
    add_sym, kkt_residuals, SdpBackend, SdpError, SdpProblem, SdpSolution, SdpStatus,
    SolverOptions,
};

/// Cap on iterative refinement sweeps per reduced solve.
const REFINE_STEPS: usize = 40;

/// The embedded solver.
#[derive(Clone, Copy, Debug, Default)]
pub struct InteriorPoint;

impl SdpBackend for InteriorPoint {
    fn solve(&self, prob: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
        prob.validate()?;
        let layout = Layout::new(prob);
        let mut solver = Solver::new(prob, &layout, opts);
        Ok(solver.run())
    }
}

struct Group {
    rows: Vec<usize>,
    /// Per block in the group: (block, entries as (local row, r, c, value)).
    blocks: Vec<(usize, Vec<(usize, usize, usize, f64)>)>,
    /// Free variables touched by the group's rows and by no other row.
    local_cols: Vec<usize>,
    /// The remaining free variables touched by the group's rows.
    shared_cols: Vec<usize>,
    /// Dense `B` restricted to `rows x local_cols`.
    b_local: DMatrix<f64>,
    /// Dense `B` restricted to `rows x shared_cols`.
    b_shared: DMatrix<f64>,
}

struct Layout {
    groups: Vec<Group>,
    /// Rows with no block entries.
    free_rows: Vec<usize>,
    /// Position of each free variable in the reduced saddle system, `None`
    /// for variables eliminated inside their group.
    global: Vec<Option<usize>>,
    nglobal: usize,
}

impl Layout {
    fn new(prob: &SdpProblem) -> Self {
        let nb = prob.blocks.len();
        // Union-find over blocks; rows join the blocks they touch.
        let mut parent: Vec<usize> = (0..nb).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for c in &prob.constraints {
            let mut it = c.block_entries.iter().map(|e| e.block);
            if let Some(first) = it.next() {
                let r0 = find(&mut parent, first);
                for b in it {
                    let r = find(&mut parent, b);
                    if r != r0 {
                        parent[r] = r0;
                    }
                }
            }
        }
        let mut root_to_group = vec![usize::MAX; nb];
        let mut groups: Vec<Group> = Vec::new();
        let mut free_rows = Vec::new();
        let mut row_local = vec![0usize; prob.constraints.len()];
        for (i, c) in prob.constraints.iter().enumerate() {
            let Some(first) = c.block_entries.first() else {
                free_rows.push(i);
                continue;
            };
            let root = find(&mut parent, first.block);
            if root_to_group[root] == usize::MAX {
                root_to_group[root] = groups.len();
                groups.push(Group {
                    rows: Vec::new(),
                    blocks: Vec::new(),
                    local_cols: Vec::new(),
                    shared_cols: Vec::new(),
                    b_local: DMatrix::zeros(0, 0),
                    b_shared: DMatrix::zeros(0, 0),
                });
            }
            let g = &mut groups[root_to_group[root]];
            row_local[i] = g.rows.len();
            g.rows.push(i);
        }
        // Number of groups touching each free variable; free-only rows count
        // as a group of their own.
        let mut touched = vec![0usize; prob.num_free];
        let mut group_cols: Vec<Vec<usize>> = Vec::with_capacity(groups.len());
        for g in groups.iter_mut() {
            let mut block_pos: std::collections::BTreeMap<usize, usize> = Default::default();
            let mut free_pos: std::collections::BTreeSet<usize> = Default::default();
            for &i in &g.rows {
                let c = &prob.constraints[i];
                for e in &c.block_entries {
                    let pos = *block_pos.entry(e.block).or_insert_with(|| {
                        g.blocks.push((e.block, Vec::new()));
                        g.blocks.len() - 1
                    });
                    g.blocks[pos].1.push((row_local[i], e.row, e.col, e.value));
                }
                free_pos.extend(c.free_entries.iter().map(|&(v, _)| v));
            }
            for &v in &free_pos {
                touched[v] += 1;
            }
            group_cols.push(free_pos.into_iter().collect());
        }
        for &i in &free_rows {
            for &(v, _) in &prob.constraints[i].free_entries {
                touched[v] += 2;
            }
        }
        let mut global = vec![None; prob.num_free];
        let mut nglobal = 0;
        for v in 0..prob.num_free {
            if touched[v] != 1 {
                global[v] = Some(nglobal);
                nglobal += 1;
            }
        }
        for (g, cols) in groups.iter_mut().zip(group_cols) {
            (g.local_cols, g.shared_cols) = cols.into_iter().partition(|&v| touched[v] == 1);
            let dense = |cols: &[usize]| {
                let col_of: std::collections::BTreeMap<usize, usize> = cols.iter().enumerate().map(|(j, &v)| (v, j)).collect();
                let mut b = DMatrix::zeros(g.rows.len(), cols.len());
                for (li, &i) in g.rows.iter().enumerate() {
                    for &(v, a) in &prob.constraints[i].free_entries {
                        if let Some(&j) = col_of.get(&v) {
                            b[(li, j)] += a;
                        }
                    }
                }
                b
            };
            g.b_local = dense(&g.local_cols);
            g.b_shared = dense(&g.shared_cols);
        }
        Layout { groups, free_rows, global, nglobal }
    }
}

/// NT scaling of one block: `W = G Gᵀ`, `G⁻¹ X G⁻ᵀ = Gᵀ Z G = diag(λ)`.
struct BlockScaling {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    lambda: DVector<f64>,
}

fn nt_scaling(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<BlockScaling> {
    let lx = Cholesky::new(x.clone())?.unpack();
    let lz = Cholesky::new(z.clone())?.unpack();
    let prod = lz.transpose() * &lx;
    let svd = SVD::new(prod, true, true);
    let v = svd.v_t.as_ref()?.transpose();
    let lambda = svd.singular_values.clone();
    if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return None;
    }
    let n = x.nrows();
    let mut g = &lx * &v;
    let mut g_inv_t = lx.clone();
    // G = Lx V Λ^{-1/2};  G⁻¹ = Λ^{1/2} Vᵀ Lx⁻¹.
    for j in 0..n {
        let s = lambda[j].sqrt();
        for i in 0..n {
            g[(i, j)] /= s;
        }
    }
    let lx_inv = lx.clone().try_inverse()?;
    g_inv_t.copy_from(&(v.transpose() * lx_inv));
    for i in 0..n {
        let s = lambda[i].sqrt();
        for j in 0..n {
            g_inv_t[(i, j)] *= s;
        }
    }
    let w = &g * g.transpose();
    Some(BlockScaling { g, g_inv: g_inv_t, w, lambda })
}

/// Largest `α <= 1/frac`-style step with `Λ + α D ⪰ 0`, returned unclipped
/// (may be `+∞`).
fn max_step(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let mut m = d.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] /= (lambda[i] * lambda[j]).sqrt();
        }
    }
    let m = 0.5 * (&m + m.transpose());
    let min = SymmetricEigen::new(m).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min
    }
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    u: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Residuals {
    rp: DVector<f64>,
    rd: Vec<DMatrix<f64>>,
    rf: DVector<f64>,
    rg: f64,
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
    du: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

/// One group's block of the normal equations with its local free variables
/// `t` eliminated: `[M B_t; B_tᵀ 0]` solved through `M` and
/// `S_t = B_tᵀ M⁻¹ B_t`.
struct GroupFactor {
    chol: Cholesky<f64, Dyn>,
    /// `M⁻¹ B_t`.
    minv_bt: DMatrix<f64>,
    st: Option<Cholesky<f64, Dyn>>,
    /// Response `(y, t)` of the local system to the shared columns `B_s`.
    y_shared: DMatrix<f64>,
    t_shared: DMatrix<f64>,
}

impl GroupFactor {
    /// Solves `M y + B_t t = r`, `B_tᵀ y = h`.
    fn solve(&self, g: &Group, r: &DMatrix<f64>, h: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let w = self.chol.solve(r);
        let Some(st) = &self.st else {
            return (w, DMatrix::zeros(0, r.ncols()));
        };
        let t = st.solve(&(g.b_local.transpose() * &w - h));
        let y = w - &self.minv_bt * &t;
        (y, t)
    }
}

/// Factored normal equations for one iteration.
struct Factorization {
    groups: Vec<GroupFactor>,
    /// NT scaling matrices `W` per block, for applying the exact operator.
    w: Vec<DMatrix<f64>>,
    /// Absent when there are no shared free variables or free-only rows.
    saddle: Option<LU<f64, Dyn, Dyn>>,
}

/// Cholesky of `m + shift I`, raising the shift from `reg · max diag` until
/// it succeeds or exceeds `1e-2 · max diag`.
fn shifted_cholesky(m: &DMatrix<f64>, reg: f64) -> Option<Cholesky<f64, Dyn>> {
    let diag_max = m.diagonal().iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut shift = reg * diag_max;
    loop {
        let mut mr = m.clone();
        for i in 0..mr.nrows() {
            mr[(i, i)] += shift;
        }
        if let Some(ch) = Cholesky::new(mr) {
            return Some(ch);
        }
        shift = if shift == 0.0 { 1e-14 * diag_max } else { shift * 100.0 };
        if shift > 1e-2 * diag_max {
            return None;
        }
    }
}

struct Solver<'a> {
    prob: &'a SdpProblem,
    layout: &'a Layout,
    opts: &'a SolverOptions,
    b: DVector<f64>,
    c_free: DVector<f64>,
    c_mats: Vec<DMatrix<f64>>,
    /// Dense `B` over all rows (only used for residuals/refinement).
    nrows: usize,
    nfree: usize,
    degree: f64,
}

impl<'a> Solver<'a> {
    fn new(prob: &'a SdpProblem, layout: &'a Layout, opts: &'a SolverOptions) -> Self {
        Solver {
            prob,
            layout,
            opts,
            b: DVector::from_vec(prob.rhs()),
            c_free: DVector::from_column_slice(&prob.objective_free),
            c_mats: prob.objective_matrices(),
            nrows: prob.constraints.len(),
            nfree: prob.num_free,
            degree: prob.blocks.iter().sum::<usize>() as f64 + 1.0,
        }
    }

    fn a_op(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.nrows,
            self.prob
                .constraints
                .iter()
                .map(|c| c.block_entries.iter().map(|e| e.value * x[e.block][(e.row, e.col)]).sum::<f64>()),
        )
    }

    fn b_op(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.nrows,
            self.prob.constraints.iter().map(|c| c.free_entries.iter().map(|&(v, a)| a * u[v]).sum::<f64>()),
        )
    }

    fn a_adj(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut mats: Vec<DMatrix<f64>> = self.prob.blocks.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        for (c, &yi) in self.prob.constraints.iter().zip(y.iter()) {
            if yi == 0.0 {
                continue;
            }
            for e in &c.block_entries {
                add_sym(&mut mats[e.block], e.row, e.col, yi * e.value);
            }
        }
        mats
    }

    fn bt_op(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nfree);
        for (c, &yi) in self.prob.constraints.iter().zip(y.iter()) {
            for &(v, a) in &c.free_entries {
                out[v] += a * yi;
            }
        }
        out
    }

    fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let rp = self.a_op(&it.x) + self.b_op(&it.u) - &self.b * it.tau;
        let aty = self.a_adj(&it.y);
        let rd = aty
            .into_iter()
            .zip(&it.z)
            .zip(&self.c_mats)
            .map(|((a, z), c)| a + z - c * it.tau)
            .collect();
        let rf = self.bt_op(&it.y) - &self.c_free * it.tau;
        let rg = Self::inner(&self.c_mats, &it.x) + self.c_free.dot(&it.u) - self.b.dot(&it.y) + it.kappa;
        Residuals { rp, rd, rf, rg }
    }

    fn factor(&self, scalings: &[BlockScaling]) -> Option<Factorization> {
        let reg = self.opts.regularization;
        let ng = self.layout.nglobal;
        let mut groups = Vec::with_capacity(self.layout.groups.len());
        let mut s_mat = DMatrix::<f64>::zeros(ng, ng);
        for g in &self.layout.groups {
            let m = schur_block(g, scalings);
            let chol = shifted_cholesky(&m, reg)?;
            let minv_bt = chol.solve(&g.b_local);
            let st = if g.local_cols.is_empty() { None } else { Some(shifted_cholesky(&(g.b_local.transpose() * &minv_bt), reg)?) };
            let mut f = GroupFactor { chol, minv_bt, st, y_shared: DMatrix::zeros(0, 0), t_shared: DMatrix::zeros(0, 0) };
            let (y, t) = f.solve(g, &g.b_shared, &DMatrix::zeros(g.local_cols.len(), g.shared_cols.len()));
            let s_local = g.b_shared.transpose() * &y;
            let idx: Vec<usize> = g.shared_cols.iter().map(|&v| self.layout.global[v].expect("shared")).collect();
            for (a, &va) in idx.iter().enumerate() {
                for (b, &vb) in idx.iter().enumerate() {
                    s_mat[(va, vb)] += s_local[(a, b)];
                }
            }
            f.y_shared = y;
            f.t_shared = t;
            groups.push(f);
        }
        let nz = self.layout.free_rows.len();
        let n = ng + nz;
        let mut k = DMatrix::<f64>::zeros(n, n);
        let s_scale = s_mat.diagonal().iter().cloned().fold(1.0, f64::max);
        for i in 0..ng {
            for j in 0..ng {
                k[(i, j)] = -s_mat[(i, j)];
            }
            k[(i, i)] -= reg * s_scale;
        }
        for (zi, &row) in self.layout.free_rows.iter().enumerate() {
            for &(v, a) in &self.prob.constraints[row].free_entries {
                let v = self.layout.global[v].expect("free-only rows touch shared variables");
                k[(ng + zi, v)] += a;
                k[(v, ng + zi)] += a;
            }
            k[(ng + zi, ng + zi)] += reg;
        }
        let saddle = (n > 0).then(|| LU::new(k));
        Some(Factorization { groups, w: scalings.iter().map(|s| s.w.clone()).collect(), saddle })
    }

    /// Solves `[M B; Bᵀ 0] [y; u] = [hy; hu]` with iterative refinement.
    fn ksolve(&self, f: &Factorization, hy: &DVector<f64>, hu: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (mut y, mut u) = self.ksolve_once(f, hy, hu);
        let scale = hy.amax().max(hu.amax()).max(1e-300);
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            let (ry, ru) = self.kapply(f, &y, &u);
            let ey = hy - ry;
            let eu = hu - ru;
            let err = ey.amax().max(eu.amax()) / scale;
            if err <= 1e-15 || err > 0.5 * last {
                break;
            }
            last = err;
            let (dy, du) = self.ksolve_once(f, &ey, &eu);
            y += dy;
            u += du;
        }
        (y, u)
    }

    /// `[A(W A*(y) W) + B u; Bᵀ y]`, evaluated without the formed `M`.
    fn kapply(&self, f: &Factorization, y: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let aty = self.a_adj(y);
        let waw: Vec<DMatrix<f64>> = aty.iter().zip(&f.w).map(|(a, w)| w * a * w).collect();
        (self.a_op(&waw) + self.b_op(u), self.bt_op(y))
    }

    fn ksolve_once(&self, f: &Factorization, hy: &DVector<f64>, hu: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let ng = self.layout.nglobal;
        let nz = self.layout.free_rows.len();
        let mut rhs = DVector::zeros(ng + nz);
        for (v, gv) in self.layout.global.iter().enumerate() {
            if let Some(gv) = gv {
                rhs[*gv] = hu[v];
            }
        }
        let mut local = Vec::with_capacity(self.layout.groups.len());
        for (g, gf) in self.layout.groups.iter().zip(&f.groups) {
            let r = DMatrix::from_iterator(g.rows.len(), 1, g.rows.iter().map(|&r| hy[r]));
            let h = DMatrix::from_iterator(g.local_cols.len(), 1, g.local_cols.iter().map(|&v| hu[v]));
            let (y, t) = gf.solve(g, &r, &h);
            let bty = g.b_shared.transpose() * &y;
            for (a, &v) in g.shared_cols.iter().enumerate() {
                rhs[self.layout.global[v].expect("shared")] -= bty[(a, 0)];
            }
            local.push((y, t));
        }
        for (zi, &row) in self.layout.free_rows.iter().enumerate() {
            rhs[ng + zi] = hy[row];
        }
        let sol = f.saddle.as_ref().and_then(|lu| lu.solve(&rhs)).unwrap_or_else(|| DVector::zeros(ng + nz));
        let mut u = DVector::zeros(self.nfree);
        for (v, gv) in self.layout.global.iter().enumerate() {
            if let Some(gv) = gv {
                u[v] = sol[*gv];
            }
        }
        let mut y = DVector::zeros(self.nrows);
        for (zi, &row) in self.layout.free_rows.iter().enumerate() {
            y[row] = sol[ng + zi];
        }
        for ((g, gf), (yl, tl)) in self.layout.groups.iter().zip(&f.groups).zip(local) {
            let us = DMatrix::from_iterator(g.shared_cols.len(), 1, g.shared_cols.iter().map(|&v| u[v]));
            let yl = yl - &gf.y_shared * &us;
            let tl = tl - &gf.t_shared * &us;
            for (li, &r) in g.rows.iter().enumerate() {
                y[r] = yl[(li, 0)];
            }
            for (a, &v) in g.local_cols.iter().enumerate() {
                u[v] = tl[(a, 0)];
            }
        }
        (y, u)
    }

    /// One Newton solve. `rc[k]` is the right side of `ΔX + W ΔZ W = rc`.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        it: &Iterate,
        res: &Residuals,
        sc: &[BlockScaling],
        f: &Factorization,
        eta: f64,
        rc: &[DMatrix<f64>],
        d_tau: f64,
    ) -> Direction {
        let nb = self.prob.blocks.len();
        let wrw: Vec<DMatrix<f64>> = (0..nb).map(|k| &sc[k].w * (&res.rd[k] * eta) * &sc[k].w).collect();
        let base: Vec<DMatrix<f64>> = (0..nb).map(|k| &rc[k] + &wrw[k]).collect();
        let hy1 = -(&res.rp * eta) - self.a_op(&base);
        let hu1 = -(&res.rf * eta);
        let wcw: Vec<DMatrix<f64>> = (0..nb).map(|k| &sc[k].w * &self.c_mats[k] * &sc[k].w).collect();
        let hy2 = &self.b + self.a_op(&wcw);
        let hu2 = self.c_free.clone();
        let (py, pu) = self.ksolve(f, &hy1, &hu1);
        let (qy, qu) = self.ksolve(f, &hy2, &hu2);
        let ap = self.a_adj(&py);
        let aq = self.a_adj(&qy);
        let x1: Vec<DMatrix<f64>> = (0..nb).map(|k| &base[k] + &sc[k].w * &ap[k] * &sc[k].w).collect();
        let x2: Vec<DMatrix<f64>> = (0..nb).map(|k| &sc[k].w * &aq[k] * &sc[k].w - &wcw[k]).collect();
        let denom = Self::inner(&self.c_mats, &x2) + self.c_free.dot(&qu) - self.b.dot(&qy) - it.kappa / it.tau;
        let num = -eta * res.rg - Self::inner(&self.c_mats, &x1) - self.c_free.dot(&pu) + self.b.dot(&py) - d_tau / it.tau;
        let dtau = if denom.abs() > 1e-300 { num / denom } else { 0.0 };
        let dy = &py + &qy * dtau;
        let du = &pu + &qu * dtau;
        let dx: Vec<DMatrix<f64>> = (0..nb).map(|k| sym(&(&x1[k] + &x2[k] * dtau))).collect();
        let ady = self.a_adj(&dy);
        let dz: Vec<DMatrix<f64>> =
            (0..nb).map(|k| sym(&(-(&res.rd[k] * eta) - &ady[k] + &self.c_mats[k] * dtau))).collect();
        let dkappa = (d_tau - it.kappa * dtau) / it.tau;
        Direction { dx, dz, dy, du, dtau, dkappa }
    }

    fn step_length(&self, it: &Iterate, sc: &[BlockScaling], d: &Direction) -> f64 {
        let mut alpha = f64::INFINITY;
        for (k, s) in sc.iter().enumerate() {
            let dxs = &s.g_inv * &d.dx[k] * s.g_inv.transpose();
            let dzs = s.g.transpose() * &d.dz[k] * &s.g;
            alpha = alpha.min(max_step(&s.lambda, &dxs)).min(max_step(&s.lambda, &dzs));
        }
        if d.dtau < 0.0 {
            alpha = alpha.min(-it.tau / d.dtau);
        }
        if d.dkappa < 0.0 {
            alpha = alpha.min(-it.kappa / d.dkappa);
        }
        alpha
    }

    fn run(&mut self) -> SdpSolution {
        let nb = self.prob.blocks.len();
        let mut it = Iterate {
            x: self.prob.blocks.iter().map(|&s| DMatrix::identity(s, s)).collect(),
            z: self.prob.blocks.iter().map(|&s| DMatrix::identity(s, s)).collect(),
            y: DVector::zeros(self.nrows),
            u: DVector::zeros(self.nfree),
            tau: 1.0,
            kappa: 1.0,
        };
        let bnorm = self.b.amax();
        let cnorm = self.c_free.amax().max(self.c_mats.iter().map(|m| m.amax()).fold(0.0, f64::max));
        let opts = self.opts;
        let mut status = SdpStatus::Stalled;
        let mut iterations = 0;
        let mut small_steps = 0;
        let mut best: Option<(f64, Iterate)> = None;

        for iter in 0..opts.max_iterations {
            iterations = iter;
            let res = self.residuals(&it);
            let mu = (Self::inner(&it.x, &it.z) + it.tau * it.kappa) / self.degree;
            let pres = res.rp.amax() / it.tau / (1.0 + bnorm);
            let dres = res.rd.iter().map(|m| m.amax()).fold(res.rf.amax(), f64::max) / it.tau / (1.0 + cnorm);
            let pobj = (Self::inner(&self.c_mats, &it.x) + self.c_free.dot(&it.u)) / it.tau;
            let dobj = self.b.dot(&it.y) / it.tau;
            let compl = Self::inner(&it.x, &it.z) / (it.tau * it.tau);
            let gap = (pobj - dobj).abs().max(compl) / (1.0 + pobj.abs() + dobj.abs());
            if opts.verbose {
                info!(
                    "iter {iter:3}  pobj {pobj:+.6e}  dobj {dobj:+.6e}  gap {gap:.2e}  pres {pres:.2e}  dres {dres:.2e}  tau {:.2e}  kappa {:.2e}",
                    it.tau, it.kappa
                );
            } else {
                debug!("iter {iter:3}  gap {gap:.2e}  pres {pres:.2e}  dres {dres:.2e}");
            }
            let merit = pres.max(dres).max(gap);
            if best.as_ref().is_none_or(|(m, _)| merit < *m) {
                best = Some((merit, clone_iterate(&it)));
            }
            if pres <= opts.feasibility_tol && dres <= opts.feasibility_tol && gap <= opts.gap_tol {
                status = SdpStatus::Optimal;
                break;
            }
            // Infeasibility rays (τ → 0 relative to the ray's scale).
            let by = self.b.dot(&it.y);
            if by > 0.0 {
                let ray_res = res.rd.iter().zip(&self.c_mats).map(|(r, c)| (r + c * it.tau).amax()).fold(0.0, f64::max);
                let ray_free = (&res.rf + &self.c_free * it.tau).amax();
                if ray_res.max(ray_free) <= opts.infeasibility_tol * by && it.tau <= 1e-3 * it.kappa.max(1.0) {
                    status = SdpStatus::Infeasible;
                    break;
                }
            }
            let cx = Self::inner(&self.c_mats, &it.x) + self.c_free.dot(&it.u);
            if cx < 0.0 {
                let ray_res = (&res.rp + &self.b * it.tau).amax();
                if ray_res <= opts.infeasibility_tol * (-cx) && it.tau <= 1e-3 * it.kappa.max(1.0) {
                    status = SdpStatus::Unbounded;
                    break;
                }
            }

            let Some(sc) = (0..nb).map(|k| nt_scaling(&it.x[k], &it.z[k])).collect::<Option<Vec<_>>>() else {
                debug!("NT scaling failed at iteration {iter}");
                break;
            };
            let Some(fact) = self.factor(&sc) else {
                debug!("normal equations not factorizable at iteration {iter}");
                break;
            };

            // Predictor.
            let rc_aff: Vec<DMatrix<f64>> = sc.iter().map(|s| -(&s.g * DMatrix::from_diagonal(&s.lambda) * s.g.transpose())).collect();
            let d_aff = self.direction(&it, &res, &sc, &fact, 1.0, &rc_aff, -it.tau * it.kappa);
            let a_aff = self.step_length(&it, &sc, &d_aff).min(1.0);
            let sigma = (1.0 - a_aff).powi(3).clamp(1e-8, 1.0);

            // Corrector.
            let rc: Vec<DMatrix<f64>> = sc
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let n = s.lambda.len();
                    let dxs = &s.g_inv * &d_aff.dx[k] * s.g_inv.transpose();
                    let dzs = s.g.transpose() * &d_aff.dz[k] * &s.g;
                    let corr = 0.5 * (&dxs * &dzs + &dzs * &dxs);
                    let mut r = -corr;
                    for i in 0..n {
                        r[(i, i)] += sigma * mu - s.lambda[i] * s.lambda[i];
                    }
                    let mut mc = DMatrix::zeros(n, n);
                    for i in 0..n {
                        for j in 0..n {
                            mc[(i, j)] = 2.0 * r[(i, j)] / (s.lambda[i] + s.lambda[j]);
                        }
                    }
                    let mc = sym(&mc);
                    &s.g * mc * s.g.transpose()
                })
                .collect();
            let d_tau_c = sigma * mu - it.tau * it.kappa - d_aff.dtau * d_aff.dkappa;
            let d = self.direction(&it, &res, &sc, &fact, 1.0 - sigma, &rc, d_tau_c);
            let a_max = self.step_length(&it, &sc, &d);
            let alpha = (opts.step_fraction * a_max).min(1.0);
            if !alpha.is_finite() || alpha < 1e-10 {
                small_steps += 1;
                if small_steps >= 3 {
                    debug!("step length collapsed at iteration {iter}");
                    break;
                }
                continue;
            }
            small_steps = 0;
            for k in 0..nb {
                it.x[k] = sym(&(&it.x[k] + &d.dx[k] * alpha));
                it.z[k] = sym(&(&it.z[k] + &d.dz[k] * alpha));
            }
            it.y += &d.dy * alpha;
            it.u += &d.du * alpha;
            it.tau += d.dtau * alpha;
            it.kappa += d.dkappa * alpha;
            // Keep the embedding scale bounded.
            let scale = it.tau.max(it.kappa);
            if scale > 1e6 || scale < 1e-6 {
                rescale(&mut it, 1.0 / scale);
            }
            iterations = iter + 1;
        }

        let it = if status == SdpStatus::Stalled { best.map(|(_, b)| b).unwrap_or(it) } else { it };
        self.finish(it, status, iterations)
    }

    fn finish(&self, it: Iterate, status: SdpStatus, iterations: usize) -> SdpSolution {
        let (scale, dual_scale) = match status {
            SdpStatus::Optimal | SdpStatus::Stalled => (1.0 / it.tau, 1.0 / it.tau),
            SdpStatus::Infeasible => {
                let by = self.b.dot(&it.y);
                (1.0, if by > 0.0 { 1.0 / by } else { 1.0 })
            }
            SdpStatus::Unbounded => {
                let cx = Self::inner(&self.c_mats, &it.x) + self.c_free.dot(&it.u);
                (if cx < 0.0 { -1.0 / cx } else { 1.0 }, 1.0)
            }
        };
        let mut sol = SdpSolution {
            status,
            y: (it.u * scale).iter().copied().collect(),
            block_matrices: it.x.iter().map(|m| m * scale).collect(),
            dual: (it.y * dual_scale).iter().copied().collect(),
            dual_slacks: it.z.iter().map(|m| m * dual_scale).collect(),
            primal_objective: 0.0,
            dual_objective: 0.0,
            kkt_residuals: Default::default(),
            iterations,
        };
        sol.primal_objective = self.prob.primal_objective(&sol.block_matrices, &sol.y);
        sol.dual_objective = self.prob.constraints.iter().zip(&sol.dual).map(|(c, y)| c.rhs * y).sum();
        sol.kkt_residuals = kkt_residuals(self.prob, &sol);
        sol
    }
}

fn clone_iterate(it: &Iterate) -> Iterate {
    Iterate { x: it.x.clone(), z: it.z.clone(), y: it.y.clone(), u: it.u.clone(), tau: it.tau, kappa: it.kappa }
}

fn rescale(it: &mut Iterate, s: f64) {
    for m in it.x.iter_mut().chain(it.z.iter_mut()) {
        *m *= s;
    }
    it.y *= s;
    it.u *= s;
    it.tau *= s;
    it.kappa *= s;
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// `M_ij = <A_i, W A_j W>` over the group's blocks.
fn schur_block(g: &Group, sc: &[BlockScaling]) -> DMatrix<f64> {
    let m = g.rows.len();
    let mut out = DMatrix::<f64>::zeros(m, m);
    for (block, entries) in &g.blocks {
        let w = &sc[*block].w;
        let n = w.nrows() as f64;
        let mut by_row: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> = Default::default();
        for &(r, a, b, v) in entries {
            by_row.entry(r).or_default().push((a, b, v));
        }
        let e = entries.len() as f64;
        // The dense route runs at matrix-product speed, roughly an order of
        // magnitude faster per operation than scattered pair updates.
        if by_row.len() as f64 * n * n * n < 16.0 * e * e {
            schur_dense(&by_row, w, &mut out);
        } else {
            schur_pairs(entries, w, &mut out);
        }
    }
    out
}

/// Forms `W A_j W` densely per row `j` and reads `<A_i, ·>` off it.
fn schur_dense(by_row: &std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>>, w: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    let n = w.nrows();
    let mut v = DMatrix::<f64>::zeros(n, n);
    for (&rj, aj) in by_row {
        // v = W A_j, column by column.
        v.fill(0.0);
        for &(a, b, val) in aj {
            if a == b {
                v.column_mut(a).axpy(val, &w.column(a), 1.0);
            } else {
                v.column_mut(b).axpy(0.5 * val, &w.column(a), 1.0);
                v.column_mut(a).axpy(0.5 * val, &w.column(b), 1.0);
            }
        }
        let y = &v * w;
        for (&ri, ai) in by_row {
            let s: f64 = ai.iter().map(|&(a, b, val)| if a == b { val * y[(a, a)] } else { 0.5 * val * (y[(a, b)] + y[(b, a)]) }).sum();
            out[(ri, rj)] += s;
        }
    }
}

/// Sums `½ v₁ v₂ (W_ac W_bd + W_ad W_bc)` over pairs of entries.
fn schur_pairs(entries: &[(usize, usize, usize, f64)], w: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    for (i1, e1) in entries.iter().enumerate() {
        let (r1, a, b, v1) = *e1;
        for e2 in &entries[i1..] {
            let (r2, c, d, v2) = *e2;
            let val = 0.5 * v1 * v2 * (w[(a, c)] * w[(b, d)] + w[(a, d)] * w[(b, c)]);
            out[(r1, r2)] += val;
            if !std::ptr::eq(e1, e2) {
                out[(r2, r1)] += val;
            }
        }
    }
}
