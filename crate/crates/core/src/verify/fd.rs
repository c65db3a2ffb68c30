//! Finite-difference solve of `0 = −(q/λ)Ψ + fᵀ∇Ψ + ½Tr(∇²Ψ Σ_t)` on a
//! uniform mesh of a box, with `Ψ = ψ` on the box faces and at pinned points.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::VerifyError;
use crate::hjb::HjbProblem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSolution {
    /// Node coordinates per axis.
    pub axes: Vec<Vec<f64>>,
    /// `Ψ_FD` at node `Σ_d i_d N^d`.
    pub values: Vec<f64>,
    pub dirichlet: Vec<bool>,
    /// Largest `|(AΨ − b)_i| / |A_ii|` over the interior rows.
    pub residual: f64,
    /// `max |Ψ_h − Ψ_h'|` over the nodes shared with a grid of half or
    /// double the spacing.
    pub discretization_error: f64,
    /// Nodes where `Ψ_FD ≤ 0`.
    pub nonpositive: Vec<usize>,
    pub lambda: f64,
}

impl GridSolution {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn per_axis(&self) -> usize {
        self.axes[0].len()
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        let n = self.per_axis();
        let mut k = k;
        self.axes
            .iter()
            .map(|a| {
                let v = a[k % n];
                k /= n;
                v
            })
            .collect()
    }

    /// Node index of `x`, if `x` is a node.
    pub fn node_of(&self, x: &[f64]) -> Option<usize> {
        let n = self.per_axis();
        let mut k = 0;
        let mut stride = 1;
        for (a, &v) in self.axes.iter().zip(x) {
            let h = a[1] - a[0];
            let i = ((v - a[0]) / h).round();
            if i < 0.0 || i as usize >= n || (a[0] + i * h - v).abs() > 1e-9 * h {
                return None;
            }
            k += i as usize * stride;
            stride *= n;
        }
        Some(k)
    }

    /// `V_FD = −λ ln Ψ_FD` at node `k`.
    pub fn value_function(&self, k: usize) -> f64 {
        -self.lambda * self.values[k].ln()
    }

    /// Multilinear interpolation of `Ψ_FD`; `None` outside the mesh.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let n = self.per_axis();
        let mut cell = Vec::with_capacity(x.len());
        for (a, &v) in self.axes.iter().zip(x) {
            let h = a[1] - a[0];
            let t = (v - a[0]) / h;
            if t < -1e-9 || t > (n - 1) as f64 + 1e-9 {
                return None;
            }
            let i = (t.floor().max(0.0) as usize).min(n - 2);
            cell.push((i, (t - i as f64).clamp(0.0, 1.0)));
        }
        let d = x.len();
        let mut out = 0.0;
        for corner in 0..(1usize << d) {
            let mut k = 0;
            let mut stride = 1;
            let mut w = 1.0;
            for (axis, &(i, t)) in cell.iter().enumerate() {
                let up = (corner >> axis) & 1 == 1;
                k += (i + up as usize) * stride;
                w *= if up { t } else { 1.0 - t };
                stride *= n;
            }
            out += w * self.values[k];
        }
        Some(out)
    }

    /// Columns `<axes>, psi, v`.
    pub fn write_csv<W: Write>(&self, names: &[String], out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = names.to_vec();
        header.push("psi".into());
        header.push("v".into());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row: Vec<String> = self.point(k).iter().map(f64::to_string).collect();
            row.push(self.values[k].to_string());
            row.push(self.value_function(k).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Square matrix stored by diagonals within `±width` of the main one.
struct Banded {
    n: usize,
    width: usize,
    data: Vec<f64>,
}

impl Banded {
    fn new(n: usize, width: usize) -> Self {
        Banded { n, width, data: vec![0.0; n * (2 * width + 1)] }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.width + 1) + (j + self.width - i)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.width < i || j > i + self.width {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.width);
                let hi = (i + self.width).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// In-place LU without pivoting; fill stays inside the band. Adequate
    /// for the diagonally dominant systems assembled below.
    fn factor(mut self) -> Result<Self, VerifyError> {
        let (n, w) = (self.n, self.width);
        for k in 0..n {
            let pivot = self.data[self.idx(k, k)];
            if !(pivot.abs() > 1e-300) {
                return Err(VerifyError::Singular(k));
            }
            let hi = (k + w).min(n - 1);
            for i in k + 1..=hi {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                let (row_k, row_i) = (self.idx(k, k), self.idx(i, k));
                for off in 1..=hi - k {
                    self.data[row_i + off] -= l * self.data[row_k + off];
                }
            }
        }
        Ok(self)
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, w) = (self.n, self.width);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(w);
            let s: f64 = (lo..i).map(|j| self.data[self.idx(i, j)] * y[j]).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let hi = (i + w).min(n - 1);
            let s: f64 = (i + 1..=hi).map(|j| self.data[self.idx(i, j)] * y[j]).sum();
            y[i] = (y[i] - s) / self.data[self.idx(i, i)];
        }
        y
    }
}

struct Mesh {
    axes: Vec<Vec<f64>>,
    per_axis: usize,
}

impl Mesh {
    fn len(&self) -> usize {
        self.per_axis.pow(self.axes.len() as u32)
    }

    fn multi(&self, k: usize) -> Vec<usize> {
        let mut k = k;
        (0..self.axes.len())
            .map(|_| {
                let i = k % self.per_axis;
                k /= self.per_axis;
                i
            })
            .collect()
    }

    fn point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().zip(&self.axes).map(|(&i, a)| a[i]).collect()
    }

    fn stride(&self, d: usize) -> usize {
        self.per_axis.pow(d as u32)
    }
}

/// Discrete solve on `per_axis` nodes per axis; returns values, Dirichlet
/// mask and the scaled residual.
fn solve_on(prob: &HjbProblem, bounds: &[(f64, f64)], per_axis: usize) -> Result<(Mesh, Vec<f64>, Vec<bool>, f64), VerifyError> {
    let n = prob.n();
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| (0..per_axis).map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64).collect())
        .collect();
    let h: Vec<f64> = bounds.iter().map(|&(lo, hi)| (hi - lo) / (per_axis - 1) as f64).collect();
    let mesh = Mesh { axes, per_axis };
    let total = mesh.len();
    let mixed = (0..n).any(|i| (0..n).any(|j| i != j && !prob.sigma_t.get(i, j).is_zero()));
    let width = if n == 1 { 1 } else { mesh.stride(n - 1) + if mixed { 1 } else { 0 } };

    let mut pinned: Vec<Option<f64>> = vec![None; total];
    for p in &prob.boundary.point_constraints {
        let idx: Option<Vec<usize>> = p
            .point
            .iter()
            .zip(bounds)
            .zip(&h)
            .map(|((&v, &(lo, _)), &hd)| {
                let i = ((v - lo) / hd).round();
                (i >= 0.0 && (i as usize) < per_axis && (lo + i * hd - v).abs() <= 1e-9 * hd).then_some(i as usize)
            })
            .collect();
        let idx = idx.ok_or_else(|| VerifyError::Mesh(format!("pinned point {:?} is not a mesh node at {per_axis} per axis", p.point)))?;
        let k: usize = idx.iter().enumerate().map(|(d, &i)| i * mesh.stride(d)).sum();
        pinned[k] = Some(p.value);
    }

    let comps = prob.boundary.components();
    let mut a = Banded::new(total, width);
    let mut rhs = vec![0.0; total];
    let mut dirichlet = vec![false; total];
    for k in 0..total {
        let idx = mesh.multi(k);
        let x = mesh.point(&idx);
        if !prob.domain.contains(&x, 1e-9) {
            return Err(VerifyError::Mesh(format!("node {x:?} lies outside the domain; the oracle needs a box")));
        }
        let on_face = idx.iter().any(|&i| i == 0 || i == per_axis - 1);
        if on_face || pinned[k].is_some() {
            let value = match pinned[k] {
                Some(v) => v,
                None => {
                    let c = (0..comps.len())
                        .min_by(|&i, &j| comps[i].eval_f64(&x).abs().total_cmp(&comps[j].eval_f64(&x).abs()))
                        .ok_or_else(|| VerifyError::Mesh("no boundary components".into()))?;
                    (-prob.phi[c].eval_f64(&x) / prob.lambda).exp()
                }
            };
            a.add(k, k, 1.0);
            rhs[k] = value;
            dirichlet[k] = true;
            continue;
        }
        let f = prob.f.eval(&x);
        let s = prob.sigma_t.eval(&x);
        a.add(k, k, -prob.q.eval_f64(&x) / prob.lambda);
        for d in 0..n {
            let (diff, drift, hd, st) = (0.5 * s[(d, d)], f[(d, 0)], h[d], mesh.stride(d));
            let (lo, hi) = (k - st, k + st);
            let dd = diff / (hd * hd);
            if drift.abs() * hd <= 2.0 * diff {
                a.add(k, hi, dd + drift / (2.0 * hd));
                a.add(k, lo, dd - drift / (2.0 * hd));
                a.add(k, k, -2.0 * dd);
            } else if drift > 0.0 {
                a.add(k, hi, dd + drift / hd);
                a.add(k, lo, dd);
                a.add(k, k, -2.0 * dd - drift / hd);
            } else {
                a.add(k, hi, dd);
                a.add(k, lo, dd - drift / hd);
                a.add(k, k, -2.0 * dd + drift / hd);
            }
            for e in d + 1..n {
                let c = s[(d, e)];
                if c == 0.0 {
                    continue;
                }
                let w = c / (4.0 * hd * h[e]);
                let se = mesh.stride(e);
                a.add(k, k + st + se, w);
                a.add(k, k - st - se, w);
                a.add(k, k + st - se, -w);
                a.add(k, k - st + se, -w);
            }
        }
        if a.get(k, k) == 0.0 {
            return Err(VerifyError::Mesh(format!("degenerate stencil at {x:?}: no diffusion, drift or cost")));
        }
    }

    let diag: Vec<f64> = (0..total).map(|k| a.get(k, k)).collect();
    let matrix = Banded { n: a.n, width: a.width, data: a.data.clone() };
    let lu = a.factor()?;
    let mut psi = lu.solve(&rhs);
    let scaled = |psi: &[f64]| -> (Vec<f64>, f64) {
        let r: Vec<f64> = matrix.apply(psi).iter().zip(&rhs).map(|(ax, b)| b - ax).collect();
        let worst = r.iter().zip(&diag).map(|(ri, di)| (ri / di).abs()).fold(0.0, f64::max);
        (r, worst)
    };
    // One refinement step against the assembled matrix.
    let (r, _) = scaled(&psi);
    let corr = lu.solve(&r);
    psi.iter_mut().zip(&corr).for_each(|(p, c)| *p += c);
    let (_, residual) = scaled(&psi);
    Ok((mesh, psi, dirichlet, residual))
}

/// Oracle on `per_axis` nodes per axis (odd, so a symmetric box has a node
/// at its centre). The discretization error is estimated against the grid
/// of double spacing, or half spacing when the pinned points miss it.
pub fn solve_pde_fd(prob: &HjbProblem, per_axis: usize) -> Result<GridSolution, VerifyError> {
    let n = prob.n();
    if n > 2 {
        return Err(VerifyError::Dimension(n));
    }
    if prob.uncertainty.is_some() {
        return Err(VerifyError::Uncertain);
    }
    if per_axis < 5 {
        return Err(VerifyError::Mesh(format!("need at least 5 nodes per axis, got {per_axis}")));
    }
    let bounds = prob.domain.bounds().ok_or_else(|| VerifyError::Mesh("domain is not bounded on every axis".into()))?;
    let (mesh, values, dirichlet, residual) = solve_on(prob, &bounds, per_axis)?;

    let coarse = if per_axis % 2 == 1 { solve_on(prob, &bounds, per_axis.div_ceil(2)).ok() } else { None };
    let discretization_error = match coarse {
        Some((cm, cv, _, _)) => (0..cm.len())
            .map(|k| {
                let idx: Vec<usize> = cm.multi(k).iter().map(|i| 2 * i).collect();
                let fine: usize = idx.iter().enumerate().map(|(d, &i)| i * mesh.stride(d)).sum();
                (values[fine] - cv[k]).abs()
            })
            .fold(0.0, f64::max),
        None => {
            let (fm, fv, _, _) = solve_on(prob, &bounds, 2 * per_axis - 1)?;
            (0..mesh.len())
                .map(|k| {
                    let idx: Vec<usize> = mesh.multi(k).iter().map(|i| 2 * i).collect();
                    let fine: usize = idx.iter().enumerate().map(|(d, &i)| i * fm.stride(d)).sum();
                    (values[k] - fv[fine]).abs()
                })
                .fold(0.0, f64::max)
        }
    };
    let nonpositive = values.iter().enumerate().filter(|(_, v)| !(**v > 0.0)).map(|(k, _)| k).collect();
    Ok(GridSolution { axes: mesh.axes, values, dirichlet, residual, discretization_error, nonpositive, lambda: prob.lambda })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(drift: &str, cost: &str, phi_left: f64, phi_right: f64) -> HjbProblem {
        let json = format!(
            r#"{{
            "name": "toy", "variables": ["x"], "mode": "path_planning",
            "drift": ["{drift}"], "input": [["1"]], "noise": [["1"]],
            "sigma_eps": [[1.0]], "state_cost": "{cost}", "control_penalty": [[1.0]],
            "domain": ["1 - x^2"],
            "boundary": {{"components": [{{"h": "x + 1", "phi": {phi_left}}}, {{"h": "1 - x", "phi": {phi_right}}}]}}
        }}"#
        );
        HjbProblem::from_json(&json).unwrap()
    }

    #[test]
    fn constant_data_gives_constant_solution() {
        let p = problem("0", "0", 2.0, 2.0);
        let g = solve_pde_fd(&p, 101).unwrap();
        let c = (-2.0f64).exp();
        assert!(g.values.iter().all(|v| (v - c).abs() < 1e-13));
        assert!(g.residual < 1e-12);
        assert!(g.discretization_error < 1e-13);
    }

    #[test]
    fn harmonic_data_is_linear() {
        let p = problem("0", "0", 0.0, 1.0);
        let g = solve_pde_fd(&p, 201).unwrap();
        let (a, b) = (1.0, (-1.0f64).exp());
        for k in 0..g.len() {
            let x = g.point(k)[0];
            assert!((g.values[k] - (a + (b - a) * (x + 1.0) / 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_closed_form_with_cost() {
        // ½Ψ'' = Ψ on [−1, 1] with Ψ(±1) = 1 gives cosh(√2 x)/cosh(√2).
        let p = problem("0", "1", 0.0, 0.0);
        let g = solve_pde_fd(&p, 1001).unwrap();
        let r2 = 2f64.sqrt();
        let err = (0..g.len()).map(|k| (g.values[k] - (r2 * g.point(k)[0]).cosh() / r2.cosh()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        // Second order: the double-spacing comparison is about 3× the true error.
        assert!(g.discretization_error > err && g.discretization_error < 10.0 * err, "{} vs {err}", g.discretization_error);
    }

    #[test]
    fn drift_dominated_rows_upwind() {
        // Ψ' dominated by drift: the M-matrix structure keeps Ψ within the boundary data.
        let p = problem("-50*x", "x^2", 1.0, 2.0);
        let g = solve_pde_fd(&p, 101).unwrap();
        let hi = (-1.0f64).exp();
        assert!(g.values.iter().all(|&v| v > 0.0 && v <= hi + 1e-12));
        assert!(g.nonpositive.is_empty());
    }

    #[test]
    fn two_dimensional_constant() {
        let json = r#"{
            "name": "toy2", "variables": ["x", "y"], "mode": "path_planning",
            "drift": ["0", "0"], "input": [["1", "0"], ["0", "1"]], "noise": [["1", "0"], ["0", "1"]],
            "sigma_eps": [[1.0, 0.5], [0.5, 1.0]], "state_cost": "0", "control_penalty": [[1.3333333333333333, -0.6666666666666666], [-0.6666666666666666, 1.3333333333333333]],
            "domain": ["1 - x^2", "1 - y^2"],
            "boundary": {"components": [{"h": "1 - x^2", "phi": 1.0}, {"h": "1 - y^2", "phi": 1.0}]}
        }"#;
        let p = HjbProblem::from_json(json).unwrap();
        let g = solve_pde_fd(&p, 21).unwrap();
        assert!(g.values.iter().all(|v| (v - (-1.0f64).exp()).abs() < 1e-12));
        assert_eq!(g.point(21 + 3), vec![-1.0 + 0.3, -1.0 + 0.1]);
        assert_eq!(g.node_of(&[-0.7, -0.9]), Some(24));
        assert!((g.interpolate(&[0.05, 0.0]).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn banded_lu_solves() {
        let mut a = Banded::new(4, 1);
        for i in 0..4 {
            a.add(i, i, 4.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
            if i < 3 {
                a.add(i, i + 1, -1.5);
            }
        }
        let x = [1.0, -2.0, 0.5, 3.0];
        let b = a.apply(&x);
        let lu = a.factor().unwrap();
        let y = lu.solve(&b);
        assert!(x.iter().zip(&y).all(|(u, v)| (u - v).abs() < 1e-14));
    }
}
