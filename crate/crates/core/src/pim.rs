//! Point-integral solve for the perturbed feature coordinates.
//!
//! Each feature coordinate `j` solves `(L + c W) u = c W v_j` with
//! `c = mu / lambda_tilde`, where `v_j` is the current feature column minus
//! its dual. All columns share the same matrix and preconditioner.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::sparse::{spmv, Pcg, PcgReport, SparseSym, DEFAULT_PCG_MAX_MULTS, DEFAULT_PCG_TOL};

#[derive(Debug, Clone)]
pub struct PimSystem {
    /// `L + (mu / lambda_tilde) W`
    pub a: SparseSym,
    /// `(mu / lambda_tilde) W`
    pub b: SparseSym,
    pub mu: f64,
    pub lambda_tilde: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgSettings {
    pub tol: f64,
    pub max_mults: usize,
}

impl Default for PcgSettings {
    fn default() -> Self {
        PcgSettings {
            tol: DEFAULT_PCG_TOL,
            max_mults: DEFAULT_PCG_MAX_MULTS,
        }
    }
}

pub fn assemble_system(l: &SparseSym, w: &SparseSym, mu: f64, lambda_tilde: f64) -> Result<PimSystem> {
    if !(mu > 0.0) || !(lambda_tilde > 0.0) || !mu.is_finite() || !lambda_tilde.is_finite() {
        return Err(Error::config(format!(
            "mu and lambda_tilde must be positive, got mu = {mu}, lambda_tilde = {lambda_tilde}"
        )));
    }
    if l.n() != w.n() {
        return Err(Error::structural(format!(
            "Laplacian is {0}x{0} but weights are {1}x{1}",
            l.n(),
            w.n()
        )));
    }
    let ratio = mu / lambda_tilde;
    let b = w.scaled(ratio);
    let a = l.linear_combination(1.0, &b, 1.0)?;
    Ok(PimSystem { a, b, mu, lambda_tilde })
}

#[derive(Debug, Clone)]
pub struct AlphaSolution {
    /// `N x d2`, one solved column per feature coordinate.
    pub alpha: Tensor,
    pub reports: Vec<PcgReport>,
}

impl AlphaSolution {
    pub fn max_iterations(&self) -> usize {
        self.reports.iter().map(|r| r.iterations).max().unwrap_or(0)
    }

    pub fn unconverged(&self) -> usize {
        self.reports.iter().filter(|r| !r.converged).count()
    }
}

/// Solves every column of `targets` (`N x d2`).
///
/// Each solve starts from its own right-hand-side target, which is exact for
/// constant columns. Columns that hit the multiplication cap keep their best
/// iterate and are reported, not rejected.
pub fn solve_alpha(system: &PimSystem, targets: &Tensor, settings: PcgSettings) -> Result<AlphaSolution> {
    if targets.shape().len() != 2 || targets.rows() != system.a.n() {
        return Err(Error::structural(format!(
            "targets must be {} x d2, got {:?}",
            system.a.n(),
            targets.shape()
        )));
    }
    let d2 = targets.row_len();
    let pcg = Pcg::new(&system.a, settings.tol, settings.max_mults)?;
    let columns: Vec<(Vec<f64>, PcgReport)> = (0..d2)
        .into_par_iter()
        .map(|j| {
            let v = targets.column(j);
            let rhs = spmv(&system.b, &v)?;
            pcg.solve(&rhs, Some(&v))
        })
        .collect::<Result<_>>()?;

    let mut alpha = Tensor::zeros(targets.shape());
    let mut reports = Vec::with_capacity(d2);
    for (j, (u, report)) in columns.into_iter().enumerate() {
        alpha.set_column(j, &u);
        reports.push(report);
    }
    let solution = AlphaSolution { alpha, reports };
    let missed = solution.unconverged();
    if missed > 0 {
        log::warn!(
            "{missed} of {d2} coordinate solves stopped at the {}-multiplication cap",
            settings.max_mults
        );
    }
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ManifoldGraph, PointCloud};
    use crate::sparse::csr_from_triplets;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, seed: u64) -> ManifoldGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let cloud = PointCloud::new(&x, 3, &f, 2, &labels).unwrap();
        ManifoldGraph::build(&cloud, 10.min(n / 2 - 1), true, 5).unwrap()
    }

    fn random_targets(n: usize, d2: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, d2], (0..n * d2).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dense(m: &SparseSym) -> DMatrix<f64> {
        DMatrix::from_row_slice(m.n(), m.n(), &m.to_dense())
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        let i = SparseSym::identity(2);
        assert!(matches!(assemble_system(&i, &i, 0.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(assemble_system(&i, &i, 1.0, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn single_point_system() {
        let l = csr_from_triplets(1, &[(0, 0, 0.0)]).unwrap();
        let w = SparseSym::identity(1);
        let sys = assemble_system(&l, &w, 0.01, 0.05).unwrap();
        assert!((sys.a.get(0, 0).unwrap() - 0.2).abs() < 1e-15);
        assert!((sys.b.get(0, 0).unwrap() - 0.2).abs() < 1e-15);
        let v = Tensor::new(vec![1, 3], vec![1.5, -2.0, 0.25]).unwrap();
        let sol = solve_alpha(&sys, &v, PcgSettings::default()).unwrap();
        for (a, b) in sol.alpha.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_node_off_diagonals_cancel_at_unit_ratio() {
        let w_off = 0.3;
        let w = csr_from_triplets(2, &[(0, 0, 1.0), (1, 1, 1.0), (0, 1, w_off), (1, 0, w_off)]).unwrap();
        let l = crate::graph::graph_laplacian(&w);
        let sys = assemble_system(&l, &w, 0.5, 0.5).unwrap();
        // L + W = [[w + 1, 0], [0, w + 1]]
        let expect = [1.0 + w_off, 0.0, 0.0, 1.0 + w_off];
        for (a, b) in sys.a.to_dense().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn assembly_matches_dense() {
        let g = random_graph(40, 3);
        let (mu, lt) = (0.01, 0.05);
        let sys = assemble_system(&g.laplacian, &g.weights, mu, lt).unwrap();
        let expect = dense(&g.laplacian) + dense(&g.weights) * (mu / lt);
        let got = dense(&sys.a);
        assert!((got - expect).abs().max() <= 1e-12);
    }

    #[test]
    fn constant_columns_are_fixed_points() {
        let g = random_graph(50, 4);
        let sys = assemble_system(&g.laplacian, &g.weights, 0.01, 0.05).unwrap();
        let mut v = Tensor::zeros(&[50, 3]);
        for i in 0..50 {
            v.row_mut(i).copy_from_slice(&[1.0, -4.0, 0.0]);
        }
        let sol = solve_alpha(&sys, &v, PcgSettings::default()).unwrap();
        for (a, b) in sol.alpha.data().iter().zip(v.data()) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn matches_dense_direct_solve() {
        let n = 100;
        let g = random_graph(n, 5);
        let sys = assemble_system(&g.laplacian, &g.weights, 0.01, 0.05).unwrap();
        let v = random_targets(n, 4, 6);
        let sol = solve_alpha(&sys, &v, PcgSettings::default()).unwrap();
        let lu = dense(&sys.a).lu();
        let b = dense(&sys.b);
        for j in 0..4 {
            let rhs = &b * DVector::from_vec(v.column(j));
            let oracle = lu.solve(&rhs).unwrap();
            let got = DVector::from_vec(sol.alpha.column(j));
            let err = (got - &oracle).norm() / oracle.norm();
            assert!(err <= 1e-6, "column {j}: relative error {err}");
        }
    }

    #[test]
    fn large_ratio_keeps_targets() {
        let g = random_graph(60, 8);
        let sys = assemble_system(&g.laplacian, &g.weights, 1e6, 1.0).unwrap();
        let v = random_targets(60, 2, 9);
        let sol = solve_alpha(&sys, &v, PcgSettings::default()).unwrap();
        let vmax = v.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diff = sol
            .alpha
            .data()
            .iter()
            .zip(v.data())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-3 * vmax);
    }

    #[test]
    fn wrong_target_shape() {
        let g = random_graph(20, 1);
        let sys = assemble_system(&g.laplacian, &g.weights, 1.0, 1.0).unwrap();
        assert!(solve_alpha(&sys, &Tensor::zeros(&[19, 2]), PcgSettings::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn solve_lowers_the_quadratic_objective(seed in 0u64..1000, ratio in 0.01f64..1.0) {
            let n = 40;
            let g = random_graph(n, seed);
            let sys = assemble_system(&g.laplacian, &g.weights, ratio, 1.0).unwrap();
            let v = random_targets(n, 1, seed + 7);
            let sol = solve_alpha(&sys, &v, PcgSettings::default()).unwrap();
            let u = sol.alpha.column(0);
            let vv = v.column(0);
            let objective = |x: &[f64]| {
                let lx = spmv(&g.laplacian, x).unwrap();
                let diff: Vec<f64> = x.iter().zip(&vv).map(|(a, b)| a - b).collect();
                let wd = spmv(&g.weights, &diff).unwrap();
                x.iter().zip(&lx).map(|(a, b)| a * b).sum::<f64>()
                    + ratio * diff.iter().zip(&wd).map(|(a, b)| a * b).sum::<f64>()
            };
            prop_assert!(objective(&u) <= objective(&vv) + 1e-7);
        }

        #[test]
        fn column_permutation_commutes(seed in 0u64..1000) {
            let n = 30;
            let g = random_graph(n, seed);
            let sys = assemble_system(&g.laplacian, &g.weights, 0.01, 0.05).unwrap();
            let v = random_targets(n, 3, seed);
            let perm = [2usize, 0, 1];
            let mut pv = Tensor::zeros(&[n, 3]);
            for (dst, &src) in perm.iter().enumerate() {
                pv.set_column(dst, &v.column(src));
            }
            let a = solve_alpha(&sys, &v, PcgSettings::default()).unwrap();
            let b = solve_alpha(&sys, &pv, PcgSettings::default()).unwrap();
            for (dst, &src) in perm.iter().enumerate() {
                prop_assert_eq!(b.alpha.column(dst), a.alpha.column(src));
            }
        }
    }
}
