mod common;

use common::*;
use fairreg_core::constraint::{
    constrain_compressed, constrain_explicit, constrain_intersectional, reference, ZMatrix, ZVector,
};
use fairreg_core::data::{synth_beta_demo, GroupPair, SynthParams};
use fairreg_core::groupmass::empirical_masses;
use fairreg_core::kernelgp::{
    difference_covariance, fit_constrained, fit_unconstrained, ConstrainedKernelSystem, Kernel,
    KernelRegression, SignedMeasure,
};
use fairreg_core::linalg::Matrix;
use fairreg_core::Error;
use nalgebra::{DMatrix, DVector};

#[test]
fn compressed_matches_dense_bordered_system() {
    for (k, l) in [2usize, 3, 5, 17, 64, 128]
        .iter()
        .cycle()
        .take(30)
        .enumerate()
    {
        let inst = random_instance(*l, 3, 100 + k as u64);
        for sigma2 in [0.0, 0.5, 2.0] {
            for remove_prior in [true, false] {
                let fast = constrain_compressed(&inst.tree, &inst.z, sigma2, remove_prior).unwrap();
                let dense =
                    reference::compressed_dense(&inst.tree, &inst.z, sigma2, remove_prior).unwrap();
                let d = max_abs_diff(fast.leaf_values(), &dense);
                assert!(d <= 1e-8, "L={l} σ²={sigma2} diff {d}");
            }
        }
    }
}

#[test]
fn explicit_matches_dense_row_level_system() {
    for k in 0..10u64 {
        let l = 2 + (k as usize * 7) % 40;
        let inst = random_instance(l, 12, 200 + k);
        assert!(inst.data.len() <= 500);
        for sigma2 in [0.1, 1.0, 3.0] {
            let fast = constrain_explicit(&inst.tree, &inst.z, sigma2).unwrap();
            let dense = reference::explicit_dense(&inst.tree, &inst.data, &inst.z, sigma2).unwrap();
            let d = max_abs_diff(fast.leaf_values(), &dense);
            assert!(d <= 1e-8, "L={l} n={} diff {d}", inst.data.len());
        }
    }
}

#[test]
fn explicit_two_leaf_example_against_five_by_five_system() {
    // four observations and one constraint row, solved with nalgebra
    let y = [1.0, 1.0, -1.0, -1.0];
    let mut m = DMatrix::<f64>::zeros(5, 5);
    for i in 0..4 {
        m[(0, i + 1)] = if i < 2 { 0.5 } else { -0.5 };
        m[(i + 1, 0)] = m[(0, i + 1)];
        for k in 0..4 {
            if (i < 2) == (k < 2) {
                m[(i + 1, k + 1)] = 1.0;
            }
        }
        m[(i + 1, i + 1)] += 1.0;
    }
    let rhs = DVector::from_vec(vec![0.0, y[0], y[1], y[2], y[3]]);
    let alpha = m.lu().solve(&rhs).unwrap();
    let want = [alpha[1] + alpha[2], alpha[3] + alpha[4]];
    let tree =
        fairreg_core::tree::RegressionTree::piecewise_1d(&[0.0], &[1.0, -1.0], &[2, 2]).unwrap();
    let z = ZVector::new(vec![0.5, -0.5], None).unwrap();
    let got = constrain_explicit(&tree, &z, 1.0).unwrap();
    assert!(max_abs_diff(got.leaf_values(), &want) < 1e-12);
}

#[test]
fn unit_counts_make_representations_agree() {
    for k in 0..20u64 {
        let inst = random_instance(2 + k as usize * 5, 1, 300 + k);
        for sigma2 in [0.25, 1.0, 4.0] {
            let c = constrain_compressed(&inst.tree, &inst.z, sigma2, false).unwrap();
            let e = constrain_explicit(&inst.tree, &inst.z, sigma2).unwrap();
            assert!(max_abs_diff(c.leaf_values(), e.leaf_values()) <= 1e-10);
        }
    }
}

/// min Σ_j c_j (f_j − t_j)² s.t. zᵀf = 0, solved as a dense KKT system, with
/// `t_j = m_j ȳ_j/(m_j+σ²)` and `c_j = (m_j+σ²)/m_j` computed from the rows.
fn weighted_ls_oracle(inst: &Instance, sigma2: f64) -> Vec<f64> {
    let l = inst.tree.n_leaves();
    let mut sums = vec![0.0; l];
    let mut m = vec![0.0; l];
    for i in 0..inst.data.len() {
        let j = inst.tree.leaf_of(inst.data.row(i)).unwrap();
        sums[j] += inst.data.targets()[i];
        m[j] += 1.0;
    }
    let mut kkt = DMatrix::<f64>::zeros(l + 1, l + 1);
    let mut rhs = DVector::<f64>::zeros(l + 1);
    for j in 0..l {
        let c = (m[j] + sigma2) / m[j];
        let t = sums[j] / (m[j] + sigma2);
        kkt[(j, j)] = 2.0 * c;
        kkt[(j, l)] = inst.z.entries()[j];
        kkt[(l, j)] = inst.z.entries()[j];
        rhs[j] = 2.0 * c * t;
    }
    let sol = kkt.lu().solve(&rhs).unwrap();
    sol.as_slice()[..l].to_vec()
}

#[test]
fn explicit_is_weighted_least_squares_projection() {
    for k in 0..50u64 {
        let l = 2 + (k as usize * 13) % 60;
        let inst = random_instance(l, 8, 400 + k);
        let sigma2 = 0.2 + (k % 5) as f64 * 0.7;
        let got = constrain_explicit(&inst.tree, &inst.z, sigma2).unwrap();
        let want = weighted_ls_oracle(&inst, sigma2);
        let d = max_abs_diff(got.leaf_values(), &want);
        assert!(d <= 1e-8, "instance {k}: {d}");
    }
}

#[test]
fn tree_kernel_regression_matches_compressed_with_prior() {
    for k in 0..15u64 {
        let l = 2 + (k as usize * 9) % 50;
        let inst = random_instance(l, 4, 500 + k);
        let q = SignedMeasure::from_groups(&inst.data, &GroupPair::new(qa(), qb())).unwrap();
        let kernel = Kernel::Tree(inst.tree.clone());
        let inputs =
            Matrix::from_rows(&(0..l).map(|j| vec![j as f64]).collect::<Vec<_>>()).unwrap();
        for sigma2 in [0.3, 1.0] {
            let gp = fit_constrained(
                kernel.clone(),
                inputs.clone(),
                inst.tree.leaf_means(),
                q.clone(),
                sigma2,
            )
            .unwrap();
            let fast = constrain_compressed(&inst.tree, &inst.z, sigma2, false).unwrap();
            for j in 0..l {
                let d = (gp.predict_mean(&[j as f64]).unwrap() - fast.leaf_values()[j]).abs();
                assert!(d <= 1e-8, "L={l} leaf {j}: {d}");
            }
        }
    }
}

#[test]
fn tree_kernel_quadrature_row_is_z() {
    let inst = random_instance(9, 5, 7);
    let q = SignedMeasure::from_groups(&inst.data, &GroupPair::new(qa(), qb())).unwrap();
    let kernel = Kernel::Tree(inst.tree.clone());
    for j in 0..9 {
        let r = fairreg_core::kernelgp::quadrature_row(&kernel, &q, &[j as f64]).unwrap();
        assert!((r - inst.z.entries()[j]).abs() < 1e-14);
    }
    let corner = fairreg_core::kernelgp::quadrature_corner(&kernel, &q).unwrap();
    assert!((corner - inst.z.sq_norm()).abs() < 1e-14);
}

fn demo_gp(
    sigma2: f64,
) -> (
    ConstrainedKernelSystem,
    ConstrainedKernelSystem,
    SignedMeasure,
) {
    let mut p = SynthParams::with_default_shapes(40, 6.0, 9.0, 3);
    p.noise_std = 0.1;
    let d = synth_beta_demo(&p).unwrap();
    let q = SignedMeasure::from_groups(&d, &GroupPair::new(qa(), qb())).unwrap();
    let k = Kernel::rbf(vec![0.15], 1.0).unwrap();
    let c = fit_constrained(
        k.clone(),
        d.features().clone(),
        d.targets().to_vec(),
        q.clone(),
        sigma2,
    )
    .unwrap();
    let u = fit_unconstrained(k, d.features().clone(), d.targets().to_vec(), sigma2).unwrap();
    (c, u, q)
}

#[test]
fn rbf_posterior_mean_integrates_to_zero_under_measure() {
    let (c, u, q) = demo_gp(0.01);
    let integral = |s: &ConstrainedKernelSystem| {
        q.atoms()
            .map(|(x, w)| w * s.predict_mean(x).unwrap())
            .sum::<f64>()
    };
    assert!(integral(&c).abs() <= 1e-6, "{}", integral(&c));
    assert!(integral(&u).abs() > 1e-3);
}

#[test]
fn constraint_never_increases_posterior_variance() {
    let (c, u, _) = demo_gp(0.05);
    for i in 0..=100 {
        let x = [-0.2 + 1.4 * i as f64 / 100.0];
        assert!(c.predict_variance(&x).unwrap() <= u.predict_variance(&x).unwrap() + 1e-10);
    }
}

#[test]
fn posterior_variance_matches_explicit_inverse() {
    let (c, _, _) = demo_gp(0.05);
    let km = c.matrix();
    let n = km.rows();
    let dense =
        DMatrix::from_row_slice(n, n, km.as_slice()) + DMatrix::<f64>::identity(n, n) * c.jitter();
    let inv = dense.try_inverse().unwrap();
    let spec = c.spec();
    let q = spec.measure.as_ref().unwrap();
    for x in [[0.1], [0.37], [0.8], [1.3]] {
        let mut kx = vec![fairreg_core::kernelgp::quadrature_row(&spec.kernel, q, &x).unwrap()];
        for i in 0..spec.inputs.rows() {
            kx.push(spec.kernel.eval(spec.inputs.row(i), &x).unwrap());
        }
        let kx = DVector::from_vec(kx);
        let want = spec.kernel.eval(&x, &x).unwrap() - (kx.transpose() * &inv * &kx)[(0, 0)];
        let got = c.predict_variance(&x).unwrap();
        assert!((got - want.max(0.0)).abs() <= 1e-8, "{got} vs {want}");
    }
}

#[test]
fn empty_measure_reduces_to_plain_regression() {
    let x = Matrix::from_rows(&[[0.0], [0.3], [0.9]]).unwrap();
    let y = vec![1.0, -0.5, 0.25];
    let k = Kernel::rbf(vec![0.4], 1.0).unwrap();
    let c = ConstrainedKernelSystem::fit(KernelRegression {
        kernel: k.clone(),
        inputs: x.clone(),
        targets: y.clone(),
        measure: Some(SignedMeasure::empty()),
        noise_variance: 0.1,
    })
    .unwrap();
    let u = fit_unconstrained(k, x, y, 0.1).unwrap();
    assert!(c.jitter() > 0.0);
    for t in [-1.0, 0.2, 0.5, 2.0] {
        assert!((c.predict_mean(&[t]).unwrap() - u.predict_mean(&[t]).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn difference_covariance_is_linear_image_and_singular() {
    for (va, vb, corr) in [
        (2.0, 0.5, 0.3),
        (1.0, 1.0, 0.0),
        (0.7, 3.0, -0.8),
        (1.5, 1.5, 0.99),
    ] {
        let (mu, k) = difference_covariance(1.0, -2.0, va, vb, corr);
        assert_eq!(mu, [3.0, 1.0, -2.0]);
        let cab = corr * f64::sqrt(va * vb);
        let sigma = DMatrix::from_row_slice(2, 2, &[va, cab, cab, vb]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 1.0, 0.0, 0.0, 1.0]);
        let want = &a * sigma * a.transpose();
        let got = DMatrix::from_row_slice(3, 3, k.as_slice());
        assert!((&got - &want).abs().max() < 1e-14);
        let eig = got.symmetric_eigen().eigenvalues;
        let (lo, hi) = (
            eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())),
            eig.amax(),
        );
        assert!(lo <= 1e-10 * hi, "eigenvalues {eig}");
    }
}

#[test]
fn intersectional_matches_pseudo_inverse_projection() {
    // 12 leaves, four gender×veteran cells: intersection pairs plus marginals
    let mut rng_seed = 0u64;
    for trial in 0..10 {
        rng_seed += 17;
        let (data, tree) = four_cell_data(12, rng_seed);
        let q = |s: &str| -> fairreg_core::data::GroupQuery { s.parse().unwrap() };
        let pairs = [
            ("g=F&v=Y", "g=M&v=Y"),
            ("g=F&v=N", "g=M&v=N"),
            ("g=F&v=Y", "g=F&v=N"),
            ("g=M&v=Y", "g=M&v=N"),
            ("g=F", "g=M"),
            ("v=Y", "v=N"),
            ("g=F", "v=Y"),
            ("g=M", "v=N"),
        ];
        let cols: Vec<ZVector> = pairs
            .iter()
            .map(|(a, b)| {
                fairreg_core::constraint::build_z(
                    &empirical_masses(&tree, &data, &q(a)).unwrap(),
                    &empirical_masses(&tree, &data, &q(b)).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let zm = ZMatrix::new(cols.clone()).unwrap();
        let got = constrain_intersectional(&tree, &zm, 0.0, true).unwrap();
        for c in &cols {
            assert!(
                residual(c.entries(), got.leaf_values()).abs() <= 1e-8,
                "trial {trial}"
            );
        }
        let zd = DMatrix::from_row_slice(12, 8, zm.to_matrix().as_slice());
        let y = DVector::from_vec(tree.leaf_means());
        // projection onto range(Z) through the eigenvectors of ZᵀZ
        let eig = (zd.transpose() * &zd).symmetric_eigen();
        let top = eig.eigenvalues.amax();
        let mut want = y.clone();
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > 1e-12 * top {
                let u = &zd * eig.eigenvectors.column(k) / lam.sqrt();
                want -= &u * u.dot(&y);
            }
        }
        assert!(
            max_abs_diff(got.leaf_values(), want.as_slice()) <= 1e-8,
            "{} {:?} {}",
            max_abs_diff(got.leaf_values(), want.as_slice()),
            got.diagnostics().dropped_constraints,
            zd.singular_values()
        );
        assert!(!got.diagnostics().dropped_constraints.is_empty());
        assert_eq!(
            got.diagnostics().dropped_constraints.len() + zd.rank(1e-10),
            8,
            "{:?} {}",
            got.diagnostics().dropped_constraints,
            zd.singular_values()
        );
    }
}

fn four_cell_data(
    l: usize,
    seed: u64,
) -> (
    fairreg_core::data::Dataset,
    fairreg_core::tree::RegressionTree,
) {
    use rand::Rng as _;
    let mut rng = fairreg_core::sampling::rng_from_seed(seed);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut tags = Vec::new();
    for j in 0..l {
        for cell in 0..4 {
            for _ in 0..rng.random_range(1..4) {
                rows.push(vec![j as f64]);
                targets.push(rng.random_range(-1.0..1.0));
                let g = if cell < 2 { "F" } else { "M" };
                let v = if cell % 2 == 0 { "Y" } else { "N" };
                tags.push(vec![format!("g={g}"), format!("v={v}")]);
            }
        }
    }
    let data = fairreg_core::data::Dataset::new(
        vec!["x".into()],
        Matrix::from_rows(&rows).unwrap(),
        targets,
        tags,
    )
    .unwrap();
    let tree = tree_for(&data, l);
    (data, tree)
}

#[test]
fn explicit_multi_column_is_unsupported() {
    let inst = random_instance(4, 3, 1);
    let zm = ZMatrix::new(vec![inst.z.clone(), inst.z.clone()]).unwrap();
    let cfg = fairreg_core::constraint::ConstraintConfig::explicit(1.0);
    assert!(matches!(
        fairreg_core::constraint::constrain(&inst.tree, &zm, &cfg),
        Err(Error::Unsupported(_))
    ));
}
