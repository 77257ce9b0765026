use funflow_core::flm_full::{
    alpha_curve, beta_surface, fit_flmf, locv_flmf, predict_flmf, FlmfBases, FullFLMModel, HeldOutTarget, Penalties,
};
use funflow_core::smoothing::smooth;
use funflow_core::synth::{generate, Response, Scenario};
use funflow_core::{gram_matrix, penalty_matrix, BasisSystem, DiffOperator, FunctionalDataset, Interval};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("y{i}")).collect()
}

fn random_dataset(basis: &BasisSystem, n: usize, rng: &mut ChaCha8Rng) -> FunctionalDataset {
    let coefs = DMatrix::from_fn(n, basis.nbasis(), |_, _| rng.random_range(-1.0..1.0));
    FunctionalDataset::new(basis.clone(), coefs, labels(n)).unwrap()
}

fn trapezoid_weights(n: usize, length: f64) -> Vec<f64> {
    let h = length / (n - 1) as f64;
    (0..n).map(|j| if j == 0 || j == n - 1 { 0.5 * h } else { h }).collect()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Minimizes the integrated criterion with every integral replaced by an
/// `m`-point trapezoid sum, as one dense least-squares problem.
fn discretized_oracle(
    x: &FunctionalDataset,
    y: &FunctionalDataset,
    bases: &FlmfBases,
    lambdas: [f64; 3],
    m: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let s = bases.s.domain().linspace(m);
    let t = bases.t.domain().linspace(m);
    let ws = trapezoid_weights(m, bases.s.domain().length());
    let wt = trapezoid_weights(m, bases.t.domain().length());
    let (k0, k1, k2) = (bases.alpha.nbasis(), bases.s.nbasis(), bases.t.nbasis());
    let xs = x.eval(&s).unwrap();
    let yt = y.eval(&t).unwrap();
    let eta = bases.s.eval(&s, 0).unwrap();
    let eta2 = bases.s.eval(&s, 2).unwrap();
    let th = bases.t.eval(&t, 0).unwrap();
    let th2 = bases.t.eval(&t, 2).unwrap();
    let al = bases.alpha.eval(&t, 0).unwrap();
    let al2 = bases.alpha.eval(&t, 2).unwrap();
    let n = x.len();
    let z = DMatrix::from_fn(n, k1, |i, k| (0..m).map(|j| ws[j] * eta[(j, k)] * xs[(i, j)]).sum::<f64>());
    let p = k0 + k1 * k2;
    let mut normal = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for i in 0..n {
        for j in 0..m {
            let mut g = DVector::zeros(p);
            for a in 0..k0 {
                g[a] = al[(j, a)];
            }
            for k in 0..k1 {
                for l in 0..k2 {
                    g[k0 + k * k2 + l] = z[(i, k)] * th[(j, l)];
                }
            }
            normal += &g * g.transpose() * wt[j];
            rhs += &g * (wt[j] * yt[(i, j)]);
        }
    }
    let quad = |a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]| {
        DMatrix::from_fn(a.ncols(), b.ncols(), |p, q| (0..m).map(|j| w[j] * a[(j, p)] * b[(j, q)]).sum::<f64>())
    };
    let r0 = quad(&al2, &al2, &wt);
    let r1 = quad(&eta2, &eta2, &ws);
    let j_hh = quad(&eta, &eta, &ws);
    let r2 = quad(&th2, &th2, &wt);
    let j_tt = quad(&th, &th, &wt);
    for a in 0..k0 {
        for b in 0..k0 {
            normal[(a, b)] += lambdas[0] * r0[(a, b)];
        }
    }
    for k in 0..k1 {
        for kk in 0..k1 {
            for l in 0..k2 {
                for ll in 0..k2 {
                    normal[(k0 + k * k2 + l, k0 + kk * k2 + ll)] +=
                        lambdas[1] * r1[(k, kk)] * j_tt[(l, ll)] + lambdas[2] * j_hh[(k, kk)] * r2[(l, ll)];
                }
            }
        }
    }
    let sol = normal.lu().solve(&rhs).unwrap();
    let alpha = sol.rows(0, k0).into_owned();
    let b = DMatrix::from_fn(k1, k2, |k, l| sol[k0 + k * k2 + l]);
    (alpha, b)
}

#[test]
fn matches_discretized_least_squares() {
    let unit = Interval::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random_dataset(&BasisSystem::bspline(unit, 6, 4).unwrap(), 10, &mut rng);
    let y = random_dataset(&BasisSystem::bspline(unit, 6, 4).unwrap(), 10, &mut rng);
    let cubic = BasisSystem::bspline(unit, 4, 4).unwrap();
    let bases = FlmfBases { s: cubic.clone(), t: cubic.clone(), alpha: cubic };
    for lambdas in [[0.0, 0.0, 0.0], [1e-3, 1e-2, 1e-3]] {
        let model = fit_flmf(&x, &y, &bases, Penalties::new(lambdas)).unwrap();
        let (a400, b400) = discretized_oracle(&x, &y, &bases, lambdas, 400);
        let (a799, b799) = discretized_oracle(&x, &y, &bases, lambdas, 799);
        // Halving the step cuts the oracle's gap by four, so it converges to the fit.
        let (e400, e799) = (rel(&model.b_matrix, &b400), rel(&model.b_matrix, &b799));
        assert!((e400 / e799 - 4.0).abs() < 0.1, "λ={lambdas:?}: {e400:e} then {e799:e}");
        let b = (b799 * 4.0 - b400) / 3.0;
        let alpha = (a799 * 4.0 - a400) / 3.0;
        let e = rel(&model.b_matrix, &b);
        assert!(e < 1e-5, "λ={lambdas:?}: {e:e}");
        assert!((&model.alpha_coefs - alpha).norm() < 1e-5 * model.alpha_coefs.norm().max(1.0));
    }
}

fn representable_problem(n: usize, seed: u64) -> (FunctionalDataset, FunctionalDataset, FlmfBases, DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = Interval::new(0.0, 153.0).unwrap();
    let td = Interval::new(30.0, 153.0).unwrap();
    let xb = BasisSystem::bspline(sd, 10, 4).unwrap();
    let tb = BasisSystem::bspline(td, 7, 4).unwrap();
    let bases = FlmfBases { s: BasisSystem::bspline(sd, 6, 4).unwrap(), t: tb.clone(), alpha: tb.clone() };
    let x = random_dataset(&xb, n, &mut rng);
    let b = DMatrix::from_fn(6, 7, |_, _| rng.random_range(-0.02..0.02));
    let alpha = DVector::from_fn(7, |_, _| rng.random_range(1.0..3.0));
    let z = x.coefs() * gram_matrix(&xb, &bases.s).unwrap();
    let mut yc = &z * &b;
    for mut row in yc.row_iter_mut() {
        row += alpha.transpose();
    }
    let y = FunctionalDataset::new(tb, yc, labels(n)).unwrap();
    (x, y, bases, b, alpha)
}

#[test]
fn recovers_representable_surface_exactly() {
    let (x, y, bases, b, alpha) = representable_problem(12, 4);
    let model = fit_flmf(&x, &y, &bases, Penalties::new([0.0; 3])).unwrap();
    assert!((&model.b_matrix - &b).amax() < 1e-6, "{:e}", (&model.b_matrix - &b).amax());
    assert!((&model.alpha_coefs - &alpha).amax() < 1e-6);
}

fn fit_sse(model: &FullFLMModel, x: &FunctionalDataset, y: &FunctionalDataset) -> f64 {
    let pred = predict_flmf(model, x).unwrap().dataset;
    let g_yy = gram_matrix(y.basis(), y.basis()).unwrap();
    let g_yp = gram_matrix(y.basis(), pred.basis()).unwrap();
    let g_pp = gram_matrix(pred.basis(), pred.basis()).unwrap();
    (0..x.len())
        .map(|i| {
            let cy = y.coefs().row(i).transpose();
            let cp = pred.coefs().row(i).transpose();
            (cy.transpose() * &g_yy * &cy)[0] - 2.0 * (cy.transpose() * &g_yp * &cp)[0] + (cp.transpose() * &g_pp * &cp)[0]
        })
        .sum()
}

#[test]
fn roughness_falls_and_misfit_rises_along_lambda_ladder() {
    let (x, y0, bases, _, _) = representable_problem(14, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let noise = DMatrix::from_fn(14, 7, |_, _| rng.random_range(-0.3..0.3));
    let y = y0.with_coefs(y0.coefs() + noise).unwrap();
    let r1 = penalty_matrix(&bases.s, DiffOperator::SECOND).unwrap();
    let r2 = penalty_matrix(&bases.t, DiffOperator::SECOND).unwrap();
    let j_hh = gram_matrix(&bases.s, &bases.s).unwrap();
    let j_tt = gram_matrix(&bases.t, &bases.t).unwrap();
    let ladder = [1e-2, 1e-1, 1.0, 10.0, 100.0];
    for dim in [1usize, 2] {
        let mut prev: Option<(f64, f64)> = None;
        for &l in &ladder {
            let mut lambdas = [1e-2, 1e-2, 1e-2];
            lambdas[dim] = l;
            let m = fit_flmf(&x, &y, &bases, Penalties::new(lambdas)).unwrap();
            let bm = &m.b_matrix;
            let rough = if dim == 1 {
                (bm.transpose() * &r1 * bm * &j_tt).trace()
            } else {
                (bm.transpose() * &j_hh * bm * &r2).trace()
            };
            let sse = fit_sse(&m, &x, &y);
            if let Some((pr, ps)) = prev {
                assert!(rough <= pr * (1.0 + 1e-9) + 1e-15, "dim {dim} λ={l}: {rough} > {pr}");
                assert!(sse >= ps * (1.0 - 1e-9), "dim {dim} λ={l}: {sse} < {ps}");
            }
            prev = Some((rough, sse));
        }
    }
}

#[test]
fn duplicated_pairs_equal_halved_penalties() {
    let (x, y0, bases, _, _) = representable_problem(9, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let y = y0.with_coefs(y0.coefs() + DMatrix::from_fn(9, 7, |_, _| rng.random_range(-0.2..0.2))).unwrap();
    let idx: Vec<usize> = (0..9).flat_map(|i| [i, i]).collect();
    let xd = FunctionalDataset::new(x.basis().clone(), x.select(&idx).coefs().clone(), labels(18)).unwrap();
    let yd = FunctionalDataset::new(y.basis().clone(), y.select(&idx).coefs().clone(), labels(18)).unwrap();
    let lambdas = [0.4, 2.0, 0.6];
    let dup = fit_flmf(&xd, &yd, &bases, Penalties::new(lambdas)).unwrap();
    let single = fit_flmf(&x, &y, &bases, Penalties::new(lambdas.map(|l| l / 2.0))).unwrap();
    assert!(rel(&dup.b_matrix, &single.b_matrix) < 1e-9);
    assert!((&dup.alpha_coefs - &single.alpha_coefs).norm() < 1e-9 * single.alpha_coefs.norm());
}

#[test]
fn zero_response_gives_zero_fit() {
    let (x, y0, bases, _, _) = representable_problem(10, 2);
    let y = y0.with_coefs(DMatrix::zeros(10, 7)).unwrap();
    let m = fit_flmf(&x, &y, &bases, Penalties::new([0.5, 0.5, 0.5])).unwrap();
    assert!(m.b_matrix.amax() < 1e-10 && m.alpha_coefs.amax() < 1e-10);
}

#[test]
fn prediction_matches_quadrature() {
    let (x, y0, bases, _, _) = representable_problem(12, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y = y0.with_coefs(y0.coefs() + DMatrix::from_fn(12, 7, |_, _| rng.random_range(-0.2..0.2))).unwrap();
    let m = fit_flmf(&x, &y, &bases, Penalties::new([1.0, 1.0, 1.0])).unwrap();
    let times = bases.t.domain().linspace(50);
    let pred = predict_flmf(&m, &x).unwrap().dataset.eval(&times).unwrap();
    let alpha = alpha_curve(&m, &times).unwrap();
    let theta = bases.t.eval(&times, 0).unwrap();
    let integral = |nodes: usize| {
        let s = bases.s.domain().linspace(nodes);
        let w = trapezoid_weights(nodes, bases.s.domain().length());
        let eta = bases.s.eval(&s, 0).unwrap();
        let xs = x.eval(&s).unwrap();
        // ∫ x_i(s) η(s) ds, then contract with B and Θ(t).
        let zx = DMatrix::from_fn(x.len(), bases.s.nbasis(), |i, k| (0..nodes).map(|j| w[j] * xs[(i, j)] * eta[(j, k)]).sum::<f64>());
        zx * &m.b_matrix * theta.transpose()
    };
    let oracle = (integral(8001) * 4.0 - integral(4001)) / 3.0;
    for i in 0..x.len() {
        for j in 0..times.len() {
            assert!((pred[(i, j)] - oracle[(i, j)] - alpha[j]).abs() < 1e-6);
        }
    }
}

#[test]
fn surface_matches_triple_products() {
    let (x, y, bases, _, _) = representable_problem(10, 7);
    let mut m = fit_flmf(&x, &y, &bases, Penalties::new([1.0; 3])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    m.b_matrix = DMatrix::from_fn(6, 7, |_, _| rng.random_range(-1.0..1.0));
    let s = [0.0, 17.5, 80.0, 153.0];
    let t = [30.0, 44.4, 100.0, 153.0];
    let surf = beta_surface(&m, &s, &t).unwrap();
    for (a, &sa) in s.iter().enumerate() {
        let eta = bases.s.eval(&[sa], 0).unwrap();
        for (c, &tc) in t.iter().enumerate() {
            let th = bases.t.eval(&[tc], 0).unwrap();
            let mut v = 0.0;
            for k in 0..6 {
                for l in 0..7 {
                    v += eta[(0, k)] * m.b_matrix[(k, l)] * th[(0, l)];
                }
            }
            assert!((surf[(a, c)] - v).abs() < 1e-12);
        }
    }
}

fn bump_data(n: usize, seed: u64) -> (FunctionalDataset, FunctionalDataset, FlmfBases) {
    let d = generate(Scenario::FlmfBump, seed, n).unwrap();
    let sd = Interval::new(0.0, 153.0).unwrap();
    let td = Interval::new(30.0, 153.0).unwrap();
    let (x, _) = smooth(&d.covariate, &BasisSystem::bspline(sd, 41, 4).unwrap(), 10.0, DiffOperator::SECOND).unwrap();
    let Response::Curves(yc) = &d.response else { unreachable!() };
    let (y, _) = smooth(yc, &BasisSystem::bspline(td, 31, 4).unwrap(), 10.0, DiffOperator::SECOND).unwrap();
    let bases = FlmfBases {
        s: BasisSystem::bspline(sd, 8, 4).unwrap(),
        t: BasisSystem::bspline(td, 9, 4).unwrap(),
        alpha: BasisSystem::bspline(td, 9, 4).unwrap(),
    };
    (x, y, bases)
}

#[test]
fn locv_scores_match_refit_loop() {
    let (x, y, bases) = bump_data(8, 31);
    let grids: [&[f64]; 3] = [&[1.0, 100.0], &[10.0], &[0.1, 10.0]];
    let r = locv_flmf(&x, &y, &bases, grids, [DiffOperator::SECOND; 3], HeldOutTarget::Smoothed).unwrap();
    let days = bases.t.domain().daily_grid();
    let truth = y.eval(&days).unwrap();
    for (triple, score, _) in &r.table {
        let mut per_label = vec![];
        for i in 0..8 {
            let keep: Vec<usize> = (0..8).filter(|&j| j != i).collect();
            let m = fit_flmf(&x.select(&keep), &y.select(&keep), &bases, Penalties::new(*triple)).unwrap();
            let pred = predict_flmf(&m, &x.select(&[i])).unwrap().dataset.eval(&days).unwrap();
            per_label.push((0..days.len()).map(|j| (pred[(0, j)] - truth[(i, j)]).powi(2)).sum::<f64>() / days.len() as f64);
        }
        let oracle = per_label.iter().sum::<f64>() / 8.0;
        assert!((score - oracle).abs() < 1e-9 * oracle.max(1.0), "{triple:?}: {score} vs {oracle}");
    }
    let best = r.table.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    assert_eq!(r.table.iter().find(|e| e.0 == r.chosen).unwrap().1, best);
}

#[test]
fn held_out_curve_never_reaches_its_own_fit() {
    let (x, y, bases) = bump_data(6, 32);
    let grids: [&[f64]; 3] = [&[1.0], &[10.0], &[1.0]];
    let clean = locv_flmf(&x, &y, &bases, grids, [DiffOperator::SECOND; 3], HeldOutTarget::Smoothed).unwrap();
    let mut poisoned_coefs = y.coefs().clone();
    poisoned_coefs.row_mut(2).add_scalar_mut(1e6);
    let poisoned = y.with_coefs(poisoned_coefs).unwrap();
    let dirty = locv_flmf(&x, &poisoned, &bases, grids, [DiffOperator::SECOND; 3], HeldOutTarget::Smoothed).unwrap();
    assert_eq!(clean.predictions.row(2), dirty.predictions.row(2));
    assert!(dirty.per_label_error[2] > 1e11);
    // The sentinel does reach every other fold.
    for i in [0, 1, 3, 4, 5] {
        assert!((dirty.predictions.row(i) - clean.predictions.row(i)).amax() > 1.0);
    }
}

#[test]
fn identical_curves_have_identical_errors() {
    let (x, y, bases) = bump_data(4, 33);
    let x3 = FunctionalDataset::new(x.basis().clone(), x.select(&[0, 0, 0]).coefs().clone(), labels(3)).unwrap();
    let y3 = FunctionalDataset::new(y.basis().clone(), y.select(&[1, 1, 1]).coefs().clone(), labels(3)).unwrap();
    let ops = [DiffOperator::SECOND, DiffOperator::IDENTITY, DiffOperator::SECOND];
    let r = locv_flmf(&x3, &y3, &bases, [&[1.0], &[1.0], &[1.0]], ops, HeldOutTarget::Smoothed).unwrap();
    assert_eq!(r.chosen, [1.0, 1.0, 1.0]);
    for e in &r.per_label_error {
        assert!((e - r.per_label_error[0]).abs() < 1e-10);
    }
}
