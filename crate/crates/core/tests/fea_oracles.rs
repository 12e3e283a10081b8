#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use topogen::fea::{
    assemble_stiffness, compliance, element_stiffness, solve_dense, solve_displacement,
    solve_displacement_with, stress_energy_fields, DisplacementField, SolverOptions,
};
use topogen::simp::{analyze, compliance_sensitivity, SimpConfig};
use topogen::{BoundaryConditions, DensityField, Grid, Loads, Material, PointLoad, ProblemSpec};

/// Bilinear element stiffness by 2x2 Gauss quadrature of Bᵀ D B, written
/// independently of the closed form in the library.
fn quadrature_element_stiffness(young: f64, nu: f64) -> [[f64; 8]; 8] {
    let local = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let g = 1.0 / 3f64.sqrt();
    let c = young / (1.0 - nu * nu);
    let d = [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * (1.0 - nu) / 2.0]];
    let mut ke = [[0.0; 8]; 8];
    for &xi in &[-g, g] {
        for &eta in &[-g, g] {
            // unit square: x = (ξ + 1) / 2, so ∂/∂x = 2 ∂/∂ξ and det J = 1/4
            let mut b = [[0.0; 8]; 3];
            for (a, &(xa, ya)) in local.iter().enumerate() {
                let dndx = 2.0 * xa * (1.0 + eta * ya) / 4.0;
                let dndy = 2.0 * ya * (1.0 + xi * xa) / 4.0;
                b[0][2 * a] = dndx;
                b[1][2 * a + 1] = dndy;
                b[2][2 * a] = dndy;
                b[2][2 * a + 1] = dndx;
            }
            for i in 0..8 {
                for j in 0..8 {
                    let mut s = 0.0;
                    for p in 0..3 {
                        for q in 0..3 {
                            s += b[p][i] * d[p][q] * b[q][j];
                        }
                    }
                    ke[i][j] += s * 0.25;
                }
            }
        }
    }
    ke
}

#[test]
fn closed_form_element_matches_gauss_quadrature() {
    for &nu in &[0.0, 0.25, 0.3, 0.45] {
        let closed = element_stiffness(nu);
        let quad = quadrature_element_stiffness(1.0, nu);
        for i in 0..8 {
            for j in 0..8 {
                assert!(
                    (closed[i][j] - quad[i][j]).abs() < 1e-12,
                    "nu={nu} entry ({i},{j}): {} vs {}",
                    closed[i][j],
                    quad[i][j]
                );
            }
        }
    }
}

#[test]
fn single_solid_element_assembles_to_canonical_matrix() {
    let grid = Grid::new(1, 1).unwrap();
    let mat = Material::default();
    let k = assemble_stiffness(&DensityField::uniform(grid, 1.0), 3.0, &mat).unwrap();
    let quad = quadrature_element_stiffness(mat.young_solid, mat.poisson);
    let dofs = grid.element_dofs(0);
    let dense = k.matrix.to_dense();
    for i in 0..8 {
        for j in 0..8 {
            assert!((dense[dofs[i]][dofs[j]] - quad[i][j]).abs() < 1e-9);
        }
    }
}

#[test]
fn assembled_matrix_is_exactly_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = Grid::new(4, 4).unwrap();
    let x = DensityField::new(grid, (0..16).map(|_| rng.random::<f64>()).collect()).unwrap();
    let k = assemble_stiffness(&x, 3.0, &Material::default()).unwrap();
    assert_eq!(k.matrix.max_asymmetry(), 0.0);
}

fn cantilever_2x2() -> (Grid, Loads, BoundaryConditions) {
    let grid = Grid::new(2, 2).unwrap();
    let bcs = BoundaryConditions::fix_nodes((0..=2).map(|iy| grid.node(0, iy)), true, true);
    let loads = Loads::single(grid.node(2, 1), 0.0, -1.0);
    (grid, loads, bcs)
}

#[test]
fn cantilever_2x2_iterative_matches_dense() {
    let (grid, loads, bcs) = cantilever_2x2();
    let k = assemble_stiffness(&DensityField::uniform(grid, 1.0), 3.0, &Material::default()).unwrap();
    let it = solve_displacement(&k, &loads, &bcs).unwrap();
    let dense = solve_dense(&k, &loads, &bcs).unwrap();
    let norm = dense.u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let err = it.u.iter().zip(&dense.u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err / norm < 1e-8, "relative error {}", err / norm);
    for &d in &bcs.fixed_dofs {
        assert_eq!(it.u[d], 0.0);
    }
    let c_it = compliance(&it, &loads).unwrap();
    let c_dense = compliance(&dense, &loads).unwrap();
    assert!((c_it - c_dense).abs() < 1e-8 * c_dense);
    assert!(c_dense > 0.0);
}

#[test]
fn doubling_loads_doubles_displacement_and_quadruples_compliance() {
    let p = ProblemSpec::cantilever(6, 4, 0.5).unwrap();
    let k = assemble_stiffness(&DensityField::uniform(p.grid, 0.7), 3.0, &Material::default()).unwrap();
    let opts = SolverOptions {
        rel_tol: 1e-12,
        max_iter: None,
    };
    let u1 = solve_displacement_with(&k, &p.loads, &p.bcs, &opts).unwrap();
    let u2 = solve_displacement_with(&k, &p.loads.scaled(2.0), &p.bcs, &opts).unwrap();
    let scale = u1.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in u1.u.iter().zip(&u2.u) {
        assert!((2.0 * a - b).abs() <= 1e-8 * scale);
    }
    let c1 = compliance(&u1, &p.loads).unwrap();
    let c3 = compliance(
        &solve_displacement_with(&k, &p.loads.scaled(3.0), &p.bcs, &opts).unwrap(),
        &p.loads.scaled(3.0),
    )
    .unwrap();
    assert!((c3 - 9.0 * c1).abs() < 1e-8 * c3);
}

#[test]
fn solver_residual_within_tolerance() {
    let p = ProblemSpec::half_mbb(20, 10, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DensityField::new(p.grid, (0..200).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let k = assemble_stiffness(&x, 3.0, &Material::default()).unwrap();
    let u = solve_displacement(&k, &p.loads, &p.bcs).unwrap();
    let f = p.loads.force_vector(p.grid.n_dofs()).unwrap();
    let ku = k.matrix.mul_vec(&u.u);
    let fixed = p.bcs.fixed_mask(p.grid.n_dofs());
    let (mut r2, mut f2) = (0.0, 0.0);
    for i in 0..f.len() {
        if !fixed[i] {
            r2 += (ku[i] - f[i]).powi(2);
            f2 += f[i] * f[i];
        }
    }
    assert!((r2 / f2).sqrt() <= 1e-8);
}

/// Strain by central differences of the bilinear interpolant at the centroid
/// (exact for a bilinear field), then W = ½ εᵀ σ.
fn energy_oracle(grid: &Grid, u: &[f64], e: usize, young: f64, nu: f64) -> f64 {
    let nodes = grid.element_nodes(e);
    let corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]; // LL LR UR UL, y up
    let interp = |x: f64, y: f64, comp: usize| -> f64 {
        corners
            .iter()
            .zip(nodes)
            .map(|(&(cx, cy), n)| {
                let w = (1.0 - (x - cx).abs()) * (1.0 - (y - cy).abs());
                w * u[2 * n + comp]
            })
            .sum()
    };
    let h = 1e-3;
    let d = |comp: usize, dx: f64, dy: f64| {
        (interp(0.5 + dx * h, 0.5 + dy * h, comp) - interp(0.5 - dx * h, 0.5 - dy * h, comp)) / (2.0 * h)
    };
    let exx = d(0, 1.0, 0.0);
    let eyy = d(1, 0.0, 1.0);
    let gxy = d(0, 0.0, 1.0) + d(1, 1.0, 0.0);
    let c = young / (1.0 - nu * nu);
    let sxx = c * (exx + nu * eyy);
    let syy = c * (nu * exx + eyy);
    let sxy = c * (1.0 - nu) / 2.0 * gxy;
    0.5 * (sxx * exx + syy * eyy + sxy * gxy)
}

#[test]
fn strain_energy_matches_independent_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = Grid::new(3, 2).unwrap();
    let mat = Material::default();
    let x = DensityField::new(grid, (0..6).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();
    let u = DisplacementField {
        u: (0..grid.n_dofs()).map(|_| rng.random_range(-0.1..0.1)).collect(),
    };
    let fields = stress_energy_fields(&u, &x, &mat, 3.0).unwrap();
    for e in 0..grid.n_elements() {
        let expected = energy_oracle(&grid, &u.u, e, mat.modulus(x.values[e], 3.0), mat.poisson);
        assert!((fields.strain_energy[e] - expected).abs() < 1e-8, "element {e}");
        assert!(fields.von_mises[e] >= 0.0);
    }
}

#[test]
fn total_strain_energy_is_half_compliance_in_uniform_tension() {
    // bar pulled along x: left edge on rollers, one pin, consistent edge load
    let grid = Grid::new(8, 4).unwrap();
    let rollers = BoundaryConditions::fix_nodes((0..=4).map(|iy| grid.node(0, iy)), true, false);
    let pin = BoundaryConditions::fix_nodes([grid.node(0, 4)], false, true);
    let bcs = rollers.merged(&pin);
    let loads = Loads::new(
        (0..=4)
            .map(|iy| PointLoad {
                node: grid.node(8, iy),
                fx: if iy == 0 || iy == 4 { 0.5 } else { 1.0 },
                fy: 0.0,
            })
            .collect(),
    );
    let mat = Material::default();
    let x = DensityField::uniform(grid, 1.0);
    let k = assemble_stiffness(&x, 3.0, &mat).unwrap();
    let u = solve_displacement(&k, &loads, &bcs).unwrap();
    let c = compliance(&u, &loads).unwrap();
    let fields = stress_energy_fields(&u, &x, &mat, 3.0).unwrap();
    let total: f64 = fields.strain_energy.iter().sum();
    assert!((total - 0.5 * c).abs() <= 0.02 * 0.5 * c, "{total} vs {}", 0.5 * c);
    // uniform σxx = 1: Von Mises equals 1 everywhere
    for v in &fields.von_mises {
        assert!((v - 1.0).abs() < 1e-6);
    }
}

fn random_problem(rng: &mut ChaCha8Rng, nelx: usize, nely: usize) -> (ProblemSpec, DensityField) {
    let mut p = ProblemSpec::cantilever(nelx, nely, 0.5).unwrap();
    let node = p.grid.node(rng.random_range(1..=nelx), rng.random_range(0..=nely));
    p.loads = Loads::single(node, rng.random_range(-1.0..1.0), rng.random_range(-1.0..-0.2));
    let x = DensityField::new(
        p.grid,
        (0..p.grid.n_elements()).map(|_| rng.random_range(0.2..1.0)).collect(),
    )
    .unwrap();
    (p, x)
}

fn dense_compliance(p: &ProblemSpec, x: &DensityField) -> f64 {
    let k = assemble_stiffness(x, 3.0, &Material::default()).unwrap();
    compliance(&solve_dense(&k, &p.loads, &p.bcs).unwrap(), &p.loads).unwrap()
}

#[test]
fn sensitivity_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for &(nx, ny) in &[(4, 4), (6, 6), (5, 3)] {
        let (p, x) = random_problem(&mut rng, nx, ny);
        let cfg = SimpConfig::for_problem(&p);
        let (u, _) = analyze(&p, &x, &cfg).unwrap();
        let sens = compliance_sensitivity(&x, &u, &cfg, &cfg.material).unwrap();
        assert!(sens.iter().all(|&s| s <= 0.0));
        let h = 1e-6;
        for e in 0..x.values.len() {
            let mut plus = x.clone();
            plus.values[e] += h;
            let mut minus = x.clone();
            minus.values[e] -= h;
            let fd = (dense_compliance(&p, &plus) - dense_compliance(&p, &minus)) / (2.0 * h);
            let rel = (fd - sens[e]).abs() / sens[e].abs().max(1e-12);
            assert!(rel < 1e-4, "{nx}x{ny} element {e}: fd {fd} vs analytic {}", sens[e]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adding_material_never_increases_compliance(
        base in proptest::collection::vec(0.05f64..0.9, 16),
        bump in proptest::collection::vec(0.0f64..0.1, 16),
    ) {
        let p = ProblemSpec::cantilever(4, 4, 0.5).unwrap();
        let lo = DensityField::new(p.grid, base.clone()).unwrap();
        let hi = DensityField::new(p.grid, base.iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
        let c_lo = dense_compliance(&p, &lo);
        let c_hi = dense_compliance(&p, &hi);
        prop_assert!(c_hi <= c_lo * (1.0 + 1e-9));
    }

    #[test]
    fn fields_are_non_negative(
        disp in proptest::collection::vec(-1.0f64..1.0, 2 * 16),
        dens in proptest::collection::vec(0.0f64..=1.0, 9),
    ) {
        let grid = Grid::new(3, 3).unwrap();
        let x = DensityField::new(grid, dens).unwrap();
        let f = stress_energy_fields(&DisplacementField { u: disp }, &x, &Material::default(), 3.0).unwrap();
        prop_assert!(f.von_mises.iter().chain(&f.strain_energy).all(|&v| v >= 0.0));
    }
}
