//! Dense-assembly oracle checks for every linear operator: the block
//! matrices are written out from their definitions and compared against
//! the stencil implementations on random fields.

mod common;

use common::*;
use mfg_core::grid::{FluxField, GridSpec, ScalarField};
use mfg_core::ops::{
    apply_constraint, apply_constraint_adjoint, apply_divergence, apply_divergence_adjoint,
    apply_normal, apply_transport, apply_transport_adjoint, assemble_normal,
};
use nalgebra::DVector;
use rand::{rngs::StdRng, Rng, SeedableRng};

fn test_grids() -> Vec<GridSpec> {
    vec![
        GridSpec::new(8, 3, 1.0, 0.37, 2.0).unwrap(),
        GridSpec::new(16, 5, 1.0, 0.5, 2.0).unwrap(),
    ]
}

fn random_vec(len: usize, rng: &mut StdRng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn transport_matches_dense_blocks() {
    for grid in test_grids() {
        let a = dense_transport(&grid);
        let mut rng = StdRng::seed_from_u64(grid.n_h as u64);
        for _ in 0..5 {
            let m = random_vec((grid.n_t + 1) * grid.points(), &mut rng);
            let expected = (&a * DVector::from_column_slice(&m)).as_slice().to_vec();
            let got = apply_transport(
                &ScalarField::from_vec(grid.n_t + 1, grid.n_h, m.clone()),
                &grid,
            );
            assert!(rel_err(got.as_slice(), &expected) <= 1e-12);

            let u = random_vec(grid.n_t * grid.points(), &mut rng);
            let expected = (a.transpose() * DVector::from_column_slice(&u)).as_slice().to_vec();
            let got = apply_transport_adjoint(
                &ScalarField::from_vec(grid.n_t, grid.n_h, u.clone()),
                &grid,
            );
            assert!(rel_err(got.as_slice(), &expected) <= 1e-12);
        }
    }
}

#[test]
fn divergence_matches_dense_blocks() {
    for grid in test_grids() {
        let b = dense_divergence(&grid);
        let mut rng = StdRng::seed_from_u64(7 + grid.n_h as u64);
        for _ in 0..5 {
            let w = random_vec(grid.n_t * 4 * grid.points(), &mut rng);
            let expected = (&b * DVector::from_column_slice(&w)).as_slice().to_vec();
            let got =
                apply_divergence(&FluxField::from_vec(grid.n_t, grid.n_h, w.clone()), &grid);
            assert!(rel_err(got.as_slice(), &expected) <= 1e-12);

            let u = random_vec(grid.n_t * grid.points(), &mut rng);
            let expected = (b.transpose() * DVector::from_column_slice(&u)).as_slice().to_vec();
            let got = apply_divergence_adjoint(
                &ScalarField::from_vec(grid.n_t, grid.n_h, u.clone()),
                &grid,
            );
            assert!(rel_err(got.as_slice(), &expected) <= 1e-12);
        }
    }
}

#[test]
fn constraint_matches_augmented_blocks() {
    for grid in test_grids() {
        let a_aug = dense_transport_aug(&grid);
        let b_aug = dense_divergence_aug(&grid);
        let mut rng = StdRng::seed_from_u64(17 + grid.n_h as u64);
        for _ in 0..5 {
            let m = random_vec((grid.n_t + 1) * grid.points(), &mut rng);
            let w = random_vec(grid.n_t * 4 * grid.points(), &mut rng);
            let expected = (&a_aug * DVector::from_column_slice(&m)
                + &b_aug * DVector::from_column_slice(&w))
                .as_slice()
                .to_vec();
            let got = apply_constraint(
                &ScalarField::from_vec(grid.n_t + 1, grid.n_h, m.clone()),
                &FluxField::from_vec(grid.n_t, grid.n_h, w.clone()),
                &grid,
            );
            assert!(rel_err(got.as_slice(), &expected) <= 1e-12);

            let z = random_vec((grid.n_t + 1) * grid.points(), &mut rng);
            let zv = DVector::from_column_slice(&z);
            let em = (a_aug.transpose() * &zv).as_slice().to_vec();
            let ew = (b_aug.transpose() * &zv).as_slice().to_vec();
            let (gm, gw) = apply_constraint_adjoint(
                &ScalarField::from_vec(grid.n_t + 1, grid.n_h, z.clone()),
                &grid,
            );
            assert!(rel_err(gm.as_slice(), &em) <= 1e-12);
            assert!(rel_err(gw.as_slice(), &ew) <= 1e-12);
        }
    }
}

#[test]
fn normal_operator_matches_dense_composition() {
    for grid in test_grids() {
        let a_aug = dense_transport_aug(&grid);
        let b_aug = dense_divergence_aug(&grid);
        let assembled = assemble_normal(&grid);
        let mut rng = StdRng::seed_from_u64(23 + grid.n_h as u64);
        for _ in 0..5 {
            let z = random_vec((grid.n_t + 1) * grid.points(), &mut rng);
            let expected = dense_normal_apply(&a_aug, &b_aug, &z);
            let free = apply_normal(
                &ScalarField::from_vec(grid.n_t + 1, grid.n_h, z.clone()),
                &grid,
            );
            assert!(rel_err(free.as_slice(), &expected) <= 1e-12);
            let mut sparse = vec![0.0; z.len()];
            assembled.matvec(&z, &mut sparse);
            assert!(rel_err(&sparse, &expected) <= 1e-12);
        }
    }
}

#[test]
fn dense_normal_is_positive_definite_via_cholesky() {
    let grid = GridSpec::new(8, 3, 1.0, 0.5, 2.0).unwrap();
    let q = assemble_normal(&grid).to_dense();
    assert!(mfg_core::krylov::DenseCholesky::factor(q).is_ok());
}
