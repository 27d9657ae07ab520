//! Property tests for the invariants of the discretization.

use std::collections::{HashMap, HashSet};

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ibc_core::app::config::RunConfig;
use ibc_core::assembly::{assemble, DiscreteHamiltonian, ModelSpec};
use ibc_core::coeff::{complete_coefficients, make_dirichlet, CMatrix, CoefficientSet};
use ibc_core::diagnostics::{boundary_flux, link_gain};
use ibc_core::evolve::{CrankNicolson, MultiSectorState};
use ibc_core::geometry::{Axis, Domain, Face, LinkCoefficients, MapSpec, MassConvention, Sector, SectorGrid};
use ibc_core::sparse::{BandedLu, CsrMatrix};

fn cplx(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn hermitian(rng: &mut ChaCha8Rng, r: usize) -> CMatrix {
    let a = CMatrix::from_fn(r, r, |_, _| cplx(rng));
    (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

fn invertible(rng: &mut ChaCha8Rng, r: usize) -> CMatrix {
    CMatrix::from_fn(r, r, |_, _| cplx(rng)) + CMatrix::identity(r, r) * Complex64::new(1.5, 0.0)
}

fn passing_set(rng: &mut ChaCha8Rng, r: usize, robin: bool, k: f64) -> CoefficientSet {
    if robin {
        let beta = invertible(rng, r);
        let alpha = &beta * hermitian(rng, r);
        let delta = beta.clone().try_inverse().unwrap().adjoint() * hermitian(rng, r);
        complete_coefficients(alpha, beta, delta, k).unwrap()
    } else {
        let alpha = invertible(rng, r);
        let gamma = hermitian(rng, r) * &alpha;
        make_dirichlet(alpha, gamma, k).unwrap()
    }
}

fn grid(id: usize, domain: Domain, masses: Vec<f64>, r: usize, conv: MassConvention) -> SectorGrid {
    SectorGrid::new(Sector { id, domain, mass_factors: masses, fiber_dim: r, convention: conv }).unwrap()
}

/// Line + half-plane model with a uniform random link.
fn plane_model(seed: u64, r: usize, robin: bool) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = if rng.gen_bool(0.5) { MassConvention::Metric } else { MassConvention::Explicit };
    let hbar = rng.gen_range(0.5..2.0);
    let (mx, my) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
    let nx = rng.gen_range(4..10);
    let line = grid(0, Domain::Interval { a: -1.0, b: 1.0, cells: nx, physical: [false, false] }, vec![mx], r, conv);
    let plane = grid(
        1,
        Domain::Box {
            axes: vec![
                Axis { lo: -1.0, hi: 1.0, cells: nx, physical: [false, false] },
                Axis { lo: 0.0, hi: 1.0, cells: rng.gen_range(3..8), physical: [true, false] },
            ],
        },
        vec![mx, my],
        r,
        conv,
    );
    let k = plane.sector.natural_coupling(1, hbar);
    let cs = passing_set(&mut rng, r, robin, k);
    let mut model = ModelSpec::new(vec![line, plane], hbar);
    model
        .link(1, Face { axis: 1, side: 0 }, 0, MapSpec::IdentityProjection, LinkCoefficients::Uniform(cs))
        .unwrap();
    model
}

fn random_state(dh: &DiscreteHamiltonian, seed: u64) -> MultiSectorState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = MultiSectorState::zeros(dh.dim());
    s.amplitudes.iter_mut().for_each(|a| *a = cplx(&mut rng));
    s
}

/// Dofs whose matrix entries may depend on the coefficients at link node `k`.
fn touched_dofs(dh: &DiscreteHamiltonian, k: usize) -> HashSet<usize> {
    let n = &dh.recon[0].nodes[k];
    let r = dh.model.grids[1].sector.fiber_dim;
    let mut set = HashSet::new();
    for base in std::iter::once(n.target_base)
        .chain(n.value.iter().map(|t| t.0))
        .chain(n.normal_derivative.iter().map(|t| t.0))
    {
        set.extend(base..base + r);
    }
    set
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn passing_sets_give_hermitian_operators(seed in any::<u64>(), r in 1usize..3, robin in any::<bool>()) {
        let dh = assemble(plane_model(seed, r, robin)).unwrap();
        prop_assert!(dh.hermitian);
        prop_assert!(dh.hermiticity_defect <= 1e-12, "{}", dh.hermiticity_defect);
    }

    #[test]
    fn crank_nicolson_keeps_the_norm(seed in any::<u64>(), robin in any::<bool>(), dt in 1e-3f64..0.5) {
        let dh = assemble(plane_model(seed, 1, robin)).unwrap();
        let cn = CrankNicolson::new(&dh, dt, 1e-13, false).unwrap();
        let mut s = random_state(&dh, seed ^ 1);
        let n0 = dh.norm_sqr(&s.amplitudes);
        for _ in 0..5 {
            s = cn.step(&s).unwrap();
        }
        let n1 = dh.norm_sqr(&s.amplitudes);
        prop_assert!((n1 - n0).abs() <= 1e-10 * n0, "{n0} -> {n1}");
    }

    #[test]
    fn link_gain_mirrors_flux(seed in any::<u64>(), r in 1usize..3, robin in any::<bool>()) {
        let dh = assemble(plane_model(seed, r, robin)).unwrap();
        let s = random_state(&dh, seed.wrapping_add(7));
        let f = boundary_flux(&dh, &s, 0).unwrap();
        let g = link_gain(&dh, &s, 0).unwrap();
        prop_assert!((f + g).abs() <= 1e-10 * (1.0 + f.abs()), "{f} vs {g}");
    }

    #[test]
    fn coefficients_act_locally(seed in any::<u64>(), robin in any::<bool>(), pick in any::<prop::sample::Index>()) {
        let base = plane_model(seed, 1, robin);
        let count = base.links[0].nodes.len();
        let k = pick.index(count);
        let cs = base.links[0].coefficients.at(0).clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let mut per_node = vec![cs.clone(); count];
        per_node[k] = passing_set(&mut rng, 1, robin, cs.coupling);

        let mut uniform = base.clone();
        uniform.links[0].coefficients = LinkCoefficients::PerNode(vec![cs; count]);
        let mut changed = base;
        changed.links[0].coefficients = LinkCoefficients::PerNode(per_node);
        let a = assemble(uniform).unwrap();
        let b = assemble(changed).unwrap();

        let mut touched = touched_dofs(&a, k);
        touched.extend(touched_dofs(&b, k));
        let entries = |dh: &DiscreteHamiltonian| -> HashMap<(usize, usize), Complex64> {
            dh.h.triplets()
                .filter(|(i, j, _)| !touched.contains(i) && !touched.contains(j))
                .map(|(i, j, v)| ((i, j), v))
                .collect()
        };
        prop_assert_eq!(entries(&a), entries(&b));
        prop_assert!(b.hermitian);
    }

    #[test]
    fn config_survives_toml(h in 0.01f64..0.5, length in 1.0f64..50.0, alpha in 0.1f64..5.0,
                            center in 0.5f64..10.0, k in -3.0f64..3.0, dt in 1e-4f64..0.1, steps in 1usize..5000) {
        let text = format!(
            "scenario = \"point_halfline\"\n[grid]\nh = {h}\nlength = {length}\n\
             [coefficients]\nkind = \"dirichlet\"\nalpha = [{alpha}, 0.0]\n\
             [initial]\nkind = \"gaussian\"\nsector = 1\ncenter = [{center}]\nwidth = 0.5\nmomentum = [{k}]\n\
             [evolution]\ndt = {dt}\nsteps = {steps}\n"
        );
        let cfg = RunConfig::from_toml(&text).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(cfg, again);
    }

    #[test]
    fn banded_lu_solves(seed in any::<u64>(), n in 2usize..60, band in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut triplets = Vec::new();
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in i.saturating_sub(band)..(i + band + 1).min(n) {
                if j != i && rng.gen_bool(0.7) {
                    let v = cplx(&mut rng);
                    row_sum += v.norm();
                    triplets.push((i, j, v));
                }
            }
            triplets.push((i, i, Complex64::new(row_sum + 0.5, rng.gen_range(-1.0..1.0))));
        }
        let a = CsrMatrix::from_triplets(n, triplets);
        let x: Vec<Complex64> = (0..n).map(|_| cplx(&mut rng)).collect();
        let b = a.mul_vec(&x);
        let lu = BandedLu::factor(&a).unwrap();
        let y = lu.solve(&b);
        let err = x.iter().zip(&y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10, "{err}");
    }
}
