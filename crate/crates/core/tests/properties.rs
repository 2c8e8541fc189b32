use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::Rng;

use vqnhe::ansatz::{hardware_efficient, heisenberg_swap, tfim_qaoa};
use vqnhe::estimate::{
    diagonal_term_estimate, estimate_energy, exact_energy, postprocessed, EstimateOptions, Mode, Outcomes,
};
use vqnhe::measure::{build_plan, PlanMode};
use vqnhe::pauli::{
    apply_to_basis, build_heisenberg, build_tfim, dense_matrix, exact_ground, parse_hamiltonian, serialize_hamiltonian,
    Boundary, Hamiltonian, Pauli, PauliString, PauliTerm, Phase,
};
use vqnhe::postproc::{Activation, PostprocSpec, Postprocessor, Table};
use vqnhe::qsim::{Bitstring, Circuit};
use vqnhe::rng;
use vqnhe::train::{fit, Problem, TrainingConfig};

const PAULIS: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

fn random_string(r: &mut impl Rng, n: usize) -> PauliString {
    PauliString::from_ops((0..n).map(|_| PAULIS[r.random_range(0..4)]).collect())
}

fn offdiagonal_string(r: &mut impl Rng, n: usize) -> PauliString {
    loop {
        let s = random_string(r, n);
        if !s.is_diagonal() {
            return s;
        }
    }
}

fn random_hamiltonian(r: &mut impl Rng, n: usize, terms: usize) -> Hamiltonian {
    let terms = (0..terms).map(|_| PauliTerm { coeff: r.random_range(-1.0..1.0), string: random_string(r, n) }).collect();
    Hamiltonian::new(n, terms).unwrap()
}

fn random_state_circuit(r: &mut impl Rng, n: usize) -> (Circuit, Vec<f64>) {
    let init = Bitstring::new(n, r.random_range(0..1usize << n)).unwrap();
    let c = hardware_efficient(n, 2, init).unwrap();
    let p = (0..c.n_params()).map(|_| r.random_range(-1.5..1.5)).collect();
    (c, p)
}

fn postprocessor(family: usize, n: usize, seed: u64) -> Box<dyn Postprocessor> {
    let spec = match family {
        0 => PostprocSpec::jastrow(n).with_init_std(0.4),
        1 => PostprocSpec::mlp(n, &[5, 3], &[Activation::Sigmoid, Activation::Tanh], Some(5.0)).with_init_std(0.6),
        2 => PostprocSpec::rbm(n, 3, false).with_init_std(0.4),
        _ => PostprocSpec::rbm(n, 3, true).with_init_std(0.4),
    };
    spec.with_seed(seed).build().unwrap()
}

fn kron_string(p: &PauliString) -> DMatrix<C64> {
    let (o, l, i) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0));
    let mut m = DMatrix::from_element(1, 1, l);
    for &q in p.ops() {
        let s = match q {
            Pauli::I => [l, o, o, l],
            Pauli::X => [o, l, l, o],
            Pauli::Y => [o, -i, i, o],
            Pauli::Z => [l, o, o, -l],
        };
        m = m.kronecker(&DMatrix::from_row_slice(2, 2, &s));
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn basis_action_matches_kronecker_oracle(seed in any::<u64>(), n in 1usize..=5) {
        let mut r = rng::from_seed(seed);
        let p = random_string(&mut r, n);
        let m = kron_string(&p);
        for s in 0..1usize << n {
            let act = apply_to_basis(&p, Bitstring::new(n, s).unwrap()).unwrap();
            let col = m.column(s);
            for (row, v) in col.iter().enumerate() {
                let want = if row == act.out.index() { act.phase.to_complex() } else { C64::new(0.0, 0.0) };
                prop_assert!((v - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn hamiltonians_are_hermitian_and_round_trip(seed in any::<u64>(), n in 1usize..=5, k in 1usize..10) {
        let mut r = rng::from_seed(seed);
        let h = random_hamiltonian(&mut r, n, k);
        let m = dense_matrix(&h).unwrap();
        prop_assert!((&m - m.adjoint()).norm() < 1e-14);
        prop_assert_eq!(parse_hamiltonian(&serialize_hamiltonian(&h)).unwrap(), h.clone());
        prop_assert_eq!(Hamiltonian::from_json(&h.to_json().unwrap()).unwrap(), h);
    }

    #[test]
    fn plan_gate_count_and_probability_partition(seed in any::<u64>(), n in 1usize..=7, imag in any::<bool>()) {
        let mut r = rng::from_seed(seed);
        let p = offdiagonal_string(&mut r, n);
        let mode = if imag { PlanMode::ImagPart } else { PlanMode::RealPart };
        let plan = build_plan(&p, mode, false).unwrap();
        prop_assert_eq!(plan.two_qubit_gate_count(), p.weight_xy() - 1);
        let (c, params) = random_state_circuit(&mut r, n.max(2));
        if n < 2 {
            return Ok(());
        }
        let psi = c.run_shifted(&params, None).unwrap();
        let mut rotated = psi.clone();
        for g in plan.appended().gates() {
            rotated.apply_gate(g, &[]).unwrap();
        }
        let (a, b) = (psi.amplitudes(), rotated.amplitudes());
        for m in 0..1usize << n {
            if m & plan.star_mask() != 0 {
                continue;
            }
            let lhs = b[m].norm_sqr() + b[m | plan.star_mask()].norm_sqr();
            let rhs = a[m].norm_sqr() + a[m ^ plan.flip_mask()].norm_sqr();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn infinite_shot_estimator_is_unbiased(seed in any::<u64>(), n in 2usize..=6, family in 0usize..4) {
        let mut r = rng::from_seed(seed);
        let h = random_hamiltonian(&mut r, n, 6);
        let (c, p) = random_state_circuit(&mut r, n);
        let f = postprocessor(family, n, seed);
        let inf = estimate_energy(&c, &p, f.as_ref(), &h, &EstimateOptions::new(Mode::InfiniteShot)).unwrap();
        let exact = exact_energy(&c, &p, f.as_ref(), &h).unwrap();
        prop_assert!((inf.value - exact).abs() <= 1e-10 * exact.abs().max(1.0));
        let mut opts = EstimateOptions::new(Mode::InfiniteShot);
        opts.physical_cz = true;
        let cz = estimate_energy(&c, &p, f.as_ref(), &h, &opts).unwrap();
        prop_assert!((cz.value - inf.value).abs() <= 1e-12 * exact.abs().max(1.0));
    }

    #[test]
    fn diagonal_terms_match_direct_sum(seed in any::<u64>(), n in 2usize..=6, family in 0usize..4) {
        let mut r = rng::from_seed(seed);
        let (c, p) = random_state_circuit(&mut r, n);
        let f = postprocessor(family, n, seed);
        let psi = c.run_shifted(&p, None).unwrap();
        let zs = PauliString::from_ops((0..n).map(|_| if r.random_bool(0.5) { Pauli::Z } else { Pauli::I }).collect());
        let term = PauliTerm { coeff: 0.7, string: zs.clone() };
        let (v, _) = diagonal_term_estimate(&Outcomes::exact(&psi), f.as_ref(), &term).unwrap();
        let want: f64 = postprocessed(&psi, f.as_ref())
            .unwrap()
            .iter()
            .enumerate()
            .map(|(s, a)| {
                let act = apply_to_basis(&zs, Bitstring::new(n, s).unwrap()).unwrap();
                0.7 * a.norm_sqr() * act.phase.to_complex().re
            })
            .sum();
        prop_assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn energies_respect_variational_bound(seed in any::<u64>(), n in 2usize..=6, family in 0usize..4) {
        let mut r = rng::from_seed(seed);
        let h = random_hamiltonian(&mut r, n, 8);
        let (e0, _) = exact_ground(&h).unwrap();
        let (c, p) = random_state_circuit(&mut r, n);
        let f = postprocessor(family, n, seed);
        prop_assert!(exact_energy(&c, &p, f.as_ref(), &h).unwrap() >= e0 - 1e-9);
    }

    #[test]
    fn postprocessor_gradients_match_finite_differences(seed in any::<u64>(), n in 2usize..=6, family in 0usize..4) {
        let f = postprocessor(family, n, seed);
        let mut r = rng::from_seed(seed);
        let s = r.random_range(0..1usize << n);
        let g = f.grad(s);
        let mut probe = f.box_clone();
        let w0 = f.weights().to_vec();
        let step = 1e-6;
        for k in 0..w0.len() {
            let mut w = w0.clone();
            w[k] += step;
            probe.set_weights(&w).unwrap();
            let up = probe.eval(s);
            w[k] -= 2.0 * step;
            probe.set_weights(&w).unwrap();
            let down = probe.eval(s);
            let fd = (up - down) / (2.0 * step);
            prop_assert!((fd - g[k]).norm() <= 1e-5 * g[k].norm() + 1e-7, "k={} fd={} grad={}", k, fd, g[k]);
        }
        prop_assert_eq!(f.eval(s), f.eval(s));
    }

    #[test]
    fn guarded_ranges_are_sound(seed in any::<u64>(), n in 2usize..=10, family in 0usize..4) {
        let f = postprocessor(family, n, seed);
        let r = f.output_range();
        for s in 0..1usize << n {
            let v = f.eval(s).norm();
            prop_assert!(v <= r * (1.0 + 1e-12));
            if f.range_guarded() {
                prop_assert!(v >= (1.0 - 1e-12) / r);
            }
        }
    }
}

#[test]
fn pauli_action_is_an_involution() {
    let mut r = rng::from_seed(11);
    for _ in 0..10_000 {
        let n = r.random_range(1..=12);
        let p = random_string(&mut r, n);
        let s = Bitstring::new(n, r.random_range(0..1usize << n)).unwrap();
        let once = apply_to_basis(&p, s).unwrap();
        let twice = apply_to_basis(&p, once.out).unwrap();
        assert_eq!(twice.out, s);
        assert_eq!(once.phase * twice.phase, Phase::ONE);
    }
}

#[test]
fn ground_states_have_small_residuals() {
    for n in 3..=12 {
        for boundary in [Boundary::Periodic, Boundary::Open] {
            for h in [build_tfim(n, boundary).unwrap(), build_heisenberg(n, boundary).unwrap()] {
                let (e0, psi) = exact_ground(&h).unwrap();
                let mut out = vec![C64::new(0.0, 0.0); 1 << n];
                h.compile().apply(psi.amplitudes(), &mut out);
                let res: f64 =
                    out.iter().zip(psi.amplitudes()).map(|(hv, v)| (hv - v * e0).norm_sqr()).sum::<f64>().sqrt();
                assert!(res <= 1e-7, "n={n} {boundary:?}: residual {res}");
            }
        }
    }
}

#[test]
fn jastrow_equals_its_diagonal_table() {
    let mut r = rng::from_seed(12);
    for _ in 0..20 {
        let n = r.random_range(2..=6);
        let h = random_hamiltonian(&mut r, n, 6);
        let (c, p) = random_state_circuit(&mut r, n);
        let j = postprocessor(0, n, r.random());
        let table = Table::of(j.as_ref());
        let a = exact_energy(&c, &p, j.as_ref(), &h).unwrap();
        let b = exact_energy(&c, &p, &table, &h).unwrap();
        assert!((a - b).abs() <= 1e-12);
        // Jastrow factors are invariant under flipping every spin.
        let full = (1usize << n) - 1;
        for s in 0..1usize << n {
            assert!((j.eval(s) - j.eval(s ^ full)).norm() < 1e-12);
        }
    }
}

#[test]
fn swap_ansatz_keeps_total_spin_fixed() {
    for n in [4usize, 6] {
        let mut terms = Vec::new();
        for i in 0..n {
            for k in 0..n {
                if i != k {
                    for p in [Pauli::X, Pauli::Y, Pauli::Z] {
                        terms.push(PauliTerm { coeff: 0.25, string: PauliString::from_sparse(n, &[(i, p), (k, p)]).unwrap() });
                    }
                }
            }
        }
        terms.push(PauliTerm { coeff: 0.75 * n as f64, string: PauliString::identity(n) });
        let s2 = Hamiltonian::new(n, terms).unwrap().compile();
        let c = heisenberg_swap(n, 2).unwrap();
        let mut r = rng::from_seed(n as u64);
        for _ in 0..10 {
            let p: Vec<f64> = (0..c.n_params()).map(|_| r.random_range(-3.0..3.0)).collect();
            let psi = c.run_shifted(&p, None).unwrap();
            assert!(s2.expectation(psi.amplitudes()).abs() < 1e-10);
        }
    }
}

#[test]
fn training_respects_bounds_dominance_and_determinism() {
    let h = build_tfim(4, Boundary::Periodic).unwrap();
    let (e0, _) = exact_ground(&h).unwrap();
    let c = tfim_qaoa(4, 1).unwrap();
    let spec = PostprocSpec::mlp(4, &[8, 4], &[Activation::Relu, Activation::Relu], Some(5.0)).with_seed(5);
    let mut cfg = TrainingConfig::two_stage(150, 250);
    cfg.restarts = 3;
    cfg.seed = 21;
    let vqnhe = fit(&Problem { hamiltonian: &h, circuit: &c, postprocessor: Some(&spec) }, &cfg).unwrap();
    let vqe = fit(&Problem { hamiltonian: &h, circuit: &c, postprocessor: None }, &cfg.vqe_baseline()).unwrap();
    for run in [&vqnhe, &vqe] {
        let hist = &run.best.history;
        assert!(hist.iter().all(|e| e.energy >= e0 - 1e-9));
        let running_min = hist.iter().map(|e| e.energy).fold(f64::INFINITY, f64::min);
        assert!(run.best.best_energy <= running_min);
    }
    assert!(vqnhe.best.best_energy <= vqe.best.best_energy + 1e-9);
    let again = fit(&Problem { hamiltonian: &h, circuit: &c, postprocessor: Some(&spec) }, &cfg).unwrap();
    assert_eq!(again.best.history, vqnhe.best.history);
    assert_eq!(again.best.best_theta, vqnhe.best.best_theta);
    assert_eq!(again.best.best_phi, vqnhe.best.best_phi);
}

#[test]
fn dense_energy_oracle_agrees_with_matrix_free_path() {
    let mut r = rng::from_seed(13);
    for _ in 0..20 {
        let n = r.random_range(2..=6);
        let h = random_hamiltonian(&mut r, n, 8);
        let (c, p) = random_state_circuit(&mut r, n);
        let f = postprocessor(3, n, r.random());
        let pf = DVector::from_vec(postprocessed(&c.run_shifted(&p, None).unwrap(), f.as_ref()).unwrap());
        let m = dense_matrix(&h).unwrap();
        let want = (pf.adjoint() * &m * &pf)[(0, 0)].re / pf.norm_squared();
        assert!((exact_energy(&c, &p, f.as_ref(), &h).unwrap() - want).abs() < 1e-10);
    }
}
