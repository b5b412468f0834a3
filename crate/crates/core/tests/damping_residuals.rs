mod common;

use lle_core::damping::{build_ledger, residual_decomposition, split_residual, ResidualDecomposition, Variable};
use lle_core::evolution::{evolve, make_perturbation, EvolveOptions, PerturbationSpec};
use lle_core::modulation::PhaseField;

fn decomposition(amplitude_frac: f64, linearized: bool) -> ResidualDecomposition {
    let w = common::wave();
    let g = common::periodic_grid(w, 8, 64);
    let sup = w.sample_on(&g, 0).iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut spec = PerturbationSpec::localized(amplitude_frac * sup, w.period() / 10.0);
    spec.center_offset = 0.15 * w.period();
    let init = make_perturbation(&spec, w, &g).unwrap();
    let opts = EvolveOptions { t_final: 8.0, dt: 0.01, save_every: 2, observe_every: 0, linearized };
    let traj = evolve(&init.state, Some(w), &w.params, opts, None).unwrap();
    let ledger = build_ledger(&traj, w, Variable::Unmodulated, None, 3).unwrap();
    residual_decomposition(&ledger, 3).unwrap()
}

#[test]
fn nonlinear_residual_share_scales_with_amplitude() {
    let eps = 4e-3;
    let (f1, l1) = (decomposition(eps, false), decomposition(eps, true));
    let (f2, l2) = (decomposition(eps / 2.0, false), decomposition(eps / 2.0, true));
    let s1 = split_residual(&f1, &l1).unwrap();
    let s2 = split_residual(&f2, &l2).unwrap();
    let ratio = s1.nonlinear_share / s2.nonlinear_share;
    assert!((ratio - 2.0).abs() < 0.3, "share ratio {ratio}");
    // the linear residual is quadratic in the perturbation
    let q = s1.c1_quadratic / s2.c1_quadratic;
    assert!((q - 1.0).abs() < 0.05, "quadratic constant ratio {q}");
    let l = s1.c1_linear / s2.c1_linear;
    assert!((l - 2.0).abs() < 0.1, "linear constant ratio {l}");
}

#[test]
fn frozen_phase_forward_matches_unmodulated() {
    let w = common::wave();
    let g = common::periodic_grid(w, 4, 64);
    let sup = w.sample_on(&g, 0).iter().map(|c| c.norm()).fold(0.0, f64::max);
    let init = make_perturbation(&PerturbationSpec::localized(1e-3 * sup, w.period() / 8.0), w, &g).unwrap();
    let opts = EvolveOptions { t_final: 2.0, dt: 0.01, save_every: 2, observe_every: 0, linearized: false };
    let traj = evolve(&init.state, Some(w), &w.params, opts, None).unwrap();
    let phases = vec![PhaseField::zero(&g); traj.len()];
    let un = residual_decomposition(&build_ledger(&traj, w, Variable::Unmodulated, None, 3).unwrap(), 2).unwrap();
    let fw = residual_decomposition(&build_ledger(&traj, w, Variable::Forward, Some(&phases), 3).unwrap(), 2).unwrap();
    let b3 = fw.bound_3.as_ref().unwrap();
    assert!(b3.iter().all(|v| *v == 0.0));
    assert_eq!(fw.linear_fit.constants[2], 0.0);
    let scale = un.residual.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (a, b) in un.residual.iter().zip(&fw.residual) {
        assert!((a - b).abs() <= 1e-10 * scale);
    }
}

#[test]
fn zero_perturbation_has_zero_residual() {
    let w = common::wave();
    let g = common::periodic_grid(w, 2, 64);
    let init = make_perturbation(&PerturbationSpec::localized(0.0, 1.0), w, &g).unwrap();
    let opts = EvolveOptions { t_final: 0.5, dt: 0.01, save_every: 5, observe_every: 0, linearized: true };
    let traj = evolve(&init.state, Some(w), &w.params, opts, None).unwrap();
    let d = residual_decomposition(&build_ledger(&traj, w, Variable::Unmodulated, None, 3).unwrap(), 3).unwrap();
    let scale = 1e-20;
    assert!(d.residual.iter().all(|v| v.abs() < scale), "{:?}", &d.residual[..3]);
}
