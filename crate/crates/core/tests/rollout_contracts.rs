//! Contract tests of the rollout against independently derived values:
//! degenerate closed forms, an exact-hedge construction for the
//! linearized pricing problem, and the analytic quadratic in the scalar
//! weight when the driver vanishes.

use bsde::adam::adam_step;
use bsde::net::{Mode, NetConfig};
use bsde::paths::{sample_brownian, simulate_forward};
use bsde::problems::{make_bs_problem, make_hjb_problem, BsParams, Generator, HjbParams, ProblemSpec};
use bsde::rng::substream;
use bsde::rollout::{loss_and_grads, rollout, Grads, SolverParams};
use ndarray::Array1;

fn no_bn() -> NetConfig {
    NetConfig {
        batch_norm: false,
        ..NetConfig::default()
    }
}

fn zero_driver_problem(dim: usize, n_steps: usize) -> ProblemSpec {
    let p = make_hjb_problem(HjbParams { lambda: 1.0 }, dim, 1.0, n_steps, 0.0).unwrap();
    ProblemSpec {
        generator: Generator::Zero,
        ..p
    }
}

fn zeroed_params(problem: &ProblemSpec, net: NetConfig) -> SolverParams {
    let mut rng = substream(1, 1);
    let mut params = SolverParams::init(problem, net, (0.0, 0.0), &mut rng).unwrap();
    params.grad_u0.fill(0.0);
    for s in params.subnets.iter_mut() {
        for d in [&mut s.fc1, &mut s.fc2, &mut s.out] {
            d.w.fill(0.0);
            d.b.fill(0.0);
        }
    }
    params
}

// f = 0 and z = 0: y_N = u0 on every path, so the loss is the mean
// squared distance between u0 and the terminal payoff, and the u0
// gradient is -2 mean(g - u0).
#[test]
fn degenerate_rollout_is_constant() {
    let problem = zero_driver_problem(3, 4);
    let mut params = zeroed_params(&problem, no_bn());
    params.u0 = 0.7;

    let brownian = sample_brownian(11, 64, 4, 3, 1.0).unwrap();
    let paths = simulate_forward(&problem, &brownian).unwrap();

    let result = rollout(&params, &problem, &paths, None, Mode::Eval).unwrap();
    for v in result.terminal_estimates.iter() {
        assert!((v - 0.7).abs() < 1e-14);
    }
    let gvals: Vec<f64> = (0..paths.batch())
        .map(|b| problem.terminal_value(paths.terminal_states().row(b)).unwrap())
        .collect();
    let expected_loss =
        gvals.iter().map(|g| (g - 0.7) * (g - 0.7)).sum::<f64>() / gvals.len() as f64;
    assert!((result.loss - expected_loss).abs() < 1e-12);

    let (loss, grads) = loss_and_grads(&mut params, &problem, &paths).unwrap();
    assert!((loss - expected_loss).abs() < 1e-12);
    let expected_grad =
        -2.0 * gvals.iter().map(|g| g - 0.7).sum::<f64>() / gvals.len() as f64;
    assert!((grads.u0 - expected_grad).abs() < 1e-12);
}

#[test]
fn override_leaves_params_untouched_and_matches_assignment() {
    let problem = zero_driver_problem(2, 3);
    let mut rng = substream(5, 1);
    let params = SolverParams::init(&problem, NetConfig::default(), (1.0, 2.0), &mut rng).unwrap();
    let brownian = sample_brownian(6, 32, 3, 2, 1.0).unwrap();
    let paths = simulate_forward(&problem, &brownian).unwrap();

    let before = serde_json::to_vec(&params).unwrap();
    let with_override = rollout(&params, &problem, &paths, Some(42.0), Mode::Eval).unwrap();
    let after = serde_json::to_vec(&params).unwrap();
    assert_eq!(before, after);

    let mut assigned = params.clone();
    assigned.u0 = 42.0;
    let direct = rollout(&assigned, &problem, &paths, None, Mode::Eval).unwrap();
    assert_eq!(with_override.loss.to_bits(), direct.loss.to_bits());
}

// With f = 0 the loss is an exact quadratic in u0. Its minimizer is
// mean(g(X_N) - sum_n z_n . dW_n), which equals the terminal estimate of
// a rollout evaluated at u0 = 0. Training only the scalar weight on a
// frozen batch must converge to that minimizer.
#[test]
fn zero_driver_quadratic_minimizer_matches_trained_u0() {
    let problem = zero_driver_problem(3, 4);
    let mut rng = substream(21, 1);
    let mut params =
        SolverParams::init(&problem, NetConfig::default(), (0.0, 0.0), &mut rng).unwrap();
    let brownian = sample_brownian(22, 128, 4, 3, 1.0).unwrap();
    let paths = simulate_forward(&problem, &brownian).unwrap();

    // Quadratic shape check: loss(u) - loss(0) = u^2 - 2 u * mean(g - S).
    let at = |u: f64| rollout(&params, &problem, &paths, Some(u), Mode::Eval).unwrap();
    let s_terms = at(0.0).terminal_estimates; // S = sum z . dW per sample
    let gvals: Vec<f64> = (0..paths.batch())
        .map(|b| problem.terminal_value(paths.terminal_states().row(b)).unwrap())
        .collect();
    let minimizer = gvals
        .iter()
        .zip(s_terms.iter())
        .map(|(g, s)| g - s)
        .sum::<f64>()
        / gvals.len() as f64;
    let (l0, l1, l2) = (at(0.0).loss, at(1.0).loss, at(2.0).loss);
    // Second difference of an exact quadratic with unit leading
    // coefficient is 2.
    assert!((l2 - 2.0 * l1 + l0 - 2.0).abs() < 1e-9);
    let vertex = 1.0 + (l0 - l2) / (2.0 * (l0 - 2.0 * l1 + l2));
    assert!((vertex - minimizer).abs() < 1e-6);

    // Freeze everything but u0 and descend on the frozen batch.
    params.u0 = 0.0;
    let stages = [(0.5, 400), (0.05, 800), (5e-3, 1200), (5e-4, 1600), (5e-5, 2500)];
    for (lr, steps) in stages {
        for _ in 0..steps {
            let (_, grads) = loss_and_grads(&mut params, &problem, &paths).unwrap();
            let masked = Grads {
                u0: grads.u0,
                ..Grads::zeros_like(&params)
            };
            adam_step(&mut params, &masked, lr).unwrap();
        }
    }
    assert!(
        (params.u0 - minimizer).abs() < 1e-6,
        "trained {} vs analytic {}",
        params.u0,
        minimizer
    );
}

/// Exact-hedge subnets for the linearized pricing problem: each subnet
/// computes `z = c x` through identity blocks (valid for positive
/// states), with `c = sigma_hat * exp(a (T - t_n))`.
fn exact_hedge_params(problem: &ProblemSpec, p: &BsParams, growth: f64) -> SolverParams {
    let mut rng = substream(2, 1);
    let mut params = SolverParams::init(problem, no_bn(), (0.0, 0.0), &mut rng).unwrap();
    let dt = problem.dt();
    let horizon = problem.horizon;
    let d = problem.dim;
    for (idx, s) in params.subnets.iter_mut().enumerate() {
        let t_n = (idx + 1) as f64 * dt;
        let c = p.sigma_hat * (growth * (horizon - t_n)).exp();
        for dense in [&mut s.fc1, &mut s.fc2, &mut s.out] {
            dense.w.fill(0.0);
            dense.b.fill(0.0);
        }
        for j in 0..d {
            s.fc1.w[[j, j]] = 1.0;
            s.fc2.w[[j, j]] = 1.0;
            s.out.w[[j, j]] = c;
        }
    }
    let c0 = p.sigma_hat * (growth * horizon).exp();
    for (j, v) in params.grad_u0.iter_mut().enumerate() {
        *v = c0 * problem.x0[j];
    }
    params
}

// Linearized pricing problem (constant intensity), d = 1: with the
// closed-form initial value and the exact hedge, the loss vanishes as
// the grid refines. The closed form itself is cross-checked against a
// brute-force Euler Monte Carlo of the discounted terminal expectation.
#[test]
fn linearized_bs_exact_hedge_drives_loss_to_zero() {
    let gamma = 0.02;
    let p = BsParams {
        gamma_high: gamma,
        gamma_low: gamma,
        ..BsParams::default()
    };
    let a = p.mu_hat - p.rate - (1.0 - p.recovery) * gamma;
    let u0_closed = 100.0 * (a * 1.0f64).exp();
    assert!((u0_closed - 99.3356).abs() < 1e-4);

    // Brute-force oracle: E[y_N] evolves by (1 + c dt) per step when the
    // driver is -c y, so u0 = E[X_N] / (1 + c dt)^N under the Euler
    // dynamics. Estimated on an independent coarse-free sample.
    let c = p.rate + (1.0 - p.recovery) * gamma;
    let (n_mc, batch_mc) = (500i32, 200_000);
    let mc_problem = make_bs_problem(p.clone(), 1, 1.0, n_mc as usize, 100.0).unwrap();
    let brownian = sample_brownian(77, batch_mc, n_mc as usize, 1, 1.0).unwrap();
    let mc_paths = simulate_forward(&mc_problem, &brownian).unwrap();
    let terminal_mean = mc_paths.terminal_states().column(0).mean().unwrap();
    let dt = 1.0 / f64::from(n_mc);
    let u0_mc = terminal_mean / (1.0 + c * dt).powi(n_mc);
    let se = {
        let col = mc_paths.terminal_states().column(0).to_owned();
        let var = col.iter().map(|v| (v - terminal_mean).powi(2)).sum::<f64>()
            / (batch_mc as f64 - 1.0);
        (var / batch_mc as f64).sqrt() / (1.0 + c * dt).powi(n_mc)
    };
    assert!(
        (u0_mc - u0_closed).abs() < 4.0 * se + 0.02,
        "brute force {u0_mc} vs closed form {u0_closed} (se {se})"
    );

    // Exact hedge: loss shrinks with N.
    let mut losses = Vec::new();
    for n_steps in [5usize, 20, 80] {
        let problem = make_bs_problem(p.clone(), 1, 1.0, n_steps, 100.0).unwrap();
        let mut params = exact_hedge_params(&problem, &p, a);
        params.u0 = u0_closed;
        let brownian = sample_brownian(31, 4096, n_steps, 1, 1.0).unwrap();
        let paths = simulate_forward(&problem, &brownian).unwrap();
        let r = rollout(&params, &problem, &paths, None, Mode::Eval).unwrap();
        losses.push(r.loss);
    }
    assert!(losses[2] < 1e-3, "fine-grid loss {} too large", losses[2]);
    assert!(
        losses[0] > losses[1] && losses[1] > losses[2],
        "loss not decreasing with refinement: {losses:?}"
    );
}

// Independent re-implementation of the recursion with plain loops; the
// library rollout must agree step for step.
#[test]
fn rollout_matches_reference_recursion() {
    let p = BsParams::default();
    let problem = make_bs_problem(p.clone(), 2, 1.0, 4, 100.0).unwrap();
    let mut rng = substream(9, 1);
    let params = SolverParams::init(&problem, no_bn(), (50.0, 50.0), &mut rng).unwrap();
    let brownian = sample_brownian(10, 16, 4, 2, 1.0).unwrap();
    let paths = simulate_forward(&problem, &brownian).unwrap();

    let r = rollout(&params, &problem, &paths, None, Mode::Eval).unwrap();

    // Reference: per-sample scalar loop over the same weights.
    let dt = problem.dt();
    let batch = paths.batch();
    let mut loss = 0.0;
    for b in 0..batch {
        let mut y = params.u0;
        let mut z: Array1<f64> = params.grad_u0.clone();
        for n in 0..4 {
            let f = bsde::problems::bs_generator(y, &p);
            let mut diffusion = 0.0;
            for j in 0..2 {
                diffusion += z[j] * brownian.increments[[b, n, j]];
            }
            y = y - f * dt + diffusion;
            if n + 1 < 4 {
                let x = paths.states.index_axis(ndarray::Axis(1), n + 1).to_owned();
                let zrow = params.subnets[n]
                    .forward(&x, Mode::Eval, &params.net)
                    .unwrap();
                z = zrow.row(b).to_owned();
            }
        }
        let g = problem.terminal_value(paths.terminal_states().row(b)).unwrap();
        loss += (g - y) * (g - y);
        assert!((r.terminal_estimates[b] - y).abs() < 1e-10);
    }
    loss /= batch as f64;
    assert!((r.loss - loss).abs() < 1e-10);
}

#[test]
fn adam_contract_examples() {
    let problem = zero_driver_problem(2, 2);
    let mut rng = substream(3, 1);
    let mut params =
        SolverParams::init(&problem, NetConfig::default(), (1.0, 1.0), &mut rng).unwrap();

    // Zero gradient: parameters unchanged, moments decayed, counter up.
    let flat_before = params.flat_params();
    let zero = Grads::zeros_like(&params);
    adam_step(&mut params, &zero, 0.01).unwrap();
    assert_eq!(params.flat_params(), flat_before);
    assert_eq!(params.adam.step, 1);

    // First step from fresh moments: update ~ -lr * sign(g).
    let mut fresh =
        SolverParams::init(&problem, NetConfig::default(), (1.0, 1.0), &mut substream(3, 1))
            .unwrap();
    let mut g = Grads::zeros_like(&fresh);
    g.u0 = 0.37;
    let mut gv = g.grad_u0.clone();
    gv[0] = -123.0;
    g.grad_u0 = gv;
    let u0_before = fresh.u0;
    let z0_before = fresh.grad_u0[0];
    adam_step(&mut fresh, &g, 0.01).unwrap();
    assert!((fresh.u0 - (u0_before - 0.01)).abs() < 1e-6);
    assert!((fresh.grad_u0[0] - (z0_before + 0.01)).abs() < 1e-6);

    // Non-finite gradients are rejected.
    let mut bad = Grads::zeros_like(&fresh);
    bad.u0 = f64::NAN;
    assert!(adam_step(&mut fresh, &bad, 0.01).is_err());

    // Determinism across identical replays.
    let run = || {
        let mut p = SolverParams::init(
            &problem,
            NetConfig::default(),
            (1.0, 1.0),
            &mut substream(3, 1),
        )
        .unwrap();
        let mut g = Grads::zeros_like(&p);
        g.u0 = 0.25;
        for _ in 0..10 {
            adam_step(&mut p, &g, 0.004).unwrap();
        }
        p.u0
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let problem = zero_driver_problem(3, 3);
    let mut rng = substream(13, 1);
    let mut params =
        SolverParams::init(&problem, NetConfig::default(), (40.0, 50.0), &mut rng).unwrap();
    // Touch the state so moments and running stats are non-trivial.
    let brownian = sample_brownian(14, 16, 3, 3, 1.0).unwrap();
    let paths = simulate_forward(&problem, &brownian).unwrap();
    let (_, grads) = loss_and_grads(&mut params, &problem, &paths).unwrap();
    adam_step(&mut params, &grads, 0.01).unwrap();

    let mut buf = Vec::new();
    params.save_checkpoint(&mut buf).unwrap();
    let loaded = SolverParams::load_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(params.flat_params(), loaded.flat_params());
    let a: Vec<u64> = params.flat_params().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = loaded.flat_params().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
    // Running statistics and Adam state survive too.
    assert_eq!(
        serde_json::to_vec(&params).unwrap(),
        serde_json::to_vec(&loaded).unwrap()
    );
}

// Non-finite intermediate values surface the offending step: a huge
// initial hedge keeps every state finite but overflows the squared
// terminal residual, so the diagnostic points at the final step.
#[test]
fn rollout_diverging_weights_report_the_step() {
    let problem = zero_driver_problem(2, 3);
    let mut params = zeroed_params(&problem, no_bn());
    params.grad_u0.fill(2e307);
    let brownian = sample_brownian(4, 8, 3, 2, 1.0).unwrap();
    let paths = simulate_forward(&problem, &brownian).unwrap();
    match rollout(&params, &problem, &paths, None, Mode::Eval) {
        Err(bsde::SolverError::NonFinite { step, .. }) => assert_eq!(step, 3),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}
