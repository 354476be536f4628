//! End-to-end acceptance checks on the linear demo. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use spetc_core::analysis::{practical_ball, transmission_comparison, ArcSummary, TRAILING_FRACTION};
use spetc_core::certificate::{
    compute_calt, derive_constants, epsilon_star_search, integrate_zeta, practical_norm_bound, validate_assumptions,
    xi_hat, EpsilonProblem, JumpCompensation, QuadraticLyapunovData,
};
use spetc_core::demo::{
    deadzone_setup, demo_certificate, demo_initial, dwell_setup, nonlinear_plant, run_demo, DemoKind, DEMO_RHO,
};
use spetc_core::hybrid::{HybridArc, Termination};
use spetc_core::plant::PlantSpec;
use spetc_core::scenario::sample_ball;
use spetc_core::simulator::{integrate_arc, Monitors, SolverConfig};
use spetc_core::trigger::TriggerPolicy;

type Outcome = Result<String, String>;

const DELTA: f64 = 2.0;
const N_INITIAL: u64 = 20;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn summary_of(kind: DemoKind, name: &str) -> Result<ArcSummary, String> {
    let out = run_demo(kind).map_err(err)?;
    let (_, text) = out
        .files
        .iter()
        .find(|(n, _)| n == name)
        .ok_or_else(|| format!("demo did not write {name}"))?;
    serde_json::from_str(text).map_err(err)
}

fn zeno_defect() -> Outcome {
    let s = summary_of(DemoKind::Zeno, "zeno_summary.json")?;
    check(
        s.termination == Termination::ZenoGuard && s.jump_count >= 1000 && s.final_time == 0.0,
        format!(
            "termination {:?}, {} jumps, elapsed t = {}",
            s.termination, s.jump_count, s.final_time
        ),
    )
}

/// Dead-zone arcs from 20 initial conditions in the ball of radius `DELTA`.
fn deadzone_ball_arcs() -> Result<Vec<HybridArc>, String> {
    let cert = demo_certificate();
    let (params, plant, policy, cfg) = deadzone_setup(DEMO_RHO).map_err(err)?;
    (0..N_INITIAL)
        .map(|seed| {
            let q0 = sample_ball(plant.dims(), DELTA, seed, false);
            integrate_arc(&plant, &policy, &q0, &cfg, Monitors::new(Some(&cert), Some(&params))).map_err(err)
        })
        .collect()
}

fn deadzone_dwell(arcs: &[HybridArc]) -> Outcome {
    let cert = demo_certificate();
    let (params, plant, _, _) = deadzone_setup(DEMO_RHO).map_err(err)?;
    let theta = params.theta.ok_or("missing theta")?;
    let xi = xi_hat(&plant, &cert, DELTA, theta * DEMO_RHO, 100_000, 1).map_err(err)?;
    let bound = DEMO_RHO / xi;
    // e(0) = 0, so the first interval counts as well
    let min_iet = arcs
        .iter()
        .flat_map(|a| {
            let times: Vec<f64> = std::iter::once(0.0).chain(a.events.iter().map(|r| r.t)).collect();
            times.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>()
        })
        .fold(f64::INFINITY, f64::min);
    let jumps: usize = arcs.iter().map(HybridArc::jump_count).sum();
    check(
        bound > 0.0 && min_iet >= bound && jumps > 0,
        format!(
            "eps = {:.6}, xi_hat = {xi:.4}, rho/xi_hat = {bound:.4e}, min inter-event time {min_iet:.4} over {jumps} jumps",
            plant.epsilon
        ),
    )
}

fn practical_balls() -> Outcome {
    let cert = demo_certificate();
    let mut radii = Vec::new();
    let mut detail = Vec::new();
    let mut within = true;
    for rho in [2.0 * DEMO_RHO, DEMO_RHO, 0.5 * DEMO_RHO] {
        let (params, plant, policy, cfg) = deadzone_setup(rho).map_err(err)?;
        let cfg = SolverConfig { horizon: 40.0, ..cfg };
        let arc = integrate_arc(&plant, &policy, &demo_initial(false), &cfg, Monitors::new(Some(&cert), Some(&params)))
            .map_err(err)?;
        let r = practical_ball(&arc, TRAILING_FRACTION).map_err(err)?;
        let theta = params.theta.ok_or("missing theta")?;
        let bound = practical_norm_bound(&cert, plant.epsilon, params.sigma, rho, theta);
        within &= r <= bound;
        detail.push(format!(
            "rho {rho}: radius {r:.4} (norm bound {bound:.3}, theta*rho {:.3})",
            theta * rho
        ));
        radii.push(r);
    }
    let monotone = radii.windows(2).all(|w| w[1] <= w[0]);
    check(monotone && within, detail.join("; "))
}

fn v_flow_decrease(arcs: &[HybridArc]) -> Outcome {
    let (params, plant, _, _) = deadzone_setup(DEMO_RHO).map_err(err)?;
    let c = demo_certificate().consts;
    let mu = params.mu;
    let v_min = 2.0 * (1.0 + plant.epsilon.sqrt() * c.l_link) * DEMO_RHO / mu;
    let (mut pairs, mut bad, mut worst) = (0usize, 0usize, f64::NEG_INFINITY);
    for arc in arcs {
        for w in arc.samples.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let h = b.time.t - a.time.t;
            if a.time.j != b.time.j || h <= 0.0 {
                continue;
            }
            let (va, vb) = match (a.monitors.v, b.monitors.v) {
                (Some(va), Some(vb)) => (va, vb),
                _ => return Err("V monitor missing".into()),
            };
            if va.min(vb) < v_min {
                continue;
            }
            pairs += 1;
            // the secant of a decaying exponential is steeper than its slope at the right end
            let rate = (vb - va) / h;
            let limit = -0.5 * mu * vb * (1.0 - 0.05);
            worst = worst.max(rate - limit);
            if rate > limit {
                bad += 1;
            }
        }
    }
    check(
        pairs > 0 && bad == 0,
        format!("{pairs} flow pairs with V >= {v_min:.4}, {bad} violations, worst excess {worst:.3e}"),
    )
}

fn dwell_formula() -> Outcome {
    let triples = [
        ("1/M", 2.0, 1.0, 4.0, 1.0),
        ("arctan", 1.0, 1.0, 2.0, 1.0),
        ("arctanh", 2.0, 1.0, 2.0, 1.0),
    ];
    let mut detail = Vec::new();
    let mut ok = true;
    for (branch, m, n, g1, a1) in triples {
        let t_cal = compute_calt(m, n, g1, a1).map_err(err)?;
        let t_tilde = integrate_zeta(1e-4, 1e-4, m, n, g1, a1).map_err(err)?.t_tilde;
        let gap = (t_tilde - t_cal).abs();
        ok &= gap <= 1e-3;
        detail.push(format!("{branch}: T {t_cal:.6} vs oracle {t_tilde:.6}"));
    }
    check(ok, detail.join("; "))
}

fn gas_decay() -> Outcome {
    let cert = demo_certificate();
    let (params, plant, policy, cfg) = dwell_setup().map_err(err)?;
    let psi = params.psi.ok_or("missing psi")?;
    let t_star = params.t_star.ok_or("missing t_star")?;
    let q0 = demo_initial(true);
    let arc = integrate_arc(&plant, &policy, &q0, &cfg, Monitors::new(Some(&cert), Some(&params))).map_err(err)?;
    let r0 = arc.samples[0].monitors.r.ok_or("R monitor missing")?;
    let mut worst = 0.0_f64;
    for s in &arc.samples {
        let r = s.monitors.r.ok_or("R monitor missing")?;
        let bound = 1.05 * (-psi * s.time.hybrid_abscissa()).exp() * r0;
        worst = worst.max(r / bound);
    }
    let min_iet = arc
        .events
        .windows(2)
        .map(|w| w[1].t - w[0].t)
        .fold(f64::INFINITY, f64::min);
    let fin = arc.last().ok_or("empty arc")?.state.xy_norm();
    let ratio = fin / q0.xy_norm();
    check(
        arc.termination == Some(Termination::HorizonReached)
            && worst <= 1.0
            && min_iet >= t_star - 2.0 * cfg.event_tol
            && ratio <= 1e-6,
        format!(
            "eps = {:.4e}, psi = {psi:.5}, horizon {:.1}, {} jumps, max R/bound {worst:.4}, min inter-event time {min_iet:.12} (T* {t_star}), final/initial {ratio:.2e}",
            plant.epsilon,
            cfg.horizon,
            arc.jump_count()
        ),
    )
}

fn assumption_soundness() -> Outcome {
    let cert = demo_certificate();
    let (_, plant, _, _) = deadzone_setup(DEMO_RHO).map_err(err)?;
    let report = validate_assumptions(&plant, &cert, 10_000, 10.0, 7).map_err(err)?;
    let worst = report
        .families
        .iter()
        .map(|f| format!("{} {:.2e}", f.name, f.worst_slack))
        .collect::<Vec<_>>()
        .join(", ");

    // P1 = P2 = I gives the constants in closed form
    let (a1b, a2, l) = (3.0, 1.5, 0.7);
    let c = derive_constants(&QuadraticLyapunovData {
        p1: DMatrix::identity(2, 2),
        p2: DMatrix::identity(1, 1),
        alpha1_bar: a1b,
        alpha2: a2,
        l_bar: l,
    })
    .map_err(err)?;
    let hand = [
        (c.alpha1, a1b / 2.0),
        (c.gamma1_bar(), 2.0 * l * l / a1b),
        (c.alpha2, a2),
        (c.beta1, 2.0 * l),
        (c.beta2, 2.0 * l * l),
        (c.beta3, 4.0 * l * l),
        (c.gamma2_bar(), 2.0 * l * l),
        (c.l_link, a1b),
        (c.lambda1, a1b / 2.0),
        (c.lambda2, a1b.sqrt()),
        (c.m, l),
        (c.n, l),
    ];
    let max_gap = hand.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(
        report.passed && max_gap <= 1e-12,
        format!("worst slacks: {worst}; link {}; identity-data constant gap {max_gap:.1e}", report.link_ok),
    )
}

fn transmission_economy() -> Outcome {
    let cert = demo_certificate();
    let (params, plant, policy, cfg) = dwell_setup().map_err(err)?;
    let t_star = params.t_star.ok_or("missing t_star")?;
    let cmp = transmission_comparison(
        &plant,
        &demo_initial(true),
        100.0 * t_star,
        &policy,
        &TriggerPolicy::Periodic { period: t_star },
        &cfg,
        Monitors::new(Some(&cert), None),
    )
    .map_err(err)?;
    let small = 1e-3 * cmp.initial_xy_norm;
    check(
        cmp.jumps_a <= cmp.jumps_b && cmp.final_xy_norm_a <= small && cmp.final_xy_norm_b <= small,
        format!(
            "{} {} jumps vs {} {} jumps; final norms {:.2e} / {:.2e} from {:.3}",
            cmp.policy_a, cmp.jumps_a, cmp.policy_b, cmp.jumps_b, cmp.final_xy_norm_a, cmp.final_xy_norm_b, cmp.initial_xy_norm
        ),
    )
}

/// Worst `z` jump across transmissions, or an error naming the first non-exact jump.
fn jump_exactness(spec: &PlantSpec, arc: &HybridArc) -> Result<f64, String> {
    let bits = |v: &nalgebra::DVector<f64>| v.iter().map(|a| a.to_bits()).collect::<Vec<_>>();
    let mut worst = 0.0_f64;
    for (k, rec) in arc.events.iter().enumerate() {
        let expect = spec.jump_map(&rec.pre);
        let exact = bits(&rec.post.x) == bits(&rec.pre.x)
            && bits(&rec.post.y) == bits(&spec.jump_map_hy(&rec.pre.x, &rec.pre.y, &rec.pre.e))
            && rec.post.e.iter().all(|&v| v.to_bits() == 0)
            && rec.post.tau.map_or(true, |t| t.to_bits() == 0)
            && bits(&rec.post.flat()) == bits(&expect.flat());
        if !exact {
            return Err(format!("jump {k} at t = {} is not the jump map image", rec.t));
        }
        let z_pre = spec.reconstruct_z(&rec.pre.x, &rec.pre.y, &rec.pre.e);
        let z_post = spec.reconstruct_z(&rec.post.x, &rec.post.y, &rec.post.e);
        worst = worst.max((z_post - z_pre).amax());
    }
    // the recorded samples around each jump agree with the jump records
    let jumps: Vec<_> = arc.samples.windows(2).filter(|w| w[1].is_jump).collect();
    if jumps.len() != arc.events.len() {
        return Err("sample jump flags disagree with the event log".into());
    }
    for (w, rec) in jumps.iter().zip(&arc.events) {
        if w[0].state != rec.pre || w[1].state != rec.post {
            return Err(format!("samples around the jump at t = {} disagree with its record", rec.t));
        }
    }
    Ok(worst)
}

fn jump_map_exactness() -> Outcome {
    let cert = demo_certificate();
    let mut arcs: Vec<(&str, PlantSpec, HybridArc)> = Vec::new();
    let (p1, plant1, pol1, cfg1) = deadzone_setup(DEMO_RHO).map_err(err)?;
    let a1 = integrate_arc(&plant1, &pol1, &demo_initial(false), &cfg1, Monitors::new(Some(&cert), Some(&p1))).map_err(err)?;
    arcs.push(("deadzone", plant1, a1));
    let (p2, plant2, pol2, cfg2) = dwell_setup().map_err(err)?;
    let cfg2 = SolverConfig { horizon: 200.0, ..cfg2 };
    let a2 = integrate_arc(&plant2, &pol2, &demo_initial(true), &cfg2, Monitors::new(Some(&cert), Some(&p2))).map_err(err)?;
    arcs.push(("time-regularized", plant2, a2));
    let nl = nonlinear_plant(0.05).map_err(err)?;
    let q0 = spetc_core::hybrid::HybridState {
        x: nalgebra::DVector::from_element(1, 1.5),
        y: nalgebra::DVector::from_element(1, -0.5),
        e: nalgebra::DVector::zeros(1),
        tau: Some(0.0),
    };
    let cfg3 = SolverConfig { horizon: 5.0, ..SolverConfig::default() };
    let a3 = integrate_arc(&nl, &TriggerPolicy::Periodic { period: 0.3 }, &q0, &cfg3, Monitors::default()).map_err(err)?;
    arcs.push(("nonlinear periodic", nl, a3));

    let mut detail = Vec::new();
    let mut ok = true;
    for (name, spec, arc) in &arcs {
        match jump_exactness(spec, arc) {
            Ok(dz) => {
                ok &= dz <= 1e-9 && arc.jump_count() > 0;
                detail.push(format!("{name}: {} jumps, max z jump {dz:.1e}", arc.jump_count()));
            }
            Err(e) => {
                ok = false;
                detail.push(format!("{name}: {e}"));
            }
        }
    }
    check(ok, detail.join("; "))
}

fn determinism() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for kind in [DemoKind::Zeno, DemoKind::DeadZone, DemoKind::Dwell, DemoKind::Compare] {
        let a = run_demo(kind).map_err(err)?;
        let b = run_demo(kind).map_err(err)?;
        let same = a == b;
        ok &= same;
        let bytes: usize = a.files.iter().map(|(_, c)| c.len()).sum();
        detail.push(format!("{kind:?}: {} files, {bytes} bytes, identical {same}", a.files.len()));
    }
    check(ok, detail.join("; "))
}

/// Reports whether adding the jump-compensation condition leaves a certified epsilon.
fn jump_compensation_diagnostic() -> String {
    let cert = demo_certificate();
    let Ok((params, plant, _, _)) = deadzone_setup(DEMO_RHO) else {
        return "setup failed".into();
    };
    let theta = params.theta.unwrap_or(1.0);
    let xi = match xi_hat(&plant, &cert, DELTA, theta * DEMO_RHO, 100_000, 1) {
        Ok(v) => v,
        Err(e) => return e.to_string(),
    };
    let jump = JumpCompensation {
        rho: DEMO_RHO,
        xi,
        lambda: params.lambda_jump,
    };
    match epsilon_star_search(&cert.consts, params.sigma, EpsilonProblem::Thm1 { mu: params.mu, jump: Some(jump) }) {
        Ok(e) => format!("jump-compensated eps* = {:.4e}", e.value),
        Err(e) => format!("jump-compensated eps*: {e}"),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let ball_arcs = deadzone_ball_arcs();
    let with_arcs = |f: fn(&[HybridArc]) -> Outcome| -> Outcome {
        match &ball_arcs {
            Ok(a) => f(a),
            Err(e) => Err(e.clone()),
        }
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("1 zeno defect of the naive trigger", zeno_defect()),
        ("2 dead-zone minimum inter-event time", with_arcs(deadzone_dwell)),
        ("3 practical-ball monotonicity in rho", practical_balls()),
        ("4 V decrease along flows", with_arcs(v_flow_decrease)),
        ("5 dwell-time bound vs comparison ODE", dwell_formula()),
        ("6 asymptotic decay with time regularization", gas_decay()),
        ("7 sampled assumption soundness", assumption_soundness()),
        ("8 transmission economy vs periodic", transmission_economy()),
        ("9 jump-map exactness", jump_map_exactness()),
        ("10 demo determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    println!("INFO  {}", jump_compensation_diagnostic());
    println!(
        "{} of {} criteria passed in {:.1} s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
