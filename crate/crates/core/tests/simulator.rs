use nalgebra::{DMatrix, DVector};
use spetc_core::certificate::{Certificate, QuadraticLyapunovData};
use spetc_core::demo::{demo_certificate, demo_initial, demo_linear_plant, nonlinear_plant, DEMO_SIGMA};
use spetc_core::hybrid::{HybridArc, HybridState, JumpReason, Termination};
use spetc_core::plant::{LinearPlantSpec, PlantSpec};
use spetc_core::simulator::{integrate_arc, locate_event, monitor_r, monitor_v, Monitors, Propagator, SolverConfig};
use spetc_core::trigger::TriggerPolicy;
use spetc_core::Error;

fn cfg(horizon: f64) -> SolverConfig {
    SolverConfig {
        horizon,
        ..SolverConfig::default()
    }
}

fn run(spec: &PlantSpec, policy: TriggerPolicy, q0: &HybridState, cfg: &SolverConfig) -> HybridArc {
    let cert = demo_certificate();
    integrate_arc(spec, &policy, q0, cfg, Monitors::new(Some(&cert), None)).unwrap()
}

fn assert_well_formed(arc: &HybridArc) {
    arc.check_ordering().unwrap();
    assert!(arc.termination.is_some());
    assert_eq!(arc.samples.iter().filter(|s| s.is_jump).count(), arc.jump_count());
}

#[test]
fn naive_from_origin_hits_zeno_guard() {
    let plant = demo_linear_plant(0.01).to_plant().unwrap();
    let q0 = HybridState::zeros(plant.dims(), false);
    let arc = run(&plant, TriggerPolicy::Naive { sigma: DEMO_SIGMA }, &q0, &cfg(1.0));
    assert_well_formed(&arc);
    assert_eq!(arc.termination, Some(Termination::ZenoGuard));
    assert_eq!(arc.jump_count(), SolverConfig::default().zeno_max_jumps);
    assert_eq!(arc.end_time(), 0.0);
}

#[test]
fn deadzone_jumps_are_localized_and_reset() {
    let plant = demo_linear_plant(0.02).to_plant().unwrap();
    let cert = demo_certificate();
    let th = cert.threshold_data();
    let rho = 0.05;
    let policy = TriggerPolicy::DeadZone { sigma: DEMO_SIGMA, rho };
    let arc = run(&plant, policy, &demo_initial(false), &cfg(15.0));
    assert_well_formed(&arc);
    assert_eq!(arc.termination, Some(Termination::HorizonReached));
    assert!(arc.jump_count() > 0);
    for rec in &arc.events {
        let pre = policy.event_function(&rec.pre, Some(&th)).unwrap();
        assert!((0.0..=1e-6).contains(&pre), "pre-jump margin {pre}");
        assert!(rec.post.e.iter().all(|&v| v == 0.0));
        assert!(policy.event_function(&rec.post, Some(&th)).unwrap() <= -rho);
        assert_eq!(rec.reason, JumpReason::Threshold);
    }
    assert!(arc.events.windows(2).all(|w| w[1].t > w[0].t));
    // flow-set containment
    for s in arc.samples.iter().filter(|s| !s.is_jump) {
        assert!(s.monitors.trigger_margin <= 1e-6);
    }
}

#[test]
fn initial_state_in_jump_set_jumps_first() {
    let plant = demo_linear_plant(0.02).to_plant().unwrap();
    let mut q0 = demo_initial(false);
    q0.e = DVector::from_vec(vec![2.0, 0.0]);
    let arc = run(&plant, TriggerPolicy::DeadZone { sigma: DEMO_SIGMA, rho: 0.05 }, &q0, &cfg(1.0));
    assert_eq!(arc.events[0].t, 0.0);
    assert_eq!(arc.events[0].pre, q0);
    assert!(arc.samples[1].is_jump);
}

#[test]
fn long_period_gives_a_single_flow() {
    let lp = demo_linear_plant(0.01);
    let plant = lp.to_plant().unwrap();
    // K x0 = 0, so the held input stays zero and x follows the slow open loop
    let mut q0 = demo_initial(true);
    q0.x = DVector::from_vec(vec![0.95, -0.2]);
    let arc = run(&plant, TriggerPolicy::Periodic { period: 10.0 }, &q0, &cfg(5.0));
    assert_well_formed(&arc);
    assert_eq!(arc.jump_count(), 0);
    let fin = &arc.last().unwrap().state;
    assert!(fin.x.norm() < q0.x.norm());
    let a0 = lp.reduction().unwrap().a0;
    assert!(a0.complex_eigenvalues().iter().all(|l| l.re < 0.0));
}

#[test]
fn periodic_count_is_floor_of_horizon_over_period() {
    let plant = demo_linear_plant(0.01).to_plant().unwrap();
    for (period, horizon) in [(0.3, 2.0), (0.7, 5.0), (1.3, 4.0)] {
        let arc = run(&plant, TriggerPolicy::Periodic { period }, &demo_initial(true), &cfg(horizon));
        assert_eq!(arc.jump_count(), (horizon / period).floor() as usize);
        assert!(arc.events.iter().all(|r| r.reason == JumpReason::Periodic));
    }
}

#[test]
fn time_regularized_respects_the_dwell() {
    let plant = demo_linear_plant(0.01).to_plant().unwrap();
    let t_star = 0.2;
    let c = cfg(10.0);
    let arc = run(&plant, TriggerPolicy::TimeRegularized { sigma: DEMO_SIGMA, t_star }, &demo_initial(true), &c);
    assert_well_formed(&arc);
    assert!(arc.jump_count() > 1);
    let times: Vec<f64> = std::iter::once(0.0).chain(arc.events.iter().map(|r| r.t)).collect();
    assert!(times.windows(2).all(|w| w[1] - w[0] >= t_star - c.event_tol));
    assert!(arc.events.iter().all(|r| r.post.tau == Some(0.0)));
}

#[test]
fn repeated_runs_are_identical() {
    let plant = demo_linear_plant(0.02).to_plant().unwrap();
    let policy = TriggerPolicy::DeadZone { sigma: DEMO_SIGMA, rho: 0.05 };
    let a = run(&plant, policy, &demo_initial(false), &cfg(10.0));
    let b = run(&plant, policy, &demo_initial(false), &cfg(10.0));
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn exact_propagator_agrees_with_rk45() {
    let plant = demo_linear_plant(1e-3).to_plant().unwrap();
    let rk = cfg(3.0);
    let ex = SolverConfig {
        propagator: Propagator::LinearExact { step: 0.01 },
        ..rk
    };
    for policy in [
        TriggerPolicy::Periodic { period: 0.25 },
        TriggerPolicy::TimeRegularized { sigma: DEMO_SIGMA, t_star: 0.25 },
    ] {
        let a = run(&plant, policy, &demo_initial(true), &rk);
        let b = run(&plant, policy, &demo_initial(true), &ex);
        assert_eq!(a.jump_count(), b.jump_count());
        for (ra, rb) in a.events.iter().zip(&b.events) {
            assert!((ra.t - rb.t).abs() <= 1e-6);
            assert!((ra.pre.flat() - rb.pre.flat()).amax() <= 1e-6);
        }
        let (fa, fb) = (&a.last().unwrap().state, &b.last().unwrap().state);
        assert!((fa.flat() - fb.flat()).amax() <= 1e-6);
    }
}

#[test]
fn exact_propagator_needs_a_linear_plant() {
    let plant = nonlinear_plant(0.1).unwrap();
    let c = SolverConfig {
        propagator: Propagator::LinearExact { step: 0.1 },
        ..cfg(1.0)
    };
    let q0 = HybridState::zeros(plant.dims(), true);
    let err = integrate_arc(&plant, &TriggerPolicy::Periodic { period: 0.5 }, &q0, &c, Monitors::default());
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn nonlinear_plant_with_deadzone() {
    let plant = nonlinear_plant(0.02).unwrap();
    let cert = Certificate::new(QuadraticLyapunovData {
        p1: DMatrix::identity(1, 1),
        p2: DMatrix::identity(1, 1),
        alpha1_bar: 1.0,
        alpha2: 1.0,
        l_bar: 1.0,
    })
    .unwrap();
    let q0 = HybridState::new(
        DVector::from_element(1, 2.0),
        DVector::from_element(1, -1.0),
        DVector::zeros(1),
        None,
    )
    .unwrap();
    let policy = TriggerPolicy::DeadZone { sigma: 0.5, rho: 0.01 };
    let arc = integrate_arc(&plant, &policy, &q0, &cfg(8.0), Monitors::new(Some(&cert), None)).unwrap();
    assert_well_formed(&arc);
    assert_eq!(arc.termination, Some(Termination::HorizonReached));
    assert!(arc.jump_count() > 0);
    for rec in &arc.events {
        let dz = plant.reconstruct_z(&rec.pre.x, &rec.pre.y, &rec.pre.e)
            - plant.reconstruct_z(&rec.post.x, &rec.post.y, &rec.post.e);
        assert!(dz.amax() <= 1e-9);
    }
    assert!(arc.last().unwrap().state.xy_norm() < q0.xy_norm());
}

#[test]
fn unstable_plant_ends_in_divergence() {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    let lp = LinearPlantSpec {
        a11: m(1.0),
        a12: m(0.0),
        a21: m(0.0),
        a22: m(-1.0),
        b1: m(0.0),
        b2: m(0.0),
        k_gain: m(0.0),
        epsilon: 0.1,
    };
    let plant = lp.to_plant().unwrap();
    let v = |a: f64| DVector::from_element(1, a);
    let q0 = HybridState::new(v(1.0), v(0.0), v(0.0), Some(0.0)).unwrap();
    let arc = integrate_arc(&plant, &TriggerPolicy::Periodic { period: 100.0 }, &q0, &cfg(60.0), Monitors::default()).unwrap();
    assert_eq!(arc.termination, Some(Termination::Divergence));
    assert!(arc.end_time() < 60.0);
}

#[test]
fn clock_presence_is_checked() {
    let plant = demo_linear_plant(0.01).to_plant().unwrap();
    let with = demo_initial(true);
    let without = demo_initial(false);
    let tr = TriggerPolicy::TimeRegularized { sigma: 0.5, t_star: 0.1 };
    let nv = TriggerPolicy::Naive { sigma: 0.5 };
    let cert = demo_certificate();
    let mons = Monitors::new(Some(&cert), None);
    assert!(matches!(integrate_arc(&plant, &tr, &without, &cfg(1.0), mons), Err(Error::Config(_))));
    assert!(matches!(integrate_arc(&plant, &nv, &with, &cfg(1.0), mons), Err(Error::Config(_))));
    assert!(matches!(
        integrate_arc(&plant, &nv, &without, &cfg(1.0), Monitors::default()),
        Err(Error::Config(_))
    ));
}

#[test]
fn monitor_examples() {
    let cert = demo_certificate();
    let zero = HybridState::zeros(spetc_core::hybrid::Dims { nx: 2, ny: 1 }, true);
    assert_eq!(monitor_v(&zero, &cert, 0.01), 0.0);
    assert_eq!(monitor_r(&zero, &cert, 0.3, 2.0), 0.0);
    let mut q = demo_initial(true);
    let base = cert.vx(&q.x) + 0.3 * cert.vy(&q.y);
    assert_eq!(monitor_r(&q, &cert, 0.3, 5.0), base);
    q.e = DVector::from_vec(vec![0.5, 0.5]);
    assert_eq!(monitor_r(&q, &cert, 0.3, -1.0), base);
    assert!(monitor_r(&q, &cert, 0.3, 1.0) > base);
    let v = monitor_v(&q, &cert, 0.04);
    assert_eq!(v, cert.vx(&q.x) + 0.2 * cert.vy(&q.y));
}

#[test]
fn event_bisection() {
    let t = locate_event(|s| s - 0.5, 0.0, 1.0, 1e-9).unwrap();
    assert!((t - 0.5).abs() <= 1e-9 && t >= 0.5);
    assert!(locate_event(|s| -1.0 - s, 0.0, 1.0, 1e-9).is_none());
}

#[test]
fn zero_horizon_keeps_only_the_initial_sample() {
    let plant = demo_linear_plant(0.01).to_plant().unwrap();
    let arc = run(&plant, TriggerPolicy::DeadZone { sigma: 0.5, rho: 0.1 }, &demo_initial(false), &cfg(0.0));
    assert_eq!(arc.len(), 1);
    assert_eq!(arc.termination, Some(Termination::HorizonReached));
}
