mod common;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use star_ris_ee::channel::{composite_channels, draw_channel_set, ChannelParams, CompositeChannels, Geometry};
use star_ris_ee::power::{PowerProblem, PowerSettings};
use star_ris_ee::schemes::{run_scheme, AoSettings, Scheme, SchemeResult};
use star_ris_ee::system::{self, Duplex, PowerAllocation, StarRisProfile, SystemParams};
use star_ris_ee::units::db_to_linear;
use star_ris_ee::Error;

fn composite(m: usize, seed: u64) -> CompositeChannels {
    composite_channels(&common::channels(m, seed)).unwrap()
}

fn run(scheme: Scheme, cc: &CompositeChannels, sys: &SystemParams) -> SchemeResult {
    run_scheme(scheme, cc, sys, &AoSettings::default()).unwrap()
}

fn sum_rate(r: &SchemeResult) -> f64 {
    r.r_u + r.r_d
}

#[test]
fn single_element_beats_random_sampling() {
    let sys = common::unconstrained();
    for seed in 0..3u64 {
        let cs = common::channels(1, seed);
        let cc = composite_channels(&cs).unwrap();
        let r = run(Scheme::SrFdEem, &cc, &sys);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let beta = rng.gen::<f64>();
            let (pt, pr) = (rng.gen::<f64>() * 6.3, rng.gen::<f64>() * 6.3);
            let p_u = rng.gen::<f64>() * sys.constraints.p_u_max;
            let p_d = rng.gen::<f64>() * sys.constraints.p_d_max;
            let e = common::evaluate(common::gains(&cs, &[beta], &[pt], &[pr]), cs.h_bb.norm_sqr(), p_u, p_d, 1, &sys);
            assert!(r.ee >= e.ee() - 1e-9, "seed {seed}: {} below sample {}", r.ee, e.ee());
        }
    }
}

#[test]
fn outputs_are_feasible_and_ao_ascends() {
    let sys = SystemParams::default();
    for seed in 0..3u64 {
        let cc = composite(16, seed);
        for scheme in Scheme::ALL {
            let r = run(scheme, &cc, &sys);
            assert!(r.feasible, "{scheme} seed {seed}");
            let report = system::check_solution(&r.allocation, &r.profile, &cc, &SystemParams { duplex: duplex(scheme), ..sys });
            assert!(report.is_feasible(), "{scheme} seed {seed}: {:?}", report.violations);
            assert_eq!(r.ao_trace.len(), r.iteration_counts.ao + 1);
            if scheme != Scheme::SrFdSrm {
                for w in r.ao_trace.windows(2) {
                    assert!(w[1] >= w[0] - 1e-6, "{scheme} seed {seed}: {:?}", r.ao_trace);
                }
            }
        }
    }
}

fn duplex(scheme: Scheme) -> Duplex {
    if scheme == Scheme::SrHdEem {
        Duplex::Half
    } else {
        Duplex::Full
    }
}

#[test]
fn stronger_self_interference_lowers_downlink_power() {
    // At a fixed surface profile the power step must back off the downlink
    // when each watt of it costs more uplink rate.
    let sys = SystemParams::default();
    let mut compared = 0;
    for seed in 0..6u64 {
        let cc = composite(16, seed);
        let profile = StarRisProfile::uniform(
            DVector::from_fn(16, |m, _| -cc.h2[m].arg()),
            DVector::from_fn(16, |m, _| -cc.h1[m].arg()),
        )
        .unwrap();
        let base = system::effective_gains(&profile, &cc);
        let solve = |scale: f64| {
            let g = system::EffectiveGains { gamma_bb: base.gamma_bb * scale, ..base };
            let prob = PowerProblem::new(g, 16, &sys);
            let start = prob.feasible_start()?;
            Some(prob.optimize(start, &PowerSettings::default()).allocation)
        };
        let (Some(weak), Some(strong)) = (solve(1.0), solve(10.0)) else { continue };
        assert!(strong.p_d <= weak.p_d * (1.0 + 1e-6), "seed {seed}: {strong:?} vs {weak:?}");
        compared += 1;
    }
    assert!(compared >= 4, "only {compared} seeds feasible at both levels");
}

#[test]
fn stronger_self_interference_lowers_efficiency() {
    let sys = SystemParams::default();
    let draw = |rsi_db: f64, seed: u64| {
        let params = ChannelParams { num_elements: 16, sigma_si_sq: db_to_linear(rsi_db), ..ChannelParams::default() };
        composite_channels(&draw_channel_set(&Geometry::default(), &params, seed).unwrap()).unwrap()
    };
    for seed in 0..3u64 {
        let base = run(Scheme::SrFdEem, &draw(-100.0, seed), &sys);
        let strong = run(Scheme::SrFdEem, &draw(-90.0, seed), &sys);
        assert!(strong.ee < base.ee, "seed {seed}: {} vs {}", strong.ee, base.ee);
    }
}

#[test]
fn star_surface_dominates_mode_switching() {
    let sys = SystemParams::default();
    for seed in 0..4u64 {
        let cc = composite(16, seed);
        let sr = run(Scheme::SrFdEem, &cc, &sys);
        let cr = run(Scheme::CrFdEem, &cc, &sys);
        assert!(cr.ee <= 1.01 * sr.ee + 1e-6, "seed {seed}: CR {} vs SR {}", cr.ee, sr.ee);
    }
}

#[test]
fn sum_rate_objective_trades_efficiency_for_rate() {
    let sys = SystemParams::default();
    for seed in 0..4u64 {
        let cc = composite(16, seed);
        let eem = run(Scheme::SrFdEem, &cc, &sys);
        let srm = run(Scheme::SrFdSrm, &cc, &sys);
        assert!(sum_rate(&srm) >= 0.99 * sum_rate(&eem), "seed {seed}: {} vs {}", sum_rate(&srm), sum_rate(&eem));
        assert!(srm.ee <= 1.01 * eem.ee + 1e-6, "seed {seed}: {} vs {}", srm.ee, eem.ee);
    }
}

#[test]
fn sum_rate_objective_uses_full_uplink_power_without_coupling() {
    let mut cc = composite(8, 2);
    cc.h3 = DVector::zeros(8);
    let sys = common::unconstrained();
    let r = run(Scheme::SrFdSrm, &cc, &sys);
    assert!((r.allocation.p_u - sys.constraints.p_u_max).abs() <= 1e-6 * sys.constraints.p_u_max, "{:?}", r.allocation);
}

#[test]
fn half_duplex_halves_the_rate() {
    let mut cc = composite(8, 5);
    cc.h3 = DVector::zeros(8);
    cc.h_bb = 0.0.into();
    let sys = SystemParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let profile = StarRisProfile::uniform(system::random_phases(&mut rng, 8), system::random_phases(&mut rng, 8)).unwrap();
    let p = PowerAllocation::new(0.05, 0.4);
    let g = system::effective_gains(&profile, &cc);
    let (fu, fd) = system::rates(&p, &g, &sys.noise, Duplex::Full);
    let (hu, hd) = system::rates(&p, &g, &sys.noise, Duplex::Half);
    assert!(((fu + fd) - 2.0 * (hu + hd)).abs() <= 1e-12 * (fu + fd));
}

#[test]
fn half_duplex_ignores_self_interference() {
    let sys = SystemParams::default();
    let mut cc = composite(16, 1);
    let a = run(Scheme::SrHdEem, &cc, &sys);
    cc.h_bb *= 1e3;
    let b = run(Scheme::SrHdEem, &cc, &sys);
    assert_eq!(a.ee, b.ee);
    assert_eq!(a.allocation, b.allocation);
}

#[test]
fn mode_switching_needs_even_elements() {
    let cc = composite(7, 0);
    let err = run_scheme(Scheme::CrFdEem, &cc, &SystemParams::default(), &AoSettings::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err:?}");
}

#[test]
fn mode_switching_keeps_element_roles() {
    let cc = composite(16, 0);
    let r = run(Scheme::CrFdEem, &cc, &SystemParams::default());
    for m in 0..16 {
        let expect = if m < 8 { 1.0 } else { 0.0 };
        assert!((r.profile.beta_t[m] - expect).abs() < 1e-9, "element {m}: {}", r.profile.beta_t[m]);
    }
}

#[test]
fn unreachable_thresholds_report_infeasible_start() {
    let cc = composite(8, 0);
    let mut sys = SystemParams::default();
    sys.constraints.r_d_th = 40.0;
    let settings = AoSettings { init_restarts: 3, ..AoSettings::default() };
    let err = run_scheme(Scheme::SrFdEem, &cc, &sys, &settings).unwrap_err();
    assert_eq!(err, Error::InfeasibleInit(3));
}

#[test]
fn scheme_names_round_trip() {
    for s in Scheme::ALL {
        assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
    }
    assert!("SR-XX".parse::<Scheme>().is_err());
}
