//! Acceptance gate. Runs every criterion, prints one `[PASS]`/`[FAIL]` line
//! each, and exits nonzero if any failed. Built without the libtest harness
//! so the lines are always visible.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thermofreq::dispatch::{
    generalized_dispatch, solve_dispatch_mode1, solve_dispatch_mode2, Allocation, DispatchProblem,
    GeneralizedProblem, LinearMarginal, MarginalCost,
};
use thermofreq::dynamics::integrate::Rk4;
use thermofreq::network::symmetric_part_spectrum;
use thermofreq::report::{run_scenario, RunOutput};
use thermofreq::scenario::BlockSpec;
use thermofreq::{simulate, simulate_from, PumpMode, SimSettings, Signal};

use common::{fixture, heat_only_system, max_abs, random_heat_network};

fn gate(criterion: u32, title: &str, ok: bool, detail: String) -> bool {
    println!("[{}] criterion {criterion}: {title} ({detail})", if ok { "PASS" } else { "FAIL" });
    ok
}

struct FixtureRuns {
    mode1: RunOutput,
    mode2: RunOutput,
    mode1_time: Duration,
    mode2_time: Duration,
}

fn fixture_runs() -> &'static FixtureRuns {
    static RUNS: OnceLock<FixtureRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let timed = |name: &str, mode| {
            let s = fixture(name);
            let start = Instant::now();
            let out = run_scenario(&s, mode, true).unwrap();
            (out, start.elapsed())
        };
        let (mode1, mode1_time) = timed("paper_mode1", PumpMode::Mode1);
        let (mode2, mode2_time) = timed("paper_mode2", PumpMode::Mode2);
        FixtureRuns {
            mode1,
            mode2,
            mode1_time,
            mode2_time,
        }
    })
}

fn criterion_1_heat_matrix_structure() -> bool {
    let start = Instant::now();
    let mut worst_sum = 0.0_f64;
    let mut bad_spectra = 0;
    for seed in 0..200 {
        let heat = random_heat_network(seed, 30);
        let a = heat.ah();
        let n = a.nrows();
        for i in 0..n {
            worst_sum = worst_sum.max(a.row(i).sum().abs());
            worst_sum = worst_sum.max(a.column(i).sum().abs());
        }
        let ev = symmetric_part_spectrum(a);
        let near_zero = ev.iter().filter(|v| v.abs() <= 1e-10).count();
        let negative = ev.iter().filter(|v| **v < -1e-10).count();
        if near_zero != 1 || negative != 0 {
            bad_spectra += 1;
        }
    }
    let elapsed = start.elapsed();
    gate(
        1,
        "A_h zero row/column sums, PSD symmetric part with a simple zero eigenvalue",
        worst_sum <= 1e-12 && bad_spectra == 0 && elapsed < Duration::from_secs(5),
        format!("max |sum| {worst_sum:.1e}, bad spectra {bad_spectra}/200, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn criterion_2_thermal_energy_conservation() -> bool {
    let mut worst = 0.0_f64;
    for seed in 0..4 {
        let system = heat_only_system(1000 + seed, 30);
        let mut rng = StdRng::seed_from_u64(seed);
        let mut x = system.default_initial_state();
        for i in system.layout().temperatures() {
            x[i] = rng.random_range(-1.0..1.0);
        }
        let settings = SimSettings {
            t_end: 100.0,
            ..SimSettings::default()
        };
        let traj = simulate_from(&system, &[], &settings, &x).unwrap();
        let volumes = system.heat().volumes();
        let energy = |s: &[f64]| -> f64 {
            s[system.layout().temperatures()]
                .iter()
                .zip(volumes)
                .map(|(t, v)| t * v)
                .sum()
        };
        let e0 = energy(traj.state(0));
        for i in 0..traj.len() {
            worst = worst.max((energy(traj.state(i)) - e0).abs());
        }
    }
    gate(
        2,
        "1^T V T constant without net heat injection over 100 s",
        worst <= 1e-9,
        format!("max drift {worst:.2e}"),
    )
}

fn criterion_3_convergence_and_security() -> bool {
    let runs = fixture_runs();
    let mut details = Vec::new();
    let mut ok = true;
    for (out, time) in [(&runs.mode1, runs.mode1_time), (&runs.mode2, runs.mode2_time)] {
        let eq = out.report.equilibrium.as_ref().expect("equilibrium expanded");
        ok &= eq.final_distance < 1e-4 && eq.secure && eq.residual < 1e-9 && time < Duration::from_secs(30);
        details.push(format!(
            "mode {}: |x - x*| {:.1e}, margin {:.3}, residual {:.1e}, {:.1} s",
            out.report.mode,
            eq.final_distance,
            eq.security_margin,
            eq.residual,
            time.as_secs_f64()
        ));
    }
    gate(3, "convergence to a secure equilibrium by 200 s", ok, details.join("; "))
}

fn criterion_4_mode1_power_sharing() -> bool {
    let out = &fixture_runs().mode1;
    let d = out.report.dispatch.as_ref().expect("dispatch verified");
    let value = |q: &str| d.rows.iter().find(|r| r.quantity == q).unwrap().simulated;
    let gen_ratio = value("pG_2") / value("pG_1");
    let heat_ratio = value("hG_5") / value("hG_9");
    gate(
        4,
        "mode 1 dispatch equals the electric and heat KKT optima",
        d.passed && (gen_ratio - 2.0).abs() < 1e-3 && (heat_ratio - 2.0).abs() < 1e-3,
        format!(
            "max error {:.1e}, pG2/pG1 {gen_ratio:.6}, hG5/hG9 {heat_ratio:.6}",
            d.max_abs_error
        ),
    )
}

fn criterion_5_mode2_joint_optimality() -> bool {
    let out = &fixture_runs().mode2;
    let d = out.report.dispatch.as_ref().expect("dispatch verified");
    let cross = d.cross_sector_residual.expect("mode 2 link residual");
    gate(
        5,
        "mode 2 dispatch equals the joint KKT optimum",
        d.passed && d.generator_marginal_spread < 1e-6 && d.source_marginal_spread < 1e-6 && cross < 1e-6,
        format!(
            "max error {:.1e}, spreads {:.1e}/{:.1e}, cross-sector {cross:.1e}",
            d.max_abs_error, d.generator_marginal_spread, d.source_marginal_spread
        ),
    )
}

fn criterion_6_mode_comparison() -> bool {
    let runs = fixture_runs();
    let (r1, r2) = (&runs.mode1.report, &runs.mode2.report);
    let peak = |r: &thermofreq::report::RunReport| {
        r.buses.iter().filter(|b| !b.converter).map(|b| b.max_deviation).fold(0.0, f64::max)
    };
    let all_settle = r1.buses.iter().chain(&r2.buses).all(|b| b.settling_time.is_some());
    gate(
        6,
        "mode 2 has smaller steady and transient frequency deviation",
        r2.steady_omega.abs() <= r1.steady_omega.abs() && peak(r2) < peak(r1) && all_settle,
        format!(
            "|omega| {:.4e} vs {:.4e}, peak {:.4e} vs {:.4e}, all buses settle: {all_settle}",
            r1.steady_omega.abs(),
            r2.steady_omega.abs(),
            peak(r1),
            peak(r2)
        ),
    )
}

fn criterion_7_passivity_audit() -> bool {
    let runs = fixture_runs();
    let mut audits: Vec<_> = runs.mode1.report.passivity.iter().chain(&runs.mode2.report.passivity).cloned().collect();
    let null = fixture("null_scenario");
    for mode in [PumpMode::Mode1, PumpMode::Mode2] {
        audits.extend(run_scenario(&null, mode, false).unwrap().report.passivity);
    }

    // The same fixture with every controller swapped for the two-lag block.
    let demo = fixture("paper_mode1").with_blocks(|b| BlockSpec::TwoLag {
        cost: b.cost(),
        fast_weight: 0.4,
        slow_time_constant: 3.0,
    });
    let mut worst_distance = 0.0_f64;
    let mut demo_dispatch = true;
    for mode in [PumpMode::Mode1, PumpMode::Mode2] {
        let out = run_scenario(&demo, mode, true).unwrap();
        let eq = out.report.equilibrium.as_ref().unwrap();
        worst_distance = worst_distance.max(eq.final_distance);
        demo_dispatch &= out.report.dispatch.as_ref().is_some_and(|d| d.passed);
        audits.extend(out.report.passivity);
    }
    let worst_slack = audits.iter().map(|a| a.report.worst_slack).fold(f64::INFINITY, f64::min);
    let all_passed = audits.iter().all(|a| a.report.passed);
    gate(
        7,
        "supply-rate inequality holds; two-lag controllers still converge",
        all_passed && worst_distance < 1e-4 && demo_dispatch,
        format!(
            "{} audits, worst slack {worst_slack:.1e}, two-lag |x - x*| {worst_distance:.1e}",
            audits.len()
        ),
    )
}

fn random_problem(rng: &mut StdRng) -> DispatchProblem {
    let ng = rng.random_range(1..=4);
    let nb = rng.random_range(1..=4);
    let np = rng.random_range(0..=2);
    // Pump heat in mode 1 needs at least one source to balance against.
    let ns = rng.random_range(usize::from(np > 0)..=3);
    let m = rng.random_range(0.1..2.0);
    let cop = rng.random_range(1.5..5.0);
    DispatchProblem {
        generator_costs: (0..ng).map(|_| rng.random_range(0.1..5.0)).collect(),
        source_costs: (0..ns).map(|_| rng.random_range(0.1..5.0)).collect(),
        damping: (0..nb).map(|_| rng.random_range(0.1..2.0)).collect(),
        pump_gains: (0..np).map(|_| rng.random_range(0.1..3.0)).collect(),
        cops: vec![cop; np],
        mode2_coefficients: vec![m; np],
        electric_demand: rng.random_range(-0.5..0.5),
        heat_demand: if ns > 0 || np > 0 { rng.random_range(-0.5..0.5) } else { 0.0 },
    }
}

fn allocation_gap(a: &Allocation, b: &Allocation) -> f64 {
    let pairs = |x: &[f64], y: &[f64]| {
        assert_eq!(x.len(), y.len());
        x.iter().zip(y).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()))
    };
    pairs(&a.p_gen, &b.p_gen)
        .max(pairs(&a.p_pump, &b.p_pump))
        .max(pairs(&a.p_damping, &b.p_damping))
        .max(pairs(&a.h_src, &b.h_src))
        .max((a.p_pump_total - b.p_pump_total).abs())
        .max((a.h_pump_total - b.h_pump_total).abs())
}

fn rk4_decay_error(dt: f64) -> f64 {
    let mut x = [1.0];
    let mut rk = Rk4::new(1);
    let steps = (1.0 / dt).round() as usize;
    for _ in 0..steps {
        rk.step(
            |x, dx| {
                dx[0] = -x[0];
                Ok(())
            },
            &mut x,
            dt,
        )
        .unwrap();
    }
    (x[0] - (-1.0_f64).exp()).abs()
}

fn criterion_8_oracle_self_consistency() -> bool {
    let mut rng = StdRng::seed_from_u64(8);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let p = random_problem(&mut rng);
        let gens: Vec<LinearMarginal> = p.generator_costs.iter().map(|&cost| LinearMarginal { cost }).collect();
        let srcs: Vec<LinearMarginal> = p.source_costs.iter().map(|&cost| LinearMarginal { cost }).collect();
        let g = GeneralizedProblem {
            generators: gens.iter().map(|m| m as &dyn MarginalCost).collect(),
            sources: srcs.iter().map(|m| m as &dyn MarginalCost).collect(),
            damping: p.damping.clone(),
            pump_gains: p.pump_gains.clone(),
            cops: p.cops.clone(),
            mode2_coefficients: p.mode2_coefficients.clone(),
            electric_demand: p.electric_demand,
            heat_demand: p.heat_demand,
        };
        let q1 = solve_dispatch_mode1(&p).unwrap();
        let g1 = generalized_dispatch(&g, PumpMode::Mode1).unwrap();
        let q2 = solve_dispatch_mode2(&p).unwrap();
        let g2 = generalized_dispatch(&g, PumpMode::Mode2).unwrap();
        worst = worst
            .max(allocation_gap(&q1.allocation, &g1.allocation))
            .max(allocation_gap(&q2.allocation, &g2.allocation));
    }
    let ratio = rk4_decay_error(0.1) / rk4_decay_error(0.05);
    gate(
        8,
        "generalized dispatch reduces to the KKT solvers; RK4 is fourth order",
        worst <= 1e-10 && (12.0..=20.0).contains(&ratio),
        format!("max gap {worst:.1e} over 100 instances, error ratio {ratio:.3}"),
    )
}

fn criterion_9_trivial_equilibrium() -> bool {
    let null = fixture("null_scenario");
    let mut worst = 0.0_f64;
    for mode in [PumpMode::Mode1, PumpMode::Mode2] {
        let system = null.system(mode).unwrap();
        let traj = simulate(&system, &[], &null.settings).unwrap();
        for i in 0..traj.len() {
            worst = worst.max(max_abs(traj.state(i))).max(max_abs(&[traj.value(i, Signal::TBar)]));
        }
    }
    gate(
        9,
        "zero disturbance keeps the state at zero",
        worst < 1e-14,
        format!("max |x| {worst:.1e}"),
    )
}

fn main() {
    let criteria: [(u32, fn() -> bool); 9] = [
        (1, criterion_1_heat_matrix_structure),
        (2, criterion_2_thermal_energy_conservation),
        (3, criterion_3_convergence_and_security),
        (4, criterion_4_mode1_power_sharing),
        (5, criterion_5_mode2_joint_optimality),
        (6, criterion_6_mode_comparison),
        (7, criterion_7_passivity_audit),
        (8, criterion_8_oracle_self_consistency),
        (9, criterion_9_trivial_equilibrium),
    ];
    let mut failed = Vec::new();
    for (n, run) in criteria {
        let ok = std::panic::catch_unwind(run).unwrap_or_else(|_| {
            println!("[FAIL] criterion {n}: panicked");
            false
        });
        if !ok {
            failed.push(n);
        }
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
