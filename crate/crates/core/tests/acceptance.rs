//! End-to-end acceptance checks, one test per numbered criterion. Each test
//! prints a PASS line with the measured numbers (visible with
//! `cargo test --test acceptance -- --nocapture`); a failing criterion
//! panics with the same measurements.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdscale::convergence::{study, FlowCase};
use crowdscale::desired::DesiredVelocity;
use crowdscale::diagnostics::{
    average_outflow_time, macro_axis_moments_about, measure_axis_moments_about, measure_moments,
    measure_second_moment_about, micro_axis_moments_about, Recorder,
};
use crowdscale::geometry::{Environment, Grid, Rect};
use crowdscale::interaction::{InteractionSpec, KernelParams};
use crowdscale::measures::{Agent, MacroDensity, MicroState, Role};
use crowdscale::scenario::{
    apply_override, build_world, preset, preset_names, AgentLayout, DesiredSpec, KernelSpec,
    PopulationSpec, Scenario,
};
use crowdscale::stepper::{run, step, Population, StepControls, StopReason, World};
use crowdscale::vec2::{vec2, Vec2};

#[test]
fn criterion_01_sealed_presets_conserve_mass_and_agents() {
    for name in preset_names() {
        let mut sc = preset(name).unwrap();
        sc.seal_doors = true;
        sc.controls.t_final = 1e9;
        let mut world = build_world(&sc).unwrap();
        let agents0: Vec<usize> = world.populations.iter().map(|p| p.micro.len()).collect();
        let macro0: Vec<f64> = world
            .populations
            .iter()
            .map(|p| p.density.total_mass())
            .collect();
        for _ in 0..500 {
            step(&mut world);
        }
        for (i, p) in world.populations.iter().enumerate() {
            let drift = (p.density.total_mass() - macro0[i]).abs() / macro0[i];
            assert!(
                drift <= 1e-9,
                "acceptance 1 (conservation): FAIL at {name}/{}: relative macro mass drift {drift:.3e} after 500 sealed steps",
                p.name
            );
            assert_eq!(
                p.micro.len(),
                agents0[i],
                "acceptance 1 (conservation): FAIL at {name}/{}: agent count changed in a sealed domain",
                p.name
            );
            println!(
                "  {name}/{}: drift {drift:.3e}, agents {} (unchanged)",
                p.name,
                p.micro.len()
            );
        }
    }
    println!("acceptance 1 (conservation): PASS — all presets sealed, 500 steps, drift <= 1e-9, agent counts exact");
}

fn random_small_scenario(rng: &mut ChaCha8Rng, case: usize) -> Scenario {
    let h = 0.1;
    let nx = rng.gen_range(14..=20);
    let ny = rng.gen_range(14..=20);
    let size = vec2(nx as f64 * h, ny as f64 * h);

    let step = if rng.gen_bool(0.5) { 0.2 } else { 0.25 };
    let (lx, ly) = (rng.gen_range(2..=3), rng.gen_range(2..=3));
    let extent = vec2(step * (lx - 1) as f64, step * (ly - 1) as f64);
    let origin = vec2(
        rng.gen_range(0.2..=(size.x - extent.x - 0.35)),
        rng.gen_range(0.2..=(size.y - extent.y - 0.2)),
    );

    let obstacles = if rng.gen_bool(0.5) {
        vec![Rect::from_corners(
            size.x - 0.25,
            0.0,
            size.x - 0.15,
            size.y * rng.gen_range(0.4..0.8),
        )]
    } else {
        vec![]
    };

    let desired = if rng.gen_bool(0.25) {
        DesiredSpec::Zero
    } else {
        DesiredSpec::Constant(vec2(rng.gen_range(-0.5..1.0), rng.gen_range(-0.5..0.5)))
    };

    let f_a = if rng.gen_bool(0.2) {
        rng.gen_range(0.0..0.3)
    } else {
        0.0
    };
    let r_r = rng.gen_range(0.15..0.4);
    Scenario {
        name: format!("random{case}"),
        domain_origin: vec2(0.0, 0.0),
        domain_size: size,
        h,
        controls: StepControls {
            dt_max: 0.05,
            cfl: 0.9,
            t_final: 1.0,
            emptiness_threshold: 1e-6,
        },
        seal_doors: false,
        obstacles,
        doors: vec![],
        populations: vec![PopulationSpec {
            name: "p".into(),
            layout: vec![AgentLayout::Lattice {
                origin,
                step: vec2(step, step),
                nx: lx,
                ny: ly,
            }],
            leader: None,
            theta: rng.gen_range(0.0..=1.0),
            lambda: rng.gen_range(1.0..40.0),
            kernel: KernelSpec {
                f_r: rng.gen_range(0.0..0.15),
                f_a,
                r_r,
                r_a: rng.gen_range(r_r..0.6),
                alpha_bar: FRAC_PI_2,
            },
            exogenous: None,
            capital_theta: 0.0,
            desired,
            heading: vec2(1.0, 0.0),
            probe: None,
        }],
    }
}

#[test]
fn criterion_02_density_stays_nonnegative() {
    let mut worst = f64::INFINITY;
    for name in preset_names() {
        let mut sc = preset(name).unwrap();
        sc.controls.t_final = sc.controls.t_final.min(2.0);
        let mut world = build_world(&sc).unwrap();
        let mut min_coeff = world
            .populations
            .iter()
            .map(|p| p.density.min_coefficient())
            .fold(f64::INFINITY, f64::min);
        run(&mut world, |w, _| {
            for p in &w.populations {
                min_coeff = min_coeff.min(p.density.min_coefficient());
            }
        });
        assert!(
            min_coeff >= 0.0,
            "acceptance 2 (positivity): FAIL at preset {name}: min density coefficient {min_coeff:e}"
        );
        worst = worst.min(min_coeff);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    for case in 0..20 {
        let sc = random_small_scenario(&mut rng, case);
        let mut world = build_world(&sc).unwrap();
        let mut min_coeff = f64::INFINITY;
        run(&mut world, |w, _| {
            for p in &w.populations {
                min_coeff = min_coeff.min(p.density.min_coefficient());
            }
        });
        assert!(
            min_coeff >= 0.0,
            "acceptance 2 (positivity): FAIL at random scenario {case}: min density coefficient {min_coeff:e}"
        );
        worst = worst.min(min_coeff);
    }
    println!("acceptance 2 (positivity): PASS — presets and 20 random scenarios, min coefficient {worst:e}");
}

/// Monte-Carlo push-forward: stratified sampling of the piecewise-constant
/// measure, each sample translated by its source cell's displacement, then
/// binned back onto the grid by plain floor indexing. Shares nothing with
/// the overlap-area scheme under test.
fn mc_push_forward(
    density: &MacroDensity,
    cell_velocity: &[Vec2],
    dt: f64,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let grid = &density.grid;
    let h2 = grid.h * grid.h;
    let masses: Vec<f64> = density.rho.iter().map(|r| r * h2).collect();
    let total: f64 = masses.iter().sum();

    let mut alloc = vec![0usize; masses.len()];
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    let mut assigned = 0usize;
    for (k, &m) in masses.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let quota = m / total * n_samples as f64;
        let base = quota.floor() as usize;
        alloc[k] = base;
        assigned += base;
        remainders.push((quota - base as f64, k));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, k) in remainders.iter().take(n_samples - assigned) {
        alloc[k] += 1;
    }

    let mut out = vec![0.0; masses.len()];
    for (k, &n_k) in alloc.iter().enumerate() {
        if n_k == 0 {
            continue;
        }
        let rect = grid.cell_rect(k % grid.nx, k / grid.nx);
        let d = cell_velocity[k] * dt;
        let w = masses[k] / n_k as f64;
        for _ in 0..n_k {
            let x = rect.min.x + rng.gen::<f64>() * grid.h + d.x;
            let y = rect.min.y + rng.gen::<f64>() * grid.h + d.y;
            let ix = ((x - grid.origin.x) / grid.h).floor() as isize;
            let iy = ((y - grid.origin.y) / grid.h).floor() as isize;
            assert!(
                ix >= 0 && iy >= 0 && (ix as usize) < grid.nx && (iy as usize) < grid.ny,
                "sample left the grid; the instance generator must keep support interior"
            );
            out[iy as usize * grid.nx + ix as usize] += w;
        }
    }
    out
}

#[test]
fn criterion_03_macro_step_matches_monte_carlo_push_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let grid = Grid::new(vec2(0.0, 0.0), 0.1, 20, 20);
    let env = Environment::new(grid.bounding_rect(), vec![], vec![], 0.01, true);
    let h2 = grid.h * grid.h;
    let mut worst = 0.0f64;

    for case in 0..10 {
        let mut density = MacroDensity::zeros(grid.clone());
        let bw = rng.gen_range(5..=7);
        let bh = rng.gen_range(5..=7);
        let ox = rng.gen_range(2..(grid.nx - 2 - bw));
        let oy = rng.gen_range(2..(grid.ny - 2 - bh));
        for iy in oy..oy + bh {
            for ix in ox..ox + bw {
                if rng.gen_bool(0.85) {
                    density.rho[grid.linear(ix, iy)] = rng.gen_range(0.2..2.0);
                }
            }
        }
        if density.total_mass() == 0.0 {
            density.rho[grid.linear(ox, oy)] = 1.0;
        }

        let vel: Vec<Vec2> = (0..grid.n_cells())
            .map(|_| vec2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let vmax = vel.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let dt = 0.95 * grid.h / vmax;

        let scheme = crowdscale::stepper::advance_macro(&env, &density, &vel, dt);
        let oracle = mc_push_forward(&density, &vel, dt, 1_000_000, &mut rng);

        let total = density.total_mass();
        let l1: f64 = (0..grid.n_cells())
            .map(|k| (scheme.density.rho[k] * h2 - oracle[k]).abs())
            .sum();
        let rel = l1 / total;
        assert!(
            rel <= 0.01,
            "acceptance 3 (push-forward oracle): FAIL at instance {case}: L1 discrepancy {:.3}% of total mass",
            rel * 100.0
        );
        worst = worst.max(rel);
        println!("  instance {case}: L1 discrepancy {:.4}%", rel * 100.0);
    }
    println!(
        "acceptance 3 (push-forward oracle): PASS — 10 instances, 1e6 samples each, worst {:.4}% <= 1%",
        worst * 100.0
    );
}

#[test]
fn criterion_04_rotation_transport_converges_first_order() {
    let hs = [0.2, 0.1, 0.05, 0.025];
    let levels = study(FlowCase::Rotation, &hs);
    let mut detail = String::new();
    for w in levels.windows(2) {
        assert!(
            w[1].error < w[0].error,
            "acceptance 4 (convergence): FAIL — error grew from {:.3e} (h={}) to {:.3e} (h={})",
            w[0].error,
            w[0].h,
            w[1].error,
            w[1].h
        );
        let order = (w[0].error / w[1].error).log2();
        assert!(
            order >= 0.8,
            "acceptance 4 (convergence): FAIL — empirical order {order:.2} between h={} and h={}",
            w[0].h,
            w[1].h
        );
        detail.push_str(&format!(" {order:.2}"));
    }
    for l in &levels {
        println!("  h={}: l1_cell_error {:.6e}", l.h, l.error);
    }
    println!("acceptance 4 (convergence): PASS — errors monotone, orders{detail} >= 0.8");
}

#[test]
fn criterion_05_dispersal_moments_flat_across_theta() {
    let thetas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut igs = Vec::new();
    for &th in &thetas {
        let mut sc = preset("test1").unwrap();
        apply_override(&mut sc, &format!("populations.0.theta={th}")).unwrap();
        let mut world = build_world(&sc).unwrap();

        let x_max = world.populations[0]
            .micro
            .agents
            .iter()
            .map(|a| a.pos.x)
            .fold(f64::NEG_INFINITY, f64::max);
        let front: Vec<(u32, f64)> = world.populations[0]
            .micro
            .agents
            .iter()
            .filter(|a| (a.pos.x - x_max).abs() < 1e-9)
            .map(|a| (a.id, a.pos.x))
            .collect();
        assert_eq!(front.len(), 10);

        run(&mut world, |_, _| {});
        let p = &world.populations[0];
        let c = measure_moments(p).unwrap().center;
        let ig = measure_second_moment_about(p, c);
        igs.push(ig);

        let shift = front
            .iter()
            .map(|&(id, x0)| {
                let a = p.micro.agents.iter().find(|a| a.id == id).unwrap();
                (a.pos.x - x0).abs()
            })
            .fold(0.0, f64::max);
        println!("  theta={th}: I_G = {ig:.5}, front column |dx| = {shift:.3e}");
        if th == 1.0 {
            assert!(
                shift <= 0.05,
                "acceptance 5 (dispersal trend): FAIL — fully agent-based front column moved {shift:.3e} > 0.05 horizontally"
            );
        }
    }
    let mean = igs.iter().sum::<f64>() / igs.len() as f64;
    let max = igs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = igs.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = (max - min) / mean;
    assert!(
        spread <= 0.15,
        "acceptance 5 (dispersal trend): FAIL — I_G spread {:.1}% of mean exceeds 15%",
        spread * 100.0
    );
    println!(
        "acceptance 5 (dispersal trend): PASS — I_G spread {:.2}% <= 15%, front column pinned at theta=1",
        spread * 100.0
    );
}

#[test]
fn criterion_06_evacuation_time_decreases_with_theta() {
    let thetas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut t_aves = Vec::new();
    for &th in &thetas {
        let mut sc = preset("test2_large").unwrap();
        apply_override(&mut sc, &format!("populations.0.theta={th}")).unwrap();
        let mut world = build_world(&sc).unwrap();
        let mut rec = Recorder::new(&world);
        let summary = run(&mut world, |w, r| rec.observe(w, r));
        assert_eq!(
            summary.reason,
            StopReason::ProbesEmptied,
            "acceptance 6 (evacuation trend): FAIL — theta={th} run ended by {:?} at t={:.2} instead of emptying the room",
            summary.reason,
            summary.final_time
        );
        let t_ave = average_outflow_time(&rec.probe_mass_series("walkers"));
        println!("  theta={th}: T_ave = {t_ave:.4}");
        t_aves.push((th, t_ave));
    }
    for w in t_aves.windows(2) {
        assert!(
            w[1].1 < w[0].1,
            "acceptance 6 (evacuation trend): FAIL — T_ave rose from {:.4} (theta={}) to {:.4} (theta={})",
            w[0].1,
            w[0].0,
            w[1].1,
            w[1].0
        );
    }
    println!(
        "acceptance 6 (evacuation trend): PASS — T_ave strictly decreasing: {}",
        t_aves
            .iter()
            .map(|(_, t)| format!("{t:.3}"))
            .collect::<Vec<_>>()
            .join(" > ")
    );
}

#[test]
fn criterion_07_bottleneck_lanes_at_theta1_and_clog_at_theta0() {
    let mut sc = preset("test3").unwrap();
    apply_override(&mut sc, "populations.0.theta=1").unwrap();
    apply_override(&mut sc, "populations.1.theta=1").unwrap();
    sc.controls.t_final = 8.0;
    let mut world = build_world(&sc).unwrap();
    let summary = run(&mut world, |_, _| {});
    for (i, p) in world.populations.iter().enumerate() {
        let left = p.measure_mass_in(&p.probe.unwrap());
        let frac = left / world.initial_probe_mass(i);
        assert!(
            frac < 0.01,
            "acceptance 7 (bottleneck): FAIL — theta=1 population {} still holds {:.2}% of its probe mass at t={:.2}",
            p.name,
            frac * 100.0,
            world.time
        );
        println!(
            "  theta=1 {}: {:.4}% of probe mass left at t={:.2}",
            p.name,
            frac * 100.0,
            summary.final_time
        );
    }

    let mut sc = preset("test3").unwrap();
    apply_override(&mut sc, "populations.0.theta=0").unwrap();
    apply_override(&mut sc, "populations.1.theta=0").unwrap();
    sc.controls.t_final = 10.0;
    let mut world = build_world(&sc).unwrap();
    let mut rec = Recorder::new(&world);
    run(&mut world, |w, r| rec.observe(w, r));
    let max_flux = rec
        .rows()
        .iter()
        .filter(|r| r.population == "west" && r.time >= 5.0)
        .map(|r| r.door_flux.abs())
        .fold(0.0, f64::max);
    assert!(
        max_flux < 1e-3,
        "acceptance 7 (bottleneck): FAIL — theta=0 west outflux reached {max_flux:.3e} after t=5; the passage did not stay clogged"
    );
    println!("acceptance 7 (bottleneck): PASS — theta=1 probes < 1% by t=8; theta=0 west |flux| {max_flux:.3e} < 1e-3 for t >= 5");
}

#[test]
fn criterion_08_guided_group_advances_and_stays_cohesive() {
    let sc = preset("test4").unwrap();
    let mut world = build_world(&sc).unwrap();

    fn sample(w: &World) -> (f64, f64, f64) {
        let p = &w.populations[0];
        let c = p.follower_center().unwrap();
        let ig: f64 = p.micro.followers().map(|a| (a.pos - c).norm_sq()).sum();
        (w.time, c.x, ig)
    }

    let mut series = vec![sample(&world)];
    run(&mut world, |w, _| series.push(sample(w)));

    let transient_end = 6.0;
    let after: Vec<&(f64, f64, f64)> = series.iter().filter(|s| s.0 >= transient_end).collect();
    assert!(after.len() > 100);
    for w in after.windows(2) {
        assert!(
            w[1].1 > w[0].1,
            "acceptance 8 (guided group): FAIL — follower center stalled at x={:.6} between t={:.3} and t={:.3}",
            w[0].1,
            w[0].0,
            w[1].0
        );
    }
    let ig_ref = after[0].2;
    let ig_max = after.iter().map(|s| s.2).fold(0.0, f64::max);
    assert!(
        ig_max <= 2.0 * ig_ref,
        "acceptance 8 (guided group): FAIL — follower I_G grew to {ig_max:.4}, more than twice its value {ig_ref:.4} at t={transient_end}"
    );
    let advance = after.last().unwrap().1 - after[0].1;
    println!(
        "acceptance 8 (guided group): PASS — follower center strictly advancing after t={transient_end} (+{advance:.3}), I_G max {ig_max:.3} <= 2 x {ig_ref:.3}"
    );
}

#[test]
fn criterion_09_worker_count_does_not_change_results() {
    let mut sc = preset("test3").unwrap();
    sc.controls.t_final = 3.0;
    let csv_for = |threads: usize| -> Vec<u8> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let mut world = build_world(&sc).unwrap();
            let mut rec = Recorder::new(&world);
            run(&mut world, |w, r| rec.observe(w, r));
            let mut buf = Vec::new();
            rec.write_csv(&mut buf).unwrap();
            buf
        })
    };
    let single = csv_for(1);
    let eight = csv_for(8);
    assert!(single.len() > 10_000);
    assert!(
        single == eight,
        "acceptance 9 (determinism): FAIL — diagnostics differ between 1 and 8 workers"
    );
    println!(
        "acceptance 9 (determinism): PASS — {} bytes of diagnostics byte-identical with 1 and 8 workers",
        single.len()
    );
}

#[test]
fn criterion_10_scale_interpolation_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_000a);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let h = rng.gen_range(0.05..0.3);
        let nx = rng.gen_range(6..=14);
        let ny = rng.gen_range(6..=14);
        let origin = vec2(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let grid = Grid::new(origin, h, nx, ny);
        let mut density = MacroDensity::zeros(grid.clone());
        for r in density.rho.iter_mut() {
            if rng.gen_bool(0.7) {
                *r = rng.gen_range(0.0..3.0);
            }
        }
        let extent = vec2(nx as f64 * h, ny as f64 * h);
        let agents: Vec<Agent> = (0..rng.gen_range(1..=30))
            .map(|i| Agent {
                id: i as u32,
                pos: origin + vec2(rng.gen::<f64>() * extent.x, rng.gen::<f64>() * extent.y),
                role: Role::Follower,
            })
            .collect();
        let p = Population {
            name: format!("random{case}"),
            micro: MicroState { agents },
            density,
            lambda: rng.gen_range(0.5..40.0),
            interaction: InteractionSpec {
                theta: rng.gen_range(0.0..=1.0),
                endogenous: KernelParams::repulsion_only(0.1, 0.3, FRAC_PI_2),
                exogenous: None,
                capital_theta: 0.0,
            },
            desired: DesiredVelocity::zero(vec2(1.0, 0.0)),
            leader: None,
            probe: None,
        };

        let c = measure_moments(&p).unwrap().center;
        let mu = measure_axis_moments_about(&p, c);
        let m = micro_axis_moments_about(&p.micro, c);
        let mm = macro_axis_moments_about(&p.density, c);
        let th = p.theta();
        let w = (1.0 - th) * p.lambda;
        for (got, want, label) in [
            (mu.i1, th * m.i1 + w * mm.i1, "I1"),
            (mu.i2, th * m.i2 + w * mm.i2, "I2"),
            (mu.ig, th * m.ig + w * mm.ig, "IG"),
        ] {
            let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
            assert!(
                rel <= 1e-12,
                "acceptance 10 (scale interpolation): FAIL at state {case}: {label} off by {rel:.3e} relative"
            );
            worst = worst.max(rel);
        }
    }
    println!(
        "acceptance 10 (scale interpolation): PASS — 20 random states, worst relative deviation {worst:.3e} <= 1e-12"
    );
}
