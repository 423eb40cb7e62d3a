use spinsqueeze::dynamics::{evolve, IntegratorConfig, Method, Schedule, Segment};
use spinsqueeze::model::{build_full, Preset};
use spinsqueeze::operators::spin_coherent_state;
use spinsqueeze::space::{Representation, SpaceLayout};
use std::time::Instant;

fn main() {
    let n = 6;
    let spec = Preset::FqNv.spec(n).homogeneous();
    let layout = SpaceLayout::new(Representation::FullProduct, n, spec.ancilla).unwrap();
    let (h, terms) = build_full(&spec, layout).unwrap();
    let s0 = spin_coherent_state(layout, std::f64::consts::FRAC_PI_2, 0.0);
    let lam = spec.lambda_bar;
    let dur = 10.0 / lam;
    let mut sched = Schedule::new(dur / 10.0);
    sched.push_segment(Segment::new(h, terms, dur).unwrap());
    for (label, check) in [("positivity on", true), ("positivity off", false)] {
        for m in [24usize, 40] {
            let cfg = IntegratorConfig {
                method: Method::KrylovExpm { tol: 1e-6, dim: m },
                check_positivity: check,
                ..Default::default()
            };
            let t0 = Instant::now();
            let traj = evolve(&s0, &sched, &cfg).unwrap();
            let dt = t0.elapsed().as_secs_f64();
            println!(
                "{label} m={m}: {dt:.2} s, {} evals, {} substeps, {} rejected -> {:.3} ms/eval",
                traj.stats.rhs_evals,
                traj.stats.steps_accepted,
                traj.stats.steps_rejected,
                dt * 1e3 / traj.stats.rhs_evals as f64
            );
        }
    }
}
