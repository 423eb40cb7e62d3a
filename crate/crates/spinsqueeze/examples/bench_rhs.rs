use spinsqueeze as _;
use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use std::time::Instant;

fn main() {
    for n in [82usize, 128] {
        let a = Array2::<C64>::from_elem((n, n), C64::new(0.3, -0.2));
        let b = Array2::<C64>::from_elem((n, n), C64::new(0.1, 0.7));
        let reps = 2000;
        let t0 = Instant::now();
        let mut acc = C64::new(0.0, 0.0);
        for _ in 0..reps {
            let c = a.dot(&b);
            acc += c[(0, 0)];
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        let gf = (n * n * n * 8) as f64 / dt / 1e9;
        println!("dot {n}: {:.3} ms  ({gf:.1} GFLOPS)  {acc}", dt * 1e3);

        // commutator-style pass
        let x = a.dot(&b);
        let mut out = Array2::<C64>::zeros((n, n));
        let t0 = Instant::now();
        for _ in 0..reps {
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] = -C64::i() * (x[(i, j)] - x[(j, i)].conj());
                }
            }
        }
        println!("comm pass {n}: {:.3} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
    }
}
