//! Dynamic diffusion tracks the network sum of drifting local signals.
//! Static consensus of the same signals loses it.

use featnet::diffusion::{consensus_step, dynamic_diffusion_step};
use featnet::topology::{CombinationMatrix, Graph};

fn main() -> featnet::Result<()> {
    let a = CombinationMatrix::metropolis(&Graph::ring(6)?)?;
    let signal = |k: usize, t: usize| ((k + 1) as f64 * 0.3 + t as f64 * 0.05).sin();
    let mut d: Vec<f64> = (0..6).map(|k| signal(k, 0)).collect();
    let (mut tracked, mut averaged) = (d.clone(), d.clone());
    for t in 1..=50 {
        let next: Vec<f64> = (0..6).map(|k| signal(k, t)).collect();
        tracked = dynamic_diffusion_step(&a, &tracked, &next, &d, 1);
        averaged = consensus_step(&a, &averaged, 1);
        d = next;
        if t % 10 == 0 {
            let truth: f64 = d.iter().sum();
            println!(
                "t={t:>2} true sum {truth:+.6}  tracked {:+.6}  static {:+.6}",
                tracked.iter().sum::<f64>(),
                averaged.iter().sum::<f64>()
            );
        }
    }
    Ok(())
}
