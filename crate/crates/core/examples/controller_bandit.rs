//! The controller alone on a toy reward: the share of op decisions that pick
//! SEP_CONV_3. Prints the mean probability of that op as it learns.

use cellnas::controller::{BaselineState, ControllerConfig, ControllerPolicy};
use cellnas::genotype::OpKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cellnas::Result<()> {
    let cfg = ControllerConfig { tanh_constant: None, temperature: None, ..Default::default() };
    let mut policy = ControllerPolicy::new(5, cfg, 0)?;
    let mut baseline = BaselineState::new(cfg.baseline_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for update in 0..=400 {
        let samples: Vec<_> = (0..10).map(|_| policy.sample(&mut rng)).collect();
        let rewards: Vec<f64> = samples
            .iter()
            .map(|(a, _)| {
                let ops: Vec<OpKind> = a.normal.nodes.iter().chain(&a.reduction.nodes).flat_map(|n| [n.op_a, n.op_b]).collect();
                ops.iter().filter(|&&o| o == OpKind::SepConv3).count() as f64 / ops.len() as f64
            })
            .collect();
        if update % 50 == 0 {
            let dists = policy.distributions(&samples[0].1.decisions)?;
            let p: f64 = dists.iter().skip(1).step_by(2).map(|d| d[OpKind::SepConv3.index()]).sum::<f64>() / (dists.len() / 2) as f64;
            println!("update {update:>3}: mean reward {:.3}, P(sep3) {p:.3}", rewards.iter().sum::<f64>() / 10.0);
        }
        let traces: Vec<_> = samples.into_iter().map(|(_, t)| t).collect();
        policy.reinforce_update(&traces, &rewards, &mut baseline)?;
    }
    Ok(())
}
