//! Runs the synthetic tri-stage experiment and prints WER tables.
//!
//! Usage: toy_experiment [OUT_DIR] [SEEDS] [STAGE1 STAGE2 STAGE3]
//! e.g. `toy_experiment /tmp/toy 0,1,2 1000 2000 1000`

use std::time::Instant;

use noisyd_ct::toy::{self, Budget, ToySizes};

fn main() -> noisyd_ct::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().cloned().unwrap_or_else(|| "toy-run".into());
    let seeds: Vec<u64> = args
        .get(1)
        .map(|s| s.split(',').map(|x| x.parse().expect("seed")).collect())
        .unwrap_or_else(|| vec![0, 1, 2]);
    let steps: Vec<usize> = args[2.min(args.len())..]
        .iter()
        .map(|x| x.parse().expect("steps"))
        .collect();
    let budget = match steps.as_slice() {
        [a, b, c] => Budget {
            stage1: *a,
            stage2: *b,
            stage3: *c,
        },
        _ => Budget::default(),
    };
    for seed in seeds {
        let t0 = Instant::now();
        let dir = std::path::Path::new(&out).join(format!("seed{}", seed));
        let corpus = toy::write_corpus(&dir, seed, ToySizes::default())?;
        let sim = toy::simulate(&corpus, seed)?;
        let run = toy::run(&corpus, &sim, seed, budget)?;
        println!("== seed {} ({:.0} s)", seed, t0.elapsed().as_secs_f64());
        println!("-- tri-stage\n{}", run.noisyd_report.table());
        println!("-- baseline\n{}", run.baseline_report.table());
        let n = run.stage2_distances.len() as f64;
        let (dc, dn) = run
            .stage2_distances
            .iter()
            .fold((0.0, 0.0), |(a, b), (c, d)| (a + c / n, b + d / n));
        println!(
            "stage-2 standardized distance: clean-tilde {:.4}, noisy {:.4}",
            dc, dn
        );
    }
    Ok(())
}
