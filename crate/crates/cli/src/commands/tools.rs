use hsavsr_core::autodiff::suite::{gradient_suite, PRIMITIVES};
use hsavsr_core::engine::bench::bench_step;
use hsavsr_core::engine::{ModelConfig, ModelWeights};
use hsavsr_core::filter_bank::default_bank;

use super::load_model;
use crate::error::{CliError, CliResult};
use crate::{BenchArgs, GradcheckArgs};

pub fn gradcheck(a: GradcheckArgs) -> CliResult {
    let start = std::time::Instant::now();
    let cases = gradient_suite(a.seed, a.shapes)?;
    let mut failures = 0;
    for p in PRIMITIVES {
        for c in cases.iter().filter(|c| c.primitive == p) {
            let ok = c.report.max_rel_error < a.tolerance;
            failures += usize::from(!ok);
            println!(
                "{:<16} {:<24} max_rel {:.3e} ({} coords) {}",
                p,
                c.shape,
                c.report.max_rel_error,
                c.report.coordinates,
                if ok { "ok" } else { "FAIL" }
            );
        }
    }
    println!("{} cases in {:.2}s", cases.len(), start.elapsed().as_secs_f64());
    if failures > 0 {
        return Err(CliError::Failed(format!("{failures} gradient checks exceeded {}", a.tolerance)));
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> CliResult {
    let w = match &a.model {
        Some(p) => load_model(p)?,
        None => {
            let cfg = ModelConfig {
                channels: a.channels,
                rb1_blocks: a.rb1,
                rb2_blocks: a.rb2,
                ..ModelConfig::default()
            };
            ModelWeights::init(cfg, default_bank(), a.seed)?
        }
    };
    let r = bench_step(&w, a.size, a.size, a.iters, a.seed)?;
    let ms = |s: f64| s * 1e3;
    println!("input {}x{}, C={}, {} iterations (median)", r.height, r.width, w.channels(), r.iterations);
    println!("shallow  {:>9.3} ms", ms(r.shallow));
    println!("pool     {:>9.3} ms", ms(r.pool));
    println!("sca      {:>9.3} ms", ms(r.sca));
    println!("rb2      {:>9.3} ms", ms(r.rb2));
    println!("up       {:>9.3} ms", ms(r.up));
    println!("step     {:>9.3} ms", ms(r.step));
    println!("pool_fraction {:.4}", r.pool_fraction());
    Ok(())
}
