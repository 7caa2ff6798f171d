use std::path::PathBuf;
use std::time::Instant;

use hsavsr_core::engine::{bank_hash, ModelWeights};
use hsavsr_core::filter_bank::default_bank;
use hsavsr_core::io::kv::KeyValues;
use hsavsr_core::io::{prepare_output_dir, write_atomic};
use hsavsr_core::trainer::{
    evaluate, load_split, loss_csv, smoothed_endpoints, train_stage1, TrainingConfig,
};

use crate::error::{CliError, CliResult};
use crate::TrainArgs;

const SMOOTHING: usize = 50;

fn meta(iteration: usize, ema: bool, w: &ModelWeights) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("iteration", iteration)
        .set("ema", ema)
        .set("bank_hash", bank_hash(w.bank()));
    kv
}

pub fn run(a: TrainArgs) -> CliResult {
    let kv = KeyValues::load(&a.config)?;
    let cfg = TrainingConfig::from_kv(&kv)?;
    let base = a.config.parent().map(PathBuf::from).unwrap_or_default();
    let data = base.join(kv.get("data").ok_or_else(|| CliError::Usage("config lacks `data`".into()))?);
    let out = base.join(kv.get("out").ok_or_else(|| CliError::Usage("config lacks `out`".into()))?);
    let init_seed: u64 = kv.parse_or("init_seed", cfg.seed)?;
    let checkpoint_every: usize = kv.parse_or("checkpoint_every", 0)?;

    let train = load_split(data.join("train"))?;
    let val_dir = data.join("val");
    let val = if val_dir.is_dir() { load_split(&val_dir)? } else { Vec::new() };
    prepare_output_dir(&out, a.force)?;

    let w0 = ModelWeights::init(cfg.model, default_bank(), init_seed)?;
    eprintln!(
        "training {} parameters on {} clips for {} iterations",
        w0.num_parameters(),
        train.len(),
        cfg.iterations
    );
    let start = Instant::now();
    let result = train_stage1(&train, &cfg, &w0, |p| {
        let it = p.record.iteration;
        if it % 50 == 0 || it == 1 || it == cfg.iterations {
            eprintln!("iter {it:>6}  loss {:.5}  {:.1}s", p.record.loss, p.record.elapsed_secs);
        }
        if checkpoint_every > 0 && it % checkpoint_every == 0 && it < cfg.iterations {
            p.weights.save(out.join(format!("checkpoint_{it:06}.hsb")), &meta(it, false, p.weights))?;
            p.ema.save(out.join(format!("checkpoint_{it:06}_ema.hsb")), &meta(it, true, p.ema))?;
        }
        Ok(())
    })?;
    let elapsed = start.elapsed().as_secs_f64();

    let n = cfg.iterations;
    result.weights.save(out.join("model.hsb"), &meta(n, false, &result.weights))?;
    result.ema.save(out.join("model_ema.hsb"), &meta(n, true, &result.ema))?;
    write_atomic(out.join("loss.csv"), loss_csv(&result.losses).as_bytes())?;

    let mut summary = KeyValues::new();
    summary
        .set("iterations", n)
        .set("elapsed_s", format!("{elapsed:.3}"))
        .set("model_hash", result.weights.hash())
        .set("ema_model_hash", result.ema.hash());
    if let Some((first, last)) = smoothed_endpoints(&result.losses, SMOOTHING) {
        summary
            .set("loss_first", format!("{first:.6}"))
            .set("loss_last", format!("{last:.6}"))
            .set("loss_ratio", format!("{:.6}", last / first));
        println!("smoothed loss {first:.5} -> {last:.5} (ratio {:.3})", last / first);
    }
    if !val.is_empty() {
        let opts = cfg.run_options();
        let mean = |w: &ModelWeights| -> CliResult<(f64, f64)> {
            let mut m = 0.0;
            let mut b = 0.0;
            for c in &val {
                let e = evaluate(w, c, &opts)?;
                m += e.model_psnr;
                b += e.bilinear_psnr;
            }
            Ok((m / val.len() as f64, b / val.len() as f64))
        };
        let (raw, bilinear) = mean(&result.weights)?;
        let (ema, _) = mean(&result.ema)?;
        summary
            .set("val_psnr_bilinear", format!("{bilinear:.4}"))
            .set("val_psnr_model", format!("{raw:.4}"))
            .set("val_psnr_ema", format!("{ema:.4}"));
        println!("val PSNR: bilinear {bilinear:.3} dB, model {raw:.3} dB, ema {ema:.3} dB");
    }
    summary.save(out.join("summary.txt"))?;
    println!("finished in {elapsed:.1}s; outputs in {}", out.display());
    Ok(())
}
