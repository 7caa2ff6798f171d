use hsavsr_core::io::prepare_output_dir;
use hsavsr_core::trainer::{generate_toy_dataset, write_split, ToyConfig};

use crate::error::CliResult;
use crate::ToyArgs;

pub fn run(a: ToyArgs) -> CliResult {
    let cfg = ToyConfig {
        clips: a.clips,
        frames: a.frames,
        lr_size: a.lr_size,
        scale: a.scale,
        seed: a.seed,
    };
    let ds = generate_toy_dataset(&cfg)?;
    prepare_output_dir(&a.out, a.force)?;
    write_split(a.out.join("train"), &ds.train, a.force)?;
    write_split(a.out.join("val"), std::slice::from_ref(&ds.val), a.force)?;
    println!(
        "wrote {} training clips and 1 validation clip ({} frames, {}x{} LR, x{}) to {}",
        ds.train.len(),
        cfg.frames,
        cfg.lr_size,
        cfg.lr_size,
        cfg.scale,
        a.out.display()
    );
    Ok(())
}
