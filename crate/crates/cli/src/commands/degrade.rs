use hsavsr_core::degradation::{degrade_frame, sample_params, ClipManifest};
use hsavsr_core::io::frame::{read_sequence, write_frame};
use hsavsr_core::io::prepare_output_dir;
use hsavsr_core::rng::substream;

use super::par_map;
use crate::error::CliResult;
use crate::DegradeArgs;

pub fn run(a: DegradeArgs) -> CliResult {
    let (paths, frames) = read_sequence(&a.input)?;
    let files: Vec<String> = paths
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();

    let manifest = match &a.replay {
        Some(m) => {
            let m = ClipManifest::load(m)?;
            if m.files.len() != files.len() {
                return Err(crate::error::CliError::Usage(format!(
                    "manifest lists {} frames, input has {}",
                    m.files.len(),
                    files.len()
                )));
            }
            ClipManifest { files, ..m }
        }
        None => {
            let mut p = sample_params(&mut substream(a.seed, "degrade/params"));
            if let Some(s) = a.sigma {
                p.sigma = s;
            }
            if let Some(d) = a.delta {
                p.delta = d;
            }
            if let Some(r) = a.r {
                p.r = r;
            }
            if let Some(c) = a.crf {
                p.crf = Some(c);
            }
            if a.no_compress {
                p.crf = None;
            }
            p.validate()?;
            let clip_id = a
                .input
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "clip".into());
            ClipManifest {
                clip_id,
                params: p,
                files,
            }
        }
    };

    prepare_output_dir(&a.out, a.force)?;
    let lr = par_map(&frames, |i, f| Ok(degrade_frame(f, &manifest.params, i)?))?;
    for (f, name) in lr.iter().zip(&manifest.files) {
        write_frame(f, a.out.join(name))?;
    }
    manifest.save(a.out.join("manifest.txt"))?;
    let p = &manifest.params;
    println!(
        "degraded {} frames: sigma {:.3} delta {:.3} r {} crf {} seed {}",
        lr.len(),
        p.sigma,
        p.delta,
        p.r,
        p.crf.map_or("off".into(), |c| c.to_string()),
        p.seed
    );
    Ok(())
}
