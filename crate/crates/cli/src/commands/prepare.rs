use std::fs;

use wbc_core::datasets::{scan_lisc, scan_raabin, DatasetManifest, RaabinSplit, ScanReport};
use wbc_core::Error;

use crate::config::ExperimentConfig;
use crate::data::synth_pair;
use crate::error::{CliError, CliResult};
use crate::PrepareArgs;

fn write(out: &std::path::Path, name: &str, manifest: &DatasetManifest, report: Option<&ScanReport>) -> CliResult<()> {
    let csv = out.join(format!("{name}.csv"));
    manifest.write_csv(&csv)?;
    if let Some(r) = report {
        r.write_json(&out.join(format!("{name}.scan.json")))?;
        for w in r.warnings() {
            eprintln!("warning: {name}: {w}");
        }
    }
    println!("{name}: {} images -> {}", manifest.len(), csv.display());
    Ok(())
}

/// Scan every given root and write `<split>.csv` manifests with their scan
/// reports. Dataset roots are only read.
pub fn prepare(args: PrepareArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let raabin = args.data.raabin_root.or(file.raabin_root);
    let lisc = args.data.lisc_root.or(file.lisc_root);
    let synth = args.data.synth_cache.or(file.synth_cache);
    if raabin.is_none() && lisc.is_none() && synth.is_none() {
        return Err(CliError::validation(
            "nothing to prepare: give --raabin-root, --lisc-root or --synth-cache",
        ));
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    if let Some(root) = &raabin {
        for split in [RaabinSplit::Train, RaabinSplit::TestA, RaabinSplit::TestB] {
            let scan = scan_raabin(root, split)?;
            let name = scan.manifest.dataset().map_or("raabin", |d| d.cli_name());
            write(&args.out, name, &scan.manifest, Some(&scan.report))?;
        }
    }
    if let Some(root) = &lisc {
        let scan = scan_lisc(root)?;
        write(&args.out, "lisc", &scan.manifest, Some(&scan.report))?;
    }
    if let Some(cache) = &synth {
        let pair = synth_pair(cache, file.synth.as_ref())?;
        write(&args.out, "synth-train", &pair.train, None)?;
        write(&args.out, "synth-source", &pair.test_source, None)?;
        write(&args.out, "synth-shifted", &pair.test_shifted, None)?;
    }
    Ok(())
}
