use std::fs;
use std::path::Path;

use atv_stereo::uncertainty::UncertaintyStats;
use atv_stereo::Result;

use super::{load_stage_report, ReconManifest};

/// Aggregates every per-stage JSON report in a reconstruction directory
/// into one CSV (volume rows: the statistics of the hypothesis volumes the
/// stages actually sampled).
pub fn run(recon_dir: &Path, out: Option<&Path>) -> Result<()> {
    let recon = ReconManifest::load(recon_dir)?;
    let mut csv = format!("view,{}\n", UncertaintyStats::CSV_HEADER);
    for &view in &recon.references {
        for stage in 1..=recon.stages {
            let report = load_stage_report(recon_dir, view, stage)?;
            csv.push_str(&format!(
                "{},{}\n",
                view,
                report.volume.csv_row(&stage.to_string())
            ));
        }
    }
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| recon_dir.join("report.csv"));
    fs::write(&out_path, &csv)?;
    print!("{csv}");
    Ok(())
}
