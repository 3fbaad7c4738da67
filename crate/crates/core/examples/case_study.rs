//! The full two-stage run on the default scenario. Pass a directory to also
//! write the CSV outputs.

use cpcal::pipeline::{run_full, PipelineConfig};

fn main() -> cpcal::Result<()> {
    let cfg = PipelineConfig::default();
    let run = run_full(&cfg)?;
    let report = &run.report;
    print!("{}", report.summary_csv());
    print!("{}", report.report_csv());
    if let Some(t) = &report.truth {
        println!("wins {} losses {} ties {}", t.wins, t.losses, t.ties);
    }
    if let Some(dir) = std::env::args().nth(1) {
        report.write_all(std::path::Path::new(&dir))?;
        println!("wrote {dir}");
    }
    Ok(())
}
