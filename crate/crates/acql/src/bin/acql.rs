//! Scenario runner CLI: single runs, payload-capacity sweeps, and report
//! aggregation over previously written output directories.

use acql::robot::RobotModel;
use acql::sim::{plc_sweep_scenarios, run_scenario_to_dir, run_scenarios, Scenario};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "acql", about = "Adaptive payload identification simulator", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write run.csv / estimator.csv / summary files.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Dump the first distribution QP in plain text.
        #[arg(long)]
        dump_qp: bool,
    },
    /// Sweep payload-to-limb-capacity ratio; one output directory per run.
    Sweep {
        /// start:end:step, e.g. 0.4:1.5:0.1
        #[arg(long)]
        plc: String,
        #[arg(long)]
        out: PathBuf,
        /// Base scenario; defaults to a built-in standing identification.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Payload mass at PLC 1.0 (kg).
        #[arg(long, default_value_t = 50.0)]
        capacity: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate summary.csv files below a directory into one table.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn verbose() -> bool {
    std::env::var("ACQL_LOG").map(|v| v != "0" && !v.is_empty()).unwrap_or(false)
}

fn load_scenario(path: &Path) -> Result<(Scenario, RobotModel), ExitCode> {
    if !path.exists() {
        eprintln!("acql: scenario file not found: {}", path.display());
        return Err(ExitCode::from(2));
    }
    Scenario::load(path).map_err(|e| {
        eprintln!("acql: {e}");
        ExitCode::from(2)
    })
}

fn parse_plc_range(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected start:end:step, got {spec:?}"));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if step <= 0.0 || end < start {
        return Err(format!("degenerate range {spec:?}"));
    }
    let n = ((end - start) / step).round() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).filter(|&p| p <= end + 1e-9).collect())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            scenario,
            out,
            seed,
            dump_qp,
        } => {
            let (mut scn, model) = match load_scenario(&scenario) {
                Ok(v) => v,
                Err(code) => return code,
            };
            if let Some(s) = seed {
                scn.sim.seed = s;
            }
            match run_scenario_to_dir(&scn, &model, &out, dump_qp) {
                Ok((_, summary)) => {
                    print!("{}", summary.to_text());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("acql: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Cmd::Sweep {
            plc,
            out,
            scenario,
            capacity,
            seed,
        } => {
            let plcs = match parse_plc_range(&plc) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("acql: bad --plc: {e}");
                    return ExitCode::from(2);
                }
            };
            let (mut base, model) = match scenario {
                Some(p) => match load_scenario(&p) {
                    Ok(v) => v,
                    Err(code) => return code,
                },
                None => (
                    Scenario::builtin_stand("plc_sweep", capacity, [0.04, 0.0, 0.0]),
                    RobotModel::kirin_default(),
                ),
            };
            if let Some(s) = seed {
                base.sim.seed = s;
            }
            let scenarios = plc_sweep_scenarios(&base, &plcs, capacity);
            if let Err(e) = std::fs::create_dir_all(&out) {
                eprintln!("acql: {}: {e}", out.display());
                return ExitCode::FAILURE;
            }
            let results = run_scenarios(&scenarios, &model);
            let mut table = String::from("plc,mass_kg,convergence_time_s,mass_err_final_kg\n");
            let mut failed = false;
            for (plc, res) in plcs.iter().zip(results) {
                match res {
                    Ok((log, summary)) => {
                        let dir = out.join(&summary.name);
                        if verbose() {
                            eprintln!("acql: {} converged at {:?}", summary.name, summary.convergence_time);
                        }
                        if let Err(e) = write_outputs(&log, &summary, &dir) {
                            eprintln!("acql: {}: {e}", dir.display());
                            failed = true;
                        }
                        table.push_str(&format!(
                            "{:.2},{:.3},{},{:.6e}\n",
                            plc,
                            plc * capacity,
                            summary
                                .convergence_time
                                .map(|t| format!("{t:.3}"))
                                .unwrap_or_default(),
                            summary.mass_err_final,
                        ));
                    }
                    Err(e) => {
                        eprintln!("acql: plc {plc:.2}: {e}");
                        failed = true;
                    }
                }
            }
            if let Err(e) = std::fs::write(out.join("sweep.csv"), &table) {
                eprintln!("acql: {e}");
                return ExitCode::FAILURE;
            }
            print!("{table}");
            if failed {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Cmd::Report { dir } => {
            if !dir.is_dir() {
                eprintln!("acql: not a directory: {}", dir.display());
                return ExitCode::from(2);
            }
            let mut rows = Vec::new();
            collect_summaries(&dir, &mut rows);
            if rows.is_empty() {
                eprintln!("acql: no summary.csv files under {}", dir.display());
                return ExitCode::FAILURE;
            }
            rows.sort();
            let header = rows[0].0.clone();
            let mut csv = header.clone();
            csv.push('\n');
            println!("{:30} {:>12} {:>14} {:>12}", "scenario", "conv_time_s", "mass_err_kg", "ori_err_rad");
            for (h, line, path) in &rows {
                if *h != header {
                    eprintln!("acql: skipping {} (mismatched header)", path.display());
                    continue;
                }
                csv.push_str(line);
                csv.push('\n');
                let f: Vec<&str> = line.split(',').collect();
                // columns: name,...,convergence_time(6),...,mass_err_final(4),ori_err_final(10)
                println!(
                    "{:30} {:>12} {:>14} {:>12}",
                    f.first().unwrap_or(&""),
                    f.get(6).copied().unwrap_or(""),
                    f.get(4).copied().unwrap_or(""),
                    f.get(10).copied().unwrap_or("")
                );
            }
            let out = dir.join("report.csv");
            if let Err(e) = std::fs::write(&out, csv) {
                eprintln!("acql: {e}");
                return ExitCode::FAILURE;
            }
            println!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
    }
}

fn write_outputs(
    log: &acql::sim::RunLog,
    summary: &acql::sim::Summary,
    dir: &Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("run.csv"))?);
    log.write_run_csv(&mut f)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("estimator.csv"))?);
    log.write_estimator_csv(&mut f)?;
    std::fs::write(dir.join("summary.csv"), summary.to_csv())?;
    std::fs::write(dir.join("summary.txt"), summary.to_text())
}

/// Gather (header, row, path) from every summary.csv below `dir`.
fn collect_summaries(dir: &Path, rows: &mut Vec<(String, String, PathBuf)>) {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return;
    };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            collect_summaries(&path, rows);
        } else if path.file_name().is_some_and(|n| n == "summary.csv") {
            if let Ok(text) = std::fs::read_to_string(&path) {
                let mut lines = text.lines();
                if let (Some(h), Some(r)) = (lines.next(), lines.next()) {
                    rows.push((h.replace(char::is_whitespace, ""), r.to_string(), path));
                }
            }
        }
    }
}
