use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rfuwoc::channel::{scintillation_index, EggTable};
use rfuwoc_cli::scenario::{parse_scenario_file, Overrides};
use rfuwoc_cli::suite::{render, run_groups, SuiteConfig, ALL_GROUPS, DEFAULT_GROUPS};
use rfuwoc_cli::sweep::{altitude_table, run_sweep, write_file};
use rfuwoc_cli::CliError;

#[derive(Parser)]
#[command(name = "rfuwoc", version, about = "Dual-hop RF/underwater-optical relay link performance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo sample count per estimate.
    #[arg(long)]
    samples: Option<u64>,
    /// Skip the Monte Carlo column.
    #[arg(long)]
    no_mc: bool,
    /// Output file; stdout when neither this nor the scenario names one.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Evaluate by direct quadrature instead of the H-function forms.
    #[arg(long)]
    quadrature_fallback: bool,
    /// Alternative EGG parameter table (same CSV layout as `tables`).
    #[arg(long)]
    egg_table: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep one axis of a scenario and write CSV curves.
    Sweep {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Optimal UAV elevation and altitude per horizontal distance.
    OptimalAltitude {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the oracle suite and print a pass/fail report.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated check groups (default: all but figures).
        #[arg(long, value_delimiter = ',')]
        checks: Vec<String>,
    },
    /// Print the EGG parameter table with recomputed scintillation indices.
    Tables {
        #[arg(long)]
        egg_table: Option<PathBuf>,
    },
}

fn load_table(path: &Option<PathBuf>) -> Result<EggTable, CliError> {
    Ok(match path {
        Some(p) => EggTable::from_path(p)?,
        None => EggTable::shipped().clone(),
    })
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        seed: c.seed,
        samples: c.samples,
        no_mc: c.no_mc,
        output: c.output.clone(),
        quadrature_fallback: c.quadrature_fallback,
    }
}

fn emit(path: Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            write_file(&p, text)?;
            eprintln!("wrote {}", p.display());
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sweep { scenario, common } => {
            let table = load_table(&common.egg_table)?;
            let mut s = parse_scenario_file(&scenario, &table)?;
            s.apply_overrides(&overrides(&common))?;
            let curves = run_sweep(&s)?;
            for (i, c) in curves.iter().enumerate() {
                if s.output.is_none() && curves.len() > 1 {
                    println!("# {}", c.label.as_deref().unwrap_or("curve"));
                }
                emit(s.output_path(i), &c.to_csv())?;
            }
            Ok(())
        }
        Command::OptimalAltitude { scenario, common } => {
            let table = load_table(&common.egg_table)?;
            let mut s = parse_scenario_file(&scenario, &table)?;
            s.apply_overrides(&overrides(&common))?;
            let r1s = s
                .altitude_r1
                .clone()
                .ok_or_else(|| CliError::field("altitude", "scenario has no [altitude] section"))?;
            let mut failed = 0;
            for (i, c) in s.curves.iter().enumerate() {
                let (csv, fails) = altitude_table(c, &r1s);
                for (r1, e) in &fails {
                    eprintln!("r1 = {r1}: {e}");
                }
                failed += fails.len();
                emit(s.output_path(i), &csv)?;
            }
            if failed > 0 {
                return Err(CliError::AltitudeRows { failed });
            }
            Ok(())
        }
        Command::Validate { common, checks } => {
            let table = load_table(&common.egg_table)?;
            let mut cfg = SuiteConfig {
                table,
                ..SuiteConfig::default()
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(n) = common.samples {
                cfg.samples = n;
            }
            let groups: Vec<&str> = if checks.is_empty() {
                DEFAULT_GROUPS.to_vec()
            } else {
                checks.iter().map(String::as_str).collect()
            };
            for g in &groups {
                if !ALL_GROUPS.contains(g) {
                    return Err(CliError::field("checks", format!("unknown group '{g}'; available: {}", ALL_GROUPS.join(", "))));
                }
            }
            let report = run_groups(&cfg, &groups)?;
            let text = render(&report);
            emit(common.output.clone(), &text)?;
            let failed = report.iter().filter(|c| !c.pass).count();
            if failed > 0 {
                return Err(CliError::OracleFailure {
                    failed,
                    total: report.len(),
                });
            }
            Ok(())
        }
        Command::Tables { egg_table } => {
            print!("{}", tables_csv(&load_table(&egg_table)?));
            Ok(())
        }
    }
}

fn tables_csv(table: &EggTable) -> String {
    let mut out = String::from("water,bubble_level,temp_gradient,sigma2,omega,lambda,a,b,c,sigma2_computed\n");
    for r in &table.rows {
        let p = &r.params;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.4}\n",
            r.water,
            r.bubble_level,
            r.temp_gradient.map_or(String::new(), |t| t.to_string()),
            p.sigma2.map_or(String::new(), |s| s.to_string()),
            p.omega,
            p.lambda,
            p.a,
            p.b,
            p.c,
            scintillation_index(p)
        ));
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::new().filter_level(log::LevelFilter::Warn).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    /// Exit code `main` would return for these arguments.
    fn exit_code(args: &[&str]) -> i32 {
        let cli = Cli::try_parse_from(std::iter::once("rfuwoc").chain(args.iter().copied())).unwrap();
        match run(cli) {
            Ok(()) => 0,
            Err(e) => e.exit_code(),
        }
    }

    fn write(dir: &Path, name: &str, text: &str) -> String {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    }

    fn scenario_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
    }

    #[test]
    fn bad_input_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(exit_code(&["sweep", dir.path().join("missing.cfg").to_str().unwrap()]), 1);

        let cfg = write(
            dir.path(),
            "neg.cfg",
            "[link]\nrelay = \"DF\"\ndetection = \"HD\"\negg = \"thermal, 2.4, 0.05\"\nh1 = -5.0\n\
             [sweep]\naxis = \"avg_snr_db\"\nfrom = 0.0\nto = 10.0\npoints = 3\nmetric = \"op\"\n",
        );
        let table = EggTable::shipped();
        let err = parse_scenario_file(Path::new(&cfg), table).unwrap_err();
        assert!(err.to_string().contains("h1"), "{err}");
        assert_eq!(exit_code(&["sweep", &cfg, "--no-mc"]), 1);

        assert_eq!(exit_code(&["validate", "--checks", "tables,nope"]), 1);
        assert!(Cli::try_parse_from(["rfuwoc", "sweep"]).is_err());
    }

    #[test]
    fn perturbed_table_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let text = EggTable::shipped_text().replace("0.1484,0.2130,0.3291", "0.1484,0.2343,0.3291");
        assert_ne!(text, EggTable::shipped_text());
        let table = write(dir.path(), "perturbed.csv", &text);
        let report = dir.path().join("report.txt");
        let report_arg = report.to_str().unwrap();

        assert_eq!(exit_code(&["validate", "--egg-table", &table, "--checks", "tables", "--output", report_arg]), 3);
        let out = std::fs::read_to_string(&report).unwrap();
        assert_eq!(out.lines().filter(|l| l.starts_with("FAIL")).count(), 1, "{out}");

        assert_eq!(exit_code(&["validate", "--checks", "tables", "--output", report_arg]), 0);
    }

    #[test]
    fn tables_lists_every_row() {
        let out = tables_csv(EggTable::shipped());
        assert_eq!(out.lines().count(), 12);
        assert!(out.starts_with("water,bubble_level"));
    }

    #[test]
    fn optimal_altitude_table() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("alt.csv");
        let cfg = scenario_dir().join("table3.cfg");
        assert_eq!(exit_code(&["optimal-altitude", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]), 0);
        let csv = std::fs::read_to_string(&out).unwrap();
        let rows: Vec<Vec<f64>> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 11);
        // Elevation falls and altitude grows with horizontal distance.
        assert!(rows.windows(2).all(|w| w[1][1] < w[0][1] && w[1][2] > w[0][2]), "{csv}");
    }

    #[test]
    fn sweep_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(
            dir.path(),
            "s.cfg",
            "[link]\nrelay = \"AF\"\ndetection = \"IM/DD\"\negg = \"fresh, 4.7\"\n\
             [sweep]\naxis = \"avg_snr_db\"\nfrom = 5.0\nto = 25.0\npoints = 3\nmetric = \"aber\"\nmodulation = \"bpsk\"\n\
             [mc]\nsamples = 20000\nseed = 9\n",
        );
        let run_to = |name: &str, extra: &[&str]| {
            let out = dir.path().join(name);
            let mut args = vec!["sweep", cfg.as_str(), "--output", out.to_str().unwrap()];
            args.extend_from_slice(extra);
            assert_eq!(exit_code(&args), 0);
            std::fs::read_to_string(out).unwrap()
        };
        let a = run_to("a.csv", &[]);
        assert_eq!(a, run_to("b.csv", &[]));
        assert_eq!(a.lines().count(), 4);
        assert!(a.lines().skip(1).all(|l| l.split(',').all(|c| !c.is_empty())), "{a}");
        assert_ne!(a, run_to("c.csv", &["--seed", "10"]));
    }
}
