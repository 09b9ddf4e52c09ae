//! The `dlmp` command-line front end.
//!
//! Errors are reported on stderr as a single line
//! `error: module=<m> kind=<k> msg=<text>` with exit status 1.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dso::{parse_participants, Participants};
use crate::error::{Error, Result};
use crate::market::{flat_tariff_cycle, run_dispatch_cycle, CycleReport};
use crate::netmodel::{build_linear_model, parse_case, LinearFlowModel, NetworkCase};
use crate::report;
use crate::scenarios::{monte_carlo_table, preset, trend_test, ScenarioConfig, ScenarioError};

#[derive(Debug, Parser)]
#[command(name = "dlmp", version, about = "Three-phase distribution LMP dispatch engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and check a case and its participants.
    Validate(Inputs),
    /// Run one pricing interval and write its reports.
    Run {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, value_enum, default_value_t = TariffArg::Both)]
        tariff: TariffArg,
        /// Flat tariff ($/MWh); defaults to the scenario's root price.
        #[arg(long)]
        flat_price: Option<f64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Solve the dispatch and write only the price table.
    Prices {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Monte Carlo comparison of DLMP and the flat tariff under uncertainty.
    Mc {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Relative utility sigma; repeat or comma-separate for a sweep.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05])]
        sigma_utility: Vec<f64>,
        #[arg(long, default_value_t = 0.01)]
        sigma_forecast: f64,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Debug, Args)]
struct Inputs {
    /// Network case (JSON); the bundled 33-bus case when omitted.
    #[arg(long)]
    case: Option<PathBuf>,
    /// Participant file (JSON); read from the case file when omitted.
    #[arg(long)]
    participants: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScenarioArg {
    /// Preset name (A1, B1, C1, D1, D2) or a scenario JSON file.
    #[arg(long, default_value = "A1")]
    scenario: String,
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = "DLMP_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TariffArg {
    Dlmp,
    Flat,
    Both,
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// status.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: module={} kind={} msg={msg}", e.module(), e.kind());
            1
        }
    }
}

struct Loaded {
    case: NetworkCase,
    model: LinearFlowModel,
    participants: Participants,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn load(inputs: &Inputs) -> Result<Loaded> {
    let case_text = match &inputs.case {
        Some(p) => read(p)?,
        None => crate::IEEE33_CASE_JSON.to_string(),
    };
    let case = parse_case(&case_text)?;
    let model = build_linear_model(&case)?;
    let participants = match &inputs.participants {
        Some(p) => parse_participants(&read(p)?)?,
        None => parse_participants(&case_text)?,
    };
    participants.validate(&case)?;
    Ok(Loaded {
        case,
        model,
        participants,
    })
}

fn scenario(arg: &ScenarioArg) -> Result<ScenarioConfig> {
    let name = &arg.scenario;
    let cfg = if name.ends_with(".json") {
        let text = read(Path::new(name))?;
        serde_json::from_str(&text).map_err(|e| ScenarioError::InvalidFile {
            path: name.clone(),
            reason: e.to_string(),
        })?
    } else {
        preset(name)?
    };
    cfg.limits.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, file: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join(file);
    std::fs::write(&path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn summary(label: &str, r: &CycleReport) {
    let v = &r.violations;
    let mut line = format!(
        "{label}: max branch over-limit {:.6} MW, max voltage over-limit {:.6} p.u., max imbalance over-limit {:.6}",
        v.max_branch(),
        v.max_voltage(),
        v.max_imbalance()
    );
    if let Some(d) = &r.dispatch {
        line.push_str(&format!(
            ", objective {:.6} $, max deviation {:.3e} p.u.",
            d.objective,
            r.max_deviation()
        ));
    }
    println!("{line}");
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Validate(inputs) => {
            let l = load(&inputs)?;
            println!(
                "ok: case {}: {} buses, {} branches, {} node-phases, {} prosumers, {} DGs",
                l.case.name,
                l.case.buses.len(),
                l.case.branches.len(),
                l.model.num_node_phases(),
                l.participants.prosumers.len(),
                l.participants.dgs.len()
            );
            Ok(())
        }
        Command::Run {
            inputs,
            scenario: s,
            tariff,
            flat_price,
            out,
        } => {
            let l = load(&inputs)?;
            let cfg = scenario(&s)?;
            let parts = cfg.apply(&l.participants)?;
            let flat_price = flat_price.unwrap_or(cfg.limits.pi_lmp);
            let tag = &cfg.name;

            let dlmp = match tariff {
                TariffArg::Flat => None,
                _ => Some(run_dispatch_cycle(&l.case, &l.model, &parts, &cfg.limits)?),
            };
            let flat = match tariff {
                TariffArg::Dlmp => None,
                _ => Some(flat_tariff_cycle(&l.case, &l.model, &parts, &cfg.limits, flat_price)?),
            };
            let reports: Vec<&CycleReport> = dlmp.iter().chain(flat.iter()).collect();
            let dir = &out.out;
            if let Some(d) = &dlmp {
                let flat_col = flat.is_some().then_some(flat_price);
                write(dir, &format!("{tag}_prices.csv"), &report::price_table(&d.prices, flat_col))?;
                write(dir, &format!("{tag}_dlmp_agents.csv"), &report::agent_table(&l.case, &parts, d))?;
                write(dir, &format!("{tag}_dlmp_report.json"), &report::to_json(d))?;
                summary("dlmp", d);
            }
            if let Some(f) = &flat {
                write(dir, &format!("{tag}_flat_agents.csv"), &report::agent_table(&l.case, &parts, f))?;
                write(dir, &format!("{tag}_flat_report.json"), &report::to_json(f))?;
                summary("flat", f);
            }
            write(dir, &format!("{tag}_voltages.csv"), &report::voltage_table(&l.model, &reports))?;
            write(dir, &format!("{tag}_branches.csv"), &report::branch_table(&l.case, &l.model, &reports))?;
            write(dir, &format!("{tag}_imbalance.csv"), &report::imbalance_table(&reports))?;
            Ok(())
        }
        Command::Prices {
            inputs,
            scenario: s,
            out,
        } => {
            let l = load(&inputs)?;
            let cfg = scenario(&s)?;
            let parts = cfg.apply(&l.participants)?;
            let r = run_dispatch_cycle(&l.case, &l.model, &parts, &cfg.limits)?;
            write(&out.out, &format!("{}_prices.csv", cfg.name), &report::price_table(&r.prices, None))?;
            write(&out.out, &format!("{}_prices.json", cfg.name), &report::to_json(&r.prices))?;
            Ok(())
        }
        Command::Mc {
            inputs,
            scenario: s,
            sigma_utility,
            sigma_forecast,
            trials,
            seed,
            out,
        } => {
            let l = load(&inputs)?;
            let cfg = scenario(&s)?;
            let table = monte_carlo_table(
                &l.case,
                &l.model,
                &l.participants,
                &cfg,
                sigma_forecast,
                &sigma_utility,
                seed,
                trials,
            )?;
            write(&out.out, &format!("{}_mc.csv", cfg.name), &report::monte_carlo_table(&table))?;
            write(&out.out, &format!("{}_mc.json", cfg.name), &report::to_json(&table))?;
            let metric = cfg.focus();
            for r in &table.rows {
                println!(
                    "sigma_u {:.3}: dlmp {:.6}, flat {:.6} ({metric:?}, {} failed)",
                    r.sigma_utility,
                    r.dlmp.get(metric),
                    r.flat.get(metric),
                    r.failed
                );
            }
            if table.rows.len() >= 2 {
                let t = trend_test(&table, metric);
                println!("trend: slope {:.6e}, t {:.3}, p {:.4}", t.slope, t.t_statistic, t.p_value);
            }
            Ok(())
        }
    }
}
