use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use sipfear::continuation::ContinuationOptions;
use sipfear::dynamics::{IntegrateOptions, DEFAULT_T_MAX};
use sipfear::equilibria::{all_equilibria, EquilibriumKind};
use sipfear::harness::{
    catalog, catalog_names, equilibria_csv, exit_code, load_params, resolve_out_dir, run_action, run_scenario, Action, Axis,
    Continue1Action, Continue2Action, EquilibriaAction, EquilibriumRow, Format, Overrides, RunConfig, ScenarioReport, ScenarioSpec,
    SeedSpec, SimulateAction, SweepAction, TolOverrides,
};
use sipfear::{Error, ParamName, ParamSet, Result};

#[derive(Parser)]
#[command(name = "sipfear", version, about = "Equilibria, bifurcations and simulations of a fear-affected SIP model")]
struct Cli {
    /// Output directory (default: $SIPFEAR_OUT_DIR, else ./sipfear-out for scenarios, stdout otherwise).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Comma-separated overrides: rtol, atol, eps_ext, ds_max, locate_tol, golden_scale.
    #[arg(long, global = true, default_value = "")]
    tol_overrides: String,
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ParamArgs {
    /// TOML file with a [params] table, or the name of a catalog scenario.
    #[arg(long)]
    params: String,
    /// Override a parameter, e.g. --set k1=0.2 (repeatable).
    #[arg(long = "set", value_parser = parse_assignment)]
    set: Vec<(ParamName, f64)>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory and classify its endpoint.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        /// Initial state S,I,P.
        #[arg(long, value_parser = parse_triple)]
        x0: [f64; 3],
        #[arg(long, default_value_t = DEFAULT_T_MAX)]
        t_max: f64,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Keep integrating on the S = 0 face after finite-time extinction.
        #[arg(long)]
        continue_after_fte: bool,
    },
    /// List the feasible equilibria.
    Equilibria {
        #[command(flatten)]
        params: ParamArgs,
    },
    /// List the feasible equilibria with eigenvalues and stability verdicts.
    Classify {
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Continue an equilibrium branch in one parameter.
    Continue1 {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        free: ParamName,
        /// Parameter range lo,hi.
        #[arg(long, value_parser = parse_pair)]
        range: [f64; 2],
        /// Seed equilibrium as KIND or KIND:INDEX, e.g. E4 or E4:1.
        #[arg(long, value_parser = parse_seed)]
        seed: SeedSpec,
    },
    /// Continue a fold curve in two parameters from a saddle-node point.
    Continue2 {
        #[command(flatten)]
        params: ParamArgs,
        /// Two free parameters, e.g. k2,K.
        #[arg(long, value_parser = parse_names)]
        free: [ParamName; 2],
        /// Ranges lo,hi:lo,hi for the two parameters.
        #[arg(long, value_parser = parse_ranges)]
        ranges: [[f64; 2]; 2],
        /// Parameter of the one-parameter branch that locates the seed fold.
        #[arg(long)]
        seed_free: ParamName,
        #[arg(long, value_parser = parse_pair)]
        seed_range: [f64; 2],
        #[arg(long, value_parser = parse_seed)]
        seed: SeedSpec,
    },
    /// Classify endpoints over a grid of one or two parameters.
    Sweep {
        #[command(flatten)]
        params: ParamArgs,
        /// NAME=v1,v2,... or NAME=min:max:steps (once or twice).
        #[arg(long = "axis", value_parser = parse_axis, required = true)]
        axes: Vec<Axis>,
        #[arg(long, value_parser = parse_triple)]
        x0: [f64; 3],
        #[arg(long, default_value_t = DEFAULT_T_MAX)]
        t_max: f64,
    },
    /// Run catalog scenarios or a scenario file and check their goldens.
    Scenario {
        /// Catalog scenario name.
        name: Option<String>,
        #[arg(long, conflicts_with_all = ["name", "file"])]
        all: bool,
        #[arg(long, conflicts_with = "name")]
        file: Option<PathBuf>,
        /// Print the catalog names and exit.
        #[arg(long)]
        list: bool,
    },
}

fn parse_assignment(s: &str) -> std::result::Result<(ParamName, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not NAME=VALUE"))?;
    let name = k.trim().parse::<ParamName>().map_err(|e| e.to_string())?;
    let value = v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((name, value))
}

fn parse_floats(s: &str, sep: char) -> std::result::Result<Vec<f64>, String> {
    s.split(sep).map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"))).collect()
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    parse_floats(s, ',')?.try_into().map_err(|_| format!("`{s}` needs three comma-separated numbers"))
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    parse_floats(s, ',')?.try_into().map_err(|_| format!("`{s}` needs two comma-separated numbers"))
}

fn parse_ranges(s: &str) -> std::result::Result<[[f64; 2]; 2], String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("`{s}` is not lo,hi:lo,hi"))?;
    Ok([parse_pair(a)?, parse_pair(b)?])
}

fn parse_names(s: &str) -> std::result::Result<[ParamName; 2], String> {
    let names: Vec<ParamName> =
        s.split(',').map(|n| n.trim().parse::<ParamName>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    names.try_into().map_err(|_| format!("`{s}` needs two parameter names"))
}

fn parse_seed(s: &str) -> std::result::Result<SeedSpec, String> {
    let (kind, index) = match s.split_once(':') {
        Some((k, i)) => (k, i.parse::<usize>().map_err(|e| format!("`{i}`: {e}"))?),
        None => (s, 0),
    };
    let kind = kind.parse::<EquilibriumKind>().map_err(|e| e.to_string())?;
    Ok(SeedSpec { kind, index })
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not NAME=VALUES"))?;
    let param = k.trim().parse::<ParamName>().map_err(|e| e.to_string())?;
    if v.contains(':') {
        let parts: Vec<&str> = v.split(':').collect();
        let [lo, hi, n] = parts.as_slice() else {
            return Err(format!("`{v}` is not min:max:steps"));
        };
        let lo = lo.trim().parse::<f64>().map_err(|e| format!("`{lo}`: {e}"))?;
        let hi = hi.trim().parse::<f64>().map_err(|e| format!("`{hi}`: {e}"))?;
        let n = n.trim().parse::<usize>().map_err(|e| format!("`{n}`: {e}"))?;
        Ok(Axis::range(param, lo, hi, n))
    } else {
        Ok(Axis::values(param, parse_floats(v, ',')?))
    }
}

impl ParamArgs {
    fn resolve(&self) -> Result<(ParamSet, Overrides)> {
        let base = load_params(&self.params)?;
        Ok((base, self.set.iter().copied().collect()))
    }
}

/// Runs an ad-hoc action as a one-action scenario without goldens.
fn run_single(cli: &Cli, params: &ParamArgs, action: impl FnOnce(Overrides) -> Action, tol: &TolOverrides) -> Result<()> {
    let format: Format = cli.format.parse()?;
    let (base, set) = params.resolve()?;
    let spec = ScenarioSpec {
        name: "adhoc".into(),
        description: String::new(),
        params: base,
        actions: vec![action(set)],
        golden: Vec::new(),
    };
    spec.validate()?;
    let action = &spec.actions[0];
    let p = action.params(&spec.params)?;
    let out = run_action(action, &p, tol)?;
    emit(cli, action.name(), &out.render(format))?;
    if let sipfear::harness::ActionOutput::Simulate(s) = &out {
        let x = s.endpoint.state;
        eprintln!("endpoint: {} at t = {} (S, I, P) = ({}, {}, {})", s.outcome, s.endpoint.time, x.s, x.i, x.p);
    }
    Ok(())
}

/// Writes `<out-dir>/<stem>.<format>` when an output directory is given,
/// otherwise prints to stdout.
fn emit(cli: &Cli, stem: &str, text: &str) -> Result<()> {
    match &cli.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{stem}.{}", cli.format));
            std::fs::write(&path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn print_report(r: &ScenarioReport) {
    let status = if r.passed() { "PASS" } else { "FAIL" };
    let passed = r.goldens.iter().filter(|g| g.passed).count();
    println!("{status} {} ({passed}/{} goldens)", r.name, r.goldens.len());
    for g in r.failures() {
        println!("  golden #{} {}: {}", g.index, g.check, g.detail);
    }
}

fn run_scenarios(cli: &Cli, specs: Vec<ScenarioSpec>, tol: TolOverrides) -> Result<()> {
    let cfg = RunConfig { out_dir: Some(resolve_out_dir(cli.out_dir.clone())), format: cli.format.parse()?, tol };
    let results: Vec<Result<ScenarioReport>> = specs.par_iter().map(|s| run_scenario(s, &cfg)).collect();
    let mut worst: Option<Error> = None;
    for (spec, r) in specs.iter().zip(results) {
        let outcome = match r {
            Ok(report) => {
                print_report(&report);
                report.into_result().map(|_| ())
            }
            Err(e) => {
                println!("ERROR {}: {e}", spec.name);
                Err(e)
            }
        };
        if let Err(e) = outcome {
            if worst.as_ref().is_none_or(|w| exit_code(&e) > exit_code(w)) {
                worst = Some(e);
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn run(cli: &Cli) -> Result<()> {
    let tol: TolOverrides = cli.tol_overrides.parse()?;
    match &cli.command {
        Command::Simulate { params, x0, t_max, samples, continue_after_fte } => {
            let options = IntegrateOptions { samples: *samples, continue_after_fte: *continue_after_fte, ..Default::default() };
            run_single(cli, params, |set| Action::Simulate(SimulateAction { set, x0: *x0, t_max: *t_max, options }), &tol)
        }
        Command::Equilibria { params } => {
            let (base, set) = params.resolve()?;
            let p = Action::Equilibria(EquilibriaAction { set }).params(&base)?;
            let rows: Vec<EquilibriumRow> = all_equilibria(&p)
                .into_iter()
                .map(|equilibrium| EquilibriumRow { equilibrium, stability: None })
                .collect();
            let text = match cli.format.parse()? {
                Format::Csv => equilibria_csv(&rows),
                Format::Json => serde_json::to_string_pretty(&rows).expect("equilibria serialize") + "\n",
            };
            emit(cli, "equilibria", &text)
        }
        Command::Classify { params } => {
            run_single(cli, params, |set| Action::Equilibria(EquilibriaAction { set }), &tol)
        }
        Command::Continue1 { params, free, range, seed } => run_single(
            cli,
            params,
            |set| {
                Action::Continue1(Continue1Action {
                    set,
                    free: *free,
                    range: *range,
                    seed: seed.clone(),
                    options: ContinuationOptions::default(),
                })
            },
            &tol,
        ),
        Command::Continue2 { params, free, ranges, seed_free, seed_range, seed } => run_single(
            cli,
            params,
            |set| {
                Action::Continue2(Continue2Action {
                    set,
                    free: *free,
                    ranges: *ranges,
                    seed_free: *seed_free,
                    seed_range: *seed_range,
                    seed: seed.clone(),
                    options: ContinuationOptions::default(),
                })
            },
            &tol,
        ),
        Command::Sweep { params, axes, x0, t_max } => run_single(
            cli,
            params,
            |set| {
                Action::Sweep(SweepAction {
                    set,
                    axes: axes.clone(),
                    x0: *x0,
                    t_max: *t_max,
                    options: IntegrateOptions::default(),
                })
            },
            &tol,
        ),
        Command::Scenario { list: true, .. } => {
            catalog_names().for_each(|n| println!("{n}"));
            Ok(())
        }
        Command::Scenario { name, all, file, .. } => {
            let specs = match (name, all, file) {
                (Some(n), false, None) => vec![sipfear::harness::catalog_scenario(n)?],
                (None, true, None) => catalog()?,
                (None, false, Some(path)) => vec![ScenarioSpec::from_file(path)?],
                _ => return Err(Error::Config("give a scenario name, --all or --file".into())),
            };
            run_scenarios(cli, specs, tol)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
