use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use vqlab::harness::{
    ablation_summary, median_final, run_ablation, run_checks, scaling_sweep, spearman, sweep_csv,
    Experiment, ExperimentConfig, Method, SWEEP_SCALES,
};
use vqlab::{Result, VqError};

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn with_config_args(cmd: Command) -> Command {
    let mut cmd = cmd
        .arg(Arg::new("config").long("config").value_name("FILE").help("key = value configuration file"))
        .arg(Arg::new("out-dir").long("out-dir").value_name("DIR").help("directory for CSV output"));
    for key in ExperimentConfig::KEYS {
        let name: &'static str = Box::leak(flag_name(key).into_boxed_str());
        cmd = cmd.arg(Arg::new(key).long(name).value_name("VALUE"));
    }
    cmd
}

fn cli() -> Command {
    Command::new("vqlab")
        .about("Train and inspect vector-quantized bottlenecks on synthetic data")
        .subcommand_required(true)
        .subcommand(
            with_config_args(Command::new("run").about("Train one configuration and write its metrics CSV"))
                .arg(Arg::new("checkpoint").long("checkpoint").value_name("FILE").help("write a checkpoint here"))
                .arg(
                    Arg::new("checkpoint-at")
                        .long("checkpoint-at")
                        .value_name("ITER")
                        .value_parser(clap::value_parser!(u64))
                        .help("iteration at which to write the checkpoint (default: end of run)"),
                )
                .arg(Arg::new("resume").long("resume").value_name("FILE").help("continue from a checkpoint")),
        )
        .subcommand(
            with_config_args(Command::new("ablation").about("Every method preset over several seeds"))
                .arg(
                    Arg::new("seeds")
                        .long("seeds")
                        .value_name("S")
                        .default_value("5")
                        .value_parser(clap::value_parser!(u64)),
                )
                .arg(
                    Arg::new("threads")
                        .long("threads")
                        .value_name("N")
                        .value_parser(clap::value_parser!(usize)),
                ),
        )
        .subcommand(
            with_config_args(Command::new("sweep").about("Codebook initialization-scale sweep")).arg(
                Arg::new("scales")
                    .long("scales")
                    .value_name("LIST")
                    .help("comma-separated relative scales"),
            ),
        )
        .subcommand(
            Command::new("check").about("Run the invariant and oracle suite").arg(
                Arg::new("seed")
                    .long("seed")
                    .default_value("0")
                    .value_parser(clap::value_parser!(u64)),
            ),
        )
        .arg(Arg::new("quiet").long("quiet").short('q').action(ArgAction::SetTrue).global(true))
}

fn load_config(m: &ArgMatches, base: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = base;
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_kv(&fs::read_to_string(path)?)?;
    }
    for key in ExperimentConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(m: &ArgMatches) -> Result<Option<PathBuf>> {
    match m.get_one::<String>("out-dir") {
        Some(d) => {
            fs::create_dir_all(d)?;
            Ok(Some(PathBuf::from(d)))
        }
        None => Ok(None),
    }
}

fn emit(dir: Option<&Path>, file: &str, text: &str) -> Result<()> {
    match dir {
        Some(d) => fs::write(d.join(file), text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_cmd(m: &ArgMatches, quiet: bool) -> Result<()> {
    let cfg = load_config(m, ExperimentConfig::default())?;
    let mut exp = match m.get_one::<String>("resume") {
        Some(path) => Experiment::resume_from(cfg.clone(), path)?,
        None => Experiment::new(cfg.clone())?,
    };
    if let Some(path) = m.get_one::<String>("checkpoint") {
        let at = m.get_one::<u64>("checkpoint-at").copied().unwrap_or(cfg.iterations);
        exp.run_until(at.min(cfg.iterations))?;
        exp.save_checkpoint(path)?;
        if !quiet {
            eprintln!("checkpoint at iteration {} written to {path}", exp.iteration());
        }
    }
    exp.run()?;
    let name = format!("{}_seed{}.csv", cfg.method, cfg.seed);
    emit(out_dir(m)?.as_deref(), &name, &exp.csv())
}

fn ablation_cmd(m: &ArgMatches, quiet: bool) -> Result<()> {
    let base = load_config(m, ExperimentConfig::default())?;
    let n = *m.get_one::<u64>("seeds").expect("defaulted");
    let seeds: Vec<u64> = (base.seed..base.seed + n).collect();
    let threads = m
        .get_one::<usize>("threads")
        .copied()
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()));
    let runs = run_ablation(&base, &Method::ALL, &seeds, threads)?;
    let dir = out_dir(m)?;
    if let Some(d) = &dir {
        for r in &runs {
            let text = vqlab::harness::to_csv(&r.rows);
            fs::write(d.join(format!("{}_seed{}.csv", r.method, r.seed)), text)?;
        }
    }
    emit(dir.as_deref(), "summary.csv", &ablation_summary(&runs))?;
    if !quiet {
        for method in Method::ALL {
            let p = median_final(&runs, method, |r| r.perplexity);
            let l = median_final(&runs, method, |r| Some(r.task_loss));
            eprintln!(
                "{method:>14}  median perplexity {}  median task loss {}",
                p.map_or("n/a".to_string(), |v| format!("{v:.2}")),
                l.map_or("n/a".to_string(), |v| format!("{v:.4}")),
            );
        }
    }
    Ok(())
}

fn sweep_cmd(m: &ArgMatches, quiet: bool) -> Result<()> {
    let cfg = load_config(m, ExperimentConfig::preset(Method::Vanilla, 0))?;
    let scales: Vec<f64> = match m.get_one::<String>("scales") {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| VqError::Config(format!("invalid scale `{s}`")))
            })
            .collect::<Result<_>>()?,
        None => SWEEP_SCALES.to_vec(),
    };
    let rows = scaling_sweep(&scales, &cfg)?;
    emit(out_dir(m)?.as_deref(), "sweep.csv", &sweep_csv(&rows))?;
    if !quiet && rows.len() > 1 {
        let logs: Vec<f64> = rows.iter().map(|r| r.scale.ln()).collect();
        let used: Vec<f64> = rows.iter().map(|r| r.used_tokens as f64).collect();
        eprintln!("spearman(log scale, used tokens) = {:.3}", spearman(&logs, &used));
    }
    Ok(())
}

fn check_cmd(m: &ArgMatches) -> Result<bool> {
    let seed = *m.get_one::<u64>("seed").expect("defaulted");
    let results = run_checks(seed)?;
    for r in &results {
        println!("{r}");
    }
    Ok(results.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let quiet = matches.get_flag("quiet");
    let outcome = match matches.subcommand() {
        Some(("run", m)) => run_cmd(m, quiet).map(|_| true),
        Some(("ablation", m)) => ablation_cmd(m, quiet).map(|_| true),
        Some(("sweep", m)) => sweep_cmd(m, quiet).map(|_| true),
        Some(("check", m)) => check_cmd(m),
        _ => unreachable!("subcommand required"),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
