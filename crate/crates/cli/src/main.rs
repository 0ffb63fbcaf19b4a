use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jadpp::acquisition::Method;
use jadpp::beam_design::beam_pattern;
use jadpp::harness::{
    self, aggregate, run_sweep, write_curves, write_manifest, write_records, Manifest, SweepOptions, SweepSpec, TrialOptions,
    Workspace,
};
use jadpp::scenario::{PowerProfile, Scenario};
use jadpp::signals::PilotSet;

#[derive(Parser)]
#[command(name = "jadpp", version, about = "Sparsity-map beam acquisition and channel estimation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep and write records.csv, curves.csv and manifest.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// One slow-time acquisition; writes the JADPP and sparsity map per user.
    Acquire {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "amf")]
        method: MethodArg,
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One acquisition followed by beam design; writes beam patterns over the grid.
    Design {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "amf")]
        method: MethodArg,
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fast-time estimation over several trials at one operating point.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        snr_db: f64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 10)]
        draws: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for estimate_trials.csv and estimate_summary.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the pilot sequences of a scenario.
    Pilots {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MethodArg {
    Amf,
    Mf,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Amf => Method::Amf,
            MethodArg::Mf => Method::Mf,
        }
    }
}

fn load_scenario(path: &Path, snr_db: Option<f64>) -> Result<Scenario> {
    let mut s = Scenario::load(path)?;
    if let Some(snr) = snr_db {
        s.apply_power_profile(snr, PowerProfile::Equal);
    }
    Ok(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            sweep,
            seed,
            out,
            threads,
        } => {
            let scenario = Scenario::load(&config)?;
            let spec = SweepSpec::load(&sweep)?;
            let seed = seed.unwrap_or(scenario.seed);
            std::fs::create_dir_all(&out)?;
            let records = run_sweep(&scenario, &spec, seed, &SweepOptions { threads })?;
            let curves = aggregate(&records);
            write_records(&records, create(&out.join("records.csv"))?)?;
            write_curves(&curves, create(&out.join("curves.csv"))?)?;
            write_manifest(&Manifest::new(&scenario, &spec, seed, &records), out.join("manifest.json"))?;
            let errors = records.iter().filter(|r| r.record == "error").count();
            log::info!("{} records, {} curve points, {errors} errors", records.len(), curves.len());
        }
        Command::Acquire {
            config,
            method,
            snr_db,
            seed,
            out,
        } => {
            let scenario = load_scenario(&config, snr_db)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(scenario.seed));
            let active = scenario.sample_active(&mut rng);
            let ws = Workspace::new(&active)?;
            let (_, acquired) = harness::acquire(&active, &ws, &[method.into()], &mut rng)?;
            let a = &acquired[0];
            let grid = active.grid();
            let mut w = csv::Writer::from_writer(create(&out)?);
            w.write_record(["user", "delay", "angle_deg", "beta_hat", "detected"])?;
            for (k, user) in active.users.iter().enumerate() {
                let p = &a.jadpp.power[k];
                for l in 0..p.ncols() {
                    for i in 0..p.nrows() {
                        w.write_record([
                            user.id.to_string(),
                            l.to_string(),
                            format!("{}", grid.angle(i)),
                            format!("{:e}", p[(i, l)]),
                            u8::from(a.map.maps[k][(i, l)]).to_string(),
                        ])?;
                    }
                }
            }
            w.flush()?;
        }
        Command::Design {
            config,
            method,
            snr_db,
            seed,
            out,
        } => {
            let scenario = load_scenario(&config, snr_db)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(scenario.seed));
            let active = scenario.sample_active(&mut rng);
            let ws = Workspace::new(&active)?;
            let (_, acquired) = harness::acquire(&active, &ws, &[method.into()], &mut rng)?;
            let truth = harness::true_covariances(&active, &ws);
            let (_, stack) = harness::design_pipeline(&active, &ws, &truth, Some(&acquired[0]))?;
            let grid = active.grid();
            let mut w = csv::Writer::from_writer(create(&out)?);
            w.write_record(["group", "beam", "cluster", "angle_deg", "gain"])?;
            for g in &stack.groups {
                let pattern = beam_pattern(&g.s, &ws.steering);
                for d in 0..g.s.ncols() {
                    let cluster = g
                        .blocks
                        .iter()
                        .position(|b| b.contains(&d))
                        .map(|c| c.to_string())
                        .unwrap_or_default();
                    for i in 0..grid.len() {
                        w.write_record([
                            g.group.to_string(),
                            d.to_string(),
                            cluster.clone(),
                            format!("{}", grid.angle(i)),
                            format!("{:e}", pattern[(i, d)]),
                        ])?;
                    }
                }
            }
            w.flush()?;
        }
        Command::Estimate {
            config,
            snr_db,
            trials,
            draws,
            seed,
            out,
        } => {
            let scenario = load_scenario(&config, Some(snr_db))?;
            let seed = seed.unwrap_or(scenario.seed);
            let spec = SweepSpec {
                variable: harness::SweepVariable::SnrDb,
                values: vec![snr_db],
                trials,
                estimators: TrialOptions::default().estimators,
                methods: vec![Method::Amf, Method::Mf],
                oracle: true,
                power_profile: PowerProfile::Equal,
                base_snr_db: snr_db,
                empirical_draws: draws,
                detection_only: false,
            };
            let records = run_sweep(&scenario, &spec, seed, &SweepOptions::default())?;
            std::fs::create_dir_all(&out)?;
            let header = ["trial", "method", "group", "estimator", "provenance", "snr_db", "t_fast", "j", "nmse"];
            let mut w = csv::Writer::from_writer(create(&out.join("estimate_trials.csv"))?);
            w.write_record(header)?;
            for r in records.iter().filter(|r| r.record == "nmse_empirical") {
                w.write_record([
                    r.trial.to_string(),
                    r.method.clone(),
                    r.group.clone(),
                    r.estimator.clone(),
                    r.provenance.clone(),
                    snr_db.to_string(),
                    scenario.fast_pilot_len.to_string(),
                    scenario.snapshots.to_string(),
                    format!("{:e}", r.x / r.y),
                ])?;
            }
            w.flush()?;
            let mut w = csv::Writer::from_writer(create(&out.join("estimate_summary.csv"))?);
            w.write_record(["method", "group", "estimator", "provenance", "snr_db", "t_fast", "j", "nmse", "nmse_analytic"])?;
            let curves = aggregate(&records);
            for c in curves.iter().filter(|c| c.metric == "nmse_empirical") {
                let analytic = curves
                    .iter()
                    .find(|a| {
                        a.metric == "nmse_analytic"
                            && a.method == c.method
                            && a.group == c.group
                            && a.estimator == c.estimator
                            && a.provenance == c.provenance
                    })
                    .map(|a| format!("{:e}", a.mean))
                    .unwrap_or_default();
                w.write_record([
                    c.method.clone(),
                    c.group.clone(),
                    c.estimator.clone(),
                    c.provenance.clone(),
                    snr_db.to_string(),
                    scenario.fast_pilot_len.to_string(),
                    scenario.snapshots.to_string(),
                    format!("{:e}", c.mean),
                    analytic,
                ])?;
            }
            w.flush()?;
            for r in records.iter().filter(|r| r.record == "error") {
                log::warn!("trial {}: {}", r.trial, r.note);
            }
        }
        Command::Pilots { config, out } => {
            let scenario = Scenario::load(&config)?;
            let users = scenario.users.len().min(jadpp::signals::KASAMI_SET_SIZE);
            let pilots = PilotSet::kasami(users, scenario.slow_pilot_len, scenario.channel_memory)?;
            pilots.write_csv(create(&out)?)?;
        }
    }
    Ok(())
}
