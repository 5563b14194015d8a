use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use gridstorm::belief::{posterior, BeliefState, CallModel, PosteriorLimits};
use gridstorm::grid::GridTopology;
use gridstorm::harness::{
    replication_scenario, run_experiment, write_outputs, write_replications, ExperimentSpec, RandomStorm, ReplicationRow,
};
use gridstorm::mcts::{SearchConfig, TraceRow};
use gridstorm::policies::{run_escalation, run_fcfs, run_lookahead, run_posterior_optimal, EventKind, EpisodeLog, Policy};
use gridstorm::scenario::{ScenarioSample, StormSpec};
use gridstorm::seeds::{derive_seed, Stream};
use gridstorm::synth::{synth_grid, SynthParams};
use gridstorm::SimConfig;

#[derive(Parser)]
#[command(name = "gridstorm", version, about = "Single-truck storm response on radial distribution grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy over one or more replications.
    Simulate {
        #[arg(long)]
        policy: Option<Policy>,
        #[command(flatten)]
        common: Common,
    },
    /// Run several policies across calling probabilities and budgets.
    Compare {
        #[arg(long, value_delimiter = ',')]
        policies: Vec<Policy>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the optimal tour over a scenario's revealed faults.
    PosteriorOptimal {
        #[command(flatten)]
        common: Common,
    },
    /// Check a grid, and optionally a storm and a scenario, against each other.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic lattice grid.
    SynthGrid {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        circuits: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON file supplying any of these flags; flags given here win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Storm JSON; without it every replication draws a random storm.
    #[arg(long)]
    storm: Option<PathBuf>,
    /// Calling probabilities, comma separated.
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    /// Search budgets, comma separated.
    #[arg(long, value_delimiter = ',')]
    budget: Vec<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    scenario_in: Option<PathBuf>,
    #[arg(long)]
    scenario_out: Option<PathBuf>,
    /// Search trace CSV (lookahead only).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Posterior at dispatch as a segment,posterior CSV.
    #[arg(long)]
    posterior_out: Option<PathBuf>,
    /// Record decision wall-time in the CSV output (not reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    grid: Option<PathBuf>,
    storm: Option<PathBuf>,
    rho: Option<Vec<f64>>,
    budget: Option<Vec<usize>>,
    reps: Option<usize>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    scenario_in: Option<PathBuf>,
    scenario_out: Option<PathBuf>,
    trace: Option<PathBuf>,
    posterior_out: Option<PathBuf>,
    timing: Option<bool>,
    policy: Option<Policy>,
    policies: Option<Vec<Policy>>,
    sim: Option<SimConfig>,
    search: Option<SearchConfig>,
    random_storm: Option<RandomStorm>,
}

/// Flags merged over the config file.
struct Settings {
    grid: Option<PathBuf>,
    storm: Option<PathBuf>,
    rho: Option<Vec<f64>>,
    budget: Option<Vec<usize>>,
    reps: Option<usize>,
    seed: u64,
    out_dir: Option<PathBuf>,
    scenario_in: Option<PathBuf>,
    scenario_out: Option<PathBuf>,
    trace: Option<PathBuf>,
    posterior_out: Option<PathBuf>,
    timing: bool,
    policy: Option<Policy>,
    policies: Option<Vec<Policy>>,
    sim: SimConfig,
    search: SearchConfig,
    random_storm: RandomStorm,
}

impl Settings {
    fn resolve(common: Common) -> Result<Self> {
        let file: FileConfig = match &common.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => FileConfig::default(),
        };
        let nonempty = |v: Vec<f64>| (!v.is_empty()).then_some(v);
        Ok(Self {
            grid: common.grid.or(file.grid),
            storm: common.storm.or(file.storm),
            rho: nonempty(common.rho).or(file.rho),
            budget: (!common.budget.is_empty()).then_some(common.budget).or(file.budget),
            reps: common.reps.or(file.reps),
            seed: common.seed.or(file.seed).unwrap_or(0),
            out_dir: common.out_dir.or(file.out_dir),
            scenario_in: common.scenario_in.or(file.scenario_in),
            scenario_out: common.scenario_out.or(file.scenario_out),
            trace: common.trace.or(file.trace),
            posterior_out: common.posterior_out.or(file.posterior_out),
            timing: common.timing || file.timing.unwrap_or(false),
            policy: file.policy,
            policies: file.policies,
            sim: file.sim.unwrap_or_default(),
            search: file.search.unwrap_or_default(),
            random_storm: file.random_storm.unwrap_or_default(),
        })
    }

    fn topology(&self) -> Result<GridTopology> {
        let Some(path) = &self.grid else {
            bail!("no grid given (use --grid or a config file)");
        };
        GridTopology::load(path).with_context(|| format!("loading grid {}", path.display()))
    }

    fn storm(&self) -> Result<Option<StormSpec>> {
        let Some(path) = &self.storm else {
            return Ok(None);
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading storm {}", path.display()))?;
        let storm: StormSpec = serde_json::from_str(&text).with_context(|| format!("parsing storm {}", path.display()))?;
        storm.validate()?;
        Ok(Some(storm))
    }

    fn frozen_scenario(&self, topology: &GridTopology) -> Result<Option<ScenarioSample>> {
        let Some(path) = &self.scenario_in else {
            return Ok(None);
        };
        let s = ScenarioSample::load(path).with_context(|| format!("loading scenario {}", path.display()))?;
        s.validate(topology)?;
        Ok(Some(s))
    }

    fn spec(&self, topology: &GridTopology) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec {
            storm: self.storm()?,
            random_storm: self.random_storm.clone(),
            seed: self.seed,
            sim: self.sim.clone(),
            search: self.search.clone(),
            timing: self.timing,
            ..ExperimentSpec::default()
        };
        if let Some(s) = self.frozen_scenario(topology)? {
            spec.scenarios = vec![s];
        }
        if let Some(r) = &self.rho {
            spec.rhos = r.clone();
        }
        if let Some(b) = &self.budget {
            spec.budgets = b.clone();
        }
        if let Some(p) = &self.policies {
            spec.policies = p.clone();
        }
        Ok(spec)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

/// `path` itself for a single replication, `stem_rep<k>.ext` otherwise.
fn per_rep(path: &Path, rep: usize, reps: usize) -> PathBuf {
    if reps == 1 {
        return path.to_path_buf();
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_rep{rep}.{ext}"),
        None => format!("{stem}_rep{rep}"),
    };
    path.with_file_name(name)
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn write_posterior(path: &Path, topology: &GridTopology, scenario: &ScenarioSample, sim: &SimConfig) -> Result<()> {
    let mut belief = BeliefState::new(scenario.priors.clone());
    let at = sim.dispatch_minute;
    belief.clock = at;
    belief.add_calls(scenario.call_stream.iter().filter(|c| c.minute <= at).map(|c| c.segment), at);
    let model = CallModel::new(scenario.calling_probability, scenario.call_window)?;
    let post = posterior(&belief, topology, &model, PosteriorLimits::from(sim))?;
    post.dump(create(path)?)?;
    Ok(())
}

fn write_trace(path: &Path, rows: &[(usize, TraceRow)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["decision", "iteration", "path", "rollout", "best", "root_value"])?;
    for (epoch, r) in rows {
        w.write_record([
            epoch.to_string(),
            r.iteration.to_string(),
            r.path.clone(),
            r.rollout.to_string(),
            r.best.map(|b| b.to_string()).unwrap_or_default(),
            r.root_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(policy: Option<Policy>, common: Common) -> Result<()> {
    let s = Settings::resolve(common)?;
    let policy = policy.or(s.policy).unwrap_or(Policy::Lookahead);
    let topology = s.topology()?;
    let spec = s.spec(&topology)?;
    let rho = s.rho.as_ref().and_then(|r| r.first().copied()).unwrap_or(1.0);
    let budget = s.budget.as_ref().and_then(|b| b.first().copied()).unwrap_or(spec.search.budget);
    let reps = s.reps.unwrap_or(1).max(1);
    if s.trace.is_some() && policy != Policy::Lookahead {
        bail!("--trace needs the lookahead policy");
    }
    let dir = s.out_dir()?;
    let mut rows = Vec::with_capacity(reps);
    for rep in 0..reps {
        let scenario = replication_scenario(&spec, &topology, rep, rho)?;
        if let Some(p) = &s.scenario_out {
            scenario.save(per_rep(p, rep, reps))?;
        }
        if let Some(p) = &s.posterior_out {
            write_posterior(&per_rep(p, rep, reps), &topology, &scenario, &spec.sim)?;
        }
        let search = SearchConfig {
            budget,
            seed: derive_seed(spec.seed, rep as u64, Stream::Mcts),
            ..spec.search.clone()
        };
        let log: EpisodeLog = match policy {
            Policy::Lookahead => {
                let mut trace = Vec::new();
                let log = run_lookahead(&topology, &scenario, &spec.sim, &search, s.trace.as_ref().map(|_| &mut trace))?;
                if let Some(p) = &s.trace {
                    write_trace(&per_rep(p, rep, reps), &trace)?;
                }
                log
            }
            Policy::Escalation => run_escalation(&topology, &scenario, &spec.sim),
            Policy::Fcfs => run_fcfs(&topology, &scenario, &spec.sim),
            Policy::PosteriorOptimal => run_posterior_optimal(&topology, &scenario, &spec.sim),
        };
        println!(
            "rep {rep} {policy}: {:.2} customer outage-hours, last repair at {:.2} h, {} unrepaired",
            log.outage_hours(),
            log.restore_minute / 60.0,
            log.unrepaired_faults
        );
        let episode = dir.join(format!("episode_{policy}_rep{rep}.json"));
        serde_json::to_writer_pretty(create(&episode)?, &log)?;
        let b = if policy.uses_budget() { budget } else { 0 };
        rows.push(ReplicationRow::from_log(rep, rho, b, &log, s.timing));
    }
    write_replications(&dir.join("replications.csv"), &rows)?;
    Ok(())
}

fn compare(policies: Vec<Policy>, common: Common) -> Result<()> {
    let s = Settings::resolve(common)?;
    let topology = s.topology()?;
    let mut spec = s.spec(&topology)?;
    if !policies.is_empty() {
        spec.policies = policies;
    }
    if let Some(r) = s.reps {
        spec.replications = r;
    }
    let result = run_experiment(&spec, &topology)?;
    let dir = s.out_dir()?;
    let files = write_outputs(&result, &dir)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<18} {:>6} {:>7} {:>5} {:>14} {:>10}", "policy", "rho", "budget", "n", "outage-hours", "std")?;
    for st in &result.stats {
        writeln!(
            out,
            "{:<18} {:>6} {:>7} {:>5} {:>14.2} {:>10.2}",
            st.policy.to_string(),
            st.rho,
            st.budget,
            st.replications,
            st.outage_hours.mean,
            st.outage_hours.std
        )?;
    }
    writeln!(out, "wrote {} files to {}", files.len(), dir.display())?;
    Ok(())
}

fn posterior_optimal(common: Common) -> Result<()> {
    let s = Settings::resolve(common)?;
    let topology = s.topology()?;
    let spec = s.spec(&topology)?;
    let rho = s.rho.as_ref().and_then(|r| r.first().copied()).unwrap_or(1.0);
    let scenario = replication_scenario(&spec, &topology, 0, rho)?;
    if let Some(p) = &s.scenario_out {
        scenario.save(p)?;
    }
    let log = run_posterior_optimal(&topology, &scenario, &spec.sim);
    let mut stops = Vec::new();
    let mut arrival = 0.0;
    for e in &log.events {
        match e.kind {
            EventKind::Move => arrival = e.minute,
            EventKind::Repair => stops.push((e.segment.expect("repair has a segment"), arrival, e.minute, e.customers_out_after)),
            _ => {}
        }
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "stop segment arrival_min completion_min customers_out_after")?;
    for (i, (seg, a, c, after)) in stops.iter().enumerate() {
        writeln!(out, "{i:>4} {seg:>7} {a:>11.1} {c:>14.1} {after:>19}")?;
    }
    writeln!(out, "customer outage-minutes: {}", log.outage_minutes)?;
    if log.heuristic_tour {
        writeln!(out, "(local-search tour: too many faults for the exact program)")?;
    }
    if s.out_dir.is_some() {
        let path = s.out_dir()?.join("posterior_optimal.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["stop", "segment", "arrival_minute", "completion_minute", "customers_out_after"])?;
        for (i, (seg, a, c, after)) in stops.iter().enumerate() {
            w.write_record([i.to_string(), seg.to_string(), a.to_string(), c.to_string(), after.to_string()])?;
        }
        w.write_record(["total".into(), String::new(), String::new(), String::new(), log.outage_minutes.to_string()])?;
        w.flush()?;
    }
    Ok(())
}

fn validate(common: Common) -> Result<()> {
    let s = Settings::resolve(common)?;
    let topology = s.topology()?;
    println!(
        "grid ok: {} circuits, {} segments, {} customers, {} road nodes",
        topology.circuits().len(),
        topology.num_segments(),
        topology.total_customers(),
        topology.road_nodes().len()
    );
    if let Some(storm) = s.storm()? {
        let priors = gridstorm::scenario::storm_priors(&topology, &storm, s.sim.p_max)?;
        println!("storm ok: {:.2} expected faults", priors.iter().sum::<f64>());
    }
    if let Some(sc) = s.frozen_scenario(&topology)? {
        println!(
            "scenario ok: {} faults, {} calls, rho {}",
            sc.true_faults.len(),
            sc.call_stream.len(),
            sc.calling_probability
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { policy, common } => simulate(policy, common),
        Command::Compare { policies, common } => compare(policies, common),
        Command::PosteriorOptimal { common } => posterior_optimal(common),
        Command::Validate { common } => validate(common),
        Command::SynthGrid { seed, circuits, out } => {
            let mut params = SynthParams::default();
            if let Some(c) = circuits {
                params.circuits = c;
            }
            let doc = synth_grid(&params, seed);
            serde_json::to_writer_pretty(create(&out)?, &doc)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
