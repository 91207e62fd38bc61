use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mav_transfer::harness::{self, DensityRegime, ExperimentConfig, PolicyKind, Report};
use mav_transfer::imitation::{self, Dataset, LabelSpace, NetPolicy, PolicyMeta, NET_INPUT_WIDTH};
use mav_transfer::scenarios::{self, DomainSpec, Scenario};
use mav_transfer::sim::{ExpertConfig, ForestWorld};
use mav_transfer::{dan, net};

#[derive(Parser)]
#[command(name = "mav-transfer", about = "Domain-adaptive imitation learning in a 2D forest simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Source,
    Target,
}

#[derive(Clone, Copy, ValueEnum)]
enum Density {
    Low,
    High,
}

impl From<Density> for DensityRegime {
    fn from(d: Density) -> Self {
        match d {
            Density::Low => DensityRegime::Low,
            Density::High => DensityRegime::High,
        }
    }
}

#[derive(clap::Args)]
struct DomainArgs {
    /// Scenario name (see `scenario list`).
    #[arg(long)]
    scenario: String,
    #[arg(long, value_enum, default_value = "target")]
    domain: Side,
    /// Override the domain's tree density.
    #[arg(long, value_enum)]
    density: Option<Density>,
}

impl DomainArgs {
    fn spec(&self) -> Result<(Scenario, DomainSpec)> {
        let sc = scenarios::build_scenario(&self.scenario)?;
        let mut d = match self.domain {
            Side::Source => sc.source.clone(),
            Side::Target => sc.target.clone(),
        };
        if let Some(den) = self.density {
            d.density = DensityRegime::from(den).density();
        }
        Ok((sc, d))
    }

    fn tag(&self) -> &'static str {
        match self.domain {
            Side::Source => "source",
            Side::Target => "target",
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Inspect the scenario catalog.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    /// Generate forest worlds.
    World {
        #[command(subcommand)]
        cmd: WorldCmd,
    },
    /// Collect demonstrations or unlabeled scans.
    Demos {
        #[command(subcommand)]
        cmd: DemosCmd,
    },
    /// Train a policy on demonstrations, optionally adapting to unlabeled target scans.
    Train {
        #[arg(long)]
        demos: PathBuf,
        /// Unlabeled target scans (JSONL); enables the MMD term.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "fine9")]
        labels: Labels,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 16000)]
        steps: usize,
        #[arg(long, default_value_t = 0.02)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Start from this checkpoint instead of a fresh network.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fly a checkpoint (or the random policy) over seeded worlds and write per-episode CSV.
    Evaluate {
        /// Checkpoint path, or `random`.
        #[arg(long)]
        policy: String,
        #[command(flatten)]
        dom: DomainArgs,
        #[arg(long, default_value_t = 10)]
        worlds: usize,
        #[arg(long, default_value_t = 100.0)]
        meters: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full source-only / DAN / oracle / random comparison.
    Experiment {
        #[command(subcommand)]
        cmd: ExperimentCmd,
    },
    /// Fly checkpoint A and log checkpoint B's counterfactual commands.
    Replay {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[command(flatten)]
        dom: DomainArgs,
        #[arg(long, default_value_t = 200.0)]
        meters: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for replay.csv and replay.svg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate report.json files into one table.
    Summarize {
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    List,
    Show { name: String },
}

#[derive(Subcommand)]
enum WorldCmd {
    Gen {
        #[command(flatten)]
        dom: DomainArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        length: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DemosCmd {
    /// Expert-piloted demonstrations.
    Collect {
        #[command(flatten)]
        dom: DomainArgs,
        #[arg(long, default_value_t = 1000.0)]
        meters: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unlabeled scans from random-policy rollouts.
    Unlabeled {
        #[command(flatten)]
        dom: DomainArgs,
        #[arg(long, default_value_t = 5000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a config with every field at its default.
    Template,
}

#[derive(Clone, Copy, ValueEnum)]
enum Labels {
    Fine9,
    Coarse3,
}

impl From<Labels> for LabelSpace {
    fn from(l: Labels) -> Self {
        match l {
            Labels::Fine9 => LabelSpace::Fine { bins: 9 },
            Labels::Coarse3 => LabelSpace::Coarse3,
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Scenario { cmd: ScenarioCmd::List } => {
            for s in scenarios::all_scenarios() {
                println!("{:<14} {}", s.name, s.notes);
            }
        }
        Cmd::Scenario {
            cmd: ScenarioCmd::Show { name },
        } => print!("{}", scenarios::build_scenario(&name)?.to_json()?),
        Cmd::World {
            cmd: WorldCmd::Gen { dom, seed, length, out },
        } => {
            let (_, d) = dom.spec()?;
            let mut params = d.world_params();
            if let Some(l) = length {
                params.length = l;
            }
            let w = mav_transfer::sim::generate_world(&params, seed)?;
            w.save(&out)?;
            eprintln!("{} trees → {}", w.trees.len(), out.display());
        }
        Cmd::Demos {
            cmd: DemosCmd::Collect { dom, meters, seed, out },
        } => {
            let (_, d) = dom.spec()?;
            let ds = imitation::behavior_clone(&d.env(dom.tag()), &ExpertConfig::default(), meters, seed)?;
            ds.save(&out)?;
            eprintln!("{} records [{}] → {}", ds.len(), imitation::label_histogram(&ds), out.display());
        }
        Cmd::Demos {
            cmd: DemosCmd::Unlabeled { dom, count, seed, out },
        } => {
            let (_, d) = dom.spec()?;
            let ds = imitation::random_scans(&d.env(dom.tag()), count, seed)?;
            ds.save(&out)?;
            eprintln!("{} scans → {}", ds.len(), out.display());
        }
        Cmd::Train {
            demos,
            target,
            labels,
            lambda,
            steps,
            lr,
            seed,
            init,
            out,
        } => {
            let space = LabelSpace::from(labels);
            let data = Dataset::load(&demos, space, 1.0)?.to_labeled(NET_INPUT_WIDTH)?;
            let start = match &init {
                Some(p) => harness::load_policy(p)?.net,
                None => net::init_network(&net::default_architecture(NET_INPUT_WIDTH, space.classes()), seed)?,
            };
            let cfg = dan::DanConfig {
                lambda,
                steps,
                base_lr: lr,
                seed,
                ..dan::DanConfig::default()
            };
            let trained = match &target {
                Some(t) => {
                    let tx = Dataset::load(t, space, 1.0)?.inputs(NET_INPUT_WIDTH);
                    let (n, hist) = dan::train_dan(&start, &data, tx.view(), &cfg)?;
                    write(&out.with_extension("history.csv"), &hist.to_csv())?;
                    n
                }
                None if lambda > 0.0 => bail!("--lambda needs --target scans"),
                None => dan::train_supervised(&start, &data, &cfg)?.0,
            };
            eprintln!("train accuracy {:.3}", dan::accuracy(&trained, &data)?);
            let meta = PolicyMeta {
                label_space: space,
                v_max: 1.0,
                input_width: NET_INPUT_WIDTH,
            };
            harness::save_policy(&out, &NetPolicy::new(trained, meta)?)?;
        }
        Cmd::Evaluate {
            policy,
            dom,
            worlds,
            meters,
            seed,
            out,
        } => {
            let (_, d) = dom.spec()?;
            let env = d.env(dom.tag());
            let rows = if policy == "random" {
                harness::evaluate(&env, worlds, seed, meters, harness::random_policy(env.v_max()))?
            } else {
                let p = harness::load_policy(Path::new(&policy))?;
                harness::evaluate(&env, worlds, seed, meters, |_| p.clone())?
            };
            let report = Report::new(&dom.scenario, DensityRegime::of(d.density), 0.0, vec![], vec![(PolicyKind::Random, None, rows.clone())]);
            let card = &report.cards[0];
            println!(
                "episodes {}  mean distance {:.2} m  crashes {}  avoidance {:.3}",
                card.episodes, card.mean_distance, card.crashes, card.avoidance_rate
            );
            if let Some(out) = out {
                write(&out, &harness::episodes_csv(&policy, &rows))?;
            }
        }
        Cmd::Experiment {
            cmd: ExperimentCmd::Template,
        } => print!("{}", ExperimentConfig::default().to_toml()?),
        Cmd::Experiment {
            cmd: ExperimentCmd::Run { config, out },
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            fs::create_dir_all(&out)?;
            let r = harness::run_experiment(&cfg, &out)?;
            print!("{}", harness::summary_csv(&harness::summarize(std::slice::from_ref(&r))?));
        }
        Cmd::Replay {
            a,
            b,
            world,
            dom,
            meters,
            seed,
            out,
        } => {
            let (_, d) = dom.spec()?;
            let (pa, pb) = (harness::load_policy(&a)?, harness::load_policy(&b)?);
            let w = ForestWorld::load(&world)?;
            let log = harness::replay(&pa, &pb, &w, &d.config, meters, seed)?;
            fs::create_dir_all(&out)?;
            write(&out.join("replay.csv"), &log.to_csv())?;
            write(&out.join("replay.svg"), &log.to_svg(pa.meta.v_max))?;
            println!(
                "{:.1} m{}, mean |A − B| = {:.4}",
                log.distance_flown,
                if log.crashed { " (crashed)" } else { "" },
                log.mean_abs_difference()
            );
        }
        Cmd::Summarize { reports, out } => {
            let loaded = reports.iter().map(|p| Report::load(p)).collect::<mav_transfer::Result<Vec<_>>>()?;
            let csv = harness::summary_csv(&harness::summarize(&loaded)?);
            match out {
                Some(p) => write(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}
