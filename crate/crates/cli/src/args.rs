use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use oscmdp::SolverConfig;

#[derive(Debug, Parser)]
#[command(name = "oscmdp", version, about = "Operator splitting for constrained MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a benchmark instance to a directory.
    #[command(subcommand)]
    Generate(GenerateKind),
    /// Solve one instance and write the result JSON.
    Solve(SolveArgs),
    /// Run several methods on one instance and tabulate them as CSV.
    Compare(CompareArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenerateKind {
    Garnet(GarnetArgs),
    Gridworld(GridArgs),
}

#[derive(Debug, Args)]
pub struct GarnetArgs {
    #[arg(long = "S", default_value_t = 100)]
    pub states: usize,
    #[arg(long = "A", default_value_t = 10)]
    pub actions: usize,
    /// Branching factor: each pair has ⌈fb·S⌉ successors.
    #[arg(long, default_value_t = 0.05)]
    pub fb: f64,
    #[arg(long, default_value_t = 0.95)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random linear constraints; none are written when 0.
    #[arg(long, default_value_t = 0)]
    pub nc: usize,
    /// Seed of the constraints, `seed + 1000` by default.
    #[arg(long)]
    pub constraint_seed: Option<u64>,
    /// Raise right-hand sides until the uniform policy is feasible.
    #[arg(long)]
    pub relax: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 25)]
    pub side: usize,
    /// Number of randomly placed obstacles.
    #[arg(long, default_value_t = 45)]
    pub obstacles: usize,
    /// Explicit obstacle cells, overriding `--obstacles`.
    #[arg(long, value_delimiter = ',')]
    pub obstacle_cells: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.05)]
    pub slip: f64,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    /// Bound on the discounted path cost.
    #[arg(long, default_value_t = 0.9)]
    pub bp: f64,
    /// Bound on the discounted collision probability.
    #[arg(long, default_value_t = 1e-3)]
    pub b0: f64,
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
    /// Let the agent leave the goal cell.
    #[arg(long)]
    pub open_goal: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct SolverArgs {
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub inner_iters: Option<usize>,
    /// Run each inner solve to this tolerance instead of a fixed step count.
    #[arg(long)]
    pub inner_tol: Option<f64>,
    #[arg(long)]
    pub eps_opt: Option<f64>,
    #[arg(long)]
    pub eps_con: Option<f64>,
    #[arg(long)]
    pub eps_inf: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub trace_every: Option<usize>,
    /// Solve the evaluation system by conjugate gradients.
    #[arg(long)]
    pub indirect: bool,
    /// Solver configuration JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl SolverArgs {
    pub fn apply(&self, mut cfg: SolverConfig) -> SolverConfig {
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.omega {
            cfg.omega = v;
        }
        if let Some(v) = self.inner_iters {
            cfg.inner_iters = v;
        }
        if self.inner_tol.is_some() {
            cfg.inner_tol = self.inner_tol;
        }
        if let Some(v) = self.eps_opt {
            cfg.eps_opt = v;
        }
        if let Some(v) = self.eps_con {
            cfg.eps_con = v;
        }
        if let Some(v) = self.eps_inf {
            cfg.eps_inf = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_outer_iters = v;
        }
        if let Some(v) = self.trace_every {
            cfg.trace_every = v;
        }
        cfg.indirect |= self.indirect;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub mdp: PathBuf,
    pub constraints: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Result file; the manifest goes next to it as `<stem>.manifest.json`.
    #[arg(long, default_value = "result.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub mdp: PathBuf,
    pub constraints: PathBuf,
    /// Comma-separated subset of `oscmdp`, `pdm` and `pi`.
    #[arg(long, value_delimiter = ',', default_value = "oscmdp,pdm")]
    pub methods: Vec<Method>,
    /// Repetitions per method; timings are averaged.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 20_000)]
    pub pdm_max_iters: usize,
    #[arg(long, default_value = "table.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    /// Douglas-Rachford splitting.
    Oscmdp,
    /// Lagrangian dual ascent with averaged primal iterates.
    Pdm,
    /// Policy iteration on the cost alone, ignoring the constraints.
    Pi,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Oscmdp => "oscmdp",
            Method::Pdm => "pdm",
            Method::Pi => "pi",
        }
    }
}
