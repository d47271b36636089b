//! Command-line driver for `vesselmf`: segmentation, evaluation reports,
//! parameter sweeps, ROC curves and kernel dumps over single images or
//! dataset directories.

pub mod cli;
pub mod commands;
pub mod config;
pub mod report;

use anyhow::{bail, Result};
use vesselmf::Parallelism;

use cli::{Cli, Command, KernelAction};

/// Size the worker pool and pick the execution strategy.
fn parallelism(threads: Option<usize>) -> Result<Parallelism> {
    match threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(1) => Ok(Parallelism::Sequential),
        Some(_n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(_n)
                .build_global()
                .map_err(|e| anyhow::anyhow!("configuring {_n} threads: {e}"))?;
            Ok(Parallelism::default())
        }
        None => Ok(Parallelism::default()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let par = parallelism(cli.threads)?;
    match &cli.command {
        Command::Segment(a) => commands::segment(a, par),
        Command::Eval(a) => commands::eval(a, par),
        Command::Sweep(a) => commands::sweep(a, par),
        Command::Roc(a) => commands::roc(a, par),
        Command::Kernel {
            action: KernelAction::Dump(a),
        } => commands::kernel_dump(a),
    }
}
