//! Library side of the `varleak` command-line tool.

pub mod args;
pub mod commands;
pub mod error;
pub mod records;
pub mod report;
pub mod spec;
pub mod sweep;

use args::{Cli, Command};
use error::CliResult;

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Pretrain(a) => commands::pretrain_cmd(&a),
        Command::Train(a) => commands::train_cmd(&a),
        Command::Attack(a) => commands::attack_cmd(&a),
        Command::EstimateMi(a) => commands::estimate_cmd(&a),
        Command::Oracle(c) => commands::oracle_cmd(&c),
        Command::Sweep(a) => {
            let s = sweep::run_sweep(&a.spec)?;
            println!("{} points: {} skipped, {} completed, {} failed", s.total, s.skipped, s.ok, s.failed);
            Ok(())
        }
        Command::Report(a) => {
            let groups = report::emit_report(&a.records, &a.out_dir)?;
            println!("wrote {groups} (d_z, β) groups to {}", a.out_dir.display());
            Ok(())
        }
    }
}
