//! Experiment harness: specs, run manifests, staged datasets and one
//! runner per subcommand of the `volcount` binary.

pub mod data;
pub mod experiments;
pub mod manifest;
pub mod spec;
pub mod table;

// Training allocates and frees large buffers every step; the system
// allocator returns them to the kernel each time.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub use manifest::{RunContext, RunManifest, RunStatus};
pub use spec::{ExperimentSpec, Method, SpecError};
pub use table::Table;

/// Subcommand names, in the order the usage text lists them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Generate,
    Train,
    Score,
    Compare,
    Variants,
    LearningCurve,
    Repro,
    Age,
    Occlude,
    Saliency,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Score => "score",
            Command::Compare => "compare",
            Command::Variants => "variants",
            Command::LearningCurve => "learning-curve",
            Command::Repro => "repro",
            Command::Age => "age",
            Command::Occlude => "occlude",
            Command::Saliency => "saliency",
        }
    }
}

/// Validates `spec`, writes the manifest and runs `cmd` in `out`. A failure
/// after the manifest exists is recorded in it before being returned.
pub fn execute(cmd: Command, spec: &ExperimentSpec, out: &std::path::Path, threads: usize) -> anyhow::Result<RunManifest> {
    use experiments::*;
    spec.validate()?;
    let threads = threads.max(1);
    let mut ctx = RunContext::begin(out, cmd.name(), spec, threads)?;
    let result = match cmd {
        Command::Generate => generate::run_generate(&mut ctx, spec, threads).map(drop),
        Command::Train => score::run_train(&mut ctx, spec, threads).map(drop),
        Command::Score => score::run_score(&mut ctx, spec, threads).map(drop),
        Command::Compare => compare::run_compare(&mut ctx, spec, threads).map(drop),
        Command::Variants => variants::run_variants(&mut ctx, spec, threads).map(drop),
        Command::LearningCurve => learning_curve::run_learning_curve(&mut ctx, spec, threads).map(drop),
        Command::Repro => repro::run_repro(&mut ctx, spec, threads).map(drop),
        Command::Age => age::run_age(&mut ctx, spec, threads).map(drop),
        Command::Occlude => interpret::run_occlude(&mut ctx, spec, threads).map(drop),
        Command::Saliency => interpret::run_saliency(&mut ctx, spec, threads).map(drop),
    };
    match result {
        Ok(()) => ctx.finish(),
        Err(e) => {
            ctx.fail(&e)?;
            Err(e)
        }
    }
}
