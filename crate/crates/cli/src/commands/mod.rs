mod evaluate;
mod generate;
mod heritmap;
mod synth_data;
mod train_caae;
mod train_dnanet;

pub use evaluate::{cmd_evaluate, EvaluateReport};
pub use generate::{cmd_generate, GenerateArgs, GenerateOutput};
pub use heritmap::{cmd_heritmap, HeritmapArgs};
pub use synth_data::cmd_synth_data;
pub use train_caae::cmd_train_caae;
pub use train_dnanet::cmd_train_dnanet;

use std::path::Path;

use crate::{CliError, CliResult};

/// Create the output directory and drop the resolved config snapshot into it.
pub(crate) fn prepare_output(config: &crate::config::RunConfig) -> CliResult<()> {
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", config.output_dir.display())))?;
    std::fs::write(config.output_dir.join("config.json"), config.to_json())
        .map_err(|e| CliError::Runtime(format!("writing config snapshot: {e}")))?;
    Ok(())
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}
