//! Runs a third-party solver through a shell command template.

use std::process::Command;
use std::time::Instant;

use crate::error::SolveError;
use crate::lpformat::export_lp;
use crate::model::Model;
use crate::solution::import_solution;
use crate::solve::{solve, Solution, SolverConfig};

/// A command such as `highs --model_file {lp} --solution_file {sol}`.
///
/// `{lp}` is replaced by the path of the exported model and `{sol}` by the
/// path where the command must write a `name value` solution file. Both paths
/// are shell-quoted. The command runs under `sh -c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalSolver {
    pub template: String,
}

impl ExternalSolver {
    pub fn new(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
        }
    }

    pub fn solve(&self, model: &Model) -> Result<Solution, SolveError> {
        let start = Instant::now();
        let dir = tempfile::tempdir()?;
        let lp_path = dir.path().join("model.lp");
        let sol_path = dir.path().join("model.sol");
        std::fs::write(&lp_path, export_lp(model))?;
        let command = self
            .template
            .replace("{lp}", &shell_quote(&lp_path.to_string_lossy()))
            .replace("{sol}", &shell_quote(&sol_path.to_string_lossy()));
        log::debug!("running external solver: {command}");
        let output = Command::new("sh").arg("-c").arg(&command).output()?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(SolveError::External(format!(
                "`{command}` exited with {}: {}",
                output.status,
                stderr.trim()
            )));
        }
        let text = std::fs::read_to_string(&sol_path)
            .map_err(|e| SolveError::External(format!("no solution file at {}: {e}", sol_path.display())))?;
        let imported = import_solution(model, &text)?;
        for w in &imported.warnings {
            log::warn!("{w}");
        }
        let mut solution = imported.solution;
        solution.wall_time = start.elapsed();
        Ok(solution)
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Where models get solved.
#[derive(Clone, Debug)]
pub enum Backend {
    Builtin(SolverConfig),
    External(ExternalSolver),
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Builtin(SolverConfig::default())
    }
}

impl Backend {
    /// Parses `builtin` or `external:<command template>`.
    pub fn parse(spec: &str) -> Option<Backend> {
        if spec == "builtin" {
            Some(Backend::default())
        } else {
            spec.strip_prefix("external:")
                .filter(|t| !t.trim().is_empty())
                .map(|t| Backend::External(ExternalSolver::new(t)))
        }
    }

    pub fn solve(&self, model: &Model) -> Result<Solution, SolveError> {
        match self {
            Backend::Builtin(config) => solve(model, config),
            Backend::External(ext) => ext.solve(model),
        }
    }

    /// Same backend with an incumbent hint; ignored by external solvers.
    pub fn with_incumbent(&self, values: Vec<crate::rational::Rational>) -> Backend {
        match self {
            Backend::Builtin(config) => Backend::Builtin(config.clone().with_incumbent(values)),
            other => other.clone(),
        }
    }
}
