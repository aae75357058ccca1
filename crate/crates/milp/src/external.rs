//! Out-of-process backend: write the request as an LP file, run a command,
//! read back a result file.
//!
//! The command is invoked as `program [args..] <model.lp> <result.sol>` and
//! must write the result format of [`crate::lp_format::write_solution`].
//! Column names are sanitized the same way on both sides.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::process::Command;
use std::time::Instant;

use crate::lp_format::{read_solution, write_lp};
use crate::{Backend, SolveError, SolveOutcome, SolveRequest};

#[derive(Debug, Clone)]
pub struct ExternalBackend {
    program: String,
    args: Vec<String>,
}

impl ExternalBackend {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self { program: program.into(), args }
    }

    /// Parse a whitespace-separated command line such as `"tpath solve-lp"`.
    pub fn from_command_line(line: &str) -> Result<Self, SolveError> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| SolveError::Backend("empty backend command".into()))?;
        Ok(Self::new(program, parts.collect()))
    }
}

impl Backend for ExternalBackend {
    fn name(&self) -> &str {
        &self.program
    }

    fn solve(&self, req: &SolveRequest) -> Result<SolveOutcome, SolveError> {
        req.validate()?;
        let start = Instant::now();
        let dir = tempfile::tempdir()?;
        let lp_path = dir.path().join("model.lp");
        let sol_path = dir.path().join("result.sol");
        write_lp(req, BufWriter::new(File::create(&lp_path)?))?;
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(&lp_path)
            .arg(&sol_path)
            .output()
            .map_err(|e| SolveError::Backend(format!("cannot run {}: {e}", self.program)))?;
        if !output.status.success() {
            return Err(SolveError::Backend(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let file = File::open(&sol_path)
            .map_err(|e| SolveError::Backend(format!("{} wrote no result file: {e}", self.program)))?;
        let mut out = read_solution(BufReader::new(file), &req.col_names)?;
        if out.status.has_solution() {
            let viol = req.max_violation(&out.primal);
            let scale = req.row_lower.iter().chain(&req.row_upper).filter(|v| v.is_finite()).fold(1.0f64, |a, v| a.max(v.abs()));
            if viol > 1e-6 * scale {
                return Err(SolveError::Backend(format!("external solution violates constraints by {viol:e}")));
            }
        }
        out.wall_time = start.elapsed();
        Ok(out)
    }
}

/// Solve an LP file with the reference backend and write a result file.
/// This is the receiving half of the bridge, used by the CLI.
pub fn solve_lp_file(lp: &std::path::Path, sol: &std::path::Path) -> Result<SolveOutcome, SolveError> {
    let req = crate::lp_format::read_lp(BufReader::new(File::open(lp)?))?;
    let out = crate::solve(&req)?;
    crate::lp_format::write_solution(&out, &req.col_names, BufWriter::new(File::create(sol)?))?;
    Ok(out)
}
