//! Thin wrapper over the `git` CLI. Only local plumbing commands are used,
//! so nothing here can reach a network.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};

pub(crate) struct GitOutput {
    pub ok: bool,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

pub(crate) fn run(repo: &Path, args: &[&str]) -> std::io::Result<GitOutput> {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(["-c", "core.quotepath=off", "-c", "color.ui=never"])
        .args(args)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_TERMINAL_PROMPT", "0")
        .env_remove("GIT_DIR")
        .env_remove("GIT_WORK_TREE")
        .stdin(Stdio::null())
        .output()?;
    Ok(GitOutput {
        ok: out.status.success(),
        stdout: out.stdout,
        stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
    })
}

pub(crate) fn text(out: &GitOutput) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Extract the tree of `commit` into `dest` via `git archive`.
pub(crate) fn export_tree(repo: &Path, commit: &str, dest: &Path) -> std::io::Result<()> {
    let mut child = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(["archive", "--format=tar", commit])
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;
    let stdout = child.stdout.take().expect("piped");
    let unpack = tar::Archive::new(stdout).unpack(dest);
    let mut err = String::new();
    if let Some(mut e) = child.stderr.take() {
        let _ = e.read_to_string(&mut err);
    }
    let status = child.wait()?;
    unpack?;
    if !status.success() {
        return Err(std::io::Error::other(format!("git archive {commit}: {}", err.trim())));
    }
    Ok(())
}
