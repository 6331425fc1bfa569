//! Host-side compilation of PoC sources.

use std::collections::HashMap;
use std::fs;
use std::process::{Command, Stdio};
use std::sync::{Mutex, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::GuestError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompilerConfig {
    pub program: String,
    pub flags: Vec<String>,
    pub timeout_s: u64,
}

impl Default for CompilerConfig {
    fn default() -> Self {
        Self {
            program: "gcc".into(),
            flags: vec!["-static".into(), "-O0".into(), "-pthread".into()],
            timeout_s: 120,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompiledBinary {
    pub bytes: Vec<u8>,
    pub log: String,
    pub compiler_id: String,
    pub target_triple: String,
}

fn query(program: &str, arg: &str) -> String {
    Command::new(program)
        .arg(arg)
        .stdin(Stdio::null())
        .stderr(Stdio::null())
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).lines().next().unwrap_or("").trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// (compiler id, target triple), memoized per compiler program.
fn toolchain(program: &str) -> (String, String) {
    static CACHE: OnceLock<Mutex<HashMap<String, (String, String)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(v) = cache.lock().unwrap().get(program) {
        return v.clone();
    }
    let v = (query(program, "--version"), query(program, "-dumpmachine"));
    cache.lock().unwrap().insert(program.to_string(), v.clone());
    v
}

/// Compile one C translation unit. Diagnostics from a failed build are
/// returned whole.
pub fn compile_c(source: &str, cfg: &CompilerConfig) -> Result<CompiledBinary, GuestError> {
    let dir = tempfile::Builder::new().prefix("repro-cc").tempdir()?;
    let src = dir.path().join("poc.c");
    let out = dir.path().join("poc");
    fs::write(&src, source)?;
    // relative paths keep the scratch directory out of diagnostics and the binary
    let mut child = Command::new(&cfg.program)
        .current_dir(dir.path())
        .args(&cfg.flags)
        .args(["-o", "poc", "poc.c"])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| GuestError::CompileFailed { diagnostics: format!("cannot run {}: {e}", cfg.program) })?;
    let mut stdout = child.stdout.take().expect("piped");
    let mut stderr = child.stderr.take().expect("piped");
    let t_out = thread::spawn(move || {
        let mut s = Vec::new();
        std::io::Read::read_to_end(&mut stdout, &mut s).ok();
        s
    });
    let t_err = thread::spawn(move || {
        let mut s = Vec::new();
        std::io::Read::read_to_end(&mut stderr, &mut s).ok();
        s
    });
    let deadline = Instant::now() + Duration::from_secs(cfg.timeout_s);
    let status = loop {
        if let Some(st) = child.try_wait()? {
            break Some(st);
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        thread::sleep(Duration::from_millis(10));
    };
    let mut log = String::from_utf8_lossy(&t_out.join().unwrap_or_default()).into_owned();
    log.push_str(&String::from_utf8_lossy(&t_err.join().unwrap_or_default()));
    match status {
        None => Err(GuestError::CompileFailed { diagnostics: format!("{log}compiler timed out after {}s", cfg.timeout_s) }),
        Some(st) if !st.success() => Err(GuestError::CompileFailed { diagnostics: log }),
        Some(_) => {
            let bytes = fs::read(&out)?;
            let (compiler_id, target_triple) = toolchain(&cfg.program);
            Ok(CompiledBinary { bytes, log, compiler_id, target_triple })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syntax_error_carries_diagnostics() {
        let err = compile_c("int main(void) { return 0 }\n", &CompilerConfig::default()).unwrap_err();
        match err {
            GuestError::CompileFailed { diagnostics } => {
                assert!(diagnostics.contains("poc.c"), "{diagnostics}");
                assert!(diagnostics.contains("error"), "{diagnostics}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn minimal_program_compiles() {
        let bin = compile_c("int main(void) { return 0; }\n", &CompilerConfig::default()).unwrap();
        assert!(bin.bytes.starts_with(b"\x7fELF"));
        assert_ne!(bin.target_triple, "unknown");
    }
}
