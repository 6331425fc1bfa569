use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub(crate) fn sha256_hex(data: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(data.as_ref()))
}

/// Pretty JSON with a trailing newline. Struct fields serialize in
/// declaration order and maps are BTreeMaps, so the key order is stable.
pub(crate) fn to_stable_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

/// Write through a sibling temp file and rename into place.
pub(crate) fn write_atomic(path: &Path, data: impl AsRef<[u8]>) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(data.as_ref())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
