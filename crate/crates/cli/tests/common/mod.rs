use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Runs `degctl <args> --config <data/config> --out <out>` and returns the exit code.
pub fn degctl(args: &[&str], config: &str, out: &Path) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_degctl"))
        .args(args)
        .arg("--config")
        .arg(data(config))
        .arg("--out")
        .arg(out)
        .output()
        .expect("failed to launch degctl");
    status.status.code().expect("degctl terminated by a signal")
}

/// File name to contents for every artifact in `dir`.
pub fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("output directory missing")
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}
