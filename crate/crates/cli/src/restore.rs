use std::path::PathBuf;

use clap::Args;
use patchrev_core::{load_png, restore, save_png};
use serde::Serialize;

use crate::attack::FileStatus;
use crate::corpus::{file_name, list_pngs, prepare_out, sha256_hex, write_json};
use crate::Failure;

#[derive(Args, Debug)]
pub struct RestoreArgs {
    /// Directory of reversible adversarial examples
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// JSON report with the status of every file
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

pub fn run(args: &RestoreArgs) -> Result<(), Failure> {
    let inputs = list_pngs(&args.input)?;
    prepare_out(&args.input, &args.out)?;
    let mut files = Vec::new();
    for path in &inputs {
        let name = file_name(path);
        let outcome = load_png(path)
            .map_err(|e| e.to_string())
            .and_then(|rae| restore(&rae).map_err(|e| e.to_string()))
            .and_then(|r| save_png(&r.image, &args.out.join(&name)).map_err(|e| e.to_string()));
        files.push(match outcome {
            Ok(()) => FileStatus {
                file: name,
                status: "ok",
                message: None,
            },
            Err(message) => {
                eprintln!("{name}: {message}");
                FileStatus {
                    file: name,
                    status: "error",
                    message: Some(message),
                }
            }
        });
    }
    let failed = files.iter().filter(|f| f.status != "ok").count();
    eprintln!(
        "restore: {} restored, {failed} failed",
        files.len() - failed
    );
    if let Some(report) = &args.report {
        write_json(report, &files)?;
    }
    if failed > 0 {
        return Err(Failure::Verify(format!(
            "{failed} file(s) could not be restored"
        )));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Directory of original images
    #[arg(long, value_name = "DIR")]
    originals: PathBuf,
    /// Directory of reversible adversarial examples, named like their originals
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// JSON report with per-file digests
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct VerifyEntry {
    file: String,
    ok: bool,
    original_sha256: Option<String>,
    restored_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct VerifyReport {
    verified: usize,
    failed: usize,
    files: Vec<VerifyEntry>,
}

fn check(args: &VerifyArgs, name: &str) -> VerifyEntry {
    let mut entry = VerifyEntry {
        file: name.to_string(),
        ok: false,
        original_sha256: None,
        restored_sha256: None,
        error: None,
    };
    let original = match load_png(&args.originals.join(name)) {
        Ok(img) => img,
        Err(e) => {
            entry.error = Some(format!("original: {e}"));
            return entry;
        }
    };
    entry.original_sha256 = Some(sha256_hex(&original));
    match load_png(&args.input.join(name))
        .map_err(|e| e.to_string())
        .and_then(|rae| restore(&rae).map_err(|e| e.to_string()))
    {
        Ok(r) => {
            let digest = sha256_hex(&r.image);
            entry.ok = entry.original_sha256.as_ref() == Some(&digest) && r.image == original;
            entry.restored_sha256 = Some(digest);
        }
        Err(e) => entry.error = Some(e),
    }
    entry
}

pub fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let inputs = list_pngs(&args.input)?;
    if inputs.is_empty() {
        return Err(Failure::Verify(format!(
            "nothing to verify in {}",
            args.input.display()
        )));
    }
    let files: Vec<VerifyEntry> = inputs.iter().map(|p| check(args, &file_name(p))).collect();
    for f in &files {
        match (f.ok, &f.error) {
            (true, _) => println!(
                "ok       {} {}",
                f.file,
                f.restored_sha256.as_deref().unwrap_or("")
            ),
            (false, Some(e)) => println!("FAILED   {} {e}", f.file),
            (false, None) => println!(
                "MISMATCH {} original {} restored {}",
                f.file,
                f.original_sha256.as_deref().unwrap_or("-"),
                f.restored_sha256.as_deref().unwrap_or("-")
            ),
        }
    }
    let failed = files.iter().filter(|f| !f.ok).count();
    let names: Vec<String> = files
        .iter()
        .filter(|f| !f.ok)
        .map(|f| f.file.clone())
        .collect();
    if let Some(report) = &args.report {
        write_json(
            report,
            &VerifyReport {
                verified: files.len() - failed,
                failed,
                files,
            },
        )?;
    }
    if failed > 0 {
        return Err(Failure::Verify(format!(
            "{failed} file(s) differ: {}",
            names.join(", ")
        )));
    }
    Ok(())
}
