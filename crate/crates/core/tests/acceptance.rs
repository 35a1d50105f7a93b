//! Runs acceptance criteria 1-11 through the validation suite and criterion
//! 12 through the built binary, printing one line per criterion.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use qmcs::validation::{run_criterion, ValidationConfig, CRITERIA};

fn print_line(id: u8, passed: bool, name: &str, seconds: f64, details: &[String]) {
    println!(
        "criterion {:>2}: {} {} ({:.2} s)",
        id,
        if passed { "PASS" } else { "FAIL" },
        name,
        seconds
    );
    for d in details {
        println!("    {d}");
    }
}

fn run_cli(args: &[&str], threads: &str, dir: &Path) -> (Option<i32>, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_qmcs"))
        .args(args)
        .env("QMCS_THREADS", threads)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    (out.status.code(), out.stdout)
}

/// Every command twice with the same seed, once more with a different
/// worker count; all three outputs must match byte for byte.
fn cli_determinism() -> (bool, Vec<String>) {
    let dir = tempfile::tempdir().expect("temp dir");
    std::fs::write(dir.path().join("bernoulli.json"), r#"{"support":[[0,0.75],[1,0.25]]}"#).unwrap();
    std::fs::write(dir.path().join("c4.txt"), "4 4\n0 1\n1 2\n2 3\n3 0\n").unwrap();
    let runs: [&[&str]; 11] = [
        &["mean", "--dist", "bernoulli.json", "--method", "bounded", "--eps", "0.01", "--seed", "7"],
        &["mean", "--dist", "bernoulli.json", "--method", "variance", "--eps", "0.05", "--trials", "16"],
        &["ae-check", "--a", "0.3", "--t", "32", "--trials", "200"],
        &["model", "--model", "colouring", "--graph", "c4.txt", "--k", "3"],
        &["chain", "--model", "ising", "--graph", "c4.txt", "--beta", "0.5"],
        &["walk-check", "--random", "6", "--seed", "11"],
        &["schedule", "--model", "matching", "--graph", "c4.txt"],
        &["partition", "--model", "matching", "--graph", "c4.txt", "--eps", "0.2", "--seed", "3", "--trials", "8", "--classical", "mixing"],
        &["tvd", "--p", "[0.1,0.2,0.3,0.4]", "--q", "[0.25,0.25,0.25,0.25]", "--eps", "0.1", "--trials", "4"],
        &["bench", "--sweep", "eps=0.1,0.05", "--method", "variance", "--trials", "8"],
        &["validate", "--criterion", "6", "--omit-timings"],
    ];
    let mut details = Vec::new();
    let mut passed = true;
    for args in runs {
        let first = run_cli(args, "4", dir.path());
        let second = run_cli(args, "4", dir.path());
        let third = run_cli(args, "1", dir.path());
        let ok = first.0 == Some(0) && !first.1.is_empty() && first == second && first == third;
        passed &= ok;
        details.push(format!(
            "{} {} ({} bytes, exit {:?})",
            if ok { "ok" } else { "MISMATCH" },
            args.join(" "),
            first.1.len(),
            first.0
        ));
    }
    (passed, details)
}

fn main() {
    let cfg = ValidationConfig::default();
    let mut failed = Vec::new();
    for (id, _) in CRITERIA {
        let r = run_criterion(id, &cfg);
        print_line(r.id, r.passed, &r.name, r.runtime_seconds, &r.details);
        if !r.passed {
            failed.push(id);
        }
    }
    let start = Instant::now();
    let (passed, details) = cli_determinism();
    print_line(12, passed, "CLI determinism", start.elapsed().as_secs_f64(), &details);
    if !passed {
        failed.push(12);
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
