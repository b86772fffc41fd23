//! Runs the full acceptance battery and prints one line per criterion.
//!
//! Criteria 7 and 12 are known to fail at their stated tolerances (see the
//! README); any other failure, or an error, makes the target fail. Set
//! `KF_ACCEPTANCE=fast` for the reduced-size suite.

use std::process::ExitCode;

use kinetic_core::acceptance::{run_suite, Suite};

const EXPECTED_FAILURES: [u32; 2] = [7, 12];

fn main() -> ExitCode {
    let suite = match Suite::parse(&std::env::var("KF_ACCEPTANCE").unwrap_or_else(|_| "full".into())) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    let out = std::env::temp_dir().join(format!("kinetic-acceptance-{}", std::process::id()));
    let results = match run_suite(suite, &out) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("acceptance suite aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut ok = true;
    for r in &results {
        println!("{}", r.line());
        let expected = EXPECTED_FAILURES.contains(&r.id);
        if !r.pass && !expected {
            ok = false;
        }
        if r.pass && expected {
            println!("    note: criterion {} was expected to fail but passed", r.id);
        }
        if r.measured.starts_with("error:") {
            ok = false;
        }
    }
    let passed = results.iter().filter(|r| r.pass).count();
    println!("{passed}/{} criteria passed; expected failures {:?}; CSVs in {}", results.len(), EXPECTED_FAILURES, out.display());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
