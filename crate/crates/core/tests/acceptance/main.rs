//! One PASS/FAIL line per acceptance criterion. Exits nonzero on any failure.

mod causality;
mod freeze;
mod generator;
mod gradients;
mod grid;
mod losses;
mod overfit;
mod repro;
mod rope;
mod util;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

type Check = fn() -> Result<String, String>;

const CRITERIA: &[(&str, Check, u64)] = &[
    ("gradient-suite", gradients::run, 120),
    ("rope2d-relative-position", rope::run, 1),
    ("loss-oracles", losses::run, 30),
    ("decoder-causality", causality::run, 10),
    ("stage1-freeze", freeze::run, 60),
    ("overfit-relation-lr", overfit::run, 300),
    ("generator-double-oracle", generator::run, 600),
    ("grid-protocol", grid::run, 4 * 3600),
    ("reproducibility", repro::run, 600),
];

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for &(name, check, budget) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = t.elapsed();
        let res = match res {
            Ok(d) if took > Duration::from_secs(budget) => Err(format!("{d}; over the {budget}s budget")),
            r => r,
        };
        match res {
            Ok(d) => println!("PASS {name} ({:.1}s): {d}", took.as_secs_f64()),
            Err(d) => {
                failed += 1;
                println!("FAIL {name} ({:.1}s): {d}", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
