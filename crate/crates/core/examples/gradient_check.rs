//! Runs the finite-difference gradient suite over one group or all of them.
//!
//! ```text
//! cargo run --release --example gradient_check -- [all|ops|fft|losses|ssm|blocks|network] [seeds]
//! ```

use dfssm::gradcheck::suite::{self, Group};

fn main() -> dfssm::Result<()> {
    let mut args = std::env::args().skip(1);
    let groups = Group::parse(&args.next().unwrap_or_else(|| "ssm".into()))?;
    let seeds = args.next().map_or(Ok(1), |a| a.parse()).expect("seeds");
    let start = std::time::Instant::now();
    let outcomes = suite::run(&groups, seeds)?;
    for o in &outcomes {
        println!("{} {:<4} {:<24} {:.2e}", if o.passed() { "ok  " } else { "FAIL" }, o.precision, o.name, o.error);
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    println!("{} checks, {failed} failed, {:.1}s", outcomes.len(), start.elapsed().as_secs_f64());
    Ok(())
}
