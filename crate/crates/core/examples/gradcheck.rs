//! Finite-difference check of every op and block in f64.

use esf_detect::gradcheck::run_all;

fn main() -> esf_detect::Result<()> {
    let cases = run_all(0, 1)?;
    for c in &cases {
        println!("{:<40} {:>4} coords  max rel err {:.2e}", c.name, c.checked, c.max_rel_err);
    }
    let failed = cases.iter().filter(|c| !c.passed).count();
    println!("{} cases, {failed} failed", cases.len());
    Ok(())
}
