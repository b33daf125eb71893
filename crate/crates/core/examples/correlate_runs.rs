//! Pearson correlation with a two-sided p-value, as used across runs.
//!
//! cargo run --release --example correlate_runs

use sglab::analysis::correlate;

fn main() -> sglab::Result<()> {
    // (train NMI, OOD shape accuracy) for a handful of hypothetical runs
    let nmi = [0.42, 0.35, 0.30, 0.22, 0.15, 0.09, 0.05, 0.03, 0.02];
    let ood = [0.01, 0.03, 0.02, 0.10, 0.18, 0.33, 0.41, 0.62, 0.70];
    let c = correlate(&nmi, &ood)?;
    println!("r = {:.3}, p = {:.2e}, n = {}", c.r, c.p_value, c.n);
    Ok(())
}
