//! Plain-text tables for terminal output.

use lightmamba_core::rotation::Counterexample;
use lightmamba_sim::{SimReport, StageEvent};

/// One row per schedule, in the order given.
pub fn comparison_table(reports: &[SimReport]) -> String {
    let mut out = format!(
        "{:<12} {:>14} {:>10} {:>9} {:>9} {:>6} {:>6}  {}\n",
        "schedule", "cycles/token", "tokens/s", "mmu_util", "ssmu_util", "uram", "bram", "feasible"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<12} {:>14} {:>10.3} {:>9.3} {:>9.3} {:>6} {:>6}  {}\n",
            r.schedule.as_str(),
            r.cycles_per_token,
            r.tokens_per_s,
            r.mmu_utilization,
            r.ssmu_utilization,
            r.uram_used,
            r.bram_used,
            if r.feasible { "yes" } else { "no" },
        ));
    }
    out
}

pub fn timeline(events: &[StageEvent]) -> String {
    let mut out = format!("{:>12} {:>12}  {:<5} {}\n", "start", "end", "unit", "stage");
    for e in events {
        let unit = serde_json::to_value(e.unit).expect("unit serializes");
        out.push_str(&format!(
            "{:>12} {:>12}  {:<5} {}\n",
            e.start_cycle,
            e.end_cycle,
            unit.as_str().unwrap_or_default(),
            e.label
        ));
    }
    out
}

/// Largest elementwise gap between the two sides of a counterexample.
pub fn max_gap(c: &Counterexample) -> f64 {
    c.lhs
        .iter()
        .zip(&c.rhs)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

pub fn counterexample_table(rows: &[(&str, Counterexample)]) -> String {
    let mut out = format!("{:<16} {:>16}  {}\n", "decay", "max |lhs - rhs|", "equal");
    for (name, c) in rows {
        out.push_str(&format!(
            "{:<16} {:>16.3e}  {}\n",
            name,
            max_gap(c),
            if c.equal { "yes" } else { "no" }
        ));
    }
    out
}
