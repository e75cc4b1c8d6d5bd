//! Plain-text rendering of evaluation reports.

use std::fmt::Write;

use countercurate_core::eval::{CategoryStat, Report};

fn row(out: &mut String, name: &str, s: &CategoryStat) {
    let _ = writeln!(out, "{name:<14} {:>7} {:>9.1} {:>8.2}", s.count, s.score, s.accuracy);
}

/// A table of categories, rollups and totals, followed by warnings.
pub fn render_table(title: &str, report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{:<14} {:>7} {:>9} {:>8}", "category", "items", "score", "acc%");
    for (name, s) in &report.categories {
        row(&mut out, name, s);
    }
    for (name, s) in &report.rollups {
        row(&mut out, name, s);
    }
    row(&mut out, "overall", &report.overall);
    let _ = writeln!(out, "{:<14} {:>7} {:>9} {:>8.2}", "macro", "", "", report.macro_accuracy);
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use countercurate_core::eval::{aggregate, HalfPoints};
    use std::collections::BTreeMap;

    #[test]
    fn lists_each_category_and_warning() {
        let cats: BTreeMap<String, String> =
            [("a", "LR"), ("b", "AB"), ("c", "AB")].iter().map(|(i, c)| (i.to_string(), c.to_string())).collect();
        let r = aggregate([("a", HalfPoints(2)), ("b", HalfPoints(1))], cats, &["LR", "AB", "counting"], &[("Both", &["LR", "AB"])]);
        let t = render_table("scores", &r);
        assert!(t.contains("LR                   1       1.0   100.00"), "{t}");
        assert!(t.contains("AB                   1       0.5    50.00"), "{t}");
        assert!(t.contains("Both                 2       1.5    75.00"), "{t}");
        assert!(t.contains("warning: category counting has no scored items"), "{t}");
        assert!(t.contains("warning: 1 items have no score"), "{t}");
    }
}
