use serde::{Deserialize, Serialize};

use super::RunSummary;
use crate::error::{Error, Result};

/// Relative tolerance for treating body and orbit settings as identical.
const SAME_SETTING_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub unit: String,
    pub baseline: Option<f64>,
    pub coupled: Option<f64>,
    /// `(coupled - baseline) / baseline` in percent.
    pub delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

fn pct(baseline: f64, coupled: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (coupled - baseline) / baseline)
}

fn row(quantity: &str, unit: &str, b: Option<f64>, c: Option<f64>) -> ComparisonRow {
    ComparisonRow {
        quantity: quantity.into(),
        unit: unit.into(),
        baseline: b,
        coupled: c,
        delta_pct: b.zip(c).and_then(|(b, c)| pct(b, c)),
    }
}

/// Baseline against coupled, row by row.
pub fn compare(baseline: &RunSummary, coupled: &RunSummary) -> Result<ComparisonReport> {
    for (name, a, b) in [
        ("mu", baseline.mu, coupled.mu),
        ("r0", baseline.r0, coupled.r0),
        ("rf", baseline.rf, coupled.rf),
    ] {
        if (a - b).abs() > SAME_SETTING_RTOL * a.abs().max(b.abs()) {
            return Err(Error::Incomparable(format!("{name} differs ({a} vs {b})")));
        }
    }
    let area = |s: &RunSummary| s.area_optimized.then_some(s.area);
    let radius = |s: &RunSummary| {
        s.divergence
            .as_ref()
            .map(|d| d.max[crate::dynamics::idx::R])
    };
    Ok(ComparisonReport {
        rows: vec![
            row("time_of_flight", "s", Some(baseline.t_f), Some(coupled.t_f)),
            row("optimized_area", "m^2", area(baseline), area(coupled)),
            row(
                "initial_mass",
                "kg",
                Some(baseline.initial_mass),
                Some(coupled.initial_mass),
            ),
            row(
                "final_mass",
                "kg",
                Some(baseline.final_mass),
                Some(coupled.final_mass),
            ),
            row(
                "propellant",
                "kg",
                Some(baseline.propellant),
                Some(coupled.propellant),
            ),
            row(
                "max_defect",
                "-",
                Some(baseline.max_defect),
                Some(coupled.max_defect),
            ),
            row(
                "max_radius_divergence",
                "m",
                radius(baseline),
                radius(coupled),
            ),
        ],
    })
}

impl ComparisonReport {
    pub fn row(&self, quantity: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["quantity", "unit", "baseline", "coupled", "delta_pct"])?;
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.17e}")).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.quantity.clone(),
                r.unit.clone(),
                cell(r.baseline),
                cell(r.coupled),
                cell(r.delta_pct),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<comparison>", e))?;
        Ok(())
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>, prec: usize| match v {
            Some(v) => format!("{v:.prec$}"),
            None => "fixed".into(),
        };
        let mut out = format!(
            "{:<24} {:>6} {:>16} {:>16} {:>10}\n",
            "quantity", "unit", "baseline", "coupled", "delta %"
        );
        for r in &self.rows {
            let delta = r
                .delta_pct
                .map(|d| format!("{d:+.2}"))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<24} {:>6} {:>16} {:>16} {:>10}\n",
                r.quantity,
                r.unit,
                cell(r.baseline, 4),
                cell(r.coupled, 4),
                delta
            ));
        }
        out
    }
}
