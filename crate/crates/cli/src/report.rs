//! CSV layouts.

use ncs_core::io::{fmt_f64, CsvTable};
use ncs_core::TrajectoryRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub p: f64,
    pub replicates: usize,
    pub mean_cost: f64,
    pub std_err: f64,
    pub analytic_cost: f64,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut t = CsvTable::new(&["p", "replicates", "mean_cost", "std_err", "analytic_cost"]);
    for r in rows {
        t.push_cells(&[
            fmt_f64(r.p),
            r.replicates.to_string(),
            fmt_f64(r.mean_cost),
            fmt_f64(r.std_err),
            fmt_f64(r.analytic_cost),
        ]);
    }
    t.into_string()
}

pub fn msq_csv(empirical: &[f64], analytic: &[f64]) -> String {
    let mut t = CsvTable::new(&["k", "msq_empirical", "msq_analytic"]);
    for (k, (e, a)) in empirical.iter().zip(analytic).enumerate() {
        t.push_cells(&[k.to_string(), fmt_f64(*e), fmt_f64(*a)]);
    }
    t.into_string()
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}

pub fn trajectory_csv(records: &[TrajectoryRecord]) -> String {
    let Some(first) = records.first() else {
        return "k,beta,stage_cost\n".to_string();
    };
    let (n, w, q) = (first.x.len(), first.u_w.len(), first.u_p.len());
    let mut header = vec!["k".to_string(), "beta".to_string()];
    header.extend(indexed("x", n));
    header.extend(indexed("xhatW", n));
    header.extend(indexed("xhatP", n));
    header.extend(indexed("uW", w));
    header.extend(indexed("uP", q));
    header.push("stage_cost".into());
    let mut t = CsvTable::new(&header);
    for r in records {
        let mut cells = vec![r.k.to_string(), u8::from(r.beta).to_string()];
        for v in r.x.iter().chain(&r.x_hat_w).chain(&r.x_hat_p).chain(&r.u_w).chain(&r.u_p) {
            cells.push(fmt_f64(*v));
        }
        cells.push(fmt_f64(r.stage_cost));
        t.push_cells(&cells);
    }
    t.into_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_layout() {
        let csv = summary_csv(&[SummaryRow { p: 0.5, replicates: 10, mean_cost: 1.0, std_err: 0.1, analytic_cost: 1.5 }]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("p,replicates,mean_cost,std_err,analytic_cost"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[1], "10");
        assert_eq!(row[0].parse::<f64>().unwrap(), 0.5);
    }

    #[test]
    fn trajectory_header() {
        let r = TrajectoryRecord {
            k: 0,
            x: vec![1.0, 2.0],
            beta: true,
            y_p: vec![0.0],
            x_hat_w: vec![1.0, 2.0],
            x_hat_p: vec![1.0, 2.0],
            u_w: vec![0.5],
            u_p: vec![0.25],
            stage_cost: 3.0,
        };
        let csv = trajectory_csv(&[r]);
        assert!(csv.starts_with("k,beta,x_0,x_1,xhatW_0,xhatW_1,xhatP_0,xhatP_1,uW_0,uP_0,stage_cost\n0,1,"));
    }
}
