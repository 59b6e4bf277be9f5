use std::io::Write;

use serde::Serialize;

use super::experiment::RoundMetrics;
use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::power::SolverTrace;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `round,loss,acc,bias_sq,mse,objective,bound`
pub fn write_metrics<W: Write>(out: W, rows: &[RoundMetrics]) -> Result<()> {
    write_rows(out, rows)
}

#[derive(Serialize)]
struct AssignmentRow {
    round: usize,
    device: usize,
    cluster: usize,
    is_lead: bool,
}

/// `round,device,cluster,is_lead`, one row per device per round.
pub fn write_assignments<W: Write>(out: W, assignments: &[ClusterAssignment]) -> Result<()> {
    let rows = assignments.iter().flat_map(|a| {
        let mut rows: Vec<AssignmentRow> = a
            .clusters
            .iter()
            .enumerate()
            .flat_map(|(c, members)| {
                members.iter().map(move |&device| AssignmentRow { round: a.round, device, cluster: c, is_lead: a.leads[c] == device })
            })
            .collect();
        rows.sort_by_key(|r| r.device);
        rows
    });
    write_rows(out, rows)
}

#[derive(Serialize)]
struct TraceRow {
    round: usize,
    iter: usize,
    f: f64,
}

/// `round,iter,f`, one row per solver sweep.
pub fn write_traces<W: Write>(out: W, traces: &[(usize, SolverTrace)]) -> Result<()> {
    let rows =
        traces.iter().flat_map(|(round, t)| t.objective.iter().enumerate().map(move |(i, &f)| TraceRow { round: *round, iter: i + 1, f }));
    write_rows(out, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_header() {
        let mut buf = Vec::new();
        let row = RoundMetrics { round: 1, loss: 0.5, acc: 0.25, bias_sq: 0.0, mse: 1e-3, objective: 2.0, bound: 3.0 };
        write_metrics(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "round,loss,acc,bias_sq,mse,objective,bound");
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn assignment_rows() {
        let a = ClusterAssignment { clusters: vec![vec![0, 2], vec![1]], leads: vec![2, 1], round: 3 };
        let mut buf = Vec::new();
        write_assignments(&mut buf, &[a]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, vec!["round,device,cluster,is_lead", "3,0,0,false", "3,1,1,true", "3,2,0,true"]);
    }

    #[test]
    fn trace_rows() {
        let t = SolverTrace { objective: vec![2.0, 1.5], converged: true };
        let mut buf = Vec::new();
        write_traces(&mut buf, &[(4, t)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "round,iter,f\n4,1,2.0\n4,2,1.5\n");
    }
}
