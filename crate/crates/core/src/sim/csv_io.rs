use std::io::{Read, Write};

use super::TrajectoryRow;
use crate::controller::Diagnostics;
use crate::error::{Error, Result};

const DIAGNOSTIC_COLUMNS: [&str; 9] =
    ["R", "Omega", "R_u", "Omega_u", "vartheta", "u_d_bar", "beta1", "xi_u1_bar", "xi_u2_bar"];

pub fn csv_header(n: usize, n_psi: usize, diagnostics: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=n_psi).map(|i| format!("psi{i}")));
    h.extend((2..=n).map(|i| format!("xhat{i}")));
    h.extend(
        ["zeta", "r", "r_u", "theta_hat", "u", "u_tilde", "u_d", "eps_norm", "varpi_norm", "delta"].map(String::from),
    );
    if diagnostics {
        h.extend(DIAGNOSTIC_COLUMNS.map(String::from));
    }
    h
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// Writes the trajectory with a header row; diagnostic columns are appended
/// when every row carries them.
pub fn write_csv<W: Write>(out: W, n: usize, n_psi: usize, rows: &[TrajectoryRow]) -> Result<()> {
    let diagnostics = !rows.is_empty() && rows.iter().all(|r| r.diagnostics.is_some());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(n, n_psi, diagnostics))?;
    for r in rows {
        let mut rec: Vec<String> = r.values().into_iter().map(fmt).collect();
        if let (true, Some(d)) = (diagnostics, r.diagnostics) {
            rec.extend(
                [d.r_target, d.omega, d.r_u_target, d.omega_u, d.vartheta, d.u_d_bar, d.beta1, d.xi_u1_bar, d.xi_u2_bar]
                    .map(fmt),
            );
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_csv`]; the dimensions are recovered
/// from the header.
pub fn read_csv<R: Read>(input: R) -> Result<(usize, usize, Vec<TrajectoryRow>)> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    let count = |prefix: &str| header.iter().filter(|h| h.strip_prefix(prefix).is_some_and(|d| d.parse::<usize>().is_ok())).count();
    let n = count("x");
    let n_psi = count("psi");
    let diagnostics = header.iter().any(|h| h == "R");
    if n < 2 || header != csv_header(n, n_psi, diagnostics) {
        return Err(Error::Config("trajectory CSV header does not match the expected layout".into()));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad number {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        if v.len() != header.len() {
            return Err(Error::Config("trajectory CSV row has the wrong length".into()));
        }
        let mut it = v.into_iter();
        let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
        let t = take(1)[0];
        let x = take(n);
        let psi = take(n_psi);
        let xhat = take(n - 1);
        let s = take(10);
        let diag = if diagnostics {
            let d = take(9);
            Some(Diagnostics {
                r_target: d[0],
                omega: d[1],
                r_u_target: d[2],
                omega_u: d[3],
                vartheta: d[4],
                u_d_bar: d[5],
                beta1: d[6],
                xi_u1_bar: d[7],
                xi_u2_bar: d[8],
            })
        } else {
            None
        };
        rows.push(TrajectoryRow {
            t,
            x,
            psi,
            xhat,
            zeta: s[0],
            r: s[1],
            r_u: s[2],
            theta_hat: s[3],
            u: s[4],
            u_tilde: s[5],
            u_d: s[6],
            eps_norm: s[7],
            varpi_norm: s[8],
            delta: s[9],
            diagnostics: diag,
        });
    }
    Ok((n, n_psi, rows))
}
