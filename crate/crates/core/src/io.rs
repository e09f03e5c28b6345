//! File formats: the per-run statistics CSV and binary field snapshots.
//!
//! CSV: a `# svi-torus v1` comment line, a header row, then one row per recorded
//! time. Floats use the shortest representation that parses back to the same bits.
//!
//! Snapshot: `b"SVIT"`, `u8` dimension, `u32` points per axis, `u64` payload
//! bytes, then the row-major values as `f64`; all little-endian.

use crate::error::{Error, Result};
use crate::fields::{PeriodicGrid, ScalarField};
use crate::simulator::EnsembleRow;

pub const CSV_VERSION_LINE: &str = "# svi-torus v1";

pub const CSV_COLUMNS: [&str; 9] = [
    "t",
    "E_norm_H2",
    "E_Psi_lambda",
    "E_form_A",
    "mean",
    "mc_stderr_norm_H2",
    "mc_stderr_Psi_lambda",
    "mc_stderr_form_A",
    "mc_stderr_mean",
];

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"SVIT";

/// Header length in bytes: magic, `u8` d, `u32` n, `u64` payload length.
pub const SNAPSHOT_HEADER_LEN: usize = 4 + 1 + 4 + 8;

fn row_values(r: &EnsembleRow) -> [f64; 9] {
    [
        r.t,
        r.norm_h2,
        r.psi_lambda,
        r.form_a,
        r.mean,
        r.stderr_norm_h2,
        r.stderr_psi_lambda,
        r.stderr_form_a,
        r.stderr_mean,
    ]
}

pub fn stats_csv(rows: &[EnsembleRow]) -> String {
    let mut out = format!("{CSV_VERSION_LINE}\n{}\n", CSV_COLUMNS.join(","));
    for r in rows {
        let cells: Vec<String> = row_values(r).iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_stats_csv(text: &str) -> Result<Vec<EnsembleRow>> {
    let bad = |reason: String| Error::Format {
        format: "stats CSV",
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(CSV_VERSION_LINE) {
        return Err(bad(format!("first line must be `{CSV_VERSION_LINE}`")));
    }
    let header = lines.next().ok_or_else(|| bad("missing header row".into()))?;
    if header != CSV_COLUMNS.join(",") {
        return Err(bad(format!("unexpected header `{header}`")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let v: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
            if v.len() != CSV_COLUMNS.len() {
                return Err(bad(format!(
                    "row {} has {} cells, expected {}",
                    i + 1,
                    v.len(),
                    CSV_COLUMNS.len()
                )));
            }
            Ok(EnsembleRow {
                t: v[0],
                norm_h2: v[1],
                psi_lambda: v[2],
                form_a: v[3],
                mean: v[4],
                stderr_norm_h2: v[5],
                stderr_psi_lambda: v[6],
                stderr_form_a: v[7],
                stderr_mean: v[8],
            })
        })
        .collect()
}

pub fn encode_snapshot(f: &ScalarField) -> Vec<u8> {
    let g = f.grid();
    let payload = f.values().len() * 8;
    let mut out = Vec::with_capacity(SNAPSHOT_HEADER_LEN + payload);
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.push(g.dim() as u8);
    out.extend_from_slice(&(g.n() as u32).to_le_bytes());
    out.extend_from_slice(&(payload as u64).to_le_bytes());
    for v in f.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<ScalarField> {
    let bad = |reason: String| Error::Format {
        format: "snapshot",
        reason,
    };
    if bytes.len() < SNAPSHOT_HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != SNAPSHOT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let d = bytes[4] as usize;
    let n = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let payload = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes"));
    let grid = PeriodicGrid::new(d, n)?;
    let body = &bytes[SNAPSHOT_HEADER_LEN..];
    if payload != body.len() as u64 || payload != (grid.len() * 8) as u64 {
        return Err(bad(format!(
            "payload of {} bytes does not match header ({payload}) and grid d={d}, n={n}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ScalarField::new(grid, values)
}
