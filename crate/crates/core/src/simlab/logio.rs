//! CSV persistence for simulation logs.
//!
//! One header line names every column:
//! `t, q0..q{n+6}, v0..v{n+5}, tau0..tau{n-1}, c0..c{m-1}, gt_cx..gt_kz`.
//! Floats are written as shortest round-trip decimals, contact flags as 0/1,
//! rows ordered by time. A write/read round trip reproduces every field
//! bit-exactly.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DVector, SVector};

use crate::kinodynamics::CentroidalState;

use super::{Log, LogFrame, SimError};

const GT_COLUMNS: [&str; 9] = [
    "gt_cx", "gt_cy", "gt_cz", "gt_lx", "gt_ly", "gt_lz", "gt_kx", "gt_ky", "gt_kz",
];

fn header(n_joints: usize, n_feet: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n_joints + 7).map(|i| format!("q{i}")));
    cols.extend((0..n_joints + 6).map(|i| format!("v{i}")));
    cols.extend((0..n_joints).map(|i| format!("tau{i}")));
    cols.extend((0..n_feet).map(|i| format!("c{i}")));
    cols.extend(GT_COLUMNS.iter().map(|s| s.to_string()));
    cols.join(",")
}

/// Write a log to a CSV file.
pub fn write_log<P: AsRef<Path>>(log: &Log, path: P) -> Result<(), SimError> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{}", header(log.n_joints, log.n_feet))?;
    for frame in &log.frames {
        let mut fields: Vec<String> = Vec::with_capacity(
            1 + frame.q.len() + frame.v.len() + frame.tau.len() + frame.contact_truth.len() + 9,
        );
        fields.push(format!("{}", frame.t));
        fields.extend(frame.q.iter().map(|x| format!("{x}")));
        fields.extend(frame.v.iter().map(|x| format!("{x}")));
        fields.extend(frame.tau.iter().map(|x| format!("{x}")));
        fields.extend(
            frame
                .contact_truth
                .iter()
                .map(|c| if *c { "1".to_string() } else { "0".to_string() }),
        );
        let gt = frame.x_truth.to_vector();
        fields.extend(gt.iter().map(|x| format!("{x}")));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Read a log from a CSV file, validating the header layout, the field
/// counts of every row, and the time column (strictly increasing, constant
/// step).
pub fn read_log<P: AsRef<Path>>(path: P) -> Result<Log, SimError> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);

    let mut header_line = String::new();
    reader.read_line(&mut header_line)?;
    let names: Vec<&str> = header_line.trim_end().split(',').collect();
    let count = |prefix: &str| names.iter().filter(|n| {
        n.starts_with(prefix) && n[prefix.len()..].chars().all(|c| c.is_ascii_digit())
    }).count();
    let nq = count("q");
    let nv = count("v");
    let n_tau = count("tau");
    let n_feet = count("c");
    let gt_ok = GT_COLUMNS.iter().all(|g| names.contains(g));
    if names.first() != Some(&"t")
        || !gt_ok
        || nq != n_tau + 7
        || nv != n_tau + 6
        || names.len() != 1 + nq + nv + n_tau + n_feet + 9
    {
        return Err(SimError::Format {
            line: 1,
            message: format!(
                "header mismatch: {} q, {} v, {} tau, {} contact columns",
                nq, nv, n_tau, n_feet
            ),
        });
    }
    let n_joints = n_tau;
    let expected_fields = 1 + nq + nv + n_tau + n_feet + 9;

    let mut frames: Vec<LogFrame> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != expected_fields {
            return Err(SimError::Format {
                line: line_no,
                message: format!(
                    "expected {} fields, found {} (last good line {})",
                    expected_fields,
                    fields.len(),
                    line_no - 1
                ),
            });
        }
        let parse = |s: &str, line: usize| -> Result<f64, SimError> {
            s.parse().map_err(|_| SimError::Format {
                line,
                message: format!("invalid number '{s}'"),
            })
        };
        let mut pos = 0usize;
        let mut take = |count: usize| {
            let slice = &fields[pos..pos + count];
            pos += count;
            slice
        };
        let t = parse(take(1)[0], line_no)?;
        let q_fields = take(nq).to_vec();
        let v_fields = take(nv).to_vec();
        let tau_fields = take(n_tau).to_vec();
        let c_fields = take(n_feet).to_vec();
        let gt_fields = take(9).to_vec();

        let q = DVector::from_iterator(
            nq,
            q_fields
                .iter()
                .map(|s| parse(s, line_no))
                .collect::<Result<Vec<f64>, _>>()?,
        );
        let v = DVector::from_iterator(
            nv,
            v_fields
                .iter()
                .map(|s| parse(s, line_no))
                .collect::<Result<Vec<f64>, _>>()?,
        );
        let tau = DVector::from_iterator(
            n_tau,
            tau_fields
                .iter()
                .map(|s| parse(s, line_no))
                .collect::<Result<Vec<f64>, _>>()?,
        );
        let mut contact_truth = Vec::with_capacity(n_feet);
        for c in c_fields {
            match c {
                "0" => contact_truth.push(false),
                "1" => contact_truth.push(true),
                other => {
                    return Err(SimError::Format {
                        line: line_no,
                        message: format!("contact flag must be 0 or 1, got '{other}'"),
                    })
                }
            }
        }
        let mut gt = SVector::<f64, 9>::zeros();
        for (i, s) in gt_fields.iter().enumerate() {
            gt[i] = parse(s, line_no)?;
        }

        if let Some(prev) = frames.last() {
            if t <= prev.t {
                return Err(SimError::Format {
                    line: line_no,
                    message: format!("time must be strictly increasing ({} after {})", t, prev.t),
                });
            }
        }

        frames.push(LogFrame {
            t,
            q,
            v,
            tau,
            contact_truth,
            x_truth: CentroidalState::from_vector(&gt),
        });
    }

    // constant sample period
    if frames.len() >= 3 {
        let dt = frames[1].t - frames[0].t;
        for (k, w) in frames.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if (step - dt).abs() > 1e-9 * dt.max(1e-12) {
                return Err(SimError::Format {
                    line: k + 3,
                    message: format!("sample period changed from {dt} to {step}"),
                });
            }
        }
    }

    Ok(Log {
        frames,
        n_joints,
        n_feet,
    })
}
