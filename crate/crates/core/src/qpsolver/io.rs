//! Plain-text problem dump for reproducing solver cases.
//!
//! Blocks `h c m_mat m_vec n_mat n_vec x_lo x_hi`, each introduced by a
//! `# <name> <rows> <cols>` header line followed by whitespace-separated
//! rows. Vectors are written as single-column matrices; infinite bounds
//! appear as `inf` / `-inf`.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::QpProblem;
use crate::netmodel::linear_write_matrix as write_matrix;

const BLOCKS: [&str; 8] = ["h", "c", "m_mat", "m_vec", "n_mat", "n_vec", "x_lo", "x_hi"];

pub fn write_problem<W: Write>(problem: &QpProblem, mut out: W) -> io::Result<()> {
    let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    write_matrix(&mut out, "h", &problem.h)?;
    write_matrix(&mut out, "c", &col(&problem.c))?;
    write_matrix(&mut out, "m_mat", &problem.m_mat)?;
    write_matrix(&mut out, "m_vec", &col(&problem.m_vec))?;
    write_matrix(&mut out, "n_mat", &problem.n_mat)?;
    write_matrix(&mut out, "n_vec", &col(&problem.n_vec))?;
    write_matrix(&mut out, "x_lo", &col(&problem.x_lo))?;
    write_matrix(&mut out, "x_hi", &col(&problem.x_hi))?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn read_problem<R: BufRead>(input: R) -> io::Result<QpProblem> {
    let mut blocks: HashMap<String, DMatrix<f64>> = HashMap::new();
    let mut lines = input.lines();
    while let Some(line) = lines.next() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let header: Vec<&str> = line
            .strip_prefix('#')
            .ok_or_else(|| bad(format!("expected block header, got '{line}'")))?
            .split_whitespace()
            .collect();
        if header.len() != 3 {
            return Err(bad(format!("malformed header '{line}'")));
        }
        let rows: usize = header[1].parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = header[2].parse().map_err(|_| bad("bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines.next().ok_or_else(|| bad("truncated block"))??;
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number '{t}'"))))
                .collect::<Result<_, _>>()?;
            if vals.len() != cols {
                return Err(bad(format!("row has {} entries, expected {cols}", vals.len())));
            }
            data.extend(vals);
        }
        blocks.insert(header[0].to_string(), DMatrix::from_row_slice(rows, cols, &data));
    }
    let mut take = |name: &str| blocks.remove(name).ok_or_else(|| bad(format!("missing block {name}")));
    let mut got: Vec<DMatrix<f64>> = Vec::with_capacity(BLOCKS.len());
    for name in BLOCKS {
        got.push(take(name)?);
    }
    let vec = |m: &DMatrix<f64>| DVector::from_column_slice(m.as_slice());
    Ok(QpProblem {
        h: got[0].clone(),
        c: vec(&got[1]),
        m_mat: got[2].clone(),
        m_vec: vec(&got[3]),
        n_mat: got[4].clone(),
        n_vec: vec(&got[5]),
        x_lo: vec(&got[6]),
        x_hi: vec(&got[7]),
    })
}
