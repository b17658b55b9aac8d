//! JSON and CSV formats for operators, families, kernel grids and trajectories.
//!
//! Matrices are written as nested rows of `[re, im]` pairs. On input a matrix may
//! also be a flat row-major list of pairs (or of real numbers); the shape is then
//! inferred from the other operands.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::colligation::{ColligationFamily, ColligationStep, TransferFamily};
use crate::error::{Error, Result};
use crate::hereditary::{GramianTable, OutputPair};
use crate::kernels::KernelGrid;
use crate::linalg::{CMat, CVec};
use crate::model::CharFamily;
use crate::syssim::Trajectory;
use crate::weights::{WeightSequence, WeightSpec};

fn bad(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

fn entry(v: &Value) -> Result<Complex64> {
    match v {
        Value::Number(x) => Ok(Complex64::new(
            x.as_f64().ok_or_else(|| bad("bad number"))?,
            0.0,
        )),
        Value::Array(p) if p.len() == 2 => {
            let re = p[0].as_f64().ok_or_else(|| bad("bad real part"))?;
            let im = p[1].as_f64().ok_or_else(|| bad("bad imaginary part"))?;
            Ok(Complex64::new(re, im))
        }
        _ => Err(bad(format!(
            "matrix entry must be a number or [re, im], got {v}"
        ))),
    }
}

fn is_pair(v: &Value) -> bool {
    matches!(v, Value::Array(p) if p.len() == 2 && p.iter().all(Value::is_number))
}

/// Parse a matrix; `cols` is the column count to use for the flat layout.
pub fn parse_matrix(v: &Value, cols: Option<usize>) -> Result<CMat> {
    let items = v.as_array().ok_or_else(|| bad("matrix must be an array"))?;
    if items.is_empty() {
        return Ok(CMat::zeros(0, cols.unwrap_or(0)));
    }
    let nested = items
        .iter()
        .all(|r| matches!(r, Value::Array(row) if row.iter().all(is_pair) && !row.is_empty()))
        && !items.iter().all(is_pair);
    if nested {
        let rows: Vec<Vec<Complex64>> = items
            .iter()
            .map(|r| r.as_array().unwrap().iter().map(entry).collect())
            .collect::<Result<_>>()?;
        let c = rows[0].len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(bad("ragged matrix rows"));
        }
        return Ok(CMat::from_fn(rows.len(), c, |i, j| rows[i][j]));
    }
    let flat: Vec<Complex64> = items.iter().map(entry).collect::<Result<_>>()?;
    let len = flat.len();
    let c = match cols {
        Some(c) => c,
        None => {
            let s = (len as f64).sqrt().round() as usize;
            if s * s != len {
                return Err(bad(format!("flat matrix of {len} entries is not square")));
            }
            s
        }
    };
    if c == 0 || !len.is_multiple_of(c) {
        return Err(bad(format!("{len} entries do not fill rows of {c}")));
    }
    Ok(CMat::from_fn(len / c, c, |i, j| flat[i * c + j]))
}

pub fn matrix_json(m: &CMat) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| {
                Value::Array(
                    (0..m.ncols())
                        .map(|j| json!([m[(i, j)].re, m[(i, j)].im]))
                        .collect(),
                )
            })
            .collect(),
    )
}

pub fn vector_json(v: &CVec) -> Value {
    Value::Array(v.iter().map(|z| json!([z.re, z.im])).collect())
}

pub fn parse_vector(v: &Value) -> Result<CVec> {
    let items = v.as_array().ok_or_else(|| bad("vector must be an array"))?;
    let e: Vec<Complex64> = items.iter().map(entry).collect::<Result<_>>()?;
    Ok(CVec::from_vec(e))
}

/// Ragged per-step inputs: `[[u_0 entries], [u_1 entries], ...]`.
pub fn parse_inputs(v: &Value) -> Result<Vec<CVec>> {
    v.as_array()
        .ok_or_else(|| bad("inputs must be an array of vectors"))?
        .iter()
        .map(parse_vector)
        .collect()
}

/// Contents of an operator file: any of A, C, T plus an optional weight descriptor.
#[derive(Clone, Debug, Default)]
pub struct OperatorInput {
    pub a: Option<CMat>,
    pub c: Option<CMat>,
    pub t: Option<CMat>,
    pub weight: Option<WeightSpec>,
}

impl OperatorInput {
    pub fn pair(&self) -> Result<OutputPair> {
        let a = self
            .a
            .clone()
            .ok_or_else(|| bad("operator file has no \"A\""))?;
        let c = self
            .c
            .clone()
            .ok_or_else(|| bad("operator file has no \"C\""))?;
        OutputPair::new(a, c)
    }
}

pub fn parse_operator(text: &str) -> Result<OperatorInput> {
    let v: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| bad("operator file must be a JSON object"))?;
    let a = obj.get("A").map(|x| parse_matrix(x, None)).transpose()?;
    let n = a.as_ref().map(|m| m.ncols());
    let c = obj.get("C").map(|x| parse_matrix(x, n)).transpose()?;
    let t = obj.get("T").map(|x| parse_matrix(x, None)).transpose()?;
    let weight = obj
        .get("weight")
        .map(|x| serde_json::from_value(x.clone()).map_err(|e| bad(e.to_string())))
        .transpose()?;
    if a.is_none() && t.is_none() {
        return Err(bad("operator file needs \"A\" or \"T\""));
    }
    Ok(OperatorInput { a, c, t, weight })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StepJson {
    k: usize,
    u: usize,
    b: Value,
    d: Value,
    isometry: f64,
    coisometry: f64,
}

pub fn family_json(f: &ColligationFamily) -> Value {
    let steps: Vec<Value> = f
        .steps()
        .iter()
        .zip(f.residuals())
        .enumerate()
        .map(|(k, (s, r))| {
            serde_json::to_value(StepJson {
                k,
                u: s.u(),
                b: matrix_json(&s.b),
                d: matrix_json(&s.d),
                isometry: r.isometry,
                coisometry: r.coisometry,
            })
            .expect("serializable")
        })
        .collect();
    json!({
        "weight": f.weight().spec(),
        "A": matrix_json(f.pair().a()),
        "C": matrix_json(f.pair().c()),
        "tol": f.tol(),
        "steps": steps,
    })
}

/// Rebuild a family from its JSON form; gramians are recomputed at the stored tolerance.
pub fn family_from_json(v: &Value, rank_tol: f64) -> Result<ColligationFamily> {
    let spec: WeightSpec =
        serde_json::from_value(v["weight"].clone()).map_err(|e| bad(e.to_string()))?;
    let w = spec.build()?;
    let a = parse_matrix(&v["A"], None)?;
    let c = parse_matrix(&v["C"], Some(a.ncols()))?;
    let tol = v["tol"].as_f64().ok_or_else(|| bad("missing tol"))?;
    let steps_v = v["steps"].as_array().ok_or_else(|| bad("missing steps"))?;
    let n = a.nrows();
    let p = c.nrows();
    let steps: Vec<ColligationStep> = steps_v
        .iter()
        .map(|s| {
            let u = s["u"].as_u64().ok_or_else(|| bad("missing u"))? as usize;
            let b = if u == 0 {
                CMat::zeros(n, 0)
            } else {
                parse_matrix(&s["b"], Some(u))?
            };
            let d = if u == 0 {
                CMat::zeros(p, 0)
            } else {
                parse_matrix(&s["d"], Some(u))?
            };
            Ok(ColligationStep { b, d })
        })
        .collect::<Result<_>>()?;
    let pair = OutputPair::new(a, c)?;
    let g = GramianTable::build(&w, &pair, steps.len(), tol)?;
    ColligationFamily::from_parts(&w, pair, g, steps, rank_tol, tol)
}

pub fn transfer_json(t: &TransferFamily, order: usize) -> Value {
    Value::Array(
        (0..=t.k_max())
            .map(|k| {
                Value::Array(
                    t.coeffs(k)
                        .iter()
                        .take(order + 1)
                        .map(matrix_json)
                        .collect(),
                )
            })
            .collect(),
    )
}

pub fn char_family_json(cf: &CharFamily, order: usize) -> Value {
    let mut v = family_json(cf.family());
    let obj = v.as_object_mut().expect("object");
    obj.insert("T".into(), matrix_json(cf.hyper().t()));
    obj.insert("D".into(), matrix_json(cf.defect()));
    obj.insert("identity_defect".into(), json!(cf.identity_defect()));
    obj.insert(
        "strong_stability_residual".into(),
        json!(cf.hyper().strong_stability_residual()),
    );
    obj.insert("taylor".into(), transfer_json(cf.transfer(), order));
    v
}

pub fn weight_from_value(v: &Value) -> Result<WeightSequence> {
    let spec: WeightSpec = serde_json::from_value(v.clone()).map_err(|e| bad(e.to_string()))?;
    spec.build()
}

fn csv_err(e: csv::Error) -> Error {
    bad(e.to_string())
}

/// z_re, z_im, zeta_re, zeta_im, then k{r}{c}_re, k{r}{c}_im row-major.
pub fn write_kernel_csv<W: Write>(grid: &KernelGrid, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    let p = grid.values.first().map(|m| m.nrows()).unwrap_or(0);
    let mut header = vec![
        "z_re".to_string(),
        "z_im".into(),
        "zeta_re".into(),
        "zeta_im".into(),
    ];
    for r in 0..p {
        for c in 0..p {
            header.push(format!("k{r}{c}_re"));
            header.push(format!("k{r}{c}_im"));
        }
    }
    wr.write_record(&header).map_err(csv_err)?;
    let m = grid.points.len();
    for i in 0..m {
        for j in 0..m {
            let (z, w) = (grid.points[i], grid.points[j]);
            let k = grid.at(i, j);
            let mut rec = vec![z.re, z.im, w.re, w.im];
            for r in 0..p {
                for c in 0..p {
                    rec.push(k[(r, c)].re);
                    rec.push(k[(r, c)].im);
                }
            }
            wr.write_record(rec.iter().map(|x| format!("{x:e}")))
                .map_err(csv_err)?;
        }
    }
    wr.flush().map_err(|e| bad(e.to_string()))
}

pub fn kernel_grid_json(grid: &KernelGrid) -> Value {
    let m = grid.points.len();
    let entries: Vec<Value> = (0..m * m)
        .map(|idx| {
            let (i, j) = (idx / m, idx % m);
            json!({
                "z": [grid.points[i].re, grid.points[i].im],
                "zeta": [grid.points[j].re, grid.points[j].im],
                "value": matrix_json(grid.at(i, j)),
            })
        })
        .collect();
    Value::Array(entries)
}

/// step, x{i}_re, x{i}_im, y{i}_re, y{i}_im; the final state row has empty outputs.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    let n = traj.states.first().map(|x| x.len()).unwrap_or(0);
    let p = traj.outputs.first().map(|y| y.len()).unwrap_or(0);
    let mut header = vec!["step".to_string()];
    for i in 0..n {
        header.push(format!("x{i}_re"));
        header.push(format!("x{i}_im"));
    }
    for i in 0..p {
        header.push(format!("y{i}_re"));
        header.push(format!("y{i}_im"));
    }
    wr.write_record(&header).map_err(csv_err)?;
    for (j, x) in traj.states.iter().enumerate() {
        let mut rec = vec![j.to_string()];
        for z in x.iter() {
            rec.push(format!("{:e}", z.re));
            rec.push(format!("{:e}", z.im));
        }
        match traj.outputs.get(j) {
            Some(y) => {
                for z in y.iter() {
                    rec.push(format!("{:e}", z.re));
                    rec.push(format!("{:e}", z.im));
                }
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 2 * p)),
        }
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush().map_err(|e| bad(e.to_string()))
}
