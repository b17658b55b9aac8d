use std::fs;
use std::io::Write;
use std::path::Path;

use hardy_beta::colligation::{build_family, ColligationFamily, TransferFamily};
use hardy_beta::hereditary::{classify, OutputPair};
use hardy_beta::io::{
    char_family_json, family_json, kernel_grid_json, matrix_json, parse_inputs, parse_operator,
    parse_vector, transfer_json, write_kernel_csv, write_trajectory_csv, OperatorInput,
};
use hardy_beta::kernels::{default_grid, grid, KernelData, KernelKind};
use hardy_beta::model::{characteristic_family, default_order, Hypercontraction};
use hardy_beta::syssim::simulate;
use hardy_beta::verify::{run_criterion, SuiteConfig, CRITERIA};
use hardy_beta::{CMat, CVec, Error, Result, WeightSequence, WeightSpec};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{Cli, Command, Format, GlobalArgs, KindArg, OperatorArgs, WeightArgs};

const VERIFY_FAILED: u8 = 6;

#[derive(Serialize)]
struct RunConfig {
    tol: f64,
    rank_tol: f64,
    k_max: usize,
    trunc: usize,
    seed: u64,
    grid: String,
}

fn input_err(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

fn run_config(g: &GlobalArgs, grid: &str) -> Result<RunConfig> {
    if !(g.tol > 0.0 && g.tol.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "tol must be positive, got {}",
            g.tol
        )));
    }
    if !(g.rank_tol > 0.0 && g.rank_tol.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "rank-tol must be positive, got {}",
            g.rank_tol
        )));
    }
    if g.k_max == 0 || g.trunc == 0 {
        return Err(Error::InvalidParameter(
            "k-max and trunc must be positive".into(),
        ));
    }
    Ok(RunConfig {
        tol: g.tol,
        rank_tol: g.rank_tol,
        k_max: g.k_max,
        trunc: g.trunc,
        seed: g.seed,
        grid: grid.into(),
    })
}

pub fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::Weights { weight } => weights(g, weight),
        Command::Analyze { op, depth, weight } => analyze(g, op, *depth, weight),
        Command::Charfn { op, order, weight } => charfn(g, op, *order, weight),
        Command::Colligate { op, order, weight } => colligate(g, op, *order, weight),
        Command::Kernels {
            op,
            kind,
            k,
            grid,
            format,
            weight,
        } => kernels(g, op, *kind, *k, grid, *format, weight),
        Command::Simulate {
            op,
            steps,
            x0,
            inputs,
            format,
            weight,
        } => sim(
            g,
            op,
            *steps,
            x0.as_deref(),
            inputs.as_deref(),
            *format,
            weight,
        ),
        Command::Verify {
            suite,
            trials,
            timings,
        } => verify(g, suite, *trials, *timings),
    }
}

fn emit(g: &GlobalArgs, bytes: &[u8]) -> Result<()> {
    match &g.out {
        Some(p) => fs::write(p, bytes).map_err(|e| input_err(format!("{}: {e}", p.display()))),
        None => match std::io::stdout().write_all(bytes) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(input_err(e.to_string())),
            _ => Ok(()),
        },
    }
}

fn emit_json(g: &GlobalArgs, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| input_err(e.to_string()))?;
    s.push('\n');
    emit(g, s.as_bytes())
}

fn report(cfg: &RunConfig, w: &WeightSequence, body: Value) -> Value {
    let mut v = json!({ "config": cfg, "weight": w.spec() });
    if let (Some(obj), Value::Object(extra)) = (v.as_object_mut(), body) {
        obj.extend(extra);
    }
    v
}

fn weight_spec(g: &GlobalArgs, a: &WeightArgs, file: Option<&WeightSpec>) -> WeightSpec {
    if let Some(alpha) = a.alpha {
        return WeightSpec::BetaAlpha { alpha, n: g.trunc };
    }
    if let Some(b) = a.beta {
        return if b == 1.0 {
            WeightSpec::Hardy { n: g.trunc }
        } else {
            WeightSpec::BetaAlpha {
                alpha: b,
                n: g.trunc,
            }
        };
    }
    if let Some(betas) = &a.betas {
        if betas.iter().all(|&b| b == 1.0) {
            return WeightSpec::Hardy { n: g.trunc };
        }
        return WeightSpec::Custom {
            betas: betas.clone(),
        };
    }
    file.cloned().unwrap_or(WeightSpec::Hardy { n: g.trunc })
}

fn parse_scalar(s: &str) -> Result<Complex64> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |p: &str| {
        p.parse::<f64>()
            .map_err(|_| input_err(format!("cannot parse {p:?} as a number")))
    };
    match parts.as_slice() {
        [re] => Ok(Complex64::new(num(re)?, 0.0)),
        [re, im] => Ok(Complex64::new(num(re)?, num(im)?)),
        _ => Err(input_err(format!(
            "scalar must be `re` or `re,im`, got {s:?}"
        ))),
    }
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| input_err(format!("{}: {e}", p.display())))
}

fn load_operator(op: &OperatorArgs) -> Result<OperatorInput> {
    if let Some(t) = &op.t {
        let t = parse_scalar(t)?;
        return Ok(OperatorInput {
            t: Some(CMat::from_element(1, 1, t)),
            ..Default::default()
        });
    }
    let path = op
        .input
        .as_ref()
        .ok_or_else(|| input_err("an operator file or --t is required"))?;
    parse_operator(&read_text(path)?)
}

/// (C, A) from the file, or the defect pair (D, T*) when only T is given.
fn output_pair(cfg: &RunConfig, w: &WeightSequence, op: &OperatorInput) -> Result<OutputPair> {
    if op.a.is_some() {
        return op.pair();
    }
    let t =
        op.t.as_ref()
            .ok_or_else(|| input_err("operator file needs \"A\" or \"T\""))?;
    Hypercontraction::new(w, t, cfg.rank_tol, cfg.tol)?.pair()
}

fn resolve(
    g: &GlobalArgs,
    op: &OperatorArgs,
    weight: &WeightArgs,
    grid: &str,
) -> Result<(RunConfig, WeightSequence, OperatorInput)> {
    let cfg = run_config(g, grid)?;
    let input = load_operator(op)?;
    let w = weight_spec(g, weight, input.weight.as_ref()).build()?;
    Ok((cfg, w, input))
}

fn worst_residual(f: &ColligationFamily) -> f64 {
    f.residuals()
        .iter()
        .map(|r| r.isometry.max(r.coisometry))
        .fold(0.0, f64::max)
}

fn weights(g: &GlobalArgs, a: &WeightArgs) -> Result<u8> {
    let cfg = run_config(g, "default")?;
    let w = weight_spec(g, a, None).build()?;
    let n = w.trunc_len();
    let wiener = if n >= 8 {
        serde_json::to_value(w.wiener_report(n)?).map_err(|e| input_err(e.to_string()))?
    } else {
        Value::Null
    };
    let body = json!({
        "kind": w.kind(),
        "ratio_bound": w.ratio_bound(),
        "betas": w.betas(),
        "c": w.c_coeffs(),
        "wiener": wiener,
    });
    emit_json(g, &report(&cfg, &w, body))?;
    Ok(0)
}

fn analyze(g: &GlobalArgs, op: &OperatorArgs, depth: usize, weight: &WeightArgs) -> Result<u8> {
    let (cfg, w, input) = resolve(g, op, weight, "default")?;
    let pair = output_pair(&cfg, &w, &input)?;
    let rep = classify(&w, &pair, depth.max(cfg.k_max), cfg.tol)?;
    let body = json!({
        "n": pair.n(),
        "p": pair.p(),
        "spectral_radius": pair.spectral_radius(),
        "classification": rep,
    });
    emit_json(g, &report(&cfg, &w, body))?;
    Ok(0)
}

fn charfn(
    g: &GlobalArgs,
    op: &OperatorArgs,
    order: Option<usize>,
    weight: &WeightArgs,
) -> Result<u8> {
    let (cfg, w, input) = resolve(g, op, weight, "default")?;
    let t = input
        .t
        .as_ref()
        .ok_or_else(|| input_err("charfn needs \"T\" in the operator file or --t"))?;
    let cf = characteristic_family(&w, t, cfg.k_max, cfg.rank_tol, cfg.tol)?;
    let order = order.unwrap_or_else(|| default_order(cf.family()));
    let worst = worst_residual(cf.family());
    let mut body = char_family_json(&cf, order);
    if let Some(obj) = body.as_object_mut() {
        obj.insert("order".into(), json!(order));
        obj.insert("max_residual".into(), json!(worst));
    }
    emit_json(g, &report(&cfg, &w, body))?;
    Ok(if worst > cfg.tol { VERIFY_FAILED } else { 0 })
}

fn colligate(
    g: &GlobalArgs,
    op: &OperatorArgs,
    order: Option<usize>,
    weight: &WeightArgs,
) -> Result<u8> {
    let (cfg, w, input) = resolve(g, op, weight, "default")?;
    let pair = output_pair(&cfg, &w, &input)?;
    let fam = build_family(&w, &pair, cfg.k_max, cfg.rank_tol, cfg.tol * 1e-4)?;
    let worst = worst_residual(&fam);
    let mut body = family_json(&fam);
    if let Some(obj) = body.as_object_mut() {
        obj.insert("max_residual".into(), json!(worst));
        if let Some(order) = order {
            let tf = TransferFamily::new(&fam, order)?;
            obj.insert("order".into(), json!(order));
            obj.insert("taylor".into(), transfer_json(&tf, order));
        }
    }
    emit_json(g, &report(&cfg, &w, body))?;
    Ok(if worst > cfg.tol { VERIFY_FAILED } else { 0 })
}

fn parse_grid(spec: &str) -> Result<Vec<Complex64>> {
    if spec == "default" {
        return Ok(default_grid());
    }
    let (radii, angles) = spec.split_once('x').ok_or_else(|| {
        input_err(format!(
            "grid must be `default` or `r1,r2,...x<angles>`, got {spec:?}"
        ))
    })?;
    let radii: Vec<f64> = radii
        .split(',')
        .map(|r| {
            r.trim()
                .parse::<f64>()
                .map_err(|_| input_err(format!("bad radius {r:?}")))
        })
        .collect::<Result<_>>()?;
    let angles: usize = angles
        .trim()
        .parse()
        .map_err(|_| input_err(format!("bad angle count {angles:?}")))?;
    if radii.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(Error::InvalidParameter(
            "grid radii must lie in [0, 1)".into(),
        ));
    }
    if angles == 0 {
        return Err(Error::InvalidParameter(
            "grid needs at least one angle".into(),
        ));
    }
    Ok(grid(&radii, angles))
}

fn kernels(
    g: &GlobalArgs,
    op: &OperatorArgs,
    kind: KindArg,
    k: usize,
    grid_spec: &str,
    format: Format,
    weight: &WeightArgs,
) -> Result<u8> {
    let (cfg, w, input) = resolve(g, op, weight, grid_spec)?;
    let pair = output_pair(&cfg, &w, &input)?;
    let points = parse_grid(grid_spec)?;
    let kind = match kind {
        KindArg::Beta => KernelKind::Beta,
        KindArg::Mperp => KernelKind::Mperp,
        KindArg::M => KernelKind::M,
        KindArg::Skm => KernelKind::Skm,
        KindArg::Gap => KernelKind::Gap,
    };
    let data = KernelData::new(
        &w,
        &pair,
        cfg.k_max.max(k + 1),
        cfg.rank_tol,
        cfg.tol * 1e-4,
    )?;
    let kg = data.grid(kind, k, &points)?;
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_kernel_csv(&kg, &mut buf)?;
            emit(g, &buf)?;
        }
        Format::Json => {
            let body = json!({
                "kind": kind,
                "k": k,
                "hermitian_defect": kg.hermitian_defect(),
                "values": kernel_grid_json(&kg),
            });
            emit_json(g, &report(&cfg, &w, body))?;
        }
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn sim(
    g: &GlobalArgs,
    op: &OperatorArgs,
    steps: usize,
    x0: Option<&str>,
    inputs: Option<&Path>,
    format: Format,
    weight: &WeightArgs,
) -> Result<u8> {
    let (cfg, w, input) = resolve(g, op, weight, "default")?;
    let pair = output_pair(&cfg, &w, &input)?;
    let fam = build_family(
        &w,
        &pair,
        cfg.k_max.max(steps),
        cfg.rank_tol,
        cfg.tol * 1e-4,
    )?;
    let x0 = match x0 {
        Some(s) => {
            let v: Value = serde_json::from_str(s).map_err(|e| input_err(format!("x0: {e}")))?;
            parse_vector(&v)?
        }
        None => {
            let mut e = CVec::zeros(pair.n());
            if pair.n() > 0 {
                e[0] = Complex64::new(1.0, 0.0);
            }
            e
        }
    };
    let us = match inputs {
        Some(p) => {
            let v: Value = serde_json::from_str(&read_text(p)?)
                .map_err(|e| input_err(format!("{}: {e}", p.display())))?;
            parse_inputs(&v)?
        }
        None => (0..steps)
            .map(|j| fam.step(j).map(|s| CVec::zeros(s.u())))
            .collect::<Result<_>>()?,
    };
    let traj = simulate(&fam, &x0, &us, steps)?;
    let residual = traj.closed_form_residual(&fam)?;
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_trajectory_csv(&traj, &mut buf)?;
            emit(g, &buf)?;
        }
        Format::Json => {
            let vecs =
                |v: &[CVec]| Value::Array(v.iter().map(hardy_beta::io::vector_json).collect());
            let body = json!({
                "steps": steps,
                "closed_form_residual": residual,
                "states": vecs(&traj.states),
                "outputs": vecs(&traj.outputs),
                "inputs": vecs(&traj.inputs),
                "A": matrix_json(pair.a()),
                "C": matrix_json(pair.c()),
            });
            emit_json(g, &report(&cfg, &w, body))?;
        }
    }
    Ok(if residual > cfg.tol { VERIFY_FAILED } else { 0 })
}

fn parse_suite(s: &str) -> Result<Vec<usize>> {
    if s == "all" {
        return Ok((1..=CRITERIA).collect());
    }
    s.split(',')
        .map(|p| {
            let id: usize = p
                .trim()
                .parse()
                .map_err(|_| input_err(format!("bad criterion {p:?}")))?;
            if id == 0 || id > CRITERIA {
                return Err(input_err(format!(
                    "criteria are numbered 1..={CRITERIA}, got {id}"
                )));
            }
            Ok(id)
        })
        .collect()
}

fn verify(g: &GlobalArgs, suite: &str, trials: Option<usize>, timings: bool) -> Result<u8> {
    let cfg = run_config(g, "default")?;
    let ids = parse_suite(suite)?;
    let mut scfg = SuiteConfig {
        seed: g.seed,
        ..Default::default()
    };
    if let Some(t) = trials {
        if t == 0 {
            return Err(Error::InvalidParameter("trials must be positive".into()));
        }
        scfg.trials = t;
    }
    let mut results = Vec::new();
    let mut failed = 0;
    for id in ids {
        let r = run_criterion(id, &scfg);
        eprintln!(
            "{} [{:2}] {}{}",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.name,
            r.error
                .as_deref()
                .map(|e| format!(" ({e})"))
                .unwrap_or_default()
        );
        if !r.passed {
            failed += 1;
        }
        let mut v = serde_json::to_value(&r).map_err(|e| input_err(e.to_string()))?;
        if !timings {
            if let Some(obj) = v.as_object_mut() {
                obj.remove("seconds");
                if let Some(Value::Object(m)) = obj.get_mut("metrics") {
                    m.remove("seconds");
                }
            }
        }
        results.push(v);
    }
    let out = json!({
        "config": cfg,
        "trials": scfg.trials,
        "passed": results.len() - failed,
        "total": results.len(),
        "results": results,
    });
    emit_json(g, &out)?;
    Ok(if failed > 0 { VERIFY_FAILED } else { 0 })
}
