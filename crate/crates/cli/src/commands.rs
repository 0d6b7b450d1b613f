use std::io::Write;
use std::path::Path;

use cvi_core::cvi::{fit, random_marginals, FitTrace};
use cvi_core::grad::{elbo, fd_gradient, grad_reparam, path_objective, scaled_error, TargetModel};
use cvi_core::io::{config_hash, default_header, pseudo_observations, read_matrix_csv, FitMetadata, PosteriorFile};
use cvi_core::rng::uniforms;
use cvi_core::sampler::sample;
use cvi_core::select::{build_vine, parse_candidates, SelectOptions};
use cvi_core::{CopulaVariationalDist, PairCopula, Vine};
use serde::Serialize;

use crate::args::{CheckGradArgs, CheckTarget, Command, ElboArgs, FitArgs, SampleArgs, SelectArgs};
use crate::error::{CliError, CliResult};
use crate::files::{load_config, load_model, load_posterior, read_json, write_json};

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Fit(a) => fit_command(a),
        Command::Sample(a) => sample_command(a),
        Command::Select(a) => select_command(a),
        Command::Elbo(a) => elbo_command(a),
        Command::CheckGrad(a) => check_grad_command(a),
        Command::DemoFigure1(a) => crate::demo::run(a),
    }
}

fn read_samples(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let rows = read_matrix_csv(path).map_err(|e| CliError::Usage(e.to_string()))?;
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{}: no rows", path.display())));
    }
    Ok(rows)
}

fn truncation_level(requested: Option<usize>, d: usize) -> CliResult<usize> {
    let full = d.saturating_sub(1);
    match requested {
        Some(l) if l > full => Err(CliError::Usage(format!("truncation {l} exceeds the {full} trees of a {d}-dimensional vine"))),
        Some(l) => Ok(l),
        None => Ok(full),
    }
}

fn select_from_rows(rows: &[Vec<f64>], families: &str, truncation: Option<usize>, opts: &SelectOptions) -> CliResult<Vine> {
    let candidates = parse_candidates(families)?;
    let level = truncation_level(truncation, rows[0].len())?;
    Ok(build_vine(&pseudo_observations(rows), &candidates, level, opts)?)
}

fn initial_vine(a: &FitArgs, d: usize) -> CliResult<Vine> {
    match a.vine.as_str() {
        "independence" => Ok(Vine::independence(d)),
        "auto" => match &a.samples {
            Some(path) => {
                let rows = read_samples(path)?;
                if rows[0].len() != d {
                    return Err(CliError::Usage(format!(
                        "{} has {} columns but the model has dimension {d}",
                        path.display(),
                        rows[0].len()
                    )));
                }
                select_from_rows(&rows, &a.families, a.truncation, &SelectOptions::default())
            }
            None => {
                let level = truncation_level(a.truncation, d)?;
                if level == 0 {
                    return Ok(Vine::independence(d));
                }
                Ok(Vine::dvine(d, level, |_, _, _| PairCopula::gaussian(0.0).expect("zero correlation"))?)
            }
        },
        path => {
            let vine: Vine = read_json(Path::new(path))?;
            if vine.dim() != d {
                return Err(CliError::Usage(format!("{path}: vine has dimension {} but the model {d}", vine.dim())));
            }
            Ok(vine)
        }
    }
}

#[derive(Serialize)]
struct TraceRow<'a> {
    phase: usize,
    kind: &'a str,
    iters: usize,
    elbo_before: f64,
    elbo_after: f64,
    seconds: f64,
}

fn write_trace(path: &Path, trace: &FitTrace) -> CliResult<()> {
    let usage = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(usage)?;
    for p in &trace.phases {
        w.serialize(TraceRow {
            phase: p.phase,
            kind: p.kind.name(),
            iters: p.iters,
            elbo_before: p.elbo_before,
            elbo_after: p.elbo_after,
            seconds: p.seconds,
        })
        .map_err(usage)?;
    }
    w.flush().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn fit_command(a: FitArgs) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let model = load_model(&a.model)?;
    let d = model.dim();
    let vine = initial_vine(&a, d)?;
    let dist0 = CopulaVariationalDist::new(random_marginals(d, cfg.seed, 1.0), vine)?;
    let (dist, trace) = fit(&dist0, &model, &cfg)?;
    if let Some(path) = &a.trace {
        write_trace(path, &trace)?;
    }
    let hash = config_hash(&cfg)?;
    let meta = trace.phases.last().map(|last| FitMetadata {
        final_elbo: last.elbo_after,
        final_elbo_std_err: last.std_err_after,
        phases: trace.phases.len(),
        seed: cfg.seed,
        config_hash: hash,
    });
    PosteriorFile::new(&dist, meta).write(&a.out)?;
    match trace.phases.last() {
        Some(last) => println!(
            "{} phases{}, final ELBO {:.6} ± {:.6}",
            trace.phases.len(),
            if trace.converged { " (converged)" } else { "" },
            last.elbo_after,
            last.std_err_after
        ),
        None => println!("no phases run"),
    }
    Ok(())
}

fn csv_sink(out: Option<&Path>) -> CliResult<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(
            std::fs::File::create(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn sample_command(a: SampleArgs) -> CliResult<()> {
    let dist = load_posterior(&a.dist)?.dist()?;
    let d = dist.dim();
    let mut header = default_header(d, "z_");
    if a.with_uniforms {
        header.extend(default_header(d, "v_"));
    }
    let io_err = |e: csv::Error| CliError::Usage(e.to_string());
    let mut w = csv_sink(a.out.as_deref())?;
    w.write_record(&header).map_err(io_err)?;
    for s in 0..a.n {
        let path = sample(&dist, &uniforms(a.seed, s as u64, d))?;
        let mut row = path.z;
        if a.with_uniforms {
            row.extend(path.v);
        }
        w.write_record(row.iter().map(f64::to_string)).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::Usage(e.to_string()))
}

fn select_command(a: SelectArgs) -> CliResult<()> {
    let rows = read_samples(&a.samples)?;
    let opts = match &a.options {
        Some(path) => read_json(path)?,
        None => SelectOptions::default(),
    };
    let vine = select_from_rows(&rows, &a.families, a.truncation, &opts)?;
    write_json(&a.out, &vine)?;
    for e in vine.edges() {
        println!("{:<12} {:?}{} tau {:+.4}", e.label(), e.pc.family, rotation_suffix(&e.pc), e.pc.tau());
    }
    Ok(())
}

fn rotation_suffix(pc: &PairCopula) -> String {
    match pc.rotation.degrees() {
        0 => String::new(),
        deg => format!("{deg}"),
    }
}

fn elbo_command(a: ElboArgs) -> CliResult<()> {
    let dist = load_posterior(&a.dist)?.dist()?;
    let model = load_model(&a.model)?;
    let est = elbo(&dist, &model, a.m, a.seed)?;
    let out = serde_json::json!({
        "elbo": est.elbo,
        "std_err": est.elbo_std_err,
        "m": a.m,
        "seed": a.seed,
    });
    println!("{out}");
    Ok(())
}

struct CheckRow {
    estimator: &'static str,
    coordinate: String,
    analytic: f64,
    fd: f64,
}

fn model_rows(dist: &CopulaVariationalDist, model: &dyn TargetModel, seed: u64) -> CliResult<Vec<CheckRow>> {
    let z = sample(dist, &uniforms(seed, 0, dist.dim()))?.z;
    let analytic = model.grad_logp(&z)?;
    let fd = fd_gradient(|x| model.logp(x), &z)?;
    Ok(analytic
        .into_iter()
        .zip(fd)
        .enumerate()
        .map(|(i, (analytic, fd))| CheckRow {
            estimator: "model",
            coordinate: format!("z{i}"),
            analytic,
            fd,
        })
        .collect())
}

/// The reparameterized gradient against central differences of the
/// common-random-number path objective.
fn reparam_rows(dist: &CopulaVariationalDist, model: &dyn TargetModel, m: usize, seed: u64) -> CliResult<Vec<CheckRow>> {
    let est = grad_reparam(dist, model, m, seed)?;
    let (lambda, eta) = (dist.lambda(), dist.eta());
    let objective = |j: usize, delta: f64| -> CliResult<f64> {
        let mut moved = dist.clone();
        if j < lambda.len() {
            let mut l = lambda.clone();
            l[j] += delta;
            moved.set_lambda(&l)?;
        } else {
            let mut e = eta.clone();
            e[j - lambda.len()] += delta;
            moved.set_eta(&e)?;
        }
        Ok(path_objective(&moved, dist, model, m, seed)?)
    };
    let params: Vec<f64> = lambda.iter().chain(&eta).copied().collect();
    let analytic: Vec<f64> = est.grad_lambda.iter().chain(&est.grad_eta).copied().collect();
    let mut rows = Vec::with_capacity(params.len());
    for (j, (&x, &a)) in params.iter().zip(&analytic).enumerate() {
        let h = 1e-5 * (1.0 + x.abs());
        let fd = (objective(j, h)? - objective(j, -h)?) / (2.0 * h);
        let coordinate = if j < lambda.len() {
            format!("lambda{j}")
        } else {
            format!("eta{}", j - lambda.len())
        };
        rows.push(CheckRow {
            estimator: "reparam",
            coordinate,
            analytic: a,
            fd,
        });
    }
    Ok(rows)
}

fn check_grad_command(a: CheckGradArgs) -> CliResult<()> {
    if !(a.tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be positive, got {}", a.tol)));
    }
    let dist = load_posterior(&a.dist)?.dist()?;
    let model = load_model(&a.model)?;
    let mut rows = Vec::new();
    if matches!(a.check, CheckTarget::Model | CheckTarget::All) {
        rows.extend(model_rows(&dist, &*model, a.seed)?);
    }
    if matches!(a.check, CheckTarget::Reparam | CheckTarget::All) {
        rows.extend(reparam_rows(&dist, &*model, a.m, a.seed)?);
    }
    println!(
        "{:<10} {:<12} {:>16} {:>18} {:>10}",
        "estimator", "coordinate", "analytic", "finite-difference", "rel-error"
    );
    let mut worst = 0.0f64;
    for r in &rows {
        let err = scaled_error(r.analytic, r.fd);
        worst = worst.max(err);
        let flag = if err > a.tol { "  FAIL" } else { "" };
        println!(
            "{:<10} {:<12} {:>16.9e} {:>18.9e} {:>10.3e}{flag}",
            r.estimator, r.coordinate, r.analytic, r.fd, err
        );
    }
    if worst > a.tol {
        return Err(CliError::Failed(format!("largest relative error {worst:.3e} exceeds {}", a.tol)));
    }
    Ok(())
}
