use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cvi_core::io::{read_matrix_csv, PosteriorFile};
use cvi_core::marginal::{Marginal, MarginalSet};
use cvi_core::{CopulaVariationalDist, PairCopula, Rotation, Vine, VineEdge};

fn cvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvi"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_posterior(dir: &Path, name: &str, dist: &CopulaVariationalDist) -> PathBuf {
    let path = dir.join(name);
    PosteriorFile::new(dist, None).write(&path).unwrap();
    path
}

fn independence_posterior(d: usize) -> CopulaVariationalDist {
    let marginals = (0..d).map(|i| Marginal::gaussian(i as f64, 0.5 + 0.1 * i as f64)).collect();
    CopulaVariationalDist::mean_field(MarginalSet::new(marginals).unwrap())
}

fn clayton_posterior() -> CopulaVariationalDist {
    let vine = Vine::new(
        3,
        vec![
            vec![
                VineEdge::new(0, 1, vec![], PairCopula::clayton(3.0, Rotation::R0).unwrap()),
                VineEdge::new(1, 2, vec![], PairCopula::gaussian(-0.7).unwrap()),
            ],
            vec![VineEdge::new(0, 2, vec![1], PairCopula::independence())],
        ],
    )
    .unwrap();
    CopulaVariationalDist::new(MarginalSet::standard_normal(3), vine).unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("cfg.json");
    std::fs::write(
        &path,
        r#"{"m": 128, "m_eval": 4000, "inner_max_iters": 150, "outer_max_phases": 2, "seed": 5}"#,
    )
    .unwrap();
    path
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(cvi(&[]).status.code(), Some(2));
    assert_eq!(cvi(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cvi(&["sample", "--n", "3"]).status.code(), Some(2));
    assert_eq!(cvi(&["--help"]).status.code(), Some(0));
    let missing = cvi(&["sample", "--dist", "/nonexistent/post.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out_path = dir.path().join("post.json");
    for (text, field) in [
        (r#"{"m": "many"}"#, "m"),
        (r#"{"step_rule": {"rule": "adam", "alpha": 0.1, "beta1": 0.9, "beta2": 0.99, "epsilon": 1}}"#, "step_rule"),
        (r#"{"inner_tol": 1e-3, "outer_tol": 1}"#, "outer_tol"),
    ] {
        std::fs::write(&cfg, text).unwrap();
        let out = cvi(&["fit", "--model", "figure1", "--config", arg(&cfg), "--out", arg(&out_path)]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        assert!(stderr(&out).contains(field), "{text}: {}", stderr(&out));
    }
    // well-formed but out of range
    std::fs::write(&cfg, r#"{"grad_smoothing": 1.5}"#).unwrap();
    let out = cvi(&["fit", "--model", "figure1", "--config", arg(&cfg), "--out", arg(&out_path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("grad_smoothing"));
    assert!(!out_path.exists());
}

#[test]
fn sample_has_the_requested_shape() {
    let dir = tempfile::tempdir().unwrap();
    let post = write_posterior(dir.path(), "ind.json", &independence_posterior(4));
    let out = cvi(&["sample", "--dist", arg(&post), "-n", "3", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "z_0,z_1,z_2,z_3");
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        let row: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(row.len(), 4);
        assert!(row.iter().all(|x| x.is_finite()));
    }
    assert_eq!(stdout(&cvi(&["sample", "--dist", arg(&post), "-n", "3", "--seed", "1"])), text);
    assert_ne!(stdout(&cvi(&["sample", "--dist", arg(&post), "-n", "3", "--seed", "2"])), text);
}

#[test]
fn sample_with_uniforms_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let post = write_posterior(dir.path(), "c.json", &clayton_posterior());
    let csv = dir.path().join("s.csv");
    let out = cvi(&["sample", "--dist", arg(&post), "-n", "50", "--with-uniforms", "--out", arg(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let header = std::fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "z_0,z_1,z_2,v_0,v_1,v_2");
    let rows = read_matrix_csv(&csv).unwrap();
    assert_eq!(rows.len(), 50);
    for r in &rows {
        // standard normal marginals: z is the normal quantile of v
        for i in 0..3 {
            assert!((r[i] - cvi_core::special::norm_ppf(r[3 + i])).abs() < 1e-9);
        }
    }
}

#[test]
fn elbo_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let post = write_posterior(dir.path(), "post.json", &independence_posterior(2));
    let model = dir.path().join("gauss.json");
    std::fs::write(&model, r#"{"kind":"gaussian","mean":[0,1],"cov":[[1,0.3],[0.3,0.5]]}"#).unwrap();
    let args = ["elbo", "--dist", arg(&post), "--model", arg(&model), "-m", "100000", "--seed", "7"];
    let (a, b) = (cvi(&args), cvi(&args));
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    let v: serde_json::Value = serde_json::from_str(stdout(&a).trim()).unwrap();
    assert!(v["elbo"].as_f64().unwrap() < 0.0);
    assert!(v["std_err"].as_f64().unwrap() > 0.0);
    // the model dimension must match the posterior
    let wrong = cvi(&["elbo", "--dist", arg(&post), "--model", "figure1", "-m", "10"]);
    assert_eq!(wrong.status.code(), Some(0));
    let three = write_posterior(dir.path(), "three.json", &independence_posterior(3));
    let wrong = cvi(&["elbo", "--dist", arg(&three), "--model", "figure1", "-m", "10"]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn elbo_on_a_mixture_spec() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x.csv"), "x\n-2.0\n-1.7\n2.1\n1.8\n2.3\n").unwrap();
    let model = dir.path().join("mix.json");
    std::fs::write(&model, r#"{"kind":"mixture","data_csv":"x.csv","K":2,"alpha":1.0}"#).unwrap();
    let post = write_posterior(dir.path(), "post.json", &independence_posterior(5));
    let out = cvi(&["elbo", "--dist", arg(&post), "--model", arg(&model), "-m", "2000"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    std::fs::write(&model, r#"{"kind":"mixture","data_csv":"x.csv","K":2,"nw":{"beta":1}}"#).unwrap();
    let out = cvi(&["elbo", "--dist", arg(&post), "--model", arg(&model), "-m", "2000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`beta`"), "{}", stderr(&out));
}

#[test]
fn fit_writes_posterior_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (post, trace) = (dir.path().join("post.json"), dir.path().join("trace.csv"));
    let args = ["fit", "--model", "figure1", "--vine", "auto", "--config", arg(&cfg), "--out", arg(&post), "--trace", arg(&trace)];
    let out = cvi(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let file = PosteriorFile::read(&post).unwrap();
    let meta = file.fit.clone().unwrap();
    assert_eq!(meta.phases, 2);
    assert_eq!(meta.seed, 5);
    assert_eq!(meta.config_hash.len(), 64);
    assert_eq!(file.vine.n_edges(), 1);
    assert!(file.vine.edge(0).pc.tau() > 0.2);

    let text = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "phase,kind,iters,elbo_before,elbo_after,seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,lambda,"));
    assert!(lines[2].starts_with("1,eta,"));
    let last: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(last[4].parse::<f64>().unwrap(), meta.final_elbo);

    // same seed, same posterior; the written file reads back equal
    let again = dir.path().join("again.json");
    let mut args2 = args.to_vec();
    args2[8] = arg(&again);
    assert_eq!(cvi(&args2[..9]).status.code(), Some(0));
    assert_eq!(std::fs::read(&post).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(PosteriorFile::from_json(&file.to_json().unwrap()).unwrap(), file);

    let seeded = dir.path().join("seeded.json");
    assert_eq!(
        cvi(&["fit", "--model", "figure1", "--config", arg(&cfg), "--seed", "6", "--out", arg(&seeded)]).status.code(),
        Some(0)
    );
    assert_ne!(PosteriorFile::read(&seeded).unwrap().marginals, file.marginals);
}

#[test]
fn fit_accepts_vine_files_and_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let post = dir.path().join("post.json");
    let vine_path = dir.path().join("vine.json");
    std::fs::write(&vine_path, serde_json::to_string(&clayton_posterior().vine).unwrap()).unwrap();
    let out = cvi(&["fit", "--model", "figure1", "--vine", arg(&vine_path), "--config", arg(&cfg), "--out", arg(&post)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dimension"));

    let pair = Vine::new(2, vec![vec![VineEdge::new(0, 1, vec![], PairCopula::gumbel(1.5, Rotation::R0).unwrap())]]).unwrap();
    std::fs::write(&vine_path, serde_json::to_string(&pair).unwrap()).unwrap();
    let out = cvi(&["fit", "--model", "figure1", "--vine", arg(&vine_path), "--config", arg(&cfg), "--out", arg(&post)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let fitted = PosteriorFile::read(&post).unwrap();
    assert_eq!(fitted.vine.edge(0).pc.family, pair.edge(0).pc.family);

    let out = cvi(&["fit", "--model", "figure1", "--vine", "independence", "--config", arg(&cfg), "--out", arg(&post)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(PosteriorFile::read(&post).unwrap().vine.is_independence());

    std::fs::write(&vine_path, r#"{"d": 2, "truncation": 1, "trees": [[{"i": 0, "k": 5}]]}"#).unwrap();
    let out = cvi(&["fit", "--model", "figure1", "--vine", arg(&vine_path), "--out", arg(&post)]);
    assert_eq!(out.status.code(), Some(2));

    let out = cvi(&["fit", "--model", "no-such-model", "--out", arg(&post)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn select_recovers_a_structure_from_samples() {
    let dir = tempfile::tempdir().unwrap();
    let post = write_posterior(dir.path(), "c.json", &clayton_posterior());
    let samples = dir.path().join("s.csv");
    assert_eq!(
        cvi(&["sample", "--dist", arg(&post), "-n", "3000", "--seed", "3", "--out", arg(&samples)]).status.code(),
        Some(0)
    );
    let vine_path = dir.path().join("vine.json");
    let out = cvi(&["select", "--samples", arg(&samples), "--families", "all16", "--out", arg(&vine_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let vine: Vine = serde_json::from_str(&std::fs::read_to_string(&vine_path).unwrap()).unwrap();
    assert_eq!(vine.dim(), 3);
    assert!(vine.find_edge(0, 1).is_some_and(|id| vine.level(id) == 1));
    assert!(vine.find_edge(1, 2).is_some_and(|id| vine.level(id) == 1));
    let e01 = vine.edge(vine.find_edge(0, 1).unwrap());
    assert_eq!(e01.pc.family, cvi_core::Family::Clayton);

    let out = cvi(&["select", "--samples", arg(&samples), "--families", "gaussian", "--truncation", "1", "--out", arg(&vine_path)]);
    assert_eq!(out.status.code(), Some(0));
    let vine: Vine = serde_json::from_str(&std::fs::read_to_string(&vine_path).unwrap()).unwrap();
    assert_eq!(vine.truncation(), 1);

    let out = cvi(&["select", "--samples", arg(&samples), "--families", "gaussian,bogus", "--out", arg(&vine_path)]);
    assert_eq!(out.status.code(), Some(2));
    let out = cvi(&["select", "--samples", arg(&samples), "--truncation", "7", "--out", arg(&vine_path)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_grad_reports_and_fails_over_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let marginals = MarginalSet::new(vec![Marginal::gaussian(0.2, 0.7), Marginal::gaussian(-0.1, 0.9)]).unwrap();
    let vine = Vine::new(2, vec![vec![VineEdge::new(0, 1, vec![], PairCopula::frank(3.0).unwrap())]]).unwrap();
    let post = write_posterior(dir.path(), "p.json", &CopulaVariationalDist::new(marginals, vine).unwrap());
    let out = cvi(&["check-grad", "--dist", arg(&post), "--model", "figure1", "-m", "512"]);
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(text.lines().next().unwrap().contains("finite-difference"));
    // 2 model coordinates, 4 marginal parameters and one copula parameter
    assert_eq!(text.lines().count(), 1 + 2 + 4 + 1);
    assert!(text.contains("reparam") && text.contains("eta0"));

    let out = cvi(&["check-grad", "--dist", arg(&post), "--model", "figure1", "--check", "reparam", "-m", "64", "--tol", "1e-300"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn demo_figure1_panels_approach_the_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvi(&["demo-figure1", "--out-dir", arg(dir.path()), "--grid", "61"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let (n, range) = (61usize, 4.0f64);
    let step = 2.0 * range / (n - 1) as f64;
    let mut kls = Vec::new();
    for k in 1..=4 {
        let path = dir.path().join(format!("panel{k}.csv"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("z1,z2,q_density,p_density\n"));
        let rows = read_matrix_csv(&path).unwrap();
        assert_eq!(rows.len(), n * n);
        // quadrature KL(q || p) from the written grid
        let kl: f64 = rows
            .iter()
            .filter(|r| r[2] > 0.0)
            .map(|r| r[2] * (r[2] / r[3]).ln() * step * step)
            .sum();
        kls.push(kl);
        let q = |i: usize, j: usize| rows[i * n + j][2];
        let (a, b, c, e) = (20, 30, 35, 41);
        let cross = q(a, b) * q(c, e) / (q(a, e) * q(c, b));
        if k == 1 {
            // axis-aligned: the grid factorizes
            assert!((cross - 1.0).abs() < 1e-9, "{cross}");
        } else {
            assert!(cross > 1.05, "panel {k}: {cross}");
        }
    }
    assert!(kls.windows(2).all(|w| w[1] < w[0]), "{kls:?}");

    let summary = read_matrix_csv(&dir.path().join("kl.csv"));
    // the kind column is text, so the numeric reader rejects the table
    assert!(summary.is_err());
    let text = std::fs::read_to_string(dir.path().join("kl.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "panel,kind,kl,elbo,sigma1,sigma2,tau");
    for (line, kl) in lines[1..].iter().zip(&kls) {
        let written: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((written - kl).abs() < 1e-9);
    }
}
