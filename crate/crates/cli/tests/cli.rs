use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use frdsyn::linalg::CMat;
use frdsyn::plant::{frd_response_to_string, frd_to_string, log_grid, Channel, ChannelRole, FrdPlant, FrdResponse, PlantSample};
use num_complex::Complex64;

fn frdsyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frdsyn")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(o: &Output, key: &str) -> String {
    let out = stdout(o);
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in output:\n{out}"))
        .to_string()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const RCD: &str = "plant = rcd\ncontroller = pi\ncontroller.x0 = 1, 1e-5\ntheta = 0.01\ngrid.fine_points = 600\n";

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_then_certify_reports_the_same_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rcd.conf", RCD);
    let out = dir.path().join("run");
    let o = frdsyn(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["controller.txt", "trace.csv", "grid.csv", "magnitude.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(fs::read_to_string(out.join("magnitude.csv")).unwrap().starts_with("omega_radps,sigma_perf,barrier\n"));
    let f = field(&o, "f");
    let c = frdsyn(&[
        "certify",
        "--config",
        s(&cfg),
        "--controller",
        s(&out.join("controller.txt")),
        "--grid",
        s(&out.join("grid.csv")),
        "--out",
        s(&dir.path().join("cert")),
    ]);
    assert_eq!(code(&c), 0);
    assert_eq!(field(&c, "gamma_star"), f);
    assert!(stdout(&c).contains("certificate: PASS"));
}

#[test]
fn zero_iterations_match_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rcd.conf", &format!("{RCD}solver.max_outer = 0\n"));
    let o = frdsyn(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("a"))]);
    assert_eq!(code(&o), 0);
    let e = frdsyn(&["eval", "--config", s(&cfg), "--out", s(&dir.path().join("b"))]);
    assert_eq!(code(&e), 0);
    assert_eq!(field(&o, "f"), field(&e, "f"));
    assert_eq!(field(&o, "x"), "1.0000000000000000e0 1.0000000000000001e-5");
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "rcd.conf", RCD);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&frdsyn(&["synth", "--config", s(&cfg), "--out", s(&a), "--threads", "1"])), 0);
    assert_eq!(code(&frdsyn(&["synth", "--config", s(&cfg), "--out", s(&b), "--threads", "4"])), 0);
    for f in ["controller.txt", "trace.csv", "grid.csv", "magnitude.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let unstable = write_config(dir.path(), "u.conf", &RCD.replace("1, 1e-5", "1, -1"));
    let o = frdsyn(&["synth", "--config", s(&unstable), "--out", s(&dir.path().join("u"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("not stabilizing"));

    let tight = write_config(dir.path(), "t.conf", &format!("{RCD}grid.budget = 3\n"));
    assert_eq!(code(&frdsyn(&["grid", "--config", s(&tight), "--out", s(&dir.path().join("t"))])), 3);

    let bad = write_config(dir.path(), "b.conf", "plant = rcd\ncolour = blue\n");
    let o = frdsyn(&["synth", "--config", s(&bad)]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert_eq!(code(&frdsyn(&["synth", "--config", s(&dir.path().join("missing.conf"))])), 4);
    assert_eq!(code(&frdsyn(&["frobnicate"])), 4);
    assert_eq!(code(&frdsyn(&["synth"])), 4);
    assert_eq!(code(&frdsyn(&["--help"])), 0);
    let o = frdsyn(&["synth", "--config", s(&write_config(dir.path(), "r.conf", RCD)), "--theta", "-1"]);
    assert_eq!(code(&o), 4);
}

fn scalar(v: f64) -> CMat {
    CMat::scalar(Complex64::new(v, 0.0))
}

/// `T = p11 + k` on `log_grid(0.1, 10, n)`, optionally with one raised sample.
fn write_static_frd(path: &Path, n: usize, needle: Option<(usize, f64)>) -> Vec<f64> {
    let grid = log_grid(0.1, 10.0, n);
    let samples = (0..n)
        .map(|i| PlantSample {
            p11: scalar(if needle.map_or(false, |(j, _)| j == i) { needle.unwrap().1 } else { 0.5 }),
            p12: scalar(1.0),
            p21: scalar(1.0),
            p22: scalar(0.0),
        })
        .collect();
    let channels = vec![Channel { role: ChannelRole::Performance, rows: vec![0], cols: vec![0] }];
    let p = FrdPlant::new(grid.clone(), samples, channels).unwrap();
    fs::write(path, frd_to_string(&p)).unwrap();
    grid
}

const STATIC: &str = "plant = frd\nfrd.path = p.csv\ncontroller = static\ncontroller.x0 = 0.1\ngrid.omega_min = 0.01\ngrid.omega_max = 100\n";

#[test]
fn constant_plant_certifies_trivially() {
    let dir = tempfile::tempdir().unwrap();
    write_static_frd(&dir.path().join("p.csv"), 9, None);
    let cfg = write_config(dir.path(), "c.conf", STATIC);
    let ctrl = write_config(dir.path(), "k.txt", "structure = static\nny = 1\nnu = 1\nx = 0.3\n");
    let o = frdsyn(&["certify", "--config", s(&cfg), "--controller", s(&ctrl), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 0);
    assert_eq!(field(&o, "gamma_star"), "8.0000000000000004e-1");
}

#[test]
fn needle_between_grid_nodes_fails_certification() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    fs::create_dir(&clean).unwrap();
    write_static_frd(&clean.join("p.csv"), 41, None);
    let cfg = write_config(&clean, "c.conf", STATIC);
    let ctrl = write_config(dir.path(), "k.txt", "structure = static\nny = 1\nnu = 1\nx = 0.3\n");
    let g = frdsyn(&["certify", "--config", s(&cfg), "--controller", s(&ctrl), "--out", s(&dir.path().join("g"))]);
    assert_eq!(code(&g), 0);
    let grid_file = dir.path().join("g").join("certificate.csv");
    assert_eq!(field(&g, "nodes"), "2");

    let grid = write_static_frd(&dir.path().join("p.csv"), 41, Some((17, 3.0)));
    let cfg = write_config(dir.path(), "n.conf", STATIC);
    let o = frdsyn(&[
        "certify",
        "--config",
        s(&cfg),
        "--controller",
        s(&ctrl),
        "--grid",
        s(&grid_file),
        "--out",
        s(&dir.path().join("n")),
    ]);
    assert_eq!(code(&o), 1);
    let at = stdout(&o).lines().find_map(|l| l.strip_prefix("certificate: FAIL at omega = ").map(str::to_string)).unwrap();
    assert_eq!(at.parse::<f64>().unwrap(), grid[17]);
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-12 {
        let (c, d) = (b - r * (b - a), a + r * (b - a));
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

#[test]
fn static_gain_on_constant_plant_matches_golden_section() {
    let (g, w1, w2, c) = (2.0, 1.0, 0.5, 0.2);
    let dir = tempfile::tempdir().unwrap();
    let grid = log_grid(0.1, 10.0, 5);
    let r = FrdResponse::new(grid.clone(), vec![scalar(g); grid.len()]).unwrap();
    fs::write(dir.path().join("g.csv"), frd_response_to_string(&r)).unwrap();
    let text = format!(
        "plant = frd\nfrd.path = g.csv\nfrd.contents = open_loop\nweighting = sensitivity\nfilter.W1.num = {w1}\nfilter.W1.den = 1\n\
         filter.W2.num = {w2}\nfilter.W2.den = 1\nbarrier.c = {c}\ncontroller = static\ncontroller.x0 = 0\ngrid.omega_min = 0.01\n"
    );
    let cfg = write_config(dir.path(), "s.conf", &text);
    let o = frdsyn(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let f_of = |k: f64| {
        let d = (1.0 + g * k).abs();
        ((w1 * w1 + w2 * w2 * g * g * k * k).sqrt() / d).max(c / d)
    };
    let k_star = golden_section(f_of, -0.49, 20.0);
    let f: f64 = field(&o, "f").parse().unwrap();
    assert!((f - f_of(k_star)).abs() < 1e-4, "f = {f}, oracle {}", f_of(k_star));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["rcd.conf", "cavity.conf"] {
        frdsyn::config::RunConfig::load(&dir.join(name), &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
