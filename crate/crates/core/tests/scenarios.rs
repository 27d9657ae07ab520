//! Scenario-level behaviour through the library API.

use ibc_core::app::{refine_study, run, RunConfig, RunOptions};

const POINT: &str = r#"
scenario = "point_halfline"
[grid]
h = 0.05
length = 20.0
[coefficients]
kind = "dirichlet"
alpha = [2.0, 0.0]
[initial]
kind = "gaussian"
sector = 1
center = [4.0]
width = 0.5
momentum = [-1.5]
[evolution]
dt = 0.005
steps = 600
"#;

const RADIAL: &str = r#"
scenario = "radial_creation"
[physics]
g = 3.0
rho = 0.5
e0 = 0.0
[grid]
h = 0.05
length = 10.0
[initial]
kind = "gaussian"
sector = 1
center = [4.0]
width = 0.5
momentum = [-2.0]
[evolution]
dt = 0.005
steps = 200
"#;

fn read_csv(path: &std::path::Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn run_in_tempdir(cfg: &RunConfig) -> (tempfile::TempDir, Vec<String>, Vec<Vec<f64>>) {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), ..Default::default() };
    let summary = run(cfg, &opts, &mut std::io::sink()).unwrap();
    let (h, r) = read_csv(summary.csv_path.as_ref().unwrap());
    (dir, h, r)
}

#[test]
fn point_sector_fills_while_packet_approaches() {
    let cfg = RunConfig::from_toml(POINT).unwrap();
    let (_dir, header, rows) = run_in_tempdir(&cfg);
    assert_eq!(&header[2], "P_sector_0");
    let p0: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    for r in &rows {
        assert!((r[1] - rows[0][1]).abs() < 1e-10, "norm drift at t = {}", r[0]);
    }
    // incoming half of the episode: point occupation only grows once contact is made
    let peak = p0.iter().cloned().enumerate().fold((0, 0.0), |m, (i, v)| if v > m.1 { (i, v) } else { m });
    assert!(peak.1 > 0.05, "peak occupation {}", peak.1);
    let start = p0.iter().position(|&v| v > 1e-4 * peak.1).unwrap();
    for w in p0[start..peak.0].windows(2) {
        assert!(w[1] >= w[0] - 1e-12);
    }
}

#[test]
fn zero_state_has_zero_residuals() {
    let mut cfg = RunConfig::from_toml(RADIAL).unwrap();
    cfg.initial = toml::from_str("kind = \"zero\"").unwrap();
    cfg.evolution.steps = 20;
    let table = refine_study(&cfg, 3).unwrap();
    for lv in &table.levels {
        assert_eq!(lv.max_residual, 0.0);
        assert!(lv.final_probs.iter().all(|p| *p == 0.0));
    }
    assert!(table.residual_orders.iter().all(Option::is_none));
}

#[test]
fn decoupled_radial_converges_at_second_order() {
    let mut cfg = RunConfig::from_toml(RADIAL).unwrap();
    cfg.physics.g = 0.0;
    cfg.grid.h = 0.1;
    cfg.evolution.dt = 0.02;
    cfg.evolution.steps = 50;
    let table = refine_study(&cfg, 4).unwrap();
    for lv in &table.levels {
        assert_eq!(lv.final_probs[0], 0.0);
        assert!(lv.max_residual < 1e-9, "{}", lv.max_residual);
    }
    for p in table.probe_orders.iter().map(|p| p.unwrap()) {
        assert!(p >= 1.9, "{table}");
    }
}

#[test]
fn stationary_state_has_no_net_transfer() {
    let mut cfg = RunConfig::from_toml(RADIAL).unwrap();
    cfg.grid.h = 0.1;
    cfg.initial = toml::from_str("kind = \"ground_state\"\nshift = -20.0\ntol = 1e-10").unwrap();
    cfg.evolution.steps = 50;
    let (_dir, header, rows) = run_in_tempdir(&cfg);
    let residual_cols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("residual")).collect();
    for r in &rows[1..] {
        assert!((r[2] - rows[0][2]).abs() < 1e-8);
        for &c in &residual_cols {
            assert!(r[c].abs() < 1e-6, "{}", r[c]);
        }
    }
}

#[test]
fn decoupled_sector_probabilities_are_frozen() {
    let mut cfg = RunConfig::from_toml(RADIAL).unwrap();
    cfg.physics.g = 0.0;
    let (_dir, header, rows) = run_in_tempdir(&cfg);
    assert!(!header.iter().any(|h| h.starts_with("flux_link")));
    for w in rows.windows(2) {
        assert_eq!(w[1][2], 0.0);
        assert!((w[1][3] - w[0][3]).abs() < 1e-13);
    }
}
