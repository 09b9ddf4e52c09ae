use std::path::Path;
use std::process::{Command, Output};

fn dlmp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlmp"))
        .args(args)
        .env("DLMP_OUT_DIR", out)
        .output()
        .unwrap()
}

fn data(file: &str) -> String {
    format!("{}/data/{file}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn validate_reports_the_bundled_case() {
    let dir = tempfile::tempdir().unwrap();
    let o = dlmp(&["validate"], dir.path());
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("ok: case ieee33-3ph: 33 buses, 32 branches"), "{stdout}");
}

#[test]
fn validate_rejects_a_meshed_case() {
    let dir = tempfile::tempdir().unwrap();
    let o = dlmp(&["validate", "--case", &data("cycle3.json")], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error: module=netmodel kind=non-radial msg="), "{stderr}");
    assert!(stderr.contains("non-radial topology"));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dlmp(&["validate", "--case", "/nonexistent/case.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().starts_with("error: module=io kind=io"));
}

#[test]
fn unknown_scenario_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = dlmp(&["prices", "--scenario", "Q7"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert!(stderr.starts_with("error: module=scenarios kind=unknown-scenario"), "{stderr}");
}

#[test]
fn bad_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dlmp(&["run", "--tariff", "hourly"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_tables_with_unit_headers() {
    let dir = tempfile::tempdir().unwrap();
    let o = dlmp(&["run", "--scenario", "B1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
    let prices = read("B1_prices.csv");
    assert_eq!(
        prices.lines().next().unwrap(),
        "bus,phase,p_dlmp[$/MWh],q_dlmp[$/MVarh],flat_tariff[$/MWh]"
    );
    assert_eq!(prices.lines().count(), 1 + 98);
    assert!(read("B1_branches.csv").starts_with("from,to,phase,p_dlmp[MW],p_flat[MW],limit_lo[MW],limit_hi[MW]"));
    let row = read("B1_branches.csv")
        .lines()
        .find(|l| l.starts_with("3,4,c,"))
        .unwrap()
        .to_string();
    let cols: Vec<f64> = row.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
    assert!(cols[0] <= 0.5 + 1e-6 && cols[1] > 0.5 && cols[3] == 0.5, "{row}");
    assert!(read("B1_voltages.csv").starts_with("bus,phase,v_dlmp[p.u.],v_flat[p.u.]"));
    assert!(read("B1_imbalance.csv").starts_with("bus,delta_dlmp[-],delta_flat[-],delta_max[-]"));
    assert!(read("B1_dlmp_agents.csv").contains("p_d[MW]"));
    let json: serde_json::Value = serde_json::from_str(&read("B1_dlmp_report.json")).unwrap();
    assert!(json["units"].is_object());
    assert_eq!(json["report"]["prices"]["pi_p"].as_array().unwrap().len(), 98);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        assert!(dlmp(&["run", "--scenario", "D2", "--tariff", "dlmp"], dir.path()).status.success());
        assert!(dlmp(&["mc", "--scenario", "D1", "--trials", "20", "--sigma-utility", "0,0.05"], dir.path())
            .status
            .success());
    }
    for f in ["D2_prices.csv", "D2_dlmp_report.json", "D2_imbalance.csv", "D1_mc.csv", "D1_mc.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    assert!(!a.path().join("D2_flat_report.json").exists());
}

#[test]
fn out_flag_overrides_the_environment() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let o = dlmp(
        &["prices", "--scenario", "a1", "--out", flag_dir.path().to_str().unwrap()],
        env_dir.path(),
    );
    assert!(o.status.success());
    assert!(flag_dir.path().join("A1_prices.csv").exists());
    assert!(!env_dir.path().join("A1_prices.csv").exists());
}

#[test]
fn scenario_file_and_participants_file_are_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("tight.json");
    std::fs::write(
        &scen,
        r#"{"name": "T1", "limits": {"u_lo": 0.9025, "u_hi": 1.1025, "branch_lo_mw": -3, "branch_hi_mw": 3,
            "delta_max": null, "pi_lmp": 25}}"#,
    )
    .unwrap();
    let parts = dir.path().join("none.json");
    std::fs::write(&parts, r#"{"prosumers": [], "dgs": []}"#).unwrap();
    let o = dlmp(
        &[
            "run",
            "--scenario",
            scen.to_str().unwrap(),
            "--participants",
            parts.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let prices = std::fs::read_to_string(dir.path().join("T1_prices.csv")).unwrap();
    assert!(prices.lines().nth(1).unwrap().starts_with("1,a,25.000000000"));
    let agents = std::fs::read_to_string(dir.path().join("T1_dlmp_agents.csv")).unwrap();
    assert_eq!(agents.lines().count(), 1);
}
