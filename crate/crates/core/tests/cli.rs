use std::fs;
use std::path::Path;
use std::process::Command;

use pwm_inject::cli::{run, Outcome, CSV_HEADER};
use pwm_inject::config::{parse_config, Mode};

/// Short scenario with the same event structure as the default one.
const SHORT: &str =
    "epsilon = 1e-2\nd_step_time = 0.2\nref_step_time = 0.5\nt_end = 1.0\nplots = false\n";

fn cfg(dir: &Path, extra: &str) -> pwm_inject::config::RunConfig {
    let doc = format!("{SHORT}{extra}out_dir = {:?}\n", dir.display().to_string());
    parse_config(&doc).unwrap()
}

fn csv_of(outcome: &Outcome) -> (String, usize) {
    match outcome {
        Outcome::Trace { csv, rows, .. } => (fs::read_to_string(csv).unwrap(), *rows),
        other => panic!("{other:?}"),
    }
}

#[test]
fn both_mode_row_count_header_and_line_endings() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(dir.path(), "mode = \"both\"\nrecord_stride = 4\n");
    let (text, rows) = csv_of(&run(&c).unwrap());
    let sample_interval = c.epsilon / c.substeps_per_period as f64 * c.record_stride as f64;
    let expected = (c.t_end / sample_interval).round() as usize + 1;
    assert_eq!(rows, expected);
    let lines: Vec<&str> = text.split('\n').collect();
    assert_eq!(lines[0], CSV_HEADER);
    // header + rows + empty tail after the final LF
    assert_eq!(lines.len(), expected + 2);
    assert_eq!(lines.last(), Some(&""));
    assert!(!text.contains('\r'));
    for line in &lines[1..=expected] {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields.len(), 19);
        assert!(fields.iter().all(|v| v.is_finite()));
    }
    let last: Vec<f64> = lines[expected]
        .split(',')
        .map(|f| f.parse().unwrap())
        .collect();
    assert!((last[0] - c.t_end).abs() < 1e-12);
}

#[test]
fn actual_mode_has_nan_averaged_columns() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(dir.path(), "mode = \"actual\"\nrecord_stride = 10\n");
    let (text, _) = csv_of(&run(&c).unwrap());
    let row: Vec<&str> = text.lines().nth(5).unwrap().split(',').collect();
    assert_eq!(&row[10..13], &["nan", "nan", "nan"]);
}

#[test]
fn csv_is_bit_stable_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(
        dir.path(),
        "mode = \"actual\"\nnoise_enabled = true\nnoise_sample_time = 1e-4\nrng_seed = 9\n",
    );
    let (a, _) = csv_of(&run(&c).unwrap());
    let (b, _) = csv_of(&run(&c).unwrap());
    assert_eq!(a, b);
    let other = parse_config(&format!(
        "{}rng_seed = 10\n",
        c.to_toml().unwrap().replace("rng_seed = 9\n", "")
    ))
    .unwrap();
    let (d, _) = csv_of(&run(&other).unwrap());
    assert_ne!(a, d);
}

#[test]
fn figures_come_with_their_csv() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(dir.path(), "mode = \"both\"\nrecord_stride = 5\n");
    let c = pwm_inject::config::RunConfig { plots: true, ..c };
    match run(&c).unwrap() {
        Outcome::Trace { csv, plots, .. } => {
            assert!(csv.exists());
            assert_eq!(plots.len(), 4);
            for p in plots {
                let svg = fs::read_to_string(&p).unwrap();
                assert!(
                    svg.contains("<svg") && svg.contains("polyline"),
                    "{}",
                    p.display()
                );
            }
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn sweep_mode_writes_order_report() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(
        dir.path(),
        "mode = \"sweep\"\nsweep_epsilons = [4e-3, 2e-3, 1e-3]\ntransient_exclusion = 0.05\n",
    );
    match run(&c).unwrap() {
        Outcome::Sweep { report, orders } => {
            let text = fs::read_to_string(report).unwrap();
            assert!(text.contains("fitted_order"));
            let ripple = orders.channel("x3_ripple").unwrap();
            assert!((ripple.fitted_order - 1.0).abs() < 0.2, "{ripple:?}");
            assert_eq!(orders.channels.len(), 7);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn binary_validate_exits_zero() {
    let out = Command::new(env!("CARGO_BIN_EXE_pwm-inject"))
        .args(["--mode", "validate"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn binary_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(
        &path,
        format!("{SHORT}mode = \"ideal\"\nrecord_stride = 20\n"),
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = Command::new(env!("CARGO_BIN_EXE_pwm-inject"))
        .args([
            "--config",
            path.to_str().unwrap(),
            "--mode",
            "actual",
            "--noise",
            "--seed",
            "3",
            "--out",
        ])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(out_dir.join("trace_actual.csv")).unwrap();
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|f| f.parse().unwrap())
        .collect();
    // noise on: y_noisy differs from y at t = 0
    assert_ne!(row[6], row[7]);
}

#[test]
fn binary_reports_config_errors_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "t_end = 20.0\nepsilon = -1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pwm-inject"))
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("epsilon"), "{err}");
}

#[test]
fn mode_names_parse() {
    for (name, mode) in [
        ("actual", Mode::Actual),
        ("ideal", Mode::Ideal),
        ("validate", Mode::Validate),
    ] {
        assert_eq!(
            parse_config(&format!("mode = \"{name}\"\n")).unwrap().mode,
            mode
        );
    }
}
