//! End-to-end acceptance runs at desk scale. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails. Outputs are kept under the
//! cargo target temp directory for inspection.

use std::path::{Path, PathBuf};
use std::time::Instant;

use maxeig::cli::{
    cmd_deploy_eval, cmd_pipeline, cmd_train_designs, read_json, DesignFile, RunOptions,
};
use maxeig::config::ScaleChoice;
use maxeig::deployment::{MetricsReport, MetricsRow};
use maxeig::models::Action;
use maxeig::selftest;

struct Outcome {
    passed: bool,
    detail: String,
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("presets")
        .join(format!("{name}.json"))
}

fn work_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("acceptance")
        .join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn options(config: PathBuf, out: PathBuf, workers: usize) -> RunOptions {
    RunOptions {
        config,
        seed: None,
        out,
        workers,
        scale: ScaleChoice::Desk,
    }
}

fn report(dir: &Path) -> maxeig::Result<Vec<MetricsRow>> {
    Ok(read_json::<MetricsReport>(&dir.join("report.json"))?.rows)
}

fn row<'a>(rows: &'a [MetricsRow], method: &str) -> &'a MetricsRow {
    rows.iter()
        .find(|r| r.method == method)
        .expect("method in report")
}

fn eig(r: &MetricsRow) -> f64 {
    r.eig.map_or(f64::NAN, |e| e.mean)
}

/// Checks as (label, passed), rendered into one detail string.
fn combine(checks: Vec<(String, bool)>) -> Outcome {
    let passed = checks.iter().all(|c| c.1);
    let detail = checks
        .iter()
        .map(|(l, ok)| format!("{}{l}", if *ok { "" } else { "!" }))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome { passed, detail }
}

fn property_suite() -> maxeig::Result<Outcome> {
    let t = Instant::now();
    let checks = selftest::run_all();
    let secs = t.elapsed().as_secs_f64();
    let mut out: Vec<(String, bool)> = checks
        .iter()
        .map(|c| (format!("{} [{}]", c.name, c.detail), c.passed))
        .collect();
    out.push((format!("runtime {secs:.1}s ≤ 300s"), secs <= 300.0));
    Ok(combine(out))
}

fn discrete_run() -> maxeig::Result<Outcome> {
    let dir = work_dir("discrete10");
    let t = Instant::now();
    cmd_pipeline(&options(preset("discrete10"), dir.clone(), 1))?;
    let secs = t.elapsed().as_secs_f64();
    let rows = report(&dir)?;
    let ours_designs: DesignFile = read_json(&dir.join("designs_ours.json"))?;
    let ucb_designs: DesignFile = read_json(&dir.join("designs_ucb_1.json"))?;
    let (ours, random, ucb) = (
        row(&rows, "ours"),
        row(&rows, "random"),
        row(&rows, "ucb:1"),
    );

    let top_two = ours_designs
        .designs
        .iter()
        .all(|a| matches!(a, Action::Discrete(0) | Action::Discrete(1)));
    let ucb_first = ucb_designs
        .designs
        .iter()
        .all(|a| *a == Action::Discrete(0));
    let treatments: Vec<usize> = ours_designs
        .designs
        .iter()
        .map(|a| a.as_f64() as usize + 1)
        .collect();
    let mut checks = vec![
        (
            format!("ours uses only treatments 1-2 {treatments:?}"),
            top_two,
        ),
        ("UCB1 all treatment 1".to_string(), ucb_first),
        (
            format!(
                "EIG ours {:.3} > random {:.3} > UCB1 {:.3}, gaps ≥ 0.2",
                eig(ours),
                eig(random),
                eig(ucb)
            ),
            eig(ours) - eig(random) >= 0.2 && eig(random) - eig(ucb) >= 0.2,
        ),
        (
            format!(
                "MSE(m*) ours {:.4} < random {:.4}, UCB1 {:.4}",
                ours.mse_mstar.mean, random.mse_mstar.mean, ucb.mse_mstar.mean
            ),
            ours.mse_mstar.mean < random.mse_mstar.mean && ours.mse_mstar.mean < ucb.mse_mstar.mean,
        ),
    ];
    for r in [ours, random, ucb] {
        let h = r.mse_a_or_hitrate.mean;
        checks.push((
            format!("hit rate {} {h:.3} ∈ 0.50 ± 0.05", r.method),
            (h - 0.5).abs() <= 0.05,
        ));
    }
    checks.push((
        format!("runtime {:.1} min ≤ 30", secs / 60.0),
        secs <= 1800.0,
    ));
    Ok(combine(checks))
}

const CONTINUOUS_METHODS: [&str; 7] = [
    "random:0.2",
    "random:1.0",
    "random:2.0",
    "ucb:0",
    "ucb:1",
    "ucb:2",
    "ours",
];

fn continuous_run(dir: &Path) -> maxeig::Result<Outcome> {
    let t = Instant::now();
    cmd_pipeline(&options(preset("continuous20"), dir.to_path_buf(), 1))?;
    let secs = t.elapsed().as_secs_f64();
    let rows = report(dir)?;
    let ours = row(&rows, "ours");
    let baselines: Vec<&MetricsRow> = CONTINUOUS_METHODS[..6]
        .iter()
        .map(|m| row(&rows, m))
        .collect();
    let best = baselines
        .iter()
        .map(|r| eig(r))
        .fold(f64::NEG_INFINITY, f64::max);

    let mut checks = vec![(
        format!("EIG ours {:.3} ≥ best baseline {best:.3} + 0.2", eig(ours)),
        eig(ours) >= best + 0.2,
    )];
    type Column = fn(&MetricsRow) -> f64;
    let metrics: [(&str, Column); 4] = [
        ("MSE(m*)", |r| r.mse_mstar.mean),
        ("MSE(psi)", |r| r.mse_psi.mean),
        ("MSE(A)", |r| r.mse_a_or_hitrate.mean),
        ("regret", |r| r.regret.mean),
    ];
    for (name, f) in metrics {
        let best_other = baselines.iter().map(|r| f(r)).fold(f64::INFINITY, f64::min);
        checks.push((
            format!("{name} ours {:.4} < best baseline {best_other:.4}", f(ours)),
            f(ours) < best_other,
        ));
    }
    let ceiling = 512f64.ln();
    let all_eig: Vec<String> = rows
        .iter()
        .map(|r| format!("{}={:.3}", r.method, eig(r)))
        .collect();
    checks.push((
        format!("all EIG ≤ log 512 ({})", all_eig.join(" ")),
        rows.iter().all(|r| eig(r) <= ceiling),
    ));
    checks.push((
        format!("runtime {:.1} min ≤ 45", secs / 60.0),
        secs <= 2700.0,
    ));
    Ok(combine(checks))
}

fn scaling_trend(d20: &Path) -> maxeig::Result<Outcome> {
    let mut series = vec![row(&report(d20)?, "ours").clone()];
    for name in ["continuous40", "continuous60"] {
        let dir = work_dir(name);
        let opts = options(preset(name), dir.clone(), 1);
        cmd_train_designs(&opts)?;
        cmd_deploy_eval(&opts, &[dir.join("designs_ours.json")])?;
        let r: MetricsReport = read_json(&dir.join("metrics_ours.json"))?;
        series.push(r.rows[0].clone());
    }
    let fmt = |f: fn(&MetricsRow) -> f64| {
        series
            .iter()
            .map(|r| format!("{:.5}", f(r)))
            .collect::<Vec<_>>()
            .join(" → ")
    };
    let decreasing = |f: fn(&MetricsRow) -> f64| series.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    Ok(combine(vec![
        (
            format!("MSE(m*) D=20,40,60: {}", fmt(|r| r.mse_mstar.mean)),
            decreasing(|r| r.mse_mstar.mean),
        ),
        (
            format!("regret D=20,40,60: {}", fmt(|r| r.regret.mean)),
            decreasing(|r| r.regret.mean),
        ),
    ]))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "config.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn determinism(d20: &Path) -> maxeig::Result<Outcome> {
    let mut checks = Vec::new();
    // full pipeline twice on a shrunk discrete preset
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(preset("discrete10")).unwrap())?;
    cfg["desk"] = serde_json::json!({"steps": 200, "batch": 64, "tau_interval": 40, "eig_steps": 100, "n_envs": 30});
    cfg["particles"] = 2000.into();
    let base = work_dir("determinism");
    let config = base.join("config.json");
    std::fs::write(&config, serde_json::to_string(&cfg)?).unwrap();
    let runs: Vec<Vec<(String, Vec<u8>)>> = ["a", "b"]
        .iter()
        .map(|r| {
            let out = base.join(r);
            cmd_pipeline(&options(config.clone(), out.clone(), 1)).map(|_| files(&out))
        })
        .collect::<maxeig::Result<_>>()?;
    checks.push((
        format!("pipeline rerun: {} files byte-identical", runs[0].len()),
        runs[0] == runs[1] && !runs[0].is_empty(),
    ));

    // parallel against serial deployment on the continuous run
    let designs: Vec<PathBuf> = CONTINUOUS_METHODS
        .iter()
        .map(|m| d20.join(format!("designs_{}.json", maxeig::cli::method_slug(m))))
        .collect();
    let serial: Vec<Vec<u8>> = CONTINUOUS_METHODS
        .iter()
        .map(|m| {
            std::fs::read(d20.join(format!("metrics_{}.csv", maxeig::cli::method_slug(m)))).unwrap()
        })
        .collect();
    cmd_deploy_eval(
        &options(preset("continuous20"), d20.to_path_buf(), 8),
        &designs,
    )?;
    let parallel: Vec<Vec<u8>> = CONTINUOUS_METHODS
        .iter()
        .map(|m| {
            std::fs::read(d20.join(format!("metrics_{}.csv", maxeig::cli::method_slug(m)))).unwrap()
        })
        .collect();
    checks.push((
        "deploy-eval --workers 8 matches serial metrics CSVs".to_string(),
        serial == parallel,
    ));
    Ok(combine(checks))
}

fn main() {
    let mut failed = 0;
    let mut report_line = |n: usize, name: &str, outcome: maxeig::Result<Outcome>, t: Instant| {
        let o = outcome.unwrap_or_else(|e| Outcome {
            passed: false,
            detail: format!("error: {e}"),
        });
        if !o.passed {
            failed += 1;
        }
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!(
            "{tag} criterion {n} {name} ({:.1} min): {}",
            t.elapsed().as_secs_f64() / 60.0,
            o.detail
        );
    };

    let t = Instant::now();
    report_line(1, "property suite", property_suite(), t);
    let t = Instant::now();
    report_line(2, "discrete 10-design desk run", discrete_run(), t);
    let d20 = work_dir("continuous20");
    let t = Instant::now();
    report_line(3, "continuous 20-design desk run", continuous_run(&d20), t);
    let t = Instant::now();
    report_line(4, "scaling trend D = 20, 40, 60", scaling_trend(&d20), t);
    let t = Instant::now();
    report_line(5, "determinism", determinism(&d20), t);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
