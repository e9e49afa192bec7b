//! Commands behind the `maxeig` binary. Every command reads a config, writes
//! its outputs atomically into the run directory and returns their paths.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_designs, eig_of_fixed_designs, BaselineSpec};
use crate::config::{ExperimentConfig, Resolved, ScaleChoice};
use crate::deployment::{
    calibration_csv, calibration_diagnostic, run_deployment, MetricsReport, Provenance,
};
use crate::error::{Error, Result};
use crate::mi_bound::SeparableCritic;
use crate::models::{Action, ActionKind};
use crate::random::RngStream;
use crate::stats::MeanSe;
use crate::trainer::{design_tensor, extract_design, train_designs, DesignSpec, TrainLog};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const OURS: &str = "ours";

/// Options shared by every config-driven command.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub workers: usize,
    pub scale: ScaleChoice,
}

/// A loaded config with its derived settings and provenance.
pub struct Run {
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub seed: u64,
    pub provenance: Provenance,
    pub out: PathBuf,
    pub workers: usize,
}

impl Run {
    pub fn open(opts: &RunOptions) -> Result<Run> {
        let config = ExperimentConfig::load(&opts.config)?;
        let resolved = config.resolve(opts.scale)?;
        let seed = opts.seed.unwrap_or(config.seed);
        let provenance = Provenance {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config.hash(opts.scale),
            model_hash: config.model_hash(),
            seed,
        };
        std::fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e))?;
        Ok(Run {
            config,
            resolved,
            seed,
            provenance,
            out: opts.out.clone(),
            workers: opts.workers.max(1),
        })
    }

    fn rng(&self, command: &str) -> RngStream {
        RngStream::new(self.seed).split(command)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub provenance: Provenance,
    pub method: String,
    pub contexts: Vec<f64>,
    pub designs: Vec<Action>,
    /// Trained policy or actions, for learned designs.
    pub spec: Option<DesignSpec>,
}

impl DesignFile {
    /// Loads a design file and checks it against the run's model and grid.
    pub fn load(path: &Path, run: &Run) -> Result<DesignFile> {
        let mut file: DesignFile = read_json(path)?;
        if file.provenance.model_hash != run.provenance.model_hash {
            return Err(Error::Config(format!(
                "{} was made for a different model or context grid",
                path.display()
            )));
        }
        let kind = run.resolved.model.action_kind();
        if let ActionKind::Continuous { .. } = kind {
            // integral JSON numbers deserialise as treatments
            for a in &mut file.designs {
                *a = Action::Continuous(a.as_f64());
            }
        }
        design_tensor(&file.designs, kind)?;
        if file.designs.len() != run.resolved.contexts.experimental.len() {
            return Err(Error::Config(format!(
                "{} holds {} designs for {} contexts",
                path.display(),
                file.designs.len(),
                run.resolved.contexts.experimental.len()
            )));
        }
        Ok(file)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticFile {
    pub provenance: Provenance,
    pub critic: SeparableCritic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigFile {
    pub provenance: Provenance,
    pub method: String,
    pub eig: MeanSe,
    pub batch: usize,
    pub eval_batches: usize,
    pub critic_steps: usize,
}

/// File-name form of a method label.
pub fn method_slug(method: &str) -> String {
    method
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn train_log_csv(provenance: &Provenance, log: &TrainLog) -> String {
    let mut out = format!("{}\nstep,loss,bound,lr,tau\n", provenance.comment());
    for r in &log.records {
        let _ = writeln!(out, "{},{},{},{},{}", r.step, r.loss, r.bound, r.lr, r.tau);
    }
    out
}

/// Trains designs and critic; writes `designs_ours.json`,
/// `train_log_ours.csv` and `critic_ours.json`.
pub fn cmd_train_designs(opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let run = Run::open(opts)?;
    let r = &run.resolved;
    let rng = run.rng("train-designs");
    let d = r.contexts.experimental.len();
    let kind = r.model.action_kind();
    let critic = SeparableCritic::new(
        r.critic,
        d,
        r.contexts.evaluation.len(),
        &mut rng.split("critic"),
    );
    let init = DesignSpec::init(kind, d, r.train.tau0, &mut rng.split("init"));
    let (spec, critic, log) = train_designs(
        r.model.as_ref(),
        &r.contexts,
        init,
        critic,
        &r.train,
        &rng.split("train"),
    )?;

    let designs = DesignFile {
        provenance: run.provenance.clone(),
        method: OURS.into(),
        contexts: r.contexts.experimental.clone(),
        designs: extract_design(&spec, kind),
        spec: Some(spec),
    };
    let paths = [
        run.path("designs_ours.json"),
        run.path("train_log_ours.csv"),
        run.path("critic_ours.json"),
    ];
    write_json(&paths[0], &designs)?;
    write_atomic(&paths[1], &train_log_csv(&run.provenance, &log))?;
    write_json(
        &paths[2],
        &CriticFile {
            provenance: run.provenance.clone(),
            critic,
        },
    )?;
    Ok(paths.to_vec())
}

/// Writes `designs_<method>.json` for one baseline method string.
pub fn cmd_make_baseline(opts: &RunOptions, method: &str) -> Result<Vec<PathBuf>> {
    let run = Run::open(opts)?;
    let r = &run.resolved;
    let spec = BaselineSpec::parse(method)?.for_kind(r.model.action_kind())?;
    let mut rng = run.rng("baseline").split(method);
    let designs = baseline_designs(r.model.as_ref(), &r.contexts.experimental, &spec, &mut rng)?;
    let path = run.path(&format!("designs_{}.json", method_slug(method)));
    write_json(
        &path,
        &DesignFile {
            provenance: run.provenance.clone(),
            method: method.to_string(),
            contexts: r.contexts.experimental.clone(),
            designs,
            spec: None,
        },
    )?;
    Ok(vec![path])
}

/// Trains a fresh critic for the designs in `design_path` and writes
/// `eig_<method>.json`.
pub fn cmd_estimate_eig(opts: &RunOptions, design_path: &Path) -> Result<Vec<PathBuf>> {
    let run = Run::open(opts)?;
    let r = &run.resolved;
    let file = DesignFile::load(design_path, &run)?;
    let rng = run.rng("estimate-eig").split(&file.method);
    let (eig, _, _) = eig_of_fixed_designs(
        r.model.as_ref(),
        &r.contexts,
        &file.designs,
        r.critic,
        &r.eig,
        &rng,
    )?;
    let path = run.path(&format!("eig_{}.json", method_slug(&file.method)));
    write_json(
        &path,
        &EigFile {
            provenance: run.provenance.clone(),
            method: file.method,
            eig,
            batch: r.eig.train.batch,
            eval_batches: r.eig.eval_batches,
            critic_steps: r.eig.train.steps,
        },
    )?;
    Ok(vec![path])
}

/// Simulated deployment of each design file. Writes `metrics_<method>.csv`,
/// `metrics_<method>.json` and `calibration_<method>.csv`; the bound column
/// is filled from a matching `eig_<method>.json` in the run directory.
pub fn cmd_deploy_eval(opts: &RunOptions, design_paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let run = Run::open(opts)?;
    let r = &run.resolved;
    if design_paths.is_empty() {
        return Err(Error::Config(
            "deploy-eval needs at least one design file".into(),
        ));
    }
    let files = design_paths
        .iter()
        .map(|p| DesignFile::load(p, &run))
        .collect::<Result<Vec<_>>>()?;
    // every method meets the same environments
    let rng = run.rng("deploy-eval");
    let mut written = Vec::new();
    for file in files {
        let slug = method_slug(&file.method);
        let eig_path = run.path(&format!("eig_{slug}.json"));
        let eig = if eig_path.exists() {
            let e: EigFile = read_json(&eig_path)?;
            (e.provenance.config_hash == run.provenance.config_hash
                && e.provenance.seed == run.seed)
                .then_some(e.eig)
        } else {
            None
        };
        let dep = run_deployment(
            r.model.as_ref(),
            &r.contexts,
            &file.designs,
            &r.deploy,
            &rng,
            run.workers,
        )?;
        for (i, e) in dep.envs.iter().enumerate() {
            if let Err(msg) = e {
                eprintln!("{}: environment {i} failed: {msg}", file.method);
            }
        }
        let report = MetricsReport {
            provenance: run.provenance.clone(),
            rows: vec![dep.summarise(&file.method, eig, run.seed)],
        };
        let paths = [
            run.path(&format!("metrics_{slug}.csv")),
            run.path(&format!("metrics_{slug}.json")),
            run.path(&format!("calibration_{slug}.csv")),
        ];
        write_atomic(&paths[0], &report.to_csv()?)?;
        write_json(&paths[1], &report)?;
        write_atomic(
            &paths[2],
            &calibration_csv(&run.provenance, &calibration_diagnostic(&dep)),
        )?;
        written.extend(paths);
    }
    Ok(written)
}

/// Merges metrics JSON files into `report.csv` and `report.json`, one row
/// per method in input order. With no inputs, every `metrics_*.json` in
/// `dir` is merged in file-name order.
pub fn cmd_report(dir: &Path, inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let inputs = if inputs.is_empty() {
        let mut found = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            if name.starts_with("metrics_") && name.ends_with(".json") {
                found.push(path);
            }
        }
        found.sort();
        found
    } else {
        inputs.to_vec()
    };
    if inputs.is_empty() {
        return Err(Error::Config(format!(
            "no metrics files in {}",
            dir.display()
        )));
    }
    let mut merged: Option<MetricsReport> = None;
    for path in &inputs {
        let report: MetricsReport = read_json(path)?;
        match &mut merged {
            None => merged = Some(report),
            Some(m) if m.provenance.model_hash != report.provenance.model_hash => {
                return Err(Error::Config(format!(
                    "{} comes from a different model configuration",
                    path.display()
                )))
            }
            Some(m) => m.rows.extend(report.rows),
        }
    }
    let merged = merged.expect("at least one input");
    let paths = [dir.join("report.csv"), dir.join("report.json")];
    write_atomic(&paths[0], &merged.to_csv()?)?;
    write_json(&paths[1], &merged)?;
    Ok(paths.to_vec())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Scatter of treatment against context, one marker per design.
pub fn designs_svg(file: &DesignFile) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    let range = |xs: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
        if lo < hi {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x0, x1) = range(&mut file.contexts.iter().copied());
    let (y0, y1) = range(&mut file.designs.iter().map(|a| a.as_f64()));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <!-- {} method={} -->\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"12\">context</text>\n\
         <text x=\"12\" y=\"{cy}\" font-size=\"12\" transform=\"rotate(-90 12 {cy})\" text-anchor=\"middle\">treatment</text>\n",
        file.provenance.comment().trim_start_matches("# "),
        file.method,
        b = H - PAD,
        r = W - PAD,
        cx = W / 2.0,
        ty = H - 8.0,
        cy = H / 2.0,
    );
    for (c, a) in file.contexts.iter().zip(&file.designs) {
        let colour = match a {
            Action::Discrete(k) => PALETTE[k % PALETTE.len()],
            Action::Continuous(_) => PALETTE[0],
        };
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"{colour}\"/>",
            sx(*c),
            sy(a.as_f64())
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes an SVG next to the design file (or to `out`).
pub fn cmd_plot_designs(design_path: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let file: DesignFile = read_json(design_path)?;
    if file.contexts.len() != file.designs.len() {
        return Err(Error::Config(format!(
            "{} has {} contexts and {} designs",
            design_path.display(),
            file.contexts.len(),
            file.designs.len()
        )));
    }
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => design_path.with_extension("svg"),
    };
    write_atomic(&path, &designs_svg(&file))?;
    Ok(vec![path])
}

/// Every command in sequence for the trained designs and all baselines of
/// the config, ending with a merged report.
pub fn cmd_pipeline(opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let mut written = cmd_train_designs(opts)?;
    let cfg = ExperimentConfig::load(&opts.config)?;
    let mut designs = vec![opts.out.join("designs_ours.json")];
    for method in &cfg.baselines {
        written.extend(cmd_make_baseline(opts, method)?);
        designs.push(
            opts.out
                .join(format!("designs_{}.json", method_slug(method))),
        );
    }
    for d in &designs {
        written.extend(cmd_estimate_eig(opts, d)?);
    }
    written.extend(cmd_deploy_eval(opts, &designs)?);
    let metrics: Vec<PathBuf> = designs
        .iter()
        .map(|d| {
            let stem = d.file_stem().unwrap_or_default().to_string_lossy();
            opts.out.join(format!(
                "metrics_{}.json",
                stem.trim_start_matches("designs_")
            ))
        })
        .collect();
    written.extend(cmd_report(&opts.out, &metrics)?);
    Ok(written)
}
