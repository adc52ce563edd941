//! The pipeline steps behind each subcommand. Every command returns a JSON
//! summary; files are only written once all checks have passed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use uqvox_core::conformal::{
    cccp_calibrate, cccp_predict, hcp_calibrate, scp_calibrate, scp_predict, CalibrationSet, ClassRates, ClassSet,
    HcpModel,
};
use uqvox_core::metrics::{recall_iou_sweep, report, MetricsReport, ScoreKind, SweepRow, SweepSetup};
use uqvox_core::projection::build_binary_grid;
use uqvox_core::split::{hash_split, Split};
use uqvox_core::synth::{classes, generate_scene, render_depth, synth_classifier};
use uqvox_core::{LabelGrid, SoftmaxGrid, EMPTY_CLASS};

use crate::config::{check_split, PipelineConfig};
use crate::container::{read_depth, read_labels, read_softmax, write_atomic, write_grid, Grid};
use crate::error::CliError;
use crate::model::{inf_f64, CccpDoc, HcpDoc, ModelFile, Predictor, ScpDoc, SplitRecord};
use crate::parallel;

pub type CmdResult = Result<Value, CliError>;

/// Statistical warnings collected by a command. Under `strict` they abort
/// the command before any file is written.
#[derive(Debug, Default)]
pub struct Warnings {
    pub strict: bool,
    pub list: Vec<String>,
}

impl Warnings {
    pub fn new(strict: bool) -> Self {
        Self { strict, list: Vec::new() }
    }

    pub fn push(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.list.push(msg);
    }

    fn check(&self) -> Result<(), CliError> {
        if self.strict && !self.list.is_empty() {
            return Err(CliError::Degenerate(self.list.join("; ")));
        }
        Ok(())
    }
}

fn class_name(y: u16, class_count: usize) -> String {
    if class_count == classes::NAMES.len() {
        classes::NAMES[y as usize - 1].to_string()
    } else {
        y.to_string()
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub struct SimulateArgs {
    pub out_dir: PathBuf,
}

/// Generate a scene, its depth estimate and a classifier output.
pub fn simulate(cfg: &PipelineConfig, args: &SimulateArgs) -> CmdResult {
    cfg.validate()?;
    let scene = cfg.scene();
    let world = generate_scene(&scene)?;
    let (_, depth) = render_depth(&world, &cfg.intrinsics, &scene.geometry, &cfg.noise, cfg.seed)?;
    let softmax = synth_classifier(&world, &cfg.classifier())?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    let files = [
        ("labels", Grid::from(world.clone())),
        ("depth", Grid::from(depth.clone())),
        ("softmax", Grid::from(softmax)),
    ];
    let mut paths = BTreeMap::new();
    for (name, grid) in &files {
        let path = args.out_dir.join(format!("{name}.sscg"));
        write_grid(grid, &path)?;
        paths.insert(*name, path.display().to_string());
    }
    let n = world.labels.len() as f64;
    let fractions: BTreeMap<String, f64> = world
        .class_counts()
        .iter()
        .enumerate()
        .map(|(i, &c)| (class_name(i as u16 + 1, world.class_count), c as f64 / n))
        .collect();
    Ok(json!({
        "command": "simulate",
        "seed": cfg.seed,
        "files": paths,
        "class_fractions": fractions,
        "valid_pixels": depth.valid_count(),
    }))
}

pub struct ProjectArgs {
    pub depth: PathBuf,
    pub out: PathBuf,
    pub binary: bool,
}

/// Build an occupancy grid from a depth estimate.
pub fn project(cfg: &PipelineConfig, args: &ProjectArgs) -> CmdResult {
    cfg.intrinsics.validate().map_err(|e| CliError::Config(format!("intrinsics: {e}")))?;
    let geom = cfg.geometry();
    geom.validate().map_err(|e| CliError::Config(format!("geometry: {e}")))?;
    let est = read_depth(&args.depth)?;
    est.check_matches(&cfg.intrinsics)?;
    let (grid, occupied) = if args.binary {
        let g = build_binary_grid(&est, &cfg.intrinsics, &geom)?;
        let n = g.occupied_count();
        (Grid::from(g), n)
    } else {
        if est.sigma.is_none() {
            return Err(CliError::Data(format!(
                "{} has no sigma channel; use --binary to build a binary grid from the means",
                args.depth.display()
            )));
        }
        let g = parallel::build_prob_grid(&est, &cfg.intrinsics, &geom)?;
        let n = g.values.iter().filter(|&&p| p > 0.0).count();
        (Grid::from(g), n)
    };
    write_grid(&grid, &args.out)?;
    Ok(json!({
        "command": "project",
        "mode": if args.binary { "binary" } else { "probabilistic" },
        "file": args.out.display().to_string(),
        "nonzero_voxels": occupied,
    }))
}

fn load_pair(softmax: &Path, labels: &Path) -> Result<(SoftmaxGrid, LabelGrid), CliError> {
    let s = read_softmax(softmax)?;
    let l = read_labels(labels)?;
    uqvox_core::conformal::check_pair(&s, &l)?;
    Ok((s, l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Scp,
    Cccp,
    Hcp,
}

pub struct CalibrateArgs {
    pub softmax: PathBuf,
    pub labels: PathBuf,
    pub out: PathBuf,
    pub method: Method,
}

fn hcp_warnings(model: &HcpModel, warnings: &mut Warnings) {
    let m = model.class_count;
    for y in model.absent_rare_classes() {
        warnings.push(format!("rare class {} has no calibration voxels; its occupancy quantile is +inf", class_name(y, m)));
    }
    for (&y, c) in &model.counts {
        if c.n == 0 && !model.rare.contains(&y) {
            warnings.push(format!("class {} has no calibration voxels; it is always included", class_name(y, m)));
        } else if model.alpha_s.get(&y) == Some(&0.0) && c.n > 0 {
            warnings.push(format!(
                "class {}: gate misses exceed its error budget; it is always included",
                class_name(y, m)
            ));
        }
    }
}

/// Calibrate a conformal predictor on the calibration part of the voxels.
pub fn calibrate(cfg: &PipelineConfig, args: &CalibrateArgs, warnings: &mut Warnings) -> CmdResult {
    check_split(cfg.split)?;
    let (softmax, labels) = load_pair(&args.softmax, &args.labels)?;
    let m = softmax.class_count;
    let split = hash_split(labels.labels.len(), cfg.split, cfg.seed)?;
    let cal = CalibrationSet::from_grids(&softmax, &labels, &split.calibration)?;
    let c = &cfg.conformal;
    let predictor = match args.method {
        Method::Scp => {
            let q = scp_calibrate(&cal, c.alpha).map_err(|e| CliError::Config(e.to_string()))?;
            if q.is_infinite() {
                warnings.push("calibration set too small for the requested rate; quantile is +inf".into());
            }
            Predictor::Scp(ScpDoc { class_count: m, alpha: c.alpha, q })
        }
        Method::Cccp => {
            let alpha = c.targets(m, EMPTY_CLASS)?;
            let q = cccp_calibrate(&cal, &alpha).map_err(|e| CliError::Config(e.to_string()))?;
            for (&y, &qy) in &q {
                if qy.is_infinite() {
                    warnings.push(format!("class {} has too few calibration voxels; quantile is +inf", class_name(y, m)));
                }
            }
            Predictor::Cccp(CccpDoc { class_count: m, alpha, q })
        }
        Method::Hcp => {
            let hcp = c.hcp(m)?;
            let model = hcp_calibrate(&cal, &hcp).map_err(|e| CliError::Config(e.to_string()))?;
            hcp_warnings(&model, warnings);
            Predictor::Hcp(HcpDoc::from(&model))
        }
    };
    warnings.check()?;
    let file = ModelFile { split: SplitRecord { fraction: cfg.split, seed: cfg.seed }, predictor };
    file.write(&args.out)?;
    let mut summary = json!({
        "command": "calibrate",
        "method": file.predictor.method(),
        "file": args.out.display().to_string(),
        "calibration_voxels": split.calibration.len(),
        "warnings": warnings.list,
    });
    if let Predictor::Hcp(d) = &file.predictor {
        let q_o: BTreeMap<String, Value> =
            d.q_o.iter().map(|(&y, &q)| (class_name(y, m), inf_f64::to_repr(q).unwrap_or(Value::Null))).collect();
        summary["q_o"] = json!(q_o);
    }
    Ok(summary)
}

pub struct EvaluateArgs {
    pub model: PathBuf,
    pub softmax: PathBuf,
    pub labels: PathBuf,
    pub out: PathBuf,
    pub csv: Option<PathBuf>,
}

fn test_split(n: usize, rec: &SplitRecord) -> Result<Split, CliError> {
    check_split(rec.fraction)?;
    Ok(hash_split(n, rec.fraction, rec.seed)?)
}

/// Argmax over the occupied classes only.
fn occupied_argmax(f: &[f32]) -> u16 {
    let mut best = 1;
    for k in 2..f.len() {
        if f[k] > f[best] {
            best = k;
        }
    }
    best as u16 + 1
}

fn argmax(f: &[f32]) -> u16 {
    let mut best = 0;
    for k in 1..f.len() {
        if f[k] > f[best] {
            best = k;
        }
    }
    best as u16 + 1
}

/// Apply a model to the test part of the voxels and report metrics.
pub fn evaluate(args: &EvaluateArgs, warnings: &mut Warnings) -> CmdResult {
    let file = ModelFile::read(&args.model)?;
    let (softmax, labels) = load_pair(&args.softmax, &args.labels)?;
    let m = softmax.class_count;
    if file.predictor.class_count() != m {
        return Err(CliError::Data(format!(
            "model has {} classes, grids have {m}",
            file.predictor.class_count()
        )));
    }
    let split = test_split(labels.labels.len(), &file.split)?;
    let test = &split.test;
    let gt: Vec<u16> = test.iter().map(|&i| labels.labels[i]).collect();

    let (occ, pred, sets, alpha): (Vec<u8>, Vec<u16>, Vec<ClassSet>, ClassRates) = match &file.predictor {
        Predictor::Hcp(doc) => {
            let model: HcpModel = doc.clone().into();
            let (occ, sets) = parallel::hcp_predict_indices(&softmax, &model, test)?;
            let pred = test
                .iter()
                .zip(&occ)
                .map(|(&i, &o)| if o == 1 { occupied_argmax(softmax.vector(i)) } else { EMPTY_CLASS })
                .collect();
            (occ, pred, sets, model.alpha_target.clone())
        }
        Predictor::Scp(doc) => {
            let pred: Vec<u16> = test.iter().map(|&i| argmax(softmax.vector(i))).collect();
            let sets = test.iter().map(|&i| scp_predict(softmax.vector(i), doc.q)).collect();
            let alpha = (2..=m as u16).map(|y| (y, doc.alpha)).collect();
            (pred.iter().map(|&y| u8::from(y != EMPTY_CLASS)).collect(), pred, sets, alpha)
        }
        Predictor::Cccp(doc) => {
            let pred: Vec<u16> = test.iter().map(|&i| argmax(softmax.vector(i))).collect();
            let sets = test.iter().map(|&i| cccp_predict(softmax.vector(i), &doc.q)).collect();
            let alpha = doc.alpha.iter().filter(|(&y, _)| y != EMPTY_CLASS).map(|(&y, &a)| (y, a)).collect();
            (pred.iter().map(|&y| u8::from(y != EMPTY_CLASS)).collect(), pred, sets, alpha)
        }
    };
    let rep = report(&occ, &pred, &sets, &gt, m, &alpha)?;
    if rep.cov_gap.is_none() {
        warnings.push("no test voxels of any target class; coverage gap undefined".into());
    }
    for (&y, c) in &rep.coverage {
        if c.is_none() && alpha.contains_key(&y) {
            warnings.push(format!("class {} has no test voxels", class_name(y, m)));
        }
    }
    warnings.check()?;

    let doc = json!({ "method": file.predictor.method(), "metrics": rep });
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    let mut outputs = vec![args.out.display().to_string()];
    if let Some(csv) = &args.csv {
        write_atomic(csv, metrics_csv(&rep, &alpha, m).as_bytes())?;
        outputs.push(csv.display().to_string());
    }
    write_atomic(&args.out, text.as_bytes())?;
    Ok(json!({
        "command": "evaluate",
        "method": file.predictor.method(),
        "files": outputs,
        "test_voxels": test.len(),
        "iou": rep.iou,
        "miou": rep.miou,
        "cov_gap": rep.cov_gap,
        "avg_size": rep.avg_size,
        "warnings": warnings.list,
    }))
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per class and a final `all` row with the aggregate scores.
pub fn metrics_csv(rep: &MetricsReport, alpha: &ClassRates, class_count: usize) -> String {
    let mut out = String::from("class,name,iou,occupied_recall,coverage,target_coverage,miou,cov_gap,avg_size\n");
    for y in 1..=class_count as u16 {
        let _ = writeln!(
            out,
            "{y},{},{},{},{},{},,,",
            class_name(y, class_count),
            cell(rep.per_class_iou.get(&y).copied().flatten()),
            cell(rep.occupied_recall.get(&y).copied().flatten()),
            cell(rep.coverage.get(&y).copied().flatten()),
            cell(alpha.get(&y).map(|a| 1.0 - a)),
        );
    }
    let _ = writeln!(
        out,
        "all,geometry,{},{},,,{},{},{}",
        cell(rep.iou),
        cell(rep.recall),
        cell(rep.miou),
        cell(rep.cov_gap),
        rep.avg_size
    );
    out
}

pub struct SweepArgs {
    pub softmax: PathBuf,
    pub labels: PathBuf,
    pub out: PathBuf,
    pub scores: Vec<ScoreKind>,
    pub targets: Vec<f64>,
    pub rare: String,
}

/// Recall/IoU table for the selected score functions.
pub fn sweep(cfg: &PipelineConfig, args: &SweepArgs) -> CmdResult {
    check_split(cfg.split)?;
    let (softmax, labels) = load_pair(&args.softmax, &args.labels)?;
    let rare = crate::config::parse_class(&args.rare, softmax.class_count)?;
    let split = hash_split(labels.labels.len(), cfg.split, cfg.seed)?;
    let setup = SweepSetup {
        softmax: &softmax,
        labels: &labels,
        calibration: &split.calibration,
        test: &split.test,
        rare,
        epsilon: cfg.conformal.epsilon,
    };
    let mut rows: Vec<SweepRow> = Vec::new();
    for &kind in &args.scores {
        rows.extend(recall_iou_sweep(&setup, kind, &args.targets).map_err(|e| match e {
            uqvox_core::Error::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        })?);
    }
    let csv = sweep_csv(&rows);
    write_atomic(&args.out, csv.as_bytes())?;
    Ok(json!({
        "command": "sweep",
        "file": args.out.display().to_string(),
        "rows": rows.len(),
        "rare": class_name(rare, softmax.class_count),
    }))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("score,target_recall,threshold,achieved_recall,iou\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.score.name(),
            r.target_recall,
            r.threshold,
            cell(r.achieved_recall),
            cell(r.iou)
        );
    }
    out
}
