use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use lanesight::dataset::{assemble, build_dataset, Dataset, Sequence};
use lanesight::explain::{contributions_for, render_scene, render_timeline, write_reports, ContributionReport};
use lanesight::features::{extract_many, extract_sequence, read_features, write_features, FeatureLayout, FeatureSample};
use lanesight::labeler::{auto_label, read_labels, write_labels, ManeuverLabel};
use lanesight::metrics::{
    evaluate, predict_dataset, rank_methods, read_predictions, render_table, write_predictions, write_records, EvalConfig,
    MetricsReport, PredictionRecord, RankEntry, TargetStreams,
};
use lanesight::models::{ModelKind, Predictor};
use lanesight::seed;
use lanesight::training::{train, write_log, TrainError};
use lanesight::trajdata::{clean_trajectories, generate_synthetic, load_csv, load_lanes, read_scene, write_scene, FrameIndex, Scene, VehicleId};

use crate::config::{self, PipelineConfig, Sources};
use crate::{manifest, CliError, Command, Global};

type Labels = Vec<(VehicleId, FrameIndex, Vec<ManeuverLabel>)>;

fn data<E: std::fmt::Display>(ctx: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{ctx}: {e}"))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_scene(path: &Path) -> Result<Scene, CliError> {
    read_scene(open(path)?).map_err(data(&path.display().to_string()))
}

fn load_predictor(path: &Path) -> Result<Predictor, CliError> {
    Predictor::load(open(path)?).map_err(data(&path.display().to_string()))
}

/// `name=path`, or a bare path named after its stem.
fn named(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((n, p)) if !n.is_empty() && !n.contains(['/', '\\']) => (n.to_string(), PathBuf::from(p)),
        _ => {
            let p = PathBuf::from(spec);
            let n = p.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
            (n, p)
        }
    }
}

/// Vehicles long enough to have features (velocities need two frames).
fn targets(scene: &Scene) -> Vec<VehicleId> {
    scene
        .trajectories()
        .iter()
        .filter(|(_, t)| t.len() >= 2)
        .map(|(&id, _)| id)
        .collect()
}

fn auto_labels(scene: &Scene, cfg: &PipelineConfig) -> Result<Labels, CliError> {
    targets(scene)
        .into_iter()
        .map(|id| {
            let first = scene.trajectory(id).unwrap()[0].frame_index;
            let l = auto_label(scene, id, &cfg.labels).map_err(data("label"))?;
            Ok((id, first, l))
        })
        .collect()
}

fn features_from(scene: &Scene, path: Option<&Path>, cfg: &PipelineConfig) -> Result<(FeatureLayout, Vec<FeatureSample>), CliError> {
    match path {
        Some(p) => read_features(open(p)?).map_err(data(&p.display().to_string())),
        None => {
            let ids = targets(scene);
            let seqs = extract_many(scene, &ids, &cfg.features, cfg.train.execution).map_err(data("features"))?;
            Ok((
                FeatureLayout::new(cfg.features.lane_count(scene)),
                seqs.into_iter().flatten().collect(),
            ))
        }
    }
}

fn dataset(scene: &Scene, labels: Option<&Path>, features: Option<&Path>, cfg: &PipelineConfig) -> Result<Dataset, CliError> {
    if labels.is_none() && features.is_none() {
        return build_dataset(scene, &cfg.features, &cfg.labels, cfg.train.execution).map_err(data("dataset"));
    }
    let (layout, samples) = features_from(scene, features, cfg)?;
    let labels = match labels {
        Some(p) => read_labels(open(p)?).map_err(data(&p.display().to_string()))?,
        None => auto_labels(scene, cfg)?,
    };
    assemble(scene.sample_rate_hz(), layout, &samples, &labels).map_err(data("dataset"))
}

/// Feature sequences without labels (filled with follow), for inference.
fn unlabeled(scene: &Scene, features: Option<&Path>, cfg: &PipelineConfig) -> Result<Dataset, CliError> {
    let (layout, samples) = features_from(scene, features, cfg)?;
    let mut by_vehicle: BTreeMap<VehicleId, Vec<FeatureSample>> = BTreeMap::new();
    for s in samples {
        by_vehicle.entry(s.vehicle_id).or_default().push(s);
    }
    let sequences = by_vehicle
        .into_values()
        .map(|mut v| {
            v.sort_by_key(|s| s.frame_index);
            let n = v.len();
            Sequence::from_samples(&v, vec![ManeuverLabel::F; n]).map_err(data("features"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if sequences.is_empty() {
        return Err(CliError::Data("no feature rows".into()));
    }
    Ok(Dataset {
        sample_rate_hz: scene.sample_rate_hz(),
        layout,
        sequences,
    })
}

fn check_layout(p: &Predictor, ds: &Dataset) -> Result<(), CliError> {
    if p.layout() != ds.layout {
        return Err(CliError::Data(format!(
            "model expects {} feature columns, data has {}",
            p.layout().dim(),
            ds.layout.dim()
        )));
    }
    Ok(())
}

/// Prediction files grouped per vehicle, frame-sorted.
fn predictions_by_vehicle(path: &Path) -> Result<BTreeMap<VehicleId, Vec<PredictionRecord>>, CliError> {
    let recs = read_predictions(open(path)?).map_err(data(&path.display().to_string()))?;
    let mut by: BTreeMap<VehicleId, Vec<PredictionRecord>> = BTreeMap::new();
    for r in recs {
        by.entry(r.vehicle_id).or_default().push(r);
    }
    for v in by.values_mut() {
        v.sort_by_key(|r| r.frame_index);
    }
    Ok(by)
}

/// Predicted labels for exactly the frames `first..first + n`.
fn aligned(recs: &[PredictionRecord], vehicle: VehicleId, first: FrameIndex, n: usize, source: &str) -> Result<Vec<ManeuverLabel>, CliError> {
    let start = recs.iter().position(|r| r.frame_index == first);
    let run = start.map(|s| &recs[s..]).unwrap_or(&[]);
    if run.len() < n || (0..n).any(|i| run[i].frame_index != first + i as FrameIndex) {
        return Err(CliError::Data(format!(
            "{source}: predictions for vehicle {vehicle} do not cover frames {first}..{}",
            first + n as FrameIndex
        )));
    }
    Ok(run[..n].iter().map(|r| r.predicted).collect())
}

#[derive(Deserialize)]
struct SplitFile {
    validation: Vec<VehicleId>,
}

#[derive(Serialize, Deserialize)]
struct MethodReport {
    name: String,
    report: MetricsReport,
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    sample_rate_hz: f64,
    methods: Vec<MethodReport>,
    ranks: Vec<RankEntry>,
}

/// Outputs of one command, buffered so that nothing is written on failure.
struct Outputs {
    dir: PathBuf,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((self.dir.join(name), bytes));
    }

    fn commit(self, command: &str, cfg: &PipelineConfig, inputs: &[PathBuf]) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir).map_err(data(&self.dir.display().to_string()))?;
        let mut paths = Vec::new();
        for (p, b) in self.files {
            std::fs::write(&p, b).map_err(data(&p.display().to_string()))?;
            println!("wrote {}", p.display());
            paths.push(p);
        }
        let m = manifest::write(&self.dir, command, cfg, inputs, &paths)?;
        println!("wrote {}", m.display());
        Ok(())
    }
}

fn plan(command: &str, cfg: &PipelineConfig, inputs: &[PathBuf], outputs: &[String], out: &Path) -> Result<(), CliError> {
    for p in inputs {
        if !p.is_file() {
            return Err(CliError::Data(format!("input {} does not exist", p.display())));
        }
    }
    println!("plan: {command}");
    println!("  seed: {}", cfg.seed);
    println!("  config sha256: {}", manifest::config_hash(cfg));
    for p in inputs {
        println!("  read  {}", p.display());
    }
    for o in outputs {
        println!("  write {}", out.join(o).display());
    }
    println!("  write {}", out.join(format!("{command}.manifest.json")).display());
    Ok(())
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Synth => "synth",
        Command::Ingest { .. } => "ingest",
        Command::Label { .. } => "label",
        Command::Extract { .. } => "extract",
        Command::Train { .. } => "train",
        Command::Predict { .. } => "predict",
        Command::Evaluate { .. } => "evaluate",
        Command::Explain { .. } => "explain",
        Command::Rank { .. } => "rank",
    }
}

fn inputs(cmd: &Command) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = Vec::new();
    match cmd {
        Command::Synth => {}
        Command::Ingest { input, lanes, .. } => v.extend([input.clone(), lanes.clone()]),
        Command::Label { scene } | Command::Extract { scene } => v.push(scene.clone()),
        Command::Train { scene, labels, features } => {
            v.push(scene.clone());
            v.extend(labels.iter().cloned());
            v.extend(features.iter().cloned());
        }
        Command::Predict { model, scene, features } => {
            v.extend([model.clone(), scene.clone()]);
            v.extend(features.iter().cloned());
        }
        Command::Evaluate { labels, predictions, scene, split } => {
            v.push(labels.clone());
            v.extend(predictions.iter().map(|p| named(p).1));
            v.extend(scene.iter().cloned());
            v.extend(split.iter().cloned());
        }
        Command::Explain { model, scene, predictions, .. } => {
            v.extend([model.clone(), scene.clone()]);
            v.extend(predictions.iter().map(|p| named(p).1));
        }
        Command::Rank { reports } => v.extend(reports.iter().cloned()),
    }
    v
}

fn static_outputs(cmd: &Command) -> Vec<String> {
    let s = |x: &[&str]| x.iter().map(|s| s.to_string()).collect();
    match cmd {
        Command::Synth | Command::Ingest { .. } => s(&["scene.ndjson"]),
        Command::Label { .. } => s(&["labels.csv"]),
        Command::Extract { .. } => s(&["features.csv"]),
        Command::Train { .. } => s(&["model.ckpt", "train_log.ndjson", "split.json"]),
        Command::Predict { .. } => s(&["predictions.csv"]),
        Command::Evaluate { .. } => s(&["report.txt", "report.json", "report.ndjson"]),
        Command::Explain { vehicle, frame, .. } => {
            let mut v = vec!["contributions.ndjson".to_string(), format!("timeline_v{vehicle}.svg")];
            if frame.is_empty() {
                v.push(format!("scene_v{vehicle}_f<auto>.svg"));
            }
            v.extend(frame.iter().map(|f| format!("scene_v{vehicle}_f{f}.svg")));
            v
        }
        Command::Rank { .. } => s(&["rank.txt", "rank.json"]),
    }
}

pub fn run(g: &Global, cmd: &Command) -> Result<(), CliError> {
    let cfg = config::load(&Sources {
        config: g.config.clone(),
        overrides: g.overrides.clone(),
        seed: g.seed,
    })?;
    let command = name(cmd);
    let ins = inputs(cmd);
    if g.dry_run {
        return plan(command, &cfg, &ins, &static_outputs(cmd), &g.out);
    }
    for p in &ins {
        if !p.is_file() {
            return Err(CliError::Data(format!("input {} does not exist", p.display())));
        }
    }
    let mut out = Outputs::new(&g.out);
    let exec = cfg.train.execution;
    match cmd {
        Command::Synth => {
            let scene = generate_synthetic(&cfg.synth, seed::derive(cfg.seed, "synth")).map_err(|e| CliError::Usage(e.to_string()))?;
            info!("{} vehicles, {} frames", scene.len(), scene.total_frames());
            out.add("scene.ndjson", scene_bytes(&scene)?);
        }
        Command::Ingest { input, lanes, preset } => {
            let mut c = cfg.clone();
            if let Some(p) = preset {
                c.data.preset = p.clone();
                c.data.schema = None;
            }
            let schema = c.schema()?;
            let lanes = load_lanes(lanes).map_err(data("lanes"))?;
            let report = load_csv(input, &schema, c.data.sample_rate_hz, lanes).map_err(data("input"))?;
            if report.dropped_rows + report.unknown_lane_rows + report.duplicate_rows > 0 {
                warn!(
                    "dropped {} invalid, {} unknown-lane and {} duplicate rows",
                    report.dropped_rows, report.unknown_lane_rows, report.duplicate_rows
                );
            }
            let scene = if c.data.clean {
                clean_trajectories(&report.scene, &c.clean)
            } else {
                report.scene
            };
            if scene.is_empty() {
                return Err(CliError::Data("no trajectory survives cleaning".into()));
            }
            info!("{} vehicles after cleaning", scene.len());
            out.add("scene.ndjson", scene_bytes(&scene)?);
            return out.commit(command, &c, &ins);
        }
        Command::Label { scene } => {
            let scene = load_scene(scene)?;
            let mut buf = Vec::new();
            for (id, first, l) in auto_labels(&scene, &cfg)? {
                write_labels(&mut buf, id, first, &l).map_err(data("labels"))?;
            }
            out.add("labels.csv", buf);
        }
        Command::Extract { scene } => {
            let scene = load_scene(scene)?;
            let (layout, samples) = features_from(&scene, None, &cfg)?;
            let mut buf = Vec::new();
            write_features(&mut buf, layout, &samples).map_err(data("features"))?;
            out.add("features.csv", buf);
        }
        Command::Train { scene, labels, features } => {
            let scene = load_scene(scene)?;
            let ds = dataset(&scene, labels.as_deref(), features.as_deref(), &cfg)?;
            info!("{} sequences, {} frames, {} lane changes", ds.sequences.len(), ds.frames(), ds.lane_changes());
            let outcome = train(&cfg.model, &ds, &cfg.train_config()).map_err(|e| match e {
                TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
                TrainError::Config(_) => CliError::Usage(e.to_string()),
                _ => CliError::Data(e.to_string()),
            })?;
            info!("best epoch {}", outcome.best_epoch);
            let mut ckpt = Vec::new();
            outcome.predictor.save(&mut ckpt).map_err(data("checkpoint"))?;
            // wall times vary between runs; they live in the log only
            let mut log = Vec::new();
            write_log(&mut log, &outcome.log).map_err(data("log"))?;
            let split = serde_json::json!({
                "train": outcome.split.train,
                "validation": outcome.split.validation,
                "stratified": outcome.split.stratified,
                "best_epoch": outcome.best_epoch,
            });
            out.add("model.ckpt", ckpt);
            out.add("train_log.ndjson", log);
            out.add("split.json", json_bytes(&split)?);
        }
        Command::Predict { model, scene, features } => {
            let predictor = load_predictor(model)?;
            let scene = load_scene(scene)?;
            let ds = unlabeled(&scene, features.as_deref(), &cfg)?;
            check_layout(&predictor, &ds)?;
            let preds = predict_dataset(&predictor, &ds, exec).map_err(data("predict"))?;
            let mut buf = Vec::new();
            write_predictions(&mut buf, &preds.concat()).map_err(data("predictions"))?;
            out.add("predictions.csv", buf);
        }
        Command::Evaluate { labels, predictions, scene, split } => {
            let rate = match scene {
                Some(s) => load_scene(s)?.sample_rate_hz(),
                None => cfg.metrics.sample_rate_hz,
            };
            let mut truth = read_labels(open(labels)?).map_err(data("labels"))?;
            if let Some(p) = split {
                let s: SplitFile = serde_json::from_reader(open(p)?).map_err(data(&p.display().to_string()))?;
                let keep: BTreeSet<VehicleId> = s.validation.into_iter().collect();
                truth.retain(|(id, _, _)| keep.contains(id));
            }
            let methods: Vec<(String, BTreeMap<VehicleId, Vec<PredictionRecord>>)> = predictions
                .iter()
                .map(|spec| {
                    let (n, p) = named(spec);
                    Ok((n, predictions_by_vehicle(&p)?))
                })
                .collect::<Result<_, CliError>>()?;
            let names: BTreeSet<&String> = methods.iter().map(|(n, _)| n).collect();
            if names.len() != methods.len() {
                return Err(CliError::Usage("prediction names must be unique".into()));
            }
            // every method is scored on the same targets
            let common: Vec<_> = truth
                .iter()
                .filter(|(id, _, _)| methods.iter().all(|(_, m)| m.contains_key(id)))
                .collect();
            if common.is_empty() {
                return Err(CliError::Data("no labeled vehicle has predictions from every method".into()));
            }
            if common.len() < truth.len() {
                warn!("{} of {} labeled vehicles lack predictions and are skipped", truth.len() - common.len(), truth.len());
            }
            let eval = EvalConfig { ttm: cfg.metrics.ttm };
            let mut reports = Vec::new();
            for (n, m) in &methods {
                let streams = common
                    .iter()
                    .map(|(id, first, t)| {
                        Ok(TargetStreams {
                            vehicle_id: *id,
                            first_frame: *first,
                            predicted: aligned(&m[id], *id, *first, t.len(), n)?,
                            truth: t.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                reports.push((n.clone(), evaluate(&streams, rate, &eval).map_err(data("evaluate"))?));
            }
            add_reports(&mut out, "report", rate, reports)?;
        }
        Command::Explain {
            model,
            scene,
            vehicle,
            frame,
            predictions,
        } => explain(&mut out, &cfg, model, scene, *vehicle, frame, predictions)?,
        Command::Rank { reports } => {
            let mut all: Vec<(String, MetricsReport)> = Vec::new();
            let mut rate = None;
            for p in reports {
                let f: ReportFile = serde_json::from_reader(open(p)?).map_err(data(&p.display().to_string()))?;
                if rate.is_some_and(|r| r != f.sample_rate_hz) {
                    warn!("{} was evaluated at {} Hz", p.display(), f.sample_rate_hz);
                }
                rate.get_or_insert(f.sample_rate_hz);
                for m in f.methods {
                    if all.iter().any(|(n, _)| *n == m.name) {
                        return Err(CliError::Data(format!("method {:?} appears in more than one report", m.name)));
                    }
                    all.push((m.name, m.report));
                }
            }
            let ranks = rank_methods(&all);
            let table = render_table(&all, &ranks);
            print!("{table}");
            out.add("rank.txt", table.into_bytes());
            out.add("rank.json", json_bytes(&ranks)?);
        }
    }
    out.commit(command, &cfg, &ins)
}

fn scene_bytes(scene: &Scene) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_scene(&mut buf, scene).map_err(data("scene"))?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut b = serde_json::to_vec_pretty(v).map_err(data("json"))?;
    b.push(b'\n');
    Ok(b)
}

fn add_reports(out: &mut Outputs, stem: &str, rate: f64, reports: Vec<(String, MetricsReport)>) -> Result<(), CliError> {
    let ranks = rank_methods(&reports);
    let table = render_table(&reports, &ranks);
    print!("{table}");
    let mut nd = Vec::new();
    write_records(&mut nd, &reports).map_err(data("report"))?;
    let file = ReportFile {
        sample_rate_hz: rate,
        methods: reports.into_iter().map(|(name, report)| MethodReport { name, report }).collect(),
        ranks,
    };
    out.add(&format!("{stem}.txt"), table.into_bytes());
    out.add(&format!("{stem}.json"), json_bytes(&file)?);
    out.add(&format!("{stem}.ndjson"), nd);
    Ok(())
}

fn explain(
    out: &mut Outputs,
    cfg: &PipelineConfig,
    model: &Path,
    scene: &Path,
    vehicle: VehicleId,
    frames: &[FrameIndex],
    predictions: &[String],
) -> Result<(), CliError> {
    let predictor = load_predictor(model)?;
    let scene = load_scene(scene)?;
    if scene.trajectory(vehicle).is_none_or(|t| t.len() < 2) {
        return Err(CliError::Data(format!("vehicle {vehicle} has fewer than two frames in the scene")));
    }
    let (samples, _) = extract_sequence(&scene, vehicle, &cfg.features).map_err(data("features"))?;
    let truth = auto_label(&scene, vehicle, &cfg.labels).map_err(data("label"))?;
    let seq = Sequence::from_samples(&samples, truth.clone()).map_err(data("features"))?;
    if predictor.layout() != FeatureLayout::new(cfg.features.lane_count(&scene)) {
        return Err(CliError::Data("model feature layout differs from the scene's".into()));
    }
    let probs = predictor.predict(&seq.features, &seq.rel_v_pv).map_err(data("predict"))?;
    let p_at = |c: usize| [probs.get(0, c), probs.get(1, c), probs.get(2, c)];
    let frames: Vec<FrameIndex> = if frames.is_empty() {
        // the most confident lane-change frame; first on ties
        let mut best = 0;
        for c in 0..seq.len() {
            let p = p_at(c);
            let q = p_at(best);
            if p[0].max(p[2]) > q[0].max(q[2]) {
                best = c;
            }
        }
        vec![seq.first_frame + best as FrameIndex]
    } else {
        frames.to_vec()
    };
    let end = seq.first_frame + seq.len() as FrameIndex;
    if let Some(f) = frames.iter().find(|&&f| f < seq.first_frame || f >= end) {
        return Err(CliError::Data(format!("frame {f} is outside [{}, {end}) for vehicle {vehicle}", seq.first_frame)));
    }
    let reports: Vec<Option<ContributionReport>> = match &predictor {
        Predictor::Net(m) if m.kind() == ModelKind::LstmA => contributions_for(m, &seq, &frames, cfg.train.execution)
            .map_err(data("explain"))?
            .into_iter()
            .map(Some)
            .collect(),
        p => {
            warn!("{} has no attention; diagrams carry no contribution bars", p.kind().name());
            vec![None; frames.len()]
        }
    };
    let mut nd = Vec::new();
    write_reports(&mut nd, &reports.iter().flatten().cloned().collect::<Vec<_>>()).map_err(data("explain"))?;
    out.add("contributions.ndjson", nd);
    for (f, r) in frames.iter().zip(&reports) {
        let c = (f - seq.first_frame) as usize;
        let svg = render_scene(&scene, *f, vehicle, r.as_ref(), Some(p_at(c)), &cfg.render);
        out.add(&format!("scene_v{vehicle}_f{f}.svg"), svg.into_bytes());
    }
    let mut strips = vec![(
        predictor.kind().name().to_string(),
        (0..seq.len()).map(|c| PredictionRecord::new(vehicle, 0, p_at(c)).predicted).collect(),
    )];
    for spec in predictions {
        let (n, p) = named(spec);
        let by = predictions_by_vehicle(&p)?;
        let recs = by
            .get(&vehicle)
            .ok_or_else(|| CliError::Data(format!("{n}: no predictions for vehicle {vehicle}")))?;
        strips.push((n.clone(), aligned(recs, vehicle, seq.first_frame, seq.len(), &n)?));
    }
    let svg = render_timeline(&scene, vehicle, seq.first_frame, &strips, &truth).map_err(data("timeline"))?;
    out.add(&format!("timeline_v{vehicle}.svg"), svg.into_bytes());
    Ok(())
}

