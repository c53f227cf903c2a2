//! The eight pipeline stages. Each reads only the artifacts it declares,
//! writes into its own subdirectory of the run, and echoes the resolved
//! config there.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cotmap_core::augment::{
    extend_labels_by_masks, label_nontraversable_by_confidence, label_unknown_as_nontraversable, mask_errors,
    mask_status, select_decision_boundary, train_reconstruction_model, DecisionBoundary, FileMaskProvider, MaskProvider,
    MaskSet, MaskStatus, OracleMaskProvider, ReconEpoch, ReconSample,
};
use cotmap_core::bev::{merge_into_global_clipped, project_to_local_bev, GlobalBevMap, GridMeta};
use cotmap_core::cotlabel::{build_trajectory_mesh, compute_cot_series, extract_overhead_points};
use cotmap_core::formats::{Colormap, TensorFile};
use cotmap_core::geometry::{Pose, Vec2};
use cotmap_core::nn::{rgbd_tensor, ParamSpec};
use cotmap_core::plan::{astar_plan, path_csv, render_map_rgb, shortest_distance_plan, PathResult, PlanProblem};
use cotmap_core::regress::{
    pixel_mse, predict_cot_image, train_regressor, InputSpec, LabelMode, PixelMlp, StagedLabels, TrainFrame,
};
use cotmap_core::render::{compose_label_image, coverage, CotLabelImage};
use cotmap_core::simworld::{
    build_point_cloud, generate_world, ground_truth_cot_image, render_segmentation, render_synthetic_keyframe,
    select_keyframes, simulate_drive, Keyframe, TerrainGrid,
};

use crate::artifacts::*;
use crate::config::{MaskSource, RunConfig};
use crate::error::{PipelineError, PipelineResult};

fn echo_config(cfg: &RunConfig, run: &RunLayout, stage: &str) -> PipelineResult<()> {
    write_bytes(&run.stage(stage).join("config.toml"), cfg.to_toml()?.as_bytes())
}

fn colormap(cfg: &RunConfig) -> Colormap {
    Colormap { nontraversable: cfg.cot.nontraversable_cot, ..Colormap::default() }
}

/// Keyframes whose id falls on the hold-out stride; never used for training.
pub fn is_held_out(cfg: &RunConfig, id: usize) -> bool {
    (id + 1).is_multiple_of(cfg.holdout_every)
}

fn load_world(run: &RunLayout) -> PipelineResult<TerrainGrid> {
    read_json(&run.world(), "simulate")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub samples: usize,
    pub keyframes: usize,
    pub cloud_points: usize,
    pub obstacles: usize,
    pub terrain_ids: Vec<u8>,
}

pub fn simulate(cfg: &RunConfig, run: &RunLayout) -> PipelineResult<SimulateReport> {
    cfg.validate()?;
    let world = generate_world(cfg.stage_seed("world"), &cfg.world)?;
    let telemetry = simulate_drive(
        &world,
        &cfg.power,
        &cfg.robot,
        &cfg.drive.points(),
        cfg.drive.speed,
        cfg.drive.dt,
        cfg.stage_seed("drive"),
    )?;
    let cam_poses: Vec<Pose> = telemetry.iter().map(|s| cfg.camera.mount.camera_pose(&s.pose)).collect();
    let selected = select_keyframes(&cam_poses, cfg.keyframes.translation, cfg.keyframes.rotation_deg)?;
    let mut render = cfg.render.clone();
    render.texture_seed ^= cfg.stage_seed("texture");
    let sensor_seed = cfg.stage_seed("sensor");
    let k = cfg.camera.intrinsics;
    let keyframes: Vec<Keyframe> = selected
        .par_iter()
        .enumerate()
        .map(|(id, &i)| render_synthetic_keyframe(&world, &cam_poses[i], &k, &render, id, sensor_seed))
        .collect::<cotmap_core::Result<_>>()?;
    let cloud = build_point_cloud(&keyframes, cfg.keyframes.cloud_stride)?;

    let dir = run.stage("simulate");
    create_dir(&dir)?;
    write_bytes(&run.config(), cfg.to_toml()?.as_bytes())?;
    echo_config(cfg, run, "simulate")?;
    write_json(&run.world(), &world)?;
    save_tensor(&run.terrain(), &TensorFile::u8(&[world.nrows, world.ncols], world.terrain.clone())?)?;
    write_telemetry(&run.telemetry(), &telemetry)?;
    let rows: Vec<PoseRow> =
        selected.iter().enumerate().map(|(id, &i)| PoseRow { id, sample: i, pose: cam_poses[i] }).collect();
    write_poses(&run.poses(), &rows)?;
    write_json(&run.camera(), &k)?;
    let kdir = run.keyframe_dir();
    keyframes.par_iter().try_for_each(|kf| write_keyframe(&kdir, kf))?;
    write_cloud(&run.cloud(), &cloud)?;
    let report = SimulateReport {
        seed: cfg.seed,
        samples: telemetry.len(),
        keyframes: keyframes.len(),
        cloud_points: cloud.len(),
        obstacles: world.obstacles.len(),
        terrain_ids: world.terrain_ids(),
    };
    write_json(&dir.join("summary.json"), &report)?;
    info!("simulate: {} samples, {} keyframes, {} cloud points", report.samples, report.keyframes, report.cloud_points);
    Ok(report)
}

/// Pooled fraction of labeled pixels over a set of label images.
pub fn pooled_coverage<'a>(labels: impl IntoIterator<Item = &'a CotLabelImage>) -> f64 {
    let (mut labeled, mut total) = (0usize, 0usize);
    for l in labels {
        labeled += l.values.iter().filter(|v| **v > 0.0).count();
        total += l.len();
    }
    if total == 0 {
        0.0
    } else {
        labeled as f64 / total as f64
    }
}

fn coverage_table(rows: &[(&str, f64)]) -> String {
    let mut s = String::from("mode,labeled_percent\n");
    for (name, c) in rows {
        writeln!(s, "{name},{:.2}", 100.0 * c).expect("string write");
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub keyframes: usize,
    pub overhead_points: usize,
    /// Pooled SL coverage, fraction of pixels.
    pub coverage: f64,
    pub per_keyframe: Vec<f64>,
}

pub fn label(cfg: &RunConfig, run: &RunLayout) -> PipelineResult<LabelReport> {
    cfg.validate()?;
    let telemetry = read_telemetry(&run.telemetry())?;
    let keyframes = read_keyframes(run)?;
    let cloud = read_cloud(&run.cloud())?;
    let series = compute_cot_series(&telemetry, &cfg.cot)?;
    let body: Vec<Pose> = telemetry.iter().map(|s| s.pose).collect();
    let mesh = build_trajectory_mesh(&body, &series, cfg.robot.width)?;
    let overhead = extract_overhead_points(&cloud, &body, &cfg.overhead)?;
    let labels: Vec<CotLabelImage> = keyframes
        .par_iter()
        .map(|kf| compose_label_image(kf, &mesh, &overhead, &cloud, &cfg.labels))
        .collect::<cotmap_core::Result<_>>()?;

    let dir = run.label_dir();
    create_dir(&dir)?;
    echo_config(cfg, run, "label")?;
    write_bytes(&dir.join("cot_series.csv"), series.to_csv().as_bytes())?;
    keyframes.par_iter().zip(&labels).try_for_each(|(kf, l)| write_label(&dir, "sl", kf.id, l))?;
    let per_keyframe: Vec<f64> = labels.iter().map(coverage).collect();
    let mut csv = String::from("id,coverage\n");
    for (kf, c) in keyframes.iter().zip(&per_keyframe) {
        writeln!(csv, "{},{c}", kf.id).expect("string write");
    }
    write_bytes(&dir.join("coverage_per_keyframe.csv"), csv.as_bytes())?;
    let pooled = pooled_coverage(&labels);
    write_bytes(&dir.join("coverage.csv"), coverage_table(&[("SL", pooled)]).as_bytes())?;
    let report = LabelReport { keyframes: keyframes.len(), overhead_points: overhead.len(), coverage: pooled, per_keyframe };
    write_json(&dir.join("summary.json"), &report)?;
    info!("label: SL coverage {:.2}%", 100.0 * pooled);
    Ok(report)
}

fn mask_provider(cfg: &RunConfig, run: &RunLayout) -> PipelineResult<Box<dyn MaskProvider>> {
    Ok(match cfg.masks.source {
        MaskSource::Oracle => {
            let world = load_world(run)?;
            Box::new(OracleMaskProvider { world, min_pixels: cfg.masks.min_pixels, include_sky: cfg.masks.include_sky })
        }
        MaskSource::Files => {
            let dir = cfg.masks.dir.clone().expect("validated");
            if !dir.is_dir() {
                return Err(PipelineError::Config(format!("mask directory {} does not exist", dir.display())));
            }
            Box::new(FileMaskProvider { dir })
        }
    })
}

/// Per-mask record of the confidence stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskScore {
    pub keyframe: usize,
    pub mask: usize,
    pub pixels: usize,
    pub status: String,
    /// Absent for masks too small to cover a latent cell.
    pub se: Option<f64>,
    pub nontraversable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub coverage_sl: f64,
    pub coverage_sl_sam: f64,
    pub coverage_c_sam: f64,
    pub coverage_un_sam: f64,
    pub boundary: DecisionBoundary,
    pub labeled_masks: usize,
    pub unlabeled_masks: usize,
    pub recon_history: Vec<ReconEpoch>,
    pub scores: Vec<MaskScore>,
}

fn status_name(s: MaskStatus) -> &'static str {
    match s {
        MaskStatus::Traversable => "traversable",
        MaskStatus::NonTraversable => "nontraversable",
        MaskStatus::Unlabeled => "unlabeled",
    }
}

pub fn augment(cfg: &RunConfig, run: &RunLayout) -> PipelineResult<AugmentReport> {
    cfg.validate()?;
    let keyframes = read_keyframes(run)?;
    let ldir = run.label_dir();
    let sl: Vec<CotLabelImage> =
        keyframes.iter().map(|kf| read_label(&ldir, "sl", kf.id, "label")).collect::<PipelineResult<_>>()?;
    let provider = mask_provider(cfg, run)?;
    let masks: Vec<MaskSet> = keyframes.par_iter().map(|kf| provider.masks(kf)).collect::<cotmap_core::Result<_>>()?;
    let sl_sam: Vec<CotLabelImage> = sl
        .par_iter()
        .zip(&masks)
        .map(|(l, m)| extend_labels_by_masks(l, m, &cfg.cot))
        .collect::<cotmap_core::Result<_>>()?;

    let inputs: Vec<_> = keyframes.iter().map(|kf| rgbd_tensor(kf, cfg.render.max_depth)).collect();
    let statuses: Vec<Vec<MaskStatus>> = sl_sam
        .iter()
        .zip(&masks)
        .map(|(l, m)| (0..m.len()).map(|i| mask_status(l, m, i, &cfg.cot)).collect())
        .collect();
    let samples: Vec<ReconSample> = (0..keyframes.len())
        .map(|f| {
            let l = &sl_sam[f];
            let traversable = (0..l.len()).map(|p| l.is_labeled(p) && l.provenance[p].is_traversable_source()).collect();
            let trav_masks = (0..masks[f].len())
                .filter(|i| statuses[f][*i] == MaskStatus::Traversable)
                .map(|i| masks[f].masks[i].clone())
                .collect();
            Ok(ReconSample {
                input: inputs[f].clone(),
                traversable,
                masks: MaskSet::new(masks[f].width, masks[f].height, trav_masks)?,
            })
        })
        .collect::<cotmap_core::Result<_>>()?;
    let mut recon_cfg = cfg.recon.clone();
    recon_cfg.seed ^= cfg.stage_seed("recon");
    let (model, history) = train_reconstruction_model(&samples, &recon_cfg)?;
    let se: Vec<Vec<Option<f64>>> = inputs
        .par_iter()
        .zip(&masks)
        .map(|(x, m)| mask_errors(&model, x, m, &recon_cfg.loss))
        .collect::<cotmap_core::Result<_>>()?;
    let (mut labeled, mut unlabeled) = (Vec::new(), Vec::new());
    for (f, st) in statuses.iter().enumerate() {
        for (i, s) in st.iter().enumerate() {
            match (s, se[f][i]) {
                (MaskStatus::Traversable, Some(e)) => labeled.push(e),
                (MaskStatus::Unlabeled, Some(e)) => unlabeled.push(e),
                _ => {}
            }
        }
    }
    let boundary = select_decision_boundary(&labeled, &unlabeled, &cfg.confidence)?;
    let c_sam: Vec<CotLabelImage> = sl_sam
        .par_iter()
        .zip(&masks)
        .zip(&se)
        .map(|((l, m), e)| label_nontraversable_by_confidence(l, m, e, boundary.theta, &cfg.cot))
        .collect::<cotmap_core::Result<_>>()?;
    let un_sam: Vec<CotLabelImage> = sl_sam.iter().map(|l| label_unknown_as_nontraversable(l, &cfg.cot)).collect();

    let mut scores = Vec::new();
    for (f, kf) in keyframes.iter().enumerate() {
        for i in 0..masks[f].len() {
            scores.push(MaskScore {
                keyframe: kf.id,
                mask: i,
                pixels: masks[f].pixels(i).count(),
                status: status_name(statuses[f][i]).into(),
                se: se[f][i],
                nontraversable: se[f][i].is_some_and(|e| boundary.is_nontraversable(e)),
            });
        }
    }

    let dir = run.augment_dir();
    create_dir(&dir)?;
    echo_config(cfg, run, "augment")?;
    let mdir = run.mask_dir();
    keyframes.par_iter().zip(&masks).try_for_each(|(kf, m)| write_masks(&mdir, kf.id, m))?;
    keyframes.par_iter().enumerate().try_for_each(|(f, kf)| {
        write_label(&dir, "sl_sam", kf.id, &sl_sam[f])?;
        write_label(&dir, "c_sam", kf.id, &c_sam[f])
    })?;
    let params = TensorFile::from_f64(&[model.params.len()], &model.params)?;
    save_tensor(&dir.join("recon_model.cott"), &params)?;
    let mut se_csv = String::from("keyframe,mask,pixels,status,se,nontraversable\n");
    for s in &scores {
        let se = s.se.map(|e| e.to_string()).unwrap_or_default();
        writeln!(se_csv, "{},{},{},{},{},{}", s.keyframe, s.mask, s.pixels, s.status, se, s.nontraversable as u8)
            .expect("string write");
    }
    write_bytes(&dir.join("se.csv"), se_csv.as_bytes())?;
    let mut loss_csv = String::from("epoch,main,aux\n");
    for e in &history {
        writeln!(loss_csv, "{},{},{}", e.epoch, e.main, e.aux).expect("string write");
    }
    write_bytes(&dir.join("recon_loss.csv"), loss_csv.as_bytes())?;
    write_json(&dir.join("boundary.json"), &boundary)?;

    let report = AugmentReport {
        coverage_sl: pooled_coverage(&sl),
        coverage_sl_sam: pooled_coverage(&sl_sam),
        coverage_c_sam: pooled_coverage(&c_sam),
        coverage_un_sam: pooled_coverage(&un_sam),
        boundary,
        labeled_masks: labeled.len(),
        unlabeled_masks: unlabeled.len(),
        recon_history: history,
        scores,
    };
    let table = coverage_table(&[
        ("SL", report.coverage_sl),
        ("SL-SAM", report.coverage_sl_sam),
        ("C-SAM", report.coverage_c_sam),
        ("UN-SAM", report.coverage_un_sam),
    ]);
    write_bytes(&dir.join("coverage.csv"), table.as_bytes())?;
    info!(
        "augment: coverage SL {:.2}% SL-SAM {:.2}% C-SAM {:.2}%, theta {}",
        100.0 * report.coverage_sl,
        100.0 * report.coverage_sl_sam,
        100.0 * report.coverage_c_sam,
        boundary.theta
    );
    Ok(report)
}

/// Everything needed to rebuild a trained regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub root_seed: u64,
    pub mode: LabelMode,
    pub input: InputSpec,
    pub feature_radius: usize,
    pub hidden: usize,
    pub layout: Vec<ParamSpec>,
    pub train_ids: Vec<usize>,
    pub final_loss: f64,
}

fn staged_labels(run: &RunLayout, id: usize) -> PipelineResult<StagedLabels> {
    Ok(StagedLabels {
        sl: read_label(&run.label_dir(), "sl", id, "label")?,
        sl_sam: read_label(&run.augment_dir(), "sl_sam", id, "augment")?,
        c_sam: read_label(&run.augment_dir(), "c_sam", id, "augment")?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: LabelMode,
    pub train_frames: usize,
    pub losses: Vec<f64>,
}

pub fn train(cfg: &RunConfig, run: &RunLayout) -> PipelineResult<TrainReport> {
    cfg.validate()?;
    let keyframes = read_keyframes(run)?;
    let frames: Vec<(usize, TrainFrame)> = keyframes
        .iter()
        .filter(|kf| !is_held_out(cfg, kf.id))
        .map(|kf| {
            Ok((
                kf.id,
                TrainFrame {
                    input: rgbd_tensor(kf, cfg.render.max_depth),
                    labels: staged_labels(run, kf.id)?,
                    masks: read_masks(&run.mask_dir(), kf.id)?,
                },
            ))
        })
        .collect::<PipelineResult<_>>()?;
    let (ids, frames): (Vec<usize>, Vec<TrainFrame>) = frames.into_iter().unzip();
    let mut rcfg = cfg.regressor.clone();
    rcfg.seed ^= cfg.stage_seed("regressor");
    let (model, losses) = train_regressor(&frames, cfg.mode, &cfg.cot, &rcfg)?;

    let dir = run.stage("train");
    create_dir(&dir)?;
    echo_config(cfg, run, "train")?;
    save_tensor(&run.model(), &TensorFile::from_f64(&[model.params.len()], &model.params)?)?;
    let k = cfg.camera.intrinsics;
    let manifest = ModelManifest {
        root_seed: cfg.seed,
        mode: cfg.mode,
        input: InputSpec { width: k.width, height: k.height, max_depth: cfg.render.max_depth },
        feature_radius: model.feature_radius,
        hidden: model.hidden,
        layout: model.layout.clone(),
        train_ids: ids,
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
    };
    write_json(&run.manifest(), &manifest)?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        writeln!(csv, "{e},{l}").expect("string write");
    }
    write_bytes(&dir.join("loss.csv"), csv.as_bytes())?;
    info!("train: mode {} on {} frames, final loss {}", cfg.mode, frames.len(), manifest.final_loss);
    Ok(TrainReport { mode: cfg.mode, train_frames: frames.len(), losses })
}

pub fn load_model(run: &RunLayout) -> PipelineResult<(PixelMlp, ModelManifest)> {
    let manifest: ModelManifest = read_json(&run.manifest(), "train")?;
    let path = run.model();
    let params = load_tensor(&path, "train")?.to_f64().map_err(|e| PipelineError::parse(&path, e))?;
    let expected: usize = manifest.layout.iter().map(|s| s.len()).sum();
    if params.len() != expected {
        return Err(PipelineError::parse(&path, format!("{} parameters, manifest expects {expected}", params.len())));
    }
    let model = PixelMlp {
        feature_radius: manifest.feature_radius,
        hidden: manifest.hidden,
        layout: manifest.layout.clone(),
        params,
    };
    Ok((model, manifest))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub keyframes: usize,
    pub mean_cot: f64,
}

pub fn predict(cfg: &RunConfig, run: &RunLayout) -> PipelineResult<PredictReport> {
    cfg.validate()?;
    let (model, manifest) = load_model(run)?;
    let keyframes = read_keyframes(run)?;
    let preds: Vec<Vec<f64>> = keyframes
        .par_iter()
        .map(|kf| predict_cot_image(&model, kf, &manifest.input))
        .collect::<cotmap_core::Result<_>>()?;
    let dir = run.predict_dir();
    create_dir(&dir)?;
    echo_config(cfg, run, "predict")?;
    keyframes.par_iter().zip(&preds).try_for_each(|(kf, p)| {
        save_tensor(&indexed(&dir, "cot", kf.id), &TensorFile::from_f64(&[kf.height(), kf.width()], p)?)
    })?;
    let n: usize = preds.iter().map(Vec::len).sum();
    let mean_cot = preds.iter().flatten().sum::<f64>() / n.max(1) as f64;
    let report = PredictReport { keyframes: keyframes.len(), mean_cot };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

fn read_prediction(run: &RunLayout, kf: &Keyframe) -> PipelineResult<Vec<f64>> {
    let path = indexed(&run.predict_dir(), "cot", kf.id);
    let t = load_tensor(&path, "predict")?;
    t.expect_dims(&[kf.height(), kf.width()]).map_err(|e| PipelineError::parse(&path, e))?;
    t.to_f64().map_err(|e| PipelineError::parse(&path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub grid: GridMeta,
    pub observed_cells: usize,
    pub dropped_cells: usize,
}

/// Fuses per-keyframe predictions into the global map in keyframe order.
pub fn build_global_map(cfg: &RunConfig, keyframes: &[Keyframe], preds: &[Vec<f64>]) -> PipelineResult<(GlobalBevMap, usize)> {
    let grid = cfg.grid();
    let mut global = GlobalBevMap::new(grid)?;
    let locals = keyframes
        .par_iter()
        .zip(preds)
        .map(|(kf, p)| project_to_local_bev(p, &kf.depth, &kf.pose, &kf.intrinsics, grid.cell_size))
        .collect::<cotmap_core::Result<Vec<_>>>()?;
    let mut dropped = 0;
    for local in &locals {
        dropped += merge_into_global_clipped(&mut global, local)?;
    }
    Ok((global, dropped))
}

pub fn map(cfg: &RunConfig, run: &RunLayout) -> PipelineResult<MapReport> {
    cfg.validate()?;
    let keyframes = read_keyframes(run)?;
    let preds: Vec<Vec<f64>> = keyframes.iter().map(|kf| read_prediction(run, kf)).collect::<PipelineResult<_>>()?;
    let (global, dropped) = build_global_map(cfg, &keyframes, &preds)?;
    let dir = run.stage("map");
    create_dir(&dir)?;
    echo_config(cfg, run, "map")?;
    save_tensor(&run.global_map(), &global.to_tensor()?)?;
    write_json(&run.global_meta(), &global.meta)?;
    let rgb = render_map_rgb(&global, &colormap(cfg), &[]);
    save_ppm(&dir.join("global.ppm"), global.meta.cols, global.meta.rows, &rgb)?;
    let report = MapReport {
        grid: global.meta,
        observed_cells: global.distance.iter().filter(|d| d.is_finite()).count(),
        dropped_cells: dropped,
    };
    write_json(&dir.join("summary.json"), &report)?;
    info!("map: {} observed cells, {} dropped outside the grid", report.observed_cells, report.dropped_cells);
    Ok(report)
}

pub fn load_global_map(run: &RunLayout) -> PipelineResult<GlobalBevMap> {
    let meta: GridMeta = read_json(&run.global_meta(), "map")?;
    let path = run.global_map();
    let t = load_tensor(&path, "map")?;
    GlobalBevMap::from_tensor(meta, &t).map_err(|e| PipelineError::parse(&path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteSummary {
    pub cost: f64,
    pub distance: f64,
    pub cells: usize,
}

impl From<&PathResult> for RouteSummary {
    fn from(p: &PathResult) -> Self {
        Self { cost: p.total_cost, distance: p.total_distance, cells: p.cells.len() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub optimal: RouteSummary,
    pub shortest: RouteSummary,
}

pub fn plan(cfg: &RunConfig, run: &RunLayout) -> PipelineResult<PlanReport> {
    cfg.validate()?;
    let global = load_global_map(run)?;
    let problem = PlanProblem {
        map: &global,
        start: Vec2::new(cfg.plan.start[0], cfg.plan.start[1]),
        goal: Vec2::new(cfg.plan.goal[0], cfg.plan.goal[1]),
        rules: cfg.plan.rules,
    };
    let optimal = astar_plan(&problem)?;
    let shortest = shortest_distance_plan(&problem)?;
    let dir = run.stage("plan");
    create_dir(&dir)?;
    echo_config(cfg, run, "plan")?;
    write_bytes(&dir.join("path.csv"), path_csv(&global, &optimal).as_bytes())?;
    write_bytes(&dir.join("shortest.csv"), path_csv(&global, &shortest).as_bytes())?;
    let rgb = render_map_rgb(&global, &colormap(cfg), &[(&shortest, [255, 255, 0]), (&optimal, [255, 0, 0])]);
    save_ppm(&dir.join("overlay.ppm"), global.meta.cols, global.meta.rows, &rgb)?;
    let report = PlanReport {
        start: cfg.plan.start,
        goal: cfg.plan.goal,
        optimal: (&optimal).into(),
        shortest: (&shortest).into(),
    };
    write_json(&dir.join("summary.json"), &report)?;
    info!("plan: optimal cost {} over {} m, shortest cost {} over {} m", report.optimal.cost, report.optimal.distance, report.shortest.cost, report.shortest.distance);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainRecovery {
    pub terrain: u8,
    pub true_cot: f64,
    /// Meters driven on this terrain.
    pub driven: f64,
    pub fully_traversed: bool,
    pub cells: usize,
    pub mean_cot: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleRecovery {
    /// Observed cells strictly inside obstacle footprints.
    pub cells: usize,
    pub mean_cot: Option<f64>,
    pub min_cot: Option<f64>,
    pub max_relative_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: LabelMode,
    pub held_out: Vec<usize>,
    /// Pixel MSE against ground-truth COT over held-out keyframes.
    pub mse_ground_truth: Option<f64>,
    /// Pixel MSE against the mode's labels on held-out keyframes.
    pub mse_labels: Option<f64>,
    pub terrains: Vec<TerrainRecovery>,
    pub obstacles: ObstacleRecovery,
}

/// Pixel MSE pooled over several images.
pub fn pooled_mse(pairs: &[(Vec<f64>, Vec<f64>)]) -> PipelineResult<Option<f64>> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (pred, truth) in pairs {
        if let Some(m) = pixel_mse(pred, truth)? {
            let k = truth.iter().filter(|z| **z != 0.0).count();
            sum += m * k as f64;
            n += k;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Mean map COT per terrain, skipping cells near obstacles, plus the COT of
/// cells well inside obstacle footprints.
pub fn terrain_recovery(
    cfg: &RunConfig,
    world: &TerrainGrid,
    global: &GlobalBevMap,
    driven: &BTreeMap<u8, f64>,
) -> PipelineResult<(Vec<TerrainRecovery>, ObstacleRecovery)> {
    let cs = global.meta.cell_size;
    let ncot = cfg.cot.nontraversable_cot;
    let mut sums: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
    let mut obstacle_cots = Vec::new();
    for row in 0..global.meta.rows {
        for col in 0..global.meta.cols {
            let v = global.cot[global.index(col, row)];
            if !(v > 0.0) {
                continue;
            }
            let c = global.cell_center(col, row);
            let inside = world.obstacles.iter().any(|b| {
                c.x > b.min[0] + cs && c.x < b.max[0] - cs && c.y > b.min[1] + cs && c.y < b.max[1] - cs
            });
            if inside {
                obstacle_cots.push(v);
                continue;
            }
            let near = world.obstacles.iter().any(|b| {
                c.x >= b.min[0] - cs && c.x <= b.max[0] + cs && c.y >= b.min[1] - cs && c.y <= b.max[1] + cs
            });
            if near {
                continue;
            }
            if let Some(t) = world.terrain_at(c.x, c.y) {
                let e = sums.entry(t).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    let mut terrains = Vec::new();
    for t in world.terrain_ids() {
        let true_cot = cfg.power.true_cot(t, &cfg.robot, cfg.drive.speed)?;
        let d = driven.get(&t).copied().unwrap_or(0.0);
        let (sum, n) = sums.get(&t).copied().unwrap_or((0.0, 0));
        let mean = (n > 0).then(|| sum / n as f64);
        terrains.push(TerrainRecovery {
            terrain: t,
            true_cot,
            driven: d,
            fully_traversed: d >= cfg.cot.horizon,
            cells: n,
            mean_cot: mean,
            relative_error: mean.map(|m| (m - true_cot).abs() / true_cot),
        });
    }
    let obstacles = ObstacleRecovery {
        cells: obstacle_cots.len(),
        mean_cot: (!obstacle_cots.is_empty()).then(|| obstacle_cots.iter().sum::<f64>() / obstacle_cots.len() as f64),
        min_cot: obstacle_cots.iter().copied().reduce(f64::min),
        max_relative_error: obstacle_cots.iter().map(|v| (v - ncot).abs() / ncot).reduce(f64::max),
    };
    Ok((terrains, obstacles))
}

pub fn eval(cfg: &RunConfig, run: &RunLayout) -> PipelineResult<EvalReport> {
    cfg.validate()?;
    let world = load_world(run)?;
    let keyframes = read_keyframes(run)?;
    let held: Vec<&Keyframe> = keyframes.iter().filter(|kf| is_held_out(cfg, kf.id)).collect();
    let mut gt_pairs = Vec::new();
    let mut label_pairs = Vec::new();
    for kf in &held {
        let pred = read_prediction(run, kf)?;
        let seg = render_segmentation(&world, &kf.pose, &kf.intrinsics)?;
        let gt = ground_truth_cot_image(&seg, &cfg.power, &cfg.robot, cfg.drive.speed, cfg.cot.nontraversable_cot)?;
        let labels = staged_labels(run, kf.id)?.materialize(cfg.mode, &cfg.cot);
        gt_pairs.push((pred.clone(), gt));
        label_pairs.push((pred, labels.values));
    }
    let telemetry = read_telemetry(&run.telemetry())?;
    let mut driven: BTreeMap<u8, f64> = BTreeMap::new();
    for pair in telemetry.windows(2) {
        let (a, b) = (pair[0].pose.translation, pair[1].pose.translation);
        let mid = (a + b) / 2.0;
        if let Some(t) = world.terrain_at(mid.x, mid.y) {
            *driven.entry(t).or_insert(0.0) += (b - a).norm();
        }
    }
    let global = load_global_map(run)?;
    let (terrains, obstacles) = terrain_recovery(cfg, &world, &global, &driven)?;
    let report = EvalReport {
        mode: cfg.mode,
        held_out: held.iter().map(|kf| kf.id).collect(),
        mse_ground_truth: pooled_mse(&gt_pairs)?,
        mse_labels: pooled_mse(&label_pairs)?,
        terrains,
        obstacles,
    };
    let dir = run.stage("eval");
    create_dir(&dir)?;
    echo_config(cfg, run, "eval")?;
    write_json(&dir.join("eval.json"), &report)?;
    info!("eval: held-out MSE vs ground truth {:?}", report.mse_ground_truth);
    Ok(report)
}

/// Runs every stage in order.
pub fn run_all(cfg: &RunConfig, run: &RunLayout) -> PipelineResult<EvalReport> {
    simulate(cfg, run)?;
    label(cfg, run)?;
    augment(cfg, run)?;
    train(cfg, run)?;
    predict(cfg, run)?;
    map(cfg, run)?;
    plan(cfg, run)?;
    eval(cfg, run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_mse_weights_by_pixels() {
        let pairs = vec![(vec![1.0, 1.0], vec![1.0, 0.0]), (vec![2.0, 2.0, 2.0], vec![1.0, 1.0, 1.0])];
        assert_eq!(pooled_mse(&pairs).unwrap(), Some(0.75));
        assert_eq!(pooled_mse(&[(vec![3.0], vec![0.0])]).unwrap(), None);
    }

    #[test]
    fn perfect_and_constant_predictions() {
        let truth = vec![0.7, 1.3, 0.0, 10.0];
        assert_eq!(pooled_mse(&[(truth.clone(), truth.clone())]).unwrap(), Some(0.0));
        let c = vec![1.0; 4];
        let z = vec![0.5; 4];
        assert_eq!(pooled_mse(&[(c, z)]).unwrap(), Some(0.25));
    }

    #[test]
    fn coverage_table_format() {
        assert_eq!(coverage_table(&[("SL", 0.3406), ("UN-SAM", 1.0)]), "mode,labeled_percent\nSL,34.06\nUN-SAM,100.00\n");
    }

    #[test]
    fn holdout_stride() {
        let cfg = RunConfig { holdout_every: 3, ..RunConfig::default() };
        let held: Vec<usize> = (0..9).filter(|i| is_held_out(&cfg, *i)).collect();
        assert_eq!(held, vec![2, 5, 8]);
    }
}
