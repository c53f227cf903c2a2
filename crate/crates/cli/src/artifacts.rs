//! On-disk layout of a run directory and readers/writers for every artifact.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cotmap_core::augment::MaskSet;
use cotmap_core::formats::{read_ply, write_ply, write_ppm, TensorFile};
use cotmap_core::geometry::{CameraIntrinsics, Pose, Vec3};
use cotmap_core::render::{CotLabelImage, Provenance};
use cotmap_core::simworld::{Keyframe, TelemetrySample};

use crate::error::{PipelineError, PipelineResult};

/// Paths inside a run directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn stage(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn world(&self) -> PathBuf {
        self.stage("simulate").join("world.json")
    }
    pub fn terrain(&self) -> PathBuf {
        self.stage("simulate").join("terrain.cott")
    }
    pub fn telemetry(&self) -> PathBuf {
        self.stage("simulate").join("telemetry.jsonl")
    }
    pub fn poses(&self) -> PathBuf {
        self.stage("simulate").join("poses.csv")
    }
    pub fn camera(&self) -> PathBuf {
        self.stage("simulate").join("camera.json")
    }
    pub fn cloud(&self) -> PathBuf {
        self.stage("simulate").join("cloud.ply")
    }
    pub fn keyframe_dir(&self) -> PathBuf {
        self.stage("simulate").join("keyframes")
    }
    pub fn label_dir(&self) -> PathBuf {
        self.stage("label")
    }
    pub fn augment_dir(&self) -> PathBuf {
        self.stage("augment")
    }
    pub fn mask_dir(&self) -> PathBuf {
        self.stage("augment").join("masks")
    }
    pub fn model(&self) -> PathBuf {
        self.stage("train").join("model.cott")
    }
    pub fn manifest(&self) -> PathBuf {
        self.stage("train").join("manifest.json")
    }
    pub fn predict_dir(&self) -> PathBuf {
        self.stage("predict")
    }
    pub fn global_map(&self) -> PathBuf {
        self.stage("map").join("global.cott")
    }
    pub fn global_meta(&self) -> PathBuf {
        self.stage("map").join("global.json")
    }
}

pub fn indexed(dir: &Path, prefix: &str, id: usize) -> PathBuf {
    dir.join(format!("{prefix}_{id:05}.cott"))
}

/// Fails with the producing stage named when `path` does not exist.
pub fn require(path: &Path, stage: &'static str) -> PipelineResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Missing { path: path.to_path_buf(), stage })
    }
}

pub fn create_dir(dir: &Path) -> PipelineResult<()> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> PipelineResult<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn read_text(path: &Path, stage: &'static str) -> PipelineResult<String> {
    require(path, stage)?;
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> PipelineResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::parse(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, stage: &'static str) -> PipelineResult<T> {
    let text = read_text(path, stage)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::parse(path, e))
}

pub fn save_tensor(path: &Path, t: &TensorFile) -> PipelineResult<()> {
    let mut bytes = Vec::new();
    t.write_to(&mut bytes)?;
    write_bytes(path, &bytes)
}

pub fn load_tensor(path: &Path, stage: &'static str) -> PipelineResult<TensorFile> {
    require(path, stage)?;
    TensorFile::load(path).map_err(|e| PipelineError::parse(path, e))
}

pub fn save_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> PipelineResult<()> {
    let mut bytes = Vec::new();
    write_ppm(&mut bytes, width, height, rgb)?;
    write_bytes(path, &bytes)
}

#[derive(Serialize, Deserialize)]
struct TelemetryRecord {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    v: f64,
    current: f64,
    voltage: f64,
}

pub fn write_telemetry(path: &Path, samples: &[TelemetrySample]) -> PipelineResult<()> {
    let mut out = String::new();
    for s in samples {
        let [qw, qx, qy, qz] = s.pose.quaternion_wxyz();
        let p = s.pose.translation;
        let rec = TelemetryRecord {
            t: s.t,
            x: p.x,
            y: p.y,
            z: p.z,
            qw,
            qx,
            qy,
            qz,
            v: s.v,
            current: s.current,
            voltage: s.voltage,
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| PipelineError::parse(path, e))?);
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_telemetry(path: &Path) -> PipelineResult<Vec<TelemetrySample>> {
    let text = read_text(path, "simulate")?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let r: TelemetryRecord =
                serde_json::from_str(line).map_err(|e| PipelineError::parse(path, format!("line {}: {e}", i + 1)))?;
            let pose = Pose::from_components([r.x, r.y, r.z], [r.qw, r.qx, r.qy, r.qz])?;
            Ok(TelemetrySample { t: r.t, pose, v: r.v, current: r.current, voltage: r.voltage })
        })
        .collect()
}

/// One row per keyframe: id, telemetry sample index and camera pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseRow {
    pub id: usize,
    pub sample: usize,
    pub pose: Pose,
}

pub fn write_poses(path: &Path, rows: &[PoseRow]) -> PipelineResult<()> {
    let mut out = String::from("id,sample,x,y,z,qw,qx,qy,qz\n");
    for r in rows {
        let t = r.pose.translation;
        let [qw, qx, qy, qz] = r.pose.quaternion_wxyz();
        writeln!(out, "{},{},{},{},{},{},{},{},{}", r.id, r.sample, t.x, t.y, t.z, qw, qx, qy, qz).expect("string write");
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_poses(path: &Path) -> PipelineResult<Vec<PoseRow>> {
    let text = read_text(path, "simulate")?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| PipelineError::parse(path, format!("line {}: {m}", i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(err(format!("expected 9 fields, got {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| err(e.to_string()));
        let int = |s: &str| s.trim().parse::<usize>().map_err(|e| err(e.to_string()));
        let pose = Pose::from_components([num(f[2])?, num(f[3])?, num(f[4])?], [num(f[5])?, num(f[6])?, num(f[7])?, num(f[8])?])?;
        rows.push(PoseRow { id: int(f[0])?, sample: int(f[1])?, pose });
    }
    Ok(rows)
}

pub fn write_keyframe(dir: &Path, kf: &Keyframe) -> PipelineResult<()> {
    let (w, h) = (kf.width(), kf.height());
    save_tensor(&indexed(dir, "rgb", kf.id), &TensorFile::u8(&[3, h, w], kf.rgb.clone())?)?;
    save_tensor(&indexed(dir, "depth", kf.id), &TensorFile::f32(&[h, w], kf.depth.clone())?)
}

/// Reads every keyframe listed in `poses.csv`.
pub fn read_keyframes(run: &RunLayout) -> PipelineResult<Vec<Keyframe>> {
    let k: CameraIntrinsics = read_json(&run.camera(), "simulate")?;
    let rows = read_poses(&run.poses())?;
    let dir = run.keyframe_dir();
    rows.iter()
        .map(|r| {
            let rgb_path = indexed(&dir, "rgb", r.id);
            let depth_path = indexed(&dir, "depth", r.id);
            let rgb = load_tensor(&rgb_path, "simulate")?;
            rgb.expect_dims(&[3, k.height, k.width]).map_err(|e| PipelineError::parse(&rgb_path, e))?;
            let depth = load_tensor(&depth_path, "simulate")?;
            depth.expect_dims(&[k.height, k.width]).map_err(|e| PipelineError::parse(&depth_path, e))?;
            Ok(Keyframe {
                id: r.id,
                pose: r.pose,
                intrinsics: k,
                rgb: rgb.as_u8().map_err(|e| PipelineError::parse(&rgb_path, e))?.to_vec(),
                depth: depth.as_f32().map_err(|e| PipelineError::parse(&depth_path, e))?.to_vec(),
            })
        })
        .collect()
}

pub fn write_cloud(path: &Path, cloud: &[Vec3]) -> PipelineResult<()> {
    let mut bytes = Vec::new();
    write_ply(&mut bytes, cloud)?;
    write_bytes(path, &bytes)
}

pub fn read_cloud(path: &Path) -> PipelineResult<Vec<Vec3>> {
    require(path, "simulate")?;
    let f = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    read_ply(BufReader::new(f)).map_err(|e| PipelineError::parse(path, e))
}

/// Label values as `f32 H×W` under `{prefix}_XXXXX.cott` and provenance as
/// `u8 H×W` under `{prefix}_prov_XXXXX.cott`.
pub fn write_label(dir: &Path, prefix: &str, id: usize, label: &CotLabelImage) -> PipelineResult<()> {
    let dims = [label.height, label.width];
    save_tensor(&indexed(dir, prefix, id), &TensorFile::from_f64(&dims, &label.values)?)?;
    let prov: Vec<u8> = label.provenance.iter().map(|p| *p as u8).collect();
    save_tensor(&indexed(dir, &format!("{prefix}_prov"), id), &TensorFile::u8(&dims, prov)?)
}

pub fn read_label(dir: &Path, prefix: &str, id: usize, stage: &'static str) -> PipelineResult<CotLabelImage> {
    let vpath = indexed(dir, prefix, id);
    let ppath = indexed(dir, &format!("{prefix}_prov"), id);
    let values = load_tensor(&vpath, stage)?;
    let prov = load_tensor(&ppath, stage)?;
    let dims = values.dims_usize();
    if dims.len() != 2 || prov.dims_usize() != dims {
        return Err(PipelineError::parse(&ppath, "label and provenance shapes differ"));
    }
    let provenance = prov
        .as_u8()
        .map_err(|e| PipelineError::parse(&ppath, e))?
        .iter()
        .map(|v| Provenance::from_u8(*v).ok_or_else(|| PipelineError::parse(&ppath, format!("provenance code {v}"))))
        .collect::<PipelineResult<Vec<_>>>()?;
    Ok(CotLabelImage {
        width: dims[1],
        height: dims[0],
        values: values.to_f64().map_err(|e| PipelineError::parse(&vpath, e))?,
        provenance,
    })
}

pub fn write_masks(dir: &Path, id: usize, masks: &MaskSet) -> PipelineResult<()> {
    save_tensor(&indexed(dir, "masks", id), &masks.to_tensor()?)
}

pub fn read_masks(dir: &Path, id: usize) -> PipelineResult<MaskSet> {
    let path = indexed(dir, "masks", id);
    let t = load_tensor(&path, "augment")?;
    MaskSet::from_tensor(&t).map_err(|e| PipelineError::parse(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cotmap_core::geometry::Vec3;

    #[test]
    fn telemetry_and_poses_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pose = Pose::from_xyz_yaw(1.25, -3.5, 0.0, 0.3);
        let s = TelemetrySample { t: 0.1, pose, v: 1.0, current: 2.5, voltage: 24.0 };
        let path = dir.path().join("t.jsonl");
        write_telemetry(&path, &[s, s]).unwrap();
        let back = read_telemetry(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].current, 2.5);
        assert!((back[0].pose.translation - pose.translation).norm() < 1e-15);
        assert!(back[0].pose.angle_to(&pose) < 1e-12);

        let rows = [PoseRow { id: 3, sample: 17, pose }];
        let ppath = dir.path().join("p.csv");
        write_poses(&ppath, &rows).unwrap();
        let r = read_poses(&ppath).unwrap();
        assert_eq!((r[0].id, r[0].sample), (3, 17));
        assert_eq!(r[0].pose.translation, Vec3::new(1.25, -3.5, 0.0));
    }

    #[test]
    fn label_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut label = CotLabelImage::unknown(3, 2);
        label.values[1] = 1.5;
        label.provenance[1] = Provenance::MaskPath;
        write_label(dir.path(), "sl", 4, &label).unwrap();
        assert_eq!(read_label(dir.path(), "sl", 4, "label").unwrap(), label);
    }

    #[test]
    fn missing_artifact_names_stage() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_telemetry(&dir.path().join("telemetry.jsonl")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("telemetry.jsonl") && msg.contains("cotmap simulate"), "{msg}");
    }
}
