//! End-to-end run: plan links, code each transmitted frame at the planned
//! compression ratio, align it to the receiver's domain and score it.
//!
//! Frames come from the scenario's image files or, when a node has none,
//! from a seeded synthetic panning sequence (collaborators get a per-node
//! photometric shift so that alignment has something to correct). The
//! "roadside" refinement counts symbols on the first `refine_fraction` of
//! every sender's frames; the remaining frames are the ones transmitted and
//! scored. With a single frame per node the same frame serves both roles.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::{align, AlignError};
use crate::channel::{capacity_matrix, distance_matrix};
use crate::codec::{decode, rate_control, refine, CodecConfig, CodecError, EntropyModel};
use crate::image::{read_pnm, ImageError, ImageTensor};
use crate::metrics::{
    format_iou_classes, intensity_labels, iou, ms_ssim, mse, psnr, write_reports, MetricsError, QualityReport,
};
use crate::planner::{SolveReport, Solver, SolverConfig};
use crate::planner::{candidate_links, transmission_delay, CommPlan, PlanError};
use crate::scenario::Scenario;
use crate::scenario_file::ScenarioFile;
use crate::synth::{photometric_shift, shifting_sequence};

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("frames: {0}")]
    Frames(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("link {src}->{dst}")]
    Codec {
        src: u32,
        dst: u32,
        #[source]
        source: CodecError,
    },
    #[error("entropy model refinement")]
    Refine(#[source] CodecError),
    #[error("link {src}->{dst}")]
    Align {
        src: u32,
        dst: u32,
        #[source]
        source: AlignError,
    },
    #[error("link {src}->{dst}")]
    Metrics {
        src: u32,
        dst: u32,
        #[source]
        source: MetricsError,
    },
    #[error("{path}")]
    Image {
        path: String,
        #[source]
        source: ImageError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub solver: SolverConfig,
    pub codec: CodecConfig,
    /// Mask half-width fraction for domain alignment; 0 disables it.
    pub align_alpha: f64,
    /// Share of each sender's frames given to the refinement step; 0 keeps
    /// the generic entropy model.
    pub refine_fraction: f64,
    /// Frames per node for nodes without an image file.
    pub frames: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Replaces the planned ratio on every selected link. Must not fall
    /// below any selected link's quality floor.
    pub gamma_override: Option<f64>,
    /// Intensity classes for the IoU proxy.
    pub iou_classes: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            codec: CodecConfig::default(),
            align_alpha: 0.01,
            refine_fraction: 1.0 / 6.0,
            frames: 6,
            frame_height: 64,
            frame_width: 96,
            gamma_override: None,
            iou_classes: 4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |field, reason: &str| {
            Err(SimError::Config {
                field,
                reason: reason.to_string(),
            })
        };
        self.solver.validate()?;
        self.codec.validate().map_err(|e| SimError::Config {
            field: "codec",
            reason: e.to_string(),
        })?;
        if !(0.0..1.0).contains(&self.align_alpha) {
            return fail("align_alpha", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.refine_fraction) {
            return fail("refine_fraction", "must lie in [0, 1]");
        }
        if self.frames == 0 {
            return fail("frames", "must be >= 1");
        }
        if self.frame_height < 11 || self.frame_width < 11 {
            return fail("frame_height", "synthetic frames must be at least 11x11");
        }
        if let Some(g) = self.gamma_override {
            if !(g > 0.0 && g <= 1.0) {
                return fail("gamma_override", "must lie in (0, 1]");
            }
        }
        if self.iou_classes == 0 {
            return fail("iou_classes", "must be >= 1");
        }
        Ok(())
    }
}

/// Per-link outcome, one row of `links.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkReport {
    pub src: u32,
    pub dst: u32,
    pub distance_m: f64,
    pub volume_bits: f64,
    pub capacity_bps: f64,
    pub gamma: f64,
    pub rate_bps: f64,
    pub delay_s: f64,
    pub frames: usize,
    /// Quantiser steps chosen per frame, joined with `;`.
    pub quant_steps: String,
    pub mean_frame_bits: f64,
    /// `gamma * H * W * C * 8` for one frame.
    pub frame_budget_bits: f64,
    /// Coded share of the link's volume: `A * mean_frame_bits / raw_frame_bits`.
    pub transmitted_bits: f64,
    /// `gamma * A`.
    pub volume_budget_bits: f64,
    #[serde(skip)]
    pub quality: QualityReport,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub plan: CommPlan,
    pub solve: SolveReport,
    pub links: Vec<LinkReport>,
    /// Aggregate over links.
    pub summary: QualityReport,
    pub model_id: u64,
    pub refined_on: usize,
}

/// Per-node frames: the image file if given, otherwise synthetic frames.
pub fn node_frames(file: &ScenarioFile, cfg: &SimConfig, seed: u64) -> Result<Vec<Vec<ImageTensor>>, SimError> {
    let s = &file.scenario;
    let ego = s.index_of(s.ego_id);
    s.nodes
        .iter()
        .zip(&file.images)
        .enumerate()
        .map(|(i, (node, path))| match path {
            Some(p) => read_pnm(p)
                .map(|img| vec![img])
                .map_err(|source| SimError::Image {
                    path: p.display().to_string(),
                    source,
                }),
            None => Ok(synthetic_frames(seed, node.id, Some(i) == ego, cfg)),
        })
        .collect()
}

fn synthetic_frames(seed: u64, id: u32, is_ego: bool, cfg: &SimConfig) -> Vec<ImageTensor> {
    let node_seed = seed ^ (u64::from(id) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let frames = shifting_sequence(node_seed, cfg.frames, cfg.frame_height, cfg.frame_width);
    if is_ego {
        return frames;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(node_seed ^ 0xca3e_7a);
    let gain = [rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0)];
    let offset = [rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.15)];
    frames.iter().map(|f| photometric_shift(f, gain, offset)).collect()
}

/// Runs the pipeline. `frames[i]` belongs to `s.nodes[i]`; a sender and its
/// receiver must have frames of equal shape.
pub fn simulate(s: &Scenario, frames: &[Vec<ImageTensor>], cfg: &SimConfig, seed: u64) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    if frames.len() != s.len() || frames.iter().any(|f| f.is_empty()) {
        return Err(SimError::Frames(format!(
            "need at least one frame for each of the {} nodes",
            s.len()
        )));
    }
    let solver_cfg = SolverConfig {
        seed,
        ..cfg.solver.clone()
    };
    let (mut plan, solve) = Solver::new(solver_cfg)?.solve(s)?;
    let candidates = candidate_links(s);
    let selected = plan.selected();
    if let Some(g) = cfg.gamma_override {
        apply_override(&mut plan, &candidates, &selected, g)?;
    }

    // refinement on the leading frames of every sender
    let mut senders: Vec<usize> = selected.iter().map(|&(i, _)| i).collect();
    senders.dedup();
    let (em, held_from) = if cfg.refine_fraction > 0.0 {
        let mut raw = Vec::new();
        let mut split = Vec::new();
        for &i in &senders {
            let k = ((cfg.refine_fraction * frames[i].len() as f64).ceil() as usize).clamp(1, frames[i].len());
            raw.extend(frames[i][..k].iter().cloned());
            split.push((i, k));
        }
        let em = refine(&EntropyModel::generic(), &raw, &cfg.codec).map_err(SimError::Refine)?;
        (em, split.into_iter().collect::<BTreeMap<_, _>>())
    } else {
        (EntropyModel::generic(), BTreeMap::new())
    };

    let geometry = (distance_matrix(&s.nodes), capacity_matrix(&s.nodes, &s.channel));
    let links = selected
        .par_iter()
        .map(|&(i, j)| {
            let k = held_from.get(&i).copied().unwrap_or(0);
            let held = if k < frames[i].len() { &frames[i][k..] } else { &frames[i][..] };
            run_link(s, &plan, &geometry, frames[j].as_slice(), held, (i, j), &em, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let summary = summarize(&links, plan.avg_delay);
    Ok(SimOutput {
        plan,
        solve,
        links,
        summary,
        model_id: em.id(),
        refined_on: em.trained_on(),
    })
}

fn apply_override(
    plan: &mut CommPlan,
    candidates: &[crate::planner::CandidateLink],
    selected: &[(usize, usize)],
    g: f64,
) -> Result<(), SimError> {
    for &(i, j) in selected {
        let link = candidates
            .iter()
            .find(|c| c.src == i && c.dst == j)
            .expect("selected links are candidates");
        if g < link.gamma_bound() {
            return Err(SimError::Config {
                field: "gamma_override",
                reason: format!(
                    "{g} is below the quality floor {:.6} of link {}->{}",
                    link.gamma_bound(),
                    plan.node_ids[i],
                    plan.node_ids[j]
                ),
            });
        }
        plan.gamma[(i, j)] = g;
        plan.delays[(i, j)] = transmission_delay(g, link.volume_bits, plan.rates[(i, j)])?;
    }
    plan.avg_delay = crate::planner::average_delay(plan)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_link(
    s: &Scenario,
    plan: &CommPlan,
    (dist, caps): &(Array2<f64>, Array2<f64>),
    receiver: &[ImageTensor],
    sent: &[ImageTensor],
    (i, j): (usize, usize),
    em: &EntropyModel,
    cfg: &SimConfig,
) -> Result<LinkReport, SimError> {
    let (src, dst) = (plan.node_ids[i], plan.node_ids[j]);
    let gamma = plan.gamma[(i, j)];
    let codec_err = |source| SimError::Codec { src, dst, source };
    let metric_err = |source| SimError::Metrics { src, dst, source };
    let mut steps = Vec::new();
    let (mut bits, mut budget, mut raw) = (0.0, 0.0, 0.0);
    let (mut p, mut m, mut e, mut bpp, mut miou) = (0.0, 0.0, 0.0, 0.0, Vec::new());
    let mut scales = usize::MAX;
    let mut classes: Vec<Vec<f64>> = vec![Vec::new(); cfg.iou_classes as usize];
    for (t, x) in sent.iter().enumerate() {
        let (q, frame) = rate_control(x, gamma, em, &cfg.codec).map_err(codec_err)?;
        let decoded = decode(&frame).map_err(codec_err)?;
        let target = &receiver[t % receiver.len()];
        let aligned = align(&decoded, target, cfg.align_alpha).map_err(|source| SimError::Align { src, dst, source })?;
        steps.push(q);
        bits += frame.bit_count();
        budget += crate::codec::target_bits(x, gamma);
        raw += (x.pixel_count() * x.channels() * 8) as f64;
        p += psnr(x, &aligned).map_err(metric_err)?;
        let ms = ms_ssim(x, &aligned).map_err(metric_err)?;
        m += ms.value;
        scales = scales.min(ms.scales);
        e += mse(x, &aligned).map_err(metric_err)?;
        bpp += frame.bit_count() / x.pixel_count() as f64;
        let r = iou(
            &intensity_labels(&aligned, cfg.iou_classes),
            &intensity_labels(x, cfg.iou_classes),
            cfg.iou_classes,
        )
        .map_err(metric_err)?;
        for (acc, v) in classes.iter_mut().zip(&r.per_class) {
            acc.extend(v);
        }
        miou.extend(r.mean);
    }
    let n = sent.len() as f64;
    let volume = s.data_volumes[(i, j)];
    let per_class = crate::metrics::IouReport {
        per_class: classes.iter().map(|v| mean_of(v)).collect(),
        mean: mean_of(&miou),
    };
    Ok(LinkReport {
        src,
        dst,
        distance_m: dist[(i, j)],
        volume_bits: volume,
        capacity_bps: caps[(i, j)],
        gamma,
        rate_bps: plan.rates[(i, j)],
        delay_s: plan.delays[(i, j)],
        frames: sent.len(),
        quant_steps: steps.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(";"),
        mean_frame_bits: bits / n,
        frame_budget_bits: budget / n,
        transmitted_bits: volume * bits / raw,
        volume_budget_bits: gamma * volume,
        quality: QualityReport {
            scope: format!("{src}->{dst}"),
            psnr_db: p / n,
            ms_ssim: m / n,
            ms_ssim_scales: scales,
            mse: e / n,
            bitrate_bpp: bpp / n,
            iou_per_class: format_iou_classes(&per_class),
            mean_iou: per_class.mean,
            avg_delay_s: plan.delays[(i, j)],
        },
    })
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(links: &[LinkReport], avg_delay: f64) -> QualityReport {
    let n = links.len() as f64;
    let avg = |f: &dyn Fn(&QualityReport) -> f64| links.iter().map(|l| f(&l.quality)).sum::<f64>() / n;
    let ious: Vec<f64> = links.iter().filter_map(|l| l.quality.mean_iou).collect();
    QualityReport {
        scope: "mean".into(),
        psnr_db: avg(&|q| q.psnr_db),
        ms_ssim: avg(&|q| q.ms_ssim),
        ms_ssim_scales: links.iter().map(|l| l.quality.ms_ssim_scales).min().unwrap_or(0),
        mse: avg(&|q| q.mse),
        bitrate_bpp: avg(&|q| q.bitrate_bpp),
        iou_per_class: String::new(),
        mean_iou: mean_of(&ious),
        avg_delay_s: avg_delay,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PlanRow {
    src: u32,
    dst: u32,
    selected: u8,
    distance_m: f64,
    volume_bits: f64,
    capacity_bps: f64,
    gamma: f64,
    rate_bps: f64,
    delay_s: f64,
}

/// Record of one run, sufficient to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: u32,
    pub tool_version: String,
    pub modules: BTreeMap<String, String>,
    pub seed: u64,
    pub scenario_path: String,
    pub scenario_sha256: String,
    pub config: SimConfig,
    pub config_sha256: String,
    pub entropy_model_id: String,
    pub refined_on_frames: usize,
    /// Output file name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_digest(cfg: &SimConfig) -> Result<String, SimError> {
    Ok(sha256_hex(&serde_json::to_vec(cfg)?))
}

/// Every ordered pair of distinct nodes with its plan entries; `gamma` on
/// unselected pairs is the bound that would apply.
pub fn plan_csv(s: &Scenario, plan: &CommPlan) -> Result<Vec<u8>, SimError> {
    let n = s.len();
    let dist = distance_matrix(&s.nodes);
    let caps = capacity_matrix(&s.nodes, &s.channel);
    let mut w = csv::Writer::from_writer(Vec::new());
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            w.serialize(PlanRow {
                src: plan.node_ids[i],
                dst: plan.node_ids[j],
                selected: plan.links[(i, j)],
                distance_m: dist[(i, j)],
                volume_bits: s.data_volumes[(i, j)],
                capacity_bps: caps[(i, j)],
                gamma: plan.gamma[(i, j)],
                rate_bps: plan.rates[(i, j)],
                delay_s: plan.delays[(i, j)],
            })
            .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| SimError::Io(io::Error::other(e.to_string())))
}

/// Renders `plan.csv`, `links.csv` and `report.csv`.
pub fn render_csvs(s: &Scenario, out: &SimOutput) -> Result<BTreeMap<String, Vec<u8>>, SimError> {
    let mut links = csv::Writer::from_writer(Vec::new());
    for l in &out.links {
        links.serialize(l).map_err(csv_err)?;
    }
    let mut report = Vec::new();
    let mut rows: Vec<QualityReport> = out.links.iter().map(|l| l.quality.clone()).collect();
    rows.push(out.summary.clone());
    write_reports(&mut report, &rows).map_err(|e| SimError::Io(io::Error::other(e.to_string())))?;
    let mut files = BTreeMap::new();
    files.insert("plan.csv".to_string(), plan_csv(s, &out.plan)?);
    files.insert("links.csv".to_string(), links.into_inner().map_err(|e| io::Error::other(e.to_string()))?);
    files.insert("report.csv".to_string(), report);
    Ok(files)
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Io(io::Error::other(e.to_string()))
}

/// Writes the CSVs and `manifest.json` into `dir`, returning the manifest.
pub fn write_run(
    dir: &Path,
    s: &Scenario,
    out: &SimOutput,
    cfg: &SimConfig,
    seed: u64,
    scenario_path: &str,
    scenario_bytes: &[u8],
) -> Result<RunManifest, SimError> {
    fs::create_dir_all(dir)?;
    let files = render_csvs(s, out)?;
    let mut outputs = BTreeMap::new();
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
        outputs.insert(name.clone(), sha256_hex(bytes));
    }
    let version = env!("CARGO_PKG_VERSION").to_string();
    let modules = ["channel", "planner", "codec", "align", "metrics", "simulate"]
        .iter()
        .map(|m| (m.to_string(), version.clone()))
        .collect();
    let manifest = RunManifest {
        format: MANIFEST_FORMAT,
        tool_version: version,
        modules,
        seed,
        scenario_path: scenario_path.to_string(),
        scenario_sha256: sha256_hex(scenario_bytes),
        config: cfg.clone(),
        config_sha256: config_digest(cfg)?,
        entropy_model_id: format!("{:016x}", out.model_id),
        refined_on_frames: out.refined_on,
        outputs,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelParams, VehicleNode};
    use ndarray::array;

    fn pair() -> Scenario {
        Scenario {
            nodes: vec![VehicleNode::new(0, 0.0, 0.0), VehicleNode::new(1, 40.0, 0.0)],
            ego_id: 0,
            data_volumes: array![[0.0, 4e6], [4e6, 0.0]],
            channel: ChannelParams::default(),
            beta: 0.9,
            distance_scale_m: 100.0,
            gamma_min: 0.05,
            min_ego_links: 1,
        }
    }

    fn small_cfg() -> SimConfig {
        SimConfig {
            frames: 3,
            frame_height: 32,
            frame_width: 48,
            ..SimConfig::default()
        }
    }

    fn frames_for(s: &Scenario, cfg: &SimConfig, seed: u64) -> Vec<Vec<ImageTensor>> {
        let file = ScenarioFile {
            scenario: s.clone(),
            images: vec![None; s.len()],
        };
        node_frames(&file, cfg, seed).unwrap()
    }

    #[test]
    fn codec_uses_planned_ratio_and_respects_budgets() {
        let s = pair();
        let cfg = small_cfg();
        let out = simulate(&s, &frames_for(&s, &cfg, 3), &cfg, 3).unwrap();
        assert!(!out.links.is_empty());
        for l in &out.links {
            let (i, j) = (s.index_of(l.src).unwrap(), s.index_of(l.dst).unwrap());
            assert_eq!(l.gamma, out.plan.gamma[(i, j)]);
            assert!(l.mean_frame_bits <= 1.05 * l.frame_budget_bits);
            assert!(l.transmitted_bits <= 1.05 * l.volume_budget_bits);
            assert_eq!(l.frames, 2);
        }
        assert_eq!(out.summary.avg_delay_s, out.plan.avg_delay);
        assert_eq!(out.refined_on, out.links.iter().map(|l| l.src).collect::<std::collections::BTreeSet<_>>().len());
    }

    #[test]
    fn forced_full_ratio_without_alignment_is_near_lossless() {
        let s = pair();
        let cfg = SimConfig {
            gamma_override: Some(1.0),
            align_alpha: 0.0,
            ..small_cfg()
        };
        let out = simulate(&s, &frames_for(&s, &cfg, 5), &cfg, 5).unwrap();
        for l in &out.links {
            assert_eq!(l.gamma, 1.0);
            assert!(l.quant_steps.split(';').all(|q| q == "1"), "{}", l.quant_steps);
            assert!(l.quality.psnr_db > 50.0, "{}", l.quality.psnr_db);
        }
    }

    #[test]
    fn override_below_floor_rejected() {
        let s = pair();
        let cfg = SimConfig {
            gamma_override: Some(0.06),
            ..small_cfg()
        };
        assert!(matches!(
            simulate(&s, &frames_for(&s, &cfg, 1), &cfg, 1),
            Err(SimError::Config { field: "gamma_override", .. })
        ));
    }

    #[test]
    fn csvs_are_deterministic() {
        let s = pair();
        let cfg = small_cfg();
        let run = || {
            let out = simulate(&s, &frames_for(&s, &cfg, 11), &cfg, 11).unwrap();
            render_csvs(&s, &out).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = SimConfig {
            gamma_override: Some(0.5),
            ..SimConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SimConfig>(&text).unwrap(), cfg);
        assert!(serde_json::from_str::<SimConfig>(r#"{"frames": 0}"#).unwrap().validate().is_err());
        assert!(serde_json::from_str::<SimConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
