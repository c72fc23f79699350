//! Training, inference and evaluation runs driven by an [`ExperimentConfig`].

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::io::{self, Dtype};
use super::phantom::{generate_phantoms, Dataset, Split};
use super::report::{ReconstructionReport, ReportRow};
use crate::error::{Error, Result};
use crate::errornet::weights::{load_network, save_network};
use crate::errornet::{self, build_ecnet, fit, train, AblationMode, LossHistory, Network, Precision, TrainSample, Wiring};
use crate::fidelity::{fuse, FidelityWeight};
use crate::fourier::{ComplexImage, KSpaceGrid};
use crate::guide::{CascadeModel, CascadeSample, GuideKind, GuideSolver};
use crate::metrics::QualityScore;
use crate::sampling::{measure, zero_fill, MaskPattern, SamplingMask};

pub const ECNET_WEIGHTS: &str = "ecnet.weights";
pub const LOSS_CSV: &str = "loss.csv";
pub const GUIDE_LOSS_CSV: &str = "guide_loss.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const MASK_FILE: &str = "mask.cplx";
pub const DATASET_MANIFEST: &str = "dataset.toml";

pub fn image_id(index: usize) -> String {
    format!("img_{index:04}")
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    seed: u64,
    height: usize,
    width: usize,
    peaks: Vec<f64>,
    ellipse_counts: Vec<usize>,
    split: Split,
}

/// Writes every image (f64) plus a manifest with the split and peaks.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (height, width) = data.images.first().map(ComplexImage::dims).unwrap_or((0, 0));
    for (i, img) in data.images.iter().enumerate() {
        io::save_image(&dir.join(format!("{}.cplx", image_id(i))), img, Dtype::F64)?;
    }
    let manifest = DatasetManifest {
        seed: data.seed,
        height,
        width,
        peaks: data.peaks.clone(),
        ellipse_counts: data.ellipse_counts.clone(),
        split: data.split.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(DATASET_MANIFEST), text)?;
    Ok(())
}

pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    let path = dir.join(DATASET_MANIFEST);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let manifest: DatasetManifest =
        toml::from_str(&fs::read_to_string(&path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let images = (0..manifest.peaks.len())
        .map(|i| io::load_image(&dir.join(format!("{}.cplx", image_id(i)))))
        .collect::<Result<Vec<_>>>()?;
    for img in &images {
        if img.dims() != (manifest.height, manifest.width) {
            return Err(Error::Format("dataset image size disagrees with the manifest".into()));
        }
    }
    let n = images.len();
    if manifest.split.train.iter().chain(&manifest.split.test).any(|&i| i >= n) {
        return Err(Error::Format("split refers to a missing image".into()));
    }
    Ok(Dataset {
        images,
        split: manifest.split,
        seed: manifest.seed,
        peaks: manifest.peaks,
        ellipse_counts: manifest.ellipse_counts,
    })
}

/// The dataset named by the config: loaded from `dataset.path` or generated.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset.path {
        Some(dir) => load_dataset_dir(dir),
        None => generate_phantoms(cfg.dataset.count, cfg.dataset.height, cfg.dataset.width, cfg.dataset.seed),
    }
}

fn image_dims(data: &Dataset) -> Result<(usize, usize)> {
    data.images
        .first()
        .map(ComplexImage::dims)
        .ok_or_else(|| Error::Parameter("dataset is empty".into()))
}

/// Measurement, zero-filled image and guide for one reference image.
#[derive(Clone, Debug)]
pub struct Measured {
    pub index: usize,
    pub truth: ComplexImage,
    pub y: KSpaceGrid,
    pub zf: ComplexImage,
    pub guide: ComplexImage,
}

pub fn measure_all(solver: &GuideSolver, mask: &SamplingMask, data: &Dataset, indices: &[usize]) -> Result<Vec<Measured>> {
    indices
        .par_iter()
        .map(|&index| {
            let truth = data.images[index].clone();
            let y = measure(&truth, mask)?;
            let zf = zero_fill(&y, mask)?;
            let guide = solver.reconstruct(&y, mask)?;
            Ok(Measured {
                index,
                truth,
                y,
                zf,
                guide,
            })
        })
        .collect()
}

pub struct TrainingArtifacts {
    pub ecnet: Network,
    pub history: LossHistory,
    pub guide_history: Option<LossHistory>,
}

fn write_run_header(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    fs::write(cfg.output_dir.join("fingerprint.txt"), format!("{:016x}\n", cfg.fingerprint()))?;
    Ok(())
}

/// Trains the cascade guide when configured, then the error-correction net,
/// and writes weights, loss curves, mask and config into `cfg.output_dir`.
pub fn run_training(cfg: &ExperimentConfig, data: &Dataset) -> Result<TrainingArtifacts> {
    cfg.validate()?;
    if data.split.train.is_empty() {
        return Err(Error::Parameter("training split is empty".into()));
    }
    write_run_header(cfg)?;
    let out = &cfg.output_dir;
    let (h, w) = image_dims(data)?;
    let mask = Arc::new(cfg.mask.build(h, w)?);
    io::save_mask(&out.join(MASK_FILE), &mask)?;

    let mut solver = cfg.guide.solver();
    let mut guide_history = None;
    if let GuideKind::CascadeCnn(cascade_cfg) = &cfg.guide.kind {
        let samples = data
            .train_images()
            .map(|(_, truth)| CascadeSample::new(truth.clone(), measure(truth, &mask)?, mask.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut model = CascadeModel::build(cascade_cfg.clone(), cfg.guide_train.seed)?;
        let history = fit(&mut model, &samples, &cfg.guide_train)?;
        model.save(&solver.weights_path(out))?;
        fs::write(out.join(GUIDE_LOSS_CSV), history.to_csv())?;
        solver.set_cascade(model)?;
        guide_history = Some(history);
    }

    let measured = measure_all(&solver, &mask, data, &data.split.train)?;
    let samples = measured
        .into_iter()
        .map(|m| TrainSample::new(m.truth, m.guide, m.zf, m.y, mask.clone()))
        .collect::<Result<Vec<_>>>()?;
    let wiring = cfg.ecnet.wiring();
    let mut net = build_ecnet(cfg.ecnet.depth, cfg.ecnet.features, wiring.ablation.in_channels(), cfg.train.seed)?;
    net.set_precision(cfg.ecnet.precision);
    let (mut ecnet, history) = train(net, &samples, wiring, &cfg.train)?;
    ecnet.set_precision(Precision::F64);
    save_network(&out.join(ECNET_WEIGHTS), &ecnet)?;
    fs::write(out.join(LOSS_CSV), history.to_csv())?;
    Ok(TrainingArtifacts {
        ecnet,
        history,
        guide_history,
    })
}

/// Intermediate and final images of one inference.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub zf: ComplexImage,
    pub guide: ComplexImage,
    pub residual: ComplexImage,
    pub image: ComplexImage,
}

/// Guide, trained network and fusion weight, ready for inference.
pub struct Reconstructor {
    pub guide: GuideSolver,
    pub net: Network,
    pub wiring: Wiring,
    pub alpha: FidelityWeight,
}

impl Reconstructor {
    pub fn new(guide: GuideSolver, net: Network, wiring: Wiring, alpha: FidelityWeight) -> Result<Self> {
        if net.in_channels() != wiring.ablation.in_channels() || net.out_channels() != 2 {
            return Err(Error::Dimension(format!(
                "network has {} inputs and {} outputs; {} needs {} and 2",
                net.in_channels(),
                net.out_channels(),
                wiring.ablation.name(),
                wiring.ablation.in_channels()
            )));
        }
        Ok(Self {
            guide,
            net,
            wiring,
            alpha,
        })
    }

    /// Loads the weights written by [`run_training`] for `cfg`.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let mut guide = cfg.guide.solver();
        guide.load_weights(&cfg.output_dir)?;
        let net = load_network(&cfg.output_dir.join(ECNET_WEIGHTS))?;
        Self::new(guide, net, cfg.ecnet.wiring(), cfg.fidelity_weight())
    }

    /// `fuse(y, mask, guide, residual, alpha)` with the residual predicted
    /// by the network.
    pub fn reconstruct(&self, y: &KSpaceGrid, mask: &SamplingMask) -> Result<Reconstruction> {
        let zf = zero_fill(y, mask)?;
        let guide = self.guide.reconstruct(y, mask)?;
        let output = errornet::forward(&self.net, &zf, &guide, self.wiring)?;
        let residual = self.wiring.residual_estimate(&guide, &output);
        let image = fuse(y, mask, &guide, &residual, self.alpha)?;
        Ok(Reconstruction {
            zf,
            guide,
            residual,
            image,
        })
    }
}

/// Reconstructs one measurement with the trained artifacts of `cfg`,
/// scoring it when a reference is supplied.
pub fn run_reconstruction(
    cfg: &ExperimentConfig,
    y: &KSpaceGrid,
    mask: &SamplingMask,
    reference: Option<&ComplexImage>,
) -> Result<(Reconstruction, Option<QualityScore>)> {
    let rec = Reconstructor::load(cfg)?.reconstruct(y, mask)?;
    let score = reference.map(|r| QualityScore::evaluate(r, &rec.image)).transpose()?;
    Ok((rec, score))
}

/// Paths of the per-image evaluation outputs.
pub fn image_path(out: &Path, index: usize, what: &str) -> PathBuf {
    out.join("images").join(format!("{}_{what}.cplx", image_id(index)))
}

fn save_eval_images(out: &Path, index: usize, m: &Measured, r: &Reconstruction) -> Result<()> {
    for (what, img) in [
        ("truth", &m.truth),
        ("zf", &r.zf),
        ("guide", &r.guide),
        ("residual", &r.residual),
        ("decn", &r.image),
    ] {
        io::save_image(&image_path(out, index, what), img, Dtype::F64)?;
    }
    io::save_kspace(&image_path(out, index, "kspace"), &m.y, Dtype::F64)?;
    let pgm = |what: &str| out.join("images").join(format!("{}_{what}.pgm", image_id(index)));
    io::save_magnitude_pgm(&pgm("decn"), &r.image)?;
    io::save_magnitude_pgm(&pgm("guide"), &r.guide)?;
    io::save_error_pgm(&pgm("decn_error"), &m.truth, &r.image)?;
    io::save_error_pgm(&pgm("guide_error"), &m.truth, &r.guide)?;
    Ok(())
}

/// Scores guide-only and full reconstructions on every test image, writing
/// `report.csv` and the per-image outputs under `cfg.output_dir`.
pub fn run_evaluation(cfg: &ExperimentConfig, data: &Dataset) -> Result<ReconstructionReport> {
    cfg.validate()?;
    let rec = Reconstructor::load(cfg)?;
    let (h, w) = image_dims(data)?;
    let mask = cfg.mask.build(h, w)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out.join("images"))?;

    let rows = data
        .split
        .test
        .par_iter()
        .map(|&index| {
            let truth = &data.images[index];
            let y = measure(truth, &mask)?;
            let r = rec.reconstruct(&y, &mask)?;
            let m = Measured {
                index,
                truth: truth.clone(),
                y,
                zf: r.zf.clone(),
                guide: r.guide.clone(),
            };
            save_eval_images(out, index, &m, &r)?;
            Ok(ReportRow {
                image_id: image_id(index),
                guide: QualityScore::evaluate(truth, &r.guide)?,
                decn: QualityScore::evaluate(truth, &r.image)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = ReconstructionReport {
        fingerprint: cfg.fingerprint(),
        rows,
    };
    fs::write(out.join(REPORT_CSV), report.to_csv())?;
    Ok(report)
}

/// The six sampling settings of the evaluation table: two patterns at 20,
/// 30 and 40 percent.
pub fn table2_settings() -> Vec<(MaskPattern, f64)> {
    [MaskPattern::Cartesian1D, MaskPattern::Random2D]
        .into_iter()
        .flat_map(|p| [0.2, 0.3, 0.4].into_iter().map(move |r| (p, r)))
        .collect()
}

fn pattern_name(p: MaskPattern) -> &'static str {
    match p {
        MaskPattern::Cartesian1D => "cartesian",
        MaskPattern::Random2D => "random",
        MaskPattern::Full => "full",
    }
}

/// Train and evaluate every table setting in `<output_dir>/tableII/<setting>`
/// and write a summary CSV of the mean scores.
pub fn sweep_table2(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<(String, ReconstructionReport)>> {
    let mut results = Vec::new();
    let root = cfg.output_dir.join("tableII");
    for (pattern, ratio) in table2_settings() {
        let name = format!("{}_{:02}", pattern_name(pattern), (ratio * 100.0).round() as u32);
        let mut sub = cfg.clone();
        sub.mask.pattern = pattern;
        sub.mask.ratio = ratio;
        sub.mask.center_fraction = None;
        sub.output_dir = root.join(&name);
        run_training(&sub, data)?;
        results.push((name, run_evaluation(&sub, data)?));
    }
    fs::write(root.join("summary.csv"), summary_csv(&results))?;
    Ok(results)
}

/// Train and evaluate each ablation mode in `<output_dir>/ablation/<MODE>`.
pub fn sweep_ablation(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<(String, ReconstructionReport)>> {
    let mut results = Vec::new();
    let root = cfg.output_dir.join("ablation");
    for mode in AblationMode::ALL {
        let mut sub = cfg.clone();
        sub.ecnet.ablation = mode;
        sub.output_dir = root.join(mode.name());
        run_training(&sub, data)?;
        results.push((mode.name().to_string(), run_evaluation(&sub, data)?));
    }
    fs::write(root.join("summary.csv"), summary_csv(&results))?;
    Ok(results)
}

pub fn summary_csv(results: &[(String, ReconstructionReport)]) -> String {
    let mut out = String::from("setting,guide_psnr,guide_ssim,decn_psnr,decn_ssim,delta_psnr,delta_ssim\n");
    for (name, report) in results {
        out.push_str(name);
        for v in report.means() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
