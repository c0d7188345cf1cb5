//! Subcommand implementations. Every output goes through an atomic write.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use spiralcine::acquisition::RawAcquisition;
use spiralcine::coils::{
    temporal_average, walsh_maps, SensitivityMaps, UnionGridder, DEFAULT_BLOCK_SIZE, DEFAULT_DIVISOR,
};
use spiralcine::evalstats::{bland_altman, bland_altman_csv, dice, nrmse, psnr};
use spiralcine::gating::{bin_segmented, detect_cycles, extract_gating, CycleDetection, GatingParams, GatingSignal};
use spiralcine::io::{
    atomic_write, read_imgs, read_mask, read_rawk, read_traj, write_imgs, write_mask, write_rawk, write_traj,
    ImageStack,
};
use spiralcine::phantom::{generate_coils, generate_phantom, simulate_series_kspace, CardiacTiming, PhantomConfig};
use spiralcine::recon::{
    frame_data, gridding_result, lrs, reconstruct_frames, CoilCombine, FistaParams, FrameMethod, FramePlans, LrsParams,
    ReconResult,
};
use spiralcine::trajectory::{
    build_schedule, design_spiral, gstf_correct, GstfModel, InterleaveSet, SpiralDesign, Trajectory,
};
use spiralcine::volumetry::{analyze, mask_to_volume, ExtremaParams};
use spiralcine::xsdnet::{normalize_interim, random_weights, Manifest, ModelConfig, XsdNet};
use spiralcine::{label, Geometry, ImageSeries, SegmentationMask};

use crate::failure::{CliResult, Context, Failure};
use crate::{
    AcquireArgs, BinArgs, Command, DesignArgs, EvalCommand, GateArgs, InferArgs, PhantomCommand, ReconArgs,
    ReconMethod, TrajCommand, VolumetryArgs, WeightsCommand,
};

pub const IMAGES_FILE: &str = "images.imgs";
pub const MASKS_FILE: &str = "masks.mask";
pub const TRUTH_FILE: &str = "truth.json";

/// Ground truth written next to the phantom images.
#[derive(Debug, Serialize, Deserialize)]
pub struct Truth {
    pub config: PhantomConfig,
    /// mL
    pub analytic_edv: f64,
    /// mL
    pub analytic_esv: f64,
    /// percent
    pub analytic_ef: f64,
    /// mL per frame
    pub true_volume_curve: Vec<f64>,
    pub cycle_boundaries: Vec<usize>,
    pub timing: CardiacTiming,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GateReport {
    pub params: GatingParams,
    pub cycles: CycleDetection,
    /// ms
    pub spacings: Vec<f64>,
    pub signal: GatingSignal,
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Phantom {
            action:
                PhantomCommand::Gen {
                    config,
                    ejection_fraction,
                    out,
                },
        } => phantom_gen(config.as_deref(), ejection_fraction, &out),
        Command::Traj { action } => traj(action),
        Command::Acquire(args) => acquire(&args),
        Command::Recon(args) => recon(&args),
        Command::Gate(args) => gate(&args),
        Command::Bin(args) => bin(&args),
        Command::Infer(args) => infer(&args),
        Command::Volumetry(args) => volumetry(&args),
        Command::Eval { action } => eval(action),
        Command::Weights {
            action: WeightsCommand::Init { config, seed, out },
        } => weights_init(config.as_deref(), seed, &out),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).at(path)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).at(path)
}

/// TOML for `.toml` files, JSON otherwise.
fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
        toml::from_str(&text).map_err(|e| Failure::new("invalid_config", e.to_string()).in_file(path))
    } else {
        serde_json::from_str(&text).map_err(|e| Failure::new("invalid_config", e.to_string()).in_file(path))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes).at(path)
}

/// Writes to `out`, or prints to stdout without it.
fn emit(out: Option<&Path>, value: &impl Serialize) -> CliResult<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn phantom_gen(config: Option<&Path>, ejection_fraction: Option<f64>, out: &Path) -> CliResult<()> {
    let mut cfg = match config {
        Some(path) => read_config::<PhantomConfig>(path)?,
        None => PhantomConfig::default(),
    };
    if let Some(ef) = ejection_fraction {
        if !(0.0..1.0).contains(&ef) {
            return Err(Failure::usage(format!("--ejection-fraction {ef} outside [0, 1)")));
        }
        cfg = cfg.with_ejection_fraction(ef);
    }
    let phantom = generate_phantom(&cfg)?;
    fs::create_dir_all(out).at(out)?;
    let images = out.join(IMAGES_FILE);
    write_imgs(&images, &ImageStack::from_series(&phantom.images)).at(&images)?;
    let masks = out.join(MASKS_FILE);
    write_mask(&masks, &phantom.masks).at(&masks)?;
    let (edv, esv) = phantom.analytic_edv_esv();
    let truth = Truth {
        config: cfg,
        analytic_edv: edv,
        analytic_esv: esv,
        analytic_ef: 100.0 * (edv - esv) / edv,
        true_volume_curve: phantom.true_volume_curve,
        cycle_boundaries: phantom.cycle_boundaries,
        timing: phantom.timing,
    };
    write_json(&out.join(TRUTH_FILE), &truth)
}

impl DesignArgs {
    fn is_empty(&self) -> bool {
        self.fov.is_none()
            && self.resolution.is_none()
            && self.n_arms.is_none()
            && self.max_gradient.is_none()
            && self.max_slew.is_none()
            && self.dwell_time.is_none()
            && self.max_readout.is_none()
    }

    fn design(&self) -> SpiralDesign {
        let d = SpiralDesign::default();
        SpiralDesign {
            fov: self.fov.unwrap_or(d.fov),
            resolution: self.resolution.unwrap_or(d.resolution),
            n_arms: self.n_arms.unwrap_or(d.n_arms),
            max_gradient: self.max_gradient.unwrap_or(d.max_gradient),
            max_slew: self.max_slew.unwrap_or(d.max_slew),
            dwell_time: self.dwell_time.unwrap_or(d.dwell_time),
            max_readout: self.max_readout.unwrap_or(d.max_readout),
        }
    }
}

fn traj(action: TrajCommand) -> CliResult<()> {
    match action {
        TrajCommand::Design { design, out } => {
            let set = design_spiral(&design.design())?;
            let t = Trajectory::from_schedule(&set, &build_schedule(&set, 1, 1)?);
            write_traj(&out, &t).at(&out)
        }
        TrajCommand::Schedule {
            traj,
            design,
            orientations,
            frames_per_orientation,
            out,
        } => {
            let set = match traj {
                Some(path) if design.is_empty() => {
                    let base = read_traj(&path).at(&path)?;
                    InterleaveSet::new(base.base_arm(), base.arms_per_frame)
                }
                Some(_) => return Err(Failure::usage("--traj cannot be combined with design flags")),
                None => design_spiral(&design.design())?,
            };
            let schedule = build_schedule(&set, orientations, frames_per_orientation)?;
            write_traj(&out, &Trajectory::from_schedule(&set, &schedule)).at(&out)
        }
        TrajCommand::Gstf {
            traj,
            model,
            delay,
            cutoff,
            max_freq,
            out,
        } => {
            let model = match (model, delay, cutoff) {
                (Some(path), _, _) => {
                    let m: GstfModel = read_json(&path)?;
                    GstfModel::new(m.frequencies, m.response, m.delay).at(&path)?
                }
                (None, d, Some(c)) => GstfModel::first_order_low_pass(c, d.unwrap_or(0.0), max_freq),
                (None, Some(d), None) => GstfModel::pure_delay(d, max_freq),
                (None, None, None) => return Err(Failure::usage("one of --model, --delay or --cutoff is required")),
            };
            let t = read_traj(&traj).at(&traj)?;
            let corrected = gstf_correct(&t.base_arm(), &model)?;
            write_traj(&out, &t.with_base_arm(&corrected)).at(&out)
        }
    }
}

/// How the RAWK header names its trajectory: the bare file name when both
/// files share a directory, an absolute path otherwise.
fn trajectory_reference(traj: &Path, out: &Path) -> CliResult<String> {
    let canonical = |p: &Path| -> CliResult<PathBuf> {
        let dir = match p.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        fs::canonicalize(dir).at(dir)
    };
    let traj_dir = canonical(traj)?;
    let name = traj
        .file_name()
        .ok_or_else(|| Failure::usage("--traj must name a file"))?;
    if traj_dir == canonical(out)? {
        Ok(name.to_string_lossy().into_owned())
    } else {
        Ok(traj_dir.join(name).to_string_lossy().into_owned())
    }
}

fn acquire(args: &AcquireArgs) -> CliResult<()> {
    let truth_path = args.phantom.join(TRUTH_FILE);
    let truth: Truth = read_json(&truth_path)?;
    let images_path = args.phantom.join(IMAGES_FILE);
    let images = read_imgs(&images_path).at(&images_path)?.to_series().at(&images_path)?;
    let trajectory = read_traj(&args.traj).at(&args.traj)?;
    let coils = generate_coils(args.coils, images.height, args.coil_seed)?;
    let raw = simulate_series_kspace(
        &images,
        truth.config.frame_dt,
        args.slice,
        &coils,
        &trajectory,
        args.noise,
        args.seed,
    )?;
    let reference = trajectory_reference(&args.traj, &args.out)?;
    write_rawk(&args.out, &raw, &reference).at(&args.out)
}

/// Walsh maps of the temporally averaged coil images.
pub fn estimate_maps(raw: &RawAcquisition) -> spiralcine::Result<SensitivityMaps> {
    let gridder = UnionGridder::for_acquisition(raw)?;
    let average = temporal_average(raw, &gridder)?;
    walsh_maps(&average, DEFAULT_BLOCK_SIZE, DEFAULT_DIVISOR)
}

fn recon(args: &ReconArgs) -> CliResult<()> {
    let raw = read_rawk(&args.raw).at(&args.raw)?;
    let plans = FramePlans::for_acquisition(&raw)?;
    let frames: Vec<usize> = (0..raw.n_frames).collect();
    let results: Vec<ReconResult> = match args.method {
        ReconMethod::Gridding => frames
            .par_iter()
            .map(|&f| {
                let o = raw.orientation(f);
                gridding_result(
                    &frame_data(&raw, f),
                    &plans.plans[o],
                    &plans.weights[o],
                    CoilCombine::Rss,
                )
            })
            .collect::<spiralcine::Result<_>>()?,
        ReconMethod::Cgsense => {
            let maps = Arc::new(estimate_maps(&raw)?);
            let method = FrameMethod::CgSense {
                iters: args.iters.unwrap_or(10),
                density_weighting: args.density_weighting,
            };
            reconstruct_frames(&raw, &plans, &maps, &method, &frames, true)?
        }
        ReconMethod::Cs => {
            let maps = Arc::new(estimate_maps(&raw)?);
            let d = FistaParams::default();
            let params = FistaParams {
                lambda: args.lambda.unwrap_or(d.lambda),
                iters: args.iters.unwrap_or(d.iters),
                ..d
            };
            reconstruct_frames(&raw, &plans, &maps, &FrameMethod::L1Wavelet(params), &frames, true)?
        }
        ReconMethod::Lrs => {
            let maps = Arc::new(estimate_maps(&raw)?);
            let d = LrsParams::default();
            let params = LrsParams {
                lambda_l: args.lambda_l.unwrap_or(d.lambda_l),
                lambda_s: args.lambda_s.unwrap_or(d.lambda_s),
                iters: args.iters.unwrap_or(d.iters),
                ..d
            };
            let ops = plans.operators(&raw, &maps, true)?;
            let data: Vec<_> = frames.iter().map(|&f| frame_data(&raw, f)).collect();
            vec![lrs(&data, &ops, &params)?]
        }
    };
    let images: Vec<Array2<_>> = results.iter().flat_map(|r| r.images.iter().cloned()).collect();
    let stack = ImageStack::from_complex_frames(&images, raw.pixel_size, args.slice_thickness)?;
    write_imgs(&args.out, &stack).at(&args.out)?;
    if let Some(report) = &args.report {
        let history: Vec<Value> = results.iter().map(ReconResult::history_json).collect();
        write_json(report, &json!({ "n_frames": images.len(), "results": history }))?;
    }
    Ok(())
}

fn gate(args: &GateArgs) -> CliResult<()> {
    let params: GatingParams = match &args.params {
        Some(path) => read_config(path)?,
        None => GatingParams::default(),
    };
    let raw = read_rawk(&args.raw).at(&args.raw)?;
    let signal = extract_gating(&raw, &params)?;
    let cycles = detect_cycles(&signal, &params)?;
    let report = GateReport {
        params,
        spacings: cycles.spacings(),
        cycles,
        signal,
    };
    write_json(&args.out, &report)
}

fn bin(args: &BinArgs) -> CliResult<()> {
    let raw = read_rawk(&args.raw).at(&args.raw)?;
    let gating: GateReport = read_json(&args.gating)?;
    let gridder = UnionGridder::for_acquisition(&raw)?;
    let (set, images) = bin_segmented(&raw, &gating.cycles.boundaries, args.phases, &gridder)?;
    let series = ImageSeries::from_frames(images.combined, raw.pixel_size, args.slice_thickness)?;
    write_imgs(&args.out, &ImageStack::from_series(&series)).at(&args.out)?;
    if let Some(report) = &args.report {
        let value = json!({
            "phase_count": set.phase_count,
            "cycles": set.cycles,
            "phases": set.phases,
        });
        write_json(report, &value)?;
    }
    Ok(())
}

fn infer(args: &InferArgs) -> CliResult<()> {
    let net = XsdNet::load(&args.weights).at(&args.weights)?;
    let series = read_imgs(&args.interim)
        .at(&args.interim)?
        .to_series()
        .at(&args.interim)?;
    let frames: Vec<Array2<f32>> = (0..series.n_slices)
        .flat_map(|s| (0..series.n_frames).map(move |f| (s, f)))
        .map(|(s, f)| normalize_interim(&series.frame(s, f).to_owned()))
        .collect();
    let outputs = net.infer_frames(&frames, true)?;
    let mut recon = ImageSeries::<f64>::zeros(
        series.height,
        series.width,
        series.n_frames,
        series.n_slices,
        series.pixel_size,
        series.slice_thickness,
    );
    let mut seg = SegmentationMask::zeros(
        series.height,
        series.width,
        series.n_frames,
        series.n_slices,
        series.pixel_size,
        series.slice_thickness,
    );
    let len = series.frame_len();
    for (i, out) in outputs.iter().enumerate() {
        let (r, m) = (
            &mut recon.data[i * len..(i + 1) * len],
            &mut seg.data[i * len..(i + 1) * len],
        );
        r.iter_mut()
            .zip(out.reconstruction.iter())
            .for_each(|(d, &v)| *d = v as f64);
        m.copy_from_slice(out.segmentation.mask.as_slice().expect("standard layout"));
    }
    write_imgs(&args.out_recon, &ImageStack::from_series(&recon)).at(&args.out_recon)?;
    write_mask(&args.out_seg, &seg).at(&args.out_seg)
}

fn mask_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .at(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .at(path)?;
    files.retain(|p| p.extension().is_some_and(|e| e == "mask"));
    files.sort();
    if files.is_empty() {
        return Err(Failure::new("volumetry", "no .mask files found").in_file(path));
    }
    Ok(files)
}

fn volumetry(args: &VolumetryArgs) -> CliResult<()> {
    let stacks = mask_files(&args.masks)?
        .iter()
        .map(|p| read_mask(p).at(p))
        .collect::<CliResult<Vec<_>>>()?;
    let first = &stacks[0];
    let geometry = Geometry {
        pixel_size: args.pixel_size.unwrap_or(first.pixel_size),
        slice_thickness: args.thickness.unwrap_or(first.slice_thickness),
    };
    let d = ExtremaParams::default();
    let params = ExtremaParams {
        min_prominence: args.min_prominence.unwrap_or(d.min_prominence),
        min_separation: args.min_separation.unwrap_or(d.min_separation),
    };
    let curve = mask_to_volume(&stacks, geometry, args.frame_dt)?;
    write_json(&args.out, &analyze(curve, &params)?)
}

fn eval(action: EvalCommand) -> CliResult<()> {
    match action {
        EvalCommand::Ba { a, b, csv, out } => {
            let (x, y): (Vec<f64>, Vec<f64>) = (read_json(&a)?, read_json(&b)?);
            let result = bland_altman(&x, &y)?;
            if let Some(path) = csv {
                atomic_write(&path, bland_altman_csv(&x, &y)?.as_bytes()).at(&path)?;
            }
            emit(out.as_deref(), &result)
        }
        EvalCommand::Nrmse { a, b, out } => {
            let x = read_imgs(&a).at(&a)?.to_series().at(&a)?;
            let r = read_imgs(&b).at(&b)?.to_series().at(&b)?;
            let value = json!({
                "nrmse": nrmse(&x.data, &r.data)?,
                "psnr": psnr(&x.data, &r.data)?,
            });
            emit(out.as_deref(), &value)
        }
        EvalCommand::Dice { a, b, out } => {
            let (x, y) = (read_mask(&a).at(&a)?, read_mask(&b).at(&b)?);
            let mut scores = serde_json::Map::new();
            for class in 1..label::COUNT {
                let v = dice(&x.data, &y.data, class as u8)?;
                scores.insert(label::NAMES[class].into(), json!(v));
            }
            emit(out.as_deref(), &scores)
        }
    }
}

fn weights_init(config: Option<&Path>, seed: u64, out: &Path) -> CliResult<()> {
    let cfg = match config {
        Some(path) => read_config::<ModelConfig>(path)?,
        None => ModelConfig::default(),
    };
    let store = random_weights(&Manifest::standard(&cfg), seed)?;
    store.save(out).at(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_configs_agree() {
        let dir = tempfile::tempdir().unwrap();
        let (t, j) = (dir.path().join("c.toml"), dir.path().join("c.json"));
        fs::write(&t, "grid_size = 32\nheart_period = 900.0\n").unwrap();
        fs::write(&j, r#"{"grid_size": 32, "heart_period": 900.0}"#).unwrap();
        let a: PhantomConfig = read_config(&t).unwrap();
        assert_eq!(a, read_config::<PhantomConfig>(&j).unwrap());
        assert_eq!((a.grid_size, a.n_slices), (32, PhantomConfig::default().n_slices));
        fs::write(&t, "grid_size = \"big\"").unwrap();
        let err = read_config::<PhantomConfig>(&t).unwrap_err();
        assert_eq!(
            (err.kind, err.file.as_deref()),
            ("invalid_config", Some(t.to_str().unwrap()))
        );
    }

    #[test]
    fn trajectory_reference_is_relative_only_within_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("sub");
        fs::create_dir(&sub).unwrap();
        let traj = dir.path().join("t.traj");
        assert_eq!(
            trajectory_reference(&traj, &dir.path().join("r.rawk")).unwrap(),
            "t.traj"
        );
        let other = trajectory_reference(&traj, &sub.join("r.rawk")).unwrap();
        assert!(Path::new(&other).is_absolute() && other.ends_with("t.traj"));
    }

    #[test]
    fn format_errors_keep_their_offset() {
        let f: Failure = spiralcine::Error::Format {
            path: "a.imgs".into(),
            offset: 17,
            message: "bad".into(),
        }
        .into();
        let v: Value = serde_json::from_str(&f.in_file(Path::new("other")).to_json()).unwrap();
        assert_eq!(
            v,
            json!({"kind": "format", "message": "bad", "file": "a.imgs", "offset": 17})
        );
    }
}
