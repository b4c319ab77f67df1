//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use polarsfp_core::camera::CameraModel;
use polarsfp_core::fresnel::{dop, ReflectionType, GRAZING_CUTOFF};
use polarsfp_core::image::FloatMap;
use polarsfp_core::io::convert;
use polarsfp_core::io::{pfm, psfp};
use polarsfp_core::metrics;
use polarsfp_core::pipeline::{
    self, DepthFrameStack, MaskParams, PipelineError, RefineOptions,
};
use polarsfp_core::polar::{
    decompose as stokes_decompose, synthesize, PolarizerStack, RepresentationVariant,
    DEFAULT_RHO_MIN,
};
use polarsfp_core::solver::{
    render_scene, solve as physics_solve, DirectionMap, Projection, SolveMode, Strategy,
    SyntheticScene,
};
use polarsfp_core::viewing::{
    normalized_coords_map, positional_encoding_map, viewing_direction_map, DEFAULT_PE_BANDS,
};
use polarsfp_net::checkpoint;
use polarsfp_net::data::{assemble_input, pack_target, Sample};
use polarsfp_net::model::{Model, ModelConfig};
use polarsfp_net::train::{train as run_training, TrainConfig};

use crate::{CliError, CliResult};

const STACK_SUFFIXES: [&str; 4] = ["000", "045", "090", "135"];

fn read_gray(path: &Path) -> CliResult<FloatMap> {
    pfm::read_gray(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn read_stack(paths: &[PathBuf]) -> CliResult<PolarizerStack> {
    if paths.len() != 4 {
        return Err(CliError::input(format!(
            "expected 4 polarizer images (0, 45, 90, 135 degrees), got {}",
            paths.len()
        )));
    }
    let mut images = Vec::with_capacity(4);
    for p in paths {
        images.push(read_gray(p)?);
    }
    let arr: [FloatMap; 4] = images.try_into().expect("four images");
    PolarizerStack::new(arr).map_err(|e| CliError::input(e.to_string()))
}

fn write_psfp(path: &Path, tensor: &psfp::PsfpTensor) -> CliResult<()> {
    psfp::write(path, tensor).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn read_psfp(path: &Path) -> CliResult<psfp::PsfpTensor> {
    psfp::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    // Unknown keys are rejected by the serde(deny_unknown_fields) wrappers.
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::input(format!("serialize: {e}")))?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn view_map_for(cam: &CameraModel, mode: SolveMode) -> CliResult<DirectionMap> {
    match mode {
        SolveMode::Orthographic => Ok(DirectionMap::orthographic(cam.width, cam.height)),
        SolveMode::Perspective => {
            cam.validate().map_err(|e| CliError::input(e.to_string()))?;
            let dirs = (0..cam.width * cam.height)
                .map(|i| cam.view_direction((i % cam.width) as f64, (i / cam.width) as f64))
                .collect();
            Ok(DirectionMap::new(cam.width, cam.height, dirs))
        }
    }
}

// ---------------------------------------------------------------- decompose

#[derive(Args)]
pub struct DecomposeArgs {
    /// Four PFM images at polarizer angles 0, 45, 90, 135 degrees.
    #[arg(long = "in", num_args = 4, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RHO_MIN)]
    rho_min: f64,
}

pub fn decompose(args: DecomposeArgs) -> CliResult<()> {
    let stack = read_stack(&args.input)?;
    let stokes = stokes_decompose(&stack, args.rho_min);
    let tensor =
        convert::stokes_to_psfp(&stokes).map_err(|e| CliError::input(e.to_string()))?;
    write_psfp(&args.out, &tensor)
}

// -------------------------------------------------------------------- synth

#[derive(Args)]
pub struct SynthArgs {
    /// Unpolarized intensity map (PFM).
    #[arg(long)]
    iun: PathBuf,
    /// Degree-of-polarization map (PFM).
    #[arg(long)]
    rho: PathBuf,
    /// Angle-of-polarization map (PFM, radians).
    #[arg(long)]
    phi: PathBuf,
    /// Output prefix; writes `<prefix>_000.pfm` .. `<prefix>_135.pfm`.
    #[arg(long)]
    out_prefix: String,
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    let i_un = read_gray(&args.iun)?;
    let rho = read_gray(&args.rho)?;
    let phi = read_gray(&args.phi)?;
    let stack = synthesize(&i_un, &rho, &phi).map_err(|e| CliError::input(e.to_string()))?;
    for (img, suffix) in stack.images().iter().zip(STACK_SUFFIXES) {
        let path = PathBuf::from(format!("{}_{suffix}.pfm", args.out_prefix));
        pfm::write_gray(&path, img)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

// ------------------------------------------------------------------- render

#[derive(Args)]
pub struct RenderArgs {
    /// Scene description (JSON).
    #[arg(long)]
    scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the scene's projection.
    #[arg(long)]
    projection: Option<ProjectionArg>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum ProjectionArg {
    Orthographic,
    Perspective,
}

impl From<ProjectionArg> for Projection {
    fn from(p: ProjectionArg) -> Self {
        match p {
            ProjectionArg::Orthographic => Projection::Orthographic,
            ProjectionArg::Perspective => Projection::Perspective,
        }
    }
}

pub fn render(args: RenderArgs) -> CliResult<()> {
    let scene: SyntheticScene = read_json(&args.scene)?;
    let projection = args.projection.map(Into::into).unwrap_or(scene.projection);
    let out = render_scene(&scene, projection).map_err(|e| CliError::input(e.to_string()))?;
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::input(format!("{}: {e}", args.out.display())))?;
    for (img, suffix) in out.stack.images().iter().zip(STACK_SUFFIXES) {
        pfm::write_gray(&args.out.join(format!("stack_{suffix}.pfm")), img)
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    let gt = convert::normals_to_psfp(&out.gt_normals)
        .map_err(|e| CliError::input(e.to_string()))?;
    write_psfp(&args.out.join("gt_normals.psfp"), &gt)?;
    pfm::write_gray(&args.out.join("depth.pfm"), &out.depth)
        .map_err(|e| CliError::input(e.to_string()))?;
    write_json(&args.out.join("camera.json"), &scene.camera)?;
    write_json(
        &args.out.join("render.json"),
        &serde_json::json!({
            "projection": match projection {
                Projection::Orthographic => "orthographic",
                Projection::Perspective => "perspective",
            },
        }),
    )?;
    Ok(())
}

// -------------------------------------------------------------------- solve

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Orthographic,
    Perspective,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum StrategyArg {
    Smoothness,
    Oracle,
}

#[derive(Args)]
pub struct SolveArgs {
    /// Four PFM images at polarizer angles 0, 45, 90, 135 degrees.
    #[arg(long = "in", num_args = 4, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    eta: f64,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "smoothness")]
    strategy: StrategyArg,
    /// Ground-truth normal map (PSFP); required by the oracle strategy.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Camera intrinsics (JSON); required in perspective mode.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RHO_MIN)]
    rho_min: f64,
    #[arg(long)]
    out: PathBuf,
}

pub fn solve(args: SolveArgs) -> CliResult<()> {
    let stack = read_stack(&args.input)?;
    let mode = match args.mode {
        ModeArg::Orthographic => SolveMode::Orthographic,
        ModeArg::Perspective => SolveMode::Perspective,
    };
    let view = match mode {
        SolveMode::Orthographic => DirectionMap::orthographic(stack.width(), stack.height()),
        SolveMode::Perspective => {
            let cam_path = args
                .camera
                .as_ref()
                .ok_or_else(|| CliError::input("perspective mode needs --camera"))?;
            let cam: CameraModel = read_json(cam_path)?;
            if cam.width != stack.width() || cam.height != stack.height() {
                return Err(CliError::input(format!(
                    "camera is {}x{} but the stack is {}x{}",
                    cam.width,
                    cam.height,
                    stack.width(),
                    stack.height()
                )));
            }
            view_map_for(&cam, mode)?
        }
    };
    let gt_map;
    let strategy = match args.strategy {
        StrategyArg::Smoothness => Strategy::Smoothness,
        StrategyArg::Oracle => {
            let gt_path = args
                .gt
                .as_ref()
                .ok_or_else(|| CliError::input("oracle strategy needs --gt"))?;
            gt_map = convert::psfp_to_normals(&read_psfp(gt_path)?)
                .map_err(|e| CliError::input(e.to_string()))?;
            Strategy::Oracle(&gt_map)
        }
    };
    let normals = physics_solve(&stack, &view, args.eta, mode, strategy, args.rho_min)
        .map_err(|e| CliError::numerical(e.to_string()))?;
    if normals.valid().count_true() == 0 {
        return Err(CliError::numerical("no pixel could be solved"));
    }
    let tensor =
        convert::normals_to_psfp(&normals).map_err(|e| CliError::input(e.to_string()))?;
    write_psfp(&args.out, &tensor)
}

// --------------------------------------------------------------------- prep

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum DepthFormat {
    /// PFM, meters.
    Pfm,
    /// 16-bit PNG, millimeters.
    Png16,
}

/// Camera pair: the depth camera's extrinsics map into the polarization
/// camera's frame.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPair {
    pub depth: CameraModel,
    pub polarization: CameraModel,
}

#[derive(Args)]
pub struct PrepArgs {
    /// Directory of depth frames from a stationary rig.
    #[arg(long)]
    depth_dir: PathBuf,
    #[arg(long, value_enum, default_value = "pfm")]
    depth_format: DepthFormat,
    /// Camera pair (JSON with `depth` and `polarization` models).
    #[arg(long)]
    cams: PathBuf,
    /// Gray image from the depth camera; enables extrinsic refinement.
    #[arg(long)]
    gray: Option<PathBuf>,
    /// Unpolarized intensity from the polarization camera; enables
    /// extrinsic refinement.
    #[arg(long)]
    pol_iun: Option<PathBuf>,
    /// Where to write refined extrinsics (JSON), if refinement runs.
    #[arg(long)]
    out_cams: Option<PathBuf>,
    /// PCA neighborhood size.
    #[arg(long, default_value_t = pipeline::DEFAULT_PCA_NEIGHBORS)]
    k: usize,
    #[arg(long, default_value_t = 5.0)]
    max_range: f64,
    #[arg(long, default_value_t = 10)]
    min_neighbors: usize,
    #[arg(long, default_value_t = 20.0)]
    radius_mm: f64,
    #[arg(long)]
    out: PathBuf,
}

fn read_depth_frame(path: &Path, format: DepthFormat) -> CliResult<FloatMap> {
    match format {
        DepthFormat::Pfm => read_gray(path),
        DepthFormat::Png16 => {
            let img = image::open(path)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
                .into_luma16();
            let (w, h) = img.dimensions();
            Ok(FloatMap::from_fn(w as usize, h as usize, |x, y| {
                img.get_pixel(x as u32, y as u32).0[0] as f64 / 1000.0
            }))
        }
    }
}

pub fn prep(args: PrepArgs) -> CliResult<()> {
    let pair: CameraPair = read_json(&args.cams)?;
    let mut entries: Vec<PathBuf> = fs::read_dir(&args.depth_dir)
        .map_err(|e| CliError::input(format!("{}: {e}", args.depth_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CliError::input(format!(
            "no depth frames in {}",
            args.depth_dir.display()
        )));
    }
    let frames = entries
        .iter()
        .map(|p| read_depth_frame(p, args.depth_format))
        .collect::<CliResult<Vec<_>>>()?;
    let stack = DepthFrameStack::new(frames, pair.depth.clone())
        .map_err(|e| CliError::input(e.to_string()))?;
    let denoised = pipeline::median_denoise(&stack).map_err(|e| CliError::input(e.to_string()))?;

    let mut depth_cam = pair.depth.clone();
    match (&args.gray, &args.pol_iun) {
        (Some(gray_path), Some(iun_path)) => {
            let gray = read_gray(gray_path)?;
            let i_un = read_gray(iun_path)?;
            let result = pipeline::refine_extrinsics(
                &depth_cam,
                &pair.polarization,
                &denoised,
                &gray,
                &i_un,
                &RefineOptions::default(),
            )
            .map_err(|e| match e {
                PipelineError::RefinementInfeasible { .. } => CliError::numerical(e.to_string()),
                other => CliError::input(other.to_string()),
            })?;
            depth_cam = result.refined;
            if let Some(out_cams) = &args.out_cams {
                write_json(
                    out_cams,
                    &CameraPair {
                        depth: depth_cam.clone(),
                        polarization: pair.polarization.clone(),
                    },
                )?;
            }
        }
        (None, None) => {}
        _ => {
            return Err(CliError::input(
                "extrinsic refinement needs both --gray and --pol-iun",
            ))
        }
    }

    let aligned = pipeline::reproject_depth(&denoised, &depth_cam, &pair.polarization);
    let cloud = pipeline::depth_to_pointcloud(&aligned, &pair.polarization);
    let normals =
        pipeline::pca_normals(&cloud, args.k).map_err(|e| CliError::numerical(e.to_string()))?;
    let mask = pipeline::postprocess_mask(
        &normals,
        &cloud,
        &aligned,
        &MaskParams {
            max_range: args.max_range,
            min_neighbors: args.min_neighbors,
            radius: args.radius_mm / 1000.0,
        },
    );
    let normal_map = pipeline::normals_to_map(&normals, &cloud, &mask);
    let tensor =
        convert::normals_to_psfp(&normal_map).map_err(|e| CliError::input(e.to_string()))?;
    write_psfp(&args.out, &tensor)
}

// -------------------------------------------------------------- encode-view

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum ViewingArg {
    V,
    Vc,
    Vp,
    None,
}

#[derive(Args)]
pub struct EncodeViewArgs {
    /// Camera intrinsics (JSON).
    #[arg(long)]
    camera: PathBuf,
    #[arg(long, value_enum)]
    kind: ViewingArg,
    /// Frequency bands for the positional encoding.
    #[arg(long, default_value_t = DEFAULT_PE_BANDS)]
    bands: usize,
    #[arg(long)]
    out: PathBuf,
}

fn build_encoding(
    cam: &CameraModel,
    kind: ViewingArg,
    bands: usize,
) -> CliResult<Option<polarsfp_core::viewing::ViewingEncoding>> {
    let enc = match kind {
        ViewingArg::None => return Ok(None),
        ViewingArg::V => viewing_direction_map(cam),
        ViewingArg::Vc => normalized_coords_map(cam.width, cam.height),
        ViewingArg::Vp => {
            let coords = normalized_coords_map(cam.width, cam.height)
                .map_err(|e| CliError::input(e.to_string()))?;
            positional_encoding_map(&coords, bands)
        }
    }
    .map_err(|e| CliError::input(e.to_string()))?;
    Ok(Some(enc))
}

pub fn encode_view(args: EncodeViewArgs) -> CliResult<()> {
    let cam: CameraModel = read_json(&args.camera)?;
    let enc = build_encoding(&cam, args.kind, args.bands)?
        .ok_or_else(|| CliError::input("encode-view needs a concrete kind (v, vc, or vp)"))?;
    let tensor = convert::encoding_to_psfp(&enc).map_err(|e| CliError::input(e.to_string()))?;
    write_psfp(&args.out, &tensor)
}

// -------------------------------------------------------------------- train

/// Training run description: model shape, optimization settings, and input
/// assembly choices.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default = "default_representation")]
    pub representation: RepresentationVariant,
    #[serde(default = "default_viewing")]
    pub viewing: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub width_factor: f64,
    pub attention_blocks: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_input_norm")]
    pub input_norm: polarsfp_net::layers::NormKind,
    #[serde(default = "default_encoder_norm")]
    pub encoder_norm: polarsfp_net::layers::NormKind,
    #[serde(default = "default_input_norm")]
    pub decoder_norm: polarsfp_net::layers::NormKind,
}

fn default_representation() -> RepresentationVariant {
    RepresentationVariant::Ours
}

fn default_viewing() -> String {
    "v".to_string()
}

fn default_heads() -> usize {
    8
}

fn default_input_norm() -> polarsfp_net::layers::NormKind {
    polarsfp_net::layers::NormKind::Batch
}

fn default_encoder_norm() -> polarsfp_net::layers::NormKind {
    polarsfp_net::layers::NormKind::Instance
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training spec (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory of rendered samples (one subdirectory per sample).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_viewing(name: &str) -> CliResult<ViewingArg> {
    match name {
        "v" => Ok(ViewingArg::V),
        "vc" => Ok(ViewingArg::Vc),
        "vp" => Ok(ViewingArg::Vp),
        "none" => Ok(ViewingArg::None),
        other => Err(CliError::input(format!(
            "unknown viewing encoding {other:?} (expected v, vc, vp, or none)"
        ))),
    }
}

fn viewing_channels(kind: ViewingArg, bands: usize) -> usize {
    match kind {
        ViewingArg::None => 0,
        ViewingArg::V => 3,
        ViewingArg::Vc => 2,
        ViewingArg::Vp => 4 * bands,
    }
}

fn load_samples(
    data_dir: &Path,
    representation: RepresentationVariant,
    viewing: ViewingArg,
) -> CliResult<Vec<Sample>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(data_dir)
        .map_err(|e| CliError::input(format!("{}: {e}", data_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::input(format!(
            "no sample directories under {}",
            data_dir.display()
        )));
    }
    let mut samples = Vec::new();
    for dir in dirs {
        let paths: Vec<PathBuf> = STACK_SUFFIXES
            .iter()
            .map(|s| dir.join(format!("stack_{s}.pfm")))
            .collect();
        let stack = read_stack(&paths)?;
        let cam: CameraModel = read_json(&dir.join("camera.json"))?;
        let enc = build_encoding(&cam, viewing, DEFAULT_PE_BANDS)?;
        let input = assemble_input(&stack, representation, enc.as_ref())
            .map_err(|e| CliError::input(e.to_string()))?;
        let gt = convert::psfp_to_normals(&read_psfp(&dir.join("gt_normals.psfp"))?)
            .map_err(|e| CliError::input(e.to_string()))?;
        let (target, valid) = pack_target(&gt);
        samples.push(Sample {
            input,
            target,
            valid,
        });
    }
    Ok(samples)
}

pub fn train(args: TrainArgs, seed_override: Option<u64>) -> CliResult<()> {
    let spec: TrainSpec = read_json(&args.config)?;
    let viewing = parse_viewing(&spec.viewing)?;
    let samples = load_samples(&args.data, spec.representation, viewing)?;
    let in_channels = 4
        + spec.representation.channel_count()
        + viewing_channels(viewing, DEFAULT_PE_BANDS);
    let expected = samples[0].input.shape()[0];
    debug_assert_eq!(in_channels, expected);

    let mut train_cfg = spec.train.clone();
    if let Some(seed) = seed_override {
        train_cfg.seed = seed;
    }
    let model_cfg = ModelConfig {
        width_factor: spec.model.width_factor,
        attention_blocks: spec.model.attention_blocks,
        heads: spec.model.heads,
        in_channels,
        input_norm: spec.model.input_norm,
        encoder_norm: spec.model.encoder_norm,
        decoder_norm: spec.model.decoder_norm,
    };
    let mut model = Model::<f32>::new(model_cfg, train_cfg.seed)
        .map_err(|e| CliError::input(e.to_string()))?;
    let result = run_training(&mut model, &samples, &train_cfg).map_err(|e| match e {
        polarsfp_net::TrainError::NonFiniteLoss { .. } => CliError::numerical(e.to_string()),
        other => CliError::input(other.to_string()),
    })?;

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::input(format!("{}: {e}", args.out.display())))?;
    checkpoint::save(&args.out, &mut model, result.step_losses.len())
        .map_err(|e| CliError::input(e.to_string()))?;
    write_json(
        &args.out.join("losses.json"),
        &serde_json::json!({
            "step_losses": result.step_losses,
            "epoch_losses": result.epoch_losses,
        }),
    )?;
    println!(
        "trained {} steps; final loss {:.6}",
        result.step_losses.len(),
        result.final_loss()
    );
    Ok(())
}

// -------------------------------------------------------------------- infer

#[derive(Args)]
pub struct InferArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Four PFM images at polarizer angles 0, 45, 90, 135 degrees.
    #[arg(long = "in", num_args = 4, required = true)]
    input: Vec<PathBuf>,
    /// Camera intrinsics (JSON); required for the `v` viewing encoding.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "v")]
    viewing: ViewingArg,
    #[arg(long, value_enum, default_value = "ours")]
    representation: RepresentationArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum RepresentationArg {
    Ours,
    Raw,
    Kondo,
}

impl From<RepresentationArg> for RepresentationVariant {
    fn from(r: RepresentationArg) -> Self {
        match r {
            RepresentationArg::Ours => RepresentationVariant::Ours,
            RepresentationArg::Raw => RepresentationVariant::Raw,
            RepresentationArg::Kondo => RepresentationVariant::Kondo,
        }
    }
}

pub fn infer(args: InferArgs) -> CliResult<()> {
    let stack = read_stack(&args.input)?;
    let (w, h) = (stack.width(), stack.height());
    if w % 16 != 0 || h % 16 != 0 {
        return Err(CliError::input(format!(
            "input dims {w}x{h} must be divisible by 16"
        )));
    }
    let enc = match args.viewing {
        ViewingArg::None => None,
        kind => {
            let cam = match &args.camera {
                Some(path) => read_json(path)?,
                None => match kind {
                    // Coordinate encodings only need the image size.
                    ViewingArg::Vc | ViewingArg::Vp => {
                        CameraModel::pinhole(1.0, 1.0, 0.0, 0.0, w, h)
                    }
                    _ => {
                        return Err(CliError::input(
                            "the v viewing encoding needs --camera",
                        ))
                    }
                },
            };
            build_encoding(&cam, kind, DEFAULT_PE_BANDS)?
        }
    };
    let input = assemble_input(&stack, args.representation.into(), enc.as_ref())
        .map_err(|e| CliError::input(e.to_string()))?;
    let (mut model, _step) = checkpoint::load::<f32>(&args.ckpt)
        .map_err(|e| CliError::input(e.to_string()))?;
    let [c, ih, iw]: [usize; 3] = input.shape().try_into().expect("input is 3d");
    if c != model.config.in_channels {
        return Err(CliError::input(format!(
            "checkpoint expects {} input channels, assembled {}",
            model.config.in_channels, c
        )));
    }
    let mut batched = polarsfp_net::Tensor::<f32>::zeros(&[1, c, ih, iw]);
    batched.data_mut().copy_from_slice(input.data());
    let pred = model
        .forward(&batched)
        .map_err(|e| CliError::numerical(e.to_string()))?;
    let mut normals = polarsfp_core::solver::NormalMap::invalid(iw, ih);
    for y in 0..ih {
        for x in 0..iw {
            let n = polarsfp_core::Vec3::new(
                pred.data()[(0 * ih + y) * iw + x] as f64,
                pred.data()[(ih + y) * iw + x] as f64,
                pred.data()[(2 * ih + y) * iw + x] as f64,
            );
            normals.set(x, y, n.normalize());
        }
    }
    let tensor =
        convert::normals_to_psfp(&normals).map_err(|e| CliError::input(e.to_string()))?;
    write_psfp(&args.out, &tensor)
}

// --------------------------------------------------------------------- eval

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Print the report as JSON instead of the aligned table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report to a file.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let pred = convert::psfp_to_normals(&read_psfp(&args.pred)?)
        .map_err(|e| CliError::input(e.to_string()))?;
    let gt = convert::psfp_to_normals(&read_psfp(&args.gt)?)
        .map_err(|e| CliError::input(e.to_string()))?;
    let (errors, mask) = metrics::angular_error_map(&pred, &gt)
        .map_err(|e| CliError::input(e.to_string()))?;
    let report =
        metrics::summarize(&errors, &mask).map_err(|e| CliError::numerical(e.to_string()))?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::input(format!("serialize: {e}")))?
        );
    } else {
        print!("{}", report.table());
    }
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

// ------------------------------------------------------------ fresnel-table

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum ReflectionArg {
    Diffuse,
    Specular,
}

#[derive(Args)]
pub struct FresnelTableArgs {
    #[arg(long)]
    eta: f64,
    #[arg(long = "type", value_enum)]
    reflection: ReflectionArg,
    /// Viewing-angle step in degrees.
    #[arg(long, default_value_t = 1.0)]
    step_deg: f64,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn fresnel_table(args: FresnelTableArgs) -> CliResult<()> {
    if args.step_deg <= 0.0 {
        return Err(CliError::input("--step-deg must be positive"));
    }
    let reflection = match args.reflection {
        ReflectionArg::Diffuse => ReflectionType::Diffuse,
        ReflectionArg::Specular => ReflectionType::Specular,
    };
    let mut csv = String::from("theta_v_deg,rho\n");
    let mut deg = 0.0_f64;
    while deg.to_radians() < GRAZING_CUTOFF {
        let rho = dop(deg.to_radians(), args.eta, reflection)
            .map_err(|e| CliError::numerical(e.to_string()))?;
        csv.push_str(&format!("{deg:.4},{rho:.12}\n"));
        deg += args.step_deg;
    }
    match &args.out {
        Some(path) => fs::write(path, csv)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?,
        None => print!("{csv}"),
    }
    Ok(())
}
