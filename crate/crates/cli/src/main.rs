//! faceveil command line: synthesize models, fit faces, cluster identities,
//! replace them, obfuscate, render, train the inpainter, evaluate, and run
//! the full pipeline.

use clap::{Args, Parser, Subcommand};
use faceveil::error::Error;
use faceveil::eval::{mask_ssim, ssim, ProxyRecognizer};
use faceveil::fit::{
    e_loss, fit_full, init_pose_from_landmarks, refine_pose_expression, EnergyWeights, FitProblem,
    FitReport,
};
use faceveil::identity::{cluster_identities, extract_identity, ClusterSet};
use faceveil::image::ImageRgb;
use faceveil::imageops::{
    head_mask_from_bbox, load_annotations, load_landmarks, obfuscate_region, HeadAnnotation,
    ObfuscationMode,
};
use faceveil::inpaint::{
    save_checkpoint, train, Checkpoint, DiscConfig, Discriminator, Generator, TrainConfig,
    UNetConfig,
};
use faceveil::model::{Camera, FaceModel, SemanticParams};
use faceveil::pipeline::{
    modality_matrix, run_pipeline, FaceSource, PipelineAssets, PipelineConfig, PipelineInput,
};
use faceveil::render::{face_mask, rasterize};
use faceveil::scenes::make_train_items;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "faceveil",
    version,
    about = "Parametric face replacement and head inpainting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic face model and write it as an FM3D container.
    SynthModel(SynthModelArgs),
    /// Fit the face model to an image given its landmarks.
    Fit(FitArgs),
    /// Cluster identity vectors from fit reports into k centroids.
    Cluster(ClusterArgs),
    /// Replace the identity block of a fit report from a cluster set.
    Replace(ReplaceArgs),
    /// Blur or black out face and hair regions of an image.
    Obfuscate(ObfuscateArgs),
    /// Render the face described by a fit report.
    Render(RenderArgs),
    /// Train the stage-II inpainter on synthetic scenes.
    TrainInpaint(TrainInpaintArgs),
    /// SSIM / mask-SSIM between two images.
    Eval(EvalArgs),
    /// Run the two-stage pipeline over a directory of images.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthModelArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    vertices: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct WeightArgs {
    /// Photometric term weight; visibility-normalized default when absent.
    #[arg(long)]
    w_photo: Option<f64>,
    #[arg(long, default_value_t = EnergyWeights::DEFAULT_W_REG)]
    w_reg: f64,
    #[arg(long, default_value_t = EnergyWeights::DEFAULT_W_E)]
    w_e: f64,
    #[arg(long, default_value_t = EnergyWeights::DEFAULT_W_R)]
    w_r: f64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Text file with 66 "x y" lines.
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long, default_value_t = 25)]
    iters: usize,
    /// Also run the pose/expression refinement stage after the full fit.
    #[arg(long)]
    refine: bool,
    #[command(flatten)]
    weights: WeightArgs,
    /// Fit report JSON output.
    #[arg(short, long)]
    output: PathBuf,
    /// Optional rendering of the fitted face.
    #[arg(long)]
    render_out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Fit report JSON files (at least k).
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(short, long, default_value_t = faceveil::identity::DEFAULT_CLUSTER_COUNT)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReplaceArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    /// Distance rank of the replacement centroid (1 = nearest).
    #[arg(long, default_value_t = 15)]
    rank: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ObfuscateArgs {
    #[arg(long)]
    image: PathBuf,
    /// Head bounding box "x,y,w,h" in source pixels.
    #[arg(long)]
    bbox: String,
    #[arg(long, default_value = "blur")]
    face_mode: ObfuscationMode,
    #[arg(long, default_value = "blur")]
    hair_mode: ObfuscationMode,
    #[arg(long)]
    blur_sigma: Option<f64>,
    /// Face region from this fit report (with --model); the whole head
    /// box is treated as face when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainInpaintArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 200)]
    scenes: usize,
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    #[arg(long, default_value_t = 1000.0)]
    lambda: f64,
    #[arg(long, default_value_t = 2e-5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 6)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "blur")]
    face_mode: ObfuscationMode,
    #[arg(long, default_value = "blur")]
    hair_mode: ObfuscationMode,
    /// Checkpoint output path.
    #[arg(short, long)]
    output: PathBuf,
    /// Loss curve CSV ("iter,loss_g,loss_d,l1_head").
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Optional head box "x,y,w,h" for mask-SSIM.
    #[arg(long)]
    bbox: Option<String>,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Annotation file: one "filename x y w h" line per image.
    #[arg(long)]
    annotations: PathBuf,
    /// Directory of per-image landmark files named <stem>.txt.
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    input_dir: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    face_mode: Option<ObfuscationMode>,
    #[arg(long)]
    hair_mode: Option<ObfuscationMode>,
    /// "own" or a replacer rank like "replacer15".
    #[arg(long)]
    face_source: Option<String>,
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long)]
    fit_iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    w_photo: Option<f64>,
    #[arg(long)]
    w_reg: Option<f64>,
    #[arg(long)]
    w_e: Option<f64>,
    #[arg(long)]
    w_r: Option<f64>,
    /// Run every combination of the 3x3x2 modality matrix.
    #[arg(long)]
    all_modalities: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::SynthModel(args) => {
            let model = faceveil::model::synth_model(args.seed, args.vertices)?;
            model.save(&args.output)?;
            println!(
                "wrote model: {} vertices, {} triangles -> {}",
                model.vertex_count(),
                model.triangles().len(),
                args.output.display()
            );
            Ok(())
        }
        Command::Fit(args) => cmd_fit(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Replace(args) => cmd_replace(args),
        Command::Obfuscate(args) => cmd_obfuscate(args),
        Command::Render(args) => cmd_render(args),
        Command::TrainInpaint(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    }
}

fn report_to_json(report: &FitReport) -> serde_json::Value {
    serde_json::json!({
        "params": report.params,
        "energies": report.energies,
        "iterations": report.iterations,
        "converged": report.converged,
    })
}

fn load_report_params(path: &Path) -> Result<SemanticParams, Error> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("fit report {}: {e}", path.display())))?;
    serde_json::from_value(value["params"].clone())
        .map_err(|e| Error::Format(format!("fit report {}: {e}", path.display())))
}

fn cmd_fit(args: FitArgs) -> Result<(), Error> {
    let model = FaceModel::load(&args.model)?;
    let image = ImageRgb::load_png(&args.image)?;
    let landmarks = load_landmarks(&args.landmarks)?;
    let camera = Camera::default_for(image.width(), image.height());
    let init = init_pose_from_landmarks(&model, &landmarks, &camera);
    let mut problem = FitProblem::with_default_weights(&model, camera, image, landmarks, &init)?;
    if let Some(wp) = args.weights.w_photo {
        problem.weights.w_photo = wp;
    }
    problem.weights.w_reg = args.weights.w_reg;
    problem.weights.w_e = args.weights.w_e;
    problem.weights.w_r = args.weights.w_r;
    let mut report = fit_full(&problem, &init, args.iters)?;
    if args.refine {
        report = refine_pose_expression(&problem, &report.params, None)?;
    }
    let energy = e_loss(&report.params, &problem)?;
    std::fs::write(
        &args.output,
        serde_json::to_string_pretty(&report_to_json(&report)).expect("report json"),
    )?;
    println!(
        "fit: {} iterations, energy {:.6}, converged {}",
        report.iterations, energy, report.converged
    );
    if let Some(render_path) = args.render_out {
        let mesh = model.decode(&report.params, &problem.camera)?;
        let raster = rasterize(&mesh, &model, (problem.camera.width, problem.camera.height));
        raster.color.save_png(render_path)?;
    }
    Ok(())
}

fn cmd_cluster(args: ClusterArgs) -> Result<(), Error> {
    let mut samples = Vec::with_capacity(args.reports.len());
    for path in &args.reports {
        samples.push(extract_identity(&load_report_params(path)?));
    }
    let set = cluster_identities(&samples, args.k, args.seed)?;
    set.save(&args.output)?;
    println!(
        "clustered {} identities into {} centroids (counts {:?}) -> {}",
        samples.len(),
        set.centroids.len(),
        set.counts,
        args.output.display()
    );
    Ok(())
}

fn cmd_replace(args: ReplaceArgs) -> Result<(), Error> {
    let params = load_report_params(&args.report)?;
    let clusters = ClusterSet::load(&args.clusters)?;
    let replacement = clusters.select_replacer(&params, args.rank)?;
    let replaced = faceveil::identity::replace_identity(&params, &replacement);
    let value = serde_json::json!({
        "params": replaced,
        "replacer_rank": args.rank,
    });
    std::fs::write(
        &args.output,
        serde_json::to_string_pretty(&value).expect("json"),
    )?;
    println!(
        "replaced identity (rank {}) -> {}",
        args.rank,
        args.output.display()
    );
    Ok(())
}

fn parse_bbox(text: &str) -> Result<HeadAnnotation, Error> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        return Err(Error::InvalidArgument("bbox must be x,y,w,h".into()));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad bbox number '{p}'")))
        })
        .collect::<Result<_, _>>()?;
    HeadAnnotation::new(nums[0], nums[1], nums[2], nums[3])
}

fn cmd_obfuscate(args: ObfuscateArgs) -> Result<(), Error> {
    let image = ImageRgb::load_png(&args.image)?;
    let size = (image.width(), image.height());
    let bbox = parse_bbox(&args.bbox)?;
    let head = head_mask_from_bbox(&bbox, size);
    let face = match (&args.report, &args.model) {
        (Some(report), Some(model_path)) => {
            let model = FaceModel::load(model_path)?;
            let params = load_report_params(report)?;
            let camera = Camera::default_for(size.0, size.1);
            face_mask(&params, &model, &camera, size)?
        }
        (None, None) => head.clone(),
        _ => {
            return Err(Error::InvalidArgument(
                "--report and --model must be given together".into(),
            ))
        }
    };
    let hair = faceveil::imageops::hair_mask(&head, &face);
    let out = obfuscate_region(&image, &face, args.face_mode, args.blur_sigma)?;
    let out = obfuscate_region(&out, &hair, args.hair_mode, args.blur_sigma)?;
    out.save_png(&args.output)?;
    println!(
        "obfuscated face={} hair={} -> {}",
        args.face_mode,
        args.hair_mode,
        args.output.display()
    );
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<(), Error> {
    let model = FaceModel::load(&args.model)?;
    let params = load_report_params(&args.report)?;
    let camera = Camera::default_for(args.width, args.height);
    let mesh = model.decode(&params, &camera)?;
    let raster = rasterize(&mesh, &model, (args.width, args.height));
    raster.color.save_png(&args.output)?;
    println!(
        "rendered {} covered pixels -> {}",
        raster.coverage.count(),
        args.output.display()
    );
    Ok(())
}

fn cmd_train(args: TrainInpaintArgs) -> Result<(), Error> {
    let model = FaceModel::load(&args.model)?;
    let items = make_train_items(
        &model,
        args.scenes,
        args.resolution,
        args.seed,
        args.face_mode,
        args.hair_mode,
    )?;
    let unet_cfg = UNetConfig {
        resolution: args.resolution,
        input_channels: 6,
        depth: args.depth,
        base_width: args.width,
    };
    let disc_cfg = DiscConfig {
        resolution: args.resolution,
        depth: args.depth.min(4),
        base_width: args.width,
    };
    let train_cfg = TrainConfig {
        lambda_l1: args.lambda,
        learning_rate: args.learning_rate,
        batch_size: args.batch,
        iterations: args.iterations,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let mut gen = Generator::init(&unet_cfg, &mut rng)?;
    let mut disc = Discriminator::init(&disc_cfg, &mut rng)?;
    let stats = train(&mut gen, &mut disc, &items, &train_cfg)?;
    save_checkpoint(
        &args.output,
        &Checkpoint {
            generator: gen,
            discriminator: disc,
            train_config: train_cfg,
        },
    )?;
    if let Some(losses) = args.losses {
        stats.save_csv(losses)?;
    }
    let last = stats.rows.last().copied().unwrap_or((0, 0.0, 0.0, 0.0));
    println!(
        "trained {} iterations: loss_g {:.4}, loss_d {:.4}, l1_head {:.4} -> {}",
        args.iterations,
        last.1,
        last.2,
        last.3,
        args.output.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let a = ImageRgb::load_png(&args.a)?;
    let b = ImageRgb::load_png(&args.b)?;
    let s = ssim(&a, &b)?;
    match args.bbox {
        Some(bbox) => {
            let head = head_mask_from_bbox(&parse_bbox(&bbox)?, (a.width(), a.height()));
            let ms = mask_ssim(&a, &b, &head)?;
            println!("ssim {s:.6} mask_ssim {ms:.6}");
        }
        None => println!("ssim {s:.6}"),
    }
    Ok(())
}

fn parse_face_source(text: &str) -> Result<FaceSource, Error> {
    if text == "own" {
        return Ok(FaceSource::Own);
    }
    if let Some(rank) = text.strip_prefix("replacer") {
        let rank: usize = rank
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad face source '{text}'")))?;
        return Ok(FaceSource::Replacer(rank));
    }
    Err(Error::InvalidArgument(format!(
        "face source must be 'own' or 'replacerK', got '{text}'"
    )))
}

fn cmd_pipeline(args: PipelineArgs) -> Result<(), Error> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<PipelineConfig>(&text)
                .map_err(|e| Error::Format(format!("config {}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.face_mode {
        config.face_mode = v;
    }
    if let Some(v) = args.hair_mode {
        config.hair_mode = v;
    }
    if let Some(v) = &args.face_source {
        config.face_source = parse_face_source(v)?;
    }
    if args.blur_sigma.is_some() {
        config.blur_sigma = args.blur_sigma;
    }
    if let Some(v) = args.fit_iterations {
        config.fit_iterations = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if args.w_photo.is_some() {
        config.w_photo = args.w_photo;
    }
    if args.w_reg.is_some() {
        config.w_reg = args.w_reg;
    }
    if args.w_e.is_some() {
        config.w_e = args.w_e;
    }
    if args.w_r.is_some() {
        config.w_r = args.w_r;
    }

    let model = FaceModel::load(&args.model)?;
    let clusters = args.clusters.as_ref().map(ClusterSet::load).transpose()?;
    let checkpoint = args
        .checkpoint
        .as_ref()
        .map(faceveil::inpaint::load_checkpoint)
        .transpose()?;

    let annotations = load_annotations(&args.annotations)?;
    let mut inputs = Vec::new();
    for record in &annotations {
        let image_path = args.input_dir.join(&record.filename);
        let stem = Path::new(&record.filename)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&record.filename);
        let lm_path = args.landmarks.join(format!("{stem}.txt"));
        let image = match ImageRgb::load_png(&image_path) {
            Ok(img) => img,
            Err(e) => {
                eprintln!("skip {}: {e}", record.filename);
                continue;
            }
        };
        let landmarks = match load_landmarks(&lm_path) {
            Ok(lm) => lm,
            Err(e) => {
                eprintln!("skip {}: {e}", record.filename);
                continue;
            }
        };
        inputs.push(PipelineInput {
            name: record.filename.clone(),
            image,
            annotation: record.bbox,
            landmarks,
            true_label: None,
        });
    }
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no usable inputs".into()));
    }

    let assets = PipelineAssets {
        model: &model,
        clusters: clusters.as_ref(),
        checkpoint: checkpoint.as_ref(),
        recognizer: None::<&ProxyRecognizer>,
    };

    let configs = if args.all_modalities {
        modality_matrix(&config)
    } else {
        vec![config]
    };
    let mut summary = Vec::new();
    for cfg in &configs {
        let report = run_pipeline(&assets, &inputs, cfg);
        let dir = if configs.len() == 1 {
            args.output_dir.clone()
        } else {
            args.output_dir.join(format!(
                "{}_{}_{}",
                cfg.face_mode, cfg.hair_mode, cfg.face_source
            ))
        };
        report.write_to_dir(&dir)?;
        let done = report
            .results
            .iter()
            .filter(|r| matches!(r, faceveil::pipeline::ImageResult::Done(_)))
            .count();
        println!(
            "{}: {} of {} images done, obfuscating={} -> {}",
            report.variant,
            done,
            inputs.len(),
            report.obfuscating,
            dir.display()
        );
        summary.push(serde_json::json!({
            "variant": report.variant,
            "face_mode": cfg.face_mode.to_string(),
            "hair_mode": cfg.hair_mode.to_string(),
            "face_source": cfg.face_source.to_string(),
            "obfuscating": report.obfuscating,
            "done": done,
        }));
    }
    if configs.len() > 1 {
        std::fs::write(
            args.output_dir.join("modalities.json"),
            serde_json::to_string_pretty(&summary).expect("summary json"),
        )?;
    }
    Ok(())
}
