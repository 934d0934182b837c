//! Command-line front end: one subcommand per pipeline stage plus the
//! end-to-end render, consistency correction and the preview server.
//!
//! Exit codes: 0 success (warnings allowed), 2 input or validation error,
//! 3 numerical non-convergence, 1 anything else.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use makeup_core::compositor::{
    self, Assignment, Catalog, CompositorError, DirResolver, MakeupPlan, RenderOptions, RenderResult, WarningKind,
};
use makeup_core::consistency::{self, ConsistencyError, FactorizeOptions, TrackSet, TracksDocument};
use makeup_core::imaging::{self, ImagingError};
use makeup_core::matting::{self, AlphaMatte, MatteParams, MattingError, Trimap};
use makeup_core::numeric::NumericError;
use makeup_core::semantics::{RegionMask, SemanticRegion};
use makeup_core::transfer::{TransferConfig, TransferOverrides};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "makeup", version, about = "Example-based facial makeup transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Builds a foreground/unknown/background trimap from a binary mask.
    Trimap(TrimapArgs),
    /// Solves an alpha matte for an image and trimap.
    Matte(MatteArgs),
    /// Transfers one region's style from an example onto a subject.
    Transfer(TransferArgs),
    /// Renders a makeup plan.
    Render(RenderArgs),
    /// Corrects a photo collection to consistent color from point tracks.
    Consistency(ConsistencyArgs),
    /// Example catalog tools.
    Catalog {
        #[command(subcommand)]
        command: CatalogCommand,
    },
    /// Runs the HTTP preview service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum CatalogCommand {
    /// Checks that every entry parses and its files load.
    Validate { catalog: PathBuf },
}

/// Transfer settings shared by the rendering commands. Per-assignment
/// overrides inside a plan take precedence over these.
#[derive(Debug, Clone, Args)]
pub struct StyleFlags {
    /// Seed for gamut subsampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Gradient weight of the luminance blend.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Histogram bins for luminance matching.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Trimap unknown-band width in pixels; defaults to a size-scaled value.
    #[arg(long)]
    pub band: Option<usize>,
}

impl StyleFlags {
    pub fn render_options(&self) -> RenderOptions {
        let base = TransferConfig {
            seed: self.seed,
            ..TransferConfig::default()
        };
        RenderOptions {
            transfer: base.with_overrides(&TransferOverrides {
                sigma: self.sigma,
                bins: self.bins,
                ..TransferOverrides::default()
            }),
            band: self.band,
            matte: MatteParams::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrimapArgs {
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub band: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatteArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub trimap: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = MatteParams::default().eps)]
    pub eps: f64,
    #[arg(long, default_value_t = MatteParams::default().lambda)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub subject: PathBuf,
    #[arg(long)]
    pub subject_landmarks: PathBuf,
    /// Subject region mask, required for regions without a landmark contour.
    #[arg(long)]
    pub subject_mask: Option<PathBuf>,
    #[arg(long)]
    pub example: PathBuf,
    #[arg(long)]
    pub example_landmarks: Option<PathBuf>,
    #[arg(long)]
    pub example_mask: Option<PathBuf>,
    #[arg(long)]
    pub region: SemanticRegion,
    #[arg(long, default_value_t = 1.0)]
    pub strength: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-region masks, trimaps, mattes, styled layers and the report.
    #[arg(long)]
    pub dump_intermediates: Option<PathBuf>,
    #[command(flatten)]
    pub style: StyleFlags,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// Root for relative asset paths; defaults to the plan's directory.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    /// Catalog resolving `catalog:<id>` references.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the strength of every assignment.
    #[arg(long)]
    pub strength: Option<f64>,
    #[arg(long)]
    pub dump_intermediates: Option<PathBuf>,
    /// Writes the render report (timings, cache, warnings, fits) as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub style: StyleFlags,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = FactorizeOptions::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = FactorizeOptions::default().max_iter)]
    pub max_iter: usize,
    /// One extra pass that down-weights outlying observations.
    #[arg(long)]
    pub reweight: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value = ".")]
    pub assets: PathBuf,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Mirrors sessions into this directory and reloads them at startup.
    #[arg(long)]
    pub persist: Option<PathBuf>,
    #[command(flatten)]
    pub style: StyleFlags,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    fn numeric(e: &NumericError, msg: String) -> Self {
        match e {
            NumericError::NotConverged { .. } => CliError::NotConverged(msg),
            _ => CliError::Input(msg),
        }
    }
}

impl From<MattingError> for CliError {
    fn from(e: MattingError) -> Self {
        match &e {
            MattingError::Numeric(n) => CliError::numeric(n, e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CompositorError> for CliError {
    fn from(e: CompositorError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ConsistencyError> for CliError {
    fn from(e: ConsistencyError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Non-fatal messages from a successful command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub messages: Vec<String>,
}

pub fn cmd_trimap(args: &TrimapArgs) -> Result<Outcome, CliError> {
    let mask = RegionMask::decode_png(&read(&args.mask)?)?;
    let band = args.band.unwrap_or_else(|| matting::default_band(mask.width(), mask.height()));
    let trimap = matting::make_trimap(&mask, band)?;
    write(&args.out, &trimap.encode_png()?)?;
    Ok(Outcome::default())
}

pub fn cmd_matte(args: &MatteArgs) -> Result<Outcome, CliError> {
    let img = imaging::decode_rgb(&read(&args.image)?)?;
    let trimap = Trimap::decode_png(&read(&args.trimap)?)?;
    let params = MatteParams {
        eps: args.eps,
        lambda: args.lambda,
        ..MatteParams::default()
    };
    let matte: AlphaMatte = matting::solve_matte_with(&img, &trimap, &params)?;
    write(&args.out, &matte.encode_png()?)?;
    Ok(Outcome::default())
}

pub fn cmd_transfer(args: &TransferArgs) -> Result<Outcome, CliError> {
    let path = |p: &Path| p.to_string_lossy().into_owned();
    let mut plan = MakeupPlan::new(path(&args.subject), path(&args.subject_landmarks));
    if let Some(m) = &args.subject_mask {
        plan.subject_masks.insert(args.region, path(m));
    }
    plan.assignments.push(Assignment {
        region: args.region,
        example: path(&args.example),
        example_landmarks: args.example_landmarks.as_deref().map(path),
        example_mask: args.example_mask.as_deref().map(path),
        overrides: TransferOverrides::default(),
        strength: args.strength,
    });
    let assets = DirResolver::new("");
    let result = compositor::apply_plan(&plan, &assets, &args.style.render_options())?;
    finish_render(&result, &args.out, args.dump_intermediates.as_deref(), None)
}

/// Loads a plan and its resolver as `cmd_render` does.
pub fn load_render_inputs(args: &RenderArgs) -> Result<(MakeupPlan, DirResolver), CliError> {
    let mut plan = MakeupPlan::from_json(&read_text(&args.plan)?).map_err(|e| CliError::Input(format!("SchemaError: {e}")))?;
    if let Some(s) = args.strength {
        for a in &mut plan.assignments {
            a.strength = s;
        }
    }
    let root = match &args.assets {
        Some(r) => r.clone(),
        None => args.plan.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let mut assets = DirResolver::new(root);
    if let Some(c) = &args.catalog {
        assets = assets.with_catalog(Catalog::load(c).map_err(|e| CliError::Input(e.to_string()))?);
    }
    Ok((plan, assets))
}

pub fn cmd_render(args: &RenderArgs) -> Result<Outcome, CliError> {
    let (plan, assets) = load_render_inputs(args)?;
    let result = compositor::apply_plan(&plan, &assets, &args.style.render_options())?;
    finish_render(&result, &args.out, args.dump_intermediates.as_deref(), args.report.as_deref())
}

fn finish_render(result: &RenderResult, out: &Path, dump: Option<&Path>, report_path: Option<&Path>) -> Result<Outcome, CliError> {
    write(out, &imaging::encode_png_rgb(&result.image)?)?;
    let report = result.report();
    let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(dir) = dump {
        for r in &result.regions {
            let name = r.region.name().to_ascii_lowercase();
            write(&dir.join(format!("{name}_mask.png")), &r.mask.encode_png()?)?;
            write(&dir.join(format!("{name}_trimap.png")), &r.trimap.encode_png()?)?;
            write(&dir.join(format!("{name}_matte.png")), &r.matte.encode_png()?)?;
            write(&dir.join(format!("{name}_styled.png")), &imaging::encode_png_rgb(&r.styled)?)?;
        }
        write(&dir.join("report.json"), report_json.as_bytes())?;
    }
    if let Some(p) = report_path {
        write(p, report_json.as_bytes())?;
    }
    let t = &report.timings;
    let mut messages = vec![format!(
        "timings (ms): load {:.1}, semantics {:.1}, matting {:.1}, transfer {:.1}, blend {:.1}, total {:.1}",
        t.load_ms, t.semantics_ms, t.matting_ms, t.transfer_ms, t.blend_ms, t.total_ms
    )];
    let mut not_converged = Vec::new();
    for w in &result.warnings {
        let line = format!("warning: {} skipped: {}", w.region, w.message);
        if w.kind == WarningKind::NotConverged {
            not_converged.push(line.clone());
        }
        messages.push(line);
    }
    if !not_converged.is_empty() {
        return Err(CliError::NotConverged(messages.join("\n")));
    }
    Ok(Outcome { messages })
}

pub fn cmd_consistency(args: &ConsistencyArgs) -> Result<Outcome, CliError> {
    let doc = TracksDocument::from_json(&read_text(&args.tracks)?)?;
    let base = args.tracks.parent().map(Path::to_path_buf).unwrap_or_default();
    let images = doc
        .images
        .iter()
        .map(|p| Ok(imaging::decode_rgb(&read(&base.join(p))?)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    let tracks = TrackSet::from_document(&doc, &images)?;
    let obs = consistency::build_observation(&tracks)?;
    let opts = FactorizeOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        reweight: args.reweight,
    };
    let model = consistency::factorize_channels(&obs, &opts)?;
    let mut names = Vec::new();
    for (i, (path, img)) in doc.images.iter().zip(&images).enumerate() {
        let corrected = consistency::correct_image(img, &model, i)?;
        let stem = Path::new(path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("image_{i}"));
        write(&args.out.join(format!("{stem}.png")), &imaging::encode_png_rgb(&corrected)?)?;
        names.push(path.clone());
    }
    let report = consistency::model_report(&model, &names);
    write(&args.out.join("model.json"), serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
    if !model.converged() {
        return Err(CliError::NotConverged(format!(
            "NotConverged: factorization stopped after {} iterations; outputs written",
            model.channels.iter().map(|c| c.iterations).max().unwrap_or(0)
        )));
    }
    Ok(Outcome::default())
}

pub fn cmd_catalog_validate(path: &Path) -> Result<Outcome, CliError> {
    let catalog = Catalog::load(path).map_err(|e| CliError::Input(e.to_string()))?;
    let problems = catalog.check_files();
    if !problems.is_empty() {
        return Err(CliError::Input(problems.join("\n")));
    }
    Ok(Outcome {
        messages: vec![format!("{}: {} entries ok", path.display(), catalog.entries.len())],
    })
}

pub fn cmd_serve(args: &ServeArgs) -> Result<Outcome, CliError> {
    let catalog = args
        .catalog
        .as_ref()
        .map(|c| Catalog::load(c).map_err(|e| CliError::Input(e.to_string())))
        .transpose()?;
    let config = makeup_service::ServiceConfig {
        assets_root: args.assets.clone(),
        catalog,
        persist_dir: args.persist.clone(),
        render: args.style.render_options(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    eprintln!("serving on http://{}", args.addr);
    rt.block_on(makeup_service::serve(config, args.addr)).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(Outcome::default())
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Trimap(a) => cmd_trimap(a),
        Command::Matte(a) => cmd_matte(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Render(a) => cmd_render(a),
        Command::Consistency(a) => cmd_consistency(a),
        Command::Catalog {
            command: CatalogCommand::Validate { catalog },
        } => cmd_catalog_validate(catalog),
        Command::Serve(a) => cmd_serve(a),
    }
}
