//! Batch entry point. Exit codes: 0 success, 1 data or IO failure (the
//! message names the file), 2 usage error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use eddyscope_core::features::{LabelOptions, Scale};
use eddyscope_core::grid::{Dims, Ensemble};
use eddyscope_core::image::{image_diff, Image};
use eddyscope_core::labeling::Strategy;
use eddyscope_core::morse::{cell_boundaries, select_scale, MorseComplex};
use eddyscope_core::noise::{quartile_split, DistributionSummary, FitOptions, ModelKind};
use eddyscope_core::pmap::{palette_color, ViewMode};
use eddyscope_core::render::{Camera, RenderConfig, RenderMode};
use eddyscope_core::synth::{inject_outlier, synth_eddy_ensemble, SynthParams};
use eddyscope_core::tf::TransferFunction;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;
use crate::pipeline::{self, MorseSettings};

#[derive(Debug, Parser)]
#[command(name = "eddyscope", version, about = "Ensemble summaries, statistical volume rendering and probabilistic Morse maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a per-voxel noise model and write the summary file.
    Fit {
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[arg(long, value_parser = parse_model)]
        model: ModelKind,
        #[arg(long, default_value_t = 16)]
        quantiles: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Raycast a fitted summary (or fit one from a manifest first).
    Render {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        summary: Option<PathBuf>,
        #[command(flatten)]
        ensemble: OptionalEnsembleArgs,
        #[arg(long, value_parser = parse_model, default_value = "mean")]
        model: ModelKind,
        #[arg(long, default_value_t = 16)]
        quantiles: usize,
        #[command(flatten)]
        view: RenderArgs,
        /// Monte Carlo draws per step; expected classification when absent.
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lower, interquartile and upper quartile renders.
    Quartile {
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[command(flatten)]
        view: RenderArgs,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "ppm")]
        format: String,
    },
    /// Fit and render one frame per time step.
    Timeseries {
        /// One manifest per time step.
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        /// Steps to render, `a..b` (inclusive) or a comma list.
        #[arg(long, value_parser = parse_times)]
        times: Option<Times>,
        #[arg(long, value_parser = parse_model, default_value = "mean")]
        model: ModelKind,
        #[arg(long, default_value_t = 16)]
        quantiles: usize,
        #[command(flatten)]
        view: RenderArgs,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "ppm")]
        format: String,
    },
    /// Persistence graphs, spaghetti plot and selected scale.
    Persistence {
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[command(flatten)]
        morse: MorseArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Simplified destination maps per member.
    Simplify {
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[command(flatten)]
        morse: MorseArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cross-member labeling of simplified maxima.
    Label {
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[command(flatten)]
        morse: MorseArgs,
        #[arg(long, value_parser = parse_strategy, default_value = "morse_mapping")]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probabilistic map file, optionally with a view image.
    Pmap {
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[command(flatten)]
        morse: MorseArgs,
        #[arg(long, value_parser = parse_strategy, default_value = "morse_mapping")]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
        /// Also write a blend or boundaries image.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, value_parser = parse_view, default_value = "blend")]
        view: ViewMode,
    },
    /// Pixels with entropy at least tau, shown over the blend.
    Entropy {
        #[arg(long)]
        pmap: PathBuf,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixels whose modal label reaches probability alpha.
    Agree {
        #[arg(long)]
        pmap: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label distribution at one pixel, as JSON.
    Query {
        #[arg(long)]
        pmap: PathBuf,
        #[arg(long)]
        x: usize,
        #[arg(long)]
        y: usize,
    },
    /// Compare two images; prints JSON metrics.
    Diff {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Write a seeded synthetic eddy ensemble.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        members: usize,
        /// `NXxNY` or `NXxNYxNZ`.
        #[arg(long, value_parser = parse_dims, default_value = "64x64x1")]
        dims: Dims,
        #[arg(long, default_value_t = 11)]
        vortices: usize,
        #[arg(long, default_value_t = 0.1)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        time: u32,
        #[arg(long, default_value_t = 0.0)]
        drift: f64,
        /// `MEMBER:FACTOR`, scales one member's values.
        #[arg(long, value_parser = parse_outlier)]
        outlier: Option<(usize, f64)>,
        #[arg(long, default_value = "speed")]
        field: String,
        /// Manifest path; member files are written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// HTTP service for the viewer.
    Serve {
        /// `NAME=PATH` or `PATH` (named by file stem); repeat a name to add
        /// time steps.
        #[arg(long = "manifest", required = true)]
        manifests: Vec<String>,
        #[command(flatten)]
        morse: MorseArgs,
        #[arg(long, default_value_t = 16)]
        quantiles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = crate::server::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub sample: SampleArgs,
}

#[derive(Debug, Args)]
pub struct OptionalEnsembleArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub sample: SampleArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Use a seeded subset of this many members.
    #[arg(long)]
    pub members: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub tf: Option<PathBuf>,
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    #[arg(long, default_value_t = 0.99)]
    pub termination: f64,
}

#[derive(Debug, Args)]
pub struct MorseArgs {
    /// Slice of volumetric members to analyze.
    #[arg(long, default_value_t = 0)]
    pub z: usize,
    /// Analyze the negated field (track minima).
    #[arg(long)]
    pub negate: bool,
    /// Fixed persistence threshold instead of scale selection.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Member share that must agree on the maxima count.
    #[arg(long, default_value_t = 0.5)]
    pub agreement: f64,
    /// k-means cluster count (the selected maxima count by default).
    #[arg(long)]
    pub k: Option<usize>,
    /// Lowest level swept for mandatory regions.
    #[arg(long)]
    pub min_level: Option<f64>,
}

impl MorseArgs {
    /// `seed` drives k-means initialization.
    pub fn settings(&self, seed: u64) -> MorseSettings {
        MorseSettings {
            z: self.z,
            negate: self.negate,
            threshold: self.threshold,
            agreement: self.agreement,
            labels: LabelOptions { k: self.k, seed, min_level: self.min_level },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Times {
    Range(u32, u32),
    List(Vec<u32>),
}

impl Times {
    fn expand(&self) -> Vec<u32> {
        match self {
            Times::Range(a, b) => (*a..=*b).collect(),
            Times::List(v) => v.clone(),
        }
    }
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: eddyscope_core::Error| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: eddyscope_core::Error| e.to_string())
}

fn parse_view(s: &str) -> std::result::Result<ViewMode, String> {
    s.parse().map_err(|e: eddyscope_core::Error| e.to_string())
}

fn parse_times(s: &str) -> std::result::Result<Times, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a = a.parse().map_err(|_| format!("bad start `{a}`"))?;
        let b = b.trim_start_matches('=').parse().map_err(|_| format!("bad end `{b}`"))?;
        if a > b {
            return Err(format!("empty range {a}..{b}"));
        }
        return Ok(Times::Range(a, b));
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| format!("bad time `{t}`"))).collect::<std::result::Result<_, _>>().map(Times::List)
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<usize> =
        s.split('x').map(|p| p.parse().map_err(|_| format!("bad extent `{p}`"))).collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [nx, ny] => Dims::planar(nx, ny),
        [nx, ny, nz] => Dims::new(nx, ny, nz),
        _ => return Err(format!("expected NXxNY or NXxNYxNZ, got `{s}`")),
    }
    .map_err(|e| e.to_string())
}

fn parse_outlier(s: &str) -> std::result::Result<(usize, f64), String> {
    let (m, f) = s.split_once(':').ok_or("expected MEMBER:FACTOR")?;
    Ok((m.parse().map_err(|_| format!("bad member `{m}`"))?, f.parse().map_err(|_| format!("bad factor `{f}`"))?))
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Core(eddyscope_core::Error::Argument(_)) => 2,
                _ => 1,
            }
        }
    }
}

fn load(args: &EnsembleArgs) -> Result<Ensemble> {
    subsample(io::load_ensemble(&args.manifest)?, &args.sample)
}

fn subsample(e: Ensemble, s: &SampleArgs) -> Result<Ensemble> {
    Ok(match s.members {
        Some(n) => e.subsample(n, s.seed)?,
        None => e,
    })
}

fn fit_options(quantiles: usize) -> FitOptions {
    FitOptions { quantiles, ..Default::default() }
}

impl RenderArgs {
    fn config(&self) -> Result<RenderConfig> {
        let c = RenderConfig { step: self.step, termination_alpha: self.termination, ..Default::default() };
        c.validate()?;
        Ok(c)
    }

    fn tf(&self, summary: &DistributionSummary) -> Result<TransferFunction> {
        match &self.tf {
            Some(p) => io::read_tf(p),
            None => Ok(pipeline::default_tf(summary)),
        }
    }

    fn camera(&self, summary: &DistributionSummary) -> Result<Camera> {
        match &self.camera {
            Some(p) => io::read_camera(p, self.width, self.height),
            None => Ok(pipeline::default_camera(
                summary,
                self.width.unwrap_or(io::DEFAULT_IMAGE_SIZE),
                self.height.unwrap_or(io::DEFAULT_IMAGE_SIZE),
            )),
        }
    }
}

fn image_name(dir: &Path, stem: &str, format: &str) -> Result<PathBuf> {
    match format {
        "ppm" | "png" => Ok(dir.join(format!("{stem}.{format}"))),
        other => Err(eddyscope_core::Error::Argument(format!("unknown image format `{other}`")).into()),
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).expect("serializable");
    writeln!(out, "{text}").map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Fit { ensemble, model, quantiles, out: path } => {
            let e = load(&ensemble)?;
            let s = fit_options(quantiles).fit(model, &e)?;
            io::write_summary(&path, &s, &io::SummaryHeader::of(&s, e.field_name(), e.time_index(), e.len()))
        }
        Command::Render { summary, ensemble, model, quantiles, view, mc_samples, out: path } => {
            let s = match (summary, &ensemble.manifest) {
                (Some(p), _) => io::read_summary(&p)?.0,
                (None, Some(m)) => {
                    let e = subsample(io::load_ensemble(m)?, &ensemble.sample)?;
                    fit_options(quantiles).fit(model, &e)?
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            let mode = match mc_samples {
                Some(n) => RenderMode::MonteCarlo { seed: ensemble.sample.seed, samples: n },
                None => RenderMode::Expected,
            };
            let img = pipeline::render(&s, &view.tf(&s)?, &view.camera(&s)?, &view.config()?, mode)?;
            io::write_image(&path, &img)
        }
        Command::Quartile { ensemble, view, out_dir, format } => {
            let e = load(&ensemble)?;
            let parts = quartile_split(&e)?;
            // one TF and camera for all three, taken from the middle part
            let tf = view.tf(&parts[1])?;
            let cam = view.camera(&parts[1])?;
            let cfg = view.config()?;
            for (name, s) in ["lower", "middle", "upper"].iter().zip(&parts) {
                let img = pipeline::render(s, &tf, &cam, &cfg, RenderMode::Expected)?;
                io::write_image(&image_name(&out_dir, name, &format)?, &img)?;
            }
            Ok(())
        }
        Command::Timeseries { manifests, times, model, quantiles, view, out_dir, format } => {
            let mut steps = BTreeMap::new();
            for m in &manifests {
                let e = io::load_ensemble(m)?;
                steps.insert(e.time_index(), e);
            }
            let times = times.map(|t| t.expand()).unwrap_or_else(|| steps.keys().copied().collect());
            if let Some(t) = times.iter().find(|t| !steps.contains_key(t)) {
                return Err(eddyscope_core::Error::Data(format!("no manifest for time step {t}")).into());
            }
            let fit = fit_options(quantiles);
            let first = fit.fit(model, &steps[&times[0]])?;
            let (tf, cam, cfg) = (view.tf(&first)?, view.camera(&first)?, view.config()?);
            let mut frames: Vec<(u32, Image)> = Vec::with_capacity(times.len());
            for &t in &times {
                let s = if t == times[0] { first.clone() } else { fit.fit(model, &steps[&t])? };
                let img = pipeline::render(&s, &tf, &cam, &cfg, RenderMode::Expected)?;
                io::write_image(&image_name(&out_dir, &format!("frame_t{t:04}"), &format)?, &img)?;
                frames.push((t, img));
            }
            let diffs: Vec<serde_json::Value> = frames
                .windows(2)
                .map(|w| {
                    let d = image_diff(&w[0].1, &w[1].1).expect("frames share a camera");
                    serde_json::json!({ "from": w[0].0, "to": w[1].0, "mean_abs": d.mean_abs, "max": d.max })
                })
                .collect();
            io::write_json_file(&out_dir.join("diffs.json"), &diffs)
        }
        Command::Persistence { ensemble, morse, out_dir } => persistence_report(&load(&ensemble)?, &morse.settings(ensemble.sample.seed), &out_dir),
        Command::Simplify { ensemble, morse, out_dir } => {
            let me = morse.settings(ensemble.sample.seed).build(&load(&ensemble)?)?;
            for (f, c) in me.fields.iter().zip(&me.simplified) {
                io::write_destinations(&out_dir.join(format!("member_{:03}", f.member_id)), c)?;
            }
            Ok(())
        }
        Command::Label { ensemble, morse, strategy, out: path } => {
            let settings = morse.settings(ensemble.sample.seed);
            let me = settings.build(&load(&ensemble)?)?;
            let a = me.label(strategy, &settings.labels)?;
            let members: Vec<u32> = me.fields.iter().map(|f| f.member_id).collect();
            io::write_json_file(
                &path,
                &serde_json::json!({
                    "strategy": strategy.name(),
                    "threshold": me.threshold,
                    "members": members,
                    "labels": a.labels,
                    "anchors": a.anchors,
                    "palette": a.palette,
                }),
            )
        }
        Command::Pmap { ensemble, morse, strategy, out: path, image, view } => {
            let settings = morse.settings(ensemble.sample.seed);
            let me = settings.build(&load(&ensemble)?)?;
            let (a, pm) = settings.map(&me, strategy)?;
            io::write_pmap(&path, &pm, &a.palette, Some(strategy.name()))?;
            if let Some(img) = image {
                io::write_image(&img, &pm.view(view, &a.palette, 0.0)?)?;
            }
            Ok(())
        }
        Command::Entropy { pmap, tau, out: path } => {
            let (pm, palette, _) = io::read_pmap(&pmap)?;
            io::write_image(&path, &pm.view(ViewMode::Entropy, &palette, tau)?)
        }
        Command::Agree { pmap, alpha, out: path } => {
            let (pm, palette, _) = io::read_pmap(&pmap)?;
            io::write_image(&path, &pm.view(ViewMode::Agreement, &palette, alpha)?)
        }
        Command::Query { pmap, x, y } => {
            let (pm, palette, _) = io::read_pmap(&pmap)?;
            print_json(out, &pipeline::query_json(&pm.query(x, y, &palette)?))
        }
        Command::Diff { a, b, heatmap } => {
            let (ia, ib) = (io::read_image(&a)?, io::read_image(&b)?);
            let d = image_diff(&ia, &ib).map_err(|e| Error::file(&b, e))?;
            if let Some(h) = heatmap {
                io::write_image(&h, &d.heatmap)?;
            }
            print_json(out, &serde_json::json!({ "mean_abs": d.mean_abs, "max": d.max, "differing_pixels": d.differing_pixels }))
        }
        Command::Synth { seed, members, dims, vortices, jitter, time, drift, outlier, field, out: path } => {
            let mut p = SynthParams::new(seed, members, dims, vortices, jitter).at_time(time, drift);
            p.field = field;
            let mut e = synth_eddy_ensemble(&p)?.ensemble;
            if let Some((m, f)) = outlier {
                e = inject_outlier(&e, m, f)?;
            }
            io::write_ensemble(&path, &e)
        }
        Command::Serve { manifests, morse, quantiles, seed, port, host } => {
            let mut datasets: BTreeMap<String, Vec<Ensemble>> = BTreeMap::new();
            for entry in &manifests {
                let (name, path) = match entry.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(entry);
                        (p.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string(), p)
                    }
                };
                datasets.entry(name).or_default().push(io::load_ensemble(&path)?);
            }
            let datasets = datasets.into_iter().map(|(n, v)| (n, crate::server::Dataset::new(v))).collect();
            let session = crate::server::Session::new(datasets, fit_options(quantiles), morse.settings(seed));
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(Path::new("<runtime>"), e))?;
            rt.block_on(crate::server::serve(session, &host, port))
                .map_err(|e| Error::io(Path::new(&format!("{host}:{port}")), e))
        }
    }
}

/// Per-member CSV curves, the spaghetti overlay and `scale.json`.
pub fn persistence_report(ensemble: &Ensemble, settings: &MorseSettings, out_dir: &Path) -> Result<()> {
    let planar = settings.planar(ensemble)?;
    let raw: Vec<MorseComplex> = planar.members().iter().map(MorseComplex::compute).collect::<eddyscope_core::Result<_>>()?;
    let graphs: Vec<_> = raw.iter().map(MorseComplex::graph).collect();
    for (g, graph) in planar.members().iter().zip(&graphs) {
        io::write_text(&out_dir.join(format!("member_{:03}.csv", g.member_id)), &io::persistence_csv(graph))?;
    }
    let (threshold, selection) = match settings.threshold {
        Some(t) => (t, None),
        None => match select_scale(&graphs, settings.agreement) {
            Ok(s) => (s.threshold, Some(s)),
            Err(e) => {
                io::write_json_file(&out_dir.join("scale.json"), &serde_json::json!({ "error": e.to_string() }))?;
                return Err(e.into());
            }
        },
    };
    let me = eddyscope_core::features::MorseEnsemble::build(&planar, Scale::Fixed(threshold))?;
    let d = planar.dims();
    let mut img = Image::filled(d.nx, d.ny, [255, 255, 255, 255]);
    for (m, c) in me.simplified.iter().enumerate() {
        let [r, g, b] = palette_color(m);
        for (p, _) in cell_boundaries(&c.destinations).iter().enumerate().filter(|(_, &on)| on) {
            img.set_pixel(p % d.nx, p / d.nx, [r, g, b, 255]);
        }
    }
    io::write_image(&out_dir.join("spaghetti.ppm"), &img)?;
    let json = match selection {
        Some(s) => serde_json::json!({ "threshold": s.threshold, "count": s.count, "fraction": s.fraction }),
        None => {
            let counts = me.maxima_counts();
            serde_json::json!({ "threshold": threshold, "counts": counts })
        }
    };
    io::write_json_file(&out_dir.join("scale.json"), &json)
}
