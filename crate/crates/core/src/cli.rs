//! Command-line surface: `gsmr <subcommand> ...`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::acquisition::{adjoint_a, AcquisitionModel, DcNorm};
use crate::error::{Error, Result};
use crate::io::{self, Container};
use crate::metrics::{psnr, ssim};
use crate::objective::TvKind;
use crate::simkit::{self, Phantom};
use crate::trainer::{train, SplitMode, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "gsmr", version, about = "3D Gaussian reconstruction of undersampled multicoil MRI")]
struct Cli {
    /// Worker threads (0 = all cores, 1 = deterministic single-threaded run).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a ground-truth phantom volume.
    Phantom {
        #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [64, 64, 64])]
        dims: Vec<usize>,
        #[arg(long, value_enum, default_value_t = PhantomKind::SheppLogan)]
        variant: PhantomKind,
        /// Keep the Shepp-Logan phantom real-valued.
        #[arg(long)]
        no_phase: bool,
        /// Number of Gaussians in the `blobs` variant.
        #[arg(long, default_value_t = simkit::DEFAULT_BLOB_COUNT)]
        blobs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic coil sensitivity maps.
    Coils {
        #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [64, 64, 64])]
        dims: Vec<usize>,
        #[arg(long = "num-coils", default_value_t = 4)]
        num_coils: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a variable-density undersampling mask.
    Mask {
        #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [64, 64, 64])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 4.0)]
        accel: f64,
        #[arg(long, default_value_t = simkit::DEFAULT_CALIB)]
        calib: usize,
        #[arg(long, default_value_t = simkit::DEFAULT_SIGMA_FRAC)]
        sigma_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate k-space from a volume, coil maps and a mask.
    Simulate {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        coils: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        noise_snr_db: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a volume and a Gaussian cloud from k-space.
    Recon(ReconArgs),
    /// Compare a reconstruction with a reference volume.
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Print a container header.
    Info { path: PathBuf },
    /// Dump one magnitude slice along z as an 8-bit PGM image.
    Slice {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        z: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PhantomKind {
    SheppLogan,
    Blobs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Original,
    LongAxis,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DcArg {
    L2,
    L1,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TvArg {
    Anisotropic,
    Isotropic,
}

#[derive(Args, Debug)]
struct ReconArgs {
    #[arg(long)]
    kspace: PathBuf,
    #[arg(long)]
    coils: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Reconstructed volume.
    #[arg(long)]
    out: PathBuf,
    /// Final Gaussian cloud checkpoint.
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// JSON run report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-iteration `iter,loss,num_gaussians[,psnr,ssim]` log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Reference volume; enables per-iteration PSNR/SSIM.
    #[arg(long)]
    eval_against: Option<PathBuf>,
    /// Also write the zero-filled adjoint image.
    #[arg(long)]
    zero_filled: Option<PathBuf>,
    #[arg(long)]
    init_points: Option<usize>,
    #[arg(long)]
    density_scale: Option<f64>,
    #[arg(long)]
    grad_threshold: Option<f64>,
    #[arg(long)]
    size_threshold: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_gaussians: Option<usize>,
    #[arg(long)]
    densify_interval: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, value_enum)]
    split_mode: Option<SplitArg>,
    #[arg(long)]
    prune_eps: Option<f64>,
    #[arg(long)]
    plateau_window: Option<usize>,
    #[arg(long)]
    plateau_tol: Option<f64>,
    #[arg(long, value_enum)]
    dc_norm: Option<DcArg>,
    #[arg(long, value_enum)]
    tv: Option<TvArg>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    stop_on_metric_plateau: bool,
    #[arg(long)]
    seed: Option<u64>,
}

impl ReconArgs {
    fn config(&self) -> TrainConfig {
        let mut c = TrainConfig::default();
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(
            init_points,
            density_scale,
            grad_threshold,
            size_threshold,
            lambda,
            max_gaussians,
            densify_interval,
            max_iters,
            prune_eps,
            plateau_window,
            plateau_tol,
            eval_interval,
            seed
        );
        if let Some(m) = self.split_mode {
            c.split_mode = match m {
                SplitArg::Original => SplitMode::Original,
                SplitArg::LongAxis => SplitMode::LongAxis,
            };
        }
        if let Some(d) = self.dc_norm {
            c.dc_norm = match d {
                DcArg::L2 => DcNorm::SquaredL2,
                DcArg::L1 => DcNorm::L1,
            };
        }
        if let Some(t) = self.tv {
            c.tv = match t {
                TvArg::Anisotropic => TvKind::Anisotropic,
                TvArg::Isotropic => TvKind::Isotropic,
            };
        }
        c.stop_on_metric_plateau = self.stop_on_metric_plateau;
        c
    }
}

fn dims3(v: &[usize]) -> [usize; 3] {
    [v[0], v[1], v[2]]
}

fn recon(a: &ReconArgs) -> Result<()> {
    let cfg = a.config();
    cfg.validate()?;
    println!("config {}", serde_json::to_string(&cfg)?);
    let acq = AcquisitionModel::new(io::read_mask(&a.mask)?, io::read_coils(&a.coils)?)?;
    let b = io::read_kspace(&a.kspace)?;
    let reference = a.eval_against.as_deref().map(io::read_volume).transpose()?;
    if let Some(p) = &a.zero_filled {
        io::write_container(p, &Container::Volume(adjoint_a(&b, &acq)?))?;
    }
    let out = match train(&b, &acq, &cfg, reference.as_ref()) {
        Ok(out) => out,
        Err(Error::Diverged { iteration, what, last_good }) => {
            if let Some(p) = &a.cloud {
                io::write_container(p, &Container::Cloud((*last_good).clone()))?;
            }
            return Err(Error::Diverged { iteration, what, last_good });
        }
        Err(e) => return Err(e),
    };
    io::write_container(&a.out, &Container::Volume(out.volume))?;
    if let Some(p) = &a.cloud {
        io::write_container(p, &Container::Cloud(out.cloud))?;
    }
    if let Some(p) = &a.report {
        out.report.write_json(p)?;
    }
    if let Some(p) = &a.log {
        out.report.write_log(p)?;
    }
    let r = &out.report;
    let mut summary = format!(
        "done iterations={} gaussians={} loss={:e} stop={:?} seconds={:.3}",
        r.iterations_run,
        r.final_gaussians,
        r.final_loss.unwrap_or(f64::NAN),
        r.stop_reason,
        r.timings.total_s
    );
    if let (Some(p), Some(s)) = (r.final_psnr, r.final_ssim) {
        summary.push_str(&format!(" psnr_db={p:.4} ssim={s:.6}"));
    }
    println!("{summary}");
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { dims, variant, no_phase, blobs, seed, out } => {
            let phantom = match variant {
                PhantomKind::SheppLogan => Phantom::SheppLogan { phase: !no_phase },
                PhantomKind::Blobs => Phantom::Blobs { count: blobs },
            };
            io::write_container(&out, &Container::Volume(simkit::phantom3d(dims3(&dims), phantom, seed)?))
        }
        Command::Coils { dims, num_coils, seed, out } => {
            io::write_container(&out, &Container::CoilMaps(simkit::synth_coils(dims3(&dims), num_coils, seed)?))
        }
        Command::Mask { dims, accel, calib, sigma_frac, seed, out } => {
            let m = simkit::gen_mask(dims3(&dims), accel, calib, sigma_frac, seed)?;
            println!("samples={} acceleration={:.6}", m.count(), m.acceleration());
            io::write_container(&out, &Container::Mask(m))
        }
        Command::Simulate { volume, coils, mask, noise_snr_db, seed, out } => {
            let acq = AcquisitionModel::new(io::read_mask(&mask)?, io::read_coils(&coils)?)?;
            let b = simkit::simulate(&io::read_volume(&volume)?, &acq, noise_snr_db, seed)?;
            io::write_container(&out, &Container::KSpace(b))
        }
        Command::Recon(args) => recon(&args),
        Command::Eval { recon, reference } => {
            let (r, g) = (io::read_volume(&recon)?, io::read_volume(&reference)?);
            println!("psnr_db={:.6} ssim={:.6}", psnr(&r, &g)?, ssim(&r, &g)?);
            Ok(())
        }
        Command::Info { path } => {
            let h = io::read_header(&path)?;
            let dims: Vec<String> = h.dims.iter().map(u64::to_string).collect();
            let mut line = format!("kind={} name={} version={}", h.kind as u16, h.kind.name(), h.version);
            if !dims.is_empty() {
                line.push_str(&format!(" dims={}", dims.join("x")));
            }
            if let Container::Cloud(c) = io::read_container(&path)? {
                line.push_str(&format!(" gaussians={}", c.len()));
            }
            println!("{line}");
            Ok(())
        }
        Command::Slice { volume, z, out } => {
            let v = io::read_volume(&volume)?;
            io::write_pgm_slice(&out, &v, z.unwrap_or(v.dims()[2] / 2))
        }
    }
}

fn error_line(code: i32, kind: &str, message: &str) -> String {
    format!("error code={code} kind={kind} message={message:?}")
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line(64, "usage", first));
            return 64;
        }
    };
    if cli.threads > 0 {
        // Ignored if a global pool already exists (e.g. a second in-process call).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(e.code(), e.kind(), &e.to_string()));
            e.code()
        }
    }
}
