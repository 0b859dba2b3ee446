use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use tink_core::config::TinkConfig;
use tink_core::contact::{derive_contact, map_contacts, ContactnessField};
use tink_core::hand::HandRig;
use tink_core::io::{read_mesh, write_ply};
use tink_core::metrics::audit_csv;
use tink_core::mokap::{fit_sequence, residuals_csv, smooth_sequence, FrameSequence};
use tink_core::pipeline::{
    direct_copy, read_params, run_audit, run_batch, run_transfer, shape_from_mesh, write_fixtures, write_landmarks,
    write_refine, JobSpec, TransferJob,
};
use tink_core::refine::{refine, RefineProblem};
use tink_core::shape_path::build_path;
use tink_core::{Error, Result, Stage, StageExt};

#[derive(Parser, Debug)]
#[command(name = "tink", version, about = "Transfer hand grasps to shape-varying objects")]
struct Cli {
    /// TOML configuration; missing keys take the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "tink_out")]
    out: PathBuf,
    /// Run seed for simulation jitter and per-job seeds.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads, all cores by default.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Interpolated landmark shapes between two meshes.
    Path {
        source: PathBuf,
        target: PathBuf,
        /// Number of landmarks, overrides the configuration.
        #[arg(long)]
        n_itpl: Option<usize>,
    },
    /// Contact field of a hand pose on an object, optionally mapped onto a
    /// second object.
    Contact {
        object: PathBuf,
        params: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Pose refinement described by a refine manifest.
    Refine { manifest: PathBuf },
    /// Quality metrics for a manifest of grasps.
    Audit { manifest: PathBuf },
    /// Full transfer of one grasp to a target object.
    Transfer {
        source_object: PathBuf,
        source_params: PathBuf,
        target_object: PathBuf,
    },
    /// Every job of a transfer manifest.
    Batch { manifest: PathBuf },
    /// Synthetic objects with source grasps and a batch manifest.
    Fixtures {
        #[arg(long, default_value_t = 6)]
        count: usize,
    },
    /// Hand fit to a multi-view keypoint sequence.
    Fit {
        sequence: PathBuf,
        /// Smoothing cutoff as a fraction of the Nyquist frequency.
        #[arg(long, default_value_t = 0.1)]
        cutoff: f64,
    },
}

/// Inputs of the `refine` subcommand; paths are relative to the manifest.
#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct RefineManifest {
    source_params: PathBuf,
    /// Source object; when given the pose is moved by the centroid offset.
    #[serde(default)]
    source_mesh: Option<PathBuf>,
    target_mesh: PathBuf,
    contacts: PathBuf,
    #[serde(default)]
    config: Option<serde_json::Value>,
}

enum Outcome {
    Done,
    Partial { failed: usize, total: usize },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial { failed, total }) => {
            eprintln!("{failed} of {total} entries failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

fn relative_to(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let config = match &cli.config {
        Some(path) => TinkConfig::load(path)?,
        None => TinkConfig::default(),
    };
    let jobs = match cli.jobs {
        Some(0) => return Err(Error::invalid("--jobs must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    // Batch builds its own pool of `jobs` workers.
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let rig = HandRig::default_rig();
    let out = &cli.out;

    match &cli.command {
        Command::Path {
            source,
            target,
            n_itpl,
        } => {
            let source = shape_from_mesh(read_mesh(source)?, &config.sdf)?;
            let target = shape_from_mesh(read_mesh(target)?, &config.sdf)?;
            let path = build_path(source, target, n_itpl.unwrap_or(config.path.n_itpl), config.path.max_cells)?;
            write_landmarks(out, &path)?;
        }
        Command::Contact {
            object,
            params,
            target,
        } => {
            let mesh = read_mesh(object)?;
            let state = rig.forward(&read_params(params)?);
            let parts: Vec<u8> = rig.anchors.iter().map(|a| a.part).collect();
            let field = derive_contact(&state.anchors, &parts, &mesh, &config.contact);
            create_dir(out)?;
            write(&out.join("contacts.json"), field.to_json())?;
            write_ply(&mesh, Some(&field.vertex_colors()), out.join("contacts.ply"))?;
            if let Some(target) = target {
                let source = shape_from_mesh(mesh, &config.sdf)?;
                let target = shape_from_mesh(read_mesh(target)?, &config.sdf)?;
                let path = build_path(source, target, config.path.n_itpl, config.path.max_cells).stage(Stage::Path)?;
                let mapped = map_contacts(&field, &path, &config.icp).stage(Stage::Mapping)?;
                write(&out.join("target_contacts.json"), mapped.field.to_json())?;
                write_ply(
                    &path.target.mesh,
                    Some(&mapped.field.vertex_colors()),
                    out.join("target_contacts.ply"),
                )?;
            }
            eprintln!("{} object vertices labeled", field.labeled_count());
        }
        Command::Refine { manifest } => {
            let m: RefineManifest = read_json(manifest)?;
            let base = manifest.parent().unwrap_or(Path::new(""));
            let config = match &m.config {
                Some(overrides) => config.with_overrides(overrides)?,
                None => config,
            };
            let mut init = read_params(&relative_to(base, &m.source_params))?;
            let target = shape_from_mesh(read_mesh(relative_to(base, &m.target_mesh))?, &config.sdf)?;
            if let Some(source) = &m.source_mesh {
                init = direct_copy(&init, &read_mesh(relative_to(base, source))?, &target.mesh);
            }
            let contacts_path = relative_to(base, &m.contacts);
            let text = fs::read_to_string(&contacts_path).map_err(|e| Error::io(&contacts_path, e))?;
            let contacts = ContactnessField::from_json(&text).map_err(|e| Error::parse(&contacts_path, e))?;
            let report = refine(&RefineProblem {
                rig,
                init,
                target: &target.mesh,
                sdf: &target.sdf,
                contacts: &contacts,
                config: config.refine,
            })?;
            write_refine(out, &report, &rig.posed_mesh(&report.params))?;
            if let Some(last) = report.trace.last() {
                eprintln!(
                    "{} iterations, E_consis {:.3e}, E_intp {:.3e}",
                    report.iterations(),
                    last.consis,
                    last.intp
                );
            }
        }
        Command::Audit { manifest } => {
            let results = run_audit(rig, manifest, &config, cli.seed)?;
            let total = results.len();
            let mut ok = Vec::with_capacity(total);
            let mut errors = String::from("record,error\n");
            for (id, r) in results {
                match r {
                    Ok(report) => ok.push((id, report)),
                    Err(msg) => {
                        eprintln!("{id}: {msg}");
                        errors.push_str(&format!("{id},\"{}\"\n", msg.replace('"', "\"\"")));
                    }
                }
            }
            create_dir(out)?;
            write(&out.join("audit.csv"), audit_csv(&ok))?;
            if ok.len() < total {
                write(&out.join("audit_errors.csv"), errors)?;
                return Ok(Outcome::Partial {
                    failed: total - ok.len(),
                    total,
                });
            }
        }
        Command::Transfer {
            source_object,
            source_params,
            target_object,
        } => {
            let spec = JobSpec {
                id: "transfer".into(),
                source_object: source_object.clone(),
                source_params: source_params.clone(),
                target_object: target_object.clone(),
                seed: None,
                intent: String::new(),
                category: String::new(),
            };
            let job = TransferJob {
                spec,
                base_dir: PathBuf::new(),
                config,
                out_dir: out.clone(),
                seed: cli.seed,
            };
            let result = run_transfer(rig, &job)?;
            for (name, arm) in [("refined", &result.refined), ("direct copy", &result.baseline)] {
                eprintln!(
                    "{name}: penetration {:.3} cm, intersection {:.3} cm3, E_consis {:.3e}",
                    arm.quality.penet_depth, arm.quality.intersect_volume, arm.consis
                );
            }
        }
        Command::Batch { manifest } => {
            let summary = run_batch(rig, manifest, &config, out, cli.seed, jobs)?;
            for row in &summary.rows {
                if let Err(msg) = &row.outcome {
                    eprintln!("{}: {msg}", row.id);
                }
            }
            if summary.failures() > 0 {
                return Ok(Outcome::Partial {
                    failed: summary.failures(),
                    total: summary.rows.len(),
                });
            }
        }
        Command::Fixtures { count } => {
            let manifest = write_fixtures(rig, out, *count, cli.seed, &config)?;
            eprintln!("wrote {}", manifest.display());
        }
        Command::Fit { sequence, cutoff } => {
            let text = fs::read_to_string(sequence).map_err(|e| Error::io(sequence, e))?;
            let seq = FrameSequence::from_json(&text).map_err(|e| Error::parse(sequence, e))?;
            let fits = fit_sequence(rig, &seq, None, &config.fit)?;
            let raw: Vec<_> = fits.iter().map(|f| f.params.clone()).collect();
            let smoothed = if raw.len() >= 3 { smooth_sequence(&raw, *cutoff)? } else { raw.clone() };
            create_dir(out)?;
            let json = |v: &Vec<_>| serde_json::to_string_pretty(v).expect("serializable params");
            write(&out.join("params.json"), json(&smoothed))?;
            write(&out.join("raw_params.json"), json(&raw))?;
            write(&out.join("residuals.csv"), residuals_csv(&fits))?;
        }
    }
    Ok(Outcome::Done)
}
