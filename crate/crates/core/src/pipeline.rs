//! End-to-end interaction transfer: shape path, contact mapping, pose
//! refinement and quality audit against a direct pose copy, plus the batch
//! runner and the fixture generator.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{SdfConfig, TinkConfig};
use crate::contact::{derive_contact, map_contacts, ContactnessField, MappedContacts};
use crate::error::{Error, Result, Stage, StageExt};
use crate::fixtures::{fixture_pairs, synthesize_grasp, ObjectSpec};
use crate::hand::{HandParams, HandRig};
use crate::io::{read_mesh, write_obj, write_ply};
use crate::mesh::TriMesh;
use crate::metrics::{audit, mass_properties, GraspRecord, QualityReport};
use crate::refine::{refine, energy_consis, RefineProblem, RefineReport};
use crate::sdf::mesh_to_sdf;
use crate::shape_path::{build_path, LandmarkPath, Shape};

/// A hand pose on the object it was recorded with.
#[derive(Debug, Clone)]
pub struct SourceGrasp {
    pub params: HandParams,
    pub shape: Shape,
}

/// One hand placement on the target with its scores.
#[derive(Debug, Clone)]
pub struct Arm {
    pub params: HandParams,
    pub hand: TriMesh,
    /// Contact consistency against the mapped target contacts, m².
    pub consis: f64,
    pub quality: QualityReport,
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    pub source_contacts: ContactnessField,
    pub path: LandmarkPath,
    pub mapped: MappedContacts,
    pub refined: Arm,
    pub report: RefineReport,
    pub baseline: Arm,
}

pub fn shape_from_mesh(mesh: TriMesh, cfg: &SdfConfig) -> Result<Shape> {
    let sdf = mesh_to_sdf(&mesh, cfg.padding, cfg.resolution)?;
    Ok(Shape { mesh, sdf })
}

fn score(
    rig: &HandRig,
    params: HandParams,
    target: &Shape,
    contacts: &ContactnessField,
    cfg: &TinkConfig,
    seed: u64,
) -> Result<Arm> {
    let state = rig.forward(&params);
    let consis = energy_consis(&state, contacts, &target.mesh)?;
    let hand = rig.posed_mesh(&params);
    let record = GraspRecord::new(hand.clone(), target.mesh.clone(), target.sdf.clone());
    let quality = audit(&record, &cfg.metrics, seed)?;
    Ok(Arm {
        params,
        hand,
        consis,
        quality,
    })
}

/// Source pose moved by the offset between the object centroids.
pub fn direct_copy(params: &HandParams, source: &TriMesh, target: &TriMesh) -> HandParams {
    let (_, cs, _) = mass_properties(source);
    let (_, ct, _) = mass_properties(target);
    let mut p = params.clone();
    p.wrist += ct - cs;
    p
}

/// Runs every stage of the transfer in memory.
pub fn transfer(
    rig: &HandRig,
    source: &SourceGrasp,
    target: Shape,
    cfg: &TinkConfig,
    seed: u64,
) -> Result<TransferResult> {
    cfg.validate()?;
    let state = rig.forward(&source.params);
    let parts: Vec<u8> = rig.anchors.iter().map(|a| a.part).collect();
    let source_contacts = derive_contact(&state.anchors, &parts, &source.shape.mesh, &cfg.contact);
    if !(source_contacts.gamma_sum() > 0.0) {
        return Err(Error::EmptyContacts.at(Stage::Contact));
    }

    let path = build_path(source.shape.clone(), target, cfg.path.n_itpl, cfg.path.max_cells).stage(Stage::Path)?;
    let mapped = map_contacts(&source_contacts, &path, &cfg.icp).stage(Stage::Mapping)?;
    let target = &path.target;

    // The direct pose copy is both the baseline and the starting point.
    let init = direct_copy(&source.params, &source.shape.mesh, &target.mesh);
    let problem = RefineProblem {
        rig,
        init: init.clone(),
        target: &target.mesh,
        sdf: &target.sdf,
        contacts: &mapped.field,
        config: cfg.refine,
    };
    let report = refine(&problem).stage(Stage::Refine)?;

    let (refined, baseline) = rayon::join(
        || score(rig, report.params.clone(), target, &mapped.field, cfg, seed),
        || score(rig, init, target, &mapped.field, cfg, seed),
    );
    Ok(TransferResult {
        refined: refined.stage(Stage::Audit)?,
        baseline: baseline.stage(Stage::Audit)?,
        source_contacts,
        path,
        mapped,
        report,
    })
}

/// Manifest entry: files are resolved relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub id: String,
    pub source_object: PathBuf,
    pub source_params: PathBuf,
    pub target_object: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub intent: String,
    #[serde(default)]
    pub category: String,
}

#[derive(Debug, Clone)]
pub struct TransferJob {
    pub spec: JobSpec,
    /// Directory that relative paths in `spec` are resolved against.
    pub base_dir: PathBuf,
    pub config: TinkConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl TransferJob {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn read_params(path: &Path) -> Result<HandParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let params: HandParams = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    params.validate()?;
    Ok(params)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_json_pretty(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable value")
}

/// Loads the job inputs, runs the transfer and writes the job directory.
pub fn run_transfer(rig: &HandRig, job: &TransferJob) -> Result<TransferResult> {
    let load = || -> Result<(SourceGrasp, Shape)> {
        let params = read_params(&job.resolve(&job.spec.source_params))?;
        let source = read_mesh(job.resolve(&job.spec.source_object))?;
        let target = read_mesh(job.resolve(&job.spec.target_object))?;
        let source = shape_from_mesh(source, &job.config.sdf)?;
        let target = shape_from_mesh(target, &job.config.sdf)?;
        Ok((SourceGrasp { params, shape: source }, target))
    };
    let (source, target) = load().stage(Stage::Load)?;
    let result = transfer(rig, &source, target, &job.config, job.seed)?;
    write_job(job, &result).stage(Stage::Write)?;
    Ok(result)
}

pub fn write_landmarks(dir: &Path, path: &LandmarkPath) -> Result<()> {
    create_dir(dir)?;
    let mut files = Vec::with_capacity(path.n_itpl());
    for (k, l) in path.landmarks.iter().enumerate() {
        let name = format!("landmark_{k:03}.obj");
        write_obj(&l.mesh, dir.join(&name))?;
        files.push(name);
    }
    let t: Vec<f64> = path.landmarks.iter().map(|l| l.t).collect();
    let manifest = json!({"n_itpl": path.n_itpl(), "t_values": t, "files": files});
    write_file(&dir.join("manifest.json"), to_json_pretty(&manifest))
}

pub fn write_refine(dir: &Path, report: &RefineReport, hand: &TriMesh) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("final_params.json"), to_json_pretty(&report.params))?;
    write_file(&dir.join("trace.csv"), report.trace_csv())?;
    write_obj(hand, dir.join("hand_mesh.obj"))
}

fn contacts_json(result: &TransferResult) -> String {
    let parse = |s: String| serde_json::from_str::<serde_json::Value>(&s).expect("field JSON");
    to_json_pretty(&json!({
        "source": parse(result.source_contacts.to_json()),
        "target": parse(result.mapped.field.to_json()),
        "icp_rms": result.mapped.rms,
    }))
}

const METRIC_HEADER: &str = "penet_depth_cm,intersect_volume_cm3,sim_disp_mean_cm,sim_disp_std_cm,e_consis";

fn metric_fields(arm: &Arm) -> String {
    let q = &arm.quality;
    format!(
        "{},{},{},{},{}",
        q.penet_depth, q.intersect_volume, q.sim_disp_mean, q.sim_disp_std, arm.consis
    )
}

fn write_job(job: &TransferJob, result: &TransferResult) -> Result<()> {
    let dir = &job.out_dir;
    create_dir(dir)?;
    let inputs = json!({
        "job": job.spec,
        "seed": job.seed,
        "config": job.config,
    });
    write_file(&dir.join("inputs.json"), to_json_pretty(&inputs))?;
    write_landmarks(&dir.join("landmarks"), &result.path)?;
    write_file(&dir.join("contacts.json"), contacts_json(result))?;
    let colors = result.mapped.field.vertex_colors();
    write_ply(&result.path.target.mesh, Some(&colors), dir.join("contacts.ply"))?;
    let refine_dir = dir.join("refine");
    write_refine(&refine_dir, &result.report, &result.refined.hand)?;
    write_file(
        &refine_dir.join("direct_copy_params.json"),
        to_json_pretty(&result.baseline.params),
    )?;
    let metrics = format!(
        "arm,{METRIC_HEADER}\nrefined,{}\ndirect_copy,{}\n",
        metric_fields(&result.refined),
        metric_fields(&result.baseline)
    );
    write_file(&dir.join("metrics.csv"), metrics)
}

pub fn load_manifest(path: &Path) -> Result<Vec<JobSpec>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let jobs: Vec<JobSpec> = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    let mut ids: Vec<&str> = jobs.iter().map(|j| j.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::parse(path, format!("duplicate job id {:?}", w[0])));
    }
    if let Some(j) = jobs.iter().find(|j| !is_safe_id(&j.id)) {
        return Err(Error::parse(path, format!("job id {:?} is not a plain file name", j.id)));
    }
    Ok(jobs)
}

fn is_safe_id(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\'])
}

/// Per-job seed: explicit in the manifest, or derived from the run seed
/// and the job id so it does not depend on job order.
pub fn job_seed(run_seed: u64, spec: &JobSpec) -> u64 {
    spec.seed.unwrap_or_else(|| {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ run_seed;
        for b in spec.id.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    })
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub id: String,
    pub outcome: std::result::Result<(Arm, Arm, usize), String>,
}

#[derive(Debug, Clone, Default)]
pub struct BatchSummary {
    pub rows: Vec<SummaryRow>,
}

impl BatchSummary {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn to_csv(&self) -> String {
        let prefixed = |p: &str| {
            METRIC_HEADER
                .split(',')
                .map(|c| format!("{p}_{c}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = format!(
            "id,status,error,{},{},iterations\n",
            prefixed("refined"),
            prefixed("direct")
        );
        let blanks = ",".repeat(2 * METRIC_HEADER.split(',').count());
        for row in &self.rows {
            match &row.outcome {
                Ok((refined, baseline, iterations)) => {
                    let _ = writeln!(
                        s,
                        "{},ok,,{},{},{iterations}",
                        row.id,
                        metric_fields(refined),
                        metric_fields(baseline)
                    );
                }
                Err(msg) => {
                    let _ = writeln!(s, "{},error,\"{}\"{blanks}", row.id, msg.replace('"', "\"\""));
                }
            }
        }
        s
    }
}

/// Runs every job of the manifest with at most `jobs` worker threads,
/// writes `summary.csv` to `out_dir` and returns the summary. Failing jobs
/// are recorded in the summary; only an unreadable manifest or an
/// unwritable output directory is fatal.
pub fn run_batch(
    rig: &HandRig,
    manifest: &Path,
    config: &TinkConfig,
    out_dir: &Path,
    seed: u64,
    jobs: usize,
) -> Result<BatchSummary> {
    if jobs == 0 {
        return Err(Error::invalid("parallelism must be at least 1"));
    }
    config.validate()?;
    let specs = load_manifest(manifest)?;
    let base_dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    create_dir(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let rows: Vec<SummaryRow> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let job = TransferJob {
                    spec: spec.clone(),
                    base_dir: base_dir.clone(),
                    config: *config,
                    out_dir: out_dir.join(&spec.id),
                    seed: job_seed(seed, spec),
                };
                let outcome = run_transfer(rig, &job)
                    .map(|r| (r.refined, r.baseline, r.report.iterations()))
                    .map_err(|e| e.to_string());
                SummaryRow {
                    id: spec.id.clone(),
                    outcome,
                }
            })
            .collect()
    });
    let summary = BatchSummary { rows };
    write_file(&out_dir.join("summary.csv"), summary.to_csv())?;
    Ok(summary)
}

/// Grasp to audit: the hand as a mesh or as parameters of the default rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSpec {
    pub id: String,
    pub object: PathBuf,
    #[serde(default)]
    pub hand_mesh: Option<PathBuf>,
    #[serde(default)]
    pub hand_params: Option<PathBuf>,
    #[serde(default)]
    pub intent: String,
    #[serde(default)]
    pub category: String,
}

pub fn load_grasp(rig: &HandRig, spec: &AuditSpec, base_dir: &Path, sdf: &SdfConfig) -> Result<GraspRecord> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
    let hand = match (&spec.hand_mesh, &spec.hand_params) {
        (Some(m), None) => read_mesh(resolve(m))?,
        (None, Some(p)) => rig.posed_mesh(&read_params(&resolve(p))?),
        _ => {
            return Err(Error::invalid(format!(
                "grasp {}: give exactly one of hand_mesh and hand_params",
                spec.id
            )))
        }
    };
    let object = shape_from_mesh(read_mesh(resolve(&spec.object))?, sdf)?;
    Ok(GraspRecord {
        hand,
        object: object.mesh,
        object_sdf: object.sdf,
        source_id: spec.id.clone(),
        intent: spec.intent.clone(),
        category: spec.category.clone(),
    })
}

/// Audits every grasp of a manifest; per-grasp failures are returned, not
/// raised.
pub fn run_audit(
    rig: &HandRig,
    manifest: &Path,
    config: &TinkConfig,
    seed: u64,
) -> Result<Vec<(String, std::result::Result<QualityReport, String>)>> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let specs: Vec<AuditSpec> = serde_json::from_str(&text).map_err(|e| Error::parse(manifest, e))?;
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(specs
        .par_iter()
        .map(|spec| {
            let report = load_grasp(rig, spec, &base, &config.sdf)
                .stage(Stage::Load)
                .and_then(|g| audit(&g, &config.metrics, seed).stage(Stage::Audit))
                .map_err(|e| e.to_string());
            (spec.id.clone(), report)
        })
        .collect())
}

/// Writes a fixture set of `count` transfer pairs to `dir`: object meshes,
/// synthesized source grasps and a batch manifest. Returns the manifest
/// path.
pub fn write_fixtures(rig: &HandRig, dir: &Path, count: usize, seed: u64, config: &TinkConfig) -> Result<PathBuf> {
    create_dir(dir)?;
    let pairs = fixture_pairs(count, seed);
    let specs: Vec<JobSpec> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (src, tgt))| write_fixture_pair(rig, dir, i, src, tgt, config))
        .collect::<Result<_>>()?;
    let manifest = dir.join("manifest.json");
    write_file(&manifest, to_json_pretty(&specs))?;
    Ok(manifest)
}

fn write_fixture_pair(
    rig: &HandRig,
    dir: &Path,
    i: usize,
    source: &ObjectSpec,
    target: &ObjectSpec,
    config: &TinkConfig,
) -> Result<JobSpec> {
    let id = format!("pair_{i:03}");
    let shape = source.build(config.sdf.resolution)?;
    let params = synthesize_grasp(rig, &shape, &config.synthesis)?;
    let target_mesh = target.build(config.sdf.resolution)?.mesh;
    let names = [
        format!("{id}_source.obj"),
        format!("{id}_source_params.json"),
        format!("{id}_target.obj"),
    ];
    write_obj(&shape.mesh, dir.join(&names[0]))?;
    write_file(&dir.join(&names[1]), to_json_pretty(&params))?;
    write_obj(&target_mesh, dir.join(&names[2]))?;
    let [source_object, source_params, target_object] = names.map(PathBuf::from);
    Ok(JobSpec {
        id,
        source_object,
        source_params,
        target_object,
        seed: None,
        intent: "hold".into(),
        category: source.category().into(),
    })
}
