//! Run configuration and the staged generate → collect → train → evaluate
//! pipeline. Every artifact gets a `.stamp.json` sidecar with the
//! effective-config hash and a content hash; stages whose outputs carry a
//! matching stamp are skipped on rerun.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::depthcam::{dequantize_depth, draw_segment, quantize_depth, render_depth_at, write_pgm_u16, CameraModel, CameraPose};
use crate::evalharness::{audit_fraction, check_heldout, grasp_overlay, qualitative_grasp_audit, run_eval, write_report, AuditRow, EvalReport, EvalSpec, Method};
use crate::geometry::{Pose2, Vec2};
use crate::graspselect::SelectionConfig;
use crate::graspsim::evaluate_grasp;
use crate::neural::io::{load_params_for, save_params};
use crate::neural::net::{ArchConfig, TogNetParams};
use crate::neural::policy::PolicyConfig;
use crate::procgen::{generate_library, Family, ProcGenConfig, ToolLibrary};
use crate::rng::{derive_seed, fnv_1a, rng_from, tag};
use crate::selfsup::{collect_round, collect_stage0, read_dataset, write_dataset, CollectContext, CollectionPlan, DatasetHeader, EpisodeRecord};
use crate::tasksim::{gripper_start, prepare_episode, tool_in_gripper, SimConfig, TaskKind, TaskScene};
use crate::trainer::{train, write_trace_csv, Stage, TrainConfig, TrainReport};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Relative to the output directory.
    pub library: String,
    pub heldout: String,
    pub datasets: String,
    pub checkpoints: String,
    pub reports: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            library: "library.json".into(),
            heldout: "heldout.json".into(),
            datasets: "datasets".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LibraryConfig {
    pub train_per_family: usize,
    pub heldout_per_family: usize,
    /// Derived from `master_seed`.
    pub train_seed: u64,
    /// Derived from `master_seed`.
    pub heldout_seed: u64,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        LibraryConfig {
            train_per_family: 100,
            heldout_per_family: 20,
            train_seed: 0,
            heldout_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub tasks: Vec<TaskKind>,
    pub paths: PathsConfig,
    pub procgen: ProcGenConfig,
    pub library: LibraryConfig,
    pub sim: SimConfig,
    pub arch: ArchConfig,
    pub collection: CollectionPlan,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub policy: PolicyConfig,
    /// `task` is set per evaluated task.
    pub eval: EvalSpec,
    /// Held-out T-tools in the qualitative audit.
    pub audit_tools: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 0,
            tasks: vec![TaskKind::Sweep, TaskKind::Hammer],
            paths: PathsConfig::default(),
            procgen: ProcGenConfig::default(),
            library: LibraryConfig::default(),
            sim: SimConfig::default(),
            arch: ArchConfig::default(),
            collection: CollectionPlan::default(),
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            policy: PolicyConfig::default(),
            eval: EvalSpec::default(),
            audit_tools: 20,
        }
    }
}

impl RunConfig {
    /// Parses a JSON config; unknown keys are rejected with the key named.
    pub fn from_json(bytes: &[u8], origin: &Path) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .strip_prefix("unknown field `")
                .and_then(|r| r.split('`').next())
                .unwrap_or("config")
                .to_string();
            Error::Config {
                field,
                detail: format!("{}: {msg}", origin.display()),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes, path)
    }

    /// Fills every derived seed from `master_seed`.
    pub fn effective(mut self) -> Self {
        let m = self.master_seed;
        self.library.train_seed = derive_seed(&[m, tag("library")]);
        self.library.heldout_seed = derive_seed(&[m, tag("heldout")]);
        self.collection.master_seed = derive_seed(&[m, tag("collect")]);
        self.train.seed = derive_seed(&[m, tag("train")]);
        self.eval.seed = derive_seed(&[m, tag("eval")]);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::config("tasks", "must list at least one task"));
        }
        let mut t = self.tasks.clone();
        t.sort_by_key(|k| k.code());
        t.dedup();
        if t.len() != self.tasks.len() {
            return Err(Error::config("tasks", "duplicate task"));
        }
        if self.library.train_per_family == 0 {
            return Err(Error::config("library.train_per_family", "must be >= 1"));
        }
        if self.library.heldout_per_family == 0 {
            return Err(Error::config("library.heldout_per_family", "must be >= 1"));
        }
        self.procgen.validate()?;
        self.sim.validate()?;
        self.arch.validate()?;
        self.collection.validate()?;
        self.train.validate()?;
        self.selection.validate()?;
        self.policy.validate()?;
        self.eval.validate()?;
        if self.sim.n_candidates != self.selection.n_candidates {
            return Err(Error::config("sim.n_candidates", "must equal selection.n_candidates"));
        }
        if self.train.loss.sigma != self.policy.sigma {
            return Err(Error::config("train.loss.sigma", "must equal policy.sigma"));
        }
        if (self.arch.crop_small, self.arch.crop_large) != (crate::selfsup::CROP_SMALL, crate::selfsup::CROP_LARGE) {
            return Err(Error::config("arch.crop_large", "stored crops are 64 and 32 pixels"));
        }
        Ok(())
    }

    /// Canonical JSON of the effective config.
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("serializable config")
    }

    pub fn hash(&self) -> String {
        format!("{:016x}", fnv_1a(&serde_json::to_vec(self).expect("serializable config")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stamp {
    pub config_hash: String,
    pub content_hash: String,
    pub kind: String,
}

fn stamp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".stamp.json");
    PathBuf::from(s)
}

fn content_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:016x}", fnv_1a(&bytes)))
}

pub fn write_stamp(path: &Path, kind: &str, config_hash: &str) -> Result<()> {
    let s = Stamp {
        config_hash: config_hash.into(),
        content_hash: content_hash(path)?,
        kind: kind.into(),
    };
    let sp = stamp_path(path);
    fs::write(&sp, serde_json::to_vec_pretty(&s).expect("serializable")).map_err(|e| Error::io(&sp, e))
}

/// `Ok(true)` when `path` and its stamp exist and match; `Ok(false)` when
/// either is missing.
pub fn stamp_matches(path: &Path, config_hash: &str) -> Result<bool> {
    let sp = stamp_path(path);
    if !path.exists() || !sp.exists() {
        return Ok(false);
    }
    let bytes = fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
    let s: Stamp = serde_json::from_slice(&bytes).map_err(|e| Error::format(&sp, e.to_string()))?;
    Ok(s.config_hash == config_hash && s.content_hash == content_hash(path)?)
}

/// Refuses an input artifact that is missing or stamped by another config.
pub fn require_stamped(path: &Path, config_hash: &str, stage: &str) -> Result<()> {
    let sp = stamp_path(path);
    if !path.exists() || !sp.exists() {
        return Err(Error::MissingPrerequisite {
            stage: stage.into(),
            detail: format!("{} not found; run the earlier stage first", path.display()),
        });
    }
    let bytes = fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
    let s: Stamp = serde_json::from_slice(&bytes).map_err(|e| Error::format(&sp, e.to_string()))?;
    if s.config_hash != config_hash {
        return Err(Error::HashMismatch {
            what: format!("config of {}", path.display()),
            expected: config_hash.into(),
            found: s.config_hash,
        });
    }
    let found = content_hash(path)?;
    if s.content_hash != found {
        return Err(Error::HashMismatch {
            what: format!("content of {}", path.display()),
            expected: s.content_hash,
            found,
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: TaskKind,
    pub rates: Vec<(Method, f64)>,
    /// `(baseline, ours − baseline, p)` from the paired test.
    pub paired: Vec<(Method, f64, f64)>,
    /// Fraction of audited tools whose task-oriented grasp lies farther from
    /// (hammer) or nearer to (sweep) the bulky part.
    pub audit_fraction: f64,
    pub audit_tools: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub config_hash: String,
    pub tasks: Vec<TaskSummary>,
}

pub struct Pipeline {
    pub config: RunConfig,
    pub out: PathBuf,
    pub hash: String,
    pub verbose: bool,
}

impl Pipeline {
    /// Validates the config, materializes its defaults and writes
    /// `effective_config.json` to `out`.
    pub fn new(config: RunConfig, out: &Path) -> Result<Self> {
        let config = config.effective();
        config.validate()?;
        let hash = config.hash();
        let p = Pipeline {
            config,
            out: out.to_path_buf(),
            hash,
            verbose: false,
        };
        for d in [p.out.clone(), p.dir(&p.config.paths.datasets), p.dir(&p.config.paths.checkpoints), p.dir(&p.config.paths.reports)] {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let eff = p.out.join("effective_config.json");
        let mut bytes = p.config.to_json();
        bytes.push(b'\n');
        fs::write(&eff, bytes).map_err(|e| Error::io(&eff, e))?;
        Ok(p)
    }

    fn dir(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn library_path(&self) -> PathBuf {
        self.dir(&self.config.paths.library)
    }

    pub fn heldout_path(&self) -> PathBuf {
        self.dir(&self.config.paths.heldout)
    }

    pub fn dataset_path(&self, task: TaskKind, round: u32) -> PathBuf {
        self.dir(&self.config.paths.datasets).join(format!("{task}_round{round}.bin"))
    }

    pub fn checkpoint_path(&self, task: TaskKind, round: u32) -> PathBuf {
        self.dir(&self.config.paths.checkpoints).join(format!("{task}_round{round}.params"))
    }

    pub fn trace_path(&self, task: TaskKind, round: u32) -> PathBuf {
        self.dir(&self.config.paths.checkpoints).join(format!("{task}_round{round}_trace.csv"))
    }

    pub fn report_path(&self, task: TaskKind) -> PathBuf {
        self.dir(&self.config.paths.reports).join(format!("{task}_eval.csv"))
    }

    pub fn audit_path(&self, task: TaskKind) -> PathBuf {
        self.dir(&self.config.paths.reports).join(format!("{task}_audit.json"))
    }

    pub fn summary_path(&self) -> PathBuf {
        self.dir(&self.config.paths.reports).join("summary.json")
    }

    fn background(&self) -> f64 {
        self.config.sim.camera.camera_height
    }

    /// Training and held-out libraries.
    pub fn gen(&self) -> Result<()> {
        let (lp, hp) = (self.library_path(), self.heldout_path());
        if stamp_matches(&lp, &self.hash)? && stamp_matches(&hp, &self.hash)? {
            self.log("gen: up to date");
            return Ok(());
        }
        let c = &self.config;
        let lib = generate_library(c.library.train_seed, c.library.train_per_family, &c.procgen)?;
        let held = generate_library(c.library.heldout_seed, c.library.heldout_per_family, &c.procgen)?;
        check_heldout(&lib, &held)?;
        for (l, p) in [(&lib, &lp), (&held, &hp)] {
            l.save(p)?;
            write_stamp(p, "library", &self.hash)?;
            let m = p.with_extension("manifest.json");
            l.write_manifest(&m)?;
            write_stamp(&m, "manifest", &self.hash)?;
        }
        self.log(format!("gen: {} training and {} held-out tools", lib.len(), held.len()));
        Ok(())
    }

    pub fn load_library(&self) -> Result<ToolLibrary> {
        let p = self.library_path();
        require_stamped(&p, &self.hash, "collect")?;
        ToolLibrary::load(&p)
    }

    pub fn load_heldout(&self) -> Result<ToolLibrary> {
        let p = self.heldout_path();
        require_stamped(&p, &self.hash, "eval")?;
        ToolLibrary::load(&p)
    }

    pub fn load_checkpoint(&self, task: TaskKind, round: u32) -> Result<TogNetParams> {
        let p = self.checkpoint_path(task, round);
        require_stamped(&p, &self.hash, "checkpoint")?;
        load_params_for(&p, &self.config.arch)
    }

    pub fn load_dataset(&self, task: TaskKind, round: u32) -> Result<Vec<EpisodeRecord>> {
        let p = self.dataset_path(task, round);
        require_stamped(&p, &self.hash, "dataset")?;
        let (h, recs) = read_dataset(&p)?;
        if h.config_hash != self.hash {
            return Err(Error::HashMismatch {
                what: format!("config of {}", p.display()),
                expected: self.hash.clone(),
                found: h.config_hash,
            });
        }
        Ok(recs)
    }

    /// Round 0 is the stage-0 collection with random grasps and actions.
    pub fn collect(&self, task: TaskKind, round: u32) -> Result<PathBuf> {
        let path = self.dataset_path(task, round);
        if stamp_matches(&path, &self.hash)? {
            self.log(format!("collect {task} round {round}: up to date"));
            return Ok(path);
        }
        if round as usize > self.config.collection.rounds {
            return Err(Error::config("round", format!("{round} exceeds collection.rounds")));
        }
        let lib = self.load_library()?;
        let c = &self.config;
        let ctx = CollectContext {
            library: &lib,
            sim: &c.sim,
            selection: &c.selection,
            policy: &c.policy,
            task,
        };
        let t = Instant::now();
        let records = if round == 0 {
            collect_stage0(&c.collection, &ctx)?
        } else {
            let params = self.load_checkpoint(task, round - 1)?;
            collect_round(round, &c.collection, &ctx, &params)?
        };
        let header = DatasetHeader::new(task, &c.collection, lib.hash(), &self.hash, records.len());
        write_dataset(&header, &records, &path)?;
        write_stamp(&path, "dataset", &self.hash)?;
        let sg = records.iter().filter(|r| r.s_g).count();
        let st = records.iter().filter(|r| r.s_t).count();
        self.log(format!(
            "collect {task} round {round}: {} episodes, S_G {sg}, S_T {st}, {:.1}s",
            records.len(),
            t.elapsed().as_secs_f64()
        ));
        Ok(path)
    }

    /// Round 0 pretrains the grasp stream from a fresh network; round r ≥ 1
    /// continues from round r−1 on the union of collection rounds 1..=r.
    pub fn train(&self, task: TaskKind, round: u32) -> Result<PathBuf> {
        let path = self.checkpoint_path(task, round);
        if stamp_matches(&path, &self.hash)? {
            self.log(format!("train {task} round {round}: up to date"));
            return Ok(path);
        }
        let c = &self.config;
        let cfg = TrainConfig {
            seed: derive_seed(&[c.train.seed, task.code() as u64, round as u64]),
            ..c.train.clone()
        };
        let t = Instant::now();
        let (params, report) = if round == 0 {
            let data = self.load_dataset(task, 0)?;
            let mut params = TogNetParams::new(c.arch.clone(), &mut rng_from(&[c.train.seed, tag("init"), task.code() as u64]))?;
            let rep = train(&mut params, &[&data], self.background(), &cfg, Stage::Stage0)?;
            (params, rep)
        } else {
            let mut params = self.load_checkpoint(task, round - 1)?;
            let data = (1..=round).map(|r| self.load_dataset(task, r)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[EpisodeRecord]> = data.iter().map(|d| d.as_slice()).collect();
            let rep = train(&mut params, &refs, self.background(), &cfg, Stage::Joint)?;
            (params, rep)
        };
        save_params(&params, &path)?;
        write_stamp(&path, "checkpoint", &self.hash)?;
        let tp = self.trace_path(task, round);
        write_trace_csv(&report.trace, &tp)?;
        write_stamp(&tp, "trace", &self.hash)?;
        self.log_train(task, round, &report, t);
        Ok(path)
    }

    fn log_train(&self, task: TaskKind, round: u32, r: &TrainReport, t: Instant) {
        let last = r.trace.last();
        self.log(format!(
            "train {task} round {round}: {} examples, {} steps, final loss g {:.4} tg {:.4} pi {:.4}, {:.1}s",
            r.examples,
            r.steps,
            last.map_or(f64::NAN, |e| e.loss_g),
            last.map_or(f64::NAN, |e| e.loss_tg),
            last.map_or(f64::NAN, |e| e.loss_pi),
            t.elapsed().as_secs_f64()
        ));
    }

    fn final_round(&self) -> u32 {
        self.config.collection.rounds as u32
    }

    /// Paired evaluation of the final checkpoint on held-out tools.
    pub fn eval(&self, task: TaskKind) -> Result<EvalReport> {
        let csv = self.report_path(task);
        let json = csv.with_extension("json");
        if stamp_matches(&csv, &self.hash)? && stamp_matches(&json, &self.hash)? {
            self.log(format!("eval {task}: up to date"));
            let bytes = fs::read(&json).map_err(|e| Error::io(&json, e))?;
            return serde_json::from_slice(&bytes).map_err(|e| Error::format(&json, e.to_string()));
        }
        let params = self.load_checkpoint(task, self.final_round())?;
        let held = self.load_heldout()?;
        let spec = EvalSpec {
            task,
            ..self.config.eval.clone()
        };
        let t = Instant::now();
        let report = run_eval(&spec, &params, &held, &self.config.sim, &self.config.selection)?;
        write_report(&report, &csv)?;
        write_stamp(&csv, "eval_csv", &self.hash)?;
        write_stamp(&json, "eval_json", &self.hash)?;
        let rates: Vec<String> = report.methods.iter().map(|m| format!("{} {:.3}", m.method, m.overall.rate)).collect();
        self.log(format!("eval {task}: {} ({:.1}s)", rates.join(", "), t.elapsed().as_secs_f64()));
        Ok(report)
    }

    pub fn audit(&self, task: TaskKind) -> Result<Vec<AuditRow>> {
        let path = self.audit_path(task);
        if stamp_matches(&path, &self.hash)? {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            return serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()));
        }
        let params = self.load_checkpoint(task, self.final_round())?;
        let held = self.load_heldout()?;
        let tools: Vec<_> = held.tools.iter().filter(|t| t.family == Family::T).take(self.config.audit_tools).collect();
        let rows = qualitative_grasp_audit(&params, &tools, task, &self.config.sim, derive_seed(&[self.config.eval.seed, tag("audit")]))?;
        fs::write(&path, serde_json::to_vec_pretty(&rows).expect("serializable")).map_err(|e| Error::io(&path, e))?;
        write_stamp(&path, "audit", &self.hash)?;
        Ok(rows)
    }

    /// Every stage in order; finished stages are skipped.
    pub fn run_all(&self) -> Result<PipelineSummary> {
        self.gen()?;
        let mut tasks = Vec::new();
        for &task in &self.config.tasks {
            for round in 0..=self.final_round() {
                self.collect(task, round)?;
                self.train(task, round)?;
            }
            let report = self.eval(task)?;
            let rows = self.audit(task)?;
            tasks.push(TaskSummary {
                task,
                rates: report.methods.iter().map(|m| (m.method, m.overall.rate)).collect(),
                paired: report.paired.iter().map(|p| (p.b, p.rate_difference, p.p_value)).collect(),
                audit_fraction: audit_fraction(&rows, task == TaskKind::Hammer),
                audit_tools: rows.len(),
            });
        }
        let summary = PipelineSummary {
            config_hash: self.hash.clone(),
            tasks,
        };
        let p = self.summary_path();
        fs::write(&p, serde_json::to_vec_pretty(&summary).expect("serializable")).map_err(|e| Error::io(&p, e))?;
        write_stamp(&p, "summary", &self.hash)?;
        Ok(summary)
    }

    /// Re-renders one recorded episode. Writes `<stem>_grasp.pgm` (grasp
    /// region, grasp axis and jaw contacts) and `<stem>_task.pgm` (manipulation
    /// region, held tool at the start pose with the sweep corridor or the
    /// hammer arc). Returns both paths and the grasp-center pixel.
    pub fn inspect(&self, task: TaskKind, round: u32, episode: u64, out_stem: &Path) -> Result<InspectResult> {
        let lib = self.load_library()?;
        let recs = self.load_dataset(task, round)?;
        let rec = recs.iter().find(|r| r.episode_index == episode).ok_or_else(|| Error::config("episode", format!("{episode} not in {task} round {round}")))?;
        let tool = lib.get(&rec.tool_id).ok_or_else(|| Error::config("tool_id", format!("{} not in library", rec.tool_id)))?;
        let sim = &self.config.sim;
        let prep = prepare_episode(tool, task, &rec.seeds, sim)?;
        let mut rng = rng_from(&[rec.seeds.noise]);
        let outcome = evaluate_grasp(&tool.shape, &prep.tool_pose, &rec.grasp, &sim.gripper, &mut rng);
        let n = prep.obs.size();
        let mut img = grasp_overlay(&prep.obs, std::slice::from_ref(&rec.grasp), 0.5 * sim.gripper.max_opening, u16::MAX);
        as_height_map(&mut img, self.background());
        if let Some(contacts) = &outcome.realized.contacts {
            for c in contacts {
                let (r, col) = prep.obs.world_to_pixel(c.point);
                draw_cross(&mut img, n, (r, col), 2.0, u16::MAX);
            }
        }
        let grasp_pgm = PathBuf::from(format!("{}_grasp.pgm", out_stem.display()));
        write_pgm_u16(&grasp_pgm, n, n, &img)?;

        // manipulation region, noise-free
        let table = &sim.task.table;
        let cam = CameraModel {
            region_center: [0.5 * table.half_x, 0.0],
            region_extent: 2.0 * table.half_y.max(0.5 * table.half_x),
            resolution: 160,
            noise_std: 0.0,
            jitter_center_std: 0.0,
            jitter_rotation_std: 0.0,
            ..sim.camera.clone()
        };
        let held = tool_in_gripper(&prep.tool_pose, &outcome.realized);
        let grip = gripper_start(&prep.scene, &rec.action, &sim.task);
        let pose = grip.compose(&held);
        let obs = render_depth_at(&[(&tool.shape, pose)], &cam, CameraPose { center: cam.center(), rotation: 0.0 }, 0);
        let m = obs.size();
        let mut timg: Vec<u16> = obs.pixels.iter().map(|&d| quantize_depth(d)).collect();
        as_height_map(&mut timg, self.background());
        let px = |p: Vec2| obs.world_to_pixel(p);
        match &prep.scene {
            TaskScene::Sweep(s) => {
                let len = sim.task.sweep.sweep_length;
                for t in &s.targets {
                    draw_circle(&mut timg, m, &px, t.center, t.radius);
                }
                let (lo, hi) = tool_x_extent(tool, &pose);
                for x in [lo, hi] {
                    draw_segment(&mut timg, m, px(Vec2::new(x, pose.y)), px(Vec2::new(x, pose.y + len)), u16::MAX);
                }
            }
            TaskScene::Hammer(h) => {
                draw_circle(&mut timg, m, &px, h.peg, h.peg_radius);
                let c = grip.translation();
                let r = (h.peg - c).norm();
                let a0 = (h.peg - c).angle() - sim.task.hammer.arc;
                let steps = 48;
                for k in 0..steps {
                    let a = a0 + sim.task.hammer.arc * k as f64 / steps as f64;
                    let b = a0 + sim.task.hammer.arc * (k + 1) as f64 / steps as f64;
                    draw_segment(&mut timg, m, px(c + Vec2::from_angle(a) * r), px(c + Vec2::from_angle(b) * r), u16::MAX);
                }
                for e in h.slot.edges() {
                    draw_segment(&mut timg, m, px(e.0), px(e.1), u16::MAX);
                }
            }
        }
        draw_cross(&mut timg, m, px(grip.translation()), 3.0, u16::MAX);
        let task_pgm = PathBuf::from(format!("{}_task.pgm", out_stem.display()));
        write_pgm_u16(&task_pgm, m, m, &timg)?;
        Ok(InspectResult {
            grasp_image: grasp_pgm,
            task_image: task_pgm,
            grasp_pixel: prep.obs.world_to_pixel(rec.grasp.center()),
            s_g: rec.s_g,
            s_t: rec.s_t,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InspectResult {
    pub grasp_image: PathBuf,
    pub task_image: PathBuf,
    /// `(row, col)` of the stored grasp center in the grasp image.
    pub grasp_pixel: (f64, f64),
    pub s_g: bool,
    pub s_t: bool,
}

fn tool_x_extent(tool: &crate::procgen::ToolShape, pose: &Pose2) -> (f64, f64) {
    tool.shape
        .posed_parts(pose)
        .iter()
        .flat_map(|p| p.vertices().iter().map(|v| v.x).collect::<Vec<_>>())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// Quantized depth → height above the table, 0..10 cm over 0..40000, so the
/// tool reads against the background; overlay marks (`u16::MAX`) are kept.
fn as_height_map(img: &mut [u16], background: f64) {
    for v in img.iter_mut().filter(|v| **v != u16::MAX) {
        let h = (background - dequantize_depth(*v)).clamp(0.0, 0.1);
        *v = (h / 0.1 * 40000.0).round() as u16;
    }
}

fn draw_cross(img: &mut [u16], n: usize, at: (f64, f64), half: f64, value: u16) {
    draw_segment(img, n, (at.0 - half, at.1), (at.0 + half, at.1), value);
    draw_segment(img, n, (at.0, at.1 - half), (at.0, at.1 + half), value);
}

fn draw_circle(img: &mut [u16], n: usize, px: &dyn Fn(Vec2) -> (f64, f64), c: Vec2, r: f64) {
    let k = 24;
    for i in 0..k {
        let a = Vec2::from_angle(std::f64::consts::TAU * i as f64 / k as f64) * r;
        let b = Vec2::from_angle(std::f64::consts::TAU * (i + 1) as f64 / k as f64) * r;
        draw_segment(img, n, px(c + a), px(c + b), u16::MAX);
    }
}
