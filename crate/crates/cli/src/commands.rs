use std::collections::HashSet;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use handocc::kinematics::{fit_pose_with, forward_kinematics, random_pose, skeleton_mpjpe, FitConfig, PoseRanges, Side};
use handocc::loss::PointSetKind;
use handocc::mesh::{export_obj, generate, validate_watertight, MeshVariant};
use handocc::occnet::{sample_training_set, split_poses, train_occnet, validation_iou, OccNet, TrainConfig};
use handocc::occupancy::{
    caster_grid, caster_pair_count, field_grid, field_pair_count, iou, pair_bbox, CapsuleField, GridSpec,
    OccupancyField, RayCaster, GRID_N,
};
use handocc::refine::{
    intersecting_pairs, noise_study, pair_row, refine_pair, refine_skeletons, touching_pairs, BatchReport, NoiseConfig,
    PairSkeletons, RefineConfig,
};
use handocc::{HandPose, Skeleton};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::failure::{Failure, Outcome};
use crate::files::{check_no_clobber, read_json, write_bytes, write_json, PairFile};

/// What a finished command hands back for its manifest.
pub struct Run {
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub results: Value,
    /// Set when outputs were written but the run still fails, e.g. a fit
    /// residual over the limit.
    pub failure: Option<Failure>,
}

impl Run {
    fn ok(config: Value, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>, results: Value) -> Self {
        Self { config, inputs, outputs, results, failure: None }
    }
}

fn json_of<S: serde::Serialize>(v: &S) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Plain,
    Refined,
}

impl From<VariantArg> for MeshVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Plain => MeshVariant::Plain,
            VariantArg::Refined => MeshVariant::Refined,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PointsArg {
    Sparse,
    Dense,
    Mesh,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SideArg {
    Right,
    Left,
    /// Right, left, right, ...
    Alternate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PairKind {
    /// Slightly interpenetrating.
    Intersecting,
    /// In contact without intersecting.
    Touching,
}

/// Loss and refinement flags shared by the commands that refine.
#[derive(Clone, Debug, Args)]
pub struct LossArgs {
    /// Occupancy field: `capsule`, or `occnet:PATH` for a trained parameter file.
    #[arg(long, default_value = "capsule")]
    pub field: String,
    /// Refinement config JSON. The flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Loss weight w. Defaults to 1e-6, or 1e-8 for mesh points.
    #[arg(long)]
    pub weight: Option<f64>,
    /// Tested points per hand: 21 joints, joints plus 5 points per bone (121), or the 307 mesh vertices.
    #[arg(long, value_enum)]
    pub points: Option<PointsArg>,
    /// Interior points per bone for `--points dense`.
    #[arg(long)]
    pub dense_k: Option<usize>,
    /// Test both hands against each other, not only the left against the right.
    #[arg(long)]
    pub both_hands: bool,
    /// Use the truncated kernel max(0, p - 0.5).
    #[arg(long)]
    pub truncated: bool,
    /// Iteration cap of the optimizer.
    #[arg(long)]
    pub max_iters: Option<usize>,
}

impl LossArgs {
    pub fn refine_config(&self, seed: u64) -> Outcome<RefineConfig> {
        let mut cfg: RefineConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => RefineConfig::default(),
        };
        if let Some(p) = self.points {
            cfg.loss.point_set = match p {
                PointsArg::Sparse => PointSetKind::Sparse,
                PointsArg::Dense => PointSetKind::DENSE,
                PointsArg::Mesh => PointSetKind::Mesh,
            };
            cfg.loss.weight = cfg.loss.point_set.default_weight();
        }
        if let Some(k) = self.dense_k {
            match cfg.loss.point_set {
                PointSetKind::Dense { .. } => cfg.loss.point_set = PointSetKind::Dense { k },
                _ => return Err(Failure::Input("--dense-k needs dense points".into())),
            }
        }
        if let Some(w) = self.weight {
            cfg.loss.weight = w;
        }
        cfg.loss.both_hands |= self.both_hands;
        cfg.loss.truncated |= self.truncated;
        if let Some(n) = self.max_iters {
            cfg.max_iters = n;
        }
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = self.config.iter().cloned().collect();
        v.extend(field_inputs(&self.field));
        v
    }

    pub fn load_field(&self) -> Outcome<Box<dyn OccupancyField<f64>>> {
        load_field(&self.field)
    }

    fn snapshot(&self, cfg: &RefineConfig) -> Value {
        json!({"field": self.field, "refine": json_of(cfg)})
    }
}

fn field_inputs(spec: &str) -> Option<PathBuf> {
    spec.strip_prefix("occnet:").map(PathBuf::from)
}

/// `capsule` or `occnet:PATH`.
fn load_field(spec: &str) -> Outcome<Box<dyn OccupancyField<f64>>> {
    if spec == "capsule" {
        return Ok(Box::new(CapsuleField::default()));
    }
    match spec.strip_prefix("occnet:") {
        Some(p) if !p.is_empty() => {
            let net = OccNet::load(p.as_ref()).map_err(|e| Failure::Input(format!("{p}: {e}")))?;
            Ok(Box::new(net))
        }
        _ => Err(Failure::Input(format!("unknown field {spec:?}; use capsule or occnet:PATH"))),
    }
}

/// Comma-separated probabilities in [0, 1].
#[derive(Clone, Debug)]
pub struct Probs(pub Vec<f64>);

pub fn parse_probs(s: &str) -> Result<Probs, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("{t:?} is not a number")))
        .collect::<Result<_, _>>()?;
    if let Some(p) = v.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("probability {p} outside [0, 1]"));
    }
    Ok(Probs(v))
}

#[derive(Clone, Debug, Args)]
pub struct FitArgs {
    /// Skeleton JSON: {"side": "right"|"left", "joints": [[x, y, z], ...]} with 21 joints in mm.
    #[arg(long)]
    pub input: PathBuf,
    /// Fitted pose JSON.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn fit(a: &FitArgs, seed: u64) -> Outcome<Run> {
    check_no_clobber(std::slice::from_ref(&a.input), std::slice::from_ref(&a.out))?;
    let s: Skeleton = read_json(&a.input)?;
    let cfg = FitConfig { seed, ..FitConfig::default() };
    let (pose, residual) = fit_pose_with(&s, None, &cfg)?;
    write_json(&a.out, &pose)?;
    println!("residual_mm={residual:.6}");
    let mut run = Run::ok(json_of(&cfg), vec![a.input.clone()], vec![a.out.clone()], json!({"residual_mm": residual}));
    if !(residual < 0.5) {
        run.failure = Some(Failure::Contract(format!("fit residual {residual:.4} mm is not below 0.5 mm")));
    }
    Ok(run)
}

#[derive(Clone, Debug, Args)]
pub struct FkArgs {
    /// Pose JSON.
    #[arg(long)]
    pub pose: PathBuf,
    /// Skeleton JSON.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn fk(a: &FkArgs, _seed: u64) -> Outcome<Run> {
    check_no_clobber(std::slice::from_ref(&a.pose), std::slice::from_ref(&a.out))?;
    let pose: HandPose = read_json(&a.pose)?;
    let s = forward_kinematics(&pose)?;
    write_json(&a.out, &s)?;
    Ok(Run::ok(Value::Null, vec![a.pose.clone()], vec![a.out.clone()], Value::Null))
}

#[derive(Clone, Debug, Args)]
pub struct MeshArgs {
    /// Pose JSON, or a skeleton JSON.
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long, value_enum, default_value = "plain")]
    pub variant: VariantArg,
    /// Wavefront OBJ output.
    #[arg(long)]
    pub out: PathBuf,
}

/// A pose or skeleton file, as a skeleton.
fn read_hand(path: &std::path::Path) -> Outcome<Skeleton> {
    let v: Value = read_json(path)?;
    let bad = |e: serde_json::Error| Failure::Input(format!("{}: {e}", path.display()));
    if v.get("joints").is_some() {
        serde_json::from_value(v).map_err(bad)
    } else {
        let pose: HandPose = serde_json::from_value(v).map_err(bad)?;
        Ok(forward_kinematics(&pose)?)
    }
}

pub fn mesh(a: &MeshArgs, _seed: u64) -> Outcome<Run> {
    check_no_clobber(std::slice::from_ref(&a.pose), std::slice::from_ref(&a.out))?;
    let s = read_hand(&a.pose)?;
    let m = generate(&s, a.variant.into())?;
    let report = validate_watertight(&m);
    let edges: HashSet<(u32, u32)> =
        m.faces.iter().flat_map(|f| (0..3).map(move |k| (f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3])))).collect();
    let (v, e, f) = (m.vertices.len(), edges.len(), m.faces.len());
    export_obj(&m, &a.out)?;
    println!("V={v} E={e} F={f}");
    println!("watertight: {}", report.is_ok());
    println!("euler: {}", report.euler_char);
    let results = json!({"vertices": v, "edges": e, "faces": f, "watertight": report.is_ok(), "euler_char": report.euler_char});
    let mut run = Run::ok(json!({"variant": format!("{:?}", a.variant)}), vec![a.pose.clone()], vec![a.out.clone()], results);
    if !report.is_ok() {
        run.failure = Some(Failure::Contract(format!("mesh failed validation: {:?}", report.defects)));
    }
    Ok(run)
}

#[derive(Clone, Debug, Args)]
pub struct RefineArgs {
    /// Pair JSON: {"right": skeleton, "left": skeleton}, a pose pair, or a list of skeleton pairs.
    #[arg(long)]
    pub pair: PathBuf,
    #[command(flatten)]
    pub loss: LossArgs,
    /// Refined pair(s), in the input's format.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-pair CSV: intersection counts before and after, drift, tested points per hand.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn refine(a: &RefineArgs, seed: u64) -> Outcome<Run> {
    let mut inputs = vec![a.pair.clone()];
    inputs.extend(a.loss.inputs());
    let mut outputs = vec![a.out.clone()];
    outputs.extend(a.report.iter().cloned());
    check_no_clobber(&inputs, &outputs)?;
    let cfg = a.loss.refine_config(seed)?;
    let field = a.loss.load_field()?;
    let input = PairFile::read(&a.pair)?;
    let mut rows = Vec::new();
    match &input {
        PairFile::Poses(pp) => {
            let out = refine_pair(pp, field.as_ref(), &cfg)?;
            let (right, left) = pp.skeletons()?;
            let (nr, nl) = out.pose.skeletons()?;
            let after = PairSkeletons { right: nr, left: nl };
            rows.push(pair_row(0, &PairSkeletons { right, left }, &after, out.status, out.iterations, field.as_ref())?);
            write_json(&a.out, &out.pose)?;
        }
        PairFile::Skeletons(_) | PairFile::List(_) => {
            let pairs = input.skeleton_pairs()?;
            let mut refined = Vec::with_capacity(pairs.len());
            for (i, p) in pairs.iter().enumerate() {
                let out = refine_skeletons(&p.right, &p.left, field.as_ref(), &cfg)?;
                let after = PairSkeletons { right: out.right, left: out.left };
                rows.push(pair_row(i, p, &after, out.status, out.iterations, field.as_ref())?);
                refined.push(after);
            }
            match input {
                PairFile::List(_) => write_json(&a.out, &refined)?,
                _ => write_json(&a.out, &refined[0])?,
            }
        }
    }
    let report = BatchReport::from_rows(rows, cfg.loss.point_set.point_count());
    if let Some(p) = &a.report {
        write_bytes(p, report.to_csv().as_bytes())?;
    }
    println!(
        "pairs={} refined={} raycast {} -> {} occupancy {} -> {} max_drift_mm={:.3} tested_points_per_hand={}",
        report.pairs,
        report.refined_pairs,
        report.raycast_before,
        report.raycast_after,
        report.occupancy_before,
        report.occupancy_after,
        report.max_drift,
        report.points_per_hand
    );
    let mut results = json_of(&report);
    results["statuses"] = json_of(&report.rows.iter().map(|r| r.status).collect::<Vec<_>>());
    Ok(Run::ok(a.loss.snapshot(&cfg), inputs, outputs, results))
}

#[derive(Clone, Debug, Args)]
pub struct MetricsArgs {
    /// Pair JSON.
    #[arg(long)]
    pub pair: PathBuf,
    /// Grid points per axis on the pair's padded box.
    #[arg(long, default_value_t = GRID_N)]
    pub grid: usize,
    /// Occupancy field: `capsule` or `occnet:PATH`.
    #[arg(long, default_value = "capsule")]
    pub field: String,
    /// Reference pair for MPJPE.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn metrics(a: &MetricsArgs, _seed: u64) -> Outcome<Run> {
    let mut inputs = vec![a.pair.clone()];
    inputs.extend(a.reference.iter().cloned());
    inputs.extend(field_inputs(&a.field));
    check_no_clobber(&inputs, std::slice::from_ref(&a.out))?;
    let field = load_field(&a.field)?;
    let p = PairFile::read(&a.pair)?.single()?;
    let cr = RayCaster::new(&generate(&p.right, MeshVariant::Plain)?)?;
    let cl = RayCaster::new(&generate(&p.left, MeshVariant::Plain)?)?;
    let spec = GridSpec::new(pair_bbox(&cr.aabb(), &cl.aabb()), a.grid)?;
    let raycast = caster_pair_count(&cr, &cl, spec);
    let occupancy = field_pair_count(field.as_ref(), &p.right, &p.left, spec);
    let iou_r = iou(&caster_grid(&cr, spec), &field_grid(field.as_ref(), &p.right, spec))?;
    let iou_l = iou(&caster_grid(&cl, spec), &field_grid(field.as_ref(), &p.left, spec))?;
    let mut m = json!({
        "grid": a.grid,
        "samples": spec.len(),
        "raycast_count": raycast,
        "occupancy_count": occupancy,
        "iou_per_hand": {"right": iou_r, "left": iou_l},
    });
    if let Some(r) = &a.reference {
        let q = PairFile::read(r)?.single()?;
        let (er, el) = (skeleton_mpjpe(&p.right, &q.right), skeleton_mpjpe(&p.left, &q.left));
        m["mpjpe"] = json!({"right": er, "left": el, "mean": 0.5 * (er + el)});
    }
    write_json(&a.out, &m)?;
    println!("samples={} raycast_count={raycast} occupancy_count={occupancy}", spec.len());
    Ok(Run::ok(json!({"field": a.field, "grid": a.grid}), inputs, vec![a.out.clone()], m))
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// JSON list of hand poses. The last 20% are held out for validation.
    #[arg(long)]
    pub poses: PathBuf,
    /// Training config JSON; missing fields take defaults. Its seed is replaced by --seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parameter file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV: training loss and validation IoU.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Grid resolution of the final validation IoU; 0 skips it.
    #[arg(long, default_value_t = GRID_N)]
    pub final_grid: usize,
}

pub fn train_occ(a: &TrainArgs, seed: u64) -> Outcome<Run> {
    let mut inputs = vec![a.poses.clone()];
    inputs.extend(a.config.iter().cloned());
    let mut outputs = vec![a.out.clone()];
    outputs.extend(a.history.iter().cloned());
    check_no_clobber(&inputs, &outputs)?;
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    cfg.validate()?;
    if a.final_grid == 1 {
        return Err(Failure::Input("--final-grid must be 0 or at least 2".into()));
    }
    let poses: Vec<HandPose> = read_json(&a.poses)?;
    let (train, val) = split_poses(&poses, 0.2)?;
    let val_skel: Vec<Skeleton> = val.iter().map(forward_kinematics).collect::<Result<_, _>>()?;
    let data = sample_training_set(&train, &cfg, seed)?;
    let (params, history) = train_occnet(&data, &val_skel, &cfg)?;
    params.save(&a.out)?;
    if let Some(h) = &a.history {
        write_bytes(h, history.to_csv().as_bytes())?;
    }
    let mut results = json!({
        "train_poses": train.len(),
        "val_poses": val.len(),
        "best_epoch": history.best_epoch,
        "best_val_iou": history.best_iou(),
        "val_grid": cfg.val_grid_n,
        "parameters": params.data.len(),
    });
    println!(
        "trained on {} poses, best epoch {} with val IoU {:.4} at {}^3",
        train.len(),
        history.best_epoch,
        history.best_iou(),
        cfg.val_grid_n
    );
    if a.final_grid >= 2 {
        let net = OccNet::new(&params)?;
        let fin = validation_iou(&net, &val_skel, a.final_grid)?;
        results["final_val_iou"] = json!(fin);
        results["final_grid"] = json!(a.final_grid);
        println!("final val IoU {fin:.4} at {}^3", a.final_grid);
    }
    Ok(Run::ok(json_of(&cfg), inputs, outputs, results))
}

#[derive(Clone, Debug, Args)]
pub struct NoiseArgs {
    /// Ground-truth pairs: a list of skeleton pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Comma-separated per-hand noise probabilities.
    #[arg(long, default_value = "0,0.2,0.4,0.6,0.8,1", value_parser = parse_probs)]
    pub probs: Probs,
    /// Standard deviation of the noise rotation about the wrist, degrees.
    #[arg(long, default_value_t = 5.0)]
    pub sigma_deg: f64,
    #[command(flatten)]
    pub loss: LossArgs,
    /// CSV: noise_prob, mpjpe_with, mpjpe_without, isect_with, isect_without.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn study_noise(a: &NoiseArgs, seed: u64) -> Outcome<Run> {
    let mut inputs = vec![a.pairs.clone()];
    inputs.extend(a.loss.inputs());
    check_no_clobber(&inputs, std::slice::from_ref(&a.out))?;
    let cfg = a.loss.refine_config(seed)?;
    let field = a.loss.load_field()?;
    let pairs = PairFile::read(&a.pairs)?.skeleton_pairs()?;
    let noise = NoiseConfig { probs: a.probs.0.clone(), sigma_deg: a.sigma_deg, seed };
    let study = noise_study(&pairs, field.as_ref(), &cfg, &noise)?;
    write_bytes(&a.out, study.to_csv().as_bytes())?;
    print!("{}", study.to_csv());
    let mut config = a.loss.snapshot(&cfg);
    config["noise"] = json_of(&noise);
    Ok(Run::ok(config, inputs, vec![a.out.clone()], json_of(&study)))
}

#[derive(Clone, Debug, Args)]
pub struct SamplePosesArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "right")]
    pub side: SideArg,
    /// Write skeletons instead of poses.
    #[arg(long)]
    pub skeletons: bool,
    /// JSON list.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn sample_poses(a: &SamplePosesArgs, seed: u64) -> Outcome<Run> {
    if a.n == 0 {
        return Err(Failure::Input("--n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = PoseRanges::default();
    let poses: Vec<HandPose> = (0..a.n)
        .map(|i| {
            let side = match a.side {
                SideArg::Right => Side::Right,
                SideArg::Left => Side::Left,
                SideArg::Alternate if i % 2 == 0 => Side::Right,
                SideArg::Alternate => Side::Left,
            };
            random_pose(&mut rng, side, &ranges)
        })
        .collect();
    if a.skeletons {
        let s: Vec<Skeleton> = poses.iter().map(forward_kinematics).collect::<Result<_, _>>()?;
        write_json(&a.out, &s)?;
    } else {
        write_json(&a.out, &poses)?;
    }
    let config = json!({"n": a.n, "side": format!("{:?}", a.side), "skeletons": a.skeletons});
    Ok(Run::ok(config, Vec::new(), vec![a.out.clone()], Value::Null))
}

#[derive(Clone, Debug, Args)]
pub struct SamplePairsArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "intersecting")]
    pub kind: PairKind,
    /// Field and loss used to detect contact for touching pairs.
    #[command(flatten)]
    pub loss: LossArgs,
    /// JSON list of skeleton pairs.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn sample_pairs(a: &SamplePairsArgs, seed: u64) -> Outcome<Run> {
    if a.n == 0 {
        return Err(Failure::Input("--n must be at least 1".into()));
    }
    let inputs = a.loss.inputs();
    check_no_clobber(&inputs, std::slice::from_ref(&a.out))?;
    let cfg = a.loss.refine_config(seed)?;
    let pairs = match a.kind {
        PairKind::Intersecting => intersecting_pairs(a.n, seed)?,
        PairKind::Touching => touching_pairs(a.n, seed, a.loss.load_field()?.as_ref(), &cfg.loss, cfg.min_loss)?,
    };
    write_json(&a.out, &pairs)?;
    let mut config = a.loss.snapshot(&cfg);
    config["n"] = json!(a.n);
    config["kind"] = json!(format!("{:?}", a.kind));
    Ok(Run::ok(config, inputs, vec![a.out.clone()], Value::Null))
}
