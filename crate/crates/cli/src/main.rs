use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use seal_core::envsim::{render, reset, write_depth_pgm, write_semantic_ppm, Scene};
use seal_core::evalharness::pipeline::{
    build_dataset, collect_episode, eval_poses, evaluate, generate_scenes, train_policies, LabelSource,
};
use seal_core::evalharness::{run_ablations, run_all, run_weak_supervision, EvalReport, ExperimentConfig, MethodResult};
use seal_core::geometry::{DepthImage, Pose};
use seal_core::labelprop::{get_labels, label_map, masks_to_annotations, write_annotations_jsonl, AnnotationRecord, MIN_INSTANCE_PIXELS};
use seal_core::perception::{fine_tune, PerceptionModel};
use seal_core::policy::{baseline_policy, read_trace_poses, PolicyFile, PolicyKind};
use seal_core::semmap::{read_svm1, write_svm1};
use seal_core::SealError;

#[derive(Parser)]
#[command(name = "seal", version, about = "Embodied exploration, 3D label propagation and perception fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON). Defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Exploration policy.
    #[arg(long, global = true, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    PolicyKind::parse(s).ok_or_else(|| format!("unknown policy {s:?}; expected random, frontier, coverage or gainful"))
}

#[derive(Subcommand)]
enum Command {
    /// Write train and test scenes as JSON, with a depth and semantic view
    /// from each spawn point.
    GenerateScenes,
    /// Train the waypoint scorer of a learned policy.
    TrainPolicy,
    /// Run one episode per training scene; write traces and voxel maps.
    Collect {
        /// Learned policy weights; trained on the fly when absent.
        #[arg(long)]
        policy_file: Option<PathBuf>,
        /// Also dump every frame as PGM depth and PPM semantics.
        #[arg(long)]
        dump_frames: bool,
    },
    /// Label the maps written by `collect` and write per-frame annotations.
    Labelprop,
    /// Collect, propagate labels and fine-tune the pretrained model.
    Finetune {
        #[arg(long)]
        policy_file: Option<PathBuf>,
    },
    /// Score a perception model on the test scenes.
    Eval {
        /// Model JSON; the pretrained model when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Full protocol: generalization, specialization, ablations and weak
    /// supervision.
    RunAll,
    /// Policy x labeling ablation grid.
    Ablate,
    /// Weak supervision for the configured annotation budgets.
    WeakSup,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<SealError>() {
            Some(SealError::Config(_)) => Failure::Config(e),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<SealError> for Failure {
    fn from(e: SealError) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Config(e.into()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = common.policy {
        cfg.policy = p;
    }
    cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    Ok(cfg)
}

fn write_text(path: &Path, mut s: String) -> anyhow::Result<()> {
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write_report(out: &Path, report: &EvalReport) -> anyhow::Result<()> {
    write_text(&out.join("report.json"), report.to_json()?)?;
    report.write_csv(&out.join("report.csv"))?;
    for r in &report.results {
        print_result(r);
    }
    Ok(())
}

fn print_result(r: &MethodResult) {
    println!("{:<24} {:<18} det {:6.2}  seg {:6.2}", r.method, r.setting, r.det_ap50, r.seg_ap50);
}

fn policy_for(cfg: &ExperimentConfig, file: Option<&Path>, scenes: &[Scene]) -> anyhow::Result<seal_core::policy::ExplorationPolicy> {
    let params = match (cfg.policy, file) {
        (PolicyKind::Random | PolicyKind::Frontier, _) => cfg.policy_init.clone(),
        (_, Some(p)) => {
            let f: PolicyFile = serde_json::from_str(&fs::read_to_string(p)?)?;
            f.params()
        }
        (kind, None) => {
            log::info!("no policy file given, training {}", kind.name());
            train_policies(cfg, scenes, &[kind])?[&kind].params()
        }
    };
    Ok(baseline_policy(cfg.policy, &params))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.common)?;
    if let Some(j) = cli.common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Failure::Config(e.into()))?;
    }
    let out = cli.common.out.clone();
    fs::create_dir_all(&out).map_err(|e| Failure::Runtime(e.into()))?;
    match cli.command {
        Command::GenerateScenes => {
            let dir = out.join("scenes");
            fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
            for (split, range) in [("train", cfg.train_seeds), ("test", cfg.test_seeds)] {
                for scene in generate_scenes(&cfg.scene, &range.seeds())? {
                    let stem = format!("{split}_{}", scene.seed);
                    fs::write(dir.join(format!("{stem}.json")), scene.to_json()?).map_err(anyhow::Error::from)?;
                    let pose = reset(&scene, 0)?.pose;
                    let gt = render(&scene, &pose, &cfg.camera);
                    write_depth_pgm(&dir.join(format!("{stem}_depth.pgm")), &gt.depth)?;
                    write_semantic_ppm(&dir.join(format!("{stem}_semantic.ppm")), gt.width(), gt.height(), &gt.category)?;
                    println!("{stem}: {} objects, connectivity {:.2}", scene.objects.len(), scene.connectivity());
                }
            }
        }
        Command::TrainPolicy => {
            let scenes = generate_scenes(&cfg.scene, &cfg.train_seeds.seeds())?;
            let trained = train_policies(&cfg, &scenes, &[cfg.policy])?;
            let file = trained
                .get(&cfg.policy)
                .cloned()
                .unwrap_or_else(|| PolicyFile::new(cfg.policy, &cfg.policy_init, Vec::new()));
            let path = out.join(format!("policy_{}.json", cfg.policy.name()));
            write_text(&path, serde_json::to_string_pretty(&file)?)?;
            println!("{}: weights {:?}", path.display(), file.weights);
        }
        Command::Collect { policy_file, dump_frames } => {
            let scenes = generate_scenes(&cfg.scene, &cfg.train_seeds.seeds())?;
            let policy = policy_for(&cfg, policy_file.as_deref(), &scenes)?;
            let model = cfg.pretrained_model();
            for dir in ["traces", "maps"] {
                fs::create_dir_all(out.join(dir)).map_err(anyhow::Error::from)?;
            }
            for scene in &scenes {
                let ep = collect_episode(&cfg, scene, &policy, &model)?;
                ep.trace.write_csv(&out.join("traces").join(format!("{}.csv", scene.seed)))?;
                write_svm1(&ep.map, &out.join("maps").join(format!("{}.svm1", scene.seed)))?;
                if dump_frames {
                    let dir = out.join("frames").join(scene.seed.to_string());
                    fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
                    for (i, f) in ep.frames.iter().enumerate() {
                        let gt = render(scene, &f.pose, &cfg.camera);
                        write_depth_pgm(&dir.join(format!("{i:04}_depth.pgm")), &f.depth)?;
                        write_semantic_ppm(&dir.join(format!("{i:04}_semantic.ppm")), gt.width(), gt.height(), &gt.category)?;
                    }
                }
                println!("scene {}: reward {}, occupied {}", scene.seed, ep.trace.final_reward, ep.trace.final_coverage);
            }
        }
        Command::Labelprop => {
            let scenes = generate_scenes(&cfg.scene, &cfg.train_seeds.seeds())?;
            fs::create_dir_all(out.join("annotations")).map_err(anyhow::Error::from)?;
            for scene in &scenes {
                let map_path = out.join("maps").join(format!("{}.svm1", scene.seed));
                let mut map = read_svm1(&map_path).with_context(|| format!("reading {} (run `collect` first)", map_path.display()))?;
                let ecfg = seal_core::evalharness::pipeline::episode_config(&cfg, scene);
                map.origin = reset(scene, ecfg.seed)?.pose;
                let poses = read_trace_poses(&out.join("traces").join(format!("{}.csv", scene.seed)))?;
                let labeled = label_map(&map, cfg.s_hat);
                let mut records = Vec::with_capacity(poses.len());
                for (i, pose) in poses.iter().enumerate() {
                    let depth: DepthImage = render(scene, pose, &cfg.camera).depth;
                    let labels = get_labels(&labeled, pose, &depth, &cfg.camera)?;
                    let anns = masks_to_annotations(&labels, MIN_INSTANCE_PIXELS);
                    records.push(AnnotationRecord::new(i, *pose, &anns, cfg.camera.width, cfg.camera.height));
                }
                write_annotations_jsonl(&out.join("annotations").join(format!("{}.jsonl", scene.seed)), &records)?;
                println!("scene {}: {} instances, {} frames", scene.seed, labeled.instances.len(), records.len());
            }
        }
        Command::Finetune { policy_file } => {
            let scenes = generate_scenes(&cfg.scene, &cfg.train_seeds.seeds())?;
            let policy = policy_for(&cfg, policy_file.as_deref(), &scenes)?;
            let pretrained = cfg.pretrained_model();
            let ds = build_dataset(&cfg, &scenes, &policy, &pretrained, LabelSource::LabelProp)?;
            let (model, report) = fine_tune(&pretrained, &ds.frames, &cfg.finetune);
            fs::write(out.join("model.json"), model.to_json()? + "\n").map_err(anyhow::Error::from)?;
            println!(
                "fine-tuned on {} frames: loss {:.1} -> {:.1}; trained categories {:?}",
                ds.frames.len(),
                report.initial_loss,
                report.final_loss,
                report.trained_categories
            );
        }
        Command::Eval { model } => {
            let model = match model {
                Some(p) => PerceptionModel::from_json(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => cfg.pretrained_model(),
            };
            let scenes = generate_scenes(&cfg.scene, &cfg.test_seeds.seeds())?;
            let poses: Vec<Vec<Pose>> = scenes.iter().map(|s| eval_poses(s, cfg.eval_images_per_scene)).collect();
            let scores = evaluate(&cfg, &scenes, &poses, &[vec![model; scenes.len()]]);
            let s = &scores[0];
            println!("det AP50 {:.2}  seg AP50 {:.2}", s.det_ap50, s.seg_ap50);
            for sc in &s.per_scene {
                println!("  scene {}: det {:.2}  seg {:.2}", sc.scene_seed, sc.det_ap50, sc.seg_ap50);
            }
        }
        Command::RunAll => write_report(&out, &run_all(&cfg)?)?,
        Command::Ablate => write_report(&out, &run_ablations(&cfg)?)?,
        Command::WeakSup => write_report(&out, &run_weak_supervision(&cfg, &cfg.weak_k)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
